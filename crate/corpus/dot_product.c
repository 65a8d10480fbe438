#include <stdio.h>
#define LEN 8

double dot(const double *lhs, const double *rhs, int len) {
    double total = 0;
    for (int k = 0; k < len; k++) {
        total += lhs[k] * rhs[k];
    }
    return total;
}

int main() {
    double vec_a[LEN] = {1, 2, 3, 4, 5, 6, 7, 8};
    double vec_b[LEN] = {8, 7, 6, 5, 4, 3, 2, 1};
    double result = dot(vec_a, vec_b, LEN);
    printf("%f\n", result);
    return 0;
}
