#include <stdio.h>
#define TAPS 5

typedef struct {
    float coeffs[TAPS];
    float history[TAPS];
    int head;
} fir_filter_t;

void fir_init(fir_filter_t *filt, const float *taps) {
    for (int k = 0; k < TAPS; k++) {
        filt->coeffs[k] = taps[k];
        filt->history[k] = 0;
    }
    filt->head = 0;
}

float fir_step(fir_filter_t *filt, float sample) {
    filt->history[filt->head] = sample;
    float acc = 0;
    int idx = filt->head;
    for (int k = 0; k < TAPS; k++) {
        acc += filt->coeffs[k] * filt->history[idx];
        idx = idx == 0 ? TAPS - 1 : idx - 1;
    }
    filt->head = (filt->head + 1) % TAPS;
    return acc;
}

int main() {
    float taps[TAPS] = {0.1, 0.2, 0.4, 0.2, 0.1};
    fir_filter_t filt;
    fir_init(&filt, taps);
    for (int n = 0; n < 20; n++) {
        printf("%f\n", fir_step(&filt, n % 4 == 0 ? 1.0 : 0.0));
    }
    return 0;
}
