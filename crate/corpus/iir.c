#include <stdio.h>

typedef struct {
    float b0, b1, b2;
    float a1, a2;
    float x1, x2;
    float y1, y2;
} biquad_t;

void iir_init(biquad_t *bq, float b0, float b1, float b2, float a1, float a2) {
    bq->b0 = b0;
    bq->b1 = b1;
    bq->b2 = b2;
    bq->a1 = a1;
    bq->a2 = a2;
    bq->x1 = bq->x2 = 0;
    bq->y1 = bq->y2 = 0;
}

float iir_step(biquad_t *bq, float in_sample) {
    float out = bq->b0 * in_sample + bq->b1 * bq->x1 + bq->b2 * bq->x2 - bq->a1 * bq->y1 - bq->a2 * bq->y2;
    bq->x2 = bq->x1;
    bq->x1 = in_sample;
    bq->y2 = bq->y1;
    bq->y1 = out;
    return out;
}

int main() {
    biquad_t bq;
    iir_init(&bq, 0.2929, 0.5858, 0.2929, -0.0, 0.1716);
    for (int n = 0; n < 20; n++) {
        printf("%f\n", iir_step(&bq, n == 0 ? 1.0 : 0.0));
    }
    return 0;
}
