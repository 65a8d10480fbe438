#include <stdio.h>
#define KP 2.5
#define KI 0.4
#define KD 0.05

float prev_error = 0;
float integ = 0;

float pid_step(float setpoint, float measured, float dt) {
    float err = setpoint - measured;
    integ += err * dt;
    float deriv = (err - prev_error) / dt;
    prev_error = err;
    return KP * err + KI * integ + KD * deriv;
}

int main() {
    float plant = 0;
    float setpoint = 20.0;
    for (int i = 0; i < 10; i++) {
        float u = pid_step(setpoint, plant, 0.1);
        plant += u * 0.1;
        printf("%f %f\n", u, plant);
    }
    return 0;
}
