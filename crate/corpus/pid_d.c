#include <stdio.h>
typedef struct {
    float last_error;
    float integral;
    float Kp;
    float Ki;
    float Kd;
} pid_state_t;
void pid_init(pid_state_t *state, float Kp, float Ki, float Kd) {
    state->last_error = 0;
    state->integral = 0;
    state->Kp = Kp;
    state->Ki = Ki;
    state->Kd = Kd;
}
float pid_update(pid_state_t *state, float dt, float target, float actual) {
    float error = target - actual;
    state->integral += error * dt;
    float t_Kp = state->Kp * error;
    float t_Ki = state->Ki * state->integral;
    float t_Kd = state->Kd * (error - state->last_error) / dt;
    state->last_error = error;
    return t_Kp + t_Ki + t_Kd;
}
int main(int argc, char **argv) {
    pid_state_t state;
    pid_init(&state, 0.7, 0.1, 0.2);
    for (int i=0; i<10; i++) {
        printf("%f\n", pid_update(&state, 1.0, i+1, i));
    }
    return 0;
}
