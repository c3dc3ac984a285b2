#include <math.h>
#include <stdio.h>
#include "convdyn.h"

#define CHECK(x)                                                   \
    do {                                                           \
        if ((x) != CONVDYN_STATUS_OK) {                            \
            fprintf(stderr, "%s: %s\n", #x, convdyn_last_error()); \
            return 1;                                              \
        }                                                          \
    } while (0)

int main(void) {
    double w_star[3] = {0.6, 0.8, 0.0};
    double a_star[4] = {1.0, -0.5, 0.25, 0.75};
    double v[3] = {0.5, 0.7, 0.5};
    double a[4] = {0.2, 0.1, 0.1, 0.2};
    ConvdynTeacher *t = NULL;
    ConvdynStudent *s = NULL;
    ConvdynRunResult *r = NULL;
    CHECK(convdyn_teacher_new(w_star, 3, a_star, 4, &t));
    CHECK(convdyn_student_new(v, 3, a, 4, &s));

    double loss = -1.0;
    CHECK(convdyn_loss(s, t, &loss));
    if (!(loss > 0.0)) return 2;

    ConvdynRunOptions opts = convdyn_run_options_default();
    opts.max_iters = 200000;
    CHECK(convdyn_run(s, t, &opts, &r));
    ConvdynClass cls;
    CHECK(convdyn_result_class(r, &cls));
    double final_loss = 1.0;
    CHECK(convdyn_result_final_loss(r, &final_loss));
    if (cls != CONVDYN_CLASS_GLOBAL || final_loss > 1e-12) return 3;

    double gv[2], ga[4];
    if (convdyn_gradients(s, t, gv, 2, ga, 4) != CONVDYN_STATUS_DIMENSION_MISMATCH) return 4;
    if (convdyn_loss(NULL, t, &loss) != CONVDYN_STATUS_NULL_POINTER) return 5;

    convdyn_result_free(r);
    convdyn_student_free(s);
    convdyn_teacher_free(t);
    printf("ok %.3e\n", final_loss);
    return 0;
}
