#include <math.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "schatten_lab.h"

#define CHECK(call)                                                              \
    do {                                                                         \
        SlStatus st_ = (call);                                                   \
        if (st_ != SL_STATUS_OK) {                                               \
            fprintf(stderr, "%s failed: %d %s\n", #call, (int)st_, sl_last_error()); \
            return 1;                                                            \
        }                                                                        \
    } while (0)

int main(void) {
    SlWindow *win = NULL;
    if (sl_window_new(2, 12, &win) != SL_STATUS_INVALID_ARGUMENT || win != NULL || sl_last_error() == NULL) {
        fprintf(stderr, "bad window accepted\n");
        return 1;
    }
    CHECK(sl_window_new(2, 8, &win));
    size_t len = 0;
    int32_t k_min = 0, k_max = 0;
    CHECK(sl_window_info(win, &len, &k_min, &k_max));

    SlFunction *b = NULL;
    CHECK(sl_function_from_symbol(win, "gaussian:0.1", &b));
    SlWeight *w = NULL;
    CHECK(sl_weight_from_spec(win, "power:0.5", &w));
    SlSpectrum *s = NULL;
    CHECK(sl_commutator_spectrum(b, w, 1, SL_RIESZ_MODE_FILTERED, &s));

    size_t n = 0;
    CHECK(sl_spectrum_len(s, &n));
    double *vals = malloc(n * sizeof(double));
    if (sl_spectrum_values(s, vals, n - 1) != SL_STATUS_BUFFER_TOO_SMALL) {
        fprintf(stderr, "short buffer accepted\n");
        return 1;
    }
    CHECK(sl_spectrum_values(s, vals, n));
    double weak = 0.0, besov = 0.0, a2 = 0.0;
    CHECK(sl_spectrum_schatten(s, 2.0, INFINITY, &weak));
    CHECK(sl_besov_continuous(b, 4.0, &besov));
    CHECK(sl_weight_a2(w, &a2));
    if (sl_spectrum_len(NULL, &n) != SL_STATUS_NULL_POINTER) {
        fprintf(stderr, "null handle accepted\n");
        return 1;
    }

    char *report = NULL;
    int passed = 0;
    CHECK(sl_verify("[besov]\ngrid_sizes = [8, 16]\n", &report, &passed));

    printf("version %s\n", sl_version());
    printf("window %zu %d %d\n", len, (int)k_min, (int)k_max);
    printf("s1 %.17g\n", vals[0]);
    printf("weak %.17g\n", weak);
    printf("besov %.17g\n", besov);
    printf("a2 %.17g\n", a2);
    printf("verify %d %d\n", passed, report[0] == '[' && strstr(report, "\"besov\"") != NULL);

    sl_string_free(report);
    free(vals);
    sl_spectrum_free(s);
    sl_weight_free(w);
    sl_function_free(b);
    sl_window_free(win);
    sl_window_free(NULL);
    return 0;
}
