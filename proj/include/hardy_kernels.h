/* C API for the hardy-kernels numerical library.
 *
 * All functions return an error code (HK_OK on success); outputs go
 * through pointers. Objects are opaque handles released with the
 * matching *_free. Strings returned through char** are heap-allocated
 * and must be released with hk_string_free. The last error message is
 * thread-local and owned by the library. */

#ifndef HARDY_KERNELS_H
#define HARDY_KERNELS_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

enum hk_status {
    HK_OK = 0,
    HK_ERR_DOMAIN = 1,    /* invalid parameters / configuration */
    HK_ERR_NUMERIC = 2,   /* quadrature or solver failure */
    HK_ERR_IO = 3,        /* file system failure */
    HK_ERR_FORMAT = 4,    /* container magic/version mismatch */
    HK_ERR_AUDIT_FAIL = 5,/* an audit returned FAIL */
    HK_ERR_INTERNAL = 6
};

typedef struct hk_table hk_table;       /* sampled kernel table */
typedef struct hk_ground_state hk_ground_state;

/* Last error message for the calling thread ("" when none). The pointer
 * stays valid until the next library call on the same thread. */
const char* hk_last_error(void);

void hk_string_free(char* s);

/* ---- coupling <-> singularity-exponent map ---- */

int hk_kappa_of_delta(int d, double alpha, double delta, double* kappa_out);
int hk_delta_of_kappa(int d, double alpha, double kappa, double* delta_out);
int hk_kappa_star(int d, double alpha, double* kappa_star_out);

/* ---- free heat kernel ---- */

/* model_json example: {"kind":"relativistic","d":3,"alpha":1.0,"m":1.0} */
int hk_heat_kernel(const char* model_json, double t, double r, double* out);

int hk_heat_table_build(const char* model_json, int n_r, double r_min,
                        double r_max, int n_t, double t_min, double t_max,
                        hk_table** out);

/* ---- perturbed kernel (d = 1 signed tables) ---- */

/* Exactly one of kappa/delta must be finite; pass NAN for the other.
 * n_terms_used/tail_estimate may be NULL. */
int hk_perturbed_table_build(const char* model_json, double kappa,
                             double delta, int n_r, double r_min,
                             double x_max, double T, double tol, int n_terms,
                             hk_table** out, int* n_terms_used,
                             double* tail_estimate);

/* ---- tables ---- */

int hk_table_write(const hk_table* t, const char* path);
int hk_table_write_csv(const hk_table* t, const char* path);
int hk_table_read(const char* path, hk_table** out);
int hk_table_dims(const hk_table* t, size_t* n_t, size_t* n_r);
int hk_table_value(const hk_table* t, size_t it, size_t ir, double* out);
/* JSON summary: kind, model, grid ranges, value extrema */
int hk_table_summary(const hk_table* t, char** json_out);
void hk_table_free(hk_table* t);

/* ---- ground state solver ---- */

int hk_ground_state_solve(const char* model_json, double kappa, int n_r,
                          double r_min, double r_max, double tol,
                          hk_ground_state** out);
int hk_ground_state_energy(const hk_ground_state* gs, double* E_out);
int hk_ground_state_json(const hk_ground_state* gs, char** json_out);
void hk_ground_state_free(hk_ground_state* gs);

/* ---- audit suites ---- */

/* suite: "all", "kernels", "duhamel", "spectral" or "envelopes".
 * json_out receives a JSON array of audit reports; n_failed (may be
 * NULL) the number of FAIL verdicts. Returns HK_ERR_AUDIT_FAIL when any
 * audit fails (json_out is still populated). */
int hk_run_audits(const char* suite, char** json_out, int* n_failed);

#ifdef __cplusplus
}
#endif

#endif /* HARDY_KERNELS_H */
