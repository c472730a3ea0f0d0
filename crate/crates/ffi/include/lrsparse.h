#ifndef LRSPARSE_H
#define LRSPARSE_H

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

// Result code of every fallible call.
typedef enum LrsStatus {
  LRS_STATUS_OK = 0,
  LRS_STATUS_NULL_POINTER = 1,
  LRS_STATUS_INVALID_INPUT = 2,
  LRS_STATUS_INVALID_ARGUMENT = 3,
  LRS_STATUS_DEGENERATE_INPUT = 4,
  // The support estimate came out empty. The recovery handle is still
  // written and holds the all-zero estimate.
  LRS_STATUS_EMPTY_SUPPORT = 5,
  LRS_STATUS_FACTORIZATION = 6,
  LRS_STATUS_IO = 7,
  LRS_STATUS_BUFFER_TOO_SMALL = 8,
  LRS_STATUS_PANIC = 9,
  LRS_STATUS_INTERNAL = 10,
} LrsStatus;

typedef enum LrsMethod {
  LRS_METHOD_TWO_STEP = 0,
  LRS_METHOD_FOUR_STEP = 1,
  LRS_METHOD_AUGMENTED_FOUR_STEP = 2,
} LrsMethod;

typedef enum LrsSolver {
  LRS_SOLVER_LASSO = 0,
  LRS_SOLVER_IMATCS = 1,
} LrsSolver;

typedef enum LrsBudget {
  LRS_BUDGET_QUICK = 0,
  LRS_BUDGET_ACCURATE = 1,
} LrsBudget;

// Opaque synthetic instance.
typedef struct LrsInstance LrsInstance;

// Opaque recovery result.
typedef struct LrsRecovery LrsRecovery;

// Parameters of a synthetic instance.
typedef struct LrsSpec {
  size_t m;
  size_t n;
  size_t rank;
  size_t sparsity;
  double alpha_obs;
  double noise_sigma;
  uint64_t seed;
} LrsSpec;

// Pipeline parameters. Solver fields hold `LrsSolver` values.
typedef struct LrsParams {
  double epsilon;
  double alpha_stop;
  double lambda1;
  double lambda2;
  uint32_t support_solver;
  uint32_t final_solver;
  size_t max_outer_iters;
  size_t quick_max_iters;
  double quick_rel_tol;
  size_t accurate_max_iters;
  double accurate_rel_tol;
  double zero_tol;
} LrsParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *lrs_version(void);

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on this thread.
const char *lrs_last_error_message(void);

// Instance parameters with the default rank, sparsity, observation rate and noise.
struct LrsSpec lrs_spec_default(size_t m, size_t n, uint64_t seed);

// Default pipeline parameters; both lambdas are zero and must be set.
struct LrsParams lrs_params_default(void);

enum LrsStatus lrs_instance_generate(const struct LrsSpec *spec, struct LrsInstance **out);

// Loads an instance directory written by [`lrs_instance_write`] or the CLI.
enum LrsStatus lrs_instance_read(const char *dir, struct LrsInstance **out);

enum LrsStatus lrs_instance_write(const struct LrsInstance *instance, const char *dir);

void lrs_instance_free(struct LrsInstance *instance);

enum LrsStatus lrs_instance_dims(const struct LrsInstance *instance, size_t *m, size_t *n);

// Copies the `n` true coefficients into `buf`.
enum LrsStatus lrs_instance_copy_beta_true(const struct LrsInstance *instance,
                                           double *buf,
                                           size_t len);

// Fits `method` on the training rows of `instance`.
enum LrsStatus lrs_instance_recover(const struct LrsInstance *instance,
                                    uint32_t method,
                                    const struct LrsParams *params,
                                    struct LrsRecovery **out);

// Fits `method` on a caller-supplied `rows x cols` design and `rows` labels.
enum LrsStatus lrs_recover(size_t rows,
                           size_t cols,
                           const double *values,
                           const uint8_t *observed,
                           const double *y,
                           uint32_t method,
                           const struct LrsParams *params,
                           struct LrsRecovery **out);

// Converts relative weights into absolute ones: `lambda1` is scaled by the
// operator norm of the zero-filled design, `lambda2` by `2 ||X^T y||_inf`.
enum LrsStatus lrs_relative_lambdas(size_t rows,
                                    size_t cols,
                                    const double *values,
                                    const uint8_t *observed,
                                    const double *y,
                                    double lambda1_fraction,
                                    double lambda2_fraction,
                                    double *lambda1,
                                    double *lambda2);

void lrs_recovery_free(struct LrsRecovery *recovery);

// Number of coefficients, i.e. the design's column count.
size_t lrs_recovery_len(const struct LrsRecovery *recovery);

bool lrs_recovery_converged(const struct LrsRecovery *recovery);

enum LrsStatus lrs_recovery_copy_beta(const struct LrsRecovery *recovery, double *buf, size_t len);

// Number of columns in the estimated support.
size_t lrs_recovery_support_len(const struct LrsRecovery *recovery);

// Copies the ascending support indices into `buf`.
enum LrsStatus lrs_recovery_copy_support(const struct LrsRecovery *recovery,
                                         size_t *buf,
                                         size_t len);

// Completes a `rows x cols` matrix into `out` (row-major, `rows * cols`
// entries). `iterations`, when not NULL, receives the iteration count.
enum LrsStatus lrs_soft_impute(size_t rows,
                               size_t cols,
                               const double *values,
                               const uint8_t *observed,
                               double lambda1,
                               uint32_t budget,
                               double *out,
                               size_t out_len,
                               size_t *iterations);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LRSPARSE_H */
