#ifndef SPOOFKIT_H
#define SPOOFKIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdint.h>
#include <stddef.h>

/*
 Result code of every fallible call. The numeric values of the error
 classes match the exit codes of the command-line tool.
 */
typedef enum SkStatus {
  SK_STATUS_OK = 0,
  /*
   A null pointer, empty buffer or invalid UTF-8 string was passed.
   */
  SK_STATUS_INVALID_ARGUMENT = 1,
  SK_STATUS_CONFIG = 2,
  SK_STATUS_DATA = 3,
  SK_STATUS_NUMERIC = 4,
  /*
   The library panicked; the handle involved should be discarded.
   */
  SK_STATUS_INTERNAL = 5,
} SkStatus;

/*
 A trained CQCC-GMM countermeasure.
 */
typedef struct SkCqccGmm SkCqccGmm;

/*
 A trained speech enhancement generator.
 */
typedef struct SkEnhancer SkEnhancer;

/*
 A trained LCNN countermeasure.
 */
typedef struct SkLcnn SkLcnn;

/*
 Costs and priors of the tandem detection cost function.
 */
typedef struct SkTdcfParams {
  double c_miss_asv;
  double c_fa_asv;
  double c_fa_cm;
  double c_miss_cm;
  double pi_tar;
  double pi_non;
  double pi_spoof;
} SkTdcfParams;

/*
 Scores of one trial class: CM and ASV score per trial. `asv` may be null
 for nontarget trials only.
 */
typedef struct SkTrialScores {
  const double *cm;
  const double *asv;
  uintptr_t len;
} SkTrialScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null if none. The
 pointer stays valid until the next failing call on the same thread.
 */
const char *sk_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *sk_version(void);

/*
 Equal error rate of positive (bona fide) against negative scores.

 # Safety
 `positive` and `negative` must point to `n_positive` and `n_negative`
 readable doubles; the out pointers must be writable.
 */
enum SkStatus sk_eer(const double *positive,
                     uintptr_t n_positive,
                     const double *negative,
                     uintptr_t n_negative,
                     double *out_eer,
                     double *out_threshold);

/*
 The default costs and priors.
 */
struct SkTdcfParams sk_tdcf_default_params(void);

/*
 Minimum normalized t-DCF over the CM threshold. The ASV threshold is the
 EER threshold of target against nontarget ASV scores unless
 `asv_threshold` is non-null. `params` may be null for the defaults.

 # Safety
 Each [`SkTrialScores`] must describe readable arrays of `len` doubles.
 */
enum SkStatus sk_min_tdcf(struct SkTrialScores target,
                          struct SkTrialScores nontarget,
                          struct SkTrialScores spoof,
                          const struct SkTdcfParams *params,
                          const double *asv_threshold,
                          double *out_min_tdcf);

/*
 Loads a CQCC-GMM model file.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SkStatus sk_cqcc_gmm_load(const char *path, struct SkCqccGmm **out);

/*
 Log-likelihood ratio of bona fide against playback; higher is more
 likely bona fide.

 # Safety
 `model` must come from [`sk_cqcc_gmm_load`]; `samples` must hold `n`
 doubles.
 */
enum SkStatus sk_cqcc_gmm_score(const struct SkCqccGmm *model,
                                const double *samples,
                                uintptr_t n,
                                uint32_t sample_rate,
                                double *out_score);

/*
 # Safety
 `model` must come from [`sk_cqcc_gmm_load`] or be null.
 */
void sk_cqcc_gmm_free(struct SkCqccGmm *model);

/*
 Loads an LCNN model file.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SkStatus sk_lcnn_load(const char *path, struct SkLcnn **out);

/*
 Bona fide probability averaged over segments.

 # Safety
 `model` must come from [`sk_lcnn_load`]; `samples` must hold `n` doubles.
 */
enum SkStatus sk_lcnn_score(const struct SkLcnn *model,
                            const double *samples,
                            uintptr_t n,
                            uint32_t sample_rate,
                            double *out_score);

/*
 # Safety
 `model` must come from [`sk_lcnn_load`] or be null.
 */
void sk_lcnn_free(struct SkLcnn *model);

/*
 Loads an enhancer checkpoint.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum SkStatus sk_enhancer_load(const char *path, struct SkEnhancer **out);

/*
 Sample rate the enhancer was trained at, or 0 for a null handle.

 # Safety
 `model` must come from [`sk_enhancer_load`] or be null.
 */
uint32_t sk_enhancer_sample_rate(const struct SkEnhancer *model);

/*
 Enhances `n` samples into `out`, which must have room for `n` doubles.
 The same seed gives the same output.

 # Safety
 `model` must come from [`sk_enhancer_load`]; `samples` and `out` must
 hold `n` doubles and may not overlap.
 */
enum SkStatus sk_enhancer_enhance(const struct SkEnhancer *model,
                                  const double *samples,
                                  uintptr_t n,
                                  uint32_t sample_rate,
                                  uint64_t seed,
                                  double *out);

/*
 # Safety
 `model` must come from [`sk_enhancer_load`] or be null.
 */
void sk_enhancer_free(struct SkEnhancer *model);

/*
 Runs every stage of an experiment described by a TOML configuration.
 `output_dir` overrides the configured one when non-null.

 # Safety
 Both arguments must be NUL-terminated strings (`output_dir` may be null).
 */
enum SkStatus sk_run_experiment(const char *config_path, const char *output_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPOOFKIT_H */
