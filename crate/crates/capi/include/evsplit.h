#ifndef EVSPLIT_H
#define EVSPLIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Incremented whenever the exported surface changes incompatibly.
 */
#define EVSPLIT_ABI_VERSION 1

typedef enum EvsplitStatus {
  EvsplitStatus_Ok = 0,
  /**
   * A required pointer argument was null.
   */
  EvsplitStatus_NullArgument = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  EvsplitStatus_InvalidUtf8 = 2,
  /**
   * Model text failed to parse or validate.
   */
  EvsplitStatus_Parse = 3,
  EvsplitStatus_UnknownBuiltin = 4,
  /**
   * The builtin exists but cannot be driven through this interface
   * (cross-validatory suites run many fits; use the command-line tool).
   */
  EvsplitStatus_Unsupported = 5,
  EvsplitStatus_Sample = 6,
  /**
   * Conflict functions need a model with a split layout.
   */
  EvsplitStatus_NoSplit = 7,
  /**
   * The named node is not in the sampled graph.
   */
  EvsplitStatus_UnknownNode = 8,
  EvsplitStatus_Report = 9,
  /**
   * A panic was caught at the boundary; state may be inconsistent.
   */
  EvsplitStatus_Panic = 10,
} EvsplitStatus;

/**
 * A model ready to sample: the graph, joint-proposal blocks, and the split
 * layout when there is one.
 */
typedef struct EvsplitModel EvsplitModel;

/**
 * Posterior draws from [`evsplit_sample`].
 */
typedef struct EvsplitSamples EvsplitSamples;

/**
 * Sampler knobs exposed over the ABI. Burn-in counts against `iterations`,
 * which is per chain. Zero is not a usable value for any field here; start
 * from [`evsplit_sampler_defaults`] and override.
 */
typedef struct EvsplitSamplerOptions {
  uint32_t chains;
  uint64_t iterations;
  uint64_t burn_in;
  uint64_t thin;
  uint64_t seed;
} EvsplitSamplerOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, empty string if none.
 * The pointer stays valid until the next library call on the same thread.
 */
const char *evsplit_last_error(void);

uint32_t evsplit_abi_version(void);

struct EvsplitSamplerOptions evsplit_sampler_defaults(void);

/**
 * Parses model configuration text (the same TOML the command-line tool
 * accepts) into a model handle. If the text declares a split, the handle
 * samples the joint partitioned graph and can produce conflict reports.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum EvsplitStatus evsplit_model_from_toml(const char *text, struct EvsplitModel **out);

/**
 * Resolves one of the library's named analyses (`smoking-common`,
 * `smoking-scheme-b` … `smoking-scheme-f`, `hiv-original`, `hiv-saturated`).
 * Suite builtins (`hiv-leave1`, `hiv-leave2`) are refused with
 * `Unsupported`.
 *
 * # Safety
 * `name` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum EvsplitStatus evsplit_model_builtin(const char *name, struct EvsplitModel **out);

/**
 * Number of nodes in the graph this model samples.
 *
 * # Safety
 * `model` must be a live handle from this library, or null (returns 0).
 */
uint64_t evsplit_model_len(const struct EvsplitModel *model);

/**
 * Whether the model carries a split layout, i.e. conflict reporting works.
 *
 * # Safety
 * `model` must be a live handle from this library, or null (returns false).
 */
bool evsplit_model_is_split(const struct EvsplitModel *model);

/**
 * # Safety
 * `model` must come from this library and not have been freed already;
 * null is a no-op.
 */
void evsplit_model_free(struct EvsplitModel *model);

/**
 * Runs the sampler. `options` may be null for the defaults. Multi-arm
 * proposal blocks declared by the model are applied automatically.
 *
 * # Safety
 * `model` must be a live handle; `options` null or valid; `out` valid.
 */
enum EvsplitStatus evsplit_sample(const struct EvsplitModel *model,
                                  const struct EvsplitSamplerOptions *options,
                                  struct EvsplitSamples **out);

/**
 * Kept draws across all chains.
 *
 * # Safety
 * `samples` must be a live handle from this library, or null (returns 0).
 */
uint64_t evsplit_samples_len(const struct EvsplitSamples *samples);

/**
 * Number of sampled nodes (columns).
 *
 * # Safety
 * `samples` must be a live handle from this library, or null (returns 0).
 */
uint64_t evsplit_samples_node_count(const struct EvsplitSamples *samples);

/**
 * Name of column `index`, as a fresh string for [`evsplit_string_free`].
 *
 * # Safety
 * `samples` must be a live handle; `out` must be a valid pointer.
 */
enum EvsplitStatus evsplit_samples_node_name(const struct EvsplitSamples *samples,
                                             uint64_t index,
                                             char **out);

/**
 * Posterior mean and standard deviation of one node.
 *
 * # Safety
 * `samples` must be a live handle; `node` NUL-terminated; `mean` and `sd`
 * valid pointers.
 */
enum EvsplitStatus evsplit_samples_mean_sd(const struct EvsplitSamples *samples,
                                           const char *node,
                                           double *mean,
                                           double *sd);

/**
 * Potential scale reduction factor of one node; 1 is ideal.
 *
 * # Safety
 * Same contract as [`evsplit_samples_mean_sd`].
 */
enum EvsplitStatus evsplit_samples_psrf(const struct EvsplitSamples *samples,
                                        const char *node,
                                        double *out);

/**
 * # Safety
 * `samples` must come from this library and not have been freed already;
 * null is a no-op.
 */
void evsplit_samples_free(struct EvsplitSamples *samples);

/**
 * Deviance summary (mean deviance, plug-in deviance, p_D, DIC, per-datum
 * rows) of a fit, rendered as JSON.
 *
 * # Safety
 * `model` and `samples` must be live handles; `out` a valid pointer.
 */
enum EvsplitStatus evsplit_deviance_json(const struct EvsplitModel *model,
                                         const struct EvsplitSamples *samples,
                                         char **out);

/**
 * Conflict diagnostics of a fitted split model as JSON: separator
 * summaries, contrasts with unadjusted and adjusted p-values, the pooled
 * chi-squared test.
 *
 * # Safety
 * `model` and `samples` must be live handles; `out` a valid pointer.
 */
enum EvsplitStatus evsplit_conflict_json(const struct EvsplitModel *model,
                                         const struct EvsplitSamples *samples,
                                         char **out);

/**
 * Same diagnostics as [`evsplit_conflict_json`], rendered as the aligned
 * text table the CLI prints.
 *
 * # Safety
 * `model` and `samples` must be live handles; `out` a valid pointer.
 */
enum EvsplitStatus evsplit_conflict_text(const struct EvsplitModel *model,
                                         const struct EvsplitSamples *samples,
                                         char **out);

/**
 * Releases a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `s` must have come from this library and not have been freed already.
 */
void evsplit_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EVSPLIT_H */
