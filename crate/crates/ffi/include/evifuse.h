#ifndef EVIFUSE_H
#define EVIFUSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EvfStatus {
  EVF_STATUS_OK = 0,
  EVF_STATUS_NULL_POINTER = 1,
  // Argument outside its domain (probability, mass, score).
  EVF_STATUS_DOMAIN = 2,
  EVF_STATUS_TOTAL_CONFLICT = 3,
  EVF_STATUS_EMPTY_INPUT = 4,
  // Input length does not match the model.
  EVF_STATUS_SHAPE = 5,
  EVF_STATUS_IO = 6,
  // Malformed parameter file or data.
  EVF_STATUS_FORMAT = 7,
  EVF_STATUS_INVALID_UTF8 = 8,
  EVF_STATUS_PANIC = 9,
} EvfStatus;

// Opaque evidence network.
typedef struct EvfEvidenceNet EvfEvidenceNet;

// Opaque trained system: branches, evidence networks and scaling.
typedef struct EvfSystem EvfSystem;

// Mass on `{T}`, `{F}` and the whole frame `U`.
typedef struct EvfBinaryMass {
  double t;
  double f;
  double u;
} EvfBinaryMass;

typedef struct EvfDecision {
  // 1 for positive, 0 for negative.
  int32_t label;
  // Pignistic probability of the positive outcome (mean probability for
  // average fusion).
  double score;
  // Residual mass on `U`.
  double conflict;
} EvfDecision;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread. The pointer stays
// valid until the next failing call on the same thread.
const char *evf_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *evf_version(void);

// `(s p, s (1 - p), 1 - s)`.
//
// # Safety
// `out` must be null or valid for writes.
enum EvfStatus evf_calibrated_mass(double p, double s, struct EvfBinaryMass *out);

// Dempster combination of two masses.
//
// # Safety
// `a` and `b` must be null or valid for reads, `out` null or valid for writes.
enum EvfStatus evf_combine_pair(const struct EvfBinaryMass *a,
                                const struct EvfBinaryMass *b,
                                struct EvfBinaryMass *out);

// Left fold of [`evf_combine_pair`] over `n` masses.
//
// # Safety
// `masses` must point to `n` readable values; `out` null or valid for writes.
enum EvfStatus evf_combine_many(const struct EvfBinaryMass *masses,
                                size_t n,
                                struct EvfBinaryMass *out);

// Normalization mass `M` and conflict `kappa` of a pair.
//
// # Safety
// Pointers must be null or valid.
enum EvfStatus evf_conflict(const struct EvfBinaryMass *a,
                            const struct EvfBinaryMass *b,
                            double *normalization,
                            double *kappa);

// Pignistic decision.
//
// # Safety
// Pointers must be null or valid.
enum EvfStatus evf_decide(const struct EvfBinaryMass *m, struct EvfDecision *out);

// Loads an evidence network from a single-block parameter file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` valid for writes.
enum EvfStatus evf_evidence_net_load(const char *path, struct EvfEvidenceNet **out);

// Input width of the network, or 0 for a null handle.
//
// # Safety
// `net` must be null or a live handle.
size_t evf_evidence_net_input_dim(const struct EvfEvidenceNet *net);

// Evidence score in `[0, 1]` for one feature vector.
//
// # Safety
// `net` must be a live handle, `features` readable for `n` values.
enum EvfStatus evf_evidence_net_score(const struct EvfEvidenceNet *net,
                                      const double *features,
                                      size_t n,
                                      double *out);

// # Safety
// `net` must be null or a handle from [`evf_evidence_net_load`] not yet freed.
void evf_evidence_net_free(struct EvfEvidenceNet *net);

// Loads a trained system file written by the `train` or `run` commands.
//
// # Safety
// `path` must be a NUL-terminated string; `out` valid for writes.
enum EvfStatus evf_system_load(const char *path, struct EvfSystem **out);

// Input sizes expected by [`evf_system_predict`]. Any out-pointer may be null.
//
// # Safety
// `system` must be a live handle.
enum EvfStatus evf_system_input_dims(const struct EvfSystem *system,
                                     size_t *n_codes,
                                     size_t *n_continuous,
                                     size_t *n_vector);

// Predicts from unscaled inputs. Writes the Dempster-fused decision to
// `dst_out` and the average-fusion decision to `average_out` (either may
// be null). `branch_probs` and `branch_evidence`, when non-null, receive
// three values each in the order tabular, vector, fusion.
//
// # Safety
// `system` must be a live handle; input pointers readable for their lengths;
// output pointers null or writable.
enum EvfStatus evf_system_predict(const struct EvfSystem *system,
                                  const size_t *codes,
                                  size_t n_codes,
                                  const double *continuous,
                                  size_t n_continuous,
                                  const double *vector,
                                  size_t n_vector,
                                  struct EvfDecision *dst_out,
                                  struct EvfDecision *average_out,
                                  double *branch_probs,
                                  double *branch_evidence);

// # Safety
// `system` must be null or a handle from [`evf_system_load`] not yet freed.
void evf_system_free(struct EvfSystem *system);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EVIFUSE_H */
