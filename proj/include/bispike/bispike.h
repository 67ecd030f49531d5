/* bispike: elastic bi-spiking neural network toolkit, C interface.
 *
 * Every function returns a status int: 0 success, 1 internal error, 2 config
 * error, 3 numeric divergence, 4 I/O error. On failure, when `err` is
 * non-NULL it receives a heap-allocated error object the caller must free
 * with bsk_error_free.
 */
#ifndef BISPIKE_BISPIKE_H
#define BISPIKE_BISPIKE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define BSK_API __declspec(dllexport)
#else
#define BSK_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef struct bsk_error bsk_error;

BSK_API int bsk_error_code(const bsk_error* err);
BSK_API const char* bsk_error_message(const bsk_error* err);
BSK_API void bsk_error_free(bsk_error* err);

/* Library semantic version, e.g. "0.1.0". Static storage; do not free. */
BSK_API const char* bsk_version(void);

/* Train per a JSON config file; writes metrics.csv and checkpoint.bin into
 * out_dir. */
BSK_API int bsk_train(const char* config_path, const char* out_dir, bsk_error** err);

/* Write a JSON analysis report for a checkpoint.
 *   kind:       "firing" | "isometry" | "energy"
 *   data_path:  optional corpus override (NULL or "" to use the recorded one)
 *   k_override: > 0 recalibrates amplitudes on the probe sample with this k;
 *               <= 0 keeps the calibration stored in the checkpoint
 */
BSK_API int bsk_analyze(const char* kind, const char* ckpt_path, const char* data_path,
                        float k_override, const char* out_path, bsk_error** err);

/* Run the gradient self-checks. *report_out (optional) receives the pass/fail
 * table; free it with bsk_string_free. inject_fault_op (optional) perturbs
 * the named op's backward pass so the harness must flag it; returns 1 via the
 * status when any check fails (no bsk_error is raised for plain failures). */
BSK_API int bsk_gradcheck(uint64_t seed, const char* inject_fault_op, char** report_out,
                          bsk_error** err);

BSK_API void bsk_string_free(char* s);

/* Checkpoint inspection. Entries are exposed in file order; names, dims and
 * data stay valid until bsk_checkpoint_close. */
typedef struct bsk_checkpoint bsk_checkpoint;

BSK_API int bsk_checkpoint_open(const char* path, bsk_checkpoint** out, bsk_error** err);
BSK_API void bsk_checkpoint_close(bsk_checkpoint* ck);
BSK_API uint32_t bsk_checkpoint_version(const bsk_checkpoint* ck);
BSK_API size_t bsk_checkpoint_entry_count(const bsk_checkpoint* ck);
/* NULL / 0 for an out-of-range index. */
BSK_API const char* bsk_checkpoint_entry_name(const bsk_checkpoint* ck, size_t idx);
BSK_API uint32_t bsk_checkpoint_entry_rank(const bsk_checkpoint* ck, size_t idx);
BSK_API uint32_t bsk_checkpoint_entry_dim(const bsk_checkpoint* ck, size_t idx, uint32_t d);
BSK_API const float* bsk_checkpoint_entry_data(const bsk_checkpoint* ck, size_t idx,
                                               size_t* numel_out);

#ifdef __cplusplus
}
#endif

#endif /* BISPIKE_BISPIKE_H */
