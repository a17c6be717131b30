#ifndef DIWA_C_H
#define DIWA_C_H

/* C interface to the super-resolution pipeline. All entry points return a
 * diwa_status; on failure a thread-local message is readable through
 * diwa_last_error() until the next failing call on the same thread. */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes double as process exit codes. */
#define DIWA_OK 0
#define DIWA_ERR_USAGE 1   /* invalid flag, key, value, or config state */
#define DIWA_ERR_RUNTIME 2 /* I/O, missing data/checkpoint, numeric abort */

typedef int32_t diwa_status;

typedef struct diwa_config diwa_config; /* opaque run configuration */

int32_t diwa_abi_version(void);

/* Message for the most recent failure on this thread; never NULL. */
const char* diwa_last_error(void);

/* Creates a configuration holding the desk-scale defaults. */
diwa_status diwa_config_create(diwa_config** out);
void diwa_config_destroy(diwa_config* cfg);

/* Applies a `key = value` file with `#` comments. */
diwa_status diwa_config_load_file(diwa_config* cfg, const char* path);

/* Sets one field; keys match the config-file keys (e.g. "hr_size"). */
diwa_status diwa_config_set(diwa_config* cfg, const char* key, const char* value);

/* Writes the full sorted `key = value` serialization into buf (NUL
 * terminated). *needed receives the required capacity including the NUL;
 * the call fails with DIWA_ERR_USAGE when cap is too small. buf may be NULL
 * with cap 0 to query the size. */
diwa_status diwa_config_serialize(const diwa_config* cfg, char* buf, size_t cap, size_t* needed);

/* Canonical hash over the trajectory-determining fields. */
diwa_status diwa_config_hash(const diwa_config* cfg, uint64_t* out);

/* Commands. Each validates the configuration first. */
diwa_status diwa_run_gen_data(const diwa_config* cfg);
diwa_status diwa_run_train(const diwa_config* cfg);
diwa_status diwa_run_sample(const diwa_config* cfg);

typedef struct diwa_eval_summary {
    double model_psnr;
    double model_ssim;
    double bicubic_psnr;
    double bicubic_ssim;
    uint64_t n_images;
} diwa_eval_summary;

/* out may be NULL when only the CSV side effect is wanted. */
diwa_status diwa_run_eval(const diwa_config* cfg, diwa_eval_summary* out);

diwa_status diwa_run_ablate(const diwa_config* cfg);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* DIWA_C_H */
