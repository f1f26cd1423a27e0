/*
 * C API for the incremental unified defect-inspection framework.
 *
 * All entry points return iuf_status; 0 means success. On failure a
 * human-readable message is available from iuf_last_error() until the next
 * call on the same thread. Handles are opaque and must be released with
 * their matching destroy function.
 */
#ifndef IUF_H
#define IUF_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum iuf_status {
    IUF_OK = 0,
    IUF_ERR_CONFIG = 2, /* bad config, bad layout, missing files */
    IUF_ERR_NUMERIC = 3 /* non-finite loss or undefined metric */
} iuf_status;

typedef struct iuf_config iuf_config;

const char* iuf_version(void);
const char* iuf_last_error(void);

/* Config handles start from built-in defaults. */
iuf_status iuf_config_create(iuf_config** out);
iuf_status iuf_config_load(const char* path, iuf_config** out);
iuf_status iuf_config_set(iuf_config* cfg, const char* key, const char* value);
/* Returned pointer stays valid until the next call on this config. */
iuf_status iuf_config_get(iuf_config* cfg, const char* key, const char** out_value);
void iuf_config_destroy(iuf_config* cfg);

/* Runs the full incremental protocol and writes the run directory. */
iuf_status iuf_train(const iuf_config* cfg, const char* out_dir);

/* Re-evaluates one finished step from its checkpoint. */
iuf_status iuf_eval_step(const char* run_dir, int step);

/* Combined ACC/FM summary across runs as a JSON document. Free the returned
 * string with iuf_string_free. */
iuf_status iuf_report(const char* const* run_dirs, size_t n_runs, char** out_json);

void iuf_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif /* IUF_H */
