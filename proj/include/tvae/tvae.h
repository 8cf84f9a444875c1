/* C interface to the text-VAE library.
 *
 * Every call returns a tvae_status. On failure the message is available
 * from tvae_last_error() (thread-local, valid until the next call on the
 * same thread). Strings handed out through char** must be released with
 * tvae_string_free.
 */
#ifndef TVAE_H
#define TVAE_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define TVAE_API __declspec(dllexport)
#else
#define TVAE_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tvae_status {
  TVAE_OK = 0,
  TVAE_ERR_USAGE = 1,   /* bad argument, config key or value */
  TVAE_ERR_RUNTIME = 2, /* file, shape or other runtime failure */
  TVAE_ERR_NUMERIC = 3  /* NaN/Inf during training */
} tvae_status;

typedef struct tvae_model tvae_model;

TVAE_API const char* tvae_version(void);
/* "kind: message" for the last failing call on this thread, "" if none. */
TVAE_API const char* tvae_last_error(void);
TVAE_API void tvae_string_free(char* s);

/* Trains one run under out_dir/<config hash>/. config_path and overrides
 * (newline-separated "key = value" text) may be NULL; overrides win over
 * the file and seed (if non-NULL) wins over both. resume, if non-NULL,
 * names a checkpoint to continue from. verbose != 0 logs rows to stderr.
 * On success *run_dir receives the run directory. */
TVAE_API tvae_status tvae_train(const char* config_path, const char* overrides,
                                const uint64_t* seed, const char* out_dir, const char* resume,
                                int verbose, char** run_dir);

/* Runs a canned experiment (historyless, kl_tradeoff, receptive_field,
 * tweets_demo). steps may be NULL to keep the built-in budget. *summary
 * receives a CSV-style summary. */
TVAE_API tvae_status tvae_experiment(const char* name, const char* out_dir, uint64_t seed,
                                     const size_t* steps, int verbose, char** summary);

TVAE_API tvae_status tvae_model_load(const char* checkpoint, tvae_model** out);
TVAE_API void tvae_model_free(tvae_model* model);
TVAE_API size_t tvae_model_latent_dim(const tvae_model* model);
/* n greedy decodes of z ~ N(0, I), one per line. */
TVAE_API tvae_status tvae_model_sample(tvae_model* model, size_t n, uint64_t seed, char** text);
/* steps decodes along the line between two prior draws, one per line. */
TVAE_API tvae_status tvae_model_interpolate(tvae_model* model, size_t steps, uint64_t seed,
                                            char** text);

/* Finite-difference suite for scope "ops", "layers" or "models". *csv gets
 * the per-case table; *all_passed is set to 0 or 1. */
TVAE_API tvae_status tvae_gradcheck(const char* scope, size_t instances, uint64_t seed, char** csv,
                                    int* all_passed);

/* metrics.csv of a run directory plus cumulative-minimum columns. */
TVAE_API tvae_status tvae_curves(const char* run_dir, char** csv);

#ifdef __cplusplus
}
#endif

#endif
