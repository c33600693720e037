#ifndef NFV_ENERGY_H
#define NFV_ENERGY_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every call.
typedef enum NfvStatus {
  NFV_STATUS_OK = 0,
  NFV_STATUS_NULL_POINTER = 1,
  // An argument fell outside its domain.
  NFV_STATUS_INVALID_ARGUMENT = 2,
  // A buffer length did not match the expected dimension.
  NFV_STATUS_DIMENSION = 3,
  // A computation produced NaN or infinity.
  NFV_STATUS_NON_FINITE = 4,
  // A configuration string or file was rejected.
  NFV_STATUS_CONFIG = 5,
  // Reading or writing files failed.
  NFV_STATUS_IO = 6,
  // An internal panic was caught at the boundary.
  NFV_STATUS_INTERNAL = 7,
} NfvStatus;

// Opaque DDPG agent with its own exploration generator.
typedef struct NfvAgent NfvAgent;

// Opaque simulator instance with its SLA.
typedef struct NfvEnv NfvEnv;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread, or null.
const char *nfv_last_error(void);

// Build an environment from an experiment config in TOML form.
//
// # Safety
// `config_toml` must be a valid NUL-terminated string and `out` a valid pointer.
enum NfvStatus nfv_env_new(const char *config_toml, uint64_t seed, struct NfvEnv **out);

// # Safety
// `env` must come from [`nfv_env_new`] and not be used afterwards. Null is ignored.
void nfv_env_free(struct NfvEnv *env);

// Length of the normalized state vector; 0 for a null handle.
//
// # Safety
// `env` must be null or a live handle.
size_t nfv_env_state_dim(const struct NfvEnv *env);

// Length of the raw action vector; 0 for a null handle.
//
// # Safety
// `env` must be null or a live handle.
size_t nfv_env_action_dim(const struct NfvEnv *env);

// Reseed and write the initial normalized state.
//
// # Safety
// `state_out` must point to `state_len` writable doubles.
enum NfvStatus nfv_env_reset(struct NfvEnv *env,
                             uint64_t seed,
                             double *state_out,
                             size_t state_len);

// Apply a raw action in `[-1, 1]^d` for one control interval.
//
// Writes the next normalized state, the SLA reward and whether the SLA
// constraint was violated. The environment is unchanged on failure.
//
// # Safety
// Buffers must be valid for their stated lengths; scalar outputs must be valid pointers.
enum NfvStatus nfv_env_step(struct NfvEnv *env,
                            const double *action,
                            size_t action_len,
                            double *state_out,
                            size_t state_len,
                            double *reward_out,
                            bool *violated_out);

// Freshly initialized agent with default hyperparameters.
//
// # Safety
// `out` must be a valid pointer.
enum NfvStatus nfv_agent_new(size_t state_dim,
                             size_t action_dim,
                             uint64_t seed,
                             struct NfvAgent **out);

// Load a checkpoint directory written by training or [`nfv_agent_save`].
//
// # Safety
// `dir` must be a valid NUL-terminated path and `out` a valid pointer.
enum NfvStatus nfv_agent_load(const char *dir, uint64_t seed, struct NfvAgent **out);

// # Safety
// `agent` must be a live handle and `dir` a valid NUL-terminated path.
enum NfvStatus nfv_agent_save(const struct NfvAgent *agent, const char *dir);

// # Safety
// `agent` must come from this library and not be used afterwards. Null is ignored.
void nfv_agent_free(struct NfvAgent *agent);

// Policy action for `state`; with `explore` set, Gaussian noise is added.
//
// # Safety
// Buffers must be valid for their stated lengths.
enum NfvStatus nfv_agent_act(struct NfvAgent *agent,
                             const double *state,
                             size_t state_len,
                             bool explore,
                             double *action_out,
                             size_t action_len);

// Server power in watts at utilization `u`.
//
// # Safety
// `out` must be a valid pointer.
enum NfvStatus nfv_power(double u, double p_idle, double p_max, double h, double *out);

// Relative energy saving of a scheduler against a baseline.
//
// # Safety
// `out` must be a valid pointer.
enum NfvStatus nfv_energy_saving(double e_nf, double e_train, double e_baseline, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NFV_ENERGY_H */
