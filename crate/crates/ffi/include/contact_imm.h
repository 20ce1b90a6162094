#ifndef CONTACT_IMM_H
#define CONTACT_IMM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CimmStatus {
  CIMM_STATUS_OK = 0,
  CIMM_STATUS_NULL_POINTER = 1,
  CIMM_STATUS_INVALID_ARGUMENT = 2,
  CIMM_STATUS_CONFIG = 3,
  CIMM_STATUS_IO = 4,
  // Kinematic singularity, singular innovation, non-finite values or a
  // degenerate filter bank.
  CIMM_STATUS_NUMERICAL = 5,
  CIMM_STATUS_PANIC = 6,
} CimmStatus;

// Opaque estimator handle.
typedef struct CimmEstimator CimmEstimator;

// Raw sensor channels of one tick. Leg arrays are ordered FL, FR, RL, RR,
// three joints each.
typedef struct CimmSensorFrame {
  double t;
  double theta[3];
  double accel[3];
  double omega[3];
  double q[12];
  double q_dot[12];
  double tau[12];
} CimmSensorFrame;

// Combined estimate: `state` is [Θ, d, ω, v], `contact` the per-leg contact
// probabilities.
typedef struct CimmEstimate {
  double t;
  double state[12];
  double contact[4];
} CimmEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Creates an estimator with the default robot and the trot mode set at
// sample period `ts` seconds.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum CimmStatus cimm_estimator_new(double ts, struct CimmEstimator **out);

// Creates an estimator from the `[sim]`, `[robot]` and `[filter]` sections
// of a scenario TOML file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` as in `cimm_estimator_new`.
enum CimmStatus cimm_estimator_from_config(const char *path, struct CimmEstimator **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `handle` must come from this library and not be used afterwards.
void cimm_estimator_free(struct CimmEstimator *handle);

// Processes one tick of sensor data.
//
// # Safety
// `handle` must be a live handle; `frame` and `out` valid pointers.
enum CimmStatus cimm_estimator_step(struct CimmEstimator *handle,
                                    const struct CimmSensorFrame *frame,
                                    struct CimmEstimate *out);

// Number of contact modes in the bank.
//
// # Safety
// `handle` must be a live handle.
size_t cimm_estimator_mode_count(const struct CimmEstimator *handle);

// Copies the current mode probabilities into `out[0..len]`. Before the
// first step the initial uniform distribution is reported.
//
// # Safety
// `handle` must be a live handle and `out` point to `len` writable doubles.
enum CimmStatus cimm_estimator_mode_probabilities(const struct CimmEstimator *handle,
                                                  double *out,
                                                  size_t len);

// Detail of the last failed step, or an empty string. Valid until the next
// call on the handle.
//
// # Safety
// `handle` must be a live handle.
const char *cimm_estimator_last_error(const struct CimmEstimator *handle);

// Foot position in the body frame for joint angles `q[3]`, with the
// handle's robot, or the default robot when `handle` is null.
//
// # Safety
// `q` must point to 3 doubles and `out` to 3 writable doubles.
enum CimmStatus cimm_forward_kinematics(const struct CimmEstimator *handle,
                                        uint32_t leg,
                                        const double *q,
                                        double *out);

// Leg Jacobian `∂p/∂q`, written row-major into `out[9]`.
//
// # Safety
// As `cimm_forward_kinematics`, with `out` pointing to 9 writable doubles.
enum CimmStatus cimm_leg_jacobian(const struct CimmEstimator *handle,
                                  uint32_t leg,
                                  const double *q,
                                  double *out);

// Body-frame ground reaction force recovered from joint angles and torques.
//
// # Safety
// `q` and `tau` must point to 3 doubles and `out` to 3 writable doubles.
enum CimmStatus cimm_contact_force(const struct CimmEstimator *handle,
                                   uint32_t leg,
                                   const double *q,
                                   const double *tau,
                                   double *out);

// Static description of a status code.
const char *cimm_status_message(enum CimmStatus status);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONTACT_IMM_H */
