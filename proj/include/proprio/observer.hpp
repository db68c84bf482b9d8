#pragma once

#include "proprio/dynamics.hpp"

namespace proprio {

// Momentum-observer defaults: 100 Hz estimation rate with a per-axis gain of
// 100 /s, so gain*dt = 1 and the discrete observer is deadbeat on a constant
// disturbance in the static regime.
inline constexpr double kDefaultObserverGain = 100.0;
inline constexpr double kDefaultObserverDt = 0.01;

// First-order momentum-observer state. The residual tracks the generalized
// external torque with per-axis time constant 1/gain_i.
struct ObserverState {
  VecX residual;        // r, N*m
  VecX p_hat_integral;  // running integral of (tau_v + beta + r)
  VecX p0;              // generalized momentum at initialization
  VecX gain;            // diagonal K0, all entries > 0
  double dt = kDefaultObserverDt;
};

// Generalized momentum p = M(q) * u.
VecX generalized_momentum(const RobotModel& model, const GeneralizedState& state);

// beta = C^T u - g + tau_f, with the friction torque taken from the model's
// own FrictionParams (zero rows for the floating-base coordinates). Running
// the observer on a perturbed copy of the model emulates model error.
VecX beta_term(const RobotModel& model, const GeneralizedState& state);

// Fresh observer anchored at the current momentum: residual = 0,
// p0 = generalized_momentum(state), integral = 0. Throws std::invalid_argument
// unless every gain entry and dt are positive.
ObserverState mob_init(const RobotModel& model, const GeneralizedState& state,
                       const VecX& gain, double dt);
ObserverState mob_init(const RobotModel& model, const GeneralizedState& state);

// One explicit-Euler observer update at the estimation rate:
//   integral += (tau_v + beta + r_prev) * dt
//   r = gain .* (p(t) - p0 - integral)
// tau_v is the commanded generalized torque (virtual rows zero on a floating
// base). Returns the new residual and updates obs in place.
VecX mob_step(ObserverState& obs, const RobotModel& model, const GeneralizedState& state,
              const VecX& tau_v);

// Optional base-state estimator replacing ground-truth base velocity:
// complementary tilt filter (gyro integration corrected toward the
// accelerometer's gravity direction) plus leg-odometry linear velocity
// assuming the stance foot is stationary in the world.
struct ComplementaryFilterConfig {
  double dt = kDefaultObserverDt;
  double tilt_time_constant = 0.5;  // s
};

class BaseStateFilter {
 public:
  BaseStateFilter(RobotModel model, ComplementaryFilterConfig cfg);

  // gyro (rad/s) and accel (specific force, m/s^2) in pelvis coordinates;
  // q/qdot are the joint vectors. Returns the pelvis-frame base linear
  // velocity estimate and advances the tilt state.
  Vec3 update(const Vec3& gyro, const Vec3& accel, const VecX& q, const VecX& qdot);

  // Roll/pitch attitude estimate (world <- pelvis, yaw-free).
  Mat3 tilt() const;
  // Upward direction estimate in pelvis coordinates.
  Vec3 up_in_base() const { return up_; }
  Side stance_side() const { return stance_; }

 private:
  RobotModel model_;
  ComplementaryFilterConfig cfg_;
  Vec3 up_ = Vec3::UnitZ();
  bool initialized_ = false;
  Side stance_ = Side::Left;
};

}  // namespace proprio
