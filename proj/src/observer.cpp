#include "proprio/observer.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

namespace proprio {

VecX generalized_momentum(const RobotModel& model, const GeneralizedState& state) {
  return mass_matrix(model, state) * state.velocity(model);
}

VecX beta_term(const RobotModel& model, const GeneralizedState& state) {
  const VecX u = state.velocity(model);
  VecX beta = coriolis_matrix(model, state).transpose() * u - gravity_vector(model, state);
  const VecX tau_f = friction_torque(model.friction, state.qdot);
  for (int j = 0; j < model.n_joints; ++j) beta[model.vrow(j)] += tau_f[j];
  return beta;
}

ObserverState mob_init(const RobotModel& model, const GeneralizedState& state,
                       const VecX& gain, double dt) {
  if (gain.size() != model.nv())
    throw std::invalid_argument("mob_init: gain has wrong size");
  if ((gain.array() <= 0.0).any())
    throw std::invalid_argument("mob_init: gain entries must be positive");
  if (dt <= 0.0) throw std::invalid_argument("mob_init: dt must be positive");

  ObserverState obs;
  obs.residual = VecX::Zero(model.nv());
  obs.p_hat_integral = VecX::Zero(model.nv());
  obs.p0 = generalized_momentum(model, state);
  obs.gain = gain;
  obs.dt = dt;
  return obs;
}

ObserverState mob_init(const RobotModel& model, const GeneralizedState& state) {
  return mob_init(model, state, VecX::Constant(model.nv(), kDefaultObserverGain),
                  kDefaultObserverDt);
}

VecX mob_step(ObserverState& obs, const RobotModel& model, const GeneralizedState& state,
              const VecX& tau_v) {
  if (tau_v.size() != model.nv())
    throw std::invalid_argument("mob_step: tau_v has wrong size");
  if (obs.residual.size() != model.nv())
    throw std::invalid_argument("mob_step: observer was initialized for a different model");

  obs.p_hat_integral += (tau_v + beta_term(model, state) + obs.residual) * obs.dt;
  obs.residual =
      (obs.gain.array() *
       (generalized_momentum(model, state) - obs.p0 - obs.p_hat_integral).array())
          .matrix();
  return obs.residual;
}

BaseStateFilter::BaseStateFilter(RobotModel model, ComplementaryFilterConfig cfg)
    : model_(std::move(model)), cfg_(cfg) {
  if (cfg_.dt <= 0.0 || cfg_.tilt_time_constant <= 0.0)
    throw std::invalid_argument("BaseStateFilter: dt and time constant must be positive");
  if (!model_.floating_base || model_.feet.empty())
    throw std::invalid_argument("BaseStateFilter: needs a floating base with feet");
}

Vec3 BaseStateFilter::update(const Vec3& gyro, const Vec3& accel, const VecX& q,
                             const VecX& qdot) {
  // Tilt: rotate the stored world-up direction by the body rate, then blend
  // toward the accelerometer direction (specific force points up at rest).
  if (!initialized_) {
    up_ = accel.norm() > 1e-6 ? Vec3(accel.normalized()) : Vec3::UnitZ();
    initialized_ = true;
  } else {
    up_ = axis_angle(gyro, -gyro.norm() * cfg_.dt) * up_;
    if (accel.norm() > 1e-6) {
      const double alpha = cfg_.dt / (cfg_.tilt_time_constant + cfg_.dt);
      up_ = ((1.0 - alpha) * up_ + alpha * accel.normalized()).normalized();
    }
  }

  // Stance leg: the foot moving least relative to the pelvis.
  GeneralizedState s = GeneralizedState::zero(model_);
  s.q = q;
  s.qdot = qdot;
  double best = std::numeric_limits<double>::infinity();
  ContactJacobian best_jac;
  const VecX u_joints_only = [&] {
    VecX u = VecX::Zero(model_.nv());
    for (int j = 0; j < model_.n_joints; ++j) u[model_.vrow(j)] = qdot[j];
    return u;
  }();
  for (const Side side : {Side::Left, Side::Right}) {
    if (!model_.has_foot(side)) continue;
    ContactJacobian jac = contact_jacobian(model_, s, side, WrenchFrame::ContactPoint);
    const double rel = (jac.full * u_joints_only).head<3>().norm();
    if (rel < best) {
      best = rel;
      best_jac = std::move(jac);
      stance_ = side;
    }
  }

  // Leg odometry: stance contact frame stationary in the world, so the
  // frame-coordinate velocity B*[v; w] + J_leg*qdot_leg vanishes. The gyro
  // supplies w; solve the linear rows for v.
  const Eigen::Matrix<double, 6, 6> base_block =
      best_jac.full.leftCols<6>();  // motion map base -> contact frame
  const Vec3 leg_lin = (best_jac.full * u_joints_only).head<3>();
  const Mat3 b_ll = base_block.topLeftCorner<3, 3>();
  const Mat3 b_la = base_block.topRightCorner<3, 3>();
  return b_ll.transpose() * (-leg_lin - b_la * gyro);
}

Mat3 BaseStateFilter::tilt() const {
  // Yaw-free rotation mapping the estimated up direction onto world z.
  const Vec3 axis = up_.cross(Vec3::UnitZ());
  const double s = axis.norm();
  const double c = up_.dot(Vec3::UnitZ());
  if (s < 1e-12) return c > 0.0 ? Mat3::Identity() : axis_angle(Vec3::UnitX(), M_PI);
  return axis_angle(axis / s, std::atan2(s, c));
}

}  // namespace proprio
