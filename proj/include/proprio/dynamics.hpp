#pragma once

#include <utility>
#include <vector>

#include "proprio/model.hpp"
#include "proprio/spatial.hpp"

namespace proprio {

// Base pose/twist plus joint state. The base twist (base_lin_vel,
// base_ang_vel) is expressed in the base (pelvis) frame; generalized
// velocity vectors are ordered [v_fb; w_fb; qdot] for floating-base models
// and [qdot] for fixed-base ones.
struct GeneralizedState {
  Vec3 base_pos = Vec3::Zero();
  Mat3 base_rot = Mat3::Identity();
  Vec3 base_lin_vel = Vec3::Zero();
  Vec3 base_ang_vel = Vec3::Zero();
  VecX q;
  VecX qdot;

  static GeneralizedState zero(const RobotModel& model) {
    GeneralizedState s;
    s.q = VecX::Zero(model.n_joints);
    s.qdot = VecX::Zero(model.n_joints);
    return s;
  }

  VecX velocity(const RobotModel& model) const;
  void set_velocity(const RobotModel& model, const VecX& u);
};

// Throws std::invalid_argument when the state is non-finite, sized wrong, or
// the base rotation has drifted off SO(3).
void validate_state(const RobotModel& model, const GeneralizedState& state);

// Per-link world pose and body-frame twist.
struct KinCache {
  std::vector<SpatialTransform> x_world_link;   // world <- link
  std::vector<SpatialTransform> x_parent_link;  // parent <- link
  std::vector<Vec6> v_body;                     // link twist, link coords
};

KinCache forward_kinematics(const RobotModel& model, const GeneralizedState& state);

// Body-frame spatial accelerations for a given generalized acceleration
// (true accelerations, no gravity offset).
std::vector<Vec6> acceleration_pass(const RobotModel& model, const KinCache& cache,
                                    const GeneralizedState& state, const VecX& udot);

// Composite-rigid-body mass matrix, nv x nv, symmetric positive-definite.
MatX mass_matrix(const RobotModel& model, const GeneralizedState& state);

// Coriolis matrix satisfying both C*u = bias force and Mdot = C + C^T.
// Built from the world-frame factorization
//   C = sum_i J_i^T (I_i Jdot_i + (v_i x*) I_i J_i).
MatX coriolis_matrix(const RobotModel& model, const GeneralizedState& state);

// Gravity load vector g(q): generalized force needed to hold the robot
// against gravity (left-hand-side convention of M udot + C u + g = tau).
VecX gravity_vector(const RobotModel& model, const GeneralizedState& state);

struct ContactJacobian {
  MatX full;                        // 6 x nv, contact-frame coordinates
  Eigen::Matrix<double, 6, 6> leg;  // columns = leg joints base->foot
  SpatialTransform x_world_frame;   // world <- contact frame
  WrenchFrame frame = WrenchFrame::Untagged;
};

// Geometric Jacobian of a foot-mounted frame; J*u is the frame's spatial
// velocity expressed in the frame itself. Valid tags: raw-FTS,
// contact-point, modified-contact-point.
ContactJacobian contact_jacobian(const RobotModel& model, const GeneralizedState& state,
                                 Side side, WrenchFrame frame);

// Fixed transform foot-link <- foot-mounted frame for the given tag.
SpatialTransform foot_frame_transform(const FootGeometry& foot, WrenchFrame frame);

// Recursive Newton-Euler: returns M udot + C u + g - sum J^T F, the
// generalized torque (tau_v + tau_f) consistent with the motion. External
// wrenches are forces ON the robot, expressed in the foot frame named by
// their tag.
VecX inverse_dynamics(const RobotModel& model, const GeneralizedState& state,
                      const VecX& udot,
                      const std::vector<std::pair<Side, WrenchSample>>& external = {});

// Joint friction torque (assisting sign: dissipative, tau_f . qdot <= 0):
// tau_f = -(viscous .* qdot + coulomb .* tanh(qdot / smoothing_vel)).
VecX friction_torque(const FrictionParams& params, const VecX& qdot);

// Advance a state by dt along generalized velocity u (semi-implicit style:
// the returned state carries u as its velocity). The base rotation is
// advanced by the exponential map of the body angular rate.
GeneralizedState integrate_state(const RobotModel& model, const GeneralizedState& state,
                                 const VecX& u, double dt);

// Whole-robot CoM in world coordinates.
Vec3 com_position(const RobotModel& model, const KinCache& cache);

double kinetic_energy(const RobotModel& model, const GeneralizedState& state);
double potential_energy(const RobotModel& model, const GeneralizedState& state);

}  // namespace proprio
