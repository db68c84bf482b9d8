#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "proprio/dynamics.hpp"
#include "proprio/gait.hpp"
#include "proprio/gru.hpp"
#include "proprio/model.hpp"
#include "proprio/rng.hpp"

namespace proprio {

// Penalty ground: four sole-corner contacts with a Kelvin-Voigt normal law
// and friction-clamped viscous tangential forces.
struct GroundModel {
  double stiffness = 2e5;        // N/m per corner
  double damping = 2e3;          // N*s/m per corner
  // Per-corner tangential viscous coefficient. Kept soft on purpose: a
  // stiffer value anchors the touchdown foot against its residual tracking
  // velocity and the resulting horizontal jolt destabilises the step. The
  // few-mm-per-step creep this allows is absorbed by re-anchoring the plan
  // to the measured support sole (SimOptions::anchor_filter).
  double tangent_damping = 2e3;  // N*s/m
  double friction_mu = 0.8;
  double height = 0.0;  // ground plane z, m
};

// Per-joint PD gains over one leg (hip yaw, hip roll, hip pitch, knee,
// ankle pitch, ankle roll), mirrored to both legs. Ankle kd is kept light
// relative to kp: the foot inertia is small and heavier ankle damping fights
// the ground-compliance rocking that weight transfer relies on.
struct PdGains {
  Vec6 kp = (Vec6() << 3000, 3000, 3000, 3000, 3000, 3000).finished();
  Vec6 kd = (Vec6() << 60, 60, 60, 60, 20, 10).finished();
};

// Sensor corruption applied when sampling a log down to dataset rate.
struct SensorNoise {
  double encoder_quant = 5e-5;   // rad
  double qdot_noise_std = 0.0;   // rad/s, on top of first differences
  double gyro_noise_std = 2e-3;  // rad/s
  double gyro_bias_walk = 1e-4;  // rad/s per sqrt(s)
  double accel_noise_std = 2e-2;  // m/s^2
  double accel_bias_walk = 1e-3;  // m/s^2 per sqrt(s)
  double fts_force_std = 1.0;     // N per axis
  double fts_moment_std = 0.3;    // N*m per axis

  static SensorNoise zero() {
    SensorNoise n;
    n.encoder_quant = n.qdot_noise_std = 0.0;
    n.gyro_noise_std = n.gyro_bias_walk = 0.0;
    n.accel_noise_std = n.accel_bias_walk = 0.0;
    n.fts_force_std = n.fts_moment_std = 0.0;
    return n;
  }
  std::string validity_error() const;
};

// One 2 kHz simulation tick of ground truth.
struct EpisodeTick {
  GeneralizedState state;
  VecX udot;          // generalized acceleration realized this tick
  VecX tau_d;         // commanded joint torques, n_joints
  VecX tau_applied;   // realized actuator torque after limits, n_joints
  VecX tau_friction;  // realized joint friction torque, n_joints
  std::array<WrenchSample, 2> contact;  // truth, contact frame, by Side
  std::array<WrenchSample, 2> raw_fts;  // noiseless sensor reading, by Side
  Vec3 imu_gyro = Vec3::Zero();   // body rates, pelvis frame
  Vec3 imu_accel = Vec3::Zero();  // specific force, pelvis frame
};

struct EpisodeLog {
  double dt = 5e-4;
  std::string model_id;
  std::uint64_t seed = 0;
  GaitParams gait;
  bool valid = false;
  double failure_time = -1.0;  // s, when invalid
  std::vector<EpisodeTick> ticks;
};

// One dataset sample at 100 Hz, per leg.
struct DatasetRow {
  std::uint64_t tick = 0;  // 2 kHz tick index the sample was taken at
  InputFrame input;
  Vec6 target = Vec6::Zero();  // external leg joint torque label, N*m
  WrenchSample truth_wrench;   // simulator-truth contact wrench, contact frame
  std::uint32_t episode = 0;
};

struct Dataset {
  std::vector<DatasetRow> rows;
  std::string model_id;
  Side leg = Side::Left;
  std::uint64_t seed = 0;
  SensorNoise noise;
  std::string split = "";  // "", "train", or "val"

  // Empty when per-episode ticks are strictly increasing at 100 Hz spacing.
  std::string validity_error() const;
};

// PD tracking torque plus gravity compensation for all actuated joints:
//   tau = Kp (q_d - q) + Kd (qdot_d - qdot) + g_actuated(state).
// Omitting qdot_desired damps against zero, which drags behind a moving
// reference; the simulator feeds the finite-differenced target velocity.
VecX control_torque(const RobotModel& model, const GeneralizedState& state,
                    const VecX& q_desired, const PdGains& gains,
                    const VecX& qdot_desired = VecX());

// Net wrench of the four sole-corner penalty contacts, expressed in the
// contact frame about its origin. x_world_contact poses the sole in the
// world; v_contact is the sole-frame twist in its own coordinates.
WrenchSample ground_contact_wrench(const SpatialTransform& x_world_contact,
                                   const Vec6& v_contact, const FootGeometry& foot,
                                   const GroundModel& ground);

struct IkResult {
  Vec6 q = Vec6::Zero();
  bool converged = false;
  double residual = 0.0;  // combined position (m) + orientation (rad) error norm
  int iterations = 0;
};

// Damped-least-squares leg inverse kinematics: finds leg joint angles
// placing the sole contact frame at x_world_foot given the pelvis pose.
// Stops at residual < 1e-9 or 50 iterations; non-convergence is flagged and
// the best iterate returned.
IkResult solve_leg_ik(const RobotModel& model, Side side, const Mat3& r_world_pelvis,
                      const Vec3& p_world_pelvis, const Mat3& r_world_foot,
                      const Vec3& p_world_foot, const Vec6& q_guess);

struct SimOptions {
  PlanConfig plan;
  PdGains gains;
  GroundModel ground;
  double torque_limit = 400.0;  // N*m actuator clamp
  double fall_height = 0.5;     // pelvis z below this marks a fall, m
  // Weight-transfer reference lead, s: the sole-sink compensation reads the
  // planned load share this far ahead so the realized transfer, which lags
  // the commanded geometry by the PD tracking lag, completes on schedule.
  double transfer_lead = 0.04;
  // CoM servo on the pelvis reference: the IK target CoM is the planned CoM
  // plus a low-passed trim of com_kp * position error plus com_kv * velocity
  // error (m per m, m per m/s), clamped to com_trim_max. The filter keeps
  // this outer loop well below the joint-servo bandwidth. A purely
  // feedforward reference cannot stabilize the laterally divergent pendulum
  // mode under compliant contact — no joint-PD gain setting survives more
  // than a few steps — so the reference generator closes this one task-space
  // loop while the joint level stays position PD plus gravity compensation.
  double com_kp = 1.0;
  double com_kv = 0.3;
  double com_trim_filter = 0.08;  // first-order time constant, s
  // Per-axis trim clamps follow the sole footprint: the sagittal lever is
  // more than twice the lateral one, and riding out a hard sagittal push
  // needs most of it.
  double com_trim_max_x = 0.10;  // m
  double com_trim_max_y = 0.06;  // m
  // Same servo idea for pelvis yaw: the foot-ground interface resists yaw
  // only viscously, so body yaw otherwise random-walks under the per-step
  // hip-yaw reaction torques until the leg geometry is unworkable.
  double yaw_kp = 0.4;
  double yaw_trim_max = 0.3;  // rad
  // Plan re-anchoring time constant, s: the viscous feet creep millimetres
  // per step under propulsion shear, so the whole reference frame follows
  // the measured support sole with this first-order lag; without it a
  // 20-step plan walks away from its own footholds.
  double anchor_filter = 0.3;
};

// Runs one walking episode at 2 kHz: reference plan -> leg IK -> PD +
// gravity compensation -> penalty contact -> semi-implicit integration,
// with scheduled pushes. The raw FTS channel is synthesized from the foot
// link's true Newton-Euler balance (it sees contact + foot gravity + foot
// inertial loads, like a real sensor). Deterministic in (model, gait, seed).
// Throws std::runtime_error if the state goes non-finite.
EpisodeLog simulate_episode(const RobotModel& model, const GaitParams& gait,
                            std::uint64_t seed, const SimOptions& options = {});

// Samples a valid log down to 100 Hz dataset rows for one leg: 2-tap-average
// anti-aliasing, encoder quantization, first-difference joint rates, IMU
// noise with bias random walks, FTS noise, and the label path
//   target = J_contact(q_meas)^T * gravity-calibrated contact wrench
// computed from the noisy raw-FTS channel. Noise draws are seeded from
// (log.seed, leg), so datasets are reproducible bit-for-bit.
std::vector<DatasetRow> sample_sensors(const RobotModel& model, const EpisodeLog& log,
                                       const SensorNoise& noise, Side leg);

}  // namespace proprio
