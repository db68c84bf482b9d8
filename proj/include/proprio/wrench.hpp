#pragma once

#include <optional>

#include "proprio/dynamics.hpp"
#include "proprio/model.hpp"
#include "proprio/spatial.hpp"

namespace proprio {

// Default Tikhonov damping for wrench reconstruction. The leg Jacobian mixes
// meter and radian row scales and the knee approaches singularity at stretch,
// so reconstruction damps by default; pass 0 only for well-conditioned J.
inline constexpr double kDefaultWrenchDamping = 1e-3;

// Vertical load below which a foot is treated as unloaded for ZMP purposes
// (avoids division blow-ups at touchdown/liftoff).
inline constexpr double kZmpForceThresholdN = 30.0;

// Fixed body-frame transforms and gravity constants needed to turn a raw
// force-torque-sensor reading into a contact wrench, plus the optional
// modified-foot fields used after the sensor is removed and the sole
// replaced. Gravity wrenches are stored for a level foot (axes parallel to
// world) and rotated to the current attitude inside the operations.
struct FootCalibration {
  SpatialTransform x_contact_from_fts;  // contact <- sensor frame
  SpatialTransform x_fts_from_footcom;  // sensor <- foot-CoM frame
  WrenchSample foot_gravity;            // foot-CoM frame, level attitude
  double foot_mass = 0.0;               // kg

  bool has_modified = false;
  SpatialTransform x_modcontact_from_footcom;     // new contact <- old CoM
  SpatialTransform x_modcontact_from_modfootcom;  // new contact <- new CoM
  WrenchSample modified_foot_gravity;             // new-CoM frame, level
  double modified_foot_mass = 0.0;

  // Empty string when the calibration satisfies its invariants (positive
  // masses, gravity magnitudes = mass * |g|, zero gravity moments, correct
  // frame tags); otherwise a diagnostic.
  std::string validity_error() const;
};

// Builds the calibration for one foot of a model (no modified fields).
FootCalibration make_foot_calibration(const RobotModel& model, Side side);

// Builds the calibration including the modified-foot fields: the variant
// model supplies the new sole contact frame and the new foot inertia, the
// original model supplies the sensor placement and the old foot inertia.
// Both models must share the foot link frame (same chain up to the ankle).
FootCalibration make_foot_calibration(const RobotModel& original,
                                      const RobotModel& variant, Side side);

// Removes the foot's own gravity from a raw sensor reading and maps the
// result to the sole contact frame:
//   cF_e = X_c<-ft * (ftF_raw - X_ft<-f * fG_f(R)).
// r_world_foot is the current foot-link attitude used to rotate the stored
// level-foot gravity wrench. Requires raw to be tagged raw-FTS.
WrenchSample fts_to_contact_wrench(const WrenchSample& raw, const FootCalibration& calib,
                                   const Mat3& r_world_foot = Mat3::Identity());

// Maps a contact wrench to leg joint torques: tau = J_leg^T * F. The wrench
// tag must equal expected_frame (the frame the Jacobian was built in).
Vec6 wrench_to_external_torque(const Mat6& j_leg, const WrenchSample& f,
                               WrenchFrame expected_frame = WrenchFrame::ContactPoint);
Vec6 wrench_to_external_torque(const ContactJacobian& jac, const WrenchSample& f);

// Recovers a contact wrench from estimated leg torques with the damped
// pseudo-inverse of J^T:  F = (J J^T + damping^2 I)^{-1} J tau. damping = 0
// switches to a rank-revealing direct solve of J^T F = tau (exact away from
// singularity); negative damping is rejected.
WrenchSample reconstruct_wrench(const Mat6& j_leg, const Vec6& tau_hat,
                                double damping = kDefaultWrenchDamping,
                                WrenchFrame frame = WrenchFrame::ContactPoint);
WrenchSample reconstruct_wrench(const ContactJacobian& jac, const Vec6& tau_hat,
                                double damping = kDefaultWrenchDamping);

// Wrench estimate at the replacement sole after the sensor is removed:
// reconstruction at the new contact frame plus the gravity correction that
// swaps the old foot's weight for the new one's,
//   c*F* = pinv_damped(c*J^T) tau + X_c*<-f * fG_f(R) - X_c*<-f* * f*G_f*(R).
// Requires the modified calibration fields; for an unchanged foot the two
// gravity terms cancel exactly and the result equals reconstruct_wrench.
WrenchSample calibrate_modified_foot(const Vec6& tau_hat, const Mat6& j_new,
                                     const FootCalibration& calib,
                                     const Mat3& r_world_foot = Mat3::Identity(),
                                     double damping = kDefaultWrenchDamping);

// Zero-moment point of a sole-plane contact wrench, relative to the contact
// frame origin: p_x = -M_y / F_z, p_y = +M_x / F_z. Returns nullopt when the
// vertical load is at or below the threshold (unloaded foot).
std::optional<Eigen::Vector2d> zmp_from_wrench(const WrenchSample& f,
                                               double threshold = kZmpForceThresholdN);

}  // namespace proprio
