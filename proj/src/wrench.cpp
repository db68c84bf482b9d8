#include "proprio/wrench.hpp"

#include <cmath>
#include <stdexcept>

#include "proprio/dynamics.hpp"

namespace proprio {

namespace {

SpatialTransform tagged(SpatialTransform x, WrenchFrame src, WrenchFrame dst) {
  x.src_frame = src;
  x.dst_frame = dst;
  return x;
}

// Stored gravity wrenches describe a level foot; rotate into the current
// foot-CoM axes (parallel to the foot-link axes).
WrenchSample rotate_gravity(const WrenchSample& level, const Mat3& r_world_foot) {
  WrenchSample g = level;
  g.force = r_world_foot.transpose() * level.force;
  g.moment = r_world_foot.transpose() * level.moment;
  return g;
}

std::string gravity_error(const char* what, const WrenchSample& g, double mass) {
  if (g.frame != WrenchFrame::FootCom)
    return std::string(what) + " gravity wrench must be tagged foot-com";
  if (mass <= 0.0) return std::string(what) + " foot mass must be positive";
  const double expect = mass * 9.81;
  if (std::abs(g.force.norm() - expect) > 1e-9 * std::max(1.0, expect))
    return std::string(what) + " gravity force magnitude must equal mass * 9.81";
  if (g.moment.norm() > 1e-12)
    return std::string(what) + " gravity wrench must have zero moment about the CoM";
  return "";
}

}  // namespace

std::string FootCalibration::validity_error() const {
  if (std::string e = gravity_error("original", foot_gravity, foot_mass); !e.empty())
    return e;
  if (x_contact_from_fts.src_frame != WrenchFrame::RawFts ||
      x_contact_from_fts.dst_frame != WrenchFrame::ContactPoint)
    return "contact<-fts transform carries wrong frame tags";
  if (x_fts_from_footcom.src_frame != WrenchFrame::FootCom ||
      x_fts_from_footcom.dst_frame != WrenchFrame::RawFts)
    return "fts<-footcom transform carries wrong frame tags";
  if (!has_modified) return "";
  if (std::string e = gravity_error("modified", modified_foot_gravity, modified_foot_mass);
      !e.empty())
    return e;
  if (x_modcontact_from_footcom.src_frame != WrenchFrame::FootCom ||
      x_modcontact_from_footcom.dst_frame != WrenchFrame::ModifiedContactPoint)
    return "modified-contact<-footcom transform carries wrong frame tags";
  if (x_modcontact_from_modfootcom.src_frame != WrenchFrame::FootCom ||
      x_modcontact_from_modfootcom.dst_frame != WrenchFrame::ModifiedContactPoint)
    return "modified-contact<-modified-footcom transform carries wrong frame tags";
  return "";
}

FootCalibration make_foot_calibration(const RobotModel& model, Side side) {
  const FootGeometry& foot = model.foot(side);
  const LinkSpec& link = model.links[foot.link];

  const SpatialTransform x_link_contact = foot_frame_transform(foot, WrenchFrame::ContactPoint);
  const SpatialTransform x_link_fts = foot_frame_transform(foot, WrenchFrame::RawFts);
  const SpatialTransform x_link_com =
      SpatialTransform::from_pose(Mat3::Identity(), link.inertia.com);

  FootCalibration calib;
  calib.x_contact_from_fts = tagged(compose(x_link_contact.inverse(), x_link_fts),
                                    WrenchFrame::RawFts, WrenchFrame::ContactPoint);
  calib.x_fts_from_footcom = tagged(compose(x_link_fts.inverse(), x_link_com),
                                    WrenchFrame::FootCom, WrenchFrame::RawFts);
  calib.foot_gravity =
      WrenchSample{link.inertia.mass * model.gravity, Vec3::Zero(), WrenchFrame::FootCom};
  calib.foot_mass = link.inertia.mass;
  return calib;
}

FootCalibration make_foot_calibration(const RobotModel& original, const RobotModel& variant,
                                      Side side) {
  FootCalibration calib = make_foot_calibration(original, side);

  const FootGeometry& foot_orig = original.foot(side);
  const LinkSpec& link_orig = original.links[foot_orig.link];
  const FootGeometry& foot_new = variant.foot(side);
  const LinkSpec& link_new = variant.links[foot_new.link];

  // The variant's sole contact frame is the post-modification contact c*.
  const SpatialTransform x_link_cstar =
      foot_frame_transform(foot_new, WrenchFrame::ContactPoint);
  const SpatialTransform x_link_com_old =
      SpatialTransform::from_pose(Mat3::Identity(), link_orig.inertia.com);
  const SpatialTransform x_link_com_new =
      SpatialTransform::from_pose(Mat3::Identity(), link_new.inertia.com);

  calib.has_modified = true;
  calib.x_modcontact_from_footcom =
      tagged(compose(x_link_cstar.inverse(), x_link_com_old), WrenchFrame::FootCom,
             WrenchFrame::ModifiedContactPoint);
  calib.x_modcontact_from_modfootcom =
      tagged(compose(x_link_cstar.inverse(), x_link_com_new), WrenchFrame::FootCom,
             WrenchFrame::ModifiedContactPoint);
  calib.modified_foot_gravity =
      WrenchSample{link_new.inertia.mass * variant.gravity, Vec3::Zero(),
                   WrenchFrame::FootCom};
  calib.modified_foot_mass = link_new.inertia.mass;
  return calib;
}

WrenchSample fts_to_contact_wrench(const WrenchSample& raw, const FootCalibration& calib,
                                   const Mat3& r_world_foot) {
  if (raw.frame != WrenchFrame::RawFts)
    throw std::invalid_argument(
        std::string("fts_to_contact_wrench: expected a raw-FTS wrench, got ") +
        wrench_frame_name(raw.frame));
  const WrenchSample gravity = rotate_gravity(calib.foot_gravity, r_world_foot);
  const WrenchSample gravity_at_fts = transform_wrench(calib.x_fts_from_footcom, gravity);
  const WrenchSample net =
      WrenchSample::from_vec(raw.vec() - gravity_at_fts.vec(), WrenchFrame::RawFts);
  return transform_wrench(calib.x_contact_from_fts, net);
}

Vec6 wrench_to_external_torque(const Mat6& j_leg, const WrenchSample& f,
                               WrenchFrame expected_frame) {
  if (f.frame != expected_frame)
    throw std::invalid_argument(
        std::string("wrench_to_external_torque: frame mismatch, wrench is ") +
        wrench_frame_name(f.frame) + " but the Jacobian frame is " +
        wrench_frame_name(expected_frame));
  return j_leg.transpose() * f.vec();
}

Vec6 wrench_to_external_torque(const ContactJacobian& jac, const WrenchSample& f) {
  return wrench_to_external_torque(jac.leg, f, jac.frame);
}

WrenchSample reconstruct_wrench(const Mat6& j_leg, const Vec6& tau_hat, double damping,
                                WrenchFrame frame) {
  if (damping < 0.0)
    throw std::invalid_argument("reconstruct_wrench: damping must be >= 0");
  Vec6 f;
  if (damping == 0.0) {
    // Direct rank-revealing solve of J^T F = tau avoids squaring the
    // condition number, which the normal-equation form below would.
    f = j_leg.transpose().colPivHouseholderQr().solve(tau_hat);
  } else {
    const Mat6 a = j_leg * j_leg.transpose() + damping * damping * Mat6::Identity();
    f = a.ldlt().solve(j_leg * tau_hat);
  }
  return WrenchSample::from_vec(f, frame);
}

WrenchSample reconstruct_wrench(const ContactJacobian& jac, const Vec6& tau_hat,
                                double damping) {
  return reconstruct_wrench(jac.leg, tau_hat, damping, jac.frame);
}

WrenchSample calibrate_modified_foot(const Vec6& tau_hat, const Mat6& j_new,
                                     const FootCalibration& calib,
                                     const Mat3& r_world_foot, double damping) {
  if (!calib.has_modified)
    throw std::invalid_argument(
        "calibrate_modified_foot: calibration has no modified-foot fields");
  const WrenchSample base =
      reconstruct_wrench(j_new, tau_hat, damping, WrenchFrame::ModifiedContactPoint);
  const WrenchSample old_gravity_mapped = transform_wrench(
      calib.x_modcontact_from_footcom, rotate_gravity(calib.foot_gravity, r_world_foot));
  const WrenchSample new_gravity_mapped =
      transform_wrench(calib.x_modcontact_from_modfootcom,
                       rotate_gravity(calib.modified_foot_gravity, r_world_foot));
  return WrenchSample::from_vec(
      base.vec() + old_gravity_mapped.vec() - new_gravity_mapped.vec(),
      WrenchFrame::ModifiedContactPoint);
}

std::optional<Eigen::Vector2d> zmp_from_wrench(const WrenchSample& f, double threshold) {
  if (f.frame != WrenchFrame::ContactPoint && f.frame != WrenchFrame::ModifiedContactPoint)
    throw std::invalid_argument(
        std::string("zmp_from_wrench: expected a sole contact wrench, got ") +
        wrench_frame_name(f.frame));
  const double fz = f.force.z();
  if (fz <= threshold) return std::nullopt;
  return Eigen::Vector2d(-f.moment.y() / fz, f.moment.x() / fz);
}

}  // namespace proprio
