#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

// Spatial (6D) vector algebra for rigid-body kinematics and dynamics.
// Conventions used across the library:
//   * 6-vectors are ordered [linear; angular]: twists are [v; w], wrenches
//     are [f; m]. This matches the force-torque-sensor reading convention
//     used by the wrench pipeline.
//   * A twist of a body is expressed at the origin of the frame it is
//     reported in, in that frame's coordinates.

namespace proprio {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

inline Mat3 skew(const Vec3& v) {
  Mat3 s;
  s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return s;
}

// Motion cross product v x: acting on twists.
Mat6 cross_motion(const Vec6& v);
// Force cross product v x*: acting on wrenches. Satisfies (v x*) = -(v x)^T.
Mat6 cross_force(const Vec6& v);

// Rotation about a unit axis by angle (Rodrigues).
Mat3 axis_angle(const Vec3& axis, double angle);
// Roll-pitch-yaw (XYZ fixed axes): R = Rz(yaw) * Ry(pitch) * Rx(roll).
Mat3 rpy_to_rot(double roll, double pitch, double yaw);
// Matrix log of a rotation, returned as a rotation vector.
Vec3 rotation_log(const Mat3& r);
// Project a nearly-orthonormal matrix back onto SO(3).
Mat3 orthonormalize(const Mat3& r);

// Frame kinds a wrench (or a wrench-bearing transform) can be expressed in.
// Untagged is reserved for raw math transforms that do not take part in the
// tag discipline.
enum class WrenchFrame {
  Untagged,
  RawFts,
  FootCom,
  ContactPoint,
  ModifiedContactPoint,
};

const char* wrench_frame_name(WrenchFrame f);

struct WrenchSample {
  Vec3 force = Vec3::Zero();    // N
  Vec3 moment = Vec3::Zero();   // N*m
  WrenchFrame frame = WrenchFrame::Untagged;

  Vec6 vec() const {
    Vec6 w;
    w << force, moment;
    return w;
  }
  static WrenchSample from_vec(const Vec6& w, WrenchFrame frame) {
    return {w.head<3>(), w.tail<3>(), frame};
  }
};

// Coordinate transform between frames A and B.
//   rot:   3x3 rotation A<-B (maps B-coordinate vectors into A coordinates)
//   trans: r_BA, the position of B's origin relative to A's origin,
//          expressed in B coordinates.
// Applied to a motion vector expressed at B's origin it yields the same
// motion expressed at A's origin: [R(v + r x w); Rw]. Applied to a wrench
// it yields [Rf; R(m + r x f)]: a pure force displaced by r picks up the
// moment r x f, the hand rule the wrench-calibration formulas rely on.
struct SpatialTransform {
  Mat3 rot = Mat3::Identity();
  Vec3 trans = Vec3::Zero();
  // Optional frame tags; only wrench-calibration transforms carry them.
  WrenchFrame src_frame = WrenchFrame::Untagged;
  WrenchFrame dst_frame = WrenchFrame::Untagged;

  static SpatialTransform identity() { return {}; }

  // Build from a pose: R = frame axes in parent coordinates, p = frame
  // origin in parent coordinates. Result maps frame -> parent.
  static SpatialTransform from_pose(const Mat3& r, const Vec3& p) {
    return {r, r.transpose() * p, WrenchFrame::Untagged, WrenchFrame::Untagged};
  }

  // Origin of the source frame expressed in the destination frame.
  Vec3 origin_in_dst() const { return rot * trans; }

  Vec6 apply_motion(const Vec6& m) const {
    Vec6 out;
    const Vec3 v = m.head<3>();
    const Vec3 w = m.tail<3>();
    out.head<3>() = rot * (v + trans.cross(w));
    out.tail<3>() = rot * w;
    return out;
  }

  Vec6 apply_force(const Vec6& f) const {
    Vec6 out;
    const Vec3 fv = f.head<3>();
    const Vec3 m = f.tail<3>();
    out.head<3>() = rot * fv;
    out.tail<3>() = rot * (m + trans.cross(fv));
    return out;
  }

  Mat6 motion_matrix() const;
  Mat6 force_matrix() const;

  SpatialTransform inverse() const {
    return {rot.transpose(), -(rot * trans), dst_frame, src_frame};
  }
};

// compose(X2: A<-B, X1: B<-C) -> A<-C.
SpatialTransform compose(const SpatialTransform& x2, const SpatialTransform& x1);

// Rigid-body spatial inertia about the link frame origin.
struct SpatialInertia {
  double mass = 0.0;                  // kg
  Vec3 com = Vec3::Zero();            // link frame, m
  Mat3 rot_inertia = Mat3::Zero();    // about the CoM, kg*m^2

  // 6x6 inertia at the link origin: [[m 1, -m c^],[m c^, I_c - m c^ c^]].
  Mat6 matrix() const;
  // Validity per the physical invariants (positive mass, symmetric PD
  // rotational inertia, principal-moment triangle inequalities).
  // Returns an empty string when valid, else a diagnostic.
  std::string validity_error() const;
};

// Move a spatial inertia between coordinate frames: given I expressed in B
// and the transform X: A<-B, return the same inertia expressed in A.
Mat6 transform_inertia(const SpatialTransform& x_a_b, const Mat6& inertia_b);

// Re-express a tagged wrench through a tagged transform. The wrench's frame
// must match the transform's source tag (Untagged transforms skip the check
// and preserve the input tag).
WrenchSample transform_wrench(const SpatialTransform& x, const WrenchSample& w);

}  // namespace proprio
