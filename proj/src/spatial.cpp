#include "proprio/spatial.hpp"

#include <cmath>

namespace proprio {

Mat6 cross_motion(const Vec6& v) {
  Mat6 m = Mat6::Zero();
  const Mat3 wx = skew(v.tail<3>());
  m.topLeftCorner<3, 3>() = wx;
  m.topRightCorner<3, 3>() = skew(v.head<3>());
  m.bottomRightCorner<3, 3>() = wx;
  return m;
}

Mat6 cross_force(const Vec6& v) {
  Mat6 m = Mat6::Zero();
  const Mat3 wx = skew(v.tail<3>());
  m.topLeftCorner<3, 3>() = wx;
  m.bottomLeftCorner<3, 3>() = skew(v.head<3>());
  m.bottomRightCorner<3, 3>() = wx;
  return m;
}

Mat3 axis_angle(const Vec3& axis, double angle) {
  const double n = axis.norm();
  if (n < 1e-12) return Mat3::Identity();
  const Vec3 a = axis / n;
  const Mat3 ax = skew(a);
  return Mat3::Identity() + std::sin(angle) * ax +
         (1.0 - std::cos(angle)) * ax * ax;
}

Mat3 rpy_to_rot(double roll, double pitch, double yaw) {
  return axis_angle(Vec3::UnitZ(), yaw) * axis_angle(Vec3::UnitY(), pitch) *
         axis_angle(Vec3::UnitX(), roll);
}

Vec3 rotation_log(const Mat3& r) {
  const double tr = r.trace();
  const double c = std::clamp(0.5 * (tr - 1.0), -1.0, 1.0);
  const double angle = std::acos(c);
  if (angle < 1e-10) {
    // First-order: R ~ I + w^.
    return 0.5 * Vec3(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  }
  if (angle > M_PI - 1e-6) {
    // Near pi the off-diagonal extraction degenerates; use the symmetric part.
    Mat3 s = 0.5 * (r + Mat3::Identity());
    Vec3 axis(std::sqrt(std::max(0.0, s(0, 0))),
              std::sqrt(std::max(0.0, s(1, 1))),
              std::sqrt(std::max(0.0, s(2, 2))));
    // Fix signs from the largest component.
    int k;
    axis.maxCoeff(&k);
    if (axis[k] > 0.0) {
      if (k == 0) {
        axis.y() = std::copysign(axis.y(), r(0, 1));
        axis.z() = std::copysign(axis.z(), r(0, 2));
      } else if (k == 1) {
        axis.x() = std::copysign(axis.x(), r(0, 1));
        axis.z() = std::copysign(axis.z(), r(1, 2));
      } else {
        axis.x() = std::copysign(axis.x(), r(0, 2));
        axis.y() = std::copysign(axis.y(), r(1, 2));
      }
    }
    axis.normalize();
    return angle * axis;
  }
  const double s = 0.5 * angle / std::sin(angle);
  return s * Vec3(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
}

Mat3 orthonormalize(const Mat3& r) {
  Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 out = svd.matrixU() * svd.matrixV().transpose();
  if (out.determinant() < 0.0) {
    Mat3 flip = Mat3::Identity();
    flip(2, 2) = -1.0;
    out = svd.matrixU() * flip * svd.matrixV().transpose();
  }
  return out;
}

const char* wrench_frame_name(WrenchFrame f) {
  switch (f) {
    case WrenchFrame::Untagged: return "untagged";
    case WrenchFrame::RawFts: return "raw-fts";
    case WrenchFrame::FootCom: return "foot-com";
    case WrenchFrame::ContactPoint: return "contact-point";
    case WrenchFrame::ModifiedContactPoint: return "modified-contact-point";
  }
  return "?";
}

Mat6 SpatialTransform::motion_matrix() const {
  Mat6 m = Mat6::Zero();
  m.topLeftCorner<3, 3>() = rot;
  m.topRightCorner<3, 3>() = rot * skew(trans);
  m.bottomRightCorner<3, 3>() = rot;
  return m;
}

Mat6 SpatialTransform::force_matrix() const {
  Mat6 m = Mat6::Zero();
  m.topLeftCorner<3, 3>() = rot;
  m.bottomLeftCorner<3, 3>() = rot * skew(trans);
  m.bottomRightCorner<3, 3>() = rot;
  return m;
}

SpatialTransform compose(const SpatialTransform& x2, const SpatialTransform& x1) {
  SpatialTransform out;
  out.rot = x2.rot * x1.rot;
  out.trans = x1.trans + x1.rot.transpose() * x2.trans;
  out.src_frame = x1.src_frame;
  out.dst_frame = x2.dst_frame;
  return out;
}

Mat6 SpatialInertia::matrix() const {
  Mat6 m = Mat6::Zero();
  const Mat3 cx = skew(com);
  m.topLeftCorner<3, 3>() = mass * Mat3::Identity();
  m.topRightCorner<3, 3>() = -mass * cx;
  m.bottomLeftCorner<3, 3>() = mass * cx;
  m.bottomRightCorner<3, 3>() = rot_inertia - mass * cx * cx;
  return m;
}

std::string SpatialInertia::validity_error() const {
  if (!(mass > 0.0)) return "non-physical inertia: mass must be > 0";
  if ((rot_inertia - rot_inertia.transpose()).norm() > 1e-9 * (1.0 + rot_inertia.norm()))
    return "non-physical inertia: rotational inertia not symmetric";
  Eigen::SelfAdjointEigenSolver<Mat3> es(rot_inertia);
  const Vec3 ev = es.eigenvalues();
  if (ev.minCoeff() <= 0.0)
    return "non-physical inertia: rotational inertia not positive-definite";
  // Principal moments must satisfy the triangle inequalities.
  const double a = ev[0], b = ev[1], c = ev[2];
  if (a + b < c * (1.0 - 1e-9))
    return "non-physical inertia: principal moments violate triangle inequality";
  return {};
}

Mat6 transform_inertia(const SpatialTransform& x_a_b, const Mat6& inertia_b) {
  // I_A = F(X) I_B M(X)^-1 with F the force map and M the motion map.
  const Mat6 minv = x_a_b.inverse().motion_matrix();
  return x_a_b.force_matrix() * inertia_b * minv;
}

WrenchSample transform_wrench(const SpatialTransform& x, const WrenchSample& w) {
  WrenchFrame out_frame = w.frame;
  if (x.src_frame != WrenchFrame::Untagged) {
    if (w.frame != x.src_frame) {
      throw std::invalid_argument(
          std::string("transform_wrench: frame mismatch, wrench is ") +
          wrench_frame_name(w.frame) + " but transform expects " +
          wrench_frame_name(x.src_frame));
    }
    out_frame = x.dst_frame;
  }
  const Vec6 out = x.apply_force(w.vec());
  return WrenchSample::from_vec(out, out_frame);
}

}  // namespace proprio
