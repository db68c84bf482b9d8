#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/SVD>
#include <cmath>

#include "proprio/dynamics.hpp"
#include "proprio/model.hpp"
#include "proprio/rng.hpp"
#include "proprio/wrench.hpp"

using namespace proprio;

namespace {

const RobotModel& humanoid() {
  static RobotModel m = load_model_file(PROPRIO_MODELS_DIR "/tocabi_reduced.model");
  return m;
}

const RobotModel& small_foot_variant() {
  static RobotModel m = load_model_file(PROPRIO_MODELS_DIR "/small_foot.model");
  return m;
}

GeneralizedState bent_knee_stance(const RobotModel& model) {
  GeneralizedState s = GeneralizedState::zero(model);
  s.base_pos.z() = 0.85;
  for (Side side : {Side::Left, Side::Right}) {
    const auto& legj = model.leg_joints[static_cast<int>(side)];
    s.q[legj[2]] = -0.25;  // hip pitch
    s.q[legj[3]] = 0.55;   // knee
    s.q[legj[4]] = -0.30;  // ankle pitch
  }
  return s;
}

WrenchSample random_wrench(Rng& rng, WrenchFrame frame) {
  return WrenchSample{rng.normal_vec3(80.0), rng.normal_vec3(15.0), frame};
}

}  // namespace

TEST_CASE("foot calibrations satisfy their invariants") {
  for (Side side : {Side::Left, Side::Right}) {
    const FootCalibration calib = make_foot_calibration(humanoid(), side);
    CHECK(calib.validity_error() == "");
    CHECK(calib.foot_mass == doctest::Approx(1.614));
    CHECK(calib.foot_gravity.force.norm() == doctest::Approx(1.614 * 9.81));
    CHECK(calib.foot_gravity.moment.norm() == 0.0);
    CHECK_FALSE(calib.has_modified);
    // The sensor is mounted with a deliberate tilt, so the chain of
    // transforms must carry a non-identity rotation.
    CHECK((calib.x_contact_from_fts.rot - Mat3::Identity()).norm() > 1e-3);

    const FootCalibration full =
        make_foot_calibration(humanoid(), small_foot_variant(), side);
    CHECK(full.validity_error() == "");
    CHECK(full.has_modified);
    CHECK(full.modified_foot_mass == doctest::Approx(0.395));
    CHECK(full.modified_foot_gravity.force.norm() == doctest::Approx(0.395 * 9.81));
  }

  SUBCASE("corrupted calibrations are diagnosed") {
    FootCalibration calib = make_foot_calibration(humanoid(), Side::Left);
    calib.foot_gravity.force *= 1.01;
    CHECK(calib.validity_error() != "");
    calib = make_foot_calibration(humanoid(), Side::Left);
    calib.x_fts_from_footcom.src_frame = WrenchFrame::Untagged;
    CHECK(calib.validity_error() != "");
  }
}

TEST_CASE("a level foot's own weight calibrates away to a zero contact wrench") {
  const FootCalibration calib = make_foot_calibration(humanoid(), Side::Left);
  // A raw reading of exactly the foot's gravity load, expressed at the
  // sensor, must produce a null contact wrench.
  const WrenchSample raw =
      transform_wrench(calib.x_fts_from_footcom, calib.foot_gravity);
  const WrenchSample out = fts_to_contact_wrench(raw, calib);
  CHECK(out.frame == WrenchFrame::ContactPoint);
  CHECK(out.vec().norm() < 1e-9);
}

TEST_CASE("identity transforms and a massless foot pass the reading through") {
  FootCalibration calib;
  calib.x_contact_from_fts.src_frame = WrenchFrame::RawFts;
  calib.x_contact_from_fts.dst_frame = WrenchFrame::ContactPoint;
  calib.x_fts_from_footcom.src_frame = WrenchFrame::FootCom;
  calib.x_fts_from_footcom.dst_frame = WrenchFrame::RawFts;
  calib.foot_gravity = WrenchSample{Vec3::Zero(), Vec3::Zero(), WrenchFrame::FootCom};

  Rng rng(3);
  const WrenchSample raw = random_wrench(rng, WrenchFrame::RawFts);
  const WrenchSample out = fts_to_contact_wrench(raw, calib);
  CHECK(out.frame == WrenchFrame::ContactPoint);
  CHECK((out.vec() - raw.vec()).norm() == 0.0);

  const WrenchSample wrong = random_wrench(rng, WrenchFrame::ContactPoint);
  CHECK_THROWS_AS((void)fts_to_contact_wrench(wrong, calib), std::invalid_argument);
}

TEST_CASE("gravity calibration round-trips a synthetic raw reading") {
  Rng rng(17);
  const FootCalibration calib = make_foot_calibration(humanoid(), Side::Right);
  for (int trial = 0; trial < 25; ++trial) {
    const Mat3 r_world_foot = axis_angle(rng.unit_sphere(), rng.uniform(-0.7, 0.7));
    const WrenchSample truth = random_wrench(rng, WrenchFrame::ContactPoint);

    // Invert the calibration formula: what would the sensor read if the
    // contact wrench were `truth` under this foot attitude?
    WrenchSample gravity = calib.foot_gravity;
    gravity.force = r_world_foot.transpose() * gravity.force;
    const WrenchSample raw = WrenchSample::from_vec(
        transform_wrench(calib.x_contact_from_fts.inverse(), truth).vec() +
            transform_wrench(calib.x_fts_from_footcom, gravity).vec(),
        WrenchFrame::RawFts);

    const WrenchSample recovered = fts_to_contact_wrench(raw, calib, r_world_foot);
    CHECK((recovered.vec() - truth.vec()).norm() < 1e-10 * (1.0 + truth.vec().norm()));
  }
}

TEST_CASE("torque mapping is the Jacobian transpose") {
  Rng rng(23);
  const Mat6 j = Mat6::NullaryExpr([&](Eigen::Index, Eigen::Index) {
    return rng.uniform(-1.0, 1.0);
  });

  const WrenchSample zero{Vec3::Zero(), Vec3::Zero(), WrenchFrame::ContactPoint};
  CHECK(wrench_to_external_torque(j, zero).norm() == 0.0);

  const WrenchSample f = random_wrench(rng, WrenchFrame::ContactPoint);
  const Vec6 tau_id = wrench_to_external_torque(Mat6::Identity(), f);
  CHECK((tau_id - f.vec()).norm() == 0.0);
  CHECK((wrench_to_external_torque(j, f) - j.transpose() * f.vec()).norm() == 0.0);

  const WrenchSample mismatched = random_wrench(rng, WrenchFrame::RawFts);
  CHECK_THROWS_AS((void)wrench_to_external_torque(j, mismatched), std::invalid_argument);
}

TEST_CASE("torque mapping agrees with the inverse-dynamics virtual-work path") {
  Rng rng(29);
  RobotModel no_gravity = humanoid();
  no_gravity.gravity.setZero();

  for (int trial = 0; trial < 10; ++trial) {
    GeneralizedState s = bent_knee_stance(no_gravity);
    for (int i = 0; i < no_gravity.n_joints; ++i) s.q[i] += rng.uniform(-0.2, 0.2);
    const WrenchSample f = random_wrench(rng, WrenchFrame::ContactPoint);

    const ContactJacobian jac =
        contact_jacobian(no_gravity, s, Side::Left, WrenchFrame::ContactPoint);
    const VecX tau_all = inverse_dynamics(no_gravity, s, VecX::Zero(no_gravity.nv()),
                                          {{Side::Left, f}});
    // At rest with gravity off, inverse dynamics returns -J^T F.
    const Vec6 via_map = wrench_to_external_torque(jac, f);
    const auto& legj = no_gravity.leg_joints[static_cast<int>(Side::Left)];
    for (int k = 0; k < 6; ++k)
      CHECK(std::abs(-tau_all[no_gravity.vrow(legj[k])] - via_map[k]) < 1e-9);
  }
}

TEST_CASE("wrench reconstruction inverts the torque mapping") {
  Rng rng(31);
  const GeneralizedState s = bent_knee_stance(humanoid());

  SUBCASE("undamped roundtrip at a well-conditioned stance") {
    for (Side side : {Side::Left, Side::Right}) {
      const ContactJacobian jac =
          contact_jacobian(humanoid(), s, side, WrenchFrame::ContactPoint);
      const Eigen::JacobiSVD<Mat6> svd(jac.leg);
      REQUIRE(svd.singularValues().minCoeff() > 1e-6);

      for (int trial = 0; trial < 20; ++trial) {
        const WrenchSample f = random_wrench(rng, jac.frame);
        const Vec6 tau = wrench_to_external_torque(jac, f);
        const WrenchSample back = reconstruct_wrench(jac, tau, 0.0);
        CHECK(back.frame == jac.frame);
        CHECK((back.vec() - f.vec()).norm() < 1e-9 * (1.0 + f.vec().norm()));
      }
    }
  }

  SUBCASE("a null Jacobian with damping yields a null wrench") {
    const WrenchSample out =
        reconstruct_wrench(Mat6::Zero(), Vec6::Constant(5.0), 0.01);
    CHECK(out.vec().norm() == 0.0);
  }

  SUBCASE("damping bounds the gain near a singularity") {
    // Compose a Jacobian with one nearly-dead direction (straight knee).
    const Mat3 r1 = axis_angle(rng.unit_sphere(), rng.uniform(0.0, 3.0));
    const Mat3 r2 = axis_angle(rng.unit_sphere(), rng.uniform(0.0, 3.0));
    Mat6 u = Mat6::Identity(), v = Mat6::Identity();
    u.topLeftCorner<3, 3>() = r1;
    u.bottomRightCorner<3, 3>() = r2;
    v.topLeftCorner<3, 3>() = r2;
    v.bottomRightCorner<3, 3>() = r1;
    Vec6 sigma;
    sigma << 1.4, 1.1, 0.8, 0.5, 0.2, 1e-8;
    const Mat6 j = u * sigma.asDiagonal() * v.transpose();

    const double damping = 1e-3;
    for (int trial = 0; trial < 20; ++trial) {
      const Vec6 tau = Vec6::NullaryExpr([&](Eigen::Index) { return rng.uniform(-50.0, 50.0); });
      const WrenchSample f = reconstruct_wrench(j, tau, damping);
      CHECK(f.vec().allFinite());
      // max singular gain of the damped pseudo-inverse is 1/(2*damping)
      CHECK(f.vec().norm() <= tau.norm() / (2.0 * damping) * (1.0 + 1e-12));
    }
  }

  SUBCASE("negative damping is rejected") {
    CHECK_THROWS_AS((void)reconstruct_wrench(Mat6::Identity(), Vec6::Zero(), -1e-3),
                    std::invalid_argument);
  }
}

TEST_CASE("modified-foot calibration") {
  Rng rng(37);
  const GeneralizedState s = bent_knee_stance(humanoid());

  SUBCASE("an unchanged foot reduces exactly to plain reconstruction") {
    const FootCalibration same = make_foot_calibration(humanoid(), humanoid(), Side::Left);
    REQUIRE(same.validity_error() == "");
    // With identical feet, c* is the original sole frame.
    const ContactJacobian jac =
        contact_jacobian(humanoid(), s, Side::Left, WrenchFrame::ContactPoint);
    const Mat3 r_world_foot = axis_angle(rng.unit_sphere(), 0.4);
    for (int trial = 0; trial < 10; ++trial) {
      const Vec6 tau = Vec6::NullaryExpr([&](Eigen::Index) { return rng.uniform(-60.0, 60.0); });
      const WrenchSample a = calibrate_modified_foot(tau, jac.leg, same, r_world_foot);
      const WrenchSample b =
          reconstruct_wrench(jac.leg, tau, kDefaultWrenchDamping,
                             WrenchFrame::ModifiedContactPoint);
      CHECK((a.vec() - b.vec()).norm() == 0.0);  // gravity terms cancel bitwise
      CHECK(a.frame == WrenchFrame::ModifiedContactPoint);
    }
  }

  SUBCASE("zero torque isolates the gravity-difference wrench") {
    const FootCalibration calib =
        make_foot_calibration(humanoid(), small_foot_variant(), Side::Left);
    const Mat3 r_world_foot = axis_angle(rng.unit_sphere(), 0.3);
    const WrenchSample out = calibrate_modified_foot(
        Vec6::Zero(), Mat6::Identity(), calib, r_world_foot);

    WrenchSample g_old = calib.foot_gravity;
    g_old.force = r_world_foot.transpose() * g_old.force;
    WrenchSample g_new = calib.modified_foot_gravity;
    g_new.force = r_world_foot.transpose() * g_new.force;
    const Vec6 expected =
        transform_wrench(calib.x_modcontact_from_footcom, g_old).vec() -
        transform_wrench(calib.x_modcontact_from_modfootcom, g_new).vec();
    CHECK((out.vec() - expected).norm() < 1e-12);
    // The two feet differ by ~1.2 kg, so the difference is a real load.
    CHECK(out.vec().norm() > 5.0);
  }

  SUBCASE("missing modified fields fail loudly") {
    const FootCalibration base = make_foot_calibration(humanoid(), Side::Left);
    CHECK_THROWS_AS(
        (void)calibrate_modified_foot(Vec6::Zero(), Mat6::Identity(), base),
        std::invalid_argument);
  }
}

TEST_CASE("zero-moment point extraction") {
  SUBCASE("pure vertical load through the origin") {
    const WrenchSample f{Vec3(0, 0, 400.0), Vec3::Zero(), WrenchFrame::ContactPoint};
    const auto zmp = zmp_from_wrench(f);
    REQUIRE(zmp.has_value());
    CHECK(zmp->x() == 0.0);
    CHECK(zmp->y() == 0.0);
  }

  SUBCASE("formula arithmetic") {
    const WrenchSample f{Vec3(0, 0, 500.0), Vec3(10.0, -25.0, 3.0),
                         WrenchFrame::ContactPoint};
    const auto zmp = zmp_from_wrench(f);
    REQUIRE(zmp.has_value());
    CHECK(zmp->x() == doctest::Approx(0.05));
    CHECK(zmp->y() == doctest::Approx(0.02));
  }

  SUBCASE("unloaded feet report no ZMP") {
    const WrenchSample light{Vec3(0, 0, 29.0), Vec3::Zero(), WrenchFrame::ContactPoint};
    CHECK_FALSE(zmp_from_wrench(light).has_value());
    const WrenchSample lifting{Vec3(0, 0, -50.0), Vec3::Zero(), WrenchFrame::ContactPoint};
    CHECK_FALSE(zmp_from_wrench(lifting).has_value());
    CHECK(zmp_from_wrench(light, 10.0).has_value());
  }

  SUBCASE("non-sole frames are rejected") {
    const WrenchSample f{Vec3(0, 0, 400.0), Vec3::Zero(), WrenchFrame::RawFts};
    CHECK_THROWS_AS((void)zmp_from_wrench(f), std::invalid_argument);
  }

  SUBCASE("the ZMP of summed corner forces is their pressure centroid") {
    Rng rng(41);
    const FootGeometry& foot = humanoid().foot(Side::Left);
    const double hx = foot.sole_half_x;
    const double hy = foot.sole_half_y;
    for (int trial = 0; trial < 30; ++trial) {
      double fz_sum = 0.0, mx = 0.0, my = 0.0;
      double cx = 0.0, cy = 0.0;
      Vec3 tangential_moment = Vec3::Zero();
      for (int corner = 0; corner < 4; ++corner) {
        const double x = (corner & 1) ? hx : -hx;
        const double y = (corner & 2) ? hy : -hy;
        const double fn = rng.uniform(20.0, 300.0);
        const Vec3 ft(rng.uniform(-30.0, 30.0), rng.uniform(-30.0, 30.0), 0.0);
        fz_sum += fn;
        cx += x * fn;
        cy += y * fn;
        mx += y * fn;
        my += -x * fn;
        tangential_moment += Vec3(x, y, 0.0).cross(ft);
      }
      // In-plane tangential forces at sole height add only a yaw moment.
      CHECK(std::abs(tangential_moment.x()) < 1e-12);
      CHECK(std::abs(tangential_moment.y()) < 1e-12);

      const WrenchSample f{Vec3(0, 0, fz_sum), Vec3(mx, my, tangential_moment.z()),
                           WrenchFrame::ContactPoint};
      const auto zmp = zmp_from_wrench(f);
      REQUIRE(zmp.has_value());
      CHECK(zmp->x() == doctest::Approx(cx / fz_sum).epsilon(1e-12));
      CHECK(zmp->y() == doctest::Approx(cy / fz_sum).epsilon(1e-12));
      CHECK(std::abs(zmp->x()) <= hx + 1e-12);
      CHECK(std::abs(zmp->y()) <= hy + 1e-12);
    }
  }
}
