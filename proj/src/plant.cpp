#include "proprio/plant.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "proprio/wrench.hpp"

namespace proprio {

namespace {

// Noise stream ids so each leg's dataset draws an independent sequence from
// the episode seed.
constexpr std::uint64_t kNoiseStreamLeft = 1;
constexpr std::uint64_t kNoiseStreamRight = 2;

// Rotation-matrix logarithm; robust near zero and pi.
Vec3 so3_log(const Mat3& r) {
  const double c = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
  const double angle = std::acos(c);
  Vec3 w(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  if (angle < 1e-9) return 0.5 * w;
  if (angle > M_PI - 1e-6) {
    // Axis from the dominant diagonal of (R + I)/2, signs from off-diagonals.
    const Mat3 a = 0.5 * (r + Mat3::Identity());
    int k = 0;
    a.diagonal().maxCoeff(&k);
    Vec3 axis;
    axis[k] = std::sqrt(std::max(0.0, a(k, k)));
    axis[(k + 1) % 3] = a(k, (k + 1) % 3) / axis[k];
    axis[(k + 2) % 3] = a(k, (k + 2) % 3) / axis[k];
    axis.normalize();
    // Disambiguate the axis sign with the skew part (vanishes exactly at pi).
    if (w.dot(axis) < 0.0) axis = -axis;
    return axis * angle;
  }
  return w * (angle / (2.0 * std::sin(angle)));
}

const std::array<Vec3, 4> sole_corners(const FootGeometry& foot) {
  const double hx = foot.sole_half_x, hy = foot.sole_half_y;
  return {Vec3(hx, hy, 0), Vec3(hx, -hy, 0), Vec3(-hx, hy, 0), Vec3(-hx, -hy, 0)};
}

struct CornerEval {
  double delta = 0.0;     // penetration, m
  double fn_stiff = 0.0;  // elastic part k*delta, N
  double d_tan = 0.0;     // effective tangential damping coefficient, N*s/m
  bool loaded = false;    // penetrating with positive total normal force
  Vec3 f_world = Vec3::Zero();
};

// Kelvin-Voigt corner law: normal max(0, k*delta - d*vz), tangential viscous
// clamped to the friction cone. The clamp is folded into an effective
// velocity coefficient min(k_t, mu*f_n/|v|) so the force law stays
// continuous and can be integrated implicitly; a hard force cap applied
// explicitly chatters at the stick boundary.
CornerEval eval_corner(const Vec3& p_world, const Vec3& v_world, const GroundModel& g) {
  CornerEval e;
  e.delta = g.height - p_world.z();
  if (e.delta <= 0.0) return e;
  e.fn_stiff = g.stiffness * e.delta;
  const double fn = e.fn_stiff - g.damping * v_world.z();
  if (fn <= 0.0) return e;
  e.loaded = true;
  const double vt = v_world.head<2>().norm();
  e.d_tan = g.tangent_damping;
  if (e.d_tan * vt > g.friction_mu * fn)
    e.d_tan = g.friction_mu * fn / vt;  // vt > 0 whenever this branch runs
  e.f_world = Vec3(-e.d_tan * v_world.x(), -e.d_tan * v_world.y(), fn);
  return e;
}

}  // namespace

std::string SensorNoise::validity_error() const {
  const auto bad = [](double v) { return !(v >= 0.0) || !std::isfinite(v); };
  if (bad(encoder_quant)) return "encoder_quant must be finite and >= 0";
  if (bad(qdot_noise_std)) return "qdot_noise_std must be finite and >= 0";
  if (bad(gyro_noise_std)) return "gyro_noise_std must be finite and >= 0";
  if (bad(gyro_bias_walk)) return "gyro_bias_walk must be finite and >= 0";
  if (bad(accel_noise_std)) return "accel_noise_std must be finite and >= 0";
  if (bad(accel_bias_walk)) return "accel_bias_walk must be finite and >= 0";
  if (bad(fts_force_std)) return "fts_force_std must be finite and >= 0";
  if (bad(fts_moment_std)) return "fts_moment_std must be finite and >= 0";
  return "";
}

std::string Dataset::validity_error() const {
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].episode != rows[i - 1].episode) continue;
    const auto gap = rows[i].tick - rows[i - 1].tick;
    if (rows[i].tick <= rows[i - 1].tick)
      return "ticks not strictly increasing in episode " + std::to_string(rows[i].episode);
    // All rows of an episode must sit on the same uniform 100 Hz grid.
    const auto first_gap = rows[1].tick - rows[0].tick;
    if (i >= 1 && gap != first_gap)
      return "uneven tick spacing in episode " + std::to_string(rows[i].episode);
  }
  return "";
}

VecX control_torque(const RobotModel& model, const GeneralizedState& state,
                    const VecX& q_desired, const PdGains& gains,
                    const VecX& qdot_desired) {
  if (q_desired.size() != model.n_joints)
    throw std::invalid_argument("control_torque: q_desired has wrong size");
  if (qdot_desired.size() != 0 && qdot_desired.size() != model.n_joints)
    throw std::invalid_argument("control_torque: qdot_desired has wrong size");
  const bool track_vel = qdot_desired.size() == model.n_joints;
  const VecX g = gravity_vector(model, state);
  VecX tau(model.n_joints);
  for (int j = 0; j < model.n_joints; ++j) tau[j] = g[model.vrow(j)];
  for (Side side : {Side::Left, Side::Right}) {
    const auto& legj = model.leg_joints[static_cast<int>(side)];
    for (std::size_t ji = 0; ji < legj.size() && ji < 6; ++ji) {
      const int j = legj[ji];
      const double vd = track_vel ? qdot_desired[j] : 0.0;
      tau[j] += gains.kp[static_cast<int>(ji)] * (q_desired[j] - state.q[j]) +
                gains.kd[static_cast<int>(ji)] * (vd - state.qdot[j]);
    }
  }
  return tau;
}

WrenchSample ground_contact_wrench(const SpatialTransform& x_world_contact,
                                   const Vec6& v_contact, const FootGeometry& foot,
                                   const GroundModel& ground) {
  const Mat3& r = x_world_contact.rot;  // contact axes in world coordinates
  const Vec3 p0 = x_world_contact.origin_in_dst();
  Vec3 force = Vec3::Zero(), moment = Vec3::Zero();
  for (const Vec3& c : sole_corners(foot)) {
    const Vec3 p_w = p0 + r * c;
    const Vec3 v_w = r * (v_contact.head<3>() + v_contact.tail<3>().cross(c));
    const CornerEval e = eval_corner(p_w, v_w, ground);
    if (!e.loaded) continue;
    const Vec3 f_c = r.transpose() * e.f_world;
    force += f_c;
    moment += c.cross(f_c);
  }
  WrenchSample w;
  w.force = force;
  w.moment = moment;
  w.frame = WrenchFrame::ContactPoint;
  return w;
}

IkResult solve_leg_ik(const RobotModel& model, Side side, const Mat3& r_world_pelvis,
                      const Vec3& p_world_pelvis, const Mat3& r_world_foot,
                      const Vec3& p_world_foot, const Vec6& q_guess) {
  const auto& legj = model.leg_joints[static_cast<int>(side)];
  if (legj.size() != 6)
    throw std::invalid_argument("solve_leg_ik: model leg is not 6-DoF");

  GeneralizedState s = GeneralizedState::zero(model);
  s.base_rot = r_world_pelvis;
  s.base_pos = p_world_pelvis;
  for (int i = 0; i < 6; ++i) s.q[legj[i]] = q_guess[i];

  constexpr double kLambdaSq = 1e-3 * 1e-3;  // DLS damping, squared
  constexpr double kTol = 1e-9;
  constexpr int kMaxIters = 50;

  IkResult out;
  out.q = q_guess;
  for (int iter = 0;; ++iter) {
    const ContactJacobian jac =
        contact_jacobian(model, s, side, WrenchFrame::ContactPoint);
    const Mat3& r_wc = jac.x_world_frame.rot;
    Vec6 e;
    e.head<3>() = r_wc.transpose() * (p_world_foot - jac.x_world_frame.origin_in_dst());
    e.tail<3>() = so3_log(r_wc.transpose() * r_world_foot);
    out.residual = e.norm();
    out.iterations = iter;
    for (int i = 0; i < 6; ++i) out.q[i] = s.q[legj[i]];
    if (out.residual < kTol) {
      out.converged = true;
      break;
    }
    if (iter == kMaxIters) break;
    const Mat6 jtj =
        jac.leg.transpose() * jac.leg + kLambdaSq * Mat6::Identity();
    const Vec6 dq = jtj.ldlt().solve(jac.leg.transpose() * e);
    for (int i = 0; i < 6; ++i) s.q[legj[i]] += dq[i];
  }
  return out;
}

namespace {

// Planned per-foot weight fractions: the plan ZMP projected onto the segment
// between the two stance soles. A swinging foot carries nothing.
// Planar rigid offset applied to every world reference: actual = R(yaw) *
// plan + t. The viscous feet both slide and twist a little every step, so
// the plan is continuously re-expressed relative to where the support sole
// actually is instead of straining the legs against accumulated drift.
struct PlanAnchor {
  double yaw = 0.0;
  Eigen::Vector2d t = Eigen::Vector2d::Zero();
  Eigen::Vector2d apply(const Eigen::Vector2d& p) const {
    return Eigen::Rotation2Dd(yaw) * p + t;
  }
};

std::array<double, 2> planned_load_share(const PlanSample& ps) {
  const bool l = ps.foot[0].in_stance, r = ps.foot[1].in_stance;
  if (l != r) return {l ? 1.0 : 0.0, r ? 1.0 : 0.0};
  const Eigen::Vector2d pl = ps.foot[0].pos.head<2>();
  const Eigen::Vector2d d = ps.foot[1].pos.head<2>() - pl;
  const double dd = d.squaredNorm();
  const double s =
      dd < 1e-12 ? 0.5 : std::clamp((ps.zmp - pl).dot(d) / dd, 0.0, 1.0);
  return {1.0 - s, s};
}

// Refines the pelvis xy target and leg IK so the multibody CoM, not the
// pelvis point, tracks the plan's LIPM CoM reference. With legs carrying a
// third of the robot's mass, tracking the reference with the pelvis alone
// leaves centimetre-scale CoM error during swing, which the lateral
// divergent mode amplifies into a fall within a few steps. Foot targets are
// lowered by the penetration the planned load share will produce, so the
// pelvis does not tip into the loading foot during weight transfer. The
// share is read ahead of the current tick because the realized transfer lags
// the commanded geometry by the PD tracking lag; without the lead the swing
// foot lifts while still loaded and the release kicks the pelvis sideways.
// Returns the worst leg IK residual of the final refinement pass.
double com_consistent_targets(const RobotModel& model, const GaitPlan& plan,
                              const PlanSample& ps, std::size_t i,
                              const Eigen::Vector2d& com_target,
                              double yaw_target, const PlanAnchor& anchor,
                              double sink_unit, std::size_t lead_ticks,
                              GeneralizedState& scratch, Vec3& pelvis_pos,
                              std::array<Vec6, 2>& qd_leg) {
  const Mat3 pelvis_rot = axis_angle(Vec3::UnitZ(), yaw_target);
  pelvis_pos.z() = plan.pelvis_height;
  const std::size_t i_share = std::min(i + lead_ticks, plan.samples.size() - 1);
  const std::array<double, 2> share = planned_load_share(plan.samples[i_share]);
  double worst = 0.0;
  for (int outer = 0; outer < 4; ++outer) {
    worst = 0.0;
    for (Side side : {Side::Left, Side::Right}) {
      const int si = static_cast<int>(side);
      const FootTarget& ft = ps.foot[si];
      Vec3 target = ft.pos - Vec3(0, 0, share[si] * sink_unit);
      target.head<2>() = anchor.apply(target.head<2>());
      const IkResult ik = solve_leg_ik(
          model, side, pelvis_rot, pelvis_pos,
          axis_angle(Vec3::UnitZ(), ft.yaw + anchor.yaw), target, qd_leg[si]);
      qd_leg[si] = ik.q;
      worst = std::max(worst, ik.residual);
      for (int k = 0; k < 6; ++k) scratch.q[model.leg_joints[si][k]] = ik.q[k];
    }
    scratch.base_pos = pelvis_pos;
    scratch.base_rot = pelvis_rot;
    const Vec3 com = com_position(model, forward_kinematics(model, scratch));
    const Eigen::Vector2d err = com_target - com.head<2>();
    pelvis_pos.head<2>() += err;
    if (err.norm() < 5e-5) break;
  }
  return worst;
}

}  // namespace

EpisodeLog simulate_episode(const RobotModel& model, const GaitParams& gait,
                            std::uint64_t seed, const SimOptions& options) {
  if (!model.has_foot(Side::Left) || !model.has_foot(Side::Right))
    throw std::invalid_argument("simulate_episode: model needs both feet");
  const GaitPlan plan = plan_trajectories(gait, model, options.plan);
  const double dt = plan.dt;
  const int nv = model.nv();
  const int nj = model.n_joints;

  EpisodeLog log;
  log.dt = dt;
  log.model_id = model.id;
  log.seed = seed;
  log.gait = gait;

  // Initial pose: CoM-consistent pelvis over the first plan sample. The
  // target refinement already sinks the soles by the static-balance
  // penetration, so standing starts near force equilibrium.
  const double sink_unit =
      model.total_mass * 9.81 / (4.0 * options.ground.stiffness);
  GeneralizedState scratch = GeneralizedState::zero(model);
  std::array<Vec6, 2> qd_leg;  // per-leg IK warm starts
  qd_leg[0] << 0, 0, -0.45, 0.9, -0.45, 0;  // mild crouch
  qd_leg[1] = qd_leg[0];
  Vec3 pelvis_pos = plan.pelvis_pos(0);
  const std::size_t lead_ticks = static_cast<std::size_t>(
      std::lround(std::max(0.0, options.transfer_lead) / dt));
  const double init_residual = com_consistent_targets(
      model, plan, plan.samples[0], 0, plan.samples[0].com,
      plan.samples[0].pelvis_yaw, PlanAnchor{}, sink_unit, lead_ticks, scratch,
      pelvis_pos, qd_leg);
  if (init_residual > 1e-8)
    throw std::runtime_error("simulate_episode: initial leg IK failed (residual " +
                             std::to_string(init_residual) + ")");

  GeneralizedState state = GeneralizedState::zero(model);
  state.base_pos = pelvis_pos;
  state.base_rot = plan.pelvis_rot(0);
  for (Side side : {Side::Left, Side::Right}) {
    const int si = static_cast<int>(side);
    for (int i = 0; i < 6; ++i)
      state.q[model.leg_joints[si][i]] = qd_leg[si][i];
  }

  struct CornerRecord {
    int side;
    Vec3 c;                                      // contact-frame offset
    Eigen::Matrix<double, 3, Eigen::Dynamic> j;  // world-coords point jacobian
    CornerEval eval;
  };
  std::vector<CornerRecord> records;
  records.reserve(8);

  const std::array<SpatialTransform, 2> x_link_contact = {
      foot_frame_transform(model.foot(Side::Left), WrenchFrame::ContactPoint),
      foot_frame_transform(model.foot(Side::Right), WrenchFrame::ContactPoint)};
  const std::array<SpatialTransform, 2> x_fts_link = {
      foot_frame_transform(model.foot(Side::Left), WrenchFrame::RawFts).inverse(),
      foot_frame_transform(model.foot(Side::Right), WrenchFrame::RawFts).inverse()};

  const std::size_t n_ticks = plan.samples.size();
  log.ticks.reserve(n_ticks);
  MatX damping = MatX::Zero(nv, nv);
  VecX q_d_prev = VecX::Zero(nj);
  bool fell = false;

  Eigen::Vector2d com_prev = Eigen::Vector2d::Zero();
  Eigen::Vector2d trim = Eigen::Vector2d::Zero();
  double trim_yaw = 0.0;
  PlanAnchor anchor;

  for (std::size_t i = 0; i < n_ticks; ++i) {
    const double t = static_cast<double>(i) * dt;
    const PlanSample& ps = plan.samples[i];

    const KinCache cache = forward_kinematics(model, state);
    const VecX u = state.velocity(model);

    // CoM servo: the IK target CoM is the plan CoM plus a low-passed trim of
    // the measured position and velocity error. This is the one task-space
    // loop the reference generator closes; without it the laterally
    // divergent pendulum mode is open loop and no joint-PD gain setting
    // survives more than a few steps on the compliant contact. The filter
    // keeps the loop slow against the joint servos, which would otherwise
    // overshoot the trim into a sign-flipping discrete oscillation.
    // Plan re-anchoring: the support sole creeps and twists a little every
    // step on the viscous tangential contact, so the reference frame follows
    // the measured sole pose (load-share weighted during transfer) through a
    // slow first-order lag. Every world target below is re-expressed through
    // the anchor transform; the plan then describes motion relative to where
    // the feet actually are instead of straining the legs against
    // accumulated slip until the geometry becomes unworkable.
    const std::array<double, 2> share_now = planned_load_share(ps);
    if (share_now[0] + share_now[1] > 0.5) {
      double drift_yaw = 0.0;
      Eigen::Vector2d drift_t = Eigen::Vector2d::Zero();
      for (int si = 0; si < 2; ++si) {
        if (share_now[si] <= 0.0) continue;
        const SpatialTransform x_w_sole = compose(
            cache.x_world_link[model.foot(static_cast<Side>(si)).link],
            x_link_contact[si]);
        const double yaw_m =
            std::atan2(x_w_sole.rot(1, 0), x_w_sole.rot(0, 0));
        const double dyaw =
            std::remainder(yaw_m - ps.foot[si].yaw, 2.0 * M_PI);
        const Eigen::Vector2d t_si =
            x_w_sole.origin_in_dst().head<2>() -
            Eigen::Rotation2Dd(dyaw) * ps.foot[si].pos.head<2>();
        drift_yaw += share_now[si] * dyaw;
        drift_t += share_now[si] * t_si;
      }
      const double a = dt / std::max(options.anchor_filter, dt);
      anchor.yaw += a * std::remainder(drift_yaw - anchor.yaw, 2.0 * M_PI);
      anchor.t += a * (drift_t - anchor.t);
    }
    const Eigen::Rotation2Dd anchor_rot(anchor.yaw);

    const Eigen::Vector2d com_meas = com_position(model, cache).head<2>();
    const Eigen::Vector2d com_ref = anchor.apply(ps.com);
    if (i > 0) {
      const Eigen::Vector2d vel_meas = (com_meas - com_prev) / dt;
      const Eigen::Vector2d vel_ref =
          anchor_rot * ((ps.com - plan.samples[i - 1].com) / dt);
      const Eigen::Vector2d trim_want = options.com_kp * (com_ref - com_meas) +
                                        options.com_kv * (vel_ref - vel_meas);
      trim += (dt / std::max(options.com_trim_filter, dt)) * (trim_want - trim);
      trim.x() = std::clamp(trim.x(), -options.com_trim_max_x,
                            options.com_trim_max_x);
      trim.y() = std::clamp(trim.y(), -options.com_trim_max_y,
                            options.com_trim_max_y);
    }
    com_prev = com_meas;
    const Eigen::Vector2d com_target = com_ref + trim;

    // Yaw leg of the reference servo (the trim state is low-passed the same
    // way): the stance-leg hip-yaw PD untwists the body against the
    // viscously anchored sole.
    const double yaw_ref = ps.pelvis_yaw + anchor.yaw;
    const double yaw_meas =
        std::atan2(state.base_rot(1, 0), state.base_rot(0, 0));
    const double yaw_err = std::remainder(yaw_ref - yaw_meas, 2.0 * M_PI);
    trim_yaw += (dt / std::max(options.com_trim_filter, dt)) *
                (options.yaw_kp * yaw_err - trim_yaw);
    trim_yaw = std::clamp(trim_yaw, -options.yaw_trim_max, options.yaw_trim_max);
    const double yaw_target = yaw_ref + trim_yaw;

    // Desired joints: CoM-consistent pelvis + leg IK on the plan's targets
    // (warm-started so each solve is 1-2 iterations). The target velocity is
    // the finite difference of consecutive IK solutions; damping against
    // zero instead would drag the legs behind the reference.
    com_consistent_targets(model, plan, ps, i, com_target, yaw_target, anchor,
                           sink_unit, lead_ticks, scratch, pelvis_pos, qd_leg);
    VecX q_d(nj);
    for (Side side : {Side::Left, Side::Right}) {
      const int si = static_cast<int>(side);
      for (int k = 0; k < 6; ++k) q_d[model.leg_joints[si][k]] = qd_leg[si][k];
    }
    const VecX qdot_d = i == 0 ? VecX::Zero(nj).eval() : ((q_d - q_d_prev) / dt).eval();
    q_d_prev = q_d;

    const VecX tau_d = control_torque(model, state, q_d, options.gains, qdot_d);
    const VecX tau_applied =
        tau_d.cwiseMax(-options.torque_limit).cwiseMin(options.torque_limit);

    // Contact forces at the current state, corner by corner. The elastic part
    // goes in the right-hand side; the viscous part is assembled into a
    // velocity-coefficient matrix and treated implicitly, because the pinned
    // damping constants exceed the explicit 2 kHz stability limit for the
    // light foot (dt*d_eff/I_ankle ~ 5).
    records.clear();
    damping.setZero();
    VecX g_contact = VecX::Zero(nv);
    std::array<ContactJacobian, 2> jacs;
    for (Side side : {Side::Left, Side::Right}) {
      const int si = static_cast<int>(side);
      jacs[si] = contact_jacobian(model, state, side, WrenchFrame::ContactPoint);
      const Mat3& r = jacs[si].x_world_frame.rot;
      const Vec3 p0 = jacs[si].x_world_frame.origin_in_dst();
      const auto jl = jacs[si].full.topRows<3>();
      const auto ja = jacs[si].full.bottomRows<3>();
      const Vec6 v6 = jacs[si].full * u;
      for (const Vec3& c : sole_corners(model.foot(side))) {
        const Vec3 p_w = p0 + r * c;
        const Vec3 v_w = r * (v6.head<3>() + v6.tail<3>().cross(c));
        const CornerEval e = eval_corner(p_w, v_w, options.ground);
        if (!e.loaded) continue;
        CornerRecord rec;
        rec.side = si;
        rec.c = c;
        rec.j = r * (jl - skew(c) * ja);
        rec.eval = e;
        g_contact.noalias() += rec.j.transpose() * e.f_world;
        damping.noalias() += rec.j.row(0).transpose() * (e.d_tan * rec.j.row(0));
        damping.noalias() += rec.j.row(1).transpose() * (e.d_tan * rec.j.row(1));
        damping.noalias() +=
            rec.j.row(2).transpose() * (options.ground.damping * rec.j.row(2));
        records.push_back(std::move(rec));
      }
    }

    // Joint-side velocity coefficients go in the same implicit matrix. The
    // servo damping on a light swing foot (dt*kd/I > 2 for the small-foot
    // variant's ankles) and the smoothed-Coulomb slope near zero crossing
    // (coulomb/smoothing_vel ~ 60 N*m*s/rad) both exceed the explicit
    // stability bound; handled explicitly they limit-cycle the swing ankles.
    VecX kd_of_joint = VecX::Zero(nj);
    VecX fric_slope = VecX::Zero(nj);
    for (int si = 0; si < 2; ++si)
      for (int k = 0; k < 6; ++k) {
        const int j = model.leg_joints[si][k];
        const double sv = model.friction.smoothing_vel;
        const double th = std::tanh(state.qdot[j] / sv);
        kd_of_joint[j] = options.gains.kd[k];
        fric_slope[j] = model.friction.viscous[j] +
                        model.friction.coulomb[j] * (1.0 - th * th) / sv;
        damping(model.vrow(j), model.vrow(j)) += kd_of_joint[j] + fric_slope[j];
      }

    // Scheduled pushes. Swing-foot pushes act at the sole center; during
    // double support (no swing foot) they fall back to the pelvis.
    VecX g_push = VecX::Zero(nv);
    std::array<Vec6, 2> push_at_link = {Vec6::Zero(), Vec6::Zero()};
    for (const PushEvent& push : gait.push_schedule) {
      if (t < push.time || t >= push.time + push.duration) continue;
      if (push.body == PushEvent::Body::Pelvis || ps.double_support) {
        g_push.head<3>() += state.base_rot.transpose() * push.force;
      } else {
        const int si = static_cast<int>(ps.swing_side);
        Vec6 w = Vec6::Zero();
        w.head<3>() = jacs[si].x_world_frame.rot.transpose() * push.force;
        g_push.noalias() += jacs[si].full.transpose() * w;
        push_at_link[si] += x_link_contact[si].apply_force(w);
      }
    }

    // Forward dynamics: M udot = tau + friction + contact + push - (Cu + g),
    // with the contact damping moved to the left-hand side.
    const VecX bias = inverse_dynamics(model, state, VecX::Zero(nv));
    VecX rhs = g_contact + g_push - bias;
    const VecX tau_f = friction_torque(model.friction, state.qdot);
    for (int j = 0; j < nj; ++j) rhs[model.vrow(j)] += tau_applied[j] + tau_f[j];
    const MatX lhs = mass_matrix(model, state) + dt * damping;
    const VecX udot = lhs.ldlt().solve(rhs);
    if (!udot.allFinite())
      throw std::runtime_error("simulate_episode: non-finite acceleration at t=" +
                               std::to_string(t) + " s");
    const VecX u_next = u + dt * udot;

    // Realized joint torques: the implicit step applied the velocity-coupled
    // terms at the new velocity, so the logged actuator and friction channels
    // are corrected by their coefficients times the velocity change.
    VecX tau_real = tau_applied;
    VecX tau_f_real = tau_f;
    for (int j = 0; j < nj; ++j) {
      const double du = u_next[model.vrow(j)] - u[model.vrow(j)];
      tau_real[j] -= kd_of_joint[j] * du;
      tau_f_real[j] -= fric_slope[j] * du;
    }

    // Effective contact wrenches: viscous terms re-evaluated at the new
    // velocity, exactly what the implicit step applied, so the logged truth
    // satisfies the discrete equation of motion to rounding.
    std::array<WrenchSample, 2> contact;
    for (int si = 0; si < 2; ++si) {
      contact[si].force.setZero();
      contact[si].moment.setZero();
      contact[si].frame = WrenchFrame::ContactPoint;
    }
    for (const CornerRecord& rec : records) {
      const Vec3 v_new = rec.j * u_next;
      Vec3 f_w;
      f_w.head<2>() = -rec.eval.d_tan * v_new.head<2>();
      f_w.z() = rec.eval.fn_stiff - options.ground.damping * v_new.z();
      const Mat3& r = jacs[rec.side].x_world_frame.rot;
      const Vec3 f_c = r.transpose() * f_w;
      contact[rec.side].force += f_c;
      contact[rec.side].moment += rec.c.cross(f_c);
    }

    // Raw FTS synthesis from the foot link's Newton-Euler balance: the sensor
    // sees contact + foot gravity + any foot push minus the foot's inertial
    // wrench (a real sensor measures the ankle reaction, not just statics).
    const std::vector<Vec6> a_links = acceleration_pass(model, cache, state, udot);
    EpisodeTick tick;
    for (Side side : {Side::Left, Side::Right}) {
      const int si = static_cast<int>(side);
      const FootGeometry& foot = model.foot(side);
      const Mat6 inertia = model.links[foot.link].inertia.matrix();
      const Vec6& v_b = cache.v_body[foot.link];
      const Vec6 total = inertia * a_links[foot.link] +
                         cross_force(v_b) * (inertia * v_b);
      const Mat3& r_wl = cache.x_world_link[foot.link].rot;
      Vec6 gravity_w;
      gravity_w.head<3>() =
          r_wl.transpose() * (model.links[foot.link].inertia.mass * model.gravity);
      gravity_w.tail<3>() =
          model.links[foot.link].inertia.com.cross(Vec3(gravity_w.head<3>()));
      const Vec6 f_c_link = x_link_contact[si].apply_force(contact[si].vec());
      const Vec6 raw_link = gravity_w + f_c_link + push_at_link[si] - total;
      tick.raw_fts[si] =
          WrenchSample::from_vec(x_fts_link[si].apply_force(raw_link), WrenchFrame::RawFts);
    }

    tick.state = state;
    tick.udot = udot;
    tick.tau_d = tau_d;
    tick.tau_applied = tau_real;
    tick.tau_friction = tau_f_real;
    tick.contact = contact;
    tick.imu_gyro = state.base_ang_vel;
    tick.imu_accel = udot.head<3>() + state.base_ang_vel.cross(state.base_lin_vel) -
                     state.base_rot.transpose() * model.gravity;
    log.ticks.push_back(std::move(tick));

    state = integrate_state(model, state, u_next, dt);
    if (!state.base_pos.allFinite() || !state.base_rot.allFinite() ||
        !state.q.allFinite() || !state.qdot.allFinite() ||
        !state.base_lin_vel.allFinite() || !state.base_ang_vel.allFinite())
      throw std::runtime_error("simulate_episode: non-finite state at t=" +
                               std::to_string(t + dt) + " s");
    if (state.base_pos.z() < options.fall_height) {
      log.valid = false;
      log.failure_time = t + dt;
      fell = true;
      break;
    }
  }
  if (!fell) log.valid = true;
  return log;
}

std::vector<DatasetRow> sample_sensors(const RobotModel& model, const EpisodeLog& log,
                                       const SensorNoise& noise, Side leg) {
  if (!log.valid)
    throw std::invalid_argument("sample_sensors: episode log is not valid");
  if (const std::string err = noise.validity_error(); !err.empty())
    throw std::invalid_argument("sample_sensors: " + err);
  const auto& legj = model.leg_joints[static_cast<int>(leg)];
  if (legj.size() != 6)
    throw std::invalid_argument("sample_sensors: model leg is not 6-DoF");

  // 2 kHz log -> 100 Hz rows.
  const int nsub = static_cast<int>(std::lround(0.01 / log.dt));
  if (nsub < 2 || std::abs(nsub * log.dt - 0.01) > 1e-12)
    throw std::invalid_argument("sample_sensors: log rate incompatible with 100 Hz");

  Rng rng(derive_seed(log.seed,
                      leg == Side::Left ? kNoiseStreamLeft : kNoiseStreamRight));
  const FootCalibration calib = make_foot_calibration(model, leg);
  const Mat3 r_link_contact =
      foot_frame_transform(model.foot(leg), WrenchFrame::ContactPoint).rot;

  const auto quantize = [&](double q) {
    return noise.encoder_quant > 0.0
               ? std::round(q / noise.encoder_quant) * noise.encoder_quant
               : q;
  };
  const auto leg_rows = [&](const VecX& v) {
    Vec6 out;
    for (int k = 0; k < 6; ++k) out[k] = v[legj[k]];
    return out;
  };

  std::vector<DatasetRow> rows;
  if (log.ticks.size() <= static_cast<std::size_t>(nsub)) return rows;
  rows.reserve(log.ticks.size() / nsub);

  Vec3 gyro_bias = Vec3::Zero(), accel_bias = Vec3::Zero();
  Vec6 q_prev = Vec6::Zero();
  bool first = true;
  const double sqrt_dt = std::sqrt(0.01);  // bias random-walk step scaling

  for (std::size_t tau = nsub; tau < log.ticks.size();
       tau += static_cast<std::size_t>(nsub)) {
    const EpisodeTick& t0 = log.ticks[tau - 1];
    const EpisodeTick& t1 = log.ticks[tau];

    // 2-tap average (anti-alias) of the quantized/raw channels.
    Vec6 q_m;
    for (int k = 0; k < 6; ++k)
      q_m[k] = 0.5 * (quantize(t0.state.q[legj[k]]) + quantize(t1.state.q[legj[k]]));
    const Vec6 tau_d_m = 0.5 * (leg_rows(t0.tau_d) + leg_rows(t1.tau_d));
    const Vec3 gyro_avg = 0.5 * (t0.imu_gyro + t1.imu_gyro);
    const Vec3 accel_avg = 0.5 * (t0.imu_accel + t1.imu_accel);
    const Vec6 raw_avg =
        0.5 * (t0.raw_fts[static_cast<int>(leg)].vec() +
               t1.raw_fts[static_cast<int>(leg)].vec());

    // Fixed draw order per row: gyro bias walk, gyro white, accel bias walk,
    // accel white, FTS force, FTS moment, joint-rate white.
    gyro_bias += rng.normal_vec3(noise.gyro_bias_walk * sqrt_dt);
    const Vec3 gyro_white = rng.normal_vec3(noise.gyro_noise_std);
    accel_bias += rng.normal_vec3(noise.accel_bias_walk * sqrt_dt);
    const Vec3 accel_white = rng.normal_vec3(noise.accel_noise_std);
    const Vec3 fts_force_white = rng.normal_vec3(noise.fts_force_std);
    const Vec3 fts_moment_white = rng.normal_vec3(noise.fts_moment_std);
    Vec6 qdot_white;
    for (int k = 0; k < 6; ++k) qdot_white[k] = rng.normal(0.0, noise.qdot_noise_std);

    Vec6 qdot_m = Vec6::Zero();
    if (!first) qdot_m = (q_m - q_prev) / 0.01;
    qdot_m += qdot_white;
    q_prev = q_m;
    first = false;

    DatasetRow row;
    row.tick = tau;
    row.input.q_leg = q_m;
    row.input.qdot_leg = qdot_m;
    row.input.tau_d_leg = tau_d_m;
    row.input.pelvis_ang_vel = gyro_avg + gyro_bias + gyro_white;
    row.input.pelvis_lin_acc = accel_avg + accel_bias + accel_white;

    // Label: gravity-calibrated contact wrench from the noisy FTS channel,
    // mapped through the contact jacobian at the measured joint angles.
    Vec6 raw_noisy = raw_avg;
    raw_noisy.head<3>() += fts_force_white;
    raw_noisy.tail<3>() += fts_moment_white;
    GeneralizedState s_m = t1.state;
    for (int k = 0; k < 6; ++k) s_m.q[legj[k]] = q_m[k];
    const ContactJacobian jac =
        contact_jacobian(model, s_m, leg, WrenchFrame::ContactPoint);
    const Mat3 r_w_link = jac.x_world_frame.rot * r_link_contact.transpose();
    const WrenchSample f_e = fts_to_contact_wrench(
        WrenchSample::from_vec(raw_noisy, WrenchFrame::RawFts), calib, r_w_link);
    row.target = wrench_to_external_torque(jac.leg, f_e);
    row.truth_wrench = t1.contact[static_cast<int>(leg)];
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace proprio
