#include "proprio/gait.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace proprio {

namespace {

constexpr double kDeg = M_PI / 180.0;

bool in_set(double v, const std::vector<double>& set) {
  for (double s : set)
    if (std::abs(v - s) < 1e-9) return true;
  return false;
}

// Quintic smoothstep: zero velocity and acceleration at both ends.
double q5(double s) { return s * s * s * (10.0 + s * (-15.0 + 6.0 * s)); }
double q5_rate(double s) { return 30.0 * s * s * (1.0 - s) * (1.0 - s); }

Eigen::Vector2d rot2(double yaw, const Eigen::Vector2d& v) {
  return Eigen::Rotation2Dd(yaw) * v;
}

double side_sign(Side s) { return s == Side::Left ? 1.0 : -1.0; }
Side other(Side s) { return s == Side::Left ? Side::Right : Side::Left; }

// One interval of the plan with an affine ZMP reference.
struct Phase {
  int ticks = 0;
  Eigen::Vector2d zmp0 = Eigen::Vector2d::Zero();
  Eigen::Vector2d zmp1 = Eigen::Vector2d::Zero();
  bool single_support = false;
  Side swing = Side::Left;
  int step_index = -1;  // -1 for stands and the final transfer
  // Swing-foot endpoints (single-support phases only).
  Eigen::Vector2d swing_from = Eigen::Vector2d::Zero();
  Eigen::Vector2d swing_to = Eigen::Vector2d::Zero();
  double swing_yaw_from = 0.0, swing_yaw_to = 0.0;
  double yaw_from = 0.0, yaw_to = 0.0;  // pelvis heading across the phase
  // Planted-foot poses during the phase (swing side ignored in SSP).
  std::array<Eigen::Vector2d, 2> foot_pos;
  std::array<double, 2> foot_yaw{0.0, 0.0};
};

struct LegGeometry {
  Vec3 hip_offset = Vec3::Zero();  // base frame, left leg (+y); mirror for right
  double reach = 0.0;              // thigh + shank, m
  Vec3 contact_offset = Vec3::Zero();  // sole origin in foot-link coords
  double lateral = 0.0;                // nominal half stance width, m
};

LegGeometry leg_geometry(const RobotModel& model) {
  // Chain runs base -> ... -> foot; the last three links are knee, ankle,
  // foot, everything after the base and before the knee is the hip cluster.
  const auto& links = model.leg_links[static_cast<int>(Side::Left)];
  if (links.size() < 6) throw std::invalid_argument("model lacks a 6-DoF leg");
  const std::size_t n = links.size();
  LegGeometry geo;
  for (std::size_t i = 1; i + 3 < n; ++i)
    geo.hip_offset += model.links[links[i]].origin_pos;
  geo.reach = model.links[links[n - 3]].origin_pos.norm() +
              model.links[links[n - 2]].origin_pos.norm();
  geo.contact_offset = model.foot(Side::Left).contact_pos;
  geo.lateral = std::abs(geo.hip_offset.y());
  if (geo.reach <= 0.0 || geo.lateral <= 0.0)
    throw std::invalid_argument("model leg geometry is degenerate");
  return geo;
}

}  // namespace

std::string GaitParams::validity_error() const {
  if (!(step_length >= -0.10 - 1e-12 && step_length <= 0.15 + 1e-12))
    return "step_length outside [-0.10, 0.15] m";
  if (std::abs(turn_angle) > 20.0 * kDeg + 1e-12)
    return "turn_angle outside +/-20 deg";
  if (!in_set(step_period, {0.6, 0.7, 0.9, 1.1}))
    return "step_period not one of {0.6, 0.7, 0.9, 1.1} s";
  if (!in_set(swing_height, {0.040, 0.055, 0.070}))
    return "swing_height not one of {0.040, 0.055, 0.070} m";
  if (n_steps < 0) return "n_steps negative";
  for (const PushEvent& p : push_schedule) {
    if (!(p.time >= 0.0) || !std::isfinite(p.time)) return "push time invalid";
    if (!(p.duration > 0.0 && p.duration <= 1.0)) return "push duration invalid";
    if (!p.force.allFinite()) return "push force non-finite";
  }
  return "";
}

GaitParams sample_gait(Rng& rng, const GaitRandomization& cfg) {
  if (cfg.step_length_min > cfg.step_length_max)
    throw std::invalid_argument("sample_gait: empty step-length interval");
  if (cfg.step_periods.empty()) throw std::invalid_argument("sample_gait: no step periods");
  if (cfg.swing_heights.empty()) throw std::invalid_argument("sample_gait: no swing heights");
  if (cfg.n_steps_min > cfg.n_steps_max || cfg.n_steps_min < 0)
    throw std::invalid_argument("sample_gait: bad n_steps interval");
  if (cfg.turn_max_deg < 0.0) throw std::invalid_argument("sample_gait: bad turn range");

  GaitParams gait;
  gait.step_length = rng.uniform(cfg.step_length_min, cfg.step_length_max);
  gait.turn_angle = rng.uniform(-cfg.turn_max_deg, cfg.turn_max_deg) * kDeg;
  gait.step_period = cfg.step_periods[rng.uniform_int(
      0, static_cast<int>(cfg.step_periods.size()) - 1)];
  gait.swing_height = cfg.swing_heights[rng.uniform_int(
      0, static_cast<int>(cfg.swing_heights.size()) - 1)];
  gait.n_steps = rng.uniform_int(cfg.n_steps_min, cfg.n_steps_max);

  if (cfg.with_pushes) {
    const double walk_time =
        gait.n_steps > 0
            ? (gait.n_steps + 1) * gait.step_period + gait.step_period / 3.0
            : 0.0;
    const double total = 2.0 * 2.5 + walk_time;
    double t = rng.exponential(cfg.push_mean_interval);
    while (t < total - cfg.push_duration_max) {
      PushEvent push;
      push.time = t;
      push.body = rng.uniform_int(0, 1) == 0 ? PushEvent::Body::Pelvis
                                             : PushEvent::Body::SwingFoot;
      push.force = rng.unit_sphere() * rng.uniform(0.0, cfg.push_force_max);
      push.duration = rng.uniform(cfg.push_duration_min, cfg.push_duration_max);
      gait.push_schedule.push_back(push);
      t += rng.exponential(cfg.push_mean_interval);
    }
  }
  return gait;
}

Mat3 GaitPlan::pelvis_rot(std::size_t i) const {
  return axis_angle(Vec3::UnitZ(), samples[i].pelvis_yaw);
}

GaitPlan plan_trajectories(const GaitParams& gait, const RobotModel& model,
                           const PlanConfig& cfg) {
  if (const std::string err = gait.validity_error(); !err.empty())
    throw std::invalid_argument("plan_trajectories: " + err);
  if (cfg.dt <= 0.0 || cfg.com_height <= 0.0 || cfg.stand_duration <= 0.0)
    throw std::invalid_argument("plan_trajectories: bad plan config");

  const LegGeometry geo = leg_geometry(model);
  const double lat = geo.lateral;

  // Phase durations snap to the tick grid; single support gets an even tick
  // count so the swing apex lands exactly on a sample.
  const int n_stand = std::max(1, static_cast<int>(std::lround(cfg.stand_duration / cfg.dt)));
  const int n_dsp =
      std::max(1, static_cast<int>(std::lround(gait.step_period / (3.0 * cfg.dt))));
  const int n_ssp = 2 * n_dsp;

  // --- Footstep sequence ------------------------------------------------
  std::array<Eigen::Vector2d, 2> foot_pos = {Eigen::Vector2d(0.0, lat),
                                             Eigen::Vector2d(0.0, -lat)};
  std::array<double, 2> foot_yaw{0.0, 0.0};
  Eigen::Vector2d center(0.0, 0.0);
  double heading = 0.0;
  Side swing = cfg.first_swing;
  Eigen::Vector2d zmp_prev = (foot_pos[0] + foot_pos[1]) / 2.0;

  std::vector<Phase> phases;
  const auto planted = [&](Phase& ph) {
    ph.foot_pos = foot_pos;
    ph.foot_yaw = foot_yaw;
  };

  {
    Phase stand;
    stand.ticks = gait.n_steps > 0 ? n_stand : 2 * n_stand;
    stand.zmp0 = stand.zmp1 = zmp_prev;
    stand.yaw_from = stand.yaw_to = heading;
    planted(stand);
    phases.push_back(stand);
  }

  if (gait.n_steps > 0) {
    const int total_swings = gait.n_steps + 1;  // trailing squaring step
    for (int k = 0; k < total_swings; ++k) {
      const bool squaring = (k == gait.n_steps);
      const double heading_next = squaring ? heading : heading + gait.turn_angle;
      const Eigen::Vector2d center_next =
          squaring ? center
                   : center + rot2(heading_next, Eigen::Vector2d(gait.step_length, 0.0));
      const Side stance = other(swing);

      Phase dsp;
      dsp.ticks = n_dsp;
      dsp.zmp0 = zmp_prev;
      dsp.zmp1 = foot_pos[static_cast<int>(stance)];
      dsp.step_index = k;
      dsp.yaw_from = dsp.yaw_to = heading;
      planted(dsp);
      phases.push_back(dsp);

      Phase ssp;
      ssp.ticks = n_ssp;
      ssp.zmp0 = ssp.zmp1 = foot_pos[static_cast<int>(stance)];
      ssp.single_support = true;
      ssp.swing = swing;
      ssp.step_index = k;
      ssp.swing_from = foot_pos[static_cast<int>(swing)];
      ssp.swing_yaw_from = foot_yaw[static_cast<int>(swing)];
      ssp.swing_to =
          center_next + rot2(heading_next, Eigen::Vector2d(0.0, side_sign(swing) * lat));
      ssp.swing_yaw_to = heading_next;
      ssp.yaw_from = heading;
      ssp.yaw_to = heading_next;
      planted(ssp);
      phases.push_back(ssp);

      foot_pos[static_cast<int>(swing)] = ssp.swing_to;
      foot_yaw[static_cast<int>(swing)] = heading_next;
      zmp_prev = ssp.zmp1;
      heading = heading_next;
      center = center_next;
      swing = other(swing);
    }

    Phase settle;  // transfer the load back to the midpoint; slower than a
    settle.ticks = 3 * n_dsp;  // step transfer so the terminal sway decays
    settle.zmp0 = zmp_prev;
    settle.zmp1 = (foot_pos[0] + foot_pos[1]) / 2.0;
    settle.yaw_from = settle.yaw_to = heading;
    planted(settle);
    phases.push_back(settle);

    Phase stand;
    stand.ticks = n_stand;
    stand.zmp0 = stand.zmp1 = settle.zmp1;
    stand.yaw_from = stand.yaw_to = heading;
    planted(stand);
    phases.push_back(stand);
  }

  // --- Closed-form LIPM: divergent component backward, CoM forward -------
  const double omega = std::sqrt(9.81 / cfg.com_height);
  const int n_phases = static_cast<int>(phases.size());
  std::vector<Eigen::Vector2d> slope(n_phases), coeff_c(n_phases), coeff_d(n_phases);

  Eigen::Vector2d xi_end = phases.back().zmp1;
  for (int i = n_phases - 1; i >= 0; --i) {
    const double tau = phases[i].ticks * cfg.dt;
    slope[i] = (phases[i].zmp1 - phases[i].zmp0) / tau;
    // xi(t) = zmp(t) + slope/w + C e^{w t}; match xi(tau) = xi_end.
    coeff_c[i] = (xi_end - phases[i].zmp1 - slope[i] / omega) * std::exp(-omega * tau);
    xi_end = phases[i].zmp0 + slope[i] / omega + coeff_c[i];
  }

  Eigen::Vector2d com = phases.front().zmp0;
  for (int i = 0; i < n_phases; ++i) {
    // c(t) = zmp(t) + (C/2) e^{w t} + D e^{-w t}  =>  cdd = w^2 (c - zmp).
    coeff_d[i] = com - phases[i].zmp0 - coeff_c[i] / 2.0;
    const double tau = phases[i].ticks * cfg.dt;
    com = phases[i].zmp0 + slope[i] * tau + (coeff_c[i] / 2.0) * std::exp(omega * tau) +
          coeff_d[i] * std::exp(-omega * tau);
  }

  // --- Tick expansion -----------------------------------------------------
  GaitPlan plan;
  plan.dt = cfg.dt;
  plan.com_height = cfg.com_height;
  plan.pelvis_height = cfg.pelvis_height;
  plan.omega = omega;
  int total_ticks = 0;
  for (const Phase& ph : phases) total_ticks += ph.ticks;
  plan.samples.reserve(total_ticks);

  const double reach_limit = geo.reach * 0.998;
  for (int i = 0; i < n_phases; ++i) {
    const Phase& ph = phases[i];
    const double tau = ph.ticks * cfg.dt;
    for (int j = 0; j < ph.ticks; ++j) {
      const double t = j * cfg.dt;
      PlanSample ps;
      const double up = std::exp(omega * t), down = std::exp(-omega * t);
      ps.zmp = ph.zmp0 + slope[i] * t;
      ps.com = ps.zmp + (coeff_c[i] / 2.0) * up + coeff_d[i] * down;
      ps.com_vel = slope[i] + (coeff_c[i] * omega / 2.0) * up - coeff_d[i] * omega * down;
      ps.com_acc = omega * omega * ((coeff_c[i] / 2.0) * up + coeff_d[i] * down);
      ps.double_support = !ph.single_support;
      ps.swing_side = ph.swing;

      const double s = ph.single_support ? t / tau : 0.0;
      ps.pelvis_yaw = ph.yaw_from + (ph.yaw_to - ph.yaw_from) * q5(s);
      ps.pelvis_yaw_rate = (ph.yaw_to - ph.yaw_from) * q5_rate(s) / tau;

      for (Side side : {Side::Left, Side::Right}) {
        const int si = static_cast<int>(side);
        FootTarget& ft = ps.foot[si];
        if (ph.single_support && side == ph.swing) {
          const Eigen::Vector2d xy =
              ph.swing_from + (ph.swing_to - ph.swing_from) * q5(s);
          const double lift = std::sin(M_PI * s);
          ft.pos = Vec3(xy.x(), xy.y(), gait.swing_height * lift * lift);
          ft.yaw = ph.swing_yaw_from + (ph.swing_yaw_to - ph.swing_yaw_from) * q5(s);
          ft.in_stance = false;
        } else {
          ft.pos = Vec3(ph.foot_pos[si].x(), ph.foot_pos[si].y(), 0.0);
          ft.yaw = ph.foot_yaw[si];
          ft.in_stance = true;
        }

        // Reach check: ankle target against the hip at this tick.
        Vec3 hip_off = geo.hip_offset;
        hip_off.y() *= side_sign(side);
        const Vec3 hip = Vec3(ps.com.x(), ps.com.y(), cfg.pelvis_height) +
                         axis_angle(Vec3::UnitZ(), ps.pelvis_yaw) * hip_off;
        const Vec3 ankle =
            ft.pos - axis_angle(Vec3::UnitZ(), ft.yaw) * geo.contact_offset;
        const double need = (ankle - hip).norm();
        if (need > reach_limit)
          throw std::runtime_error(
              "plan_trajectories: gait step " + std::to_string(ph.step_index) +
              " infeasible: " + side_name(side) + " foot target needs " +
              std::to_string(need) + " m of " + std::to_string(geo.reach) +
              " m leg reach");
      }
      plan.samples.push_back(ps);
    }
  }
  return plan;
}

}  // namespace proprio
