#pragma once

#include <array>
#include <string>
#include <vector>

#include "proprio/model.hpp"
#include "proprio/rng.hpp"
#include "proprio/spatial.hpp"

namespace proprio {

// A brief external force applied during an episode to decorrelate external
// torque from gait phase.
struct PushEvent {
  enum class Body { Pelvis, SwingFoot };
  double time = 0.0;      // episode time when the push begins, s
  Body body = Body::Pelvis;
  Vec3 force = Vec3::Zero();  // world frame, N
  double duration = 0.0;      // s
};

// One randomized walking episode's command parameters.
struct GaitParams {
  double step_length = 0.0;   // m, [-0.10, 0.15]
  double turn_angle = 0.0;    // rad per step, +/- 20 deg
  double step_period = 0.9;   // s, one of {0.6, 0.7, 0.9, 1.1}
  double swing_height = 0.055;  // m, one of {0.040, 0.055, 0.070}
  int n_steps = 0;
  std::vector<PushEvent> push_schedule;

  // Empty when all fields lie in their documented intervals/sets.
  std::string validity_error() const;
};

// Randomization intervals for sample_gait. Defaults follow the episode
// recipe the rest of the toolkit is tuned for.
struct GaitRandomization {
  double step_length_min = -0.10, step_length_max = 0.15;  // m
  double turn_max_deg = 20.0;                              // symmetric, deg
  std::vector<double> step_periods{0.6, 0.7, 0.9, 1.1};    // s
  std::vector<double> swing_heights{0.040, 0.055, 0.070};  // m
  int n_steps_min = 16, n_steps_max = 28;
  bool with_pushes = true;
  double push_mean_interval = 4.0;  // s between pushes (Poisson arrivals)
  double push_force_max = 300.0;    // N, magnitude uniform in [0, max]
  double push_duration_min = 0.030, push_duration_max = 0.200;  // s
};

// Uniform draws over the configured intervals/sets, reproducible from the
// generator state. Throws std::invalid_argument on an empty interval or set.
GaitParams sample_gait(Rng& rng, const GaitRandomization& cfg = {});

// Reference-trajectory generation knobs.
struct PlanConfig {
  double dt = 5e-4;            // tick spacing, s (2 kHz)
  double com_height = 0.75;    // LIPM pendulum height z_c, m
  double pelvis_height = 0.88;  // constant pelvis z over ground, m
  double stand_duration = 2.5;  // quiet stance before and after walking, s
  Side first_swing = Side::Left;
};

struct FootTarget {
  Vec3 pos = Vec3::Zero();  // sole contact-frame origin, world, m
  double yaw = 0.0;         // rad about world z
  bool in_stance = true;
};

struct PlanSample {
  Eigen::Vector2d com = Eigen::Vector2d::Zero();      // world xy at z_c, m
  Eigen::Vector2d com_vel = Eigen::Vector2d::Zero();  // m/s
  Eigen::Vector2d com_acc = Eigen::Vector2d::Zero();  // m/s^2
  Eigen::Vector2d zmp = Eigen::Vector2d::Zero();      // reference, world xy
  double pelvis_yaw = 0.0;
  double pelvis_yaw_rate = 0.0;
  std::array<FootTarget, 2> foot;  // indexed by Side
  Side swing_side = Side::Left;    // meaningful when !double_support
  bool double_support = true;
};

struct GaitPlan {
  double dt = 5e-4;
  double com_height = 0.75;
  double pelvis_height = 0.88;
  double omega = 0.0;  // sqrt(g / z_c)
  std::vector<PlanSample> samples;

  double duration() const { return dt * static_cast<double>(samples.size()); }
  Vec3 pelvis_pos(std::size_t i) const {
    return {samples[i].com.x(), samples[i].com.y(), pelvis_height};
  }
  Mat3 pelvis_rot(std::size_t i) const;
};

// Builds the 2 kHz reference: piecewise-LIPM CoM (closed form, satisfies
// cdd = w^2 (c - zmp) exactly), ZMP held at the stance sole center during
// single support and transferred linearly over step_period/3 in double
// support, swing-foot quintics in xy/yaw with a sine-squared vertical arc.
// The plan stands quietly for stand_duration before and after the steps;
// a final squaring step brings the feet back side by side.
// Throws std::invalid_argument on invalid gait parameters and
// std::runtime_error (naming the step index) when a foot target would
// exceed the model's leg reach.
GaitPlan plan_trajectories(const GaitParams& gait, const RobotModel& model,
                           const PlanConfig& cfg = {});

}  // namespace proprio
