#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "proprio/spatial.hpp"

namespace proprio {

enum class Side { Left = 0, Right = 1 };
inline const char* side_name(Side s) { return s == Side::Left ? "left" : "right"; }

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class JointType { Floating, Fixed, Revolute };

struct FrictionParams {
  VecX viscous;         // N*m*s/rad, per actuated joint
  VecX coulomb;         // N*m, per actuated joint
  double smoothing_vel = 0.05;  // rad/s, tanh knee of the Coulomb term
};

struct LinkSpec {
  std::string name;
  int parent = -1;                   // index into links, -1 for the root
  JointType joint = JointType::Revolute;
  Vec3 axis = Vec3::UnitZ();         // joint axis, link frame
  Mat3 origin_rot = Mat3::Identity();  // joint-frame axes in parent coords
  Vec3 origin_pos = Vec3::Zero();      // joint-frame origin in parent coords
  SpatialInertia inertia;
  int joint_index = -1;              // actuated index, -1 for non-revolute
};

// Frames attached to a foot link: sole contact frame, FTS mounting frame,
// and the modified-foot contact frame used by the recalibration study.
struct FootGeometry {
  int link = -1;
  Side side = Side::Left;
  double sole_half_x = 0.0;  // m
  double sole_half_y = 0.0;  // m
  Mat3 contact_rot = Mat3::Identity();   // frame axes in foot-link coords
  Vec3 contact_pos = Vec3::Zero();       // frame origin in foot-link coords
  Mat3 fts_rot = Mat3::Identity();
  Vec3 fts_pos = Vec3::Zero();
  Mat3 mod_contact_rot = Mat3::Identity();
  Vec3 mod_contact_pos = Vec3::Zero();
  bool has_mod_contact = false;
};

struct RobotModel {
  std::string id;
  int model_version = 1;
  bool floating_base = true;
  std::vector<LinkSpec> links;    // links[0] is the base
  int n_joints = 0;               // actuated joints
  Vec3 gravity = Vec3(0, 0, -9.81);
  FrictionParams friction;
  std::vector<FootGeometry> feet;           // at most one per side
  std::array<std::vector<int>, 2> leg_joints;  // actuated indices base->foot
  std::array<std::vector<int>, 2> leg_links;   // link indices base->foot
  double total_mass = 0.0;

  int nv() const { return n_joints + (floating_base ? 6 : 0); }
  // Row offset of actuated joint j in generalized-velocity vectors.
  int vrow(int joint_index) const {
    return joint_index + (floating_base ? 6 : 0);
  }
  const FootGeometry& foot(Side s) const;
  bool has_foot(Side s) const;
};

// Parse a structured model description (see models/*.model for the format).
// Throws ParseError with a line diagnostic on malformed input and
// std::invalid_argument on physically invalid content.
RobotModel build_model(const std::string& description);

// Convenience: read a description file and build it.
RobotModel load_model_file(const std::string& path);

// Transform parent<-child for an actuated/floating joint at position q.
SpatialTransform joint_transform(const LinkSpec& link, double q);

}  // namespace proprio
