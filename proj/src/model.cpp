#include "proprio/model.hpp"

#include <fstream>
#include <map>
#include <sstream>

namespace proprio {
namespace {

struct Line {
  int number;
  std::string text;
};

[[noreturn]] void fail(int line, const std::string& what) {
  throw ParseError("model description line " + std::to_string(line) + ": " + what);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<double> parse_numbers(const std::string& v, int line, size_t expect) {
  std::istringstream iss(v);
  std::vector<double> out;
  double d;
  while (iss >> d) out.push_back(d);
  std::string leftover;
  if (iss.fail() && !iss.eof()) fail(line, "expected numeric values, got '" + v + "'");
  if (expect != 0 && out.size() != expect)
    fail(line, "expected " + std::to_string(expect) + " numbers, got " +
                   std::to_string(out.size()));
  return out;
}

Vec3 parse_vec3(const std::string& v, int line) {
  const auto n = parse_numbers(v, line, 3);
  return {n[0], n[1], n[2]};
}

// Key/value pairs of one block, each with its source line for diagnostics.
using Block = std::map<std::string, std::pair<std::string, int>>;

Mat3 block_rpy(const Block& b, const std::string& key) {
  const auto it = b.find(key);
  if (it == b.end()) return Mat3::Identity();
  const auto n = parse_numbers(it->second.first, it->second.second, 3);
  return rpy_to_rot(n[0], n[1], n[2]);
}

}  // namespace

const FootGeometry& RobotModel::foot(Side s) const {
  for (const auto& f : feet)
    if (f.side == s) return f;
  throw std::invalid_argument(std::string("model '") + id + "' has no " +
                              side_name(s) + " foot");
}

bool RobotModel::has_foot(Side s) const {
  for (const auto& f : feet)
    if (f.side == s) return true;
  return false;
}

SpatialTransform joint_transform(const LinkSpec& link, double q) {
  Mat3 r = link.origin_rot;
  if (link.joint == JointType::Revolute) r = r * axis_angle(link.axis, q);
  return SpatialTransform::from_pose(r, link.origin_pos);
}

RobotModel build_model(const std::string& description) {
  // First pass: split into top-level key/values and named blocks.
  struct RawBlock {
    std::string kind, name;
    int line;
    Block entries;
  };
  std::vector<RawBlock> blocks;
  Block top;

  std::istringstream in(description);
  std::string raw;
  int lineno = 0;
  RawBlock* open = nullptr;
  while (std::getline(in, raw)) {
    ++lineno;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    std::string line = trim(raw);
    if (line.empty()) continue;

    if (line == "}") {
      if (!open) fail(lineno, "unmatched '}'");
      open = nullptr;
      continue;
    }
    if (line.back() == '{') {
      if (open) fail(lineno, "nested blocks are not supported");
      std::istringstream hs(line.substr(0, line.size() - 1));
      RawBlock b;
      b.line = lineno;
      hs >> b.kind >> b.name;
      if (b.kind.empty() || b.name.empty())
        fail(lineno, "block header must be '<kind> <name> {'");
      blocks.push_back(std::move(b));
      open = &blocks.back();
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(lineno, "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) fail(lineno, "expected 'key = value'");
    Block& target = open ? open->entries : top;
    if (target.count(key)) fail(lineno, "duplicate key '" + key + "'");
    target[key] = {value, lineno};
  }
  if (open) throw ParseError("model description: unterminated block '" + open->name + "'");

  auto top_get = [&](const std::string& key) -> std::optional<std::pair<std::string, int>> {
    const auto it = top.find(key);
    if (it == top.end()) return std::nullopt;
    return it->second;
  };

  RobotModel model;
  const auto ver = top_get("model_version");
  if (!ver) throw ParseError("model description: missing model_version");
  model.model_version = static_cast<int>(parse_numbers(ver->first, ver->second, 1)[0]);
  if (model.model_version != 1)
    throw ParseError("model description: unsupported model_version " +
                     std::to_string(model.model_version));
  if (const auto id = top_get("model_id")) model.id = id->first;
  if (const auto g = top_get("gravity")) model.gravity = parse_vec3(g->first, g->second);

  std::map<std::string, int> link_index;
  std::vector<double> viscous, coulomb;

  for (const auto& b : blocks) {
    if (b.kind == "link") {
      LinkSpec link;
      link.name = b.name;
      auto get = [&](const std::string& key) -> std::optional<std::pair<std::string, int>> {
        const auto it = b.entries.find(key);
        if (it == b.entries.end()) return std::nullopt;
        return it->second;
      };
      const auto parent = get("parent");
      if (!parent) fail(b.line, "link '" + b.name + "' missing parent");
      if (parent->first == "none") {
        link.parent = -1;
      } else {
        const auto it = link_index.find(parent->first);
        if (it == link_index.end())
          fail(parent->second, "parent link '" + parent->first +
                                   "' not declared before '" + b.name + "'");
        link.parent = it->second;
      }

      const auto joint = get("joint");
      if (!joint) fail(b.line, "link '" + b.name + "' missing joint type");
      if (joint->first == "floating") link.joint = JointType::Floating;
      else if (joint->first == "fixed") link.joint = JointType::Fixed;
      else if (joint->first == "revolute") link.joint = JointType::Revolute;
      else fail(joint->second, "unknown joint type '" + joint->first + "'");

      if (link.parent == -1) {
        if (!model.links.empty()) fail(b.line, "multiple root links");
        if (link.joint == JointType::Revolute)
          fail(b.line, "root link must be floating or fixed");
        model.floating_base = link.joint == JointType::Floating;
      } else if (link.joint != JointType::Revolute) {
        fail(b.line, "non-root links must use revolute joints");
      }

      if (const auto a = get("axis")) {
        link.axis = parse_vec3(a->first, a->second);
        const double n = link.axis.norm();
        if (n < 1e-9) fail(a->second, "joint axis must be nonzero");
        link.axis /= n;
      }
      if (const auto o = get("origin")) link.origin_pos = parse_vec3(o->first, o->second);
      link.origin_rot = block_rpy(b.entries, "origin_rpy");

      const auto mass = get("mass");
      if (!mass) fail(b.line, "link '" + b.name + "' missing mass");
      link.inertia.mass = parse_numbers(mass->first, mass->second, 1)[0];
      if (const auto c = get("com")) link.inertia.com = parse_vec3(c->first, c->second);
      const auto in = get("inertia");
      if (!in) fail(b.line, "link '" + b.name + "' missing inertia");
      // Ixx Iyy Izz Ixy Ixz Iyz about the CoM.
      const auto v = parse_numbers(in->first, in->second, 6);
      link.inertia.rot_inertia << v[0], v[3], v[4], v[3], v[1], v[5], v[4], v[5], v[2];

      const std::string err = link.inertia.validity_error();
      if (!err.empty())
        throw std::invalid_argument("link '" + b.name + "' (line " +
                                    std::to_string(b.line) + "): " + err);

      if (link.joint == JointType::Revolute) {
        link.joint_index = static_cast<int>(viscous.size());
        double fv = 0.0, fc = 0.0;
        if (const auto f = get("friction_viscous"))
          fv = parse_numbers(f->first, f->second, 1)[0];
        if (const auto f = get("friction_coulomb"))
          fc = parse_numbers(f->first, f->second, 1)[0];
        if (fv < 0.0 || fc < 0.0) fail(b.line, "friction parameters must be >= 0");
        viscous.push_back(fv);
        coulomb.push_back(fc);
      }

      link_index[b.name] = static_cast<int>(model.links.size());
      model.links.push_back(std::move(link));
    } else if (b.kind == "foot") {
      FootGeometry foot;
      if (b.name == "left") foot.side = Side::Left;
      else if (b.name == "right") foot.side = Side::Right;
      else fail(b.line, "foot block must be named left or right");
      auto get = [&](const std::string& key) -> std::optional<std::pair<std::string, int>> {
        const auto it = b.entries.find(key);
        if (it == b.entries.end()) return std::nullopt;
        return it->second;
      };
      const auto lk = get("link");
      if (!lk) fail(b.line, "foot block missing link");
      const auto it = link_index.find(lk->first);
      if (it == link_index.end()) fail(lk->second, "unknown foot link '" + lk->first + "'");
      foot.link = it->second;
      const auto he = get("sole_half_extents");
      if (!he) fail(b.line, "foot block missing sole_half_extents");
      const auto hv = parse_numbers(he->first, he->second, 2);
      foot.sole_half_x = hv[0];
      foot.sole_half_y = hv[1];
      if (foot.sole_half_x <= 0.0 || foot.sole_half_y <= 0.0)
        fail(he->second, "sole half extents must be > 0");
      if (const auto o = get("contact_offset")) foot.contact_pos = parse_vec3(o->first, o->second);
      foot.contact_rot = block_rpy(b.entries, "contact_rpy");
      if (const auto o = get("fts_offset")) foot.fts_pos = parse_vec3(o->first, o->second);
      foot.fts_rot = block_rpy(b.entries, "fts_rpy");
      if (const auto o = get("mod_contact_offset")) {
        foot.mod_contact_pos = parse_vec3(o->first, o->second);
        foot.mod_contact_rot = block_rpy(b.entries, "mod_contact_rpy");
        foot.has_mod_contact = true;
      }
      for (const auto& f : model.feet)
        if (f.side == foot.side) fail(b.line, "duplicate foot block");
      model.feet.push_back(foot);
    } else {
      fail(b.line, "unknown block kind '" + b.kind + "'");
    }
  }

  if (model.links.empty()) throw ParseError("model description: no links");

  model.n_joints = static_cast<int>(viscous.size());
  model.friction.viscous = Eigen::Map<VecX>(viscous.data(), model.n_joints);
  model.friction.coulomb = Eigen::Map<VecX>(coulomb.data(), model.n_joints);
  if (const auto s = top_get("friction_smoothing_vel")) {
    model.friction.smoothing_vel = parse_numbers(s->first, s->second, 1)[0];
    if (model.friction.smoothing_vel <= 0.0)
      throw std::invalid_argument("friction_smoothing_vel must be > 0");
  }

  model.total_mass = 0.0;
  for (const auto& l : model.links) model.total_mass += l.inertia.mass;

  // Tree ordering invariant: parents precede children by construction of the
  // parser (parent must be declared first), which also rules out cycles.

  // Leg chains: path base -> foot link, collecting actuated joints.
  for (const auto& foot : model.feet) {
    std::vector<int> links, joints;
    for (int i = foot.link; i != -1; i = model.links[i].parent) links.push_back(i);
    std::reverse(links.begin(), links.end());
    if (links.front() != 0)
      throw std::invalid_argument("foot link does not chain back to the base");
    for (const int li : links)
      if (model.links[li].joint_index >= 0) joints.push_back(model.links[li].joint_index);
    if (joints.size() != 6)
      throw std::invalid_argument(std::string("the ") + side_name(foot.side) +
                                  " leg chain has " + std::to_string(joints.size()) +
                                  " actuated joints, expected 6");
    const int s = static_cast<int>(foot.side);
    model.leg_links[s] = std::move(links);
    model.leg_joints[s] = std::move(joints);
  }

  return model;
}

RobotModel load_model_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open model file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  RobotModel m = build_model(ss.str());
  if (m.id.empty()) m.id = path;
  return m;
}

}  // namespace proprio
