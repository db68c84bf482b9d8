#include "proprio/dynamics.hpp"

#include <cmath>

namespace proprio {
namespace {

Vec6 joint_subspace(const LinkSpec& link) {
  Vec6 s = Vec6::Zero();
  s.tail<3>() = link.axis;
  return s;
}

}  // namespace

VecX GeneralizedState::velocity(const RobotModel& model) const {
  VecX u(model.nv());
  if (model.floating_base) {
    u.head<3>() = base_lin_vel;
    u.segment<3>(3) = base_ang_vel;
    u.tail(model.n_joints) = qdot;
  } else {
    u = qdot;
  }
  return u;
}

void GeneralizedState::set_velocity(const RobotModel& model, const VecX& u) {
  if (model.floating_base) {
    base_lin_vel = u.head<3>();
    base_ang_vel = u.segment<3>(3);
    qdot = u.tail(model.n_joints);
  } else {
    qdot = u;
  }
}

void validate_state(const RobotModel& model, const GeneralizedState& state) {
  if (state.q.size() != model.n_joints || state.qdot.size() != model.n_joints)
    throw std::invalid_argument("state joint vectors sized differently than the model");
  if (!state.q.allFinite() || !state.qdot.allFinite() ||
      !state.base_pos.allFinite() || !state.base_rot.allFinite() ||
      !state.base_lin_vel.allFinite() || !state.base_ang_vel.allFinite())
    throw std::invalid_argument("state contains non-finite entries");
  if ((state.base_rot * state.base_rot.transpose() - Mat3::Identity()).norm() > 1e-6)
    throw std::invalid_argument("base rotation is not orthonormal");
}

KinCache forward_kinematics(const RobotModel& model, const GeneralizedState& state) {
  validate_state(model, state);
  const int nl = static_cast<int>(model.links.size());
  KinCache cache;
  cache.x_world_link.resize(nl);
  cache.x_parent_link.resize(nl);
  cache.v_body.resize(nl);

  cache.x_parent_link[0] = SpatialTransform::from_pose(state.base_rot, state.base_pos);
  cache.x_world_link[0] = cache.x_parent_link[0];
  if (model.floating_base) {
    cache.v_body[0] << state.base_lin_vel, state.base_ang_vel;
  } else {
    cache.v_body[0].setZero();
  }

  for (int i = 1; i < nl; ++i) {
    const LinkSpec& link = model.links[i];
    const double qi = link.joint_index >= 0 ? state.q[link.joint_index] : 0.0;
    cache.x_parent_link[i] = joint_transform(link, qi);
    cache.x_world_link[i] = compose(cache.x_world_link[link.parent], cache.x_parent_link[i]);
    const SpatialTransform x_link_parent = cache.x_parent_link[i].inverse();
    Vec6 v = x_link_parent.apply_motion(cache.v_body[link.parent]);
    if (link.joint_index >= 0)
      v += joint_subspace(link) * state.qdot[link.joint_index];
    cache.v_body[i] = v;
  }
  return cache;
}

std::vector<Vec6> acceleration_pass(const RobotModel& model, const KinCache& cache,
                                    const GeneralizedState& state, const VecX& udot) {
  const int nl = static_cast<int>(model.links.size());
  std::vector<Vec6> a(nl);
  a[0].setZero();
  if (model.floating_base) a[0] = udot.head<6>();
  for (int i = 1; i < nl; ++i) {
    const LinkSpec& link = model.links[i];
    const SpatialTransform x_link_parent = cache.x_parent_link[i].inverse();
    Vec6 ai = x_link_parent.apply_motion(a[link.parent]);
    if (link.joint_index >= 0) {
      const Vec6 s = joint_subspace(link);
      ai += s * udot[model.vrow(link.joint_index)];
      ai += cross_motion(cache.v_body[i]) * (s * state.qdot[link.joint_index]);
    }
    a[i] = ai;
  }
  return a;
}

MatX mass_matrix(const RobotModel& model, const GeneralizedState& state) {
  const KinCache cache = forward_kinematics(model, state);
  const int nl = static_cast<int>(model.links.size());
  const int nv = model.nv();

  std::vector<Mat6> composite(nl);
  for (int i = 0; i < nl; ++i) composite[i] = model.links[i].inertia.matrix();
  for (int i = nl - 1; i >= 1; --i) {
    const int p = model.links[i].parent;
    composite[p] += transform_inertia(cache.x_parent_link[i], composite[i]);
  }

  MatX m = MatX::Zero(nv, nv);
  if (model.floating_base) m.topLeftCorner<6, 6>() = composite[0];

  for (int i = 1; i < nl; ++i) {
    const LinkSpec& link = model.links[i];
    if (link.joint_index < 0) continue;
    const int row_i = model.vrow(link.joint_index);
    Vec6 f = composite[i] * joint_subspace(link);
    m(row_i, row_i) = joint_subspace(link).dot(f);
    int j = i;
    while (model.links[j].parent != -1) {
      f = cache.x_parent_link[j].apply_force(f);
      j = model.links[j].parent;
      if (model.links[j].joint_index >= 0) {
        const int row_j = model.vrow(model.links[j].joint_index);
        m(row_j, row_i) = joint_subspace(model.links[j]).dot(f);
        m(row_i, row_j) = m(row_j, row_i);
      }
    }
    if (model.floating_base) {
      m.block<6, 1>(0, row_i) = f;
      m.block<1, 6>(row_i, 0) = f.transpose();
    }
  }
  return m;
}

namespace {

// World-frame per-DoF data used by the Coriolis factorization: the Plucker
// column of each degree of freedom and the world twist of the link that
// carries it.
struct WorldColumns {
  MatX cols;      // 6 x nv
  MatX cols_dot;  // 6 x nv
  std::vector<Vec6> v_world;              // per link
  std::vector<std::vector<int>> dof_path; // per link: world-column indices
};

WorldColumns world_columns(const RobotModel& model, const KinCache& cache) {
  const int nl = static_cast<int>(model.links.size());
  const int nv = model.nv();
  WorldColumns wc;
  wc.cols = MatX::Zero(6, nv);
  wc.cols_dot = MatX::Zero(6, nv);
  wc.v_world.resize(nl);
  wc.dof_path.resize(nl);

  for (int i = 0; i < nl; ++i)
    wc.v_world[i] = cache.x_world_link[i].motion_matrix() * cache.v_body[i];

  if (model.floating_base) {
    const Mat6 xb = cache.x_world_link[0].motion_matrix();
    const Mat6 vb_cross = cross_motion(wc.v_world[0]);
    wc.cols.leftCols<6>() = xb;
    wc.cols_dot.leftCols<6>() = vb_cross * xb;
    wc.dof_path[0] = {0, 1, 2, 3, 4, 5};
  }

  for (int i = 1; i < nl; ++i) {
    const LinkSpec& link = model.links[i];
    wc.dof_path[i] = wc.dof_path[link.parent];
    if (link.joint_index >= 0) {
      const int col = model.vrow(link.joint_index);
      const Vec6 s_world = cache.x_world_link[i].apply_motion(joint_subspace(link));
      wc.cols.col(col) = s_world;
      wc.cols_dot.col(col) = cross_motion(wc.v_world[i]) * s_world;
      wc.dof_path[i].push_back(col);
    }
  }
  return wc;
}

}  // namespace

MatX coriolis_matrix(const RobotModel& model, const GeneralizedState& state) {
  const KinCache cache = forward_kinematics(model, state);
  const WorldColumns wc = world_columns(model, cache);
  const int nl = static_cast<int>(model.links.size());
  const int nv = model.nv();

  MatX c = MatX::Zero(nv, nv);
  for (int i = 0; i < nl; ++i) {
    const auto& path = wc.dof_path[i];
    if (path.empty()) continue;
    const int k = static_cast<int>(path.size());
    MatX ji(6, k), ji_dot(6, k);
    for (int a = 0; a < k; ++a) {
      ji.col(a) = wc.cols.col(path[a]);
      ji_dot.col(a) = wc.cols_dot.col(path[a]);
    }
    const Mat6 inertia_w = transform_inertia(cache.x_world_link[i],
                                             model.links[i].inertia.matrix());
    const MatX contrib =
        ji.transpose() * (inertia_w * ji_dot + cross_force(wc.v_world[i]) * (inertia_w * ji));
    for (int a = 0; a < k; ++a)
      for (int b = 0; b < k; ++b) c(path[a], path[b]) += contrib(a, b);
  }
  return c;
}

VecX gravity_vector(const RobotModel& model, const GeneralizedState& state) {
  GeneralizedState rest = state;
  rest.base_lin_vel.setZero();
  rest.base_ang_vel.setZero();
  rest.qdot.setZero();
  return inverse_dynamics(model, rest, VecX::Zero(model.nv()));
}

SpatialTransform foot_frame_transform(const FootGeometry& foot, WrenchFrame frame) {
  switch (frame) {
    case WrenchFrame::RawFts:
      return SpatialTransform::from_pose(foot.fts_rot, foot.fts_pos);
    case WrenchFrame::ContactPoint:
      return SpatialTransform::from_pose(foot.contact_rot, foot.contact_pos);
    case WrenchFrame::ModifiedContactPoint:
      if (!foot.has_mod_contact)
        throw std::invalid_argument("model declares no modified contact frame");
      return SpatialTransform::from_pose(foot.mod_contact_rot, foot.mod_contact_pos);
    default:
      throw std::invalid_argument(std::string("unknown contact frame tag: ") +
                                  wrench_frame_name(frame));
  }
}

ContactJacobian contact_jacobian(const RobotModel& model, const GeneralizedState& state,
                                 Side side, WrenchFrame frame) {
  const FootGeometry& foot = model.foot(side);
  const KinCache cache = forward_kinematics(model, state);
  const SpatialTransform x_foot_frame = foot_frame_transform(foot, frame);

  ContactJacobian out;
  out.frame = frame;
  out.x_world_frame = compose(cache.x_world_link[foot.link], x_foot_frame);
  out.full = MatX::Zero(6, model.nv());
  const SpatialTransform x_frame_world = out.x_world_frame.inverse();

  if (model.floating_base) {
    const SpatialTransform x_frame_base = compose(x_frame_world, cache.x_world_link[0]);
    out.full.leftCols<6>() = x_frame_base.motion_matrix();
  }
  for (int li : model.leg_links[static_cast<int>(side)]) {
    const LinkSpec& link = model.links[li];
    if (link.joint_index < 0) continue;
    const SpatialTransform x_frame_link = compose(x_frame_world, cache.x_world_link[li]);
    out.full.col(model.vrow(link.joint_index)) =
        x_frame_link.apply_motion(joint_subspace(link));
  }
  const auto& legj = model.leg_joints[static_cast<int>(side)];
  for (int a = 0; a < 6; ++a) out.leg.col(a) = out.full.col(model.vrow(legj[a]));
  return out;
}

VecX inverse_dynamics(const RobotModel& model, const GeneralizedState& state,
                      const VecX& udot,
                      const std::vector<std::pair<Side, WrenchSample>>& external) {
  if (udot.size() != model.nv())
    throw std::invalid_argument("inverse_dynamics: udot has wrong size");
  const KinCache cache = forward_kinematics(model, state);
  const int nl = static_cast<int>(model.links.size());

  // Gravity enters as an equivalent upward base acceleration.
  std::vector<Vec6> a(nl);
  {
    Vec6 a0 = Vec6::Zero();
    if (model.floating_base) a0 = udot.head<6>();
    a0.head<3>() -= cache.x_world_link[0].rot.transpose() * model.gravity;
    a[0] = a0;
    for (int i = 1; i < nl; ++i) {
      const LinkSpec& link = model.links[i];
      const SpatialTransform x_link_parent = cache.x_parent_link[i].inverse();
      Vec6 ai = x_link_parent.apply_motion(a[link.parent]);
      if (link.joint_index >= 0) {
        const Vec6 s = joint_subspace(link);
        ai += s * udot[model.vrow(link.joint_index)];
        ai += cross_motion(cache.v_body[i]) * (s * state.qdot[link.joint_index]);
      }
      a[i] = ai;
    }
  }

  // Net force on each link, then subtract applied external wrenches.
  std::vector<Vec6> f(nl);
  for (int i = 0; i < nl; ++i) {
    const Mat6 inertia = model.links[i].inertia.matrix();
    f[i] = inertia * a[i] + cross_force(cache.v_body[i]) * (inertia * cache.v_body[i]);
  }
  for (const auto& [side, wrench] : external) {
    const FootGeometry& foot = model.foot(side);
    const SpatialTransform x_foot_frame =
        wrench.frame == WrenchFrame::FootCom
            ? SpatialTransform::from_pose(Mat3::Identity(),
                                          model.links[foot.link].inertia.com)
            : foot_frame_transform(foot, wrench.frame);
    f[foot.link] -= x_foot_frame.apply_force(wrench.vec());
  }

  VecX tau = VecX::Zero(model.nv());
  for (int i = nl - 1; i >= 1; --i) {
    const LinkSpec& link = model.links[i];
    if (link.joint_index >= 0)
      tau[model.vrow(link.joint_index)] = joint_subspace(link).dot(f[i]);
    f[link.parent] += cache.x_parent_link[i].apply_force(f[i]);
  }
  if (model.floating_base) tau.head<6>() = f[0];
  return tau;
}

VecX friction_torque(const FrictionParams& params, const VecX& qdot) {
  if (params.viscous.size() != qdot.size() || params.coulomb.size() != qdot.size())
    throw std::invalid_argument("friction_torque: parameter/velocity size mismatch");
  return -(params.viscous.array() * qdot.array() +
           params.coulomb.array() * (qdot.array() / params.smoothing_vel).tanh())
              .matrix();
}

GeneralizedState integrate_state(const RobotModel& model, const GeneralizedState& state,
                                 const VecX& u, double dt) {
  GeneralizedState next = state;
  next.set_velocity(model, u);
  if (model.floating_base) {
    next.base_pos += state.base_rot * next.base_lin_vel * dt;
    const Vec3 w = next.base_ang_vel;
    if (w.norm() > 0.0) next.base_rot = state.base_rot * axis_angle(w, w.norm() * dt);
  }
  next.q += next.qdot * dt;
  return next;
}

Vec3 com_position(const RobotModel& model, const KinCache& cache) {
  Vec3 weighted = Vec3::Zero();
  for (size_t i = 0; i < model.links.size(); ++i) {
    const auto& x = cache.x_world_link[i];
    weighted += model.links[i].inertia.mass *
                (x.origin_in_dst() + x.rot * model.links[i].inertia.com);
  }
  return weighted / model.total_mass;
}

double kinetic_energy(const RobotModel& model, const GeneralizedState& state) {
  const VecX u = state.velocity(model);
  return 0.5 * u.dot(mass_matrix(model, state) * u);
}

double potential_energy(const RobotModel& model, const GeneralizedState& state) {
  const KinCache cache = forward_kinematics(model, state);
  double pe = 0.0;
  for (size_t i = 0; i < model.links.size(); ++i) {
    const auto& x = cache.x_world_link[i];
    const Vec3 com_w = x.origin_in_dst() + x.rot * model.links[i].inertia.com;
    pe -= model.links[i].inertia.mass * model.gravity.dot(com_w);
  }
  return pe;
}

}  // namespace proprio
