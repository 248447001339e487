#pragma once

// Parametric agent models.

#include "coopnmpc/agent_model.hpp"

#include <numbers>

namespace coopnmpc {

/// Ground vehicle translating in the plane with a two-link arm in the base
/// y-z plane. Active joints (x, y, α_1, α_2); task rows (v_x, v_y, v_z, ω_x).
inline AgentParams planar_mobile_manipulator(const std::string& name, double l1, double l2,
                                             double base_height) {
  AgentParams p;
  p.name = name;
  p.base_mass = 2.0;
  p.base_inertia = Vec3(0.04, 0.04, 0.04);
  p.links = {LinkParams{l1, 0.25, Vec3(0.25 * l1 * l1 / 12.0, 1e-3, 0.25 * l1 * l1 / 12.0)},
             LinkParams{l2, 0.2, Vec3(0.2 * l2 * l2 / 12.0, 1e-3, 0.2 * l2 * l2 / 12.0)}};
  p.active_joints = {0, 1, 6, 7};
  p.nominal_configuration = VecX::Zero(8);
  p.nominal_configuration[2] = base_height;
  p.task_rows = {0, 1, 2, 3};
  p.limits.joint_lower = VecX::Constant(4, -kInf);
  p.limits.joint_upper = VecX::Constant(4, kInf);
  p.ellipsoids = {BodyEllipsoid{0, Vec3::Zero(), Vec3::Constant(0.2)},
                  BodyEllipsoid{1, Vec3(0, 0, 0.5 * l1), Vec3(0.05, 0.05, 0.5 * l1)},
                  BodyEllipsoid{2, Vec3(0, 0, 0.5 * l2), Vec3(0.05, 0.05, 0.5 * l2)}};
  return p;
}

/// Floating base (all six coordinates active) with an n-link planar arm and
/// the full six-row task space.
inline AgentParams floating_manipulator(const std::string& name, const std::vector<double>& lengths) {
  AgentParams p;
  p.name = name;
  p.base_mass = 3.0;
  p.base_inertia = Vec3(0.06, 0.08, 0.1);
  p.arm_mount = Vec3(0.05, 0.02, 0.1);
  for (double l : lengths) p.links.push_back(LinkParams{l, 0.3, Vec3(0.3 * l * l / 12.0, 2e-3, 0.3 * l * l / 12.0)});
  const int n = kBaseCoords + static_cast<int>(lengths.size());
  for (int i = 0; i < n; ++i) p.active_joints.push_back(i);
  p.nominal_configuration = VecX::Zero(n);
  p.task_rows = {0, 1, 2, 3, 4, 5};
  p.limits.joint_lower = VecX::Constant(n, -kInf);
  p.limits.joint_upper = VecX::Constant(n, kInf);
  p.limits.singularity_floor = 0.0;
  p.ellipsoids = {BodyEllipsoid{0, Vec3::Zero(), Vec3(0.3, 0.2, 0.1)}};
  for (std::size_t k = 0; k < lengths.size(); ++k)
    p.ellipsoids.push_back(BodyEllipsoid{static_cast<int>(k) + 1, Vec3(0, 0, 0.5 * lengths[k]),
                                         Vec3(0.05, 0.05, 0.5 * lengths[k])});
  return p;
}

}  // namespace coopnmpc
