#pragma once

// Constraint sets as labelled residual vectors. Convention: value ≤ 0 means
// satisfied.

#include "coopnmpc/agent_model.hpp"
#include "coopnmpc/object_model.hpp"

#include <algorithm>
#include <string>
#include <vector>

namespace coopnmpc {

struct ConstraintResiduals {
  std::vector<std::string> labels;
  std::vector<double> values;

  void add(std::string label, double value) {
    labels.push_back(std::move(label));
    values.push_back(value);
  }
  std::size_t size() const { return values.size(); }
  double max_value() const {
    return values.empty() ? -kInf : *std::max_element(values.begin(), values.end());
  }
  bool satisfied(double tol = 0.0) const { return max_value() <= tol; }
  VecX vector() const { return Eigen::Map<const VecX>(values.data(), static_cast<int>(values.size())); }
  /// Label of the largest residual, or empty when there are none.
  std::string worst() const {
    if (values.empty()) return {};
    return labels[std::max_element(values.begin(), values.end()) - values.begin()];
  }
};

struct TerminalSetParams {
  MatX P;
  double eps = 1e-2;
};

/// Everything agent i needs to know about its surroundings at one time instant.
struct StateConstraintContext {
  std::vector<Ellipsoid> obstacles;
  std::vector<Ellipsoid> other_bodies;  ///< bounding ellipsoids of the other agents
  std::vector<std::string> other_labels; ///< optional row label per other body, e.g. "agent[a2].body[0]"
  const ObjectParams* object = nullptr; ///< set for the leader: object tilt and object–obstacle rows
  double workspace_radius = kInf;
};

/// U_i: torque norm, torque-rate norm and per-component input boxes.
inline ConstraintResiduals input_residuals(const AgentParams& p, const JVec& q, const JVec& qdot, const JVec& u,
                                           const JVec& udot) {
  ConstraintResiduals r;
  const auto& L = p.limits;
  if (std::isfinite(L.torque_norm) || std::isfinite(L.torque_rate_norm)) {
    const JMat J = geometric_jacobian(p, q);
    if (std::isfinite(L.torque_norm)) r.add("torque_norm", (J.transpose() * u).norm() - L.torque_norm);
    if (std::isfinite(L.torque_rate_norm)) {
      const JMat Jd = jacobian_derivative(p, q, qdot);
      r.add("torque_rate_norm", (Jd.transpose() * u + J.transpose() * udot).norm() - L.torque_rate_norm);
    }
  }
  if (std::isfinite(L.input_component))
    for (int j = 0; j < u.size(); ++j) r.add("u_box[" + std::to_string(j) + "]", std::abs(u[j]) - L.input_component);
  return r;
}

/// X_i: tilt, joint-velocity, arm-velocity, joint-box, singularity, collision
/// and (leader only) object rows.
inline ConstraintResiduals state_residuals(const AgentParams& p, const AgentState& x, const StateConstraintContext& ctx) {
  ConstraintResiduals r;
  const auto& L = p.limits;
  const VecX full = full_configuration<double>(p, x.q);

  r.add("base_tilt_hi", full[4] - L.tilt);
  r.add("base_tilt_lo", -full[4] - L.tilt);

  double arm_sq = 0.0;
  for (int k = 0; k < p.dof(); ++k) {
    if (std::isfinite(L.joint_velocity)) {
      r.add("qdot_hi[" + std::to_string(k) + "]", x.qdot[k] - L.joint_velocity);
      r.add("qdot_lo[" + std::to_string(k) + "]", -x.qdot[k] - L.joint_velocity);
    }
    if (p.active_joints[k] >= kBaseCoords) arm_sq += x.qdot[k] * x.qdot[k];
  }
  if (std::isfinite(L.arm_velocity_norm)) r.add("arm_velocity_norm", std::sqrt(arm_sq) - L.arm_velocity_norm);

  for (int k = 0; k < p.dof(); ++k) {
    if (L.joint_lower.size() == p.dof() && std::isfinite(L.joint_lower[k]))
      r.add("q_lo[" + std::to_string(k) + "]", L.joint_lower[k] - x.q[k]);
    if (L.joint_upper.size() == p.dof() && std::isfinite(L.joint_upper[k]))
      r.add("q_hi[" + std::to_string(k) + "]", x.q[k] - L.joint_upper[k]);
  }

  r.add("singularity", L.singularity_floor - singularity_measure(p, x.q));

  const auto bodies = agent_ellipsoids(p, x.q);
  for (std::size_t b = 0; b < bodies.size(); ++b) {
    for (std::size_t z = 0; z < ctx.obstacles.size(); ++z)
      r.add("obstacle[" + std::to_string(z) + "].body[" + std::to_string(b) + "]",
            -ellipsoid_margin(ctx.obstacles[z], bodies[b]));
    const bool named = ctx.other_labels.size() == ctx.other_bodies.size();
    for (std::size_t o = 0; o < ctx.other_bodies.size(); ++o)
      r.add((named ? ctx.other_labels[o] : "agent_body[" + std::to_string(o) + "]") + ".body[" + std::to_string(b) + "]",
            -ellipsoid_margin(ctx.other_bodies[o], bodies[b]));
  }
  if (std::isfinite(ctx.workspace_radius)) r.add("workspace_base", full.head<3>().norm() - ctx.workspace_radius);

  if (ctx.object) {
    const ObjectPose pose = object_pose_from_agent(p, x.q);
    r.add("object_tilt_hi", pose.eta_O.theta - L.tilt);
    r.add("object_tilt_lo", -pose.eta_O.theta - L.tilt);
    const Ellipsoid body = object_ellipsoid(*ctx.object, pose);
    for (std::size_t z = 0; z < ctx.obstacles.size(); ++z)
      r.add("object_obstacle[" + std::to_string(z) + "]", -ellipsoid_margin(ctx.obstacles[z], body));
    if (std::isfinite(ctx.workspace_radius)) r.add("workspace_object", pose.p_O.norm() - ctx.workspace_radius);
  }
  return r;
}

struct TerminalMembership {
  bool member;
  double residual;
};

/// F_1 = {e : eᵀ P e ≤ ε}.
inline TerminalMembership terminal_membership(const TerminalSetParams& tp, const VecX& e) {
  const double r = e.dot(tp.P * e) - tp.eps;
  return {r <= 0.0, r};
}

struct FeasibilityReport {
  bool ok = true;
  std::vector<std::string> violations;  ///< "agent: label = value"
  explicit operator bool() const { return ok; }
};

/// Pointwise membership of the current team configuration in the hard
/// constraint sets (singularity, joint boxes, tilt, collisions).
inline FeasibilityReport feasibility_assumption_check(const std::vector<AgentParams>& team, const std::vector<JVec>& qs,
                                                      const ObjectParams& object, const std::vector<Ellipsoid>& obstacles,
                                                      double workspace_radius = kInf) {
  FeasibilityReport rep;
  std::vector<std::vector<Ellipsoid>> bodies;
  for (std::size_t i = 0; i < team.size(); ++i) bodies.push_back(agent_ellipsoids(team[i], qs[i]));
  for (std::size_t i = 0; i < team.size(); ++i) {
    StateConstraintContext ctx;
    ctx.obstacles = obstacles;
    ctx.workspace_radius = workspace_radius;
    if (i == 0) ctx.object = &object;
    for (std::size_t j = 0; j < team.size(); ++j)
      if (j != i) ctx.other_bodies.insert(ctx.other_bodies.end(), bodies[j].begin(), bodies[j].end());
    // velocity rows do not belong to a configuration check
    const auto r = state_residuals(team[i], {qs[i], JVec::Zero(qs[i].size())}, ctx);
    for (std::size_t k = 0; k < r.size(); ++k)
      if (r.values[k] > 0.0) {
        rep.ok = false;
        rep.violations.push_back(team[i].name + ": " + r.labels[k] + " = " + std::to_string(r.values[k]));
      }
  }
  return rep;
}

}  // namespace coopnmpc
