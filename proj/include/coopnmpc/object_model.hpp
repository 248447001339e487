#pragma once

// Rigidly grasped object: Newton–Euler terms, grasp kinematics and the
// agent/object coupling Jacobians.
//
// Agents whose task space is a subset of the six twist rows see the object
// through the same subset. `task_selection` builds the corresponding row
// selector S, and the restricted object terms are S (·) Sᵀ.

#include "coopnmpc/agent_model.hpp"
#include "coopnmpc/spatial_math.hpp"

#include <cmath>
#include <vector>

namespace coopnmpc {

struct ObjectParams {
  double mass = 1.0;
  Mat3 inertia = Mat3::Identity() * 0.004;  ///< body frame
  Vec3 semi_axes = Vec3::Constant(0.1);     ///< bounding ellipsoid, body-attached, centered at p_O
  double gravity = 9.81;
  bool operator==(const ObjectParams&) const = default;
};

struct ObjectPose {
  Vec3 p_O = Vec3::Zero();
  EulerAngles eta_O;

  Vec6 vec() const {
    Vec6 v;
    v << p_O, eta_O.vec();
    return v;
  }
  static ObjectPose from(const Vec6& v) { return {v.head<3>(), EulerAngles::from(v.tail<3>())}; }
};

struct ObjectTwist {
  Vec3 v_L = Vec3::Zero();
  Vec3 omega = Vec3::Zero();

  Vec6 vec() const {
    Vec6 v;
    v << v_L, omega;
    return v;
  }
  static ObjectTwist from(const Vec6& v) { return {v.head<3>(), v.tail<3>()}; }
};

struct ObjectTerms {
  Mat6 M_O;
  Mat6 C_O;
  Vec6 g_O;
  Mat6 J_Or;  ///< diag(I₃, J_B(η_O)): v_O = J_Or ẋ_O
};

/// Threshold on |cos θ| below which the Euler rate map is treated as singular.
inline constexpr double kRepresentationTolerance = 1e-9;

inline void require_euler_regular(const EulerAngles& eta, const char* what) {
  if (std::abs(std::cos(eta.theta)) < kRepresentationTolerance)
    throw SingularityError(std::string(what) + ": Euler representation singular (theta = ±pi/2)");
}

/// M_O v̇_O + C_O v_O + g_O = λ_O, with C_O's angular block S(ω) I_w so that
/// Ṁ_O − 2C_O is antisymmetric.
inline ObjectTerms object_dynamics_terms(const ObjectParams& obj, const ObjectPose& x, const ObjectTwist& v) {
  require_euler_regular(x.eta_O, "object");
  const Mat3 R = rot_xyz(x.eta_O);
  const Mat3 Iw = R * obj.inertia * R.transpose();
  ObjectTerms t;
  t.M_O.setZero();
  t.M_O.topLeftCorner<3, 3>() = obj.mass * Mat3::Identity();
  t.M_O.bottomRightCorner<3, 3>() = Iw;
  t.C_O.setZero();
  t.C_O.bottomRightCorner<3, 3>() = skew(v.omega) * Iw;
  t.g_O.setZero();
  t.g_O[2] = obj.mass * obj.gravity;
  t.J_Or.setIdentity();
  t.J_Or.bottomRightCorner<3, 3>() = euler_rate_jacobian(x.eta_O);
  return t;
}

inline Ellipsoid object_ellipsoid(const ObjectParams& obj, const ObjectPose& x) {
  return Ellipsoid::from_axes(x.p_O, obj.semi_axes, rot_xyz(x.eta_O));
}

/// p_O = p_E + R_E p^E_{O/E}, η_O = η_E + η_{O/E}.
inline ObjectPose object_pose_from_agent(const AgentParams& p, const JVec& q) {
  const auto k = kinematics<double>(p, full_configuration<double>(p, q));
  return {k.p_E + k.R_E * p.grasp_offset, EulerAngles::from(k.eta_E + p.grasp_orientation)};
}

/// p_{E/O} = p_E − p_O expressed in the world frame.
inline Vec3 grasp_lever(const AgentParams& p, const JVec& q) {
  const auto k = kinematics<double>(p, full_configuration<double>(p, q));
  return -(k.R_E * p.grasp_offset);
}

struct CouplingJacobians {
  Mat6 J_iO;  ///< v_O = J_iO v_E
  Mat6 J_Oi;  ///< inverse of J_iO
};

inline CouplingJacobians coupling_jacobians(const AgentParams& p, const JVec& q) {
  const Mat3 S = skew(grasp_lever(p, q));
  CouplingJacobians c;
  c.J_iO.setIdentity();
  c.J_iO.topRightCorner<3, 3>() = S;
  c.J_Oi.setIdentity();
  c.J_Oi.topRightCorner<3, 3>() = -S;
  return c;
}

/// Full-dimensional end-effector twist [v_E; ω_E] (zeros on non-task rows).
inline Vec6 end_effector_twist(const AgentParams& p, const JVec& q, const JVec& qdot) {
  const JVec v = geometric_jacobian(p, q) * qdot;
  Vec6 out = Vec6::Zero();
  for (int r = 0; r < p.task_dim(); ++r) out[p.task_rows[r]] = v[r];
  return out;
}

/// J̇_iO: the lever p_{E/O} rotates with the end effector, so its rate is ω × p_{E/O}.
inline Mat6 coupling_jacobian_derivative(const AgentParams& p, const JVec& q, const JVec& qdot) {
  const Vec3 omega = end_effector_twist(p, q, qdot).tail<3>();
  Mat6 d = Mat6::Zero();
  d.topRightCorner<3, 3>() = skew(Vec3(omega.cross(grasp_lever(p, q))));
  return d;
}

/// v_O = J_iO J_i q̇.
inline ObjectTwist object_twist_from_agent(const AgentParams& p, const JVec& q, const JVec& qdot) {
  return ObjectTwist::from(coupling_jacobians(p, q).J_iO * end_effector_twist(p, q, qdot));
}

/// G = [J_O1; …; J_ON] (6N × 6), so that λ_O = Gᵀ λ.
inline MatX grasp_matrix(const std::vector<AgentParams>& team, const std::vector<JVec>& qs) {
  MatX G(6 * team.size(), 6);
  for (std::size_t i = 0; i < team.size(); ++i) G.block<6, 6>(6 * i, 0) = coupling_jacobians(team[i], qs[i]).J_Oi;
  return G;
}

/// Row selector S (m × 6) for a task-row subset.
inline MatX task_selection(const std::vector<int>& rows) {
  MatX S = MatX::Zero(static_cast<int>(rows.size()), 6);
  for (std::size_t r = 0; r < rows.size(); ++r) S(r, rows[r]) = 1.0;
  return S;
}

/// Object coordinates [p_O; η_O] on the task rows.
inline VecX task_coordinates(const std::vector<int>& rows, const ObjectPose& x) {
  const Vec6 v = x.vec();
  VecX out(static_cast<int>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) out[r] = v[rows[r]];
  return out;
}

/// Inverse of `task_coordinates`, filling unselected coordinates from `base`.
inline ObjectPose pose_from_task_coordinates(const std::vector<int>& rows, const VecX& coords, const ObjectPose& base) {
  Vec6 v = base.vec();
  for (std::size_t r = 0; r < rows.size(); ++r) v[rows[r]] = coords[r];
  return ObjectPose::from(v);
}

inline VecX task_twist(const std::vector<int>& rows, const ObjectTwist& v) {
  const Vec6 t = v.vec();
  VecX out(static_cast<int>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) out[r] = t[rows[r]];
  return out;
}

inline ObjectTwist twist_from_task(const std::vector<int>& rows, const VecX& v) {
  Vec6 t = Vec6::Zero();
  for (std::size_t r = 0; r < rows.size(); ++r) t[rows[r]] = v[r];
  return ObjectTwist::from(t);
}

}  // namespace coopnmpc
