#pragma once

// Load-shared coupled dynamics of one agent and the leader error dynamics.
//
//   M̃ q̈ + C̃ q̇ + g̃ = J_Oiᵀ u
//   M̃ = c M_O J_iO J + J_Oiᵀ M_i J
//   C̃ = J_Oiᵀ (M_i J̇ + C_i J) + c M_O (J_iO J̇ + J̇_iO J) + c C_O J_iO J
//   g̃ = c g_O + J_Oiᵀ g_i
//
// All object-side matrices are restricted to the agent's task rows.

#include "coopnmpc/agent_model.hpp"
#include "coopnmpc/object_model.hpp"

#include <Eigen/QR>

namespace coopnmpc {

struct CoupledTerms {
  JMat Mtilde;  ///< m × n
  JMat Ctilde;  ///< m × n
  JVec gtilde;  ///< m
  JMat J;       ///< agent Jacobian, m × n
  JMat Jdot;
  JMat J_iO;    ///< restricted coupling Jacobian, m × m
  JMat J_Oi;
  JMat J_iO_dot;
};

namespace detail {

inline JMat restrict(const std::vector<int>& rows, const Mat6& A) {
  const int m = static_cast<int>(rows.size());
  JMat out(m, m);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < m; ++c) out(r, c) = A(rows[r], rows[c]);
  return out;
}

inline JVec restrict(const std::vector<int>& rows, const Vec6& a) {
  const int m = static_cast<int>(rows.size());
  JVec out(m);
  for (int r = 0; r < m; ++r) out[r] = a[rows[r]];
  return out;
}

}  // namespace detail

/// Coupled terms for agent `p` carrying share c_i of object `obj`.
/// `check_floor` enforces q ∈ Q̃_i.
inline CoupledTerms coupled_terms(const AgentParams& p, const ObjectParams& obj, const JVec& q, const JVec& qdot,
                                  bool check_floor = true) {
  const auto& rows = p.task_rows;
  const double c = p.load_share;
  const auto ts = task_space_terms(p, q, qdot, check_floor);
  CoupledTerms t;
  t.J = geometric_jacobian(p, q);
  t.Jdot = jacobian_derivative(p, q, qdot);
  const auto cj = coupling_jacobians(p, q);
  t.J_iO = detail::restrict(rows, cj.J_iO);
  t.J_Oi = detail::restrict(rows, cj.J_Oi);
  t.J_iO_dot = detail::restrict(rows, coupling_jacobian_derivative(p, q, qdot));

  const ObjectPose x = object_pose_from_agent(p, q);
  const ObjectTwist v = object_twist_from_agent(p, q, qdot);
  const auto ot = object_dynamics_terms(obj, x, v);
  const JMat M_O = detail::restrict(rows, ot.M_O);
  const JMat C_O = detail::restrict(rows, ot.C_O);
  const JVec g_O = detail::restrict(rows, ot.g_O);

  const JMat MOiO = c * M_O * t.J_iO;
  t.Mtilde = MOiO * t.J + t.J_Oi.transpose() * ts.M * t.J;
  t.Ctilde = t.J_Oi.transpose() * (ts.M * t.Jdot + ts.CJ) + MOiO * t.Jdot + c * M_O * t.J_iO_dot * t.J +
             c * C_O * t.J_iO * t.J;
  t.gtilde = c * g_O + t.J_Oi.transpose() * ts.g;
  return t;
}

/// Right pseudo-inverse M̂ = M̃ᵀ (M̃ M̃ᵀ)⁻¹. Throws when M̃ loses row rank.
inline JMat right_pseudo_inverse(const JMat& Mt) {
  const Eigen::CompleteOrthogonalDecomposition<JMat> cod(Mt);
  if (cod.rank() < Mt.rows()) throw SingularityError("coupled inertia lost row rank");
  return cod.pseudoInverse();
}

/// q̈ = M̂ (J_Oiᵀ u − C̃ q̇ − g̃), solved as a minimum-norm least-squares problem.
inline JVec coupled_acceleration(const CoupledTerms& t, const JVec& qdot, const JVec& u) {
  const JVec rhs = t.J_Oi.transpose() * u - t.Ctilde * qdot - t.gtilde;
  const Eigen::CompleteOrthogonalDecomposition<JMat> cod(t.Mtilde);
  if (cod.rank() < t.Mtilde.rows()) throw SingularityError("coupled inertia lost row rank");
  JVec qdd = cod.solve(rhs);
  if (!qdd.allFinite()) throw SingularityError("non-finite coupled acceleration");
  return qdd;
}

struct StateDerivative {
  JVec qdot;
  JVec qddot;
};

/// ẋ_i = f̃_i(x_i, u_i).
inline StateDerivative forward_dynamics(const AgentParams& p, const ObjectParams& obj, const AgentState& x,
                                        const JVec& u, bool check_floor = true) {
  const auto t = coupled_terms(p, obj, x.q, x.qdot, check_floor);
  return {x.qdot, coupled_acceleration(t, x.qdot, u)};
}

/// Input holding the agent at rest: J_Oiᵀ u = g̃ at q̇ = 0, i.e. u = J_iOᵀ g̃.
inline JVec equilibrium_input(const AgentParams& p, const ObjectParams& obj, const JVec& q, bool check_floor = true) {
  const auto t = coupled_terms(p, obj, q, JVec::Zero(q.size()), check_floor);
  return t.J_iO.transpose() * t.gtilde;
}

/// e = [x_O − x_des; v_O] on the task rows.
inline VecX error_state(const AgentParams& leader, const JVec& q, const JVec& qdot, const VecX& x_des) {
  const int m = leader.task_dim();
  VecX e(2 * m);
  e.head(m) = task_coordinates(leader.task_rows, object_pose_from_agent(leader, q)) - x_des;
  e.tail(m) = task_twist(leader.task_rows, object_twist_from_agent(leader, q, qdot));
  return e;
}

/// ė = [J_Or⁻¹ J_1O J_1 q̇; J_1O J_1 q̈ + (J_1O J̇_1 + J̇_1O J_1) q̇].
inline VecX error_dynamics(const AgentParams& leader, const ObjectParams& obj, const AgentState& x, const JVec& u,
                           bool check_floor = true) {
  const auto t = coupled_terms(leader, obj, x.q, x.qdot, check_floor);
  const JVec qdd = coupled_acceleration(t, x.qdot, u);
  const ObjectPose pose = object_pose_from_agent(leader, x.q);
  require_euler_regular(pose.eta_O, "object");
  Mat6 J_Or = Mat6::Identity();
  J_Or.bottomRightCorner<3, 3>() = euler_rate_jacobian(pose.eta_O);
  const JMat J_Or_r = detail::restrict(leader.task_rows, J_Or);
  const int m = leader.task_dim();
  const JVec vO = t.J_iO * t.J * x.qdot;
  VecX de(2 * m);
  de.head(m) = J_Or_r.lu().solve(vO);
  de.tail(m) = t.J_iO * t.J * qdd + (t.J_iO * t.Jdot + t.J_iO_dot * t.J) * x.qdot;
  return de;
}

}  // namespace coopnmpc
