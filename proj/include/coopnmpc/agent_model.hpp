#pragma once

// Mobile manipulator: a rigid base with pose (p_B, η_B) carrying a planar
// chain of revolute joints whose axes are parallel to the base x axis.
//
// Full configuration: [x, y, z, φ, θ, ψ, α_1 … α_nα]. A subset of these
// coordinates is active (the agent's q_i); the rest are held at their
// nominal values. The task space is a subset of the twist rows
// [v_x, v_y, v_z, ω_x, ω_y, ω_z]. The ground vehicles with a 2-link arm use
// active = {x, y, α_1, α_2} and task = {v_x, v_y, v_z, ω_x}.
//
// Arm angles are measured from the base z axis: α = 0 points the arm
// straight up, and link k points along (0, −sin a_k, cos a_k) in the base
// frame with a_k = α_1 + … + α_k.

#include "coopnmpc/dual.hpp"
#include "coopnmpc/spatial_math.hpp"
#include "coopnmpc/types.hpp"

#include <Eigen/LU>

#include <array>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace coopnmpc {

inline constexpr int kBaseCoords = 6;

struct LinkParams {
  double length = 1.0;
  double mass = 0.2;
  Vec3 inertia = Vec3(0.02, 0.02, 0.001);  ///< principal moments in the link frame
  bool operator==(const LinkParams&) const = default;
};

/// Bounding ellipsoid attached to frame `frame` (0 = base, k = link k).
/// Center and semi-axes are expressed in that frame.
struct BodyEllipsoid {
  int frame = 0;
  Vec3 center = Vec3::Zero();
  Vec3 semi_axes = Vec3::Constant(0.1);
  bool operator==(const BodyEllipsoid&) const = default;
};

struct AgentLimits {
  double input_component = kInf;   ///< |u_j| ≤ bound, per wrench component
  double torque_norm = kInf;       ///< ‖Jᵀu‖ ≤ τ̄
  double torque_rate_norm = kInf;  ///< ‖J̇ᵀu + Jᵀu̇‖ ≤ τ̇̄
  double joint_velocity = kInf;    ///< |q̇_k| ≤ q̇̄
  double arm_velocity_norm = kInf; ///< ‖α̇‖ ≤ bound (1 when enabled)
  double singularity_floor = 1e-3; ///< ε in |det(J Jᵀ)| ≥ ε
  double tilt = 1.2;               ///< θ̄
  VecX joint_lower;                ///< per active joint, may be −inf
  VecX joint_upper;
  bool operator==(const AgentLimits& o) const {
    return input_component == o.input_component && torque_norm == o.torque_norm &&
           torque_rate_norm == o.torque_rate_norm && joint_velocity == o.joint_velocity &&
           arm_velocity_norm == o.arm_velocity_norm && singularity_floor == o.singularity_floor &&
           tilt == o.tilt && joint_lower.size() == o.joint_lower.size() &&
           joint_upper.size() == o.joint_upper.size() && joint_lower == o.joint_lower &&
           joint_upper == o.joint_upper;
  }
};

struct AgentParams {
  std::string name = "agent";
  double base_mass = 2.0;
  Vec3 base_inertia = Vec3(0.05, 0.05, 0.05);
  Vec3 arm_mount = Vec3::Zero();  ///< arm base in the base frame
  std::vector<LinkParams> links;
  std::vector<int> active_joints;  ///< indices into the full configuration
  VecX nominal_configuration;      ///< full-size; supplies inactive coordinates
  std::vector<int> task_rows;      ///< indices into [v; ω]
  Vec3 grasp_offset = Vec3::Zero();       ///< p^{E}_{O/E}
  Vec3 grasp_orientation = Vec3::Zero();  ///< η_{O/E}
  double load_share = 1.0;                ///< c_i
  double gravity = 9.81;
  AgentLimits limits;
  std::vector<BodyEllipsoid> ellipsoids;

  int full_dof() const { return kBaseCoords + static_cast<int>(links.size()); }
  int dof() const { return static_cast<int>(active_joints.size()); }
  int task_dim() const { return static_cast<int>(task_rows.size()); }

  bool operator==(const AgentParams& o) const {
    return name == o.name && base_mass == o.base_mass && base_inertia == o.base_inertia &&
           arm_mount == o.arm_mount && links == o.links && active_joints == o.active_joints &&
           nominal_configuration.size() == o.nominal_configuration.size() &&
           nominal_configuration == o.nominal_configuration && task_rows == o.task_rows &&
           grasp_offset == o.grasp_offset && grasp_orientation == o.grasp_orientation &&
           load_share == o.load_share && gravity == o.gravity && limits == o.limits &&
           ellipsoids == o.ellipsoids;
  }
};

/// Joint positions and velocities of one agent (active coordinates).
struct AgentState {
  JVec q;
  JVec qdot;
};

struct EndEffectorPose {
  Vec3 p_E;
  EulerAngles eta_E;
};

namespace detail {

template <typename S>
Vec3T<S> link_direction(const S& a) {
  using std::cos;
  using std::sin;
  return Vec3T<S>(S(0.0), -sin(a), cos(a));
}

template <typename S>
Vec3T<S> link_direction_derivative(const S& a) {
  using std::cos;
  using std::sin;
  return Vec3T<S>(S(0.0), -cos(a), -sin(a));
}

template <typename S>
std::vector<S> cumulative_angles(const AgentParams& p, const VecXT<S>& full) {
  std::vector<S> a(p.links.size());
  S acc(0.0);
  for (std::size_t k = 0; k < p.links.size(); ++k) {
    acc = acc + full[kBaseCoords + static_cast<int>(k)];
    a[k] = acc;
  }
  return a;
}

/// Point on link `j` (0-based) at fraction `frac` of its length, in the base
/// frame, plus its derivative with respect to each arm joint.
template <typename S>
void arm_point(const AgentParams& p, const std::vector<S>& a, int j, double frac, Vec3T<S>& point,
               MatXT<S>& dpoint) {
  const int na = static_cast<int>(p.links.size());
  point = p.arm_mount.cast<S>();
  dpoint = MatXT<S>::Zero(3, na);
  for (int k = 0; k <= j; ++k) {
    const double len = (k < j ? 1.0 : frac) * p.links[k].length;
    point += link_direction(a[k]) * S(len);
    const Vec3T<S> dd = link_direction_derivative(a[k]) * S(len);
    for (int m = 0; m <= k; ++m) dpoint.col(m) += dd;
  }
}

}  // namespace detail

/// Expand active coordinates to the full configuration.
template <typename S>
VecXT<S> full_configuration(const AgentParams& p, const JVecT<S>& q) {
  VecXT<S> full(p.full_dof());
  for (int i = 0; i < p.full_dof(); ++i) full[i] = S(p.nominal_configuration[i]);
  for (int i = 0; i < p.dof(); ++i) full[p.active_joints[i]] = q[i];
  return full;
}

template <typename S>
struct KinematicsT {
  Vec3T<S> p_E;
  Vec3T<S> eta_E;  ///< η_B + k_η(α)
  Mat3T<S> R_E;    ///< R_B Rx(Σα)
  Mat3T<S> R_B;
  Vec3T<S> k_p;    ///< end-effector offset in the base frame
};

template <typename S>
KinematicsT<S> kinematics(const AgentParams& p, const VecXT<S>& full) {
  KinematicsT<S> k;
  const Vec3T<S> p_B = full.template head<3>();
  const Vec3T<S> eta_B = full.template segment<3>(3);
  k.R_B = rot_xyz<S>(eta_B);
  const auto a = detail::cumulative_angles<S>(p, full);
  MatXT<S> dk;
  if (p.links.empty()) {
    k.k_p = p.arm_mount.cast<S>();
  } else {
    detail::arm_point<S>(p, a, static_cast<int>(p.links.size()) - 1, 1.0, k.k_p, dk);
  }
  const S total = p.links.empty() ? S(0.0) : a.back();
  k.p_E = p_B + k.R_B * k.k_p;
  k.eta_E = eta_B + Vec3T<S>(total, S(0.0), S(0.0));
  k.R_E = k.R_B * rot_x<S>(total);
  return k;
}

/// p_E = p_B + R_B k_p(α), η_E = η_B + k_η(α).
inline EndEffectorPose forward_kinematics(const AgentParams& p, const JVec& q) {
  const auto k = kinematics<double>(p, full_configuration<double>(p, q));
  return {k.p_E, EulerAngles::from(k.eta_E)};
}

/// Full 6 × (6 + nα) Jacobian
///   [ I₃  −S(R_B k_p) J_B   R_B ∂k_p/∂α ]
///   [ 0        J_B          R_B J_A     ]
template <typename S>
MatXT<S> full_jacobian(const AgentParams& p, const VecXT<S>& full) {
  const int na = static_cast<int>(p.links.size());
  MatXT<S> J = MatXT<S>::Zero(6, p.full_dof());
  const Vec3T<S> eta_B = full.template segment<3>(3);
  const Mat3T<S> R_B = rot_xyz<S>(eta_B);
  const Mat3T<S> J_B = euler_rate_jacobian<S>(eta_B);
  const auto a = detail::cumulative_angles<S>(p, full);
  Vec3T<S> k_p = p.arm_mount.cast<S>();
  MatXT<S> dk = MatXT<S>::Zero(3, na);
  if (na > 0) detail::arm_point<S>(p, a, na - 1, 1.0, k_p, dk);

  J.template block<3, 3>(0, 0).setIdentity();
  J.template block<3, 3>(0, 3) = -skew<S>(R_B * k_p) * J_B;
  J.template block<3, 3>(3, 3) = J_B;
  for (int m = 0; m < na; ++m) {
    J.template block<3, 1>(0, kBaseCoords + m) = R_B * dk.col(m);
    J.template block<3, 1>(3, kBaseCoords + m) = R_B.col(0);  // R_B J_A, J_A = [e_x … e_x]
  }
  return J;
}

/// Task-space Jacobian J_i(q): rows = task rows, columns = active joints.
template <typename S>
JMatT<S> geometric_jacobian(const AgentParams& p, const JVecT<S>& q) {
  const MatXT<S> full = full_jacobian<S>(p, full_configuration<S>(p, q));
  JMatT<S> J(p.task_dim(), p.dof());
  for (int r = 0; r < p.task_dim(); ++r)
    for (int c = 0; c < p.dof(); ++c) J(r, c) = full(p.task_rows[r], p.active_joints[c]);
  return J;
}
inline JMat geometric_jacobian(const AgentParams& p, const JVec& q) {
  return geometric_jacobian<double>(p, q);
}

/// Seed q + ε·direction with dual numbers.
inline JVecT<Dual1> seed(const JVec& q, const JVec& direction) {
  JVecT<Dual1> out(q.size());
  for (int i = 0; i < q.size(); ++i) out[i] = Dual1(q[i], direction[i]);
  return out;
}

template <typename M>
JMat derivative_part(const M& m) {
  JMat out(m.rows(), m.cols());
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) out(r, c) = m(r, c).d;
  return out;
}

/// J̇_i(q, q̇) = d/dt J_i(q + t q̇).
inline JMat jacobian_derivative(const AgentParams& p, const JVec& q, const JVec& qdot) {
  return derivative_part(geometric_jacobian<Dual1>(p, seed(q, qdot)));
}

/// det(J Jᵀ) over the task rows.
inline double singularity_measure(const AgentParams& p, const JVec& q) {
  const JMat J = geometric_jacobian(p, q);
  const JMat JJt = J * J.transpose();
  return JJt.determinant();
}

template <typename S>
struct BodyFrame {
  Vec3T<S> com;
  Mat3T<S> R;
  MatXT<S> Jv;  ///< 3 × full_dof
  MatXT<S> Jw;
  double mass;
  Vec3 inertia;
};

/// Base and link frames with their center-of-mass Jacobians.
template <typename S>
std::vector<BodyFrame<S>> body_frames(const AgentParams& p, const VecXT<S>& full) {
  const int nf = p.full_dof();
  const int na = static_cast<int>(p.links.size());
  const Vec3T<S> p_B = full.template head<3>();
  const Vec3T<S> eta_B = full.template segment<3>(3);
  const Mat3T<S> R_B = rot_xyz<S>(eta_B);
  const Mat3T<S> J_B = euler_rate_jacobian<S>(eta_B);
  const auto a = detail::cumulative_angles<S>(p, full);

  std::vector<BodyFrame<S>> bodies;
  bodies.reserve(na + 1);

  BodyFrame<S> base{p_B, R_B, MatXT<S>::Zero(3, nf), MatXT<S>::Zero(3, nf), p.base_mass, p.base_inertia};
  base.Jv.template block<3, 3>(0, 0).setIdentity();
  base.Jw.template block<3, 3>(0, 3) = J_B;
  bodies.push_back(std::move(base));

  for (int j = 0; j < na; ++j) {
    Vec3T<S> c;
    MatXT<S> dc;
    detail::arm_point<S>(p, a, j, 0.5, c, dc);
    BodyFrame<S> link{p_B + R_B * c, R_B * rot_x<S>(a[j]), MatXT<S>::Zero(3, nf), MatXT<S>::Zero(3, nf),
                      p.links[j].mass, p.links[j].inertia};
    link.Jv.template block<3, 3>(0, 0).setIdentity();
    link.Jv.template block<3, 3>(0, 3) = -skew<S>(R_B * c) * J_B;
    link.Jw.template block<3, 3>(0, 3) = J_B;
    for (int m = 0; m < na; ++m) {
      link.Jv.col(kBaseCoords + m) = R_B * dc.col(m);
      if (m <= j) link.Jw.col(kBaseCoords + m) = R_B.col(0);
    }
    bodies.push_back(std::move(link));
  }
  return bodies;
}

/// Joint-space inertia B(q) on the active coordinates.
template <typename S>
JMatT<S> mass_matrix(const AgentParams& p, const JVecT<S>& q) {
  const auto bodies = body_frames<S>(p, full_configuration<S>(p, q));
  const int n = p.dof();
  JMatT<S> B = JMatT<S>::Zero(n, n);
  for (const auto& b : bodies) {
    MatXT<S> Jv(3, n), Jw(3, n);
    for (int c = 0; c < n; ++c) {
      Jv.col(c) = b.Jv.col(p.active_joints[c]);
      Jw.col(c) = b.Jw.col(p.active_joints[c]);
    }
    const Mat3T<S> Iw = b.R * b.inertia.template cast<S>().asDiagonal() * b.R.transpose();
    B += (Jv.transpose() * Jv) * S(b.mass) + Jw.transpose() * Iw * Jw;
  }
  return B;
}

/// Potential energy Σ m g z_com.
inline double potential_energy(const AgentParams& p, const JVec& q) {
  double U = 0.0;
  for (const auto& b : body_frames<double>(p, full_configuration<double>(p, q))) U += b.mass * p.gravity * b.com.z();
  return U;
}

struct JointSpaceTerms {
  JMat B;   ///< inertia
  JMat N;   ///< Coriolis/centrifugal, Christoffel factorization
  JVec g_q; ///< ∂U/∂q
};

namespace detail {

/// ∂B/∂q_k for each active coordinate k. Inertia is invariant to base
/// translation, so those derivatives are zero without evaluation.
inline std::vector<JMat> mass_matrix_partials(const AgentParams& p, const JVec& q) {
  const int n = p.dof();
  std::vector<JMat> dB(n, JMat::Zero(n, n));
  for (int k = 0; k < n; ++k) {
    if (p.active_joints[k] < 3) continue;
    JVec e = JVec::Zero(n);
    e[k] = 1.0;
    dB[k] = derivative_part(mass_matrix<Dual1>(p, seed(q, e)));
  }
  return dB;
}

}  // namespace detail

/// B(q) q̈ + N(q, q̇) q̇ + g_q(q) = τ.
inline JointSpaceTerms joint_space_terms(const AgentParams& p, const JVec& q, const JVec& qdot) {
  const int n = p.dof();
  JointSpaceTerms t;
  t.B = mass_matrix<double>(p, q);
  const auto dB = detail::mass_matrix_partials(p, q);
  t.N = JMat::Zero(n, n);
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += 0.5 * (dB[i](k, j) + dB[j](k, i) - dB[k](i, j)) * qdot[i];
      t.N(k, j) = s;
    }
  t.g_q = JVec::Zero(n);
  for (const auto& b : body_frames<double>(p, full_configuration<double>(p, q)))
    for (int c = 0; c < n; ++c) t.g_q[c] += b.mass * p.gravity * b.Jv(2, p.active_joints[c]);
  return t;
}

struct TaskSpaceTerms {
  JMat M;   ///< [J B⁻¹ Jᵀ]⁻¹
  JMat CJ;  ///< C_i J_i = M [J B⁻¹ N − J̇], so that C_i v_i = CJ q̇
  JVec g;   ///< M J B⁻¹ g_q
};

inline void require_regular(const AgentParams& p, const JVec& q) {
  const double m = singularity_measure(p, q);
  if (!(std::abs(m) >= p.limits.singularity_floor))
    throw SingularityError(p.name + ": |det(J Jᵀ)| = " + std::to_string(m) + " below floor " +
                           std::to_string(p.limits.singularity_floor));
}

/// Task-space terms M_i, C_i J_i, g_i. Throws SingularityError outside Q̃_i
/// unless `check_floor` is false.
inline TaskSpaceTerms task_space_terms(const AgentParams& p, const JVec& q, const JVec& qdot,
                                       bool check_floor = true) {
  if (check_floor) require_regular(p, q);
  const auto js = joint_space_terms(p, q, qdot);
  const JMat J = geometric_jacobian(p, q);
  const JMat Jdot = jacobian_derivative(p, q, qdot);
  const Eigen::LDLT<JMat> Bf(js.B);
  const JMat BinvJt = Bf.solve(JMat(J.transpose()));
  const JMat Lambda = J * BinvJt;
  TaskSpaceTerms t;
  t.M = Lambda.inverse();
  t.M = 0.5 * (t.M + t.M.transpose()).eval();
  t.CJ = t.M * (J * Bf.solve(js.N) - Jdot);
  t.g = t.M * (J * Bf.solve(js.g_q));
  return t;
}

/// τ = Jᵀ u (null-space term τ̄ ≡ 0).
inline JVec input_map(const AgentParams& p, const JVec& q, const JVec& u) {
  return geometric_jacobian(p, q).transpose() * u;
}

/// Link and base bounding ellipsoids in world coordinates.
inline std::vector<Ellipsoid> agent_ellipsoids(const AgentParams& p, const JVec& q) {
  const auto bodies = body_frames<double>(p, full_configuration<double>(p, q));
  const VecX full = full_configuration<double>(p, q);
  const Mat3 R_B = rot_xyz(EulerAngles::from(full.segment<3>(3)));
  const auto a = detail::cumulative_angles<double>(p, full);
  std::vector<Ellipsoid> out;
  out.reserve(p.ellipsoids.size());
  for (const auto& e : p.ellipsoids) {
    Vec3 origin;
    Mat3 R;
    if (e.frame == 0) {
      origin = full.head<3>();
      R = R_B;
    } else {
      // link frame origin sits at the link's proximal joint
      Vec3 joint;
      MatX dj;
      detail::arm_point<double>(p, a, e.frame - 1, 0.0, joint, dj);
      origin = full.head<3>() + R_B * joint;
      R = R_B * rot_x(a[e.frame - 1]);
    }
    out.push_back(Ellipsoid::from_axes(origin + R * e.center, e.semi_axes, R));
  }
  return out;
}

}  // namespace coopnmpc
