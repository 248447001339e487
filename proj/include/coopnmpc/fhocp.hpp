#pragma once

// Leader and follower finite-horizon optimal control problems, transcribed by
// single shooting: piecewise-constant inputs on a uniform grid, RK4 sub-steps,
// Simpson quadrature of the running cost, constraints at the nodes.

#include "coopnmpc/constraints.hpp"
#include "coopnmpc/coupled_dynamics.hpp"
#include "coopnmpc/sqp.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <functional>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace coopnmpc {

struct HorizonGrid {
  double h = 0.1;    ///< sampling period (s)
  double T_p = 0.5;  ///< prediction horizon (s)
  int substeps = 2;  ///< RK4 steps per interval

  int K() const { return static_cast<int>(std::lround(T_p / h)); }

  void validate() const {
    if (!(h > 0.0) || !(T_p >= h - 1e-12)) throw std::invalid_argument("horizon grid: need 0 < h <= T_p");
    if (std::abs(T_p / h - K()) > 1e-9 * std::max(1, K()))
      throw std::invalid_argument("horizon grid: T_p must be an integer multiple of h");
    if (substeps < 2 || substeps % 2) throw std::invalid_argument("horizon grid: substeps must be even and >= 2");
  }

  std::vector<double> node_times(double t0) const {
    std::vector<double> t(K() + 1);
    for (int k = 0; k <= K(); ++k) t[k] = t0 + k * h;
    return t;
  }
};

struct ShootingTrajectory {
  std::vector<AgentState> nodes;  ///< K + 1 states
  std::vector<AgentState> mids;   ///< state at the middle of each interval
};

inline AgentState rk4_step(const AgentParams& p, const ObjectParams& obj, const AgentState& x, const JVec& u, double dt,
                           bool check_floor = false) {
  auto f = [&](const AgentState& s) { return forward_dynamics(p, obj, s, u, check_floor); };
  const auto k1 = f(x);
  const auto k2 = f({x.q + dt / 2 * k1.qdot, x.qdot + dt / 2 * k1.qddot});
  const auto k3 = f({x.q + dt / 2 * k2.qdot, x.qdot + dt / 2 * k2.qddot});
  const auto k4 = f({x.q + dt * k3.qdot, x.qdot + dt * k3.qddot});
  return {x.q + dt / 6 * (k1.qdot + 2 * k2.qdot + 2 * k3.qdot + k4.qdot),
          x.qdot + dt / 6 * (k1.qddot + 2 * k2.qddot + 2 * k3.qddot + k4.qddot)};
}

/// Integrate from node `from`; `tr.nodes[from]` must hold the start state.
inline void rollout(const AgentParams& p, const ObjectParams& obj, const HorizonGrid& grid, const VecX& U, int from,
                    ShootingTrajectory& tr) {
  const int m = p.task_dim(), K = grid.K();
  const double dt = grid.h / grid.substeps;
  tr.nodes.resize(K + 1);
  tr.mids.resize(K);
  for (int k = from; k < K; ++k) {
    AgentState x = tr.nodes[k];
    const JVec u = U.segment(k * m, m);
    for (int s = 0; s < grid.substeps; ++s) {
      x = rk4_step(p, obj, x, u, dt);
      if (s + 1 == grid.substeps / 2) tr.mids[k] = x;
    }
    tr.nodes[k + 1] = x;
  }
}

/// Joint rates with which agent `p` at configuration q moves the object with
/// task twist v_O.
inline JVec joint_rates_for_object_twist(const AgentParams& p, const JVec& q, const VecX& v_O) {
  const JMat J = geometric_jacobian(p, q);
  const JMat J_Oi = detail::restrict(p.task_rows, coupling_jacobians(p, q).J_Oi);
  return Eigen::CompleteOrthogonalDecomposition<JMat>(J).solve(JVec(J_Oi * v_O));
}

/// States agent `p` passes through when it carries the object along the
/// task twists `v_nodes` (K + 1) and `v_mids` (K), starting from q0: the
/// midpoint rule on q̇ = J⁺ J_Oi v_O. Returns nodes 0..upto.
inline std::vector<AgentState> implied_states(const AgentParams& p, const JVec& q0, const std::vector<VecX>& v_nodes,
                                              const std::vector<VecX>& v_mids, double h, int upto) {
  std::vector<AgentState> out;
  JVec q = q0;
  for (int k = 0; k <= upto; ++k) {
    const JVec qd = joint_rates_for_object_twist(p, q, v_nodes[k]);
    out.push_back({q, qd});
    if (k == upto) break;
    const JVec q_mid = q + 0.5 * h * qd;
    q += h * joint_rates_for_object_twist(p, q_mid, v_mids[k]);
  }
  return out;
}

/// Input with which agent `p` at configuration q reproduces the object task
/// twist v_O and acceleration a_O through its own coupled dynamics.
inline JVec input_for_object_motion(const AgentParams& p, const ObjectParams& obj, const JVec& q, const VecX& v_O,
                                    const VecX& a_O) {
  const JMat J = geometric_jacobian(p, q);
  const JMat J_Oi = detail::restrict(p.task_rows, coupling_jacobians(p, q).J_Oi);
  const JVec vE = J_Oi * v_O;
  const JVec qd = Eigen::CompleteOrthogonalDecomposition<JMat>(J).solve(vE);
  const auto t = coupled_terms(p, obj, q, qd, false);
  const JVec aE = t.J_Oi * (a_O - t.J_iO_dot * vE);
  const JVec qdd = Eigen::CompleteOrthogonalDecomposition<JMat>(t.J).solve(JVec(aE - t.Jdot * qd));
  return t.J_iO.transpose() * (t.Mtilde * qdd + t.Ctilde * qd + t.gtilde);
}

enum class TerminalMode { Hard, Soft };

inline const char* to_string(TerminalMode m) { return m == TerminalMode::Hard ? "hard" : "soft"; }

enum class FhocpRole { Leader, Follower };

/// Residual rows contributed by stage k ∈ {0..K}: stage k depends on node k,
/// interval k (if k < K) and the input of interval k − 1.
struct StageBlock {
  std::vector<double> r;
  std::vector<double> ci;
};

using StageFunction = std::function<void(int k, const ShootingTrajectory&, const VecX& U, StageBlock&)>;

struct FhocpProblem {
  FhocpRole role = FhocpRole::Leader;
  HorizonGrid grid;
  AgentParams agent;
  ObjectParams object;
  AgentState x0;
  TerminalMode mode = TerminalMode::Hard;
  double penalty = 0.0;  ///< follower equality penalty ρ
  NlpProblem nlp;
  StageFunction stage;
  std::vector<std::string> ci_labels;  ///< "node[k].<row>", "interval[k].<row>", "terminal"
  int terminal_r_offset = -1;          ///< first row of the terminal block in r
  int terminal_ci_row = -1;
  double terminal_scale = 1.0;         ///< terminal block = √scale · P^{1/2} e_K

  int controls() const { return agent.task_dim(); }
  int decision_size() const { return grid.K() * controls(); }

  ShootingTrajectory predict(const VecX& U) const {
    ShootingTrajectory tr;
    tr.nodes.resize(grid.K() + 1);
    tr.nodes[0] = x0;
    rollout(agent, object, grid, U, 0, tr);
    return tr;
  }
};

namespace detail {

/// Symmetric square root A^{1/2} of a PSD matrix.
inline MatX sqrt_factor(const MatX& A) {
  const Eigen::SelfAdjointEigenSolver<MatX> es(0.5 * (A + A.transpose()));
  return es.operatorSqrt();
}

inline void append(std::vector<double>& out, const VecX& v) { out.insert(out.end(), v.data(), v.data() + v.size()); }

inline double wrap_angle(double a) { return std::remainder(a, 2.0 * std::numbers::pi); }

/// Wire `prob.stage` into `prob.nlp.evaluate` with forward-difference
/// Jacobians that reuse the unperturbed rollout prefix.
inline void finalize_shooting(FhocpProblem& prob) {
  const int K = prob.grid.K(), m = prob.controls(), n = K * m;
  prob.nlp.n = n;
  auto stage = prob.stage;
  auto agent = prob.agent;
  auto object = prob.object;
  auto grid = prob.grid;
  auto x0 = prob.x0;
  const int term_row = prob.terminal_ci_row, term_off = prob.terminal_r_offset;
  prob.nlp.evaluate = [=](const VecX& U, NlpEval& out, bool jac) {
    ShootingTrajectory tr;
    tr.nodes.resize(K + 1);
    tr.nodes[0] = x0;
    rollout(agent, object, grid, U, 0, tr);
    std::vector<StageBlock> blocks(K + 1);
    std::vector<int> roff(K + 2, 0), coff(K + 2, 0);
    for (int k = 0; k <= K; ++k) {
      stage(k, tr, U, blocks[k]);
      roff[k + 1] = roff[k] + static_cast<int>(blocks[k].r.size());
      coff[k + 1] = coff[k] + static_cast<int>(blocks[k].ci.size());
    }
    out.r.resize(roff[K + 1]);
    out.ci.resize(coff[K + 1]);
    out.ce.resize(0);
    for (int k = 0; k <= K; ++k) {
      out.r.segment(roff[k], roff[k + 1] - roff[k]) =
          Eigen::Map<const VecX>(blocks[k].r.data(), static_cast<int>(blocks[k].r.size()));
      out.ci.segment(coff[k], coff[k + 1] - coff[k]) =
          Eigen::Map<const VecX>(blocks[k].ci.data(), static_cast<int>(blocks[k].ci.size()));
    }
    out.ci_curvature.clear();
    if (!jac) return;
    out.Jr = MatX::Zero(out.r.size(), n);
    out.Jci = MatX::Zero(out.ci.size(), n);
    out.Jce.resize(0, n);
    ShootingTrajectory trp;
    StageBlock bp;
    for (int c = 0; c < n; ++c) {
      const int k0 = c / m;
      double step = 1e-7 * std::max(1.0, std::abs(U[c]));
      VecX Up = U;
      trp = tr;
      Up[c] += step;
      try {
        rollout(agent, object, grid, Up, k0, trp);
      } catch (const SingularityError&) {
        step = -step;
        Up[c] = U[c] + step;
        trp = tr;
        rollout(agent, object, grid, Up, k0, trp);
      }
      for (int k = k0; k <= K; ++k) {
        stage(k, trp, Up, bp);
        for (int i = roff[k]; i < roff[k + 1]; ++i) out.Jr(i, c) = (bp.r[i - roff[k]] - out.r[i]) / step;
        for (int i = coff[k]; i < coff[k + 1]; ++i) out.Jci(i, c) = (bp.ci[i - coff[k]] - out.ci[i]) / step;
      }
    }
    if (term_row >= 0) out.ci_curvature.push_back({term_row, out.Jr.middleRows(term_off, out.r.size() - term_off)});
  };
}

inline std::vector<std::string> prefixed(const std::string& prefix, const std::vector<std::string>& labels) {
  std::vector<std::string> out;
  for (const auto& l : labels) out.push_back(prefix + l);
  return out;
}

inline AgentParams without_input_box(AgentParams p) {
  p.limits.input_component = kInf;
  return p;
}

inline void input_bounds(const AgentParams& p, int K, NlpProblem& nlp) {
  const int m = p.task_dim();
  nlp.lower = VecX::Constant(K * m, -p.limits.input_component);
  nlp.upper = VecX::Constant(K * m, p.limits.input_component);
}

}  // namespace detail

/// Leader cost gains and terminal set.
struct LeaderGains {
  MatX Q, R, P;
  double eps = 1e-2;           ///< terminal level ε_1
  double soft_weight = 1e4;    ///< weight of V_1 in soft terminal mode
};

struct LeaderSetup {
  AgentParams agent;
  ObjectParams object;
  AgentState x0;
  JVec u_prev;  ///< input applied on the previous interval (for u̇)
  VecX x_des;   ///< desired object task coordinates
  std::vector<Ellipsoid> obstacles;
  std::vector<Ellipsoid> other_bodies;  ///< current bodies of the followers
  std::vector<std::string> other_labels;
  double workspace_radius = kInf;
  LeaderGains gains;
  /// Follower models and measured configurations for the follower
  /// input-authority rows; empty disables them.
  std::vector<AgentParams> followers;
  std::vector<JVec> follower_q;
  double authority_margin = 0.97;  ///< fraction of each follower bound the plan may use
};

/// Leader FHOCP: min Σ Simpson(eᵀQe) + h (u−u_eq)ᵀR(u−u_eq) + eₖᵀPeₖ subject to
/// state rows at nodes 1..K, input rows per interval and eₖᵀPeₖ ≤ ε (hard mode).
inline FhocpProblem transcribe_leader(const HorizonGrid& grid, const LeaderSetup& s, TerminalMode mode) {
  grid.validate();
  FhocpProblem prob;
  prob.role = FhocpRole::Leader;
  prob.grid = grid;
  prob.agent = s.agent;
  prob.object = s.object;
  prob.x0 = s.x0;
  prob.mode = mode;
  const int K = grid.K(), m = s.agent.task_dim();
  const double h = grid.h;

  StateConstraintContext ctx;
  ctx.obstacles = s.obstacles;
  ctx.other_bodies = s.other_bodies;
  ctx.other_labels = s.other_labels;
  ctx.workspace_radius = s.workspace_radius;
  // the object is owned by the leader; the context points at the copy in `prob`
  const auto x0_rows = state_residuals(s.agent, s.x0, [&] {
    auto c = ctx;
    c.object = &s.object;
    return c;
  }());
  if (!x0_rows.satisfied(1e-4))
    throw InfeasibilityError("leader infeasibility", "initial node violates " + x0_rows.worst() + " = " +
                                                         std::to_string(x0_rows.max_value()));

  const AgentParams p_nobox = detail::without_input_box(s.agent);
  const auto in_labels = input_residuals(p_nobox, s.x0.q, s.x0.qdot, JVec::Zero(m), JVec::Zero(m)).labels;
  if (s.followers.size() != s.follower_q.size())
    throw std::invalid_argument("leader: follower models and configurations differ in count");
  // follower rows use velocity limits shrunk by the authority margin
  std::vector<AgentParams> followers = s.followers;
  for (auto& f : followers) {
    f.limits.joint_velocity *= s.authority_margin;
    f.limits.arm_velocity_norm *= s.authority_margin;
  }
  StateConstraintContext follower_ctx;
  follower_ctx.obstacles = s.obstacles;
  follower_ctx.workspace_radius = s.workspace_radius;
  std::vector<std::vector<std::string>> follower_labels;
  for (std::size_t f = 0; f < followers.size(); ++f)
    follower_labels.push_back(
        state_residuals(followers[f], {s.follower_q[f], JVec::Zero(followers[f].dof())}, follower_ctx).labels);
  for (int k = 0; k <= K; ++k) {
    if (k >= 1) {
      const auto l = detail::prefixed("node[" + std::to_string(k) + "].", x0_rows.labels);
      prob.ci_labels.insert(prob.ci_labels.end(), l.begin(), l.end());
      for (std::size_t f = 0; f < followers.size(); ++f) {
        const auto lf =
            detail::prefixed("node[" + std::to_string(k) + "].follower[" + followers[f].name + "].", follower_labels[f]);
        prob.ci_labels.insert(prob.ci_labels.end(), lf.begin(), lf.end());
      }
    }
    if (k < K) {
      const auto l = detail::prefixed("interval[" + std::to_string(k) + "].", in_labels);
      prob.ci_labels.insert(prob.ci_labels.end(), l.begin(), l.end());
      for (const auto& f : s.followers)
        if (std::isfinite(f.limits.input_component))
          for (const char* at : {"start", "mid", "end"})
            for (int j = 0; j < f.task_dim(); ++j)
              prob.ci_labels.push_back("interval[" + std::to_string(k) + "].follower[" + f.name + "].u_box[" +
                                       std::to_string(j) + "]." + at);
    }
  }
  if (mode == TerminalMode::Hard) {
    prob.terminal_ci_row = static_cast<int>(prob.ci_labels.size());
    prob.ci_labels.push_back("terminal");
  }
  prob.terminal_scale = mode == TerminalMode::Hard ? 1.0 : 1.0 + s.gains.soft_weight;
  // r layout: every stage starts with its node block; the terminal block closes stage K
  const int e_dim = 2 * m;
  prob.terminal_r_offset = K * (2 * e_dim + m) + e_dim;

  const MatX Lq = detail::sqrt_factor(s.gains.Q), Lr = detail::sqrt_factor(s.gains.R),
             Lp = detail::sqrt_factor(s.gains.P);
  const double term_w = std::sqrt(prob.terminal_scale), eps = s.gains.eps;
  const auto agent = s.agent;
  const auto object = s.object;
  const auto x_des = s.x_des;
  const JVec u_prev = s.u_prev.size() == m ? s.u_prev : equilibrium_input(s.agent, s.object, s.x0.q, false);
  const bool hard = mode == TerminalMode::Hard;
  const auto follower_q = s.follower_q;
  const double margin = s.authority_margin;
  const auto& rows_idx = s.agent.task_rows;
  prob.stage = [=](int k, const ShootingTrajectory& tr, const VecX& U, StageBlock& b) {
    b.r.clear();
    b.ci.clear();
    const AgentState& xk = tr.nodes[k];
    const double wk = (k == 0 || k == K) ? h / 6 : h / 3;
    const VecX ek = error_state(agent, xk.q, xk.qdot, x_des);
    detail::append(b.r, std::sqrt(wk) * (Lq * ek));
    if (k < K) {
      const AgentState& xm = tr.mids[k];
      detail::append(b.r, std::sqrt(4 * h / 6) * (Lq * error_state(agent, xm.q, xm.qdot, x_des)));
      const JVec u = U.segment(k * m, m);
      detail::append(b.r, std::sqrt(h) * (Lr * (u - equilibrium_input(agent, object, xk.q, false))));
    } else {
      detail::append(b.r, term_w * (Lp * ek));
    }
    // where each follower has to be to carry the object along this plan
    std::vector<std::vector<AgentState>> implied;
    if (!followers.empty()) {
      std::vector<VecX> vn, vm;
      auto twist = [&](const AgentState& x) { return task_twist(rows_idx, object_twist_from_agent(agent, x.q, x.qdot)); };
      const int upto = std::min(k + 1, K);
      for (int j = 0; j <= upto; ++j) {
        vn.push_back(twist(tr.nodes[j]));
        if (j < upto) vm.push_back(twist(tr.mids[j]));
      }
      for (std::size_t f = 0; f < followers.size(); ++f)
        implied.push_back(implied_states(followers[f], follower_q[f], vn, vm, h, upto));
    }
    if (k >= 1) {
      StateConstraintContext c = ctx;
      c.object = &object;
      const auto rows = state_residuals(agent, xk, c);
      b.ci.insert(b.ci.end(), rows.values.begin(), rows.values.end());
      for (std::size_t f = 0; f < followers.size(); ++f) {
        const auto fr = state_residuals(followers[f], implied[f][k], follower_ctx);
        b.ci.insert(b.ci.end(), fr.values.begin(), fr.values.end());
      }
    }
    if (k < K) {
      const JVec u = U.segment(k * m, m);
      const JVec up = k == 0 ? u_prev : JVec(U.segment((k - 1) * m, m));
      const auto rows = input_residuals(p_nobox, xk.q, xk.qdot, u, JVec((u - up) / h));
      b.ci.insert(b.ci.end(), rows.values.begin(), rows.values.end());
      if (!followers.empty()) {
        // the follower holds one input across the interval: check it at both ends and the midpoint
        const AgentState* at[3] = {&xk, &tr.mids[k], &tr.nodes[k + 1]};
        VecX vO[3], aO[3];
        for (int a = 0; a < 3; ++a) {
          vO[a] = error_state(agent, at[a]->q, at[a]->qdot, x_des).tail(m);
          aO[a] = error_dynamics(agent, object, *at[a], u, false).tail(m);
        }
        for (std::size_t f = 0; f < followers.size(); ++f) {
          const double bound = followers[f].limits.input_component;
          if (!std::isfinite(bound)) continue;
          const AgentState& s0 = implied[f][k];
          const JVec qf[3] = {s0.q, JVec(s0.q + 0.5 * h * s0.qdot), implied[f][k + 1].q};
          for (int a = 0; a < 3; ++a) {
            const JVec uf = input_for_object_motion(followers[f], object, qf[a], vO[a], aO[a]);
            for (int j = 0; j < uf.size(); ++j) b.ci.push_back(std::abs(uf[j]) - margin * bound);
          }
        }
      }
    } else if (hard) {
      b.ci.push_back((Lp * ek).squaredNorm() - eps);
    }
  };
  detail::input_bounds(s.agent, K, prob.nlp);
  detail::finalize_shooting(prob);
  return prob;
}

struct FollowerCost {
  MatX R;                    ///< input weight on (u − u_eq)
  double qdot_weight = 0.01; ///< weight on q̇ᵀq̇ at the nodes
};

struct FollowerSetup {
  AgentParams agent;
  ObjectParams object;
  AgentState x0;
  JVec u_prev;
  std::vector<VecX> leader_pose;   ///< K + 1 task coordinates of x_{O_1}
  std::vector<VecX> leader_twist;  ///< K + 1 task twists of v_{O_1}
  std::vector<std::vector<Ellipsoid>> predicted_bodies;  ///< per node: bodies of higher-priority agents
  std::vector<std::string> predicted_labels;
  std::vector<Ellipsoid> current_bodies;  ///< bodies of lower-priority agents at t_j
  std::vector<std::string> current_labels;
  std::vector<Ellipsoid> obstacles;
  double workspace_radius = kInf;
  FollowerCost cost;
};

/// Follower FHOCP with the object pose/twist equalities as penalty rows √ρ (·).
inline FhocpProblem transcribe_follower(const HorizonGrid& grid, const FollowerSetup& s, double rho) {
  grid.validate();
  const int K = grid.K(), m = s.agent.task_dim();
  if (static_cast<int>(s.leader_pose.size()) != K + 1 || static_cast<int>(s.leader_twist.size()) != K + 1)
    throw std::invalid_argument("follower: leader prediction must have K + 1 nodes");
  if (!s.predicted_bodies.empty() && static_cast<int>(s.predicted_bodies.size()) != K + 1)
    throw std::invalid_argument("follower: predicted bodies must have K + 1 nodes");
  FhocpProblem prob;
  prob.role = FhocpRole::Follower;
  prob.grid = grid;
  prob.agent = s.agent;
  prob.object = s.object;
  prob.x0 = s.x0;
  prob.penalty = rho;
  const double h = grid.h;

  auto context = [s](int k) {
    StateConstraintContext c;
    c.obstacles = s.obstacles;
    c.workspace_radius = s.workspace_radius;
    if (!s.predicted_bodies.empty()) {
      c.other_bodies = s.predicted_bodies[k];
      c.other_labels = s.predicted_labels;
    }
    c.other_bodies.insert(c.other_bodies.end(), s.current_bodies.begin(), s.current_bodies.end());
    c.other_labels.insert(c.other_labels.end(), s.current_labels.begin(), s.current_labels.end());
    return c;
  };
  std::vector<StateConstraintContext> ctx;
  for (int k = 0; k <= K; ++k) ctx.push_back(context(k));

  const auto x0_rows = state_residuals(s.agent, s.x0, ctx[0]);
  if (!x0_rows.satisfied(1e-4))
    throw InfeasibilityError("follower infeasibility", s.agent.name + " initial node violates " + x0_rows.worst() +
                                                           " = " + std::to_string(x0_rows.max_value()));
  const AgentParams p_nobox = detail::without_input_box(s.agent);
  const auto in_labels = input_residuals(p_nobox, s.x0.q, s.x0.qdot, JVec::Zero(m), JVec::Zero(m)).labels;
  for (int k = 0; k <= K; ++k) {
    if (k >= 1) {
      const auto l = detail::prefixed("node[" + std::to_string(k) + "].", state_residuals(s.agent, s.x0, ctx[k]).labels);
      prob.ci_labels.insert(prob.ci_labels.end(), l.begin(), l.end());
    }
    if (k < K) {
      const auto l = detail::prefixed("interval[" + std::to_string(k) + "].", in_labels);
      prob.ci_labels.insert(prob.ci_labels.end(), l.begin(), l.end());
    }
  }

  const MatX Lr = detail::sqrt_factor(s.cost.R);
  const double wq = std::sqrt(s.cost.qdot_weight * h), wr = std::sqrt(h), wp = std::sqrt(rho);
  const auto agent = s.agent;
  const auto object = s.object;
  const auto pose = s.leader_pose;
  const auto twist = s.leader_twist;
  const JVec u_prev = s.u_prev.size() == m ? s.u_prev : equilibrium_input(s.agent, s.object, s.x0.q, false);
  const auto& rows_idx = agent.task_rows;
  prob.stage = [=](int k, const ShootingTrajectory& tr, const VecX& U, StageBlock& b) {
    b.r.clear();
    b.ci.clear();
    const AgentState& xk = tr.nodes[k];
    if (k < K) {
      const JVec u = U.segment(k * m, m);
      detail::append(b.r, wr * (Lr * (u - equilibrium_input(agent, object, xk.q, false))));
    }
    if (k >= 1) {
      detail::append(b.r, wq * VecX(xk.qdot));
      VecX dx = task_coordinates(rows_idx, object_pose_from_agent(agent, xk.q)) - pose[k];
      for (int r = 0; r < dx.size(); ++r)
        if (rows_idx[r] >= 3) dx[r] = detail::wrap_angle(dx[r]);
      const VecX dv = task_twist(rows_idx, object_twist_from_agent(agent, xk.q, xk.qdot)) - twist[k];
      detail::append(b.r, wp * dx);
      detail::append(b.r, wp * dv);
      const auto rows = state_residuals(agent, xk, ctx[k]);
      b.ci.insert(b.ci.end(), rows.values.begin(), rows.values.end());
    }
    if (k < K) {
      const JVec u = U.segment(k * m, m);
      const JVec up = k == 0 ? u_prev : JVec(U.segment((k - 1) * m, m));
      const auto rows = input_residuals(p_nobox, xk.q, xk.qdot, u, JVec((u - up) / h));
      b.ci.insert(b.ci.end(), rows.values.begin(), rows.values.end());
    }
  };
  detail::input_bounds(s.agent, K, prob.nlp);
  detail::finalize_shooting(prob);
  return prob;
}

struct HorizonSolution {
  FhocpRole role = FhocpRole::Leader;
  std::vector<JVec> controls;            ///< K piecewise-constant inputs
  std::vector<AgentState> states;        ///< K + 1 predicted states
  std::vector<ObjectPose> object_poses;  ///< at the nodes, through this agent's chain
  std::vector<ObjectTwist> object_twists;
  VecX decision;
  double cost = 0.0;            ///< FHOCP cost (without soft-terminal or penalty terms)
  double terminal_value = 0.0;  ///< V(e_K) (leader)
  double first_stage_cost = 0.0;  ///< running cost over [t_j, t_j + h] (leader)
  double max_violation = 0.0;
  std::string worst_constraint;    ///< label of the largest inequality residual
  double equality_residual = 0.0;  ///< follower: max_k ‖[x_{O_i} − x_{O_1}; v_{O_i} − v_{O_1}]‖
  double penalty = 0.0;
  TerminalMode mode = TerminalMode::Hard;
  SqpStatus status = SqpStatus::MaxIterations;
  int iterations = 0;
  double kkt = 0.0;
  std::vector<SqpIteration> history;

  bool acceptable(double tol = 1e-4) const { return max_violation <= tol && std::isfinite(cost); }
};

namespace detail {

inline double leader_stage_cost(const FhocpProblem& prob, const MatX& Q, const MatX& R, const VecX& x_des,
                                const ShootingTrajectory& tr, const VecX& U, int k) {
  const int m = prob.controls();
  const double h = prob.grid.h;
  const auto e = [&](const AgentState& x) { return error_state(prob.agent, x.q, x.qdot, x_des); };
  const VecX e0 = e(tr.nodes[k]), em = e(tr.mids[k]), e1 = e(tr.nodes[k + 1]);
  const VecX du = U.segment(k * m, m) - equilibrium_input(prob.agent, prob.object, tr.nodes[k].q, false);
  return h / 6 * (e0.dot(Q * e0) + 4 * em.dot(Q * em) + e1.dot(Q * e1)) + h * du.dot(R * du);
}

}  // namespace detail

/// Package an SQP result as predicted trajectories on the horizon grid.
inline HorizonSolution make_solution(const FhocpProblem& prob, const SqpResult& res) {
  HorizonSolution sol;
  sol.role = prob.role;
  const int K = prob.grid.K(), m = prob.controls();
  sol.decision = res.x;
  for (int k = 0; k < K; ++k) sol.controls.push_back(res.x.segment(k * m, m));
  const auto tr = prob.predict(res.x);
  sol.states = tr.nodes;
  for (const auto& x : tr.nodes) {
    sol.object_poses.push_back(object_pose_from_agent(prob.agent, x.q));
    sol.object_twists.push_back(object_twist_from_agent(prob.agent, x.q, x.qdot));
  }
  sol.max_violation = 0.0;
  if (res.eval.ci.size()) {
    Eigen::Index worst;
    const double v = res.eval.ci.maxCoeff(&worst);
    sol.max_violation = std::max(0.0, v);
    if (static_cast<std::size_t>(worst) < prob.ci_labels.size()) sol.worst_constraint = prob.ci_labels[worst];
  }
  sol.status = res.status;
  sol.iterations = res.iterations;
  sol.kkt = res.kkt;
  sol.history = res.history;
  sol.mode = prob.mode;
  sol.penalty = prob.penalty;
  const VecX& r = res.eval.r;
  if (prob.role == FhocpRole::Leader) {
    const VecX term = r.segment(prob.terminal_r_offset, r.size() - prob.terminal_r_offset);
    sol.terminal_value = term.squaredNorm() / prob.terminal_scale;
    sol.cost = r.squaredNorm() - term.squaredNorm() + sol.terminal_value;
  } else {
    // penalty rows: 2m per node after the input block and q̇ block
    double cost = 0.0, eq = 0.0;
    int off = 0;
    for (int k = 0; k <= K; ++k) {
      if (k < K) {
        cost += r.segment(off, m).squaredNorm();
        off += m;
      }
      if (k >= 1) {
        const int n = prob.agent.dof();
        cost += r.segment(off, n).squaredNorm();
        off += n;
        eq = std::max(eq, r.segment(off, 2 * m).norm() / std::sqrt(prob.penalty));
        off += 2 * m;
      }
    }
    sol.cost = cost;
    sol.equality_residual = eq;
  }
  return sol;
}

/// Run the SQP on a transcribed problem from warm start `U0`.
inline HorizonSolution solve_fhocp(const FhocpProblem& prob, const VecX& U0, const SqpOptions& opt = {}) {
  return make_solution(prob, solve_nlp(prob.nlp, U0, opt));
}

/// Inputs holding the agent at its current configuration over the whole horizon.
inline VecX equilibrium_warm_start(const AgentParams& p, const ObjectParams& obj, const JVec& q, const HorizonGrid& grid) {
  const JVec u = equilibrium_input(p, obj, q, false);
  VecX U(grid.K() * p.task_dim());
  for (int k = 0; k < grid.K(); ++k) U.segment(k * p.task_dim(), p.task_dim()) = u;
  return U;
}

/// Leader solve with the terminal-mode policy: hard when requested or when
/// the warm start already ends in the terminal set, soft otherwise or on failure.
inline HorizonSolution solve_leader(const HorizonGrid& grid, const LeaderSetup& setup, const VecX& U0, bool prefer_hard,
                                    const SqpOptions& opt = {}) {
  bool try_hard = prefer_hard;
  if (!try_hard) {
    const auto probe = transcribe_leader(grid, setup, TerminalMode::Soft);
    NlpEval e;
    try {
      probe.nlp.evaluate(U0, e, false);
      const VecX term = e.r.segment(probe.terminal_r_offset, e.r.size() - probe.terminal_r_offset);
      try_hard = term.squaredNorm() / probe.terminal_scale <= setup.gains.eps;
    } catch (const SingularityError&) {
    }
  }
  if (try_hard) {
    const auto prob = transcribe_leader(grid, setup, TerminalMode::Hard);
    auto sol = solve_fhocp(prob, U0, opt);
    if (sol.status != SqpStatus::Infeasible && sol.acceptable()) {
      sol.first_stage_cost =
          detail::leader_stage_cost(prob, setup.gains.Q, setup.gains.R, setup.x_des, prob.predict(sol.decision), sol.decision, 0);
      return sol;
    }
  }
  const auto prob = transcribe_leader(grid, setup, TerminalMode::Soft);
  auto sol = solve_fhocp(prob, U0, opt);
  if (!sol.acceptable()) {
    // restart from holding the current equilibrium input
    const JVec u_eq = equilibrium_input(setup.agent, setup.object, setup.x0.q, false);
    auto cold = solve_fhocp(prob, u_eq.replicate(grid.K(), 1), opt);
    if (cold.max_violation < sol.max_violation) sol = std::move(cold);
  }
  if (!sol.acceptable())
    throw InfeasibilityError("leader infeasibility", "max constraint violation " + std::to_string(sol.max_violation) +
                                                         " at " + sol.worst_constraint);
  sol.first_stage_cost =
      detail::leader_stage_cost(prob, setup.gains.Q, setup.gains.R, setup.x_des, prob.predict(sol.decision), sol.decision, 0);
  return sol;
}

/// Equality-penalty continuation for a follower.
struct PenaltySchedule {
  double initial = 1e4;
  double factor = 100.0;
  double max = 1e8;
  double tolerance = 1e-4;   ///< target equality residual
  double infeasible = 1e-2;  ///< residual above which the follower reports infeasibility
};

/// Solve a follower FHOCP, raising ρ until the equality residual meets the
/// tolerance. `rho` carries the penalty between rounds.
inline HorizonSolution solve_follower(const HorizonGrid& grid, const FollowerSetup& setup, const VecX& U0,
                                      const PenaltySchedule& sched, double& rho, const SqpOptions& opt = {}) {
  rho = std::clamp(rho, sched.initial, sched.max);
  VecX U = U0;
  HorizonSolution sol;
  while (true) {
    const auto prob = transcribe_follower(grid, setup, rho);
    sol = solve_fhocp(prob, U, opt);
    U = sol.decision;
    if (sol.equality_residual <= sched.tolerance || rho >= sched.max) break;
    rho = std::min(sched.max, rho * sched.factor);
  }
  if (!sol.acceptable() || sol.equality_residual > sched.infeasible)
    throw InfeasibilityError("follower infeasibility",
                             setup.agent.name + ": equality residual " + std::to_string(sol.equality_residual) +
                                 ", constraint violation " + std::to_string(sol.max_violation) + " at " +
                                 sol.worst_constraint);
  return sol;
}

struct RecedingStep {
  JVec u;           ///< input applied on [t_j, t_j + h)
  VecX warm_start;  ///< shifted by one interval, last interval duplicated
};

inline RecedingStep receding_step(const HorizonSolution& sol, const HorizonGrid& grid) {
  const int K = grid.K();
  const int m = static_cast<int>(sol.controls.front().size());
  RecedingStep out;
  out.u = sol.controls.front();
  out.warm_start.resize(K * m);
  for (int k = 0; k < K; ++k) out.warm_start.segment(k * m, m) = sol.controls[std::min(k + 1, K - 1)];
  return out;
}

}  // namespace coopnmpc
