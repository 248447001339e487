#pragma once

// Sequential quadratic programming for least-squares objectives
//
//   min ‖r(x)‖²   s.t.   c_E(x) = 0,   c_I(x) ≤ 0,   l ≤ x ≤ u
//
// Gauss–Newton (default) or damped BFGS Hessian, elastic ℓ1 subproblems for
// rows that are violated at the current iterate, and an ℓ1 merit line search.

#include "coopnmpc/qp.hpp"
#include "coopnmpc/types.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace coopnmpc {

struct NlpEval {
  VecX r;   ///< objective residuals, cost = ‖r‖²
  VecX ce;  ///< equalities
  VecX ci;  ///< inequalities (≤ 0)
  MatX Jr, Jce, Jci;
  /// Inequality rows of the form ‖s(x)‖² + const: row index and ∂s/∂x, used
  /// for Gauss–Newton curvature of the Lagrangian.
  std::vector<std::pair<int, MatX>> ci_curvature;

  double cost() const { return r.squaredNorm(); }
  double violation() const {
    double v = 0.0;
    for (int i = 0; i < ci.size(); ++i) v = std::max(v, ci[i]);
    for (int i = 0; i < ce.size(); ++i) v = std::max(v, std::abs(ce[i]));
    return v;
  }
  double violation_l1() const {
    double v = 0.0;
    for (int i = 0; i < ci.size(); ++i) v += std::max(0.0, ci[i]);
    for (int i = 0; i < ce.size(); ++i) v += std::abs(ce[i]);
    return v;
  }
};

struct NlpProblem {
  int n = 0;
  VecX lower, upper;
  /// Fill values; fill Jacobians too when `with_jacobian`.
  std::function<void(const VecX& x, NlpEval& out, bool with_jacobian)> evaluate;
};

/// Wrap a value-only evaluator with forward-difference Jacobians.
inline std::function<void(const VecX&, NlpEval&, bool)> with_finite_differences(
    std::function<void(const VecX&, NlpEval&)> values, double rel_step = 1e-7) {
  return [values = std::move(values), rel_step](const VecX& x, NlpEval& out, bool jac) {
    values(x, out);
    if (!jac) return;
    const int n = static_cast<int>(x.size());
    out.Jr.resize(out.r.size(), n);
    out.Jce.resize(out.ce.size(), n);
    out.Jci.resize(out.ci.size(), n);
    NlpEval pert;
    VecX xp = x;
    for (int k = 0; k < n; ++k) {
      const double h = rel_step * std::max(1.0, std::abs(x[k]));
      xp[k] = x[k] + h;
      values(xp, pert);
      out.Jr.col(k) = (pert.r - out.r) / h;
      out.Jce.col(k) = (pert.ce - out.ce) / h;
      out.Jci.col(k) = (pert.ci - out.ci) / h;
      xp[k] = x[k];
    }
  };
}

enum class HessianMode { GaussNewton, DampedBfgs };
enum class SqpStatus { Converged, MaxIterations, LineSearchFailure, Infeasible };

inline const char* to_string(SqpStatus s) {
  switch (s) {
    case SqpStatus::Converged: return "converged";
    case SqpStatus::MaxIterations: return "max_iterations";
    case SqpStatus::LineSearchFailure: return "line_search_failure";
    case SqpStatus::Infeasible: return "infeasible";
  }
  return "unknown";
}

struct SqpIteration {
  int iteration = 0;
  double cost = 0.0;
  double violation = 0.0;
  double kkt = 0.0;
  double penalty = 0.0;
  double step_norm = 0.0;
  double alpha = 0.0;
  double merit_before = 0.0;  ///< both merits use the same penalty
  double merit_after = 0.0;
};

struct SqpOptions {
  int max_iterations = 50;
  double kkt_tolerance = 1e-6;
  double feasibility_tolerance = 1e-6;
  double step_tolerance = 1e-10;
  HessianMode hessian = HessianMode::GaussNewton;
  double initial_penalty = 10.0;
  double max_penalty = 1e10;
  double armijo = 1e-4;
  int max_backtracks = 40;
  double slack_regularization = 1e-6;
  std::function<void(const SqpIteration&)> on_iteration;
};

struct SqpResult {
  SqpStatus status = SqpStatus::MaxIterations;
  VecX x;
  NlpEval eval;  ///< at x, with Jacobians
  double cost = 0.0;
  double violation = 0.0;
  double kkt = 0.0;
  int iterations = 0;
  VecX lambda_in, lambda_eq;
  std::vector<SqpIteration> history;
};

namespace detail {

inline double merit(const NlpEval& e, double nu) { return e.cost() + nu * e.violation_l1(); }

}  // namespace detail

inline SqpResult solve_nlp(const NlpProblem& prob, const VecX& x0, const SqpOptions& opt = {}) {
  const int n = prob.n;
  const double inf = std::numeric_limits<double>::infinity();
  SqpResult res;
  VecX x = x0.cwiseMax(prob.lower).cwiseMin(prob.upper);
  NlpEval E;
  prob.evaluate(x, E, true);
  const int mi = static_cast<int>(E.ci.size()), me = static_cast<int>(E.ce.size());
  VecX lam_in = VecX::Zero(mi), lam_eq = VecX::Zero(me);
  double nu = opt.initial_penalty;
  MatX B;  // BFGS approximation
  if (opt.hessian == HessianMode::DampedBfgs) B = 2.0 * E.Jr.transpose() * E.Jr + 1e-6 * MatX::Identity(n, n);

  auto better = [&](const NlpEval& a, const NlpEval& b) {
    const double va = a.violation(), vb = b.violation();
    const double ftol = opt.feasibility_tolerance;
    if (va <= ftol && vb <= ftol) return a.cost() < b.cost();
    if (va <= ftol || vb <= ftol) return va <= ftol;
    return va < vb;
  };
  VecX best_x = x;
  NlpEval best = E;
  res.status = SqpStatus::MaxIterations;
  double last_kkt = inf;

  for (int it = 0; it < opt.max_iterations; ++it) {
    res.iterations = it + 1;
    const VecX g = 2.0 * E.Jr.transpose() * E.r;
    MatX H;
    if (opt.hessian == HessianMode::GaussNewton) {
      H = 2.0 * E.Jr.transpose() * E.Jr;
      for (const auto& [row, Js] : E.ci_curvature)
        if (row < mi && lam_in[row] > 0.0) H += 2.0 * lam_in[row] * Js.transpose() * Js;
    } else {
      H = B;
    }
    H += 1e-10 * std::max(1.0, H.trace() / std::max(1, n)) * MatX::Identity(n, n);

    // Elastic rows: inequalities violated at x, and every equality.
    std::vector<int> elastic;
    for (int i = 0; i < mi; ++i)
      if (E.ci[i] > 0.0) elastic.push_back(i);
    const int ns = static_cast<int>(elastic.size()) + 2 * me;
    const int nv = n + ns;

    std::vector<int> bound_rows;  // signed variable index: +k upper, −k−1 lower
    for (int k = 0; k < n; ++k) {
      if (std::isfinite(prob.upper[k])) bound_rows.push_back(k);
      if (std::isfinite(prob.lower[k])) bound_rows.push_back(-k - 1);
    }
    const int nin = mi + ns + static_cast<int>(bound_rows.size());

    QpResult qp;
    VecX d;
    for (int attempt = 0; attempt < 4; ++attempt) {
      MatX G = MatX::Zero(nv, nv);
      G.topLeftCorner(n, n) = H;
      G.bottomRightCorner(ns, ns).diagonal().setConstant(opt.slack_regularization);
      VecX gq = VecX::Zero(nv);
      gq.head(n) = g;
      gq.tail(ns).setConstant(nu);

      MatX Ain = MatX::Zero(nin, nv);
      VecX bin = VecX::Zero(nin);
      int row = 0;
      for (int i = 0; i < mi; ++i, ++row) {
        Ain.row(row).head(n) = E.Jci.row(i);
        bin[row] = -E.ci[i];
      }
      for (std::size_t s = 0; s < elastic.size(); ++s) {
        Ain(elastic[s], n + static_cast<int>(s)) = -1.0;
        Ain(row, n + static_cast<int>(s)) = -1.0;  // t ≥ 0
        ++row;
      }
      const int eoff = n + static_cast<int>(elastic.size());
      for (int j = 0; j < 2 * me; ++j, ++row) Ain(row, eoff + j) = -1.0;
      for (int b : bound_rows) {
        if (b >= 0) {
          Ain(row, b) = 1.0;
          bin[row] = prob.upper[b] - x[b];
        } else {
          const int k = -b - 1;
          Ain(row, k) = -1.0;
          bin[row] = x[k] - prob.lower[k];
        }
        ++row;
      }
      MatX Aeq = MatX::Zero(me, nv);
      VecX beq = VecX::Zero(me);
      for (int j = 0; j < me; ++j) {
        Aeq.row(j).head(n) = E.Jce.row(j);
        Aeq(j, eoff + 2 * j) = -1.0;
        Aeq(j, eoff + 2 * j + 1) = 1.0;
        beq[j] = -E.ce[j];
      }
      qp = solve_qp(G, gq, Aeq, beq, Ain, bin);
      if (qp.status != QpStatus::Optimal) break;
      d = qp.x.head(n);
      // Steering: if the linearization stays violated while the multipliers
      // saturate at ν, raise the penalty and re-solve.
      double slack_sum = qp.x.tail(ns).sum();
      double max_mult = 0.0;
      for (int i = 0; i < mi; ++i) max_mult = std::max(max_mult, qp.lambda_in[i]);
      if (slack_sum > opt.feasibility_tolerance && max_mult >= 0.9 * nu && nu < opt.max_penalty) {
        nu = std::min(opt.max_penalty, nu * 10.0);
        continue;
      }
      break;
    }
    if (qp.status != QpStatus::Optimal) {
      res.status = SqpStatus::LineSearchFailure;
      break;
    }
    lam_in = qp.lambda_in.head(mi);
    lam_eq = qp.lambda_eq;

    // KKT measure at x from the subproblem: stationarity residual is H d.
    double compl_res = 0.0;
    for (int i = 0; i < mi; ++i) compl_res = std::max(compl_res, std::abs(lam_in[i] * E.ci[i]));
    {
      int row = mi + ns;
      for (int b : bound_rows) {
        const int k = b >= 0 ? b : -b - 1;
        const double gap = b >= 0 ? prob.upper[k] - x[k] : x[k] - prob.lower[k];
        compl_res = std::max(compl_res, std::abs(qp.lambda_in[row] * gap));
        ++row;
      }
    }
    const double kkt = std::max({(H * d).cwiseAbs().maxCoeff(), E.violation(), compl_res});
    last_kkt = kkt;

    double max_mult = lam_in.size() ? lam_in.cwiseAbs().maxCoeff() : 0.0;
    if (me) max_mult = std::max(max_mult, lam_eq.cwiseAbs().maxCoeff());
    nu = std::min(opt.max_penalty, std::max(nu, max_mult + 1.0));

    if (kkt <= opt.kkt_tolerance && E.violation() <= opt.feasibility_tolerance) {
      res.status = SqpStatus::Converged;
      best_x = x;
      best = E;
      break;
    }

    // Model reduction of the ℓ1 merit.
    double lin_viol = 0.0;
    const VecX cil = E.ci + E.Jci * d;
    for (int i = 0; i < mi; ++i) lin_viol += std::max(0.0, cil[i]);
    if (me) lin_viol += (E.ce + E.Jce * d).cwiseAbs().sum();
    const double pred = -(g.dot(d) + 0.5 * d.dot(H * d)) + nu * (E.violation_l1() - lin_viol);
    const double step_inf = d.cwiseAbs().maxCoeff();
    if (step_inf <= opt.step_tolerance * (1.0 + x.cwiseAbs().maxCoeff())) {
      res.status = E.violation() <= opt.feasibility_tolerance ? SqpStatus::Converged : SqpStatus::Infeasible;
      best_x = x;
      best = E;
      break;
    }
    if (!(pred > 0.0)) {
      res.status = SqpStatus::LineSearchFailure;
      break;
    }

    const double phi0 = detail::merit(E, nu);
    double alpha = 1.0;
    NlpEval trial;
    VecX xt;
    bool accepted = false;
    for (int ls = 0; ls < opt.max_backtracks; ++ls) {
      xt = (x + alpha * d).cwiseMax(prob.lower).cwiseMin(prob.upper);
      bool ok = true;
      try {
        prob.evaluate(xt, trial, false);
      } catch (const SingularityError&) {
        ok = false;
      }
      if (ok && trial.r.allFinite() && trial.ci.allFinite() && trial.ce.allFinite()) {
        const double phi = detail::merit(trial, nu);
        if (phi <= phi0 - opt.armijo * alpha * pred) {
          accepted = true;
          SqpIteration rec{it, trial.cost(), trial.violation(), kkt, nu, alpha * step_inf, alpha, phi0, phi};
          res.history.push_back(rec);
          if (opt.on_iteration) opt.on_iteration(rec);
          break;
        }
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      res.status = SqpStatus::LineSearchFailure;
      break;
    }

    const VecX x_prev = x;
    const VecX grad_lag_prev = g + E.Jci.transpose() * lam_in + (me ? VecX(E.Jce.transpose() * lam_eq) : VecX::Zero(n));
    x = xt;
    prob.evaluate(x, E, true);
    if (better(E, best)) {
      best = E;
      best_x = x;
    }
    if (opt.hessian == HessianMode::DampedBfgs) {
      const VecX s = x - x_prev;
      const VecX grad_lag = 2.0 * E.Jr.transpose() * E.r + E.Jci.transpose() * lam_in +
                            (me ? VecX(E.Jce.transpose() * lam_eq) : VecX::Zero(n));
      VecX y = grad_lag - grad_lag_prev;
      const VecX Bs = B * s;
      const double sBs = s.dot(Bs), sy = s.dot(y);
      if (sBs > 0.0) {
        if (sy < 0.2 * sBs) {
          const double theta = 0.8 * sBs / (sBs - sy);
          y = theta * y + (1.0 - theta) * Bs;
        }
        B += y * y.transpose() / s.dot(y) - Bs * Bs.transpose() / sBs;
      }
    }
    if (alpha * step_inf <= opt.step_tolerance * (1.0 + x.cwiseAbs().maxCoeff()) &&
        E.violation() <= opt.feasibility_tolerance) {
      res.status = SqpStatus::Converged;
      best = E;
      best_x = x;
      break;
    }
  }

  res.x = best_x;
  res.eval = best;
  res.cost = best.cost();
  res.violation = best.violation();
  res.kkt = last_kkt;
  res.lambda_in = lam_in;
  res.lambda_eq = lam_eq;
  if (res.status != SqpStatus::Converged && res.violation > opt.feasibility_tolerance) res.status = SqpStatus::Infeasible;
  return res;
}

}  // namespace coopnmpc
