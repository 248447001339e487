#pragma once

// Dense strictly convex QP by the Goldfarb–Idnani dual active-set method.
//
//   min ½ xᵀ G x + gᵀ x   s.t.   A_eq x = b_eq,   A_in x ≤ b_in
//
// G must be symmetric positive definite.

#include "coopnmpc/types.hpp"

#include <Eigen/Cholesky>

#include <cmath>
#include <limits>
#include <vector>

namespace coopnmpc {

enum class QpStatus { Optimal, Infeasible, Degenerate, IterationLimit };

struct QpResult {
  QpStatus status = QpStatus::Infeasible;
  VecX x;
  VecX lambda_eq;  ///< multipliers: ∇(½xᵀGx + gᵀx) + A_eqᵀλ_eq + A_inᵀλ_in = 0
  VecX lambda_in;  ///< ≥ 0
  double objective = 0.0;
  int iterations = 0;
};

namespace detail {

inline bool gi_add_constraint(MatX& R, MatX& J, VecX& d, int& iq, double& R_norm) {
  const int n = static_cast<int>(J.rows());
  for (int j = n - 1; j >= iq + 1; --j) {
    double cc = d[j - 1], ss = d[j];
    const double h = std::hypot(cc, ss);
    if (h == 0.0) continue;
    d[j] = 0.0;
    ss /= h;
    cc /= h;
    if (cc < 0.0) {
      cc = -cc;
      ss = -ss;
      d[j - 1] = -h;
    } else {
      d[j - 1] = h;
    }
    const double xny = ss / (1.0 + cc);
    for (int k = 0; k < n; ++k) {
      const double t1 = J(k, j - 1), t2 = J(k, j);
      J(k, j - 1) = t1 * cc + t2 * ss;
      J(k, j) = xny * (t1 + J(k, j - 1)) - t2;
    }
  }
  ++iq;
  R.col(iq - 1).head(iq) = d.head(iq);
  if (std::abs(d[iq - 1]) <= std::numeric_limits<double>::epsilon() * R_norm) return false;
  R_norm = std::max(R_norm, std::abs(d[iq - 1]));
  return true;
}

inline void gi_delete_constraint(MatX& R, MatX& J, std::vector<int>& A, VecX& u, int p, int& iq, int l) {
  const int n = static_cast<int>(R.rows());
  int qq = -1;
  for (int i = p; i < iq; ++i)
    if (A[i] == l) {
      qq = i;
      break;
    }
  if (qq < 0) return;
  for (int i = qq; i < iq - 1; ++i) {
    A[i] = A[i + 1];
    u[i] = u[i + 1];
    R.col(i) = R.col(i + 1);
  }
  A[iq - 1] = A[iq];
  u[iq - 1] = u[iq];
  A[iq] = 0;
  u[iq] = 0.0;
  for (int j = 0; j < iq; ++j) R(j, iq - 1) = 0.0;
  --iq;
  if (iq == 0) return;
  for (int j = qq; j < iq; ++j) {
    double cc = R(j, j), ss = R(j + 1, j);
    const double h = std::hypot(cc, ss);
    if (h == 0.0) continue;
    cc /= h;
    ss /= h;
    R(j + 1, j) = 0.0;
    if (cc < 0.0) {
      R(j, j) = -h;
      cc = -cc;
      ss = -ss;
    } else {
      R(j, j) = h;
    }
    const double xny = ss / (1.0 + cc);
    for (int k = j + 1; k < iq; ++k) {
      const double t1 = R(j, k), t2 = R(j + 1, k);
      R(j, k) = t1 * cc + t2 * ss;
      R(j + 1, k) = xny * (t1 + R(j, k)) - t2;
    }
    for (int k = 0; k < n; ++k) {
      const double t1 = J(k, j), t2 = J(k, j + 1);
      J(k, j) = t1 * cc + t2 * ss;
      J(k, j + 1) = xny * (J(k, j) + t1) - t2;
    }
  }
}

}  // namespace detail

inline QpResult solve_qp(const MatX& G, const VecX& g, const MatX& A_eq, const VecX& b_eq, const MatX& A_in,
                         const VecX& b_in, int max_iterations = 10000) {
  const int n = static_cast<int>(G.rows());
  const int p = static_cast<int>(A_eq.rows());
  const int m = static_cast<int>(A_in.rows());
  const double inf = std::numeric_limits<double>::infinity();
  const double eps = std::numeric_limits<double>::epsilon();

  QpResult res;
  res.lambda_eq = VecX::Zero(p);
  res.lambda_in = VecX::Zero(m);

  // Internal form: CEᵀx + ce0 = 0, CIᵀx + ci0 ≥ 0.
  const Eigen::LLT<MatX> chol(G);
  if (chol.info() != Eigen::Success) {
    res.status = QpStatus::Degenerate;
    return res;
  }
  const double c1 = G.trace();
  MatX J = chol.matrixU().solve(MatX::Identity(n, n));
  const double c2 = J.trace();
  MatX R = MatX::Zero(n, n);
  VecX x = -chol.solve(g);
  double f = 0.5 * g.dot(x);

  const int total = p + m;
  std::vector<int> A(total + 1, 0), A_old(total + 1, 0), iai(m, 0);
  std::vector<bool> iaexcl(m, true);
  VecX u = VecX::Zero(total + 1), u_old = VecX::Zero(total + 1);
  VecX s = VecX::Zero(m), z(n), r = VecX::Zero(total + 1), d(n), np(n), x_old(n);
  int iq = 0;
  double R_norm = 1.0;

  auto compute_d = [&]() { d.noalias() = J.transpose() * np; };
  auto update_z = [&]() { z.noalias() = J.rightCols(n - iq) * d.tail(n - iq); };
  auto update_r = [&]() {
    for (int i = iq - 1; i >= 0; --i) {
      double sum = 0.0;
      for (int j = i + 1; j < iq; ++j) sum += R(i, j) * r[j];
      r[i] = (d[i] - sum) / R(i, i);
    }
  };

  for (int i = 0; i < p; ++i) {
    np = A_eq.row(i).transpose();
    compute_d();
    update_z();
    update_r();
    double t2 = 0.0;
    const double zn = z.dot(np);
    if (std::abs(z.dot(z)) > eps) t2 = (b_eq[i] - np.dot(x)) / zn;
    x += t2 * z;
    u[iq] = t2;
    u.head(iq) -= t2 * r.head(iq);
    f += 0.5 * t2 * t2 * zn;
    A[i] = -i - 1;
    if (!detail::gi_add_constraint(R, J, d, iq, R_norm)) {
      res.status = QpStatus::Degenerate;
      res.x = x;
      return res;
    }
  }

  for (int i = 0; i < m; ++i) iai[i] = i;

  int ip = 0;
  int iter = 0;
  auto slack = [&](int i) { return b_in[i] - A_in.row(i).dot(x); };

  auto finish = [&](QpStatus st) {
    res.status = st;
    res.x = x;
    res.objective = f;
    res.iterations = iter;
    for (int k = 0; k < iq; ++k) {
      if (A[k] < 0) res.lambda_eq[-A[k] - 1] = -u[k];
      else res.lambda_in[A[k]] = u[k];
    }
    return res;
  };

  while (true) {  // l1
    if (++iter > max_iterations) return finish(QpStatus::IterationLimit);
    for (int i = p; i < iq; ++i) iai[A[i]] = -1;
    double psi = 0.0;
    for (int i = 0; i < m; ++i) {
      iaexcl[i] = true;
      s[i] = slack(i);
      psi += std::min(0.0, s[i]);
    }
    if (std::abs(psi) <= m * eps * c1 * c2 * 100.0) return finish(QpStatus::Optimal);
    u_old.head(iq) = u.head(iq);
    for (int i = 0; i < iq; ++i) A_old[i] = A[i];
    x_old = x;

    bool restart = false;
    while (!restart) {  // l2
      double ss = 0.0;
      for (int i = 0; i < m; ++i)
        if (s[i] < ss && iai[i] != -1 && iaexcl[i]) {
          ss = s[i];
          ip = i;
        }
      if (ss >= 0.0) return finish(QpStatus::Optimal);
      np = -A_in.row(ip).transpose();
      u[iq] = 0.0;
      A[iq] = ip;

      while (true) {  // l2a
        if (++iter > max_iterations) return finish(QpStatus::IterationLimit);
        compute_d();
        update_z();
        update_r();
        int l = 0;
        double t1 = inf;
        for (int k = p; k < iq; ++k)
          if (r[k] > 0.0 && u[k] / r[k] < t1) {
            t1 = u[k] / r[k];
            l = A[k];
          }
        double t2 = inf;
        if (std::abs(z.dot(z)) > eps) t2 = -s[ip] / z.dot(np);
        const double t = std::min(t1, t2);
        if (t >= inf) return finish(QpStatus::Infeasible);
        if (t2 >= inf) {
          u.head(iq) -= t * r.head(iq);
          u[iq] += t;
          iai[l] = l;
          detail::gi_delete_constraint(R, J, A, u, p, iq, l);
          continue;
        }
        x += t * z;
        f += t * z.dot(np) * (0.5 * t + u[iq]);
        u.head(iq) -= t * r.head(iq);
        u[iq] += t;
        if (t == t2) {
          if (!detail::gi_add_constraint(R, J, d, iq, R_norm)) {
            iaexcl[ip] = false;
            detail::gi_delete_constraint(R, J, A, u, p, iq, ip);
            for (int i = 0; i < m; ++i) iai[i] = i;
            for (int i = 0; i < iq; ++i) {
              A[i] = A_old[i];
              if (A[i] >= 0) iai[A[i]] = -1;
              u[i] = u_old[i];
            }
            x = x_old;
            break;  // back to l2
          }
          iai[ip] = -1;
          restart = true;
          break;  // back to l1
        }
        iai[l] = l;
        detail::gi_delete_constraint(R, J, A, u, p, iq, l);
        s[ip] = slack(ip);
      }
    }
  }
}

}  // namespace coopnmpc
