#pragma once

#include "coopnmpc/dual.hpp"
#include "coopnmpc/types.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace coopnmpc {

/// x-y-z Euler angles (φ, θ, ψ). Stored unwrapped.
struct EulerAngles {
  double phi = 0.0;
  double theta = 0.0;
  double psi = 0.0;

  Vec3 vec() const { return {phi, theta, psi}; }
  static EulerAngles from(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
  bool operator==(const EulerAngles&) const = default;
};

/// True when the angles, wrapped to (−π, π], lie in (−π,π)×(−π/2,π/2)×(−π,π).
inline bool in_euler_domain(const EulerAngles& eta) {
  auto wrap = [](double a) { return std::remainder(a, 2.0 * std::numbers::pi); };
  const double half_pi = 0.5 * std::numbers::pi;
  return std::abs(wrap(eta.phi)) < std::numbers::pi && std::abs(wrap(eta.theta)) < half_pi &&
         std::abs(wrap(eta.psi)) < std::numbers::pi;
}

/// S(a) with S(a) b = a × b.
template <typename S>
Mat3T<S> skew(const Vec3T<S>& a) {
  Mat3T<S> m;
  m << S(0.0), -a.z(), a.y(),
       a.z(), S(0.0), -a.x(),
       -a.y(), a.x(), S(0.0);
  return m;
}
inline Mat3 skew(const Vec3& a) { return skew<double>(a); }

template <typename S>
Mat3T<S> rot_x(const S& a) {
  using std::cos;
  using std::sin;
  const S c = cos(a), s = sin(a);
  Mat3T<S> r;
  r << S(1.0), S(0.0), S(0.0),
       S(0.0), c, -s,
       S(0.0), s, c;
  return r;
}

template <typename S>
Mat3T<S> rot_y(const S& a) {
  using std::cos;
  using std::sin;
  const S c = cos(a), s = sin(a);
  Mat3T<S> r;
  r << c, S(0.0), s,
       S(0.0), S(1.0), S(0.0),
       -s, S(0.0), c;
  return r;
}

template <typename S>
Mat3T<S> rot_z(const S& a) {
  using std::cos;
  using std::sin;
  const S c = cos(a), s = sin(a);
  Mat3T<S> r;
  r << c, -s, S(0.0),
       s, c, S(0.0),
       S(0.0), S(0.0), S(1.0);
  return r;
}

/// Rotation for x-y-z Euler angles: R = Rx(φ) Ry(θ) Rz(ψ). This is the
/// composition for which ω = J_B(η) η̇ with ω in the fixed frame.
template <typename S>
Mat3T<S> rot_xyz(const Vec3T<S>& eta) {
  return rot_x(eta.x()) * rot_y(eta.y()) * rot_z(eta.z());
}
inline Mat3 rot_xyz(const EulerAngles& eta) { return rot_xyz<double>(eta.vec()); }

/// Representation Jacobian J_B(η): ω = J_B(η) η̇.
template <typename S>
Mat3T<S> euler_rate_jacobian(const Vec3T<S>& eta) {
  using std::cos;
  using std::sin;
  const S sphi = sin(eta.x()), cphi = cos(eta.x());
  const S sth = sin(eta.y()), cth = cos(eta.y());
  Mat3T<S> j;
  j << S(1.0), S(0.0), sth,
       S(0.0), cphi, -cth * sphi,
       S(0.0), sphi, cth * cphi;
  return j;
}
inline Mat3 euler_rate_jacobian(const EulerAngles& eta) { return euler_rate_jacobian<double>(eta.vec()); }

/// Ellipsoid {p : (p − c)ᵀ P (p − c) ≤ 1}.
struct Ellipsoid {
  Vec3 center = Vec3::Zero();
  Mat3 shape = Mat3::Identity();

  static Ellipsoid sphere(const Vec3& c, double radius) {
    return {c, Mat3::Identity() / (radius * radius)};
  }
  /// Semi-axes β given along the columns of `orientation`.
  static Ellipsoid from_axes(const Vec3& c, const Vec3& semi_axes, const Mat3& orientation) {
    const Vec3 inv = semi_axes.cwiseInverse().cwiseAbs2();
    return {c, orientation * inv.asDiagonal() * orientation.transpose()};
  }
  bool contains(const Vec3& p) const { return (p - center).dot(shape * (p - center)) <= 1.0; }
};

inline void validate_ellipsoid(const Ellipsoid& e) {
  if (!e.shape.allFinite() || !e.center.allFinite())
    throw InvalidGeometryError("ellipsoid has non-finite entries");
  if ((e.shape - e.shape.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, e.shape.cwiseAbs().maxCoeff()))
    throw InvalidGeometryError("ellipsoid shape matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<Mat3> es(e.shape, Eigen::EigenvaluesOnly);
  if (es.eigenvalues().minCoeff() <= 0.0)
    throw InvalidGeometryError("ellipsoid shape matrix is not positive definite");
}

/// Separation margin m = min{(p−c_a)ᵀP_a(p−c_a) : p ∈ b} − 1.
/// m ≤ 0 exactly when the two ellipsoids intersect.
///
/// In coordinates where b is the unit ball the problem becomes
/// min (y−z)ᵀA(y−z) s.t. ‖y‖ ≤ 1, solved through the secular equation of its
/// Lagrange multiplier μ.
inline double ellipsoid_margin(const Ellipsoid& a, const Ellipsoid& b) {
  validate_ellipsoid(a);
  validate_ellipsoid(b);

  const Vec3 delta = a.center - b.center;
  if (delta.dot(b.shape * delta) <= 1.0) return -1.0;  // c_a ∈ b

  const Eigen::LLT<Mat3> llt(b.shape);
  const Mat3 L = llt.matrixL();
  const Mat3 Linv = L.inverse();
  const Mat3 A = Linv * a.shape * Linv.transpose();
  const Eigen::SelfAdjointEigenSolver<Mat3> es(0.5 * (A + A.transpose()));
  const Vec3 lam = es.eigenvalues();
  const Vec3 zeta = es.eigenvectors().transpose() * (L.transpose() * delta);

  // phi(mu) = Σ (λ_i ζ_i / (λ_i + μ))² − 1, strictly decreasing on μ ≥ 0.
  auto phi = [&](double mu, double* dphi) {
    double s = 0.0, ds = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double w = lam[i] * zeta[i] / (lam[i] + mu);
      s += w * w;
      ds += -2.0 * w * w / (lam[i] + mu);
    }
    if (dphi) *dphi = ds;
    return s - 1.0;
  };

  double lo = 0.0;
  double hi = lam.maxCoeff() * zeta.norm();
  double mu = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    double dphi = 0.0;
    const double f = phi(mu, &dphi);
    if (f > 0.0) lo = mu; else hi = mu;
    if (f == 0.0) break;
    double next = mu - f / dphi;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - mu) <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, mu)) {
      mu = next;
      break;
    }
    mu = next;
  }

  double value = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double r = mu * zeta[i] / (lam[i] + mu);
    value += lam[i] * r * r;
  }
  return value - 1.0;
}

}  // namespace coopnmpc
