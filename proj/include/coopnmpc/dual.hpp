#pragma once

// Forward-mode dual numbers. Kinematics and dynamics are templated on the
// scalar so that directional derivatives (J̇ along q̇, ∂B/∂q_k) come out exact
// instead of by finite differencing.

#include <Eigen/Core>

#include <cmath>

namespace coopnmpc {

template <typename T>
struct Dual {
  T v{};  // value
  T d{};  // derivative along the seeded direction

  Dual() = default;
  Dual(T value) : v(value), d(T(0)) {}  // NOLINT: implicit promotion from constants
  Dual(T value, T deriv) : v(value), d(deriv) {}

  Dual& operator+=(const Dual& o) { v += o.v; d += o.d; return *this; }
  Dual& operator-=(const Dual& o) { v -= o.v; d -= o.d; return *this; }
  Dual& operator*=(const Dual& o) { d = d * o.v + v * o.d; v *= o.v; return *this; }
  Dual& operator/=(const Dual& o) {
    d = (d * o.v - v * o.d) / (o.v * o.v);
    v /= o.v;
    return *this;
  }
};

template <typename T> Dual<T> operator+(Dual<T> a, const Dual<T>& b) { return a += b; }
template <typename T> Dual<T> operator-(Dual<T> a, const Dual<T>& b) { return a -= b; }
template <typename T> Dual<T> operator*(Dual<T> a, const Dual<T>& b) { return a *= b; }
template <typename T> Dual<T> operator/(Dual<T> a, const Dual<T>& b) { return a /= b; }
template <typename T> Dual<T> operator-(const Dual<T>& a) { return {-a.v, -a.d}; }
template <typename T> Dual<T> operator+(const Dual<T>& a) { return a; }

template <typename T> Dual<T> operator+(Dual<T> a, double b) { a.v += b; return a; }
template <typename T> Dual<T> operator+(double b, Dual<T> a) { a.v += b; return a; }
template <typename T> Dual<T> operator-(Dual<T> a, double b) { a.v -= b; return a; }
template <typename T> Dual<T> operator-(double b, const Dual<T>& a) { return {b - a.v, -a.d}; }
template <typename T> Dual<T> operator*(const Dual<T>& a, double b) { return {a.v * b, a.d * b}; }
template <typename T> Dual<T> operator*(double b, const Dual<T>& a) { return {a.v * b, a.d * b}; }
template <typename T> Dual<T> operator/(const Dual<T>& a, double b) { return {a.v / b, a.d / b}; }

template <typename T> bool operator<(const Dual<T>& a, const Dual<T>& b) { return a.v < b.v; }
template <typename T> bool operator>(const Dual<T>& a, const Dual<T>& b) { return a.v > b.v; }
template <typename T> bool operator<=(const Dual<T>& a, const Dual<T>& b) { return a.v <= b.v; }
template <typename T> bool operator>=(const Dual<T>& a, const Dual<T>& b) { return a.v >= b.v; }
template <typename T> bool operator==(const Dual<T>& a, const Dual<T>& b) { return a.v == b.v; }
template <typename T> bool operator!=(const Dual<T>& a, const Dual<T>& b) { return a.v != b.v; }

template <typename T> Dual<T> sin(const Dual<T>& a) { using std::sin; using std::cos; return {sin(a.v), cos(a.v) * a.d}; }
template <typename T> Dual<T> cos(const Dual<T>& a) { using std::sin; using std::cos; return {cos(a.v), -sin(a.v) * a.d}; }
template <typename T> Dual<T> sqrt(const Dual<T>& a) {
  using std::sqrt;
  const T s = sqrt(a.v);
  return {s, a.d / (2.0 * s)};
}
template <typename T> Dual<T> abs(const Dual<T>& a) { return a.v < 0 ? -a : a; }

using Dual1 = Dual<double>;

inline double value_of(double x) { return x; }
template <typename T> double value_of(const Dual<T>& x) { return value_of(x.v); }

}  // namespace coopnmpc

namespace Eigen {

template <typename T>
struct NumTraits<coopnmpc::Dual<T>> : NumTraits<T> {
  using Real = coopnmpc::Dual<T>;
  using NonInteger = coopnmpc::Dual<T>;
  using Nested = coopnmpc::Dual<T>;
  using Literal = coopnmpc::Dual<T>;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 2,
    AddCost = 2,
    MulCost = 4
  };
};

template <typename T, typename BinaryOp>
struct ScalarBinaryOpTraits<coopnmpc::Dual<T>, double, BinaryOp> {
  using ReturnType = coopnmpc::Dual<T>;
};
template <typename T, typename BinaryOp>
struct ScalarBinaryOpTraits<double, coopnmpc::Dual<T>, BinaryOp> {
  using ReturnType = coopnmpc::Dual<T>;
};

}  // namespace Eigen
