#pragma once

#include <Eigen/Dense>

#include <limits>
#include <stdexcept>
#include <string>

namespace coopnmpc {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Upper bound on joint-space dimension (6 base coordinates + up to 6 arm joints).
inline constexpr int kMaxJoints = 12;

/// Small stack-allocated dynamic vectors/matrices for joint- and task-space
/// quantities.
template <typename S>
using JVecT = Eigen::Matrix<S, Eigen::Dynamic, 1, 0, kMaxJoints, 1>;
template <typename S>
using JMatT = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxJoints, kMaxJoints>;
using JVec = JVecT<double>;
using JMat = JMatT<double>;

template <typename S>
using Vec3T = Eigen::Matrix<S, 3, 1>;
template <typename S>
using Mat3T = Eigen::Matrix<S, 3, 3>;
template <typename S>
using VecXT = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using MatXT = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

/// Raised when a configuration leaves the kinematically regular set or hits
/// a representation singularity of the Euler-angle rate map.
class SingularityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ellipsoid shape matrix is not symmetric positive definite.
class InvalidGeometryError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A finite-horizon problem has no admissible solution.
class InfeasibilityError : public std::runtime_error {
 public:
  InfeasibilityError(std::string reason, std::string detail)
      : std::runtime_error(reason + ": " + detail), reason_(std::move(reason)) {}
  const std::string& reason() const { return reason_; }

 private:
  std::string reason_;
};

}  // namespace coopnmpc
