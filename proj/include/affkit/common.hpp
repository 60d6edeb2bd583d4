#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <stdexcept>
#include <string>
#include <utility>

namespace affkit {

using Vec3 = Eigen::Vector3d;
using Quat = Eigen::Quaterniond;  // (w, x, y, z) constructor order, Hamilton product
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

inline constexpr double kPi = 3.141592653589793238462643383279502884;

// 20 Hz control rate: per-step joint deltas are bounded by max_speed / kControlHz.
inline constexpr double kControlHz = 20.0;

/// Violated call contract (caller bug): dimension mismatch, broken precondition.
class ContractError : public std::logic_error {
  using std::logic_error::logic_error;
};

/// Invalid configuration; carries the offending field path for diagnostics.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field_path, const std::string& what)
      : std::runtime_error(field_path.empty() ? what : field_path + ": " + what),
        field_path_(std::move(field_path)) {}
  const std::string& field_path() const { return field_path_; }

 private:
  std::string field_path_;
};

/// Non-finite value where finite math was required; aborts the operation.
class NumericError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Commanded keypoint outside the arm's usable workspace.
class OutOfWorkspaceError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Covariance that cannot be factorized even after jitter.
class DegenerateCovarianceError : public NumericError {
  using NumericError::NumericError;
};

}  // namespace affkit
