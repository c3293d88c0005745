#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace paramflow {

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Matrices are row-major everywhere so the flattened parameter layouts and the
// serialized checkpoints share one ordering.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using DenseVector = Vector<double>;
using DenseMatrix = Matrix<double>;

using Index = Eigen::Index;

enum class ErrorCode {
  InvalidArgument,
  NonFinite,
  FactorizationFailure,
  NoConvergence,
  StepTooLarge,
  MissingDerivative,
  OutOfDomain,
  TargetNotReached,
  CacheMismatch,
  ChecksumMismatch,
  ConfigError,
  MissingArtifact,
  IoError,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.allFinite();
}

template <typename Derived>
void require_finite(const Eigen::DenseBase<Derived>& x, const char* what) {
  if (!x.allFinite()) throw Error(ErrorCode::NonFinite, what);
}

}  // namespace paramflow
