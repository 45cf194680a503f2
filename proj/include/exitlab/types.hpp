#pragma once

#include <Eigen/Core>
#include <Eigen/Dense>

#include <limits>
#include <stdexcept>
#include <string>

namespace exitlab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Eigen::Index;

template <class Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <class Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Base class for all library errors.
struct ExitlabError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Bad configuration or input that violates a precondition (CLI exit code 2).
struct ConfigError : ExitlabError {
  using ExitlabError::ExitlabError;
};

/// A numerical routine failed to converge or lost a structural
/// guarantee such as positivity (CLI exit code 3).
struct NumericsError : ExitlabError {
  using ExitlabError::ExitlabError;
};

/// Runtime evaluation of a user-specified field failed (domain error
/// inside an expression, unbound variable, non-finite result).
struct FieldEvalError : ExitlabError {
  using ExitlabError::ExitlabError;
};

}  // namespace exitlab
