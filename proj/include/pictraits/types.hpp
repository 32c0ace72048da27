#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace pictraits {

using Scalar = double;

using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
using ArrayXX = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <int Rows>
using ArrayN = Eigen::Array<Scalar, Rows, 1>;

/// Canonical missing-value marker for feature cells. Features that cannot be
/// computed (e.g. hue statistics of a grayscale image) carry this value and
/// serialize as an empty CSV cell.
inline constexpr Scalar kMissing = std::numeric_limits<Scalar>::quiet_NaN();

inline bool is_missing(Scalar v) { return std::isnan(v); }

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed inputs: bad manifests, dangling references, schema mismatches.
/// The CLI maps these to exit code 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Bad run configuration (e.g. a frequency floor that empties the vocabulary).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Numerical failures: degenerate columns, collinear covariates,
/// solver non-convergence.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace pictraits
