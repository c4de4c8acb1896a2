#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace fairagg {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Error raised for invalid inputs (bad dimensions, violated preconditions).
class invalid_input : public std::invalid_argument {
 public:
  explicit invalid_input(const std::string& what) : std::invalid_argument(what) {}
};

/// Error raised when a numerical operation cannot proceed (singular matrix,
/// rank deficiency, underflow).
class numeric_error : public std::runtime_error {
 public:
  explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fairagg
