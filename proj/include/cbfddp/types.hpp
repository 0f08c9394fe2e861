#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace cbfddp {

// Fixed-capacity storage keeps the inner loops allocation free. The largest
// model (kinematic bicycle) has 5 states and 2 controls.
inline constexpr int kMaxStateDim = 5;
inline constexpr int kMaxControlDim = 2;

using StateVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxStateDim, 1>;
using ControlVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxControlDim, 1>;
using StateMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxStateDim, kMaxStateDim>;
using InputMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxStateDim, kMaxControlDim>;
using GainMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxControlDim, kMaxStateDim>;
using ControlMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxControlDim, kMaxControlDim>;

/// Raised when an iteration produces non-finite values or a bounded numerical
/// procedure fails to terminate.
class NumericFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when a scenario or configuration violates an invariant. The message
/// names the offending field.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class Unsupported : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace cbfddp
