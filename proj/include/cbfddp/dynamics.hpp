#pragma once

#include "cbfddp/types.hpp"

namespace cbfddp {

enum class ModelKind { kDubins, kBicycle };

/// Vehicle model and its discretization.
///
/// Dubins state is (x, y, theta) with a single steering-rate control. The
/// kinematic bicycle state is (x, y, v, theta, delta) with controls
/// (acceleration, steering rate).
struct ModelSpec {
    ModelKind kind = ModelKind::kDubins;
    double dt = 0.05;
    ControlVec control_lower;
    ControlVec control_upper;
    double dubins_speed = 0.7;
    double wheelbase = 0.5;

    int state_dim() const { return kind == ModelKind::kDubins ? 3 : 5; }
    int control_dim() const { return kind == ModelKind::kDubins ? 1 : 2; }
    int heading_index() const { return kind == ModelKind::kDubins ? 2 : 3; }

    /// Throws ConfigError naming the first violated invariant.
    void validate() const;

    static ModelSpec dubins();
    static ModelSpec bicycle();
};

namespace bicycle {
inline constexpr int kX = 0;
inline constexpr int kY = 1;
inline constexpr int kV = 2;
inline constexpr int kTheta = 3;
inline constexpr int kDelta = 4;
}  // namespace bicycle

/// Jacobians of the discrete-time map x' = f(x, u).
struct DiscreteJacobians {
    StateMat A;
    InputMat B;
};

StateVec continuous_derivative(const StateVec& state, const ControlVec& control, const ModelSpec& model);

/// One classic RK4 step of length model.dt, control held constant over the step.
StateVec step_rk4(const StateVec& state, const ControlVec& control, const ModelSpec& model);

/// Exact derivatives of step_rk4, propagated through the four RK stages.
DiscreteJacobians jacobians(const StateVec& state, const ControlVec& control, const ModelSpec& model);

/// Central finite differences of step_rk4, componentwise step `h`.
DiscreteJacobians jacobians_fd(const StateVec& state, const ControlVec& control, const ModelSpec& model,
                               double h = 1e-6);

ControlVec clamp_control(const ControlVec& control, const ModelSpec& model);

/// Wraps an angle to (-pi, pi].
double wrap_angle(double angle);

}  // namespace cbfddp
