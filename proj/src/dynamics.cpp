#include "cbfddp/dynamics.hpp"

#include <cmath>
#include <numbers>

namespace cbfddp {

namespace {

void check_dims(const StateVec& state, const ControlVec& control, const ModelSpec& model)
{
    if (state.size() != model.state_dim()) {
        throw std::invalid_argument("state has length " + std::to_string(state.size()) + ", model expects " +
                                    std::to_string(model.state_dim()));
    }
    if (control.size() != model.control_dim()) {
        throw std::invalid_argument("control has length " + std::to_string(control.size()) + ", model expects " +
                                    std::to_string(model.control_dim()));
    }
}

StateVec derivative_unchecked(const StateVec& s, const ControlVec& u, const ModelSpec& model)
{
    StateVec d(s.size());
    if (model.kind == ModelKind::kDubins) {
        const double v = model.dubins_speed;
        d << v * std::cos(s[2]), v * std::sin(s[2]), u[0];
    } else {
        using namespace bicycle;
        const double v = s[kV];
        d << v * std::cos(s[kTheta]), v * std::sin(s[kTheta]), u[0], v / model.wheelbase * std::tan(s[kDelta]), u[1];
    }
    return d;
}

// Continuous-time Jacobians of the ODE right-hand side.
void continuous_jacobians(const StateVec& s, const ModelSpec& model, StateMat& fx, InputMat& fu)
{
    const int n = model.state_dim();
    const int m = model.control_dim();
    fx.setZero(n, n);
    fu.setZero(n, m);
    if (model.kind == ModelKind::kDubins) {
        const double v = model.dubins_speed;
        fx(0, 2) = -v * std::sin(s[2]);
        fx(1, 2) = v * std::cos(s[2]);
        fu(2, 0) = 1.0;
    } else {
        using namespace bicycle;
        const double v = s[kV];
        const double c = std::cos(s[kTheta]);
        const double sn = std::sin(s[kTheta]);
        const double cd = std::cos(s[kDelta]);
        fx(kX, kV) = c;
        fx(kX, kTheta) = -v * sn;
        fx(kY, kV) = sn;
        fx(kY, kTheta) = v * c;
        fx(kTheta, kV) = std::tan(s[kDelta]) / model.wheelbase;
        fx(kTheta, kDelta) = v / (model.wheelbase * cd * cd);
        fu(kV, 0) = 1.0;
        fu(kDelta, 1) = 1.0;
    }
}

}  // namespace

void ModelSpec::validate() const
{
    if (!(dt > 0.0) || !std::isfinite(dt)) {
        throw ConfigError("model.dt_s must be positive");
    }
    const int m = control_dim();
    if (control_lower.size() != m || control_upper.size() != m) {
        throw ConfigError("model control limits must have length " + std::to_string(m));
    }
    for (int i = 0; i < m; ++i) {
        if (!(control_lower[i] < control_upper[i])) {
            throw ConfigError("model.control_lower must be strictly below model.control_upper");
        }
    }
    if (kind == ModelKind::kDubins && !(dubins_speed > 0.0)) {
        throw ConfigError("model.dubins_speed_mps must be positive");
    }
    if (kind == ModelKind::kBicycle && !(wheelbase > 0.0)) {
        throw ConfigError("model.wheelbase_m must be positive");
    }
}

ModelSpec ModelSpec::dubins()
{
    ModelSpec spec;
    spec.kind = ModelKind::kDubins;
    spec.control_lower = ControlVec::Constant(1, -1.0);
    spec.control_upper = ControlVec::Constant(1, 1.0);
    return spec;
}

ModelSpec ModelSpec::bicycle()
{
    ModelSpec spec;
    spec.kind = ModelKind::kBicycle;
    spec.control_lower = ControlVec(2);
    spec.control_upper = ControlVec(2);
    spec.control_lower << -0.5, -0.8;
    spec.control_upper << 0.5, 0.8;
    return spec;
}

StateVec continuous_derivative(const StateVec& state, const ControlVec& control, const ModelSpec& model)
{
    check_dims(state, control, model);
    return derivative_unchecked(state, control, model);
}

StateVec step_rk4(const StateVec& state, const ControlVec& control, const ModelSpec& model)
{
    check_dims(state, control, model);
    const double h = model.dt;
    const StateVec k1 = derivative_unchecked(state, control, model);
    const StateVec k2 = derivative_unchecked(state + 0.5 * h * k1, control, model);
    const StateVec k3 = derivative_unchecked(state + 0.5 * h * k2, control, model);
    const StateVec k4 = derivative_unchecked(state + h * k3, control, model);
    StateVec next = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!next.allFinite()) {
        throw NumericFailure("step_rk4 produced a non-finite state");
    }
    return next;
}

DiscreteJacobians jacobians(const StateVec& state, const ControlVec& control, const ModelSpec& model)
{
    check_dims(state, control, model);
    const int n = model.state_dim();
    const double h = model.dt;

    StateMat fx;
    InputMat fu;
    const StateMat eye = StateMat::Identity(n, n);

    // Stage values and their sensitivities dk/dx, dk/du.
    const StateVec k1 = derivative_unchecked(state, control, model);
    continuous_jacobians(state, model, fx, fu);
    const StateMat k1x = fx;
    const InputMat k1u = fu;

    const StateVec s2 = state + 0.5 * h * k1;
    const StateVec k2 = derivative_unchecked(s2, control, model);
    continuous_jacobians(s2, model, fx, fu);
    const StateMat k2x = fx * (eye + 0.5 * h * k1x);
    const InputMat k2u = fx * (0.5 * h * k1u) + fu;

    const StateVec s3 = state + 0.5 * h * k2;
    continuous_jacobians(s3, model, fx, fu);
    const StateMat k3x = fx * (eye + 0.5 * h * k2x);
    const InputMat k3u = fx * (0.5 * h * k2u) + fu;

    const StateVec s4 = state + h * derivative_unchecked(s3, control, model);
    continuous_jacobians(s4, model, fx, fu);
    const StateMat k4x = fx * (eye + h * k3x);
    const InputMat k4u = fx * (h * k3u) + fu;

    DiscreteJacobians jac;
    jac.A = eye + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
    jac.B = (h / 6.0) * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
    if (!jac.A.allFinite() || !jac.B.allFinite()) {
        throw NumericFailure("jacobians produced non-finite entries");
    }
    return jac;
}

DiscreteJacobians jacobians_fd(const StateVec& state, const ControlVec& control, const ModelSpec& model, double h)
{
    check_dims(state, control, model);
    const int n = model.state_dim();
    const int m = model.control_dim();
    DiscreteJacobians jac;
    jac.A.resize(n, n);
    jac.B.resize(n, m);
    for (int i = 0; i < n; ++i) {
        StateVec plus = state;
        StateVec minus = state;
        plus[i] += h;
        minus[i] -= h;
        jac.A.col(i) = (step_rk4(plus, control, model) - step_rk4(minus, control, model)) / (2.0 * h);
    }
    for (int j = 0; j < m; ++j) {
        ControlVec plus = control;
        ControlVec minus = control;
        plus[j] += h;
        minus[j] -= h;
        jac.B.col(j) = (step_rk4(state, plus, model) - step_rk4(state, minus, model)) / (2.0 * h);
    }
    return jac;
}

ControlVec clamp_control(const ControlVec& control, const ModelSpec& model)
{
    return control.cwiseMax(model.control_lower).cwiseMin(model.control_upper);
}

double wrap_angle(double angle)
{
    constexpr double kTwoPi = 2.0 * std::numbers::pi;
    double wrapped = std::fmod(angle + std::numbers::pi, kTwoPi);
    if (wrapped <= 0.0) {
        wrapped += kTwoPi;
    }
    return wrapped - std::numbers::pi;
}

}  // namespace cbfddp
