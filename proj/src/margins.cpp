#include "cbfddp/margins.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace cbfddp {

namespace {

constexpr double kCenterEps = 1e-12;

int heading_index_for(int n) { return n == 3 ? 2 : bicycle::kTheta; }

struct Piece {
    double value;
    StateVec grad;
    StateMat hess;
    bool degenerate = false;
};

// Evaluates the value of every elementary piece into `values`.
void piece_values(const StateVec& s, const Environment& env, std::vector<double>& values)
{
    values.clear();
    const double px = s[0];
    const double py = s[1];
    for (const auto& ob : env.obstacles) {
        values.push_back(std::hypot(px - ob.center_x, py - ob.center_y) - (ob.radius + env.footprint_radius));
    }
    if (env.road_half_width) {
        const double room = *env.road_half_width - env.footprint_radius;
        values.push_back(env.road_scale * (room - py));
        values.push_back(env.road_scale * (room + py));
    }
    if (env.yaw_bound) {
        const double theta = wrap_angle(s[heading_index_for(static_cast<int>(s.size()))]);
        values.push_back(env.yaw_scale * (*env.yaw_bound - theta));
        values.push_back(env.yaw_scale * (*env.yaw_bound + theta));
    }
    if (env.steering_angle_bound && s.size() == 5) {
        values.push_back(*env.steering_angle_bound - s[bicycle::kDelta]);
        values.push_back(*env.steering_angle_bound + s[bicycle::kDelta]);
    }
}

Piece piece_derivatives(const StateVec& s, const Environment& env, int index)
{
    const int n = static_cast<int>(s.size());
    Piece piece;
    piece.grad = StateVec::Zero(n);
    piece.hess = StateMat::Zero(n, n);
    const int n_obs = static_cast<int>(env.obstacles.size());
    if (index < n_obs) {
        const auto& ob = env.obstacles[static_cast<std::size_t>(index)];
        const double dx = s[0] - ob.center_x;
        const double dy = s[1] - ob.center_y;
        const double d = std::hypot(dx, dy);
        piece.value = d - (ob.radius + env.footprint_radius);
        if (d < kCenterEps) {
            piece.degenerate = true;
            return piece;
        }
        const double nx = dx / d;
        const double ny = dy / d;
        piece.grad[0] = nx;
        piece.grad[1] = ny;
        piece.hess(0, 0) = (1.0 - nx * nx) / d;
        piece.hess(1, 1) = (1.0 - ny * ny) / d;
        piece.hess(0, 1) = piece.hess(1, 0) = -nx * ny / d;
        return piece;
    }
    index -= n_obs;
    if (env.road_half_width) {
        const double room = *env.road_half_width - env.footprint_radius;
        if (index < 2) {
            const double sign = index == 0 ? -1.0 : 1.0;
            piece.value = env.road_scale * (room + sign * s[1]);
            piece.grad[1] = env.road_scale * sign;
            return piece;
        }
        index -= 2;
    }
    if (env.yaw_bound) {
        const int hi = heading_index_for(n);
        const double theta = wrap_angle(s[hi]);
        if (index < 2) {
            const double sign = index == 0 ? -1.0 : 1.0;
            piece.value = env.yaw_scale * (*env.yaw_bound + sign * theta);
            piece.grad[hi] = env.yaw_scale * sign;
            return piece;
        }
        index -= 2;
    }
    if (env.steering_angle_bound && n == 5 && index < 2) {
        const double sign = index == 0 ? -1.0 : 1.0;
        piece.value = *env.steering_angle_bound + sign * s[bicycle::kDelta];
        piece.grad[bicycle::kDelta] = sign;
        return piece;
    }
    throw std::out_of_range("margin piece index out of range");
}

double soft_min_value(const std::vector<double>& values, double kappa)
{
    const double lo = *std::min_element(values.begin(), values.end());
    double sum = 0.0;
    for (double v : values) {
        sum += std::exp(-kappa * (v - lo));
    }
    return lo - std::log(sum) / kappa;
}

}  // namespace

void Environment::validate() const
{
    for (const auto& ob : obstacles) {
        if (!(ob.radius >= 0.0)) {
            throw ConfigError("environment.obstacles radius_m must be non-negative");
        }
    }
    if (!(footprint_radius >= 0.0)) {
        throw ConfigError("environment.footprint_radius_m must be non-negative");
    }
    if (road_half_width && !(*road_half_width > footprint_radius)) {
        throw ConfigError("environment.road_half_width_m must exceed footprint_radius_m");
    }
    if (yaw_bound && !(*yaw_bound > 0.0)) {
        throw ConfigError("environment.yaw_bound_rad must be positive");
    }
    if (steering_angle_bound && !(*steering_angle_bound > 0.0)) {
        throw ConfigError("environment.steering_angle_bound_rad must be positive");
    }
    if (!(road_scale > 0.0) || !(yaw_scale > 0.0)) {
        throw ConfigError("environment scale factors must be positive");
    }
    if (soft_min && !(soft_min_sharpness > 0.0)) {
        throw ConfigError("environment.soft_min_sharpness must be positive");
    }
    if (piece_count() == 0) {
        throw ConfigError("environment declares no constraints");
    }
}

int Environment::piece_count() const
{
    return static_cast<int>(obstacles.size()) + (road_half_width ? 2 : 0) + (yaw_bound ? 2 : 0) +
           (steering_angle_bound ? 2 : 0);
}

double failure_value(const StateVec& state, const Environment& env)
{
    thread_local std::vector<double> values;
    piece_values(state, env, values);
    if (values.empty()) {
        return std::numeric_limits<double>::infinity();
    }
    if (env.soft_min) {
        return soft_min_value(values, env.soft_min_sharpness);
    }
    return *std::min_element(values.begin(), values.end());
}

MarginEval failure_margin(const StateVec& state, const Environment& env)
{
    const int n = static_cast<int>(state.size());
    thread_local std::vector<double> values;
    piece_values(state, env, values);

    MarginEval eval;
    eval.grad = StateVec::Zero(n);
    eval.hess = StateMat::Zero(n, n);
    if (values.empty()) {
        eval.value = std::numeric_limits<double>::infinity();
        return eval;
    }
    const auto it = std::min_element(values.begin(), values.end());
    eval.active_index = static_cast<int>(it - values.begin());

    if (!env.soft_min) {
        const Piece piece = piece_derivatives(state, env, eval.active_index);
        eval.value = *it;
        eval.grad = piece.grad;
        eval.hess = piece.hess;
        eval.degenerate = piece.degenerate;
        return eval;
    }

    // Soft minimum s = -1/k log sum exp(-k m_i). With weights w = softmax(-k m):
    // grad s = sum w_i grad m_i, hess s = sum w_i hess m_i - k (sum w_i g_i g_i^T - grad s grad s^T).
    const double kappa = env.soft_min_sharpness;
    const double lo = *it;
    double total = 0.0;
    std::vector<double> weights(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        weights[i] = std::exp(-kappa * (values[i] - lo));
        total += weights[i];
    }
    StateMat outer = StateMat::Zero(n, n);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const double w = weights[i] / total;
        const Piece piece = piece_derivatives(state, env, static_cast<int>(i));
        eval.grad += w * piece.grad;
        eval.hess += w * piece.hess;
        outer += w * piece.grad * piece.grad.transpose();
        eval.degenerate = eval.degenerate || (piece.degenerate && static_cast<int>(i) == eval.active_index);
    }
    eval.hess -= kappa * (outer - eval.grad * eval.grad.transpose());
    eval.value = lo - std::log(total) / kappa;
    return eval;
}

ControlVec stopping_control(const StateVec& state, const ModelSpec& model)
{
    if (model.kind != ModelKind::kBicycle) {
        throw std::invalid_argument("stopping policy requires the bicycle model");
    }
    ControlVec u(2);
    u[0] = -state[bicycle::kV] / model.dt;
    u[1] = -kStopSteerGain * state[bicycle::kDelta];
    return clamp_control(u, model);
}

namespace {

// Advances one stopping step, snapping the speed to exactly zero once the
// vehicle halts.
StateVec stopping_step(const StateVec& x, const ModelSpec& model)
{
    const double v_before = x[bicycle::kV];
    StateVec next = step_rk4(x, stopping_control(x, model), model);
    const double v_after = next[bicycle::kV];
    if (std::abs(v_after) < 1e-9 || v_after * v_before < 0.0) {
        next[bicycle::kV] = 0.0;
    }
    return next;
}

}  // namespace

std::vector<StateVec> stopping_rollout(const StateVec& state, const ModelSpec& model)
{
    if (model.kind != ModelKind::kBicycle) {
        throw std::invalid_argument("stopping rollout requires the bicycle model");
    }
    std::vector<StateVec> path{state};
    StateVec x = state;
    int steps = 0;
    while (x[bicycle::kV] != 0.0) {
        if (++steps > kMaxStoppingSteps) {
            throw NumericFailure("stopping rollout did not halt within " + std::to_string(kMaxStoppingSteps) +
                                 " steps");
        }
        x = stopping_step(x, model);
        path.push_back(x);
    }
    return path;
}

double target_value(const StateVec& state, const Environment& env, const ModelSpec& model)
{
    if (model.kind != ModelKind::kBicycle) {
        throw std::invalid_argument("target margin requires the bicycle model");
    }
    double lowest = failure_value(state, env);
    StateVec x = state;
    int steps = 0;
    while (x[bicycle::kV] != 0.0) {
        if (++steps > kMaxStoppingSteps) {
            throw NumericFailure("stopping rollout did not halt within " + std::to_string(kMaxStoppingSteps) +
                                 " steps");
        }
        x = stopping_step(x, model);
        lowest = std::min(lowest, failure_value(x, env));
    }
    return lowest;
}

MarginEval target_margin(const StateVec& state, const Environment& env, const ModelSpec& model)
{
    const int n = static_cast<int>(state.size());
    const double h = kTargetFdStep;
    MarginEval eval;
    eval.value = target_value(state, env, model);
    eval.grad = StateVec::Zero(n);
    eval.hess = StateMat::Zero(n, n);

    StateVec probe = state;
    std::array<double, kMaxStateDim> plus{};
    std::array<double, kMaxStateDim> minus{};
    for (int i = 0; i < n; ++i) {
        probe[i] = state[i] + h;
        plus[static_cast<std::size_t>(i)] = target_value(probe, env, model);
        probe[i] = state[i] - h;
        minus[static_cast<std::size_t>(i)] = target_value(probe, env, model);
        probe[i] = state[i];
        const auto si = static_cast<std::size_t>(i);
        eval.grad[i] = (plus[si] - minus[si]) / (2.0 * h);
        eval.hess(i, i) = (plus[si] - 2.0 * eval.value + minus[si]) / (h * h);
    }
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            double corners[4];
            int k = 0;
            for (double si : {1.0, -1.0}) {
                for (double sj : {1.0, -1.0}) {
                    probe[i] = state[i] + si * h;
                    probe[j] = state[j] + sj * h;
                    corners[k++] = target_value(probe, env, model);
                }
            }
            probe[i] = state[i];
            probe[j] = state[j];
            eval.hess(i, j) = eval.hess(j, i) = (corners[0] - corners[1] - corners[2] + corners[3]) / (4.0 * h * h);
        }
    }

    // Report which piece binds at the worst point of the stopping path.
    const auto path = stopping_rollout(state, model);
    double lowest = std::numeric_limits<double>::infinity();
    for (const auto& x : path) {
        const MarginEval g = failure_margin(x, env);
        if (g.value < lowest) {
            lowest = g.value;
            eval.active_index = g.active_index;
        }
    }
    return eval;
}

}  // namespace cbfddp
