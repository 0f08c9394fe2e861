#include "cbfddp/task_policies.hpp"

#include <cmath>

namespace cbfddp {

namespace {

double lookahead_error(const StateVec& state, const TaskPolicyConfig& config)
{
    const double bearing = std::atan2(config.road_center_y - state[bicycle::kY], config.lookahead_distance);
    return wrap_angle(bearing - state[bicycle::kTheta]);
}

}  // namespace

void TaskPolicyConfig::validate() const
{
    if (!(lookahead_distance > 0.0)) {
        throw ConfigError("task.lookahead_distance_m must be positive");
    }
    if (!(reference_speed > 0.0)) {
        throw ConfigError("task.reference_speed_mps must be positive");
    }
    if (!(heading_deadband >= 0.0)) {
        throw ConfigError("task.heading_deadband_rad must be non-negative");
    }
    if (!std::isfinite(heading_gain) || !std::isfinite(speed_feedback_gain) || !std::isfinite(steering_feedback_gain)) {
        throw ConfigError("task gains must be finite");
    }
}

ControlVec dubins_task(const StateVec& state, const TaskPolicyConfig& config, const ModelSpec& model)
{
    if (model.kind != ModelKind::kDubins) {
        throw std::invalid_argument("dubins_task requires the Dubins model");
    }
    ControlVec u = ControlVec::Zero(1);
    const double dx = config.goal_x - state[0];
    const double dy = config.goal_y - state[1];
    if (dx == 0.0 && dy == 0.0) {
        return u;
    }
    u[0] = config.heading_gain * wrap_angle(std::atan2(dy, dx) - state[2]);
    return clamp_control(u, model);
}

bool bicycle_in_deadband(const StateVec& state, const TaskPolicyConfig& config)
{
    return std::abs(lookahead_error(state, config)) < config.heading_deadband;
}

ControlVec bicycle_task(const StateVec& state, const TaskPolicyConfig& config, const ModelSpec& model)
{
    if (model.kind != ModelKind::kBicycle) {
        throw std::invalid_argument("bicycle_task requires the bicycle model");
    }
    ControlVec u(2);
    u[0] = config.speed_feedback_gain * (config.reference_speed - state[bicycle::kV]);
    const double delta = state[bicycle::kDelta];
    const double err = lookahead_error(state, config);
    if (std::abs(err) < config.heading_deadband) {
        u[1] = -config.steering_feedback_gain * delta;
    } else {
        // Pure-pursuit wheel angle for an arc through the look-ahead point.
        const double desired = std::atan(2.0 * model.wheelbase * std::sin(err) / config.lookahead_distance);
        u[1] = config.steering_feedback_gain * (desired - delta);
    }
    return clamp_control(u, model);
}

ControlVec task_control(const StateVec& state, const TaskPolicyConfig& config, const ModelSpec& model)
{
    return model.kind == ModelKind::kDubins ? dubins_task(state, config, model) : bicycle_task(state, config, model);
}

}  // namespace cbfddp
