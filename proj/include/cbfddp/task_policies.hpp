#pragma once

#include "cbfddp/dynamics.hpp"

namespace cbfddp {

/// Gains of the performance policies that the filters modify. Dubins uses
/// the goal point and heading gain; the bicycle uses the rest.
struct TaskPolicyConfig {
    double goal_x = 0.0;
    double goal_y = 0.0;
    double heading_gain = 2.0;

    double lookahead_distance = 0.8;
    double reference_speed = 0.9;
    double speed_feedback_gain = 2.0;
    double steering_feedback_gain = 3.0;
    double road_center_y = 0.0;
    double heading_deadband = 0.1;

    void validate() const;
};

/// Turns toward the goal point at a rate proportional to the wrapped bearing error.
ControlVec dubins_task(const StateVec& state, const TaskPolicyConfig& config, const ModelSpec& model);

/// Speed tracking plus pursuit of a look-ahead point on the road center line.
/// Inside the heading deadband the wheel is straightened instead.
ControlVec bicycle_task(const StateVec& state, const TaskPolicyConfig& config, const ModelSpec& model);

/// Whether the bicycle steering law is in its straighten-the-wheel regime.
bool bicycle_in_deadband(const StateVec& state, const TaskPolicyConfig& config);

ControlVec task_control(const StateVec& state, const TaskPolicyConfig& config, const ModelSpec& model);

}  // namespace cbfddp
