#pragma once

#include <optional>
#include <vector>

#include "cbfddp/dynamics.hpp"

namespace cbfddp {

struct Obstacle {
    double center_x = 0.0;
    double center_y = 0.0;
    double radius = 0.0;
};

/// Failure-set geometry. Every constraint is an elementary signed margin; the
/// failure margin is their minimum (or a log-sum-exp soft minimum when
/// `soft_min` is set).
///
/// Elementary pieces are indexed in this order: one per obstacle, then the
/// upper and lower road edges, then the positive and negative yaw limits,
/// then the positive and negative steering-angle limits. Absent constraints
/// contribute no pieces.
struct Environment {
    std::vector<Obstacle> obstacles;
    std::optional<double> road_half_width;
    std::optional<double> yaw_bound;
    std::optional<double> steering_angle_bound;
    double footprint_radius = 0.0;
    double road_scale = 1.0;
    double yaw_scale = 1.0;
    bool soft_min = false;
    double soft_min_sharpness = 20.0;

    void validate() const;
    int piece_count() const;
};

struct MarginEval {
    double value = 0.0;
    int active_index = -1;
    StateVec grad;
    StateMat hess;
    // Set when the active piece is an obstacle whose center coincides with the
    // vehicle position; grad and hess are zeroed there.
    bool degenerate = false;
};

/// Signed distance to the failure set, with the derivatives of the active piece.
MarginEval failure_margin(const StateVec& state, const Environment& env);

/// Value-only variant of failure_margin for rollouts.
double failure_value(const StateVec& state, const Environment& env);

/// Control of the stopping policy: decelerate at the limit (never reversing
/// through zero speed) and steer the wheel back to straight.
ControlVec stopping_control(const StateVec& state, const ModelSpec& model);

/// Steering-rate gain (1/s) of the stopping policy. A slow straightening keeps
/// the stopping path sensitive to the wheel angle, so the target margin
/// rewards steering away from an obstacle and not only braking.
inline constexpr double kStopSteerGain = 0.3;

/// Rolls the stopping policy out until the vehicle is at rest. The first
/// element is `state` itself; the last has zero speed.
std::vector<StateVec> stopping_rollout(const StateVec& state, const ModelSpec& model);

/// Minimum failure margin along the stopping path. Non-negative exactly when
/// the vehicle can come to a safe halt.
double target_value(const StateVec& state, const Environment& env, const ModelSpec& model);

/// target_value with central finite-difference gradient and Hessian.
MarginEval target_margin(const StateVec& state, const Environment& env, const ModelSpec& model);

inline constexpr int kMaxStoppingSteps = 200;
inline constexpr double kTargetFdStep = 1e-4;

}  // namespace cbfddp
