#include <doctest.h>

#include <cmath>

#include "cbfddp/task_policies.hpp"

using namespace cbfddp;

namespace {

StateVec bike_state(double x, double y, double v, double theta, double delta)
{
    StateVec s(5);
    s << x, y, v, theta, delta;
    return s;
}

StateVec dubins_state(double x, double y, double theta)
{
    StateVec s(3);
    s << x, y, theta;
    return s;
}

}  // namespace

TEST_CASE("bicycle policy is at rest on its equilibrium")
{
    const ModelSpec model = ModelSpec::bicycle();
    TaskPolicyConfig cfg;
    const ControlVec u = bicycle_task(bike_state(3.0, 0.0, cfg.reference_speed, 0.0, 0.0), cfg, model);
    CHECK(u.isZero(0.0));
    CHECK(bicycle_in_deadband(bike_state(3.0, 0.0, 0.5, 0.0, 0.0), cfg));
}

TEST_CASE("bicycle speed channel saturates")
{
    const ModelSpec model = ModelSpec::bicycle();
    TaskPolicyConfig cfg;
    CHECK(bicycle_task(bike_state(0, 0, 0.0, 0, 0), cfg, model)[0] == model.control_upper[0]);
    CHECK(bicycle_task(bike_state(0, 0, 3.0, 0, 0), cfg, model)[0] == model.control_lower[0]);
    const double v = cfg.reference_speed - 0.1;
    CHECK(bicycle_task(bike_state(0, 0, v, 0, 0), cfg, model)[0] ==
          doctest::Approx(cfg.speed_feedback_gain * 0.1).epsilon(1e-12));
}

TEST_CASE("bicycle steering deadband and pursuit")
{
    const ModelSpec model = ModelSpec::bicycle();
    TaskPolicyConfig cfg;
    // Inside the deadband the wheel is straightened.
    const StateVec near = bike_state(0, 0.01, 0.9, 0.0, 0.1);
    REQUIRE(bicycle_in_deadband(near, cfg));
    CHECK(bicycle_task(near, cfg, model)[1] == doctest::Approx(-cfg.steering_feedback_gain * 0.1).epsilon(1e-12));

    // Off-center to the left the look-ahead point lies to the right.
    const StateVec left = bike_state(0, 0.5, 0.9, 0.0, 0.0);
    REQUIRE(!bicycle_in_deadband(left, cfg));
    const double err = std::atan2(-0.5, cfg.lookahead_distance);
    const double desired = std::atan(2.0 * model.wheelbase * std::sin(err) / cfg.lookahead_distance);
    const double expected = std::clamp(cfg.steering_feedback_gain * desired, model.control_lower[1],
                                       model.control_upper[1]);
    CHECK(bicycle_task(left, cfg, model)[1] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(bicycle_task(left, cfg, model)[1] < 0.0);
}

TEST_CASE("bicycle closed loop settles on the center line")
{
    const ModelSpec model = ModelSpec::bicycle();
    TaskPolicyConfig cfg;
    StateVec x = bike_state(0.0, 0.6, 0.5, 0.2, 0.0);
    for (int t = 0; t < 200; ++t) {
        const ControlVec u = bicycle_task(x, cfg, model);
        CHECK(u == clamp_control(u, model));
        x = step_rk4(x, u, model);
    }
    // The deadband stops the correction once the look-ahead bearing is small,
    // so the settled offset is bounded by L tan(deadband), not zero.
    CHECK(bicycle_in_deadband(x, cfg));
    CHECK(std::abs(x[bicycle::kTheta]) < 0.01);
    CHECK(std::abs(x[bicycle::kY]) < cfg.lookahead_distance * std::tan(cfg.heading_deadband));
    CHECK(x[bicycle::kV] == doctest::Approx(cfg.reference_speed).epsilon(1e-3));
}

TEST_CASE("dubins policy turns toward the goal")
{
    const ModelSpec model = ModelSpec::dubins();
    TaskPolicyConfig cfg;
    cfg.goal_x = 4.5;
    CHECK(dubins_task(dubins_state(0, 0, 0), cfg, model).isZero(0.0));
    CHECK(dubins_task(dubins_state(4.5, 0, 1.0), cfg, model).isZero(0.0));

    // Mirror symmetry about the line through the goal.
    const ControlVec a = dubins_task(dubins_state(1.0, 0.3, 0.1), cfg, model);
    const ControlVec b = dubins_task(dubins_state(1.0, -0.3, -0.1), cfg, model);
    CHECK(a[0] == doctest::Approx(-b[0]).epsilon(1e-15));
    CHECK(a[0] < 0.0);

    const double small = std::atan2(0.05, 4.5 - 1.0);
    CHECK(dubins_task(dubins_state(1.0, -0.05, 0.0), cfg, model)[0] ==
          doctest::Approx(cfg.heading_gain * small).epsilon(1e-12));
    CHECK(dubins_task(dubins_state(1.0, 0.0, M_PI - 0.1), cfg, model)[0] == model.control_lower[0]);
}

TEST_CASE("dubins closed loop reaches the goal")
{
    const ModelSpec model = ModelSpec::dubins();
    TaskPolicyConfig cfg;
    cfg.goal_x = 4.5;
    StateVec x = dubins_state(0.0, 0.5, 0.0);
    double closest = INFINITY;
    for (int t = 0; t < 200; ++t) {
        x = step_rk4(x, dubins_task(x, cfg, model), model);
        closest = std::min(closest, std::hypot(x[0] - 4.5, x[1]));
    }
    CHECK(closest < 0.05);
}

TEST_CASE("task policy dispatch and validation")
{
    TaskPolicyConfig cfg;
    const StateVec b = bike_state(0, 0.3, 0.2, 0, 0);
    CHECK(task_control(b, cfg, ModelSpec::bicycle()) == bicycle_task(b, cfg, ModelSpec::bicycle()));
    CHECK_THROWS_AS(bicycle_task(dubins_state(0, 0, 0), cfg, ModelSpec::dubins()), std::invalid_argument);
    CHECK_NOTHROW(cfg.validate());
    cfg.lookahead_distance = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = TaskPolicyConfig{};
    cfg.heading_deadband = -0.1;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
