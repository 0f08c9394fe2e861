#include <doctest.h>

#include <cmath>

#include "cbfddp/filters.hpp"
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

ControlVec bike_control(double a, double w)
{
    ControlVec u(2);
    u << a, w;
    return u;
}

Environment bike_env()
{
    Environment env;
    env.obstacles = {{3.0, 0.24, 0.3}};
    env.road_half_width = 1.2;
    env.footprint_radius = 0.1;
    return env;
}

SolverConfig reach_avoid(int horizon)
{
    SolverConfig c;
    c.horizon = horizon;
    c.mode = SolveMode::kReachAvoid;
    return c;
}

Environment dubins_env()
{
    Environment env;
    env.obstacles = {{2.0, 0.1, 0.4}};
    env.footprint_radius = 0.15;
    return env;
}

SolverConfig avoid_only(int horizon)
{
    SolverConfig c;
    c.horizon = horizon;
    c.mode = SolveMode::kAvoidOnly;
    return c;
}

// Fresh solve of V(x, 0); the filters' own values are checked against it.
double value_at(const StateVec& x, const ModelSpec& model, const Environment& env, const SolverConfig& solver)
{
    return ReachAvoidIlq(model, env, solver).solve(x).root_value.value;
}

}  // namespace

TEST_CASE("filter config and mode parsing")
{
    CHECK(parse_filter_mode("cbf-ddp") == FilterMode::kCbfDdp);
    CHECK(parse_filter_mode("cbf_ddp") == FilterMode::kCbfDdp);
    CHECK(parse_filter_mode("manual_cbf") == FilterMode::kManualCbf);
    CHECK(parse_filter_mode("none") == FilterMode::kNone);
    CHECK_THROWS_AS(parse_filter_mode("cbf"), ConfigError);
    CHECK(std::string(to_string(FilterMode::kLrDdp)) == "lr-ddp");
    CHECK(parse_applied_mode(to_string(AppliedMode::kFallback)) == AppliedMode::kFallback);

    FilterConfig c;
    CHECK_NOTHROW(c.validate());
    c.gamma = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = FilterConfig{};
    c.lambda_scale = 0.9;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = FilterConfig{};
    c.max_qcqp_iterations = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("fallback store construction")
{
    const ModelSpec model = ModelSpec::bicycle();
    const Environment env = bike_env();
    const int horizon = 6;

    auto make = [&](const std::vector<StateVec>& states) {
        IlqSolution s;
        s.nominal_states = states;
        for (int t = 0; t < horizon; ++t) {
            s.nominal_controls.push_back(bike_control(0.1 * t, -0.1 * t));
            s.feedback_gains.push_back(GainMat::Constant(2, 5, 0.01 * t));
            s.feedforward_gains.push_back(bike_control(0.02, 0.0));
        }
        return FallbackStore::build(s, env, model);
    };

    // At rest far from everything: inside the target set from the start.
    std::vector<StateVec> resting(horizon + 1, bike_state(0, 0, 0, 0, 0));
    const FallbackStore a = make(resting);
    CHECK(a.first_target_index() == 0);

    // Fast and close to the obstacle throughout: never inside the target set.
    std::vector<StateVec> doomed(horizon + 1, bike_state(2.4, 0.2, 0.9, 0, 0));
    REQUIRE(target_value(doomed.front(), env, model) < 0.0);
    const FallbackStore b = make(doomed);
    CHECK(b.first_target_index() == horizon);

    // Crossing into the target set: compare against a direct scan of l.
    std::vector<StateVec> mixed;
    for (int t = 0; t <= horizon; ++t) {
        mixed.push_back(bike_state(2.4, 0.2 - 0.15 * t, 0.9 - 0.15 * t, 0, 0));
    }
    int expected = horizon;
    for (int t = 0; t < horizon; ++t) {
        if (target_value(mixed[static_cast<std::size_t>(t)], env, model) >= 0.0) {
            expected = t;
            break;
        }
    }
    REQUIRE(expected > 0);
    REQUIRE(expected < horizon);
    const FallbackStore c = make(mixed);
    CHECK(c.first_target_index() == expected);
    for (int t = expected; t < horizon; ++t) {
        CHECK(c.entry(t).target_policy);
    }

    // Affine entries evaluated at their nominal state give clamp(u + k).
    const int t = expected - 1;
    const StateVec& xb = mixed[static_cast<std::size_t>(t)];
    const ControlVec got = c.control(xb, t, model);
    CHECK(got == clamp_control(bike_control(0.1 * t, -0.1 * t) + bike_control(0.02, 0.0), model));
    // Target entry at rest holds still.
    CHECK(c.control(bike_state(5, 0, 0, 0.3, 0.1), horizon - 1, model).isZero(0.0));

    // Rotation drops the head and appends a target entry.
    FallbackStore d = c;
    d.rotate();
    CHECK(d.size() == horizon);
    CHECK(d.first_target_index() == expected - 1);
    CHECK(d.entry(horizon - 1).target_policy);
}

TEST_CASE("affine entry with zero gains replays the nominal")
{
    const ModelSpec model = ModelSpec::bicycle();
    const Environment env = bike_env();
    IlqSolution s;
    s.nominal_states = {bike_state(2.4, 0.2, 0.9, 0, 0), bike_state(2.45, 0.2, 0.9, 0, 0)};
    s.nominal_controls = {bike_control(-0.3, 0.2)};
    s.feedback_gains = {GainMat::Zero(2, 5)};
    s.feedforward_gains = {bike_control(0.0, 0.0)};
    const FallbackStore store = FallbackStore::build(s, env, model);
    REQUIRE(!store.entry(0).target_policy);
    CHECK(store.control(bike_state(1, 1, 0.3, 0.4, 0.0), 0, model) == bike_control(-0.3, 0.2));
}

TEST_CASE("target-set policy")
{
    const ModelSpec model = ModelSpec::bicycle();
    CHECK(target_set_control(bike_state(0, 0, 0, 0, 0.2), model).isZero(0.0));
    CHECK(target_set_control(bike_state(0, 0, 0.6, 0, 0.2), model) ==
          stopping_control(bike_state(0, 0, 0.6, 0, 0.2), model));
    CHECK_THROWS_AS(target_set_control(dubins_state(0, 0, 0), ModelSpec::dubins()), std::invalid_argument);
}

TEST_CASE("cbf-ddp passes the task control deep in the safe set")
{
    const ModelSpec model = ModelSpec::bicycle();
    Environment env;
    env.obstacles = {{30.0, 0.0, 0.3}};
    env.road_half_width = 1.2;
    env.footprint_radius = 0.1;
    CbfDdpFilter filter(model, env, FilterConfig{}, reach_avoid(20));
    TaskPolicyConfig task;
    StateVec x = bike_state(0, 0, 0.0, 0, 0);
    for (int t = 0; t < 3; ++t) {
        const ControlVec u = bicycle_task(x, task, model);
        const FilterDecision d = filter.step(x, u);
        CHECK(d.mode_applied == AppliedMode::kTask);
        CHECK(d.u_exec == u);
        CHECK(d.qcqp_iterations_used == 0);
        // After the first cycle V(x_t) is reused from the previous step.
        CHECK(filter.last_solve_count() == (t == 0 ? 2 : 1));
        x = step_rk4(x, d.u_exec, model);
    }
}

TEST_CASE("cbf-ddp corrections satisfy the decay condition on re-solve")
{
    const ModelSpec model = ModelSpec::bicycle();
    const Environment env = bike_env();
    const SolverConfig solver = reach_avoid(30);
    FilterConfig cfg;
    cfg.gamma = 0.95;
    CbfDdpFilter filter(model, env, cfg, solver);
    TaskPolicyConfig task;
    StateVec x = bike_state(1.0, 0.0, 0.85, 0, 0);
    int filtered = 0;
    for (int t = 0; t < 25; ++t) {
        const ControlVec u = bicycle_task(x, task, model);
        const FilterDecision d = filter.step(x, u);
        CHECK((d.u_exec.array() >= model.control_lower.array()).all());
        CHECK((d.u_exec.array() <= model.control_upper.array()).all());
        if (d.mode_applied == AppliedMode::kTask) {
            CHECK(d.u_exec == u);
        }
        const StateVec next = step_rk4(x, d.u_exec, model);
        if (d.mode_applied != AppliedMode::kFallback) {
            CHECK(d.v_next >= cfg.gamma * d.v_current - 1e-4);
        }
        if (d.mode_applied == AppliedMode::kFiltered) {
            ++filtered;
            CHECK(d.qcqp_iterations_used >= 1);
            // Store validity: replaying the new store from the next state
            // reaches the target set without touching the failure set.
            const FallbackStore& store = filter.fallback_store();
            StateVec y = next;
            bool reached = target_value(y, env, model) >= 0.0;
            for (int k = 0; k < store.size() && !reached; ++k) {
                y = step_rk4(y, store.control(y, k, model), model);
                CHECK(failure_value(y, env) >= 0.0);
                reached = target_value(y, env, model) >= 0.0;
            }
            CHECK(reached);
        }
        x = next;
    }
    CHECK(filtered > 0);
}

TEST_CASE("cbf-ddp falls back when the next value is negative")
{
    const ModelSpec model = ModelSpec::bicycle();
    const Environment env = bike_env();
    CbfDdpFilter filter(model, env, FilterConfig{}, reach_avoid(20));
    // Full speed right in front of the obstacle: no control keeps V >= 0.
    const StateVec x = bike_state(2.5, 0.24, 0.9, 0, 0);
    REQUIRE(value_at(x, model, env, reach_avoid(20)) < 0.0);
    const FilterDecision d = filter.step(x, bike_control(0.5, 0.0));
    CHECK(d.mode_applied == AppliedMode::kFallback);
    CHECK(d.v_next < 0.0);
    // The store is still the initial all-target one, so the head is the stopping policy.
    CHECK(d.u_exec == target_set_control(x, model));
}

TEST_CASE("lr-ddp keeps safe task controls and overrides unsafe ones")
{
    const ModelSpec model = ModelSpec::dubins();
    const Environment env = dubins_env();
    const SolverConfig solver = avoid_only(40);
    LrDdpFilter lr(model, env, solver);
    TaskPolicyConfig task;
    task.goal_x = 4.5;

    StateVec far = dubins_state(-3.0, 0.0, 0.0);
    const ControlVec u = dubins_task(far, task, model);
    const FilterDecision keep = lr.step(far, u);
    CHECK(keep.mode_applied == AppliedMode::kTask);
    CHECK(keep.u_exec == u);
    CHECK(keep.v_next >= 0.0);

    // Drive straight at the obstacle until the filter intervenes.
    StateVec x = dubins_state(0.0, 0.0, 0.0);
    bool intervened = false;
    LrDdpFilter lr2(model, env, solver);
    for (int t = 0; t < 80 && !intervened; ++t) {
        const ControlVec ut = dubins_task(x, task, model);
        const FilterDecision d = lr2.step(x, ut);
        const double v_task = value_at(step_rk4(x, clamp_control(ut, model), model), model, env, solver);
        if (d.mode_applied == AppliedMode::kFallback) {
            intervened = true;
            CHECK(d.v_next < 0.0);
            const StateVec next = step_rk4(x, d.u_exec, model);
            CHECK(value_at(next, model, env, solver) >= 0.0);
        } else {
            CHECK(d.u_exec == ut);
            CHECK(v_task >= -1e-9);
        }
        x = step_rk4(x, d.u_exec, model);
    }
    CHECK(intervened);
}

TEST_CASE("manual cbf barrier behaviour")
{
    const ModelSpec model = ModelSpec::dubins();
    const Environment env = dubins_env();
    FilterConfig cfg;
    ManualCbfFilter filter(model, env, cfg);
    TaskPolicyConfig task;
    task.goal_x = 4.5;

    const StateVec far = dubins_state(-5.0, 0.0, 0.0);
    const ControlVec u = dubins_task(far, task, model);
    const FilterDecision d = filter.step(far, u);
    CHECK(d.mode_applied == AppliedMode::kTask);
    CHECK(d.u_exec == u);
    const double r = 0.4 + 0.15 + cfg.manual_cbf_buffer;
    CHECK(filter.barrier(far) == doctest::Approx(7.0 * 7.0 + 0.01 - r * r).epsilon(1e-12));

    // On the buffer boundary, grazing past the obstacle: the correction keeps
    // the barrier from dropping beyond linearization error.
    FilterConfig tight = cfg;
    tight.gamma = 0.999;
    ManualCbfFilter edge(model, env, tight);
    const StateVec graze = dubins_state(2.0 - r, 0.1, 0.5 * M_PI - 0.05);
    const FilterDecision e = edge.step(graze, dubins_task(graze, task, model));
    const double b_now = edge.barrier(graze);
    const double b_next = edge.barrier(step_rk4(graze, e.u_exec, model));
    CHECK(std::abs(b_now) < 1e-12);
    CHECK(e.mode_applied == AppliedMode::kFiltered);
    CHECK(b_next >= tight.gamma * b_now - 1e-3);
    CHECK(b_next == doctest::Approx(e.v_next).epsilon(1e-12));

    // Head-on at the boundary no steering helps to first order: the filter
    // turns as hard as possible away from the obstacle, which sits to the left.
    const StateVec head_on = dubins_state(2.0 - r, 0.0, 0.0);
    const FilterDecision h = edge.step(head_on, ControlVec::Zero(1));
    CHECK(h.u_exec == model.control_lower);

    CHECK_THROWS_AS(ManualCbfFilter(ModelSpec::bicycle(), env, cfg), ConfigError);
    CHECK_THROWS_AS(ManualCbfFilter(model, Environment{}, cfg), ConfigError);
}

TEST_CASE("manual cbf activates before lr-ddp on a head-on approach")
{
    const ModelSpec model = ModelSpec::dubins();
    const Environment env = dubins_env();
    TaskPolicyConfig task;
    task.goal_x = 4.5;
    auto first_deviation = [&](SafetyFilter& f) {
        StateVec x = dubins_state(0.0, 0.0, 0.0);
        for (int t = 0; t < 120; ++t) {
            const ControlVec u = dubins_task(x, task, model);
            const FilterDecision d = f.step(x, u);
            if (!(d.u_exec.array() == u.array()).all()) {
                return t;
            }
            x = step_rk4(x, d.u_exec, model);
        }
        return 1000;
    };
    ManualCbfFilter manual(model, env, FilterConfig{});
    LrDdpFilter lr(model, env, avoid_only(40));
    const int t_manual = first_deviation(manual);
    const int t_lr = first_deviation(lr);
    CHECK(t_lr < 1000);
    CHECK(t_manual < t_lr);
}

TEST_CASE("pass-through filter")
{
    const ModelSpec model = ModelSpec::bicycle();
    PassThroughFilter f(model);
    const FilterDecision d = f.step(bike_state(0, 0, 0, 0, 0), bike_control(0.9, 0.1));
    CHECK(d.u_exec == bike_control(0.5, 0.1));
    CHECK(d.mode_applied == AppliedMode::kFiltered);
    CHECK(make_filter(model, bike_env(), FilterConfig{}, reach_avoid(10)) != nullptr);
}
