#include "cbfddp/filters.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cbfddp {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

std::vector<ControlVec> shifted(const std::vector<ControlVec>& controls)
{
    if (controls.empty()) {
        return {};
    }
    std::vector<ControlVec> out(controls.begin() + 1, controls.end());
    out.push_back(controls.back());
    return out;
}

bool same_state(const StateVec& a, const StateVec& b)
{
    return a.size() == b.size() && (a.array() == b.array()).all();
}

}  // namespace

const char* to_string(FilterMode mode)
{
    switch (mode) {
        case FilterMode::kCbfDdp:
            return "cbf-ddp";
        case FilterMode::kLrDdp:
            return "lr-ddp";
        case FilterMode::kManualCbf:
            return "manual-cbf";
        case FilterMode::kNone:
            return "none";
    }
    return "unknown";
}

const char* to_string(AppliedMode mode)
{
    switch (mode) {
        case AppliedMode::kTask:
            return "task";
        case AppliedMode::kFiltered:
            return "filtered";
        case AppliedMode::kFallback:
            return "fallback";
    }
    return "unknown";
}

FilterMode parse_filter_mode(const std::string& text)
{
    std::string key = text;
    std::replace(key.begin(), key.end(), '_', '-');
    if (key == "cbf-ddp") {
        return FilterMode::kCbfDdp;
    }
    if (key == "lr-ddp") {
        return FilterMode::kLrDdp;
    }
    if (key == "manual-cbf") {
        return FilterMode::kManualCbf;
    }
    if (key == "none") {
        return FilterMode::kNone;
    }
    throw ConfigError("unknown filter mode '" + text + "'");
}

AppliedMode parse_applied_mode(const std::string& text)
{
    if (text == "task") {
        return AppliedMode::kTask;
    }
    if (text == "filtered") {
        return AppliedMode::kFiltered;
    }
    if (text == "fallback") {
        return AppliedMode::kFallback;
    }
    throw std::invalid_argument("unknown applied mode '" + text + "'");
}

void FilterConfig::validate() const
{
    if (!(gamma > 0.0 && gamma < 1.0)) {
        throw ConfigError("filter.gamma must lie in (0, 1)");
    }
    if (!(lambda_scale >= 1.0)) {
        throw ConfigError("filter.lambda_scale must be at least 1");
    }
    if (max_qcqp_iterations < 1) {
        throw ConfigError("filter.max_qcqp_iterations must be at least 1");
    }
    if (!(manual_cbf_buffer >= 0.0)) {
        throw ConfigError("filter.manual_cbf_buffer_m must be non-negative");
    }
}

// ---------------------------------------------------------------------------
// Fallback store

FallbackStore::FallbackStore(int horizon) : entries_(static_cast<std::size_t>(std::max(horizon, 0))) {}

FallbackStore FallbackStore::build(const IlqSolution& ilq, const Environment& env, const ModelSpec& model)
{
    const int horizon = static_cast<int>(ilq.nominal_controls.size());
    FallbackStore store(horizon);
    for (int t = 0; t < horizon; ++t) {
        const auto ti = static_cast<std::size_t>(t);
        if (target_value(ilq.nominal_states[ti], env, model) >= 0.0) {
            break;
        }
        Entry& e = store.entries_[ti];
        e.target_policy = false;
        e.u_bar = ilq.nominal_controls[ti];
        e.K = ilq.feedback_gains[ti];
        e.k = ilq.feedforward_gains[ti];
        e.x_bar = ilq.nominal_states[ti];
    }
    return store;
}

ControlVec FallbackStore::control(const StateVec& state, int index, const ModelSpec& model) const
{
    const Entry& e = entry(index);
    if (e.target_policy) {
        return target_set_control(state, model);
    }
    StateVec err = state - e.x_bar;
    if (model.heading_index() < err.size()) {
        err[model.heading_index()] = wrap_angle(err[model.heading_index()]);
    }
    return clamp_control(e.u_bar + e.K * err + e.k, model);
}

void FallbackStore::rotate()
{
    if (entries_.empty()) {
        return;
    }
    entries_.erase(entries_.begin());
    entries_.emplace_back();
}

int FallbackStore::first_target_index() const
{
    for (int t = 0; t < size(); ++t) {
        if (entries_[static_cast<std::size_t>(t)].target_policy) {
            return t;
        }
    }
    return size();
}

ControlVec target_set_control(const StateVec& state, const ModelSpec& model)
{
    if (model.kind != ModelKind::kBicycle) {
        throw std::invalid_argument("the target-set policy requires the bicycle model");
    }
    if (state[bicycle::kV] == 0.0) {
        return ControlVec::Zero(model.control_dim());
    }
    return stopping_control(state, model);
}

// ---------------------------------------------------------------------------
// CBF-DDP

CbfDdpFilter::CbfDdpFilter(const ModelSpec& model, const Environment& env, const FilterConfig& filter,
                           const SolverConfig& solver)
    : model_(model), env_(env), filter_(filter), solver_(model, env, solver), store_(solver.horizon)
{
    filter_.validate();
}

IlqSolution CbfDdpFilter::solve(const StateVec& x, std::span<const ControlVec> warm)
{
    ++solves_;
    return solver_.solve(x, warm);
}

// The previous cycle already solved at the state it predicted; reuse that
// solution when the vehicle actually arrived there.
IlqSolution CbfDdpFilter::value_at(const StateVec& x)
{
    if (cached_state_ && cached_solution_ && same_state(*cached_state_, x)) {
        return *cached_solution_;
    }
    return solve(x, warm_);
}

FilterDecision CbfDdpFilter::step(const StateVec& state, const ControlVec& task_control)
{
    solves_ = 0;
    const bool reach_avoid = solver_.config().mode == SolveMode::kReachAvoid;
    const double gamma = filter_.gamma;

    const IlqSolution current = value_at(state);
    const double v_current = current.root_value.value;
    const std::vector<ControlVec> tail = shifted(current.nominal_controls);

    ControlVec u_p = clamp_control(task_control, model_);
    IlqSolution next = solve(step_rk4(state, u_p, model_), tail);
    auto decays = [&](const IlqSolution& s) { return s.root_value.value >= gamma * v_current; };

    FilterDecision out;
    out.v_current = v_current;
    int iterations = 0;
    while (!decays(next) && iterations < filter_.max_qcqp_iterations) {
        const InputMat fu = jacobians(state, u_p, model_).B;
        QcqpParams params = build_constraint(next.root_value, fu, v_current, gamma, model_);
        params.lambda_scale = filter_.lambda_scale;
        if (iterations > 0 && params.c < 0.0) {
            params.c *= filter_.lambda_scale;
        }
        QcqpSolution qs = solve_qcqp(params, u_p, model_);
        if (qs.status == QcqpStatus::kInfeasible) {
            qs = solve_linear_qp(params.p, params.c, u_p, model_);
        }
        if (qs.status == QcqpStatus::kInfeasible) {
            break;
        }
        ++iterations;
        u_p = clamp_control(u_p + qs.delta_u, model_);
        next = solve(step_rk4(state, u_p, model_), next.nominal_controls);
    }

    if (!decays(next)) {
        // Out of corrections: the solution at the current state itself
        // provides a control whose successor keeps at least V(x_t).
        const bool stop_now = reach_avoid && current.branches.front() == Branch::kTarget;
        const ControlVec u_b = stop_now ? target_set_control(state, model_) : current.nominal_controls.front();
        IlqSolution rescue = solve(step_rk4(state, u_b, model_), tail);
        if (rescue.root_value.value > next.root_value.value) {
            u_p = u_b;
            next = std::move(rescue);
        }
    }
    out.qcqp_iterations_used = iterations;
    out.v_next = next.root_value.value;

    if (out.v_next < 0.0) {
        if (reach_avoid) {
            out.u_exec = store_.control(state, 0, model_);
            store_.rotate();
        } else {
            out.u_exec = clamp_control(current.nominal_controls.front(), model_);
        }
        out.mode_applied = AppliedMode::kFallback;
        warm_ = tail;
        cached_state_.reset();
        cached_solution_.reset();
    } else {
        out.u_exec = u_p;
        out.mode_applied = (u_p.array() == task_control.array()).all() ? AppliedMode::kTask : AppliedMode::kFiltered;
        if (reach_avoid) {
            // The store replays the certified nominal exactly; the feedforward
            // step was not part of the rollout that earned the value.
            IlqSolution certified = next;
            for (auto& k : certified.feedforward_gains) {
                k.setZero();
            }
            store_ = FallbackStore::build(certified, env_, model_);
        }
        warm_ = next.nominal_controls;
        cached_state_ = next.nominal_states.front();
        cached_solution_ = std::move(next);
    }
    out.delta_u_norm = (out.u_exec - task_control).norm();
    return out;
}

// ---------------------------------------------------------------------------
// LR-DDP

LrDdpFilter::LrDdpFilter(const ModelSpec& model, const Environment& env, const SolverConfig& solver)
    : model_(model), env_(env), solver_(model, env, solver)
{
}

FilterDecision LrDdpFilter::step(const StateVec& state, const ControlVec& task_control)
{
    FilterDecision out;
    out.v_current = kNan;
    const ControlVec u_task = clamp_control(task_control, model_);
    const std::vector<ControlVec> tail = shifted(warm_);
    IlqSolution probe = solver_.solve(step_rk4(state, u_task, model_), tail);
    out.v_next = probe.root_value.value;
    if (out.v_next >= 0.0) {
        out.u_exec = u_task;
        out.mode_applied = (u_task.array() == task_control.array()).all() ? AppliedMode::kTask : AppliedMode::kFiltered;
        warm_ = std::move(probe.nominal_controls);
        out.delta_u_norm = (out.u_exec - task_control).norm();
        return out;
    }

    const IlqSolution here = solver_.solve(state, warm_);
    out.v_current = here.root_value.value;
    out.mode_applied = AppliedMode::kFallback;
    const bool reach_avoid = solver_.config().mode == SolveMode::kReachAvoid;
    if (!reach_avoid) {
        out.u_exec = clamp_control(here.nominal_controls.front(), model_);
        warm_ = here.nominal_controls;
    } else if (here.branches.front() == Branch::kPropagated) {
        // Apply the safety control only once its successor is verified safe.
        const ControlVec u_safe = clamp_control(here.nominal_controls.front(), model_);
        IlqSolution check = solver_.solve(step_rk4(state, u_safe, model_), shifted(here.nominal_controls));
        if (check.root_value.value >= 0.0) {
            out.u_exec = u_safe;
            out.v_next = check.root_value.value;
            warm_ = std::move(check.nominal_controls);
        } else {
            out.u_exec = target_set_control(state, model_);
            warm_ = shifted(here.nominal_controls);
        }
    } else {
        out.u_exec = target_set_control(state, model_);
        warm_ = shifted(here.nominal_controls);
    }
    out.delta_u_norm = (out.u_exec - task_control).norm();
    return out;
}

// ---------------------------------------------------------------------------
// Manual CBF

ManualCbfFilter::ManualCbfFilter(const ModelSpec& model, const Environment& env, const FilterConfig& filter)
    : model_(model), env_(env), filter_(filter)
{
    filter_.validate();
    if (env_.obstacles.empty()) {
        throw ConfigError("manual-cbf filter needs at least one obstacle");
    }
    if (model_.kind != ModelKind::kDubins) {
        throw ConfigError("manual-cbf filter supports the Dubins model only");
    }
}

const Obstacle& ManualCbfFilter::nearest(const StateVec& state) const
{
    const Obstacle* best = &env_.obstacles.front();
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& ob : env_.obstacles) {
        const double d = std::hypot(state[0] - ob.center_x, state[1] - ob.center_y) - ob.radius;
        if (d < best_d) {
            best_d = d;
            best = &ob;
        }
    }
    return *best;
}

double ManualCbfFilter::barrier(const StateVec& state, const Obstacle& ob) const
{
    const double r = ob.radius + env_.footprint_radius + filter_.manual_cbf_buffer;
    const double dx = state[0] - ob.center_x;
    const double dy = state[1] - ob.center_y;
    return dx * dx + dy * dy - r * r;
}

double ManualCbfFilter::barrier(const StateVec& state) const { return barrier(state, nearest(state)); }

FilterDecision ManualCbfFilter::step(const StateVec& state, const ControlVec& task_control)
{
    const Obstacle& ob = nearest(state);
    const ControlVec u_task = clamp_control(task_control, model_);
    const StateVec next = step_rk4(state, u_task, model_);
    const InputMat fu = jacobians(state, u_task, model_).B;

    const double b_now = barrier(state, ob);
    Eigen::VectorXd p(model_.control_dim());
    p = 2.0 * ((next[0] - ob.center_x) * fu.row(0) + (next[1] - ob.center_y) * fu.row(1)).transpose();
    const double c = barrier(next, ob) - filter_.gamma * b_now;

    FilterDecision out;
    out.v_current = b_now;
    const QcqpSolution qs = solve_linear_qp(p, c, u_task, model_);
    if (qs.status == QcqpStatus::kInfeasible) {
        // Turn as hard as possible away from the obstacle.
        const double side = wrap_angle(std::atan2(ob.center_y - state[1], ob.center_x - state[0]) - state[2]);
        out.u_exec = side > 0.0 ? model_.control_lower : model_.control_upper;
    } else {
        out.u_exec = clamp_control(u_task + qs.delta_u, model_);
    }
    out.mode_applied = (out.u_exec.array() == task_control.array()).all() ? AppliedMode::kTask : AppliedMode::kFiltered;
    out.v_next = barrier(step_rk4(state, out.u_exec, model_), ob);
    out.delta_u_norm = (out.u_exec - task_control).norm();
    return out;
}

// ---------------------------------------------------------------------------

FilterDecision PassThroughFilter::step(const StateVec& state, const ControlVec& task_control)
{
    (void)state;
    FilterDecision out;
    out.u_exec = clamp_control(task_control, model_);
    out.mode_applied = (out.u_exec.array() == task_control.array()).all() ? AppliedMode::kTask : AppliedMode::kFiltered;
    out.v_current = kNan;
    out.v_next = kNan;
    out.delta_u_norm = (out.u_exec - task_control).norm();
    return out;
}

std::unique_ptr<SafetyFilter> make_filter(const ModelSpec& model, const Environment& env, const FilterConfig& filter,
                                          const SolverConfig& solver)
{
    switch (filter.mode) {
        case FilterMode::kCbfDdp:
            return std::make_unique<CbfDdpFilter>(model, env, filter, solver);
        case FilterMode::kLrDdp:
            return std::make_unique<LrDdpFilter>(model, env, solver);
        case FilterMode::kManualCbf:
            return std::make_unique<ManualCbfFilter>(model, env, filter);
        case FilterMode::kNone:
            return std::make_unique<PassThroughFilter>(model);
    }
    throw ConfigError("unknown filter mode");
}

}  // namespace cbfddp
