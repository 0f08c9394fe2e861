#include "cbfddp/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

namespace cbfddp {

using nlohmann::json;

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
// Consecutive steps at rest after which a run is declared halted.
constexpr int kHaltPatience = 20;

// Reads an object field by field and rejects leftovers.
class Fields {
public:
    Fields(const json& obj, std::string where) : obj_(obj), where_(std::move(where))
    {
        if (!obj_.is_object()) {
            throw ConfigError(where_ + " must be an object");
        }
    }

    bool has(const std::string& key) const { return obj_.contains(key); }

    const json& raw(const std::string& key)
    {
        seen_.insert(key);
        return obj_.at(key);
    }

    double real(const std::string& key, double fallback)
    {
        return has(key) ? real(key) : fallback;
    }

    double real(const std::string& key)
    {
        require(key);
        const json& v = raw(key);
        if (!v.is_number()) {
            throw ConfigError(path(key) + " must be a number");
        }
        const double d = v.get<double>();
        if (!std::isfinite(d)) {
            throw ConfigError(path(key) + " must be finite");
        }
        return d;
    }

    std::optional<double> optional_real(const std::string& key)
    {
        if (!has(key) || obj_.at(key).is_null()) {
            if (has(key)) {
                seen_.insert(key);
            }
            return std::nullopt;
        }
        return real(key);
    }

    int integer(const std::string& key, int fallback)
    {
        if (!has(key)) {
            return fallback;
        }
        const json& v = raw(key);
        if (!v.is_number_integer()) {
            throw ConfigError(path(key) + " must be an integer");
        }
        return v.get<int>();
    }

    bool boolean(const std::string& key, bool fallback)
    {
        if (!has(key)) {
            return fallback;
        }
        const json& v = raw(key);
        if (!v.is_boolean()) {
            throw ConfigError(path(key) + " must be true or false");
        }
        return v.get<bool>();
    }

    std::string text(const std::string& key, const std::string& fallback)
    {
        if (!has(key)) {
            return fallback;
        }
        const json& v = raw(key);
        if (!v.is_string()) {
            throw ConfigError(path(key) + " must be a string");
        }
        return v.get<std::string>();
    }

    std::vector<double> reals(const std::string& key)
    {
        require(key);
        const json& v = raw(key);
        if (!v.is_array()) {
            throw ConfigError(path(key) + " must be an array of numbers");
        }
        std::vector<double> out;
        for (const auto& e : v) {
            if (!e.is_number() || !std::isfinite(e.get<double>())) {
                throw ConfigError(path(key) + " must contain finite numbers only");
            }
            out.push_back(e.get<double>());
        }
        return out;
    }

    void require(const std::string& key) const
    {
        if (!has(key)) {
            throw ConfigError(path(key) + " is required");
        }
    }

    std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

    void finish() const
    {
        for (auto it = obj_.begin(); it != obj_.end(); ++it) {
            if (!seen_.count(it.key())) {
                throw ConfigError("unknown field " + path(it.key()));
            }
        }
    }

private:
    const json& obj_;
    std::string where_;
    std::set<std::string> seen_;
};

ControlVec to_control(const std::vector<double>& v)
{
    ControlVec u(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
        u[static_cast<Eigen::Index>(i)] = v[i];
    }
    return u;
}

std::vector<double> to_vector(const Eigen::Ref<const Eigen::VectorXd>& v)
{
    return std::vector<double>(v.data(), v.data() + v.size());
}

ModelSpec parse_model(const json& doc)
{
    Fields f(doc, "model");
    const std::string kind = f.text("kind", "");
    ModelSpec model;
    if (kind == "dubins") {
        model = ModelSpec::dubins();
    } else if (kind == "bicycle") {
        model = ModelSpec::bicycle();
    } else {
        throw ConfigError("model.kind must be \"dubins\" or \"bicycle\"");
    }
    model.dt = f.real("dt_s", model.dt);
    if (f.has("control_lower")) {
        model.control_lower = to_control(f.reals("control_lower"));
    }
    if (f.has("control_upper")) {
        model.control_upper = to_control(f.reals("control_upper"));
    }
    model.dubins_speed = f.real("dubins_speed_mps", model.dubins_speed);
    model.wheelbase = f.real("wheelbase_m", model.wheelbase);
    f.finish();
    return model;
}

Environment parse_environment(const json& doc)
{
    Fields f(doc, "environment");
    Environment env;
    if (f.has("obstacles")) {
        const json& list = f.raw("obstacles");
        if (!list.is_array()) {
            throw ConfigError("environment.obstacles must be an array");
        }
        for (std::size_t i = 0; i < list.size(); ++i) {
            Fields o(list[i], "environment.obstacles[" + std::to_string(i) + "]");
            Obstacle ob;
            ob.center_x = o.real("center_x_m");
            ob.center_y = o.real("center_y_m");
            ob.radius = o.real("radius_m");
            o.finish();
            env.obstacles.push_back(ob);
        }
    }
    env.road_half_width = f.optional_real("road_half_width_m");
    env.yaw_bound = f.optional_real("yaw_bound_rad");
    env.steering_angle_bound = f.optional_real("steering_angle_bound_rad");
    env.footprint_radius = f.real("footprint_radius_m", env.footprint_radius);
    env.road_scale = f.real("road_scale", env.road_scale);
    env.yaw_scale = f.real("yaw_scale", env.yaw_scale);
    env.soft_min = f.boolean("soft_min", env.soft_min);
    env.soft_min_sharpness = f.real("soft_min_sharpness", env.soft_min_sharpness);
    f.finish();
    return env;
}

TaskPolicyConfig parse_task(const json& doc)
{
    Fields f(doc, "task");
    TaskPolicyConfig task;
    task.goal_x = f.real("goal_x_m", task.goal_x);
    task.goal_y = f.real("goal_y_m", task.goal_y);
    task.heading_gain = f.real("heading_gain_per_s", task.heading_gain);
    task.lookahead_distance = f.real("lookahead_distance_m", task.lookahead_distance);
    task.reference_speed = f.real("reference_speed_mps", task.reference_speed);
    task.speed_feedback_gain = f.real("speed_feedback_gain_per_s", task.speed_feedback_gain);
    task.steering_feedback_gain = f.real("steering_feedback_gain_per_s", task.steering_feedback_gain);
    task.road_center_y = f.real("road_center_y_m", task.road_center_y);
    task.heading_deadband = f.real("heading_deadband_rad", task.heading_deadband);
    f.finish();
    return task;
}

FilterConfig parse_filter(const json& doc, const ModelSpec& model)
{
    Fields f(doc, "filter");
    FilterConfig filter;
    filter.max_qcqp_iterations = model.kind == ModelKind::kDubins ? 2 : 5;
    filter.mode = parse_filter_mode(f.text("mode", "cbf_ddp"));
    filter.gamma = f.real("gamma", filter.gamma);
    filter.lambda_scale = f.real("lambda_scale", filter.lambda_scale);
    filter.max_qcqp_iterations = f.integer("max_qcqp_iterations", filter.max_qcqp_iterations);
    filter.manual_cbf_buffer = f.real("manual_cbf_buffer_m", filter.manual_cbf_buffer);
    f.finish();
    return filter;
}

SolveMode parse_solve_mode(const std::string& text)
{
    if (text == "reach_avoid") {
        return SolveMode::kReachAvoid;
    }
    if (text == "avoid_only") {
        return SolveMode::kAvoidOnly;
    }
    throw ConfigError("solver.mode must be \"reach_avoid\" or \"avoid_only\"");
}

SolverConfig parse_solver(const json& doc, const ModelSpec& model)
{
    Fields f(doc, "solver");
    SolverConfig solver;
    solver.mode = model.kind == ModelKind::kBicycle ? SolveMode::kReachAvoid : SolveMode::kAvoidOnly;
    solver.horizon = f.integer("horizon_steps", solver.horizon);
    if (f.has("mode")) {
        solver.mode = parse_solve_mode(f.text("mode", ""));
    }
    solver.max_iterations = f.integer("max_iterations", solver.max_iterations);
    solver.convergence_tol = f.real("convergence_tol", solver.convergence_tol);
    if (f.has("line_search_alphas")) {
        solver.line_search_alphas = f.reals("line_search_alphas");
    }
    solver.hess_regularization = f.real("hess_regularization", solver.hess_regularization);
    f.finish();
    return solver;
}

SuccessCriterion parse_success(const json& doc)
{
    Fields f(doc, "success");
    SuccessCriterion s;
    const std::string kind = f.text("kind", "");
    if (kind == "progress_x") {
        s.kind = SuccessCriterion::Kind::kProgressX;
        s.threshold_x = f.real("threshold_x_m");
    } else if (kind == "goal_disc") {
        s.kind = SuccessCriterion::Kind::kGoalDisc;
        s.center_x = f.real("center_x_m");
        s.center_y = f.real("center_y_m");
        s.radius = f.real("radius_m");
        if (!(s.radius > 0.0)) {
            throw ConfigError("success.radius_m must be positive");
        }
    } else {
        throw ConfigError("success.kind must be \"progress_x\" or \"goal_disc\"");
    }
    f.finish();
    return s;
}

std::string format_real(double v)
{
    if (std::isnan(v)) {
        return "nan";
    }
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_real(const std::string& field)
{
    if (field == "nan") {
        return kNan;
    }
    std::size_t used = 0;
    const double v = std::stod(field, &used);
    if (used != field.size()) {
        throw std::invalid_argument("malformed number '" + field + "' in step log");
    }
    return v;
}

std::vector<std::string> split_csv(const std::string& line)
{
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') {
        out.emplace_back();
    }
    return out;
}

std::vector<std::string> state_names(const ModelSpec& model)
{
    if (model.kind == ModelKind::kDubins) {
        return {"x", "y", "theta"};
    }
    return {"x", "y", "v", "theta", "delta"};
}

double mean_of(const std::vector<double>& v)
{
    if (v.empty()) {
        return 0.0;
    }
    double s = 0.0;
    for (double x : v) {
        s += x;
    }
    return s / static_cast<double>(v.size());
}

// Population standard deviation.
double std_of(const std::vector<double>& v)
{
    if (v.empty()) {
        return 0.0;
    }
    const double mu = mean_of(v);
    double s = 0.0;
    for (double x : v) {
        s += (x - mu) * (x - mu);
    }
    return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

bool SuccessCriterion::reached(const StateVec& state) const
{
    if (kind == Kind::kProgressX) {
        return state[0] >= threshold_x;
    }
    return std::hypot(state[0] - center_x, state[1] - center_y) <= radius;
}

void Scenario::validate() const
{
    model.validate();
    env.validate();
    task.validate();
    filter.validate();
    solver.validate();
    if (max_steps < 1) {
        throw ConfigError("max_steps must be at least 1");
    }
    if (initial_state.size() != model.state_dim() || !initial_state.allFinite()) {
        throw ConfigError("initial_state must hold " + std::to_string(model.state_dim()) + " finite values");
    }
    if (solver.mode == SolveMode::kReachAvoid) {
        if (model.kind != ModelKind::kBicycle) {
            throw ConfigError("solver.mode reach_avoid requires the bicycle model");
        }
        if (target_value(initial_state, env, model) < 0.0) {
            throw ConfigError("initial state outside target set");
        }
    } else if (failure_value(initial_state, env) < 0.0) {
        throw ConfigError("initial state inside failure set");
    }
    if (filter.mode == FilterMode::kManualCbf && (model.kind != ModelKind::kDubins || env.obstacles.empty())) {
        throw ConfigError("filter.mode manual_cbf needs the Dubins model and at least one obstacle");
    }
}

Scenario parse_scenario(const json& doc, const std::string& fallback_name)
{
    Fields f(doc, "");
    Scenario s;
    s.name = f.text("name", fallback_name);
    f.require("model");
    s.model = parse_model(f.raw("model"));
    f.require("environment");
    s.env = parse_environment(f.raw("environment"));
    const std::vector<double> x0 = f.reals("initial_state");
    s.initial_state = StateVec(static_cast<Eigen::Index>(std::min<std::size_t>(x0.size(), kMaxStateDim)));
    if (x0.size() > static_cast<std::size_t>(kMaxStateDim)) {
        throw ConfigError("initial_state has too many components");
    }
    for (std::size_t i = 0; i < x0.size(); ++i) {
        s.initial_state[static_cast<Eigen::Index>(i)] = x0[i];
    }
    s.task = f.has("task") ? parse_task(f.raw("task")) : TaskPolicyConfig{};
    s.filter = f.has("filter") ? parse_filter(f.raw("filter"), s.model) : parse_filter(json::object(), s.model);
    s.solver = f.has("solver") ? parse_solver(f.raw("solver"), s.model) : parse_solver(json::object(), s.model);
    s.max_steps = f.integer("max_steps", s.max_steps);
    f.require("success");
    s.success = parse_success(f.raw("success"));
    if (f.has("rng_seed")) {
        const json& seed = f.raw("rng_seed");
        if (!seed.is_number_integer()) {
            throw ConfigError("rng_seed must be an integer");
        }
        s.rng_seed = seed.get<std::int64_t>();
    }
    f.finish();
    s.validate();
    return s;
}

Scenario load_scenario(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open scenario file " + path.string());
    }
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("scenario " + path.string() + " is not valid JSON: " + e.what());
    }
    return parse_scenario(doc, path.stem().string());
}

json scenario_to_json(const Scenario& s)
{
    json model = {{"kind", s.model.kind == ModelKind::kDubins ? "dubins" : "bicycle"},
                  {"dt_s", s.model.dt},
                  {"control_lower", to_vector(s.model.control_lower)},
                  {"control_upper", to_vector(s.model.control_upper)},
                  {"dubins_speed_mps", s.model.dubins_speed},
                  {"wheelbase_m", s.model.wheelbase}};
    json obstacles = json::array();
    for (const auto& ob : s.env.obstacles) {
        obstacles.push_back({{"center_x_m", ob.center_x}, {"center_y_m", ob.center_y}, {"radius_m", ob.radius}});
    }
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    json env = {{"obstacles", obstacles},
                {"road_half_width_m", opt(s.env.road_half_width)},
                {"yaw_bound_rad", opt(s.env.yaw_bound)},
                {"steering_angle_bound_rad", opt(s.env.steering_angle_bound)},
                {"footprint_radius_m", s.env.footprint_radius},
                {"road_scale", s.env.road_scale},
                {"yaw_scale", s.env.yaw_scale},
                {"soft_min", s.env.soft_min},
                {"soft_min_sharpness", s.env.soft_min_sharpness}};
    json task = {{"goal_x_m", s.task.goal_x},
                 {"goal_y_m", s.task.goal_y},
                 {"heading_gain_per_s", s.task.heading_gain},
                 {"lookahead_distance_m", s.task.lookahead_distance},
                 {"reference_speed_mps", s.task.reference_speed},
                 {"speed_feedback_gain_per_s", s.task.speed_feedback_gain},
                 {"steering_feedback_gain_per_s", s.task.steering_feedback_gain},
                 {"road_center_y_m", s.task.road_center_y},
                 {"heading_deadband_rad", s.task.heading_deadband}};
    std::string mode = to_string(s.filter.mode);
    std::replace(mode.begin(), mode.end(), '-', '_');
    json filter = {{"mode", mode},
                   {"gamma", s.filter.gamma},
                   {"lambda_scale", s.filter.lambda_scale},
                   {"max_qcqp_iterations", s.filter.max_qcqp_iterations},
                   {"manual_cbf_buffer_m", s.filter.manual_cbf_buffer}};
    json solver = {{"horizon_steps", s.solver.horizon},
                   {"mode", s.solver.mode == SolveMode::kReachAvoid ? "reach_avoid" : "avoid_only"},
                   {"max_iterations", s.solver.max_iterations},
                   {"convergence_tol", s.solver.convergence_tol},
                   {"line_search_alphas", s.solver.line_search_alphas},
                   {"hess_regularization", s.solver.hess_regularization}};
    json success;
    if (s.success.kind == SuccessCriterion::Kind::kProgressX) {
        success = {{"kind", "progress_x"}, {"threshold_x_m", s.success.threshold_x}};
    } else {
        success = {{"kind", "goal_disc"},
                   {"center_x_m", s.success.center_x},
                   {"center_y_m", s.success.center_y},
                   {"radius_m", s.success.radius}};
    }
    return {{"name", s.name},
            {"model", model},
            {"environment", env},
            {"initial_state", to_vector(s.initial_state)},
            {"task", task},
            {"filter", filter},
            {"solver", solver},
            {"max_steps", s.max_steps},
            {"success", success},
            {"rng_seed", s.rng_seed}};
}

const char* to_string(RunOutcome outcome)
{
    switch (outcome) {
        case RunOutcome::kSuccess:
            return "success";
        case RunOutcome::kTaskFailure:
            return "task_failure";
        case RunOutcome::kSafetyViolation:
            return "safety_violation";
        case RunOutcome::kNumericFailure:
            return "numeric_failure";
    }
    return "unknown";
}

int exit_status(RunOutcome outcome)
{
    switch (outcome) {
        case RunOutcome::kSuccess:
            return 0;
        case RunOutcome::kTaskFailure:
            return 2;
        case RunOutcome::kSafetyViolation:
            return 3;
        case RunOutcome::kNumericFailure:
            return 4;
    }
    return 4;
}

RunResult run_simulation(const Scenario& scenario)
{
    scenario.validate();
    const ModelSpec& model = scenario.model;
    const bool guarded = scenario.filter.mode == FilterMode::kCbfDdp || scenario.filter.mode == FilterMode::kLrDdp;
    const bool has_target = scenario.solver.mode == SolveMode::kReachAvoid;
    auto filter = make_filter(model, scenario.env, scenario.filter, scenario.solver);

    RunResult result;
    StateVec x = scenario.initial_state;
    int resting = 0;
    for (int t = 0; t < scenario.max_steps; ++t) {
        StepRecord rec;
        rec.t = t;
        rec.state = x;
        rec.g_value = failure_value(x, scenario.env);
        rec.ell_value = has_target ? target_value(x, scenario.env, model) : kNan;
        rec.u_task = task_control(x, scenario.task, model);

        FilterDecision decision;
        try {
            const auto start = std::chrono::steady_clock::now();
            decision = filter->step(x, rec.u_task);
            const auto stop = std::chrono::steady_clock::now();
            decision.cycle_time = std::chrono::duration<double>(stop - start).count();
        } catch (const NumericFailure& e) {
            result.outcome = RunOutcome::kNumericFailure;
            result.message = "step " + std::to_string(t) + ": " + e.what();
            return result;
        }
        rec.u_exec = decision.u_exec;
        rec.mode_applied = decision.mode_applied;
        rec.v_current = decision.v_current;
        rec.v_next = decision.v_next;
        rec.qcqp_iterations_used = decision.qcqp_iterations_used;
        rec.cycle_time = decision.cycle_time;
        result.records.push_back(rec);

        x = step_rk4(x, decision.u_exec, model);
        if (failure_value(x, scenario.env) < 0.0) {
            result.outcome = guarded ? RunOutcome::kSafetyViolation : RunOutcome::kTaskFailure;
            result.message = "failure set entered after step " + std::to_string(t);
            return result;
        }
        if (scenario.success.reached(x)) {
            result.outcome = RunOutcome::kSuccess;
            return result;
        }
        if (model.kind == ModelKind::kBicycle) {
            if (std::abs(wrap_angle(x[bicycle::kTheta])) > 0.5 * std::numbers::pi) {
                result.outcome = RunOutcome::kTaskFailure;
                result.message = "turned around at step " + std::to_string(t);
                return result;
            }
            resting = std::abs(x[bicycle::kV]) < 1e-6 ? resting + 1 : 0;
            if (resting >= kHaltPatience) {
                result.outcome = RunOutcome::kTaskFailure;
                result.message = "halted at step " + std::to_string(t);
                return result;
            }
        }
    }
    result.outcome = RunOutcome::kTaskFailure;
    result.message = "success criterion not met within " + std::to_string(scenario.max_steps) + " steps";
    return result;
}

Metrics compute_metrics(const std::vector<StepRecord>& records, const Scenario& scenario)
{
    if (records.empty()) {
        throw std::invalid_argument("metrics need at least one step");
    }
    const ModelSpec& model = scenario.model;
    const double dt = model.dt;
    const bool dubins = model.kind == ModelKind::kDubins;
    const int steer = dubins ? 0 : 1;

    Metrics m;
    m.steps_taken = static_cast<int>(records.size());
    std::vector<double> accel;
    std::vector<double> steer_jerk;
    std::vector<double> cycle;
    bool safe = true;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const StepRecord& r = records[i];
        m.total_deviation += (r.u_exec - r.u_task).lpNorm<1>();
        cycle.push_back(r.cycle_time);
        safe = safe && r.g_value >= 0.0;
        if (i == 0) {
            continue;
        }
        const StepRecord& prev = records[i - 1];
        steer_jerk.push_back(std::abs(r.u_exec[steer] - prev.u_exec[steer]) / dt);
        if (!dubins) {
            accel.push_back(std::abs(r.u_exec[0] - prev.u_exec[0]) / dt);
        }
    }
    m.steer_jerk_mean = mean_of(steer_jerk);
    m.steer_jerk_std = std_of(steer_jerk);
    if (!dubins) {
        m.accel_jerk_mean = mean_of(accel);
        m.accel_jerk_std = std_of(accel);
    }
    m.cycle_time_mean = mean_of(cycle);
    m.cycle_time_std = std_of(cycle);

    const StateVec final_state = step_rk4(records.back().state, records.back().u_exec, model);
    m.task_success = safe && failure_value(final_state, scenario.env) >= 0.0 && scenario.success.reached(final_state);
    return m;
}

json metrics_to_json(const Metrics& m)
{
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    return {{"task_success", m.task_success},
            {"accel_jerk_mean", opt(m.accel_jerk_mean)},
            {"accel_jerk_std", opt(m.accel_jerk_std)},
            {"steer_jerk_mean", m.steer_jerk_mean},
            {"steer_jerk_std", m.steer_jerk_std},
            {"total_deviation", m.total_deviation},
            {"cycle_time_mean", m.cycle_time_mean},
            {"cycle_time_std", m.cycle_time_std},
            {"steps_taken", m.steps_taken}};
}

Metrics metrics_from_json(const json& doc)
{
    Metrics m;
    auto opt = [&](const char* key) -> std::optional<double> {
        const json& v = doc.at(key);
        return v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
    };
    m.task_success = doc.at("task_success").get<bool>();
    m.accel_jerk_mean = opt("accel_jerk_mean");
    m.accel_jerk_std = opt("accel_jerk_std");
    m.steer_jerk_mean = doc.at("steer_jerk_mean").get<double>();
    m.steer_jerk_std = doc.at("steer_jerk_std").get<double>();
    m.total_deviation = doc.at("total_deviation").get<double>();
    m.cycle_time_mean = doc.at("cycle_time_mean").get<double>();
    m.cycle_time_std = doc.at("cycle_time_std").get<double>();
    m.steps_taken = doc.at("steps_taken").get<int>();
    return m;
}

std::vector<std::string> step_log_header(const ModelSpec& model)
{
    std::vector<std::string> cols{"t"};
    for (const auto& name : state_names(model)) {
        cols.push_back(name);
    }
    for (const char* prefix : {"u_task_", "u_exec_"}) {
        for (int i = 0; i < model.control_dim(); ++i) {
            cols.push_back(prefix + std::to_string(i));
        }
    }
    for (const char* name :
         {"mode_applied", "v_current", "v_next", "qcqp_iterations_used", "g_value", "ell_value", "cycle_time"}) {
        cols.emplace_back(name);
    }
    return cols;
}

void write_step_log(const std::vector<StepRecord>& records, const ModelSpec& model, std::ostream& out)
{
    const auto header = step_log_header(model);
    for (std::size_t i = 0; i < header.size(); ++i) {
        out << (i ? "," : "") << header[i];
    }
    out << '\n';
    for (const auto& r : records) {
        out << r.t;
        for (Eigen::Index i = 0; i < r.state.size(); ++i) {
            out << ',' << format_real(r.state[i]);
        }
        for (const ControlVec* u : {&r.u_task, &r.u_exec}) {
            for (Eigen::Index i = 0; i < u->size(); ++i) {
                out << ',' << format_real((*u)[i]);
            }
        }
        out << ',' << to_string(r.mode_applied) << ',' << format_real(r.v_current) << ',' << format_real(r.v_next)
            << ',' << r.qcqp_iterations_used << ',' << format_real(r.g_value) << ',' << format_real(r.ell_value)
            << ',' << format_real(r.cycle_time) << '\n';
    }
}

std::vector<StepRecord> read_step_log(std::istream& in, const ModelSpec& model)
{
    const auto header = step_log_header(model);
    std::string line;
    if (!std::getline(in, line)) {
        throw std::invalid_argument("step log is empty");
    }
    if (split_csv(line) != header) {
        throw std::invalid_argument("step log header does not match the model");
    }
    const int n = model.state_dim();
    const int m = model.control_dim();
    std::vector<StepRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        const auto cells = split_csv(line);
        if (cells.size() != header.size()) {
            throw std::invalid_argument("step log row has " + std::to_string(cells.size()) + " fields");
        }
        std::size_t c = 0;
        StepRecord r;
        r.t = std::stoi(cells[c++]);
        r.state = StateVec(n);
        for (int i = 0; i < n; ++i) {
            r.state[i] = parse_real(cells[c++]);
        }
        r.u_task = ControlVec(m);
        r.u_exec = ControlVec(m);
        for (int i = 0; i < m; ++i) {
            r.u_task[i] = parse_real(cells[c++]);
        }
        for (int i = 0; i < m; ++i) {
            r.u_exec[i] = parse_real(cells[c++]);
        }
        r.mode_applied = parse_applied_mode(cells[c++]);
        r.v_current = parse_real(cells[c++]);
        r.v_next = parse_real(cells[c++]);
        r.qcqp_iterations_used = std::stoi(cells[c++]);
        r.g_value = parse_real(cells[c++]);
        r.ell_value = parse_real(cells[c++]);
        r.cycle_time = parse_real(cells[c++]);
        out.push_back(std::move(r));
    }
    return out;
}

OutputPaths write_outputs(const std::vector<StepRecord>& records, const std::optional<Metrics>& metrics,
                          const Scenario& scenario, const std::filesystem::path& out_dir)
{
    std::filesystem::create_directories(out_dir);
    OutputPaths paths{out_dir / "steps.csv", out_dir / "metrics.json", out_dir / "trajectory.csv",
                      out_dir / "scenario_resolved.json"};

    auto open = [](const std::filesystem::path& p) {
        std::ofstream out(p);
        if (!out) {
            throw std::runtime_error("cannot write " + p.string());
        }
        return out;
    };
    {
        auto out = open(paths.step_log);
        write_step_log(records, scenario.model, out);
    }
    {
        auto out = open(paths.trajectory);
        out << "x,y,mode\n";
        for (const auto& r : records) {
            out << format_real(r.state[0]) << ',' << format_real(r.state[1]) << ',' << to_string(r.mode_applied)
                << '\n';
        }
    }
    {
        auto out = open(paths.scenario);
        out << scenario_to_json(scenario).dump(2) << '\n';
    }
    if (records.empty()) {
        paths.metrics.clear();
        return paths;
    }
    const Metrics m = metrics ? *metrics : compute_metrics(records, scenario);
    auto out = open(paths.metrics);
    out << metrics_to_json(m).dump(2) << '\n';
    return paths;
}

}  // namespace cbfddp
