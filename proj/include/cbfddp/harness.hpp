#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cbfddp/filters.hpp"
#include "cbfddp/task_policies.hpp"

namespace cbfddp {

struct SuccessCriterion {
    enum class Kind { kProgressX, kGoalDisc };
    Kind kind = Kind::kProgressX;
    double threshold_x = 0.0;
    double center_x = 0.0;
    double center_y = 0.0;
    double radius = 0.0;

    bool reached(const StateVec& state) const;
};

struct Scenario {
    std::string name;
    ModelSpec model;
    Environment env;
    StateVec initial_state;
    TaskPolicyConfig task;
    FilterConfig filter;
    SolverConfig solver;
    int max_steps = 400;
    SuccessCriterion success;
    std::int64_t rng_seed = 0;  // reserved; every run is deterministic

    /// Checks every invariant, including that a reach-avoid run starts inside
    /// the target set. Throws ConfigError.
    void validate() const;
};

/// Strict parse: unknown keys and malformed values are rejected with the
/// offending field named. Missing optional fields take their defaults.
Scenario parse_scenario(const nlohmann::json& doc, const std::string& fallback_name = "scenario");
Scenario load_scenario(const std::filesystem::path& path);
/// Fully resolved form of a scenario (defaults included); parses back to an
/// identical scenario.
nlohmann::json scenario_to_json(const Scenario& scenario);

struct StepRecord {
    int t = 0;
    StateVec state;
    ControlVec u_task;
    ControlVec u_exec;
    AppliedMode mode_applied = AppliedMode::kTask;
    double v_current = 0.0;
    double v_next = 0.0;
    int qcqp_iterations_used = 0;
    double g_value = 0.0;
    double ell_value = 0.0;  // NaN when the run has no target set
    double cycle_time = 0.0;
};

enum class RunOutcome { kSuccess, kTaskFailure, kSafetyViolation, kNumericFailure };

const char* to_string(RunOutcome outcome);
/// 0 success, 2 task failure, 3 safety violation, 4 numeric failure.
int exit_status(RunOutcome outcome);
inline constexpr int kExitConfigRejected = 5;

struct RunResult {
    std::vector<StepRecord> records;
    RunOutcome outcome = RunOutcome::kTaskFailure;
    std::string message;
};

/// Closed loop of task policy, filter and dynamics until the success
/// criterion holds, the failure set is entered, the vehicle gives up (halts
/// or turns around), or max_steps elapse.
RunResult run_simulation(const Scenario& scenario);

struct Metrics {
    bool task_success = false;
    std::optional<double> accel_jerk_mean;
    std::optional<double> accel_jerk_std;
    double steer_jerk_mean = 0.0;
    double steer_jerk_std = 0.0;
    double total_deviation = 0.0;
    double cycle_time_mean = 0.0;
    double cycle_time_std = 0.0;
    int steps_taken = 0;
};

/// Pure function of the step log. Success means the state after the last
/// step meets the criterion and no logged state violated the failure margin.
Metrics compute_metrics(const std::vector<StepRecord>& records, const Scenario& scenario);

nlohmann::json metrics_to_json(const Metrics& metrics);
Metrics metrics_from_json(const nlohmann::json& doc);

std::vector<std::string> step_log_header(const ModelSpec& model);
void write_step_log(const std::vector<StepRecord>& records, const ModelSpec& model, std::ostream& out);
std::vector<StepRecord> read_step_log(std::istream& in, const ModelSpec& model);

struct OutputPaths {
    std::filesystem::path step_log;
    std::filesystem::path metrics;
    std::filesystem::path trajectory;
    std::filesystem::path scenario;
};

/// Writes steps.csv, metrics.json, trajectory.csv and the resolved scenario.
/// An empty record list still yields a header-only step log but no metrics.
OutputPaths write_outputs(const std::vector<StepRecord>& records, const std::optional<Metrics>& metrics,
                          const Scenario& scenario, const std::filesystem::path& out_dir);

}  // namespace cbfddp
