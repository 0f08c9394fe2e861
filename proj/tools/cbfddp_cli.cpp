#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>

#include "cbfddp/grid_oracle.hpp"
#include "cbfddp/harness.hpp"

namespace fs = std::filesystem;
using namespace cbfddp;

namespace {

struct Overrides {
    std::string filter;
    std::optional<double> gamma;
    std::optional<double> lambda;
    std::optional<int> horizon;
    std::optional<int> max_qcqp_iters;

    void apply(Scenario& s) const
    {
        if (!filter.empty()) {
            s.filter.mode = parse_filter_mode(filter);
        }
        if (gamma) {
            s.filter.gamma = *gamma;
        }
        if (lambda) {
            s.filter.lambda_scale = *lambda;
        }
        if (horizon) {
            s.solver.horizon = *horizon;
        }
        if (max_qcqp_iters) {
            s.filter.max_qcqp_iterations = *max_qcqp_iters;
        }
        s.validate();
    }
};

struct RunSummary {
    std::string scenario;
    std::string filter;
    RunOutcome outcome = RunOutcome::kTaskFailure;
    std::string message;
    std::optional<Metrics> metrics;
};

RunSummary run_one(const Scenario& scenario, const fs::path& out_dir)
{
    RunSummary summary{scenario.name, to_string(scenario.filter.mode)};
    const RunResult result = run_simulation(scenario);
    summary.outcome = result.outcome;
    summary.message = result.message;
    if (!result.records.empty()) {
        summary.metrics = compute_metrics(result.records, scenario);
    }
    write_outputs(result.records, summary.metrics, scenario, out_dir);
    return summary;
}

void print_summary(const RunSummary& s)
{
    std::printf("%s [%s]: %s", s.scenario.c_str(), s.filter.c_str(), to_string(s.outcome));
    if (!s.message.empty()) {
        std::printf(" (%s)", s.message.c_str());
    }
    std::printf("\n");
    if (s.metrics) {
        std::printf("%s\n", metrics_to_json(*s.metrics).dump(2).c_str());
    }
}

std::string cell(const std::optional<double>& v)
{
    if (!v) {
        return "-";
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", *v);
    return buf;
}

int cmd_run(const std::string& path, const Overrides& ov, const fs::path& out)
{
    Scenario scenario;
    try {
        scenario = load_scenario(path);
        ov.apply(scenario);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config rejected: %s\n", e.what());
        return kExitConfigRejected;
    }
    const RunSummary s = run_one(scenario, out);
    print_summary(s);
    return exit_status(s.outcome);
}

int cmd_sweep(const std::string& dir, const Overrides& ov, const fs::path& out, int jobs)
{
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() == ".json") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());

    std::vector<Scenario> runs;
    for (const auto& file : files) {
        Scenario base;
        try {
            base = load_scenario(file);
            ov.apply(base);
        } catch (const ConfigError& e) {
            std::fprintf(stderr, "%s rejected: %s\n", file.string().c_str(), e.what());
            return kExitConfigRejected;
        }
        std::vector<FilterMode> modes;
        if (!ov.filter.empty()) {
            modes = {base.filter.mode};
        } else {
            modes = {FilterMode::kCbfDdp, FilterMode::kLrDdp};
            if (base.model.kind == ModelKind::kDubins && base.env.obstacles.size() == 1) {
                modes.push_back(FilterMode::kManualCbf);
            }
        }
        for (FilterMode mode : modes) {
            Scenario s = base;
            s.filter.mode = mode;
            runs.push_back(std::move(s));
        }
    }

    std::vector<RunSummary> summaries(runs.size());
    std::atomic<std::size_t> next{0};
    std::mutex print_lock;
    auto worker = [&] {
        for (std::size_t i = next++; i < runs.size(); i = next++) {
            summaries[i] = run_one(runs[i], out / runs[i].name / to_string(runs[i].filter.mode));
            std::lock_guard<std::mutex> lock(print_lock);
            std::printf("%s [%s]: %s\n", summaries[i].scenario.c_str(), summaries[i].filter.c_str(),
                        to_string(summaries[i].outcome));
            std::fflush(stdout);
        }
    };
    std::vector<std::thread> pool;
    for (int j = 0; j < std::max(1, jobs); ++j) {
        pool.emplace_back(worker);
    }
    for (auto& t : pool) {
        t.join();
    }

    fs::create_directories(out);
    std::ofstream table(out / "table.csv");
    table << "scenario,filter,outcome,task_success,accel_jerk_mean,accel_jerk_std,steer_jerk_mean,steer_jerk_std,"
             "total_deviation,cycle_time_mean,cycle_time_std,steps_taken\n";
    std::printf("\n%-28s %-11s %-17s %9s %9s %9s %9s %9s\n", "scenario", "filter", "outcome", "acc_jerk", "str_jerk",
                "deviation", "cycle_s", "steps");
    int worst = 0;
    for (const auto& s : summaries) {
        const Metrics m = s.metrics.value_or(Metrics{});
        table << s.scenario << ',' << s.filter << ',' << to_string(s.outcome) << ',' << m.task_success << ','
              << cell(m.accel_jerk_mean) << ',' << cell(m.accel_jerk_std) << ',' << m.steer_jerk_mean << ','
              << m.steer_jerk_std << ',' << m.total_deviation << ',' << m.cycle_time_mean << ',' << m.cycle_time_std
              << ',' << m.steps_taken << '\n';
        std::printf("%-28s %-11s %-17s %9s %9.4g %9.4g %9.3g %9d\n", s.scenario.c_str(), s.filter.c_str(),
                    to_string(s.outcome), cell(m.accel_jerk_mean).c_str(), m.steer_jerk_mean, m.total_deviation,
                    m.cycle_time_mean, m.steps_taken);
        if (s.outcome == RunOutcome::kSafetyViolation || s.outcome == RunOutcome::kNumericFailure) {
            worst = std::max(worst, exit_status(s.outcome));
        }
    }
    return worst;
}

int cmd_oracle(int nodes, int horizon, int samples, const std::string& cache)
{
    const auto ra = dubins_oracle_setup(nodes, horizon, SolveMode::kReachAvoid);
    const auto ao = dubins_oracle_setup(nodes, horizon, SolveMode::kAvoidOnly);
    const ValueTable ra_table = grid_dp(ra.grid, ra.model, ra.margins());
    ValueTable ao_table;
    if (!cache.empty() && fs::exists(cache)) {
        ao_table = read_table(cache, ao.grid);
    } else {
        ao_table = grid_dp(ao.grid, ao.model, ao.margins());
        if (!cache.empty()) {
            write_table(ao_table, cache);
        }
    }
    const OracleReport r = check_oracle(ra, ra_table, ao, ao_table, samples, 7);
    std::printf("nodes %zu, horizon %d\n", r.nodes, horizon);
    std::printf("monotonicity violations: %zu\n", r.monotonicity_violations);
    std::printf("nodes with V(x,0) > g(x): %zu\n", r.above_failure);
    std::printf("ILQ lower bound: %d/%d samples above grid + 0.05 (worst gap %.4g)\n", r.lower_bound_violations,
                r.samples_checked, r.worst_gap);
    const bool ok = r.monotonicity_violations == 0 && r.above_failure == 0 && r.lower_bound_violations == 0;
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"CBF-DDP safety filter simulations"};
    app.require_subcommand(1);

    Overrides ov;
    std::string scenario_path;
    std::string out_dir = "out";
    int jobs = 1;
    double gamma = 0.0;
    double lambda = 0.0;
    int horizon = 0;
    int qcqp = 0;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--filter", ov.filter, "cbf-ddp | lr-ddp | manual-cbf | none");
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--gamma", gamma, "CBF discount in (0, 1)");
        cmd->add_option("--lambda", lambda, "constraint offset scaling on retries");
        cmd->add_option("--horizon", horizon, "ILQ horizon in steps");
        cmd->add_option("--max-qcqp-iters", qcqp, "QCQP retry budget");
    };

    auto* run = app.add_subcommand("run", "simulate one scenario");
    run->add_option("--scenario", scenario_path, "scenario JSON file")->required();
    add_common(run);

    auto* sweep = app.add_subcommand("sweep", "every scenario in a directory under each filter");
    sweep->add_option("--scenario", scenario_path, "directory of scenario files")->required();
    sweep->add_option("--jobs", jobs, "parallel runs");
    add_common(sweep);

    int nodes = 41;
    int oracle_horizon = 20;
    int samples = 200;
    std::string cache;
    auto* oracle = app.add_subcommand("oracle", "grid dynamic-programming cross-checks on the Dubins car");
    oracle->add_option("--nodes", nodes, "nodes per dimension");
    oracle->add_option("--horizon", oracle_horizon, "steps");
    oracle->add_option("--samples", samples, "ILQ lower-bound samples");
    oracle->add_option("--cache", cache, "value table cache file");

    CLI11_PARSE(app, argc, argv);

    if (run->count("--gamma") || sweep->count("--gamma")) {
        ov.gamma = gamma;
    }
    if (run->count("--lambda") || sweep->count("--lambda")) {
        ov.lambda = lambda;
    }
    if (run->count("--horizon") || sweep->count("--horizon")) {
        ov.horizon = horizon;
    }
    if (run->count("--max-qcqp-iters") || sweep->count("--max-qcqp-iters")) {
        ov.max_qcqp_iters = qcqp;
    }

    try {
        if (*run) {
            return cmd_run(scenario_path, ov, out_dir);
        }
        if (*sweep) {
            return cmd_sweep(scenario_path, ov, out_dir, jobs);
        }
        return cmd_oracle(nodes, oracle_horizon, samples, cache);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config rejected: %s\n", e.what());
        return kExitConfigRejected;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
