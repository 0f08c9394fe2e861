#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cbfddp/margins.hpp"
#include "cbfddp/reach_avoid_ilq.hpp"

namespace cbfddp {

/// Regular grid over a state box of dimension <= 3. A periodic dimension has
/// nodes at lower + i (upper - lower) / n with no duplicate node at `upper`;
/// other dimensions include both ends.
struct GridSpec {
    std::vector<double> lower;
    std::vector<double> upper;
    std::vector<int> nodes_per_dim;
    std::vector<bool> periodic;
    std::vector<ControlVec> control_samples;
    int horizon = 20;
    SolveMode mode = SolveMode::kAvoidOnly;

    int dim() const { return static_cast<int>(lower.size()); }
    std::size_t node_count() const;
    double spacing(int d) const;
    /// Coordinates of node `index` (row-major, last dimension fastest).
    StateVec node_state(std::size_t index) const;
    void validate(const ModelSpec& model) const;
    /// FNV-1a hash of every field, for cache files.
    std::uint64_t hash() const;
};

/// 11 (or `samples`) evenly spaced steering rates over the Dubins box.
std::vector<ControlVec> dubins_control_samples(const ModelSpec& model, int samples = 11);

struct GridMargins {
    std::function<double(const StateVec&)> failure;
    std::function<double(const StateVec&)> target;  // required in reach-avoid mode
};

class ValueTable {
public:
    ValueTable() = default;
    ValueTable(GridSpec spec, std::vector<double> values);

    const GridSpec& spec() const { return spec_; }
    double at(int t, std::size_t node) const { return values_[static_cast<std::size_t>(t) * spec_.node_count() + node]; }
    const std::vector<double>& raw() const { return values_; }

private:
    GridSpec spec_;
    std::vector<double> values_;  // (horizon + 1) slices of node_count() values
};

/// Backward induction with multilinear interpolation of next-state values.
/// Runs in parallel over the nodes of each slice.
ValueTable grid_dp(const GridSpec& spec, const ModelSpec& model, const GridMargins& margins);
ValueTable grid_dp(const GridSpec& spec, const Environment& env, const ModelSpec& model);

/// Single-threaded reference that recomputes every next state on the fly.
/// Produces the same table bit for bit.
ValueTable grid_dp_serial(const GridSpec& spec, const ModelSpec& model, const GridMargins& margins);

struct QueryResult {
    double value = 0.0;
    bool clamped = false;
};

/// Multilinear interpolation at slice t. Angles wrap; other coordinates
/// outside the box are clamped to it and flagged.
QueryResult query_checked(const ValueTable& table, const StateVec& state, int t);
double query(const ValueTable& table, const StateVec& state, int t);

void write_table(const ValueTable& table, const std::string& path);
/// Throws std::runtime_error on a bad header or when the stored spec hash
/// differs from `expected.hash()`.
ValueTable read_table(const std::string& path, const GridSpec& expected);

/// Dubins test bed for the oracle: a road |y| <= 1 with one obstacle inside a
/// box whose y-extent reaches well into the off-road failure region, so
/// clamped next states only ever see failing values. Reach-avoid mode adds a
/// goal disc as the target set.
struct DubinsOracleSetup {
    ModelSpec model;
    Environment env;
    GridSpec grid;
    double goal_x = 1.2;
    double goal_y = 0.0;
    double goal_radius = 0.3;

    GridMargins margins() const;
};

DubinsOracleSetup dubins_oracle_setup(int nodes = 41, int horizon = 20, SolveMode mode = SolveMode::kAvoidOnly);

struct OracleReport {
    std::size_t nodes = 0;
    std::size_t monotonicity_violations = 0;  // reach-avoid: V(x,t) < V(x,t+1)
    std::size_t above_failure = 0;             // V(x,0) > g(x)
    int samples_checked = 0;
    int lower_bound_violations = 0;  // ILQ objective > grid value + tolerance
    double worst_gap = 0.0;          // max of ILQ objective - grid value
};

/// Slicewise checks of a reach-avoid table, plus the ILQ lower-bound check on
/// `samples` nodes of an avoid-only table whose value exceeds 0.1.
OracleReport check_oracle(const DubinsOracleSetup& reach_avoid, const ValueTable& ra_table,
                          const DubinsOracleSetup& avoid_only, const ValueTable& ao_table, int samples,
                          std::uint64_t seed, double tolerance = 0.05);

/// Finite deterministic decision process used to check the Bellman recursion
/// against brute force.
struct TabularProcess {
    std::vector<std::vector<int>> next;  // next[s][a]
    std::vector<double> failure;         // g per state
    std::vector<double> target;          // l per state (reach-avoid)
    int horizon = 0;
    SolveMode mode = SolveMode::kReachAvoid;

    int states() const { return static_cast<int>(next.size()); }
    int actions() const { return next.empty() ? 0 : static_cast<int>(next.front().size()); }
    void validate() const;
};

/// values[t][s] from the Bellman recursion.
std::vector<std::vector<double>> tabular_dp(const TabularProcess& process);

/// Best objective over all action sequences from `start`.
double enumerate_best(const TabularProcess& process, int start);

}  // namespace cbfddp
