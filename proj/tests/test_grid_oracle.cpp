#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "cbfddp/grid_oracle.hpp"

using namespace cbfddp;

namespace {

TabularProcess random_process(std::mt19937_64& rng, int states, int actions, int horizon, SolveMode mode)
{
    std::uniform_int_distribution<int> pick(0, states - 1);
    std::uniform_real_distribution<double> margin(-1.0, 1.0);
    TabularProcess p;
    p.horizon = horizon;
    p.mode = mode;
    p.next.assign(static_cast<std::size_t>(states), std::vector<int>(static_cast<std::size_t>(actions)));
    for (auto& row : p.next) {
        for (int& s : row) {
            s = pick(rng);
        }
    }
    for (int s = 0; s < states; ++s) {
        p.failure.push_back(margin(rng));
        if (mode == SolveMode::kReachAvoid) {
            p.target.push_back(margin(rng));
        }
    }
    return p;
}

std::filesystem::path temp_file(const char* name)
{
    return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("tabular recursion matches enumeration of all action sequences")
{
    std::mt19937_64 rng(61);
    for (int trial = 0; trial < 40; ++trial) {
        const SolveMode mode = trial % 2 == 0 ? SolveMode::kReachAvoid : SolveMode::kAvoidOnly;
        const TabularProcess p = random_process(rng, 3 + trial % 4, 2 + trial % 2, 1 + trial % 5, mode);
        const auto values = tabular_dp(p);
        REQUIRE(values.size() == static_cast<std::size_t>(p.horizon + 1));
        for (int s = 0; s < p.states(); ++s) {
            CHECK(values.front()[static_cast<std::size_t>(s)] == enumerate_best(p, s));
        }
    }
}

TEST_CASE("tabular hand example")
{
    // Two states: 0 is safe but not a target, 1 is a target reached by action 1.
    TabularProcess p;
    p.next = {{0, 1}, {1, 1}};
    p.failure = {0.5, 0.2};
    p.target = {-1.0, 0.3};
    p.horizon = 1;
    const auto v = tabular_dp(p);
    // From 0: stop now gives min(-1, 0.5); step to 1 gives min(0.5, min(0.3, 0.2)).
    CHECK(v[0][0] == 0.2);
    CHECK(v[0][1] == 0.2);
    CHECK(v[1][0] == -1.0);

    TabularProcess bad = p;
    bad.next[0][1] = 5;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("grid spec geometry")
{
    const DubinsOracleSetup s = dubins_oracle_setup(11, 3);
    const GridSpec& g = s.grid;
    CHECK(g.dim() == 3);
    CHECK(g.node_count() == 11u * 11u * 11u);
    CHECK(g.spacing(0) == doctest::Approx((g.upper[0] - g.lower[0]) / 10.0));
    CHECK(g.periodic[2]);
    CHECK(g.spacing(2) == doctest::Approx((g.upper[2] - g.lower[2]) / 11.0));
    const StateVec first = g.node_state(0);
    const StateVec last = g.node_state(g.node_count() - 1);
    CHECK(first[0] == g.lower[0]);
    CHECK(last[0] == g.upper[0]);
    CHECK(last[2] < g.upper[2]);
    // Last dimension runs fastest.
    CHECK(g.node_state(1)[2] == doctest::Approx(g.lower[2] + g.spacing(2)));

    GridSpec other = g;
    CHECK(other.hash() == g.hash());
    other.horizon += 1;
    CHECK(other.hash() != g.hash());

    const auto samples = dubins_control_samples(s.model);
    CHECK(samples.size() == 11);
    CHECK(samples.front()[0] == s.model.control_lower[0]);
    CHECK(samples.back()[0] == s.model.control_upper[0]);
}

TEST_CASE("grid validation")
{
    const DubinsOracleSetup s = dubins_oracle_setup(11, 3);
    GridSpec g = s.grid;
    g.lower.push_back(0.0);
    g.upper.push_back(1.0);
    g.nodes_per_dim.push_back(3);
    g.periodic.push_back(false);
    CHECK_THROWS_AS(g.validate(s.model), Unsupported);

    GridSpec one = s.grid;
    one.nodes_per_dim[0] = 1;
    CHECK_THROWS_AS(one.validate(s.model), std::invalid_argument);
    CHECK_THROWS_AS(s.grid.validate(ModelSpec::bicycle()), std::exception);
}

TEST_CASE("parallel and serial tables agree bit for bit")
{
    for (SolveMode mode : {SolveMode::kAvoidOnly, SolveMode::kReachAvoid}) {
        const DubinsOracleSetup s = dubins_oracle_setup(13, 6, mode);
        const ValueTable a = grid_dp(s.grid, s.model, s.margins());
        const ValueTable b = grid_dp_serial(s.grid, s.model, s.margins());
        REQUIRE(a.raw().size() == b.raw().size());
        CHECK(a.raw() == b.raw());
    }
}

TEST_CASE("grid values respect the value-function bounds")
{
    const DubinsOracleSetup ra = dubins_oracle_setup(15, 8, SolveMode::kReachAvoid);
    const ValueTable t = grid_dp(ra.grid, ra.model, ra.margins());
    const auto margins = ra.margins();
    const std::size_t n = ra.grid.node_count();
    for (std::size_t i = 0; i < n; ++i) {
        const StateVec x = ra.grid.node_state(i);
        const double g = margins.failure(x);
        const double l = margins.target(x);
        // Terminal slice is min(l, g); stopping now is always available.
        CHECK(t.at(ra.grid.horizon, i) == std::min(l, g));
        for (int k = 0; k < ra.grid.horizon; ++k) {
            CHECK(t.at(k, i) <= g);
            CHECK(t.at(k, i) >= std::min(l, g));
            // More remaining time never hurts.
            CHECK(t.at(k, i) >= t.at(k + 1, i));
        }
    }
}

TEST_CASE("query interpolates and flags clamping")
{
    const DubinsOracleSetup s = dubins_oracle_setup(11, 2);
    const ValueTable t = grid_dp(s.grid, s.env, s.model);
    const StateVec node = s.grid.node_state(123);
    CHECK(query(t, node, 0) == t.at(0, 123));

    // Multilinear interpolation is exact along a grid edge midpoint.
    StateVec mid = node;
    mid[0] += 0.5 * s.grid.spacing(0);
    const std::size_t stride0 = static_cast<std::size_t>(s.grid.nodes_per_dim[1] * s.grid.nodes_per_dim[2]);
    CHECK(query(t, mid, 1) == doctest::Approx(0.5 * (t.at(1, 123) + t.at(1, 123 + stride0))).epsilon(1e-12));

    // Heading wraps by a full turn.
    StateVec turned = node;
    turned[2] += 2.0 * M_PI;
    CHECK(query(t, turned, 0) == doctest::Approx(t.at(0, 123)).epsilon(1e-12));

    StateVec outside = node;
    outside[1] = s.grid.upper[1] + 5.0;
    const QueryResult q = query_checked(t, outside, 0);
    CHECK(q.clamped);
    CHECK_FALSE(query_checked(t, node, 0).clamped);
    CHECK_THROWS_AS(query(t, node, 3), std::out_of_range);
}

TEST_CASE("tables round-trip through files and reject other specs")
{
    const DubinsOracleSetup s = dubins_oracle_setup(9, 2);
    const ValueTable t = grid_dp(s.grid, s.env, s.model);
    const auto path = temp_file("cbfddp_grid_table_test.bin");
    write_table(t, path.string());
    const ValueTable back = read_table(path.string(), s.grid);
    CHECK(back.raw() == t.raw());

    GridSpec other = s.grid;
    other.horizon = 3;
    CHECK_THROWS_AS(read_table(path.string(), other), std::runtime_error);

    // Truncated file.
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 8);
    CHECK_THROWS_AS(read_table(path.string(), s.grid), std::runtime_error);

    {
        std::ofstream junk(path, std::ios::binary | std::ios::trunc);
        junk << "not a table";
    }
    CHECK_THROWS_AS(read_table(path.string(), s.grid), std::runtime_error);
    std::filesystem::remove(path);
}

TEST_CASE("ilq objective stays below the grid value")
{
    const DubinsOracleSetup ra = dubins_oracle_setup(21, 10, SolveMode::kReachAvoid);
    const DubinsOracleSetup ao = dubins_oracle_setup(21, 10, SolveMode::kAvoidOnly);
    const ValueTable ra_table = grid_dp(ra.grid, ra.model, ra.margins());
    const ValueTable ao_table = grid_dp(ao.grid, ao.model, ao.margins());
    // A coarse grid carries more interpolation error than the 41-node one,
    // hence the looser tolerance.
    const OracleReport r = check_oracle(ra, ra_table, ao, ao_table, 20, 7, 0.15);
    CHECK(r.nodes == ra.grid.node_count());
    CHECK(r.monotonicity_violations == 0);
    CHECK(r.above_failure == 0);
    CHECK(r.samples_checked == 20);
    CHECK(r.lower_bound_violations == 0);
}
