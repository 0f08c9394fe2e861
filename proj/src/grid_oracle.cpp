#include "cbfddp/grid_oracle.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>

namespace cbfddp {

namespace {

constexpr char kMagic[8] = {'C', 'B', 'F', 'G', 'R', 'I', 'D', '\0'};
constexpr std::uint32_t kFormatVersion = 1;

struct Fnv {
    std::uint64_t h = 1469598103934665603ULL;
    void bytes(const void* data, std::size_t n)
    {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ULL;
        }
    }
    void real(double v) { bytes(&v, sizeof v); }
    void integer(std::int64_t v) { bytes(&v, sizeof v); }
};

double backup(double g, double l, double best_next, SolveMode mode)
{
    if (mode == SolveMode::kAvoidOnly) {
        return std::min(g, best_next);
    }
    return std::min(g, std::max(l, best_next));
}

double terminal(double g, double l, SolveMode mode) { return mode == SolveMode::kAvoidOnly ? g : std::min(g, l); }

// Interpolation stencil: up to 8 corner nodes and their weights.
struct Stencil {
    std::array<std::uint32_t, 8> node{};
    std::array<double, 8> weight{};
    int count = 0;
    bool clamped = false;
};

Stencil make_stencil(const GridSpec& spec, const StateVec& state)
{
    const int dim = spec.dim();
    std::array<int, 3> base{};
    std::array<int, 3> upper_idx{};
    std::array<double, 3> frac{};
    Stencil st;
    for (int d = 0; d < dim; ++d) {
        const auto du = static_cast<std::size_t>(d);
        const int n = spec.nodes_per_dim[du];
        const double h = spec.spacing(d);
        double s = (state[d] - spec.lower[du]) / h;
        if (spec.periodic[du]) {
            s = std::fmod(s, static_cast<double>(n));
            if (s < 0.0) {
                s += n;
            }
            int i = static_cast<int>(std::floor(s));
            if (i >= n) {
                i = n - 1;
            }
            base[du] = i;
            upper_idx[du] = (i + 1) % n;
            frac[du] = s - i;
        } else {
            if (s < 0.0) {
                s = 0.0;
                st.clamped = true;
            } else if (s > n - 1) {
                s = n - 1;
                st.clamped = true;
            }
            int i = static_cast<int>(std::floor(s));
            if (i >= n - 1) {
                i = n - 2;
            }
            base[du] = i;
            upper_idx[du] = i + 1;
            frac[du] = s - i;
        }
    }
    st.count = 1 << dim;
    for (int corner = 0; corner < st.count; ++corner) {
        std::size_t index = 0;
        double w = 1.0;
        for (int d = 0; d < dim; ++d) {
            const auto du = static_cast<std::size_t>(d);
            const bool hi = (corner >> (dim - 1 - d)) & 1;
            index = index * static_cast<std::size_t>(spec.nodes_per_dim[du]) +
                    static_cast<std::size_t>(hi ? upper_idx[du] : base[du]);
            w *= hi ? frac[du] : 1.0 - frac[du];
        }
        st.node[static_cast<std::size_t>(corner)] = static_cast<std::uint32_t>(index);
        st.weight[static_cast<std::size_t>(corner)] = w;
    }
    return st;
}

double apply_stencil(const Stencil& st, const double* slice)
{
    double v = 0.0;
    for (int c = 0; c < st.count; ++c) {
        const auto cu = static_cast<std::size_t>(c);
        v += st.weight[cu] * slice[st.node[cu]];
    }
    return v;
}

void check_margins(const GridSpec& spec, const GridMargins& margins)
{
    if (!margins.failure) {
        throw std::invalid_argument("grid margins need a failure function");
    }
    if (spec.mode == SolveMode::kReachAvoid && !margins.target) {
        throw std::invalid_argument("reach-avoid grid needs a target function");
    }
}

// Fills the terminal slice and the per-node margins.
void init_margins(const GridSpec& spec, const GridMargins& margins, std::vector<double>& g, std::vector<double>& l,
                  std::vector<double>& values)
{
    const std::size_t n = spec.node_count();
    g.resize(n);
    l.assign(n, 0.0);
    const std::size_t offset = static_cast<std::size_t>(spec.horizon) * n;
    for (std::size_t i = 0; i < n; ++i) {
        const StateVec x = spec.node_state(i);
        g[i] = margins.failure(x);
        if (spec.mode == SolveMode::kReachAvoid) {
            l[i] = margins.target(x);
        }
        values[offset + i] = terminal(g[i], l[i], spec.mode);
    }
}

}  // namespace

std::size_t GridSpec::node_count() const
{
    std::size_t n = 1;
    for (int k : nodes_per_dim) {
        n *= static_cast<std::size_t>(k);
    }
    return n;
}

double GridSpec::spacing(int d) const
{
    const auto du = static_cast<std::size_t>(d);
    const double span = upper[du] - lower[du];
    return periodic[du] ? span / nodes_per_dim[du] : span / (nodes_per_dim[du] - 1);
}

StateVec GridSpec::node_state(std::size_t index) const
{
    StateVec x(dim());
    for (int d = dim() - 1; d >= 0; --d) {
        const auto du = static_cast<std::size_t>(d);
        const auto n = static_cast<std::size_t>(nodes_per_dim[du]);
        x[d] = lower[du] + static_cast<double>(index % n) * spacing(d);
        index /= n;
    }
    return x;
}

void GridSpec::validate(const ModelSpec& model) const
{
    const int d = dim();
    if (d > 3) {
        throw Unsupported("grid oracle supports at most 3 state dimensions");
    }
    if (d != model.state_dim()) {
        throw std::invalid_argument("grid dimension does not match the model");
    }
    if (upper.size() != lower.size() || nodes_per_dim.size() != lower.size() || periodic.size() != lower.size()) {
        throw std::invalid_argument("grid spec vectors differ in length");
    }
    for (std::size_t i = 0; i < lower.size(); ++i) {
        if (nodes_per_dim[i] < 2) {
            throw std::invalid_argument("each grid dimension needs at least 2 nodes");
        }
        if (!(upper[i] > lower[i])) {
            throw std::invalid_argument("grid upper bound must exceed lower bound");
        }
    }
    if (control_samples.empty()) {
        throw std::invalid_argument("grid needs at least one control sample");
    }
    if (horizon < 0) {
        throw std::invalid_argument("grid horizon must be non-negative");
    }
    if (node_count() > std::numeric_limits<std::uint32_t>::max()) {
        throw std::invalid_argument("grid too large");
    }
}

std::uint64_t GridSpec::hash() const
{
    Fnv f;
    f.integer(dim());
    for (std::size_t i = 0; i < lower.size(); ++i) {
        f.real(lower[i]);
        f.real(upper[i]);
        f.integer(nodes_per_dim[i]);
        f.integer(periodic[i] ? 1 : 0);
    }
    f.integer(static_cast<std::int64_t>(control_samples.size()));
    for (const auto& u : control_samples) {
        for (Eigen::Index k = 0; k < u.size(); ++k) {
            f.real(u[k]);
        }
    }
    f.integer(horizon);
    f.integer(mode == SolveMode::kReachAvoid ? 1 : 0);
    return f.h;
}

std::vector<ControlVec> dubins_control_samples(const ModelSpec& model, int samples)
{
    if (samples < 2) {
        throw std::invalid_argument("need at least two control samples");
    }
    std::vector<ControlVec> out;
    const double lo = model.control_lower[0];
    const double hi = model.control_upper[0];
    for (int i = 0; i < samples; ++i) {
        ControlVec u(1);
        u[0] = lo + (hi - lo) * i / (samples - 1);
        out.push_back(u);
    }
    return out;
}

ValueTable::ValueTable(GridSpec spec, std::vector<double> values) : spec_(std::move(spec)), values_(std::move(values))
{
    if (values_.size() != static_cast<std::size_t>(spec_.horizon + 1) * spec_.node_count()) {
        throw std::invalid_argument("value table size does not match its grid");
    }
}

ValueTable grid_dp(const GridSpec& spec, const ModelSpec& model, const GridMargins& margins)
{
    spec.validate(model);
    check_margins(spec, margins);
    const std::size_t n = spec.node_count();
    const std::size_t m = spec.control_samples.size();
    std::vector<double> values(static_cast<std::size_t>(spec.horizon + 1) * n);
    std::vector<double> g;
    std::vector<double> l;
    init_margins(spec, margins, g, l, values);

    // Next states do not depend on time, so stencils are built once.
    std::vector<Stencil> stencils(n * m);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
        const auto iu = static_cast<std::size_t>(i);
        const StateVec x = spec.node_state(iu);
        for (std::size_t a = 0; a < m; ++a) {
            stencils[iu * m + a] = make_stencil(spec, step_rk4(x, spec.control_samples[a], model));
        }
    }

    for (int t = spec.horizon - 1; t >= 0; --t) {
        const double* next_slice = values.data() + static_cast<std::size_t>(t + 1) * n;
        double* slice = values.data() + static_cast<std::size_t>(t) * n;
#pragma omp parallel for schedule(static)
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
            const auto iu = static_cast<std::size_t>(i);
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t a = 0; a < m; ++a) {
                best = std::max(best, apply_stencil(stencils[iu * m + a], next_slice));
            }
            slice[iu] = backup(g[iu], l[iu], best, spec.mode);
        }
    }
    return ValueTable(spec, std::move(values));
}

ValueTable grid_dp_serial(const GridSpec& spec, const ModelSpec& model, const GridMargins& margins)
{
    spec.validate(model);
    check_margins(spec, margins);
    const std::size_t n = spec.node_count();
    std::vector<double> values(static_cast<std::size_t>(spec.horizon + 1) * n);
    std::vector<double> g;
    std::vector<double> l;
    init_margins(spec, margins, g, l, values);

    for (int t = spec.horizon - 1; t >= 0; --t) {
        const double* next_slice = values.data() + static_cast<std::size_t>(t + 1) * n;
        double* slice = values.data() + static_cast<std::size_t>(t) * n;
        for (std::size_t i = 0; i < n; ++i) {
            const StateVec x = spec.node_state(i);
            double best = -std::numeric_limits<double>::infinity();
            for (const auto& u : spec.control_samples) {
                best = std::max(best, apply_stencil(make_stencil(spec, step_rk4(x, u, model)), next_slice));
            }
            slice[i] = backup(g[i], l[i], best, spec.mode);
        }
    }
    return ValueTable(spec, std::move(values));
}

ValueTable grid_dp(const GridSpec& spec, const Environment& env, const ModelSpec& model)
{
    if (spec.mode == SolveMode::kReachAvoid) {
        throw std::invalid_argument("reach-avoid grids need an explicit target function");
    }
    GridMargins margins;
    margins.failure = [&env](const StateVec& x) { return failure_value(x, env); };
    return grid_dp(spec, model, margins);
}

QueryResult query_checked(const ValueTable& table, const StateVec& state, int t)
{
    const GridSpec& spec = table.spec();
    if (state.size() != spec.dim()) {
        throw std::invalid_argument("query state has the wrong dimension");
    }
    if (t < 0 || t > spec.horizon) {
        throw std::out_of_range("query slice out of range");
    }
    const Stencil st = make_stencil(spec, state);
    const double* slice = table.raw().data() + static_cast<std::size_t>(t) * spec.node_count();
    return {apply_stencil(st, slice), st.clamped};
}

double query(const ValueTable& table, const StateVec& state, int t) { return query_checked(table, state, t).value; }

void write_table(const ValueTable& table, const std::string& path)
{
    static_assert(std::endian::native == std::endian::little, "table files are little-endian");
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open " + path + " for writing");
    }
    const GridSpec& spec = table.spec();
    const std::uint64_t hash = spec.hash();
    const auto dim = static_cast<std::uint32_t>(spec.dim());
    const auto horizon = static_cast<std::uint32_t>(spec.horizon);
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&kFormatVersion), sizeof kFormatVersion);
    out.write(reinterpret_cast<const char*>(&hash), sizeof hash);
    out.write(reinterpret_cast<const char*>(&dim), sizeof dim);
    for (int k : spec.nodes_per_dim) {
        const auto nk = static_cast<std::uint32_t>(k);
        out.write(reinterpret_cast<const char*>(&nk), sizeof nk);
    }
    out.write(reinterpret_cast<const char*>(&horizon), sizeof horizon);
    out.write(reinterpret_cast<const char*>(table.raw().data()),
              static_cast<std::streamsize>(table.raw().size() * sizeof(double)));
    if (!out) {
        throw std::runtime_error("failed writing " + path);
    }
}

ValueTable read_table(const std::string& path, const GridSpec& expected)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path);
    }
    char magic[8];
    std::uint32_t version = 0;
    std::uint64_t hash = 0;
    std::uint32_t dim = 0;
    in.read(magic, sizeof magic);
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&hash), sizeof hash);
    in.read(reinterpret_cast<char*>(&dim), sizeof dim);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
        throw std::runtime_error(path + " is not a value table");
    }
    if (version != kFormatVersion) {
        throw std::runtime_error(path + " has unsupported format version " + std::to_string(version));
    }
    if (hash != expected.hash()) {
        throw std::runtime_error(path + " was built from a different grid spec");
    }
    if (dim != static_cast<std::uint32_t>(expected.dim())) {
        throw std::runtime_error(path + " has the wrong dimension");
    }
    for (std::uint32_t d = 0; d < dim; ++d) {
        std::uint32_t nk = 0;
        in.read(reinterpret_cast<char*>(&nk), sizeof nk);
        if (nk != static_cast<std::uint32_t>(expected.nodes_per_dim[d])) {
            throw std::runtime_error(path + " has mismatched node counts");
        }
    }
    std::uint32_t horizon = 0;
    in.read(reinterpret_cast<char*>(&horizon), sizeof horizon);
    if (horizon != static_cast<std::uint32_t>(expected.horizon)) {
        throw std::runtime_error(path + " has a mismatched horizon");
    }
    std::vector<double> values(static_cast<std::size_t>(expected.horizon + 1) * expected.node_count());
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
    if (!in) {
        throw std::runtime_error(path + " is truncated");
    }
    return ValueTable(expected, std::move(values));
}

GridMargins DubinsOracleSetup::margins() const
{
    GridMargins out;
    out.failure = [env = env](const StateVec& x) { return failure_value(x, env); };
    if (grid.mode == SolveMode::kReachAvoid) {
        out.target = [gx = goal_x, gy = goal_y, r = goal_radius](const StateVec& x) {
            return r - std::hypot(x[0] - gx, x[1] - gy);
        };
    }
    return out;
}

DubinsOracleSetup dubins_oracle_setup(int nodes, int horizon, SolveMode mode)
{
    DubinsOracleSetup s;
    s.model = ModelSpec::dubins();
    s.env.obstacles.push_back({0.3, 0.15, 0.35});
    s.env.road_half_width = 1.0;
    s.env.footprint_radius = 0.0;
    s.grid.lower = {-2.0, -1.6, -std::numbers::pi};
    s.grid.upper = {2.0, 1.6, std::numbers::pi};
    s.grid.nodes_per_dim = {nodes, nodes, nodes};
    s.grid.periodic = {false, false, true};
    s.grid.control_samples = dubins_control_samples(s.model, 11);
    s.grid.horizon = horizon;
    s.grid.mode = mode;
    return s;
}

OracleReport check_oracle(const DubinsOracleSetup& reach_avoid, const ValueTable& ra_table,
                          const DubinsOracleSetup& avoid_only, const ValueTable& ao_table, int samples,
                          std::uint64_t seed, double tolerance)
{
    OracleReport report;
    const GridSpec& ra = ra_table.spec();
    report.nodes = ra.node_count();
    for (std::size_t i = 0; i < ra.node_count(); ++i) {
        for (int t = 0; t < ra.horizon; ++t) {
            if (ra_table.at(t, i) < ra_table.at(t + 1, i)) {
                ++report.monotonicity_violations;
            }
        }
        if (ra_table.at(0, i) > failure_value(ra.node_state(i), reach_avoid.env)) {
            ++report.above_failure;
        }
    }

    // Only nodes far enough from the x-ends of the box that the horizon
    // cannot reach the clamped region.
    const GridSpec& ao = ao_table.spec();
    const double reach = avoid_only.model.dubins_speed * avoid_only.model.dt * ao.horizon;
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < ao.node_count(); ++i) {
        const StateVec x = ao.node_state(i);
        if (x[0] - ao.lower[0] > reach + 0.1 && ao.upper[0] - x[0] > reach + 0.1 && ao_table.at(0, i) > 0.1) {
            eligible.push_back(i);
        }
    }
    std::mt19937_64 rng(seed);
    std::shuffle(eligible.begin(), eligible.end(), rng);
    SolverConfig config;
    config.horizon = ao.horizon;
    config.mode = SolveMode::kAvoidOnly;
    const ReachAvoidIlq solver(avoid_only.model, avoid_only.env, config);
    report.worst_gap = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < eligible.size() && report.samples_checked < samples; ++k) {
        const std::size_t i = eligible[k];
        const IlqSolution sol = solver.solve(ao.node_state(i));
        const double gap = sol.rollout_objective - ao_table.at(0, i);
        report.worst_gap = std::max(report.worst_gap, gap);
        if (gap > tolerance) {
            ++report.lower_bound_violations;
        }
        ++report.samples_checked;
    }
    return report;
}

void TabularProcess::validate() const
{
    if (next.empty() || actions() == 0) {
        throw std::invalid_argument("tabular process needs states and actions");
    }
    for (const auto& row : next) {
        if (static_cast<int>(row.size()) != actions()) {
            throw std::invalid_argument("every state needs the same number of actions");
        }
        for (int s : row) {
            if (s < 0 || s >= states()) {
                throw std::invalid_argument("transition to an unknown state");
            }
        }
    }
    if (static_cast<int>(failure.size()) != states()) {
        throw std::invalid_argument("failure margins must cover every state");
    }
    if (mode == SolveMode::kReachAvoid && static_cast<int>(target.size()) != states()) {
        throw std::invalid_argument("target margins must cover every state");
    }
    if (horizon < 0) {
        throw std::invalid_argument("horizon must be non-negative");
    }
}

std::vector<std::vector<double>> tabular_dp(const TabularProcess& process)
{
    process.validate();
    const int ns = process.states();
    const bool ra = process.mode == SolveMode::kReachAvoid;
    auto target = [&](int s) { return ra ? process.target[static_cast<std::size_t>(s)] : 0.0; };
    std::vector<std::vector<double>> values(static_cast<std::size_t>(process.horizon + 1),
                                            std::vector<double>(static_cast<std::size_t>(ns)));
    for (int s = 0; s < ns; ++s) {
        values.back()[static_cast<std::size_t>(s)] =
            terminal(process.failure[static_cast<std::size_t>(s)], target(s), process.mode);
    }
    for (int t = process.horizon - 1; t >= 0; --t) {
        const auto& later = values[static_cast<std::size_t>(t + 1)];
        for (int s = 0; s < ns; ++s) {
            double best = -std::numeric_limits<double>::infinity();
            for (int succ : process.next[static_cast<std::size_t>(s)]) {
                best = std::max(best, later[static_cast<std::size_t>(succ)]);
            }
            values[static_cast<std::size_t>(t)][static_cast<std::size_t>(s)] =
                backup(process.failure[static_cast<std::size_t>(s)], target(s), best, process.mode);
        }
    }
    return values;
}

double enumerate_best(const TabularProcess& process, int start)
{
    process.validate();
    const int na = process.actions();
    long long sequences = 1;
    for (int t = 0; t < process.horizon; ++t) {
        sequences *= na;
    }
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> g;
    std::vector<double> l;
    for (long long code = 0; code < sequences; ++code) {
        g.clear();
        l.clear();
        int s = start;
        long long rest = code;
        for (int t = 0;; ++t) {
            g.push_back(process.failure[static_cast<std::size_t>(s)]);
            if (process.mode == SolveMode::kReachAvoid) {
                l.push_back(process.target[static_cast<std::size_t>(s)]);
            }
            if (t == process.horizon) {
                break;
            }
            s = process.next[static_cast<std::size_t>(s)][static_cast<std::size_t>(rest % na)];
            rest /= na;
        }
        best = std::max(best, objective_from_margins(g, l, process.mode));
    }
    return best;
}

}  // namespace cbfddp
