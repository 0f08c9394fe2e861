#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "cbfddp/barrier_qcqp.hpp"
#include "cbfddp/reach_avoid_ilq.hpp"

namespace cbfddp {

enum class FilterMode { kCbfDdp, kLrDdp, kManualCbf, kNone };
enum class AppliedMode { kTask, kFiltered, kFallback };

const char* to_string(FilterMode mode);
const char* to_string(AppliedMode mode);
/// Accepts the CLI spellings (cbf-ddp, lr-ddp, manual-cbf, none) and the
/// underscore variants used in scenario files.
FilterMode parse_filter_mode(const std::string& text);
AppliedMode parse_applied_mode(const std::string& text);

struct FilterConfig {
    FilterMode mode = FilterMode::kCbfDdp;
    double gamma = 0.95;
    double lambda_scale = 1.25;
    int max_qcqp_iterations = 5;
    double manual_cbf_buffer = 0.2;

    void validate() const;
};

/// Time-indexed fallback policy built from an accepted solve. Entries before
/// the first nominal state inside the target set are affine feedback laws
/// around the nominal; that entry and everything after it use the target-set
/// policy (stop, then hold).
class FallbackStore {
public:
    struct Entry {
        bool target_policy = true;
        ControlVec u_bar;
        GainMat K;
        ControlVec k;
        StateVec x_bar;
    };

    FallbackStore() = default;
    /// A store of `horizon` target-policy entries.
    explicit FallbackStore(int horizon);

    static FallbackStore build(const IlqSolution& ilq, const Environment& env, const ModelSpec& model);

    /// Control of entry `index` at `state`, clamped to the box.
    ControlVec control(const StateVec& state, int index, const ModelSpec& model) const;

    /// Drops the head entry and appends a target-policy entry.
    void rotate();

    int size() const { return static_cast<int>(entries_.size()); }
    const Entry& entry(int index) const { return entries_.at(static_cast<std::size_t>(index)); }
    /// Index of the first target-policy entry, or size() if there is none.
    int first_target_index() const;

private:
    std::vector<Entry> entries_;
};

/// Policy of the target set: brake and straighten the wheel; hold once halted.
ControlVec target_set_control(const StateVec& state, const ModelSpec& model);

struct FilterDecision {
    ControlVec u_exec;
    AppliedMode mode_applied = AppliedMode::kTask;
    double v_current = 0.0;
    double v_next = 0.0;
    int qcqp_iterations_used = 0;
    double delta_u_norm = 0.0;
    double cycle_time = 0.0;
};

class SafetyFilter {
public:
    virtual ~SafetyFilter() = default;
    virtual FilterDecision step(const StateVec& state, const ControlVec& task_control) = 0;
};

/// Receding-horizon barrier filter. Each cycle solves the reach-avoid problem
/// at the current state and at the state the task control leads to, and
/// corrects the task control through the QCQP until the value decays by at
/// most a factor gamma.
class CbfDdpFilter : public SafetyFilter {
public:
    CbfDdpFilter(const ModelSpec& model, const Environment& env, const FilterConfig& filter,
                 const SolverConfig& solver);

    FilterDecision step(const StateVec& state, const ControlVec& task_control) override;

    const FallbackStore& fallback_store() const { return store_; }
    /// Number of ILQ solves issued by the last step.
    int last_solve_count() const { return solves_; }

private:
    IlqSolution solve(const StateVec& x, std::span<const ControlVec> warm);
    IlqSolution value_at(const StateVec& x);

    ModelSpec model_;
    Environment env_;
    FilterConfig filter_;
    ReachAvoidIlq solver_;
    FallbackStore store_;
    std::vector<ControlVec> warm_;
    std::optional<StateVec> cached_state_;
    std::optional<IlqSolution> cached_solution_;
    int solves_ = 0;
};

/// Least-restrictive filter: pass the task control while the state it leads
/// to keeps a non-negative value, otherwise apply the safety control.
class LrDdpFilter : public SafetyFilter {
public:
    LrDdpFilter(const ModelSpec& model, const Environment& env, const SolverConfig& solver);

    FilterDecision step(const StateVec& state, const ControlVec& task_control) override;

private:
    ModelSpec model_;
    Environment env_;
    ReachAvoidIlq solver_;
    std::vector<ControlVec> warm_;
};

/// Hand-built distance barrier B = |p - c|^2 - r^2 around the nearest
/// obstacle, enforced to first order in the control.
class ManualCbfFilter : public SafetyFilter {
public:
    ManualCbfFilter(const ModelSpec& model, const Environment& env, const FilterConfig& filter);

    FilterDecision step(const StateVec& state, const ControlVec& task_control) override;

    double barrier(const StateVec& state) const;

private:
    const Obstacle& nearest(const StateVec& state) const;
    double barrier(const StateVec& state, const Obstacle& ob) const;

    ModelSpec model_;
    Environment env_;
    FilterConfig filter_;
};

class PassThroughFilter : public SafetyFilter {
public:
    explicit PassThroughFilter(const ModelSpec& model) : model_(model) {}
    FilterDecision step(const StateVec& state, const ControlVec& task_control) override;

private:
    ModelSpec model_;
};

std::unique_ptr<SafetyFilter> make_filter(const ModelSpec& model, const Environment& env, const FilterConfig& filter,
                                          const SolverConfig& solver);

}  // namespace cbfddp
