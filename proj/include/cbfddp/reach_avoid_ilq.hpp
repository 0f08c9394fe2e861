#pragma once

#include <span>
#include <vector>

#include "cbfddp/margins.hpp"

namespace cbfddp {

enum class SolveMode { kReachAvoid, kAvoidOnly };

/// Local second-order model of the value function around a nominal state.
struct QuadraticValue {
    double value = 0.0;
    StateVec grad;
    StateMat hess;

    QuadraticValue() = default;
    QuadraticValue(double v, StateVec g, const StateMat& h);
};

struct SolverConfig {
    int horizon = 40;
    SolveMode mode = SolveMode::kAvoidOnly;
    int max_iterations = 50;
    double convergence_tol = 1e-6;
    std::vector<double> line_search_alphas{1.0, 0.5, 0.25, 0.1, 0.05};
    double hess_regularization = 1e-2;
    // Also start from fixed swerve maneuvers and keep the best result. Local
    // steps alone rarely leave a "brake now" plan for one that steers around.
    bool maneuver_seeds = true;

    void validate() const;
};

/// Which term of the value recursion is active at a step of the nominal trajectory.
enum class Branch { kPropagated, kTarget, kFailure };

struct IlqSolution {
    std::vector<StateVec> nominal_states;      // H + 1
    std::vector<ControlVec> nominal_controls;  // H
    std::vector<GainMat> feedback_gains;       // K_t
    std::vector<ControlVec> feedforward_gains; // k_t
    std::vector<Branch> branches;              // H + 1, branch chosen per step
    QuadraticValue root_value;
    InputMat root_fu;
    bool converged = false;
    int iterations = 0;
    double rollout_objective = 0.0;
};

/// A rolled-out trajectory together with its per-step margins.
struct Trajectory {
    std::vector<StateVec> states;
    std::vector<ControlVec> controls;
    std::vector<double> failure;  // g
    std::vector<double> target;   // l; empty in avoid-only mode
    double objective = 0.0;
};

/// Reach-avoid objective of a margin sequence: the best time to be inside the
/// target set while having stayed out of the failure set so far. In
/// avoid-only mode, the minimum failure margin.
double objective_from_margins(std::span<const double> failure, std::span<const double> target, SolveMode mode);

double rollout_objective(std::span<const StateVec> states, const Environment& env, const ModelSpec& model,
                         SolveMode mode);

/// Rolls out u_t = clamp(u_nom_t + alpha k_t + K_t (x_t - x_nom_t)) from nominal.states[0].
Trajectory forward_pass(const Trajectory& nominal, std::span<const GainMat> feedback,
                        std::span<const ControlVec> feedforward, double alpha, const Environment& env,
                        const ModelSpec& model, SolveMode mode);

struct BackwardResult {
    std::vector<GainMat> feedback_gains;
    std::vector<ControlVec> feedforward_gains;
    std::vector<Branch> branches;
    QuadraticValue root;
};

/// Gauss-Newton value recursion along `traj`, selecting min/max branches on
/// the nominal values. Steps where a margin branch is active get zero gains.
BackwardResult backward_pass(const Trajectory& traj, const Environment& env, const ModelSpec& model,
                             const SolverConfig& config);

/// Iterative linear-quadratic solver for the reach-avoid (or avoid-only)
/// value at a state. An instance is not safe for concurrent use.
class ReachAvoidIlq {
public:
    ReachAvoidIlq(ModelSpec model, Environment env, SolverConfig config);

    /// Solves from `initial_state`. An empty warm start means all-zero controls;
    /// a shorter one is padded with its last control. With maneuver seeds
    /// enabled the warm-started result is kept unless a seed does strictly
    /// better.
    IlqSolution solve(const StateVec& initial_state, std::span<const ControlVec> warm_start = {}) const;

    const ModelSpec& model() const { return model_; }
    const Environment& environment() const { return env_; }
    const SolverConfig& config() const { return config_; }

    /// Open-loop swerves to either side used as extra starting points.
    std::vector<std::vector<ControlVec>> maneuver_seeds() const;

private:
    IlqSolution optimize(const StateVec& initial_state, std::vector<ControlVec> controls) const;
    Trajectory rollout(const StateVec& x0, std::vector<ControlVec> controls) const;

    ModelSpec model_;
    Environment env_;
    SolverConfig config_;
};

}  // namespace cbfddp
