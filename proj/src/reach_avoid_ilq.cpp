#include "cbfddp/reach_avoid_ilq.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace cbfddp {

namespace {

StateMat symmetrized(const StateMat& m) { return 0.5 * (m + m.transpose()); }

// Keeps only the negative-curvature directions of a margin Hessian. With a
// negative semidefinite terminal curvature the Gauss-Newton Q-function is
// jointly concave in (x, u) and the recursion cannot blow up.
StateMat concave_part(const StateMat& h)
{
    if (!h.allFinite()) {
        throw NumericFailure("non-finite margin Hessian");
    }
    Eigen::SelfAdjointEigenSolver<StateMat> eig(symmetrized(h));
    const StateVec clipped = eig.eigenvalues().cwiseMin(0.0);
    return symmetrized(eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose());
}

// Makes Quu negative definite by clipping its eigenvalues at -reg. Curvature
// of the max-min objective is unsigned (obstacle distances are convex), so a
// plain diagonal shift can need arbitrarily many retries.
ControlMat regularize(const ControlMat& quu, double reg)
{
    const ControlMat sym = 0.5 * (quu + quu.transpose());
    Eigen::SelfAdjointEigenSolver<ControlMat> eig(sym);
    if (eig.info() != Eigen::Success || !eig.eigenvalues().allFinite()) {
        throw NumericFailure("eigendecomposition of the control Hessian failed");
    }
    const double ceiling = -std::max(reg, 1e-6);
    ControlVec clipped = eig.eigenvalues().cwiseMin(ceiling);
    ControlMat out = eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
    return 0.5 * (out + out.transpose());
}

}  // namespace

QuadraticValue::QuadraticValue(double v, StateVec g, const StateMat& h)
    : value(v), grad(std::move(g)), hess(symmetrized(h))
{
}

void SolverConfig::validate() const
{
    if (horizon < 1) {
        throw ConfigError("solver.horizon_steps must be at least 1");
    }
    if (max_iterations < 1) {
        throw ConfigError("solver.max_iterations must be at least 1");
    }
    if (!(convergence_tol > 0.0)) {
        throw ConfigError("solver.convergence_tol must be positive");
    }
    if (line_search_alphas.empty()) {
        throw ConfigError("solver.line_search_alphas must not be empty");
    }
    for (std::size_t i = 0; i < line_search_alphas.size(); ++i) {
        const double a = line_search_alphas[i];
        if (!(a > 0.0 && a <= 1.0)) {
            throw ConfigError("solver.line_search_alphas must lie in (0, 1]");
        }
        if (i > 0 && !(a < line_search_alphas[i - 1])) {
            throw ConfigError("solver.line_search_alphas must be strictly decreasing");
        }
    }
    if (!(hess_regularization >= 0.0)) {
        throw ConfigError("solver.hess_regularization must be non-negative");
    }
}

double objective_from_margins(std::span<const double> failure, std::span<const double> target, SolveMode mode)
{
    if (failure.empty()) {
        throw std::invalid_argument("objective of an empty trajectory");
    }
    double running_failure = std::numeric_limits<double>::infinity();
    if (mode == SolveMode::kAvoidOnly) {
        for (double g : failure) {
            running_failure = std::min(running_failure, g);
        }
        return running_failure;
    }
    if (target.size() != failure.size()) {
        throw std::invalid_argument("target and failure margin sequences differ in length");
    }
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t tau = 0; tau < failure.size(); ++tau) {
        running_failure = std::min(running_failure, failure[tau]);
        best = std::max(best, std::min(target[tau], running_failure));
    }
    return best;
}

double rollout_objective(std::span<const StateVec> states, const Environment& env, const ModelSpec& model,
                         SolveMode mode)
{
    std::vector<double> failure;
    std::vector<double> target;
    failure.reserve(states.size());
    for (const auto& x : states) {
        failure.push_back(failure_value(x, env));
        if (mode == SolveMode::kReachAvoid) {
            target.push_back(target_value(x, env, model));
        }
    }
    return objective_from_margins(failure, target, mode);
}

Trajectory forward_pass(const Trajectory& nominal, std::span<const GainMat> feedback,
                        std::span<const ControlVec> feedforward, double alpha, const Environment& env,
                        const ModelSpec& model, SolveMode mode)
{
    const std::size_t horizon = nominal.controls.size();
    if (feedback.size() != horizon || feedforward.size() != horizon) {
        throw std::invalid_argument("gain sequences do not match the horizon");
    }
    Trajectory out;
    out.states.reserve(horizon + 1);
    out.controls.reserve(horizon);
    out.failure.reserve(horizon + 1);
    out.states.push_back(nominal.states.front());
    for (std::size_t t = 0; t < horizon; ++t) {
        const StateVec& x = out.states.back();
        ControlVec u = nominal.controls[t] + alpha * feedforward[t] + feedback[t] * (x - nominal.states[t]);
        u = clamp_control(u, model);
        out.states.push_back(step_rk4(x, u, model));
        out.controls.push_back(std::move(u));
    }
    for (const auto& x : out.states) {
        out.failure.push_back(failure_value(x, env));
        if (mode == SolveMode::kReachAvoid) {
            out.target.push_back(target_value(x, env, model));
        }
    }
    out.objective = objective_from_margins(out.failure, out.target, mode);
    return out;
}

BackwardResult backward_pass(const Trajectory& traj, const Environment& env, const ModelSpec& model,
                             const SolverConfig& config)
{
    const int horizon = static_cast<int>(traj.controls.size());
    const int n = model.state_dim();
    const int m = model.control_dim();
    const bool reach_avoid = config.mode == SolveMode::kReachAvoid;
    if (static_cast<int>(traj.states.size()) != horizon + 1 ||
        static_cast<int>(traj.failure.size()) != horizon + 1 ||
        (reach_avoid && static_cast<int>(traj.target.size()) != horizon + 1)) {
        throw std::invalid_argument("trajectory margins are inconsistent with its length");
    }

    BackwardResult out;
    out.feedback_gains.assign(static_cast<std::size_t>(horizon), GainMat::Zero(m, n));
    out.feedforward_gains.assign(static_cast<std::size_t>(horizon), ControlVec::Zero(m));
    out.branches.assign(static_cast<std::size_t>(horizon + 1), Branch::kPropagated);

    double value = 0.0;
    StateVec vx;
    StateMat vxx;

    auto take_margin = [&](int t, Branch branch) {
        const auto ti = static_cast<std::size_t>(t);
        const MarginEval eval = branch == Branch::kFailure ? failure_margin(traj.states[ti], env)
                                                           : target_margin(traj.states[ti], env, model);
        value = branch == Branch::kFailure ? traj.failure[ti] : traj.target[ti];
        vx = eval.grad;
        vxx = concave_part(eval.hess);
        out.branches[ti] = branch;
    };

    // Terminal: min{g, l} (or g alone when avoiding only).
    {
        const auto ti = static_cast<std::size_t>(horizon);
        const bool target_lower = reach_avoid && traj.target[ti] < traj.failure[ti];
        take_margin(horizon, target_lower ? Branch::kTarget : Branch::kFailure);
    }

    for (int t = horizon - 1; t >= 0; --t) {
        const auto ti = static_cast<std::size_t>(t);
        const DiscreteJacobians jac = jacobians(traj.states[ti], traj.controls[ti], model);
        const StateVec qx = jac.A.transpose() * vx;
        const ControlVec qu = jac.B.transpose() * vx;
        const StateMat qxx = jac.A.transpose() * vxx * jac.A;
        const ControlMat quu = jac.B.transpose() * vxx * jac.B;
        const GainMat qux = jac.B.transpose() * vxx * jac.A;

        // Ties go to the propagated branch; a margin must be strictly better to take over.
        Branch branch = Branch::kPropagated;
        double selected = value;
        if (reach_avoid && traj.target[ti] > selected) {
            branch = Branch::kTarget;
            selected = traj.target[ti];
        }
        if (traj.failure[ti] < selected) {
            branch = Branch::kFailure;
        }

        if (branch != Branch::kPropagated) {
            take_margin(t, branch);
            continue;
        }

        const ControlMat quu_reg = regularize(quu, config.hess_regularization);
        const Eigen::LDLT<ControlMat> solver(quu_reg);
        const ControlVec k = -solver.solve(qu);
        const GainMat big_k = -solver.solve(qux);
        if (!k.allFinite() || !big_k.allFinite()) {
            throw NumericFailure("non-finite gains in the backward pass");
        }
        vx = qx + big_k.transpose() * quu * k + big_k.transpose() * qu + qux.transpose() * k;
        vxx = symmetrized(qxx + big_k.transpose() * quu * big_k + big_k.transpose() * qux +
                          qux.transpose() * big_k);
        out.feedback_gains[ti] = big_k;
        out.feedforward_gains[ti] = k;
    }
    out.root = QuadraticValue(value, vx, vxx);
    return out;
}

ReachAvoidIlq::ReachAvoidIlq(ModelSpec model, Environment env, SolverConfig config)
    : model_(std::move(model)), env_(std::move(env)), config_(std::move(config))
{
    model_.validate();
    env_.validate();
    config_.validate();
    if (config_.mode == SolveMode::kReachAvoid && model_.kind != ModelKind::kBicycle) {
        throw ConfigError("reach-avoid mode requires the bicycle model (stopping-path target set)");
    }
}

Trajectory ReachAvoidIlq::rollout(const StateVec& x0, std::vector<ControlVec> controls) const
{
    Trajectory nominal;
    nominal.states.assign(controls.size() + 1, x0);
    nominal.controls = std::move(controls);
    const std::vector<GainMat> no_feedback(nominal.controls.size(),
                                           GainMat::Zero(model_.control_dim(), model_.state_dim()));
    const std::vector<ControlVec> no_feedforward(nominal.controls.size(), ControlVec::Zero(model_.control_dim()));
    // With zero gains the forward pass replays the controls open loop.
    return forward_pass(nominal, no_feedback, no_feedforward, 0.0, env_, model_, config_.mode);
}

std::vector<std::vector<ControlVec>> ReachAvoidIlq::maneuver_seeds() const
{
    const int horizon = config_.horizon;
    const int m = model_.control_dim();
    const int steer = m - 1;
    std::vector<std::vector<ControlVec>> seeds;
    for (double side : {1.0, -1.0}) {
        std::vector<ControlVec> seq(static_cast<std::size_t>(horizon), ControlVec::Zero(m));
        const double rate = side > 0.0 ? model_.control_upper[steer] : model_.control_lower[steer];
        if (model_.kind == ModelKind::kDubins) {
            for (auto& u : seq) {
                u[steer] = rate;
            }
        } else {
            // Lateral S-curve: turn out, turn back twice as long, straighten.
            const int q = std::max(1, horizon / 8);
            for (int t = 0; t < std::min(horizon, 4 * q); ++t) {
                const bool middle = t >= q && t < 3 * q;
                seq[static_cast<std::size_t>(t)][steer] = middle ? -rate : rate;
            }
        }
        seeds.push_back(std::move(seq));
    }
    return seeds;
}

IlqSolution ReachAvoidIlq::solve(const StateVec& initial_state, std::span<const ControlVec> warm_start) const
{
    if (initial_state.size() != model_.state_dim() || !initial_state.allFinite()) {
        throw std::invalid_argument("initial state must be finite with the model's dimension");
    }
    const auto horizon = static_cast<std::size_t>(config_.horizon);
    std::vector<ControlVec> controls;
    controls.reserve(horizon);
    for (std::size_t t = 0; t < horizon; ++t) {
        if (warm_start.empty()) {
            controls.push_back(ControlVec::Zero(model_.control_dim()));
        } else {
            const ControlVec& u = warm_start[std::min(t, warm_start.size() - 1)];
            if (u.size() != model_.control_dim()) {
                throw std::invalid_argument("warm start control has the wrong dimension");
            }
            controls.push_back(clamp_control(u, model_));
        }
    }
    IlqSolution best = optimize(initial_state, std::move(controls));
    if (config_.maneuver_seeds) {
        for (auto& seed : maneuver_seeds()) {
            IlqSolution candidate = optimize(initial_state, std::move(seed));
            if (candidate.rollout_objective > best.rollout_objective) {
                best = std::move(candidate);
            }
        }
    }
    return best;
}

IlqSolution ReachAvoidIlq::optimize(const StateVec& initial_state, std::vector<ControlVec> controls) const
{
    Trajectory nominal = rollout(initial_state, std::move(controls));
    if (!std::isfinite(nominal.objective)) {
        throw NumericFailure("initial rollout objective is not finite");
    }
    BackwardResult gains = backward_pass(nominal, env_, model_, config_);

    IlqSolution sol;
    while (sol.iterations < config_.max_iterations) {
        ++sol.iterations;
        bool improved = false;
        Trajectory candidate;
        for (double alpha : config_.line_search_alphas) {
            candidate = forward_pass(nominal, gains.feedback_gains, gains.feedforward_gains, alpha, env_, model_,
                                     config_.mode);
            if (!std::isfinite(candidate.objective)) {
                throw NumericFailure("forward pass objective is not finite");
            }
            if (candidate.objective > nominal.objective) {
                improved = true;
                break;
            }
        }
        if (!improved) {
            sol.converged = true;
            break;
        }
        const double change = candidate.objective - nominal.objective;
        nominal = std::move(candidate);
        gains = backward_pass(nominal, env_, model_, config_);
        if (change < config_.convergence_tol) {
            sol.converged = true;
            break;
        }
    }

    sol.rollout_objective = nominal.objective;
    sol.root_value = gains.root;
    sol.root_fu = jacobians(nominal.states.front(), nominal.controls.front(), model_).B;
    sol.nominal_states = std::move(nominal.states);
    sol.nominal_controls = std::move(nominal.controls);
    sol.feedback_gains = std::move(gains.feedback_gains);
    sol.feedforward_gains = std::move(gains.feedforward_gains);
    sol.branches = std::move(gains.branches);
    if (std::abs(sol.root_value.value - sol.rollout_objective) > 1e-6) {
        throw NumericFailure("root value disagrees with the rollout objective");
    }
    return sol;
}

}  // namespace cbfddp
