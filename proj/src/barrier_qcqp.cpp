#include "cbfddp/barrier_qcqp.hpp"

#include <cmath>
#include <limits>
#include <optional>

namespace cbfddp {

namespace {

constexpr double kNegDefThreshold = -1e-10;
constexpr double kBoxTol = 1e-12;
constexpr int kBisectionSteps = 100;

using Eigen::MatrixXd;
using Eigen::VectorXd;

double residual(const MatrixXd& P, const VectorXd& p, double c, const VectorXd& x, bool quadratic)
{
    const double lin = p.dot(x) + c;
    return quadratic ? x.dot(P * x) + lin : lin;
}

// Minimum-norm point of {x : x^T P x + p^T x + c >= 0} with P negative definite.
// Along the KKT path x(mu) = mu (I - 2 mu P)^{-1} p the constraint value is
// strictly increasing in mu, so the boundary point is found by bisection.
std::optional<VectorXd> ellipsoid_min_norm(const MatrixXd& P, const VectorXd& p, double c)
{
    const Eigen::Index m = p.size();
    if (c >= 0.0) {
        return VectorXd::Zero(m);
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(0.5 * (P + P.transpose()));
    const VectorXd curv = -eig.eigenvalues();  // strictly positive
    const MatrixXd& basis = eig.eigenvectors();
    const VectorXd pt = basis.transpose() * p;

    double peak = c;
    for (Eigen::Index i = 0; i < m; ++i) {
        peak += pt[i] * pt[i] / (4.0 * curv[i]);
    }
    if (peak < 0.0) {
        return std::nullopt;
    }
    auto point = [&](double mu) {
        VectorXd y(m);
        for (Eigen::Index i = 0; i < m; ++i) {
            y[i] = mu * pt[i] / (1.0 + 2.0 * mu * curv[i]);
        }
        return y;
    };
    auto phi = [&](double mu) {
        double acc = c;
        for (Eigen::Index i = 0; i < m; ++i) {
            const double den = 1.0 + 2.0 * mu * curv[i];
            acc += pt[i] * pt[i] * mu * (1.0 + mu * curv[i]) / (den * den);
        }
        return acc;
    };
    double lo = 0.0;
    double hi = 1.0;
    while (phi(hi) < 0.0) {
        hi *= 2.0;
        if (!std::isfinite(hi) || hi > 1e300) {
            // The feasible set shrinks to the apex -P^{-1} p / 2.
            VectorXd y(m);
            for (Eigen::Index i = 0; i < m; ++i) {
                y[i] = pt[i] / (2.0 * curv[i]);
            }
            return basis * y;
        }
    }
    for (int step = 0; step < kBisectionSteps; ++step) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) {
            break;
        }
        if (phi(mid) >= 0.0) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    if (!(hi - lo <= 1e-12 * std::max(1.0, hi))) {
        throw NumericFailure("QCQP multiplier bisection did not converge");
    }
    VectorXd x = basis * point(hi);
    if (!x.allFinite()) {
        throw NumericFailure("QCQP produced a non-finite correction");
    }
    return x;
}

std::optional<VectorXd> halfspace_min_norm(const VectorXd& p, double c)
{
    if (c >= 0.0) {
        return VectorXd::Zero(p.size());
    }
    const double pp = p.squaredNorm();
    if (!(pp > 0.0)) {
        return std::nullopt;
    }
    return VectorXd((-c / pp) * p);
}

bool inside_box(const VectorXd& x, const VectorXd& lo, const VectorXd& hi)
{
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        if (x[i] < lo[i] - kBoxTol || x[i] > hi[i] + kBoxTol) {
            return false;
        }
    }
    return true;
}

VectorXd drop_index(const VectorXd& v, Eigen::Index skip)
{
    VectorXd out(v.size() - 1);
    for (Eigen::Index i = 0, j = 0; i < v.size(); ++i) {
        if (i != skip) {
            out[j++] = v[i];
        }
    }
    return out;
}

MatrixXd drop_row_col(const MatrixXd& M, Eigen::Index skip)
{
    const Eigen::Index m = M.rows();
    MatrixXd out(m - 1, m - 1);
    for (Eigen::Index i = 0, r = 0; i < m; ++i) {
        if (i == skip) {
            continue;
        }
        for (Eigen::Index j = 0, s = 0; j < m; ++j) {
            if (j != skip) {
                out(r, s++) = M(i, j);
            }
        }
        ++r;
    }
    return out;
}

QcqpSolution finish(const VectorXd& x, QcqpStatus status, const MatrixXd& P, const VectorXd& p, double c,
                    bool quadratic)
{
    QcqpSolution sol;
    sol.delta_u = x;
    sol.status = status;
    sol.constraint_residual = residual(P, p, c, x, quadratic);
    return sol;
}

}  // namespace

const char* to_string(QcqpStatus status)
{
    switch (status) {
        case QcqpStatus::kSatisfiedAtZero:
            return "satisfied_at_zero";
        case QcqpStatus::kQuadraticFeasible:
            return "quadratic_feasible";
        case QcqpStatus::kLinearFallback:
            return "linear_fallback";
        case QcqpStatus::kInfeasible:
            return "infeasible";
    }
    return "unknown";
}

namespace detail {

BoxQcqpResult min_norm_in_box(const MatrixXd& P, const VectorXd& p, double c, const VectorXd& lo,
                              const VectorXd& hi, bool quadratic)
{
    const Eigen::Index m = p.size();
    if (m == 0) {
        return {c >= 0.0, VectorXd(0)};
    }
    const auto free_point = quadratic ? ellipsoid_min_norm(P, p, c) : halfspace_min_norm(p, c);
    if (free_point && inside_box(*free_point, lo, hi)) {
        return {true, free_point->cwiseMax(lo).cwiseMin(hi)};
    }
    if (quadratic && !free_point) {
        // The ellipsoid is empty; no face can help.
        return {false, VectorXd()};
    }

    BoxQcqpResult best;
    double best_norm = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < m; ++i) {
        for (double bound : {lo[i], hi[i]}) {
            // Fix x_i = bound; the rest obeys the same problem one dimension down.
            const VectorXd p_rest = drop_index(p, i);
            const VectorXd lo_rest = drop_index(lo, i);
            const VectorXd hi_rest = drop_index(hi, i);
            MatrixXd P_rest(m - 1, m - 1);
            VectorXd p_face = p_rest;
            double c_face = c + p[i] * bound;
            if (quadratic) {
                P_rest = drop_row_col(P, i);
                const VectorXd cross = drop_index(P.col(i) + P.row(i).transpose(), i);
                p_face += bound * cross;
                c_face += P(i, i) * bound * bound;
            } else {
                P_rest.setZero();
            }
            const BoxQcqpResult sub = min_norm_in_box(P_rest, p_face, c_face, lo_rest, hi_rest, quadratic);
            if (!sub.feasible) {
                continue;
            }
            VectorXd x(m);
            for (Eigen::Index k = 0, j = 0; k < m; ++k) {
                x[k] = k == i ? bound : sub.x[j++];
            }
            const double norm = x.squaredNorm();
            if (norm < best_norm) {
                best_norm = norm;
                best = {true, x};
            }
        }
    }
    return best;
}

}  // namespace detail

QcqpParams build_constraint(const QuadraticValue& value_next, const InputMat& fu, double value_current,
                            double gamma, const ModelSpec& model)
{
    if (fu.rows() != model.state_dim() || fu.cols() != model.control_dim()) {
        throw std::invalid_argument("control Jacobian has the wrong shape");
    }
    QcqpParams params;
    const MatrixXd quad = 0.5 * fu.transpose() * value_next.hess * fu;
    params.P = 0.5 * (quad + quad.transpose());
    params.p = fu.transpose() * value_next.grad;
    params.c = value_next.value - gamma * value_current;
    params.gamma = gamma;
    return params;
}

bool is_negative_definite(const MatrixXd& P)
{
    if (P.size() == 0) {
        return false;
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(0.5 * (P + P.transpose()), Eigen::EigenvaluesOnly);
    return eig.eigenvalues().maxCoeff() < kNegDefThreshold;
}

QcqpSolution solve_linear_qp(const VectorXd& p, double c, const ControlVec& u_task, const ModelSpec& model)
{
    const int m = model.control_dim();
    if (p.size() != m || u_task.size() != m) {
        throw std::invalid_argument("linear QP dimensions do not match the model");
    }
    const VectorXd lo = model.control_lower - u_task;
    const VectorXd hi = model.control_upper - u_task;
    const MatrixXd none = MatrixXd::Zero(m, m);
    const auto result = detail::min_norm_in_box(none, p, c, lo, hi, false);
    if (!result.feasible) {
        QcqpSolution sol;
        sol.delta_u = ControlVec::Zero(m);
        sol.constraint_residual = c;
        return sol;
    }
    return finish(result.x, QcqpStatus::kLinearFallback, none, p, c, false);
}

QcqpSolution solve_qcqp(const QcqpParams& params, const ControlVec& u_task, const ModelSpec& model)
{
    const int m = model.control_dim();
    if (params.P.rows() != m || params.P.cols() != m || params.p.size() != m || u_task.size() != m) {
        throw std::invalid_argument("QCQP dimensions do not match the model");
    }
    const VectorXd lo = model.control_lower - u_task;
    const VectorXd hi = model.control_upper - u_task;
    const VectorXd zero = VectorXd::Zero(m);
    if (params.c >= 0.0 && inside_box(zero, lo, hi)) {
        return finish(zero, QcqpStatus::kSatisfiedAtZero, params.P, params.p, params.c, true);
    }
    if (!is_negative_definite(params.P)) {
        return solve_linear_qp(params.p, params.c, u_task, model);
    }
    const auto result = detail::min_norm_in_box(params.P, params.p, params.c, lo, hi, true);
    if (!result.feasible) {
        QcqpSolution sol;
        sol.delta_u = ControlVec::Zero(m);
        sol.constraint_residual = params.c;
        return sol;
    }
    return finish(result.x, QcqpStatus::kQuadraticFeasible, params.P, params.p, params.c, true);
}

}  // namespace cbfddp
