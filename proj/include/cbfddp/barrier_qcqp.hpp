#pragma once

#include "cbfddp/reach_avoid_ilq.hpp"

namespace cbfddp {

/// Barrier constraint  du^T P du + p^T du + c >= 0  on the control correction.
struct QcqpParams {
    Eigen::MatrixXd P;
    Eigen::VectorXd p;
    double c = 0.0;
    double gamma = 0.95;
    double lambda_scale = 1.0;
};

enum class QcqpStatus { kSatisfiedAtZero, kQuadraticFeasible, kLinearFallback, kInfeasible };

const char* to_string(QcqpStatus status);

struct QcqpSolution {
    ControlVec delta_u;
    QcqpStatus status = QcqpStatus::kInfeasible;
    double constraint_residual = 0.0;
};

/// Second-order expansion of V(f(x, u_task + du), 0) - gamma V(x, 0) in du.
/// `fu` is df/du at (x, u_task); `value_next` carries V and its derivatives at
/// f(x, u_task).
QcqpParams build_constraint(const QuadraticValue& value_next, const InputMat& fu, double value_current,
                            double gamma, const ModelSpec& model);

/// True iff the largest eigenvalue of the symmetric matrix is below -1e-10.
bool is_negative_definite(const Eigen::MatrixXd& P);

/// Minimum-norm correction satisfying the barrier constraint and keeping
/// u_task + du inside the control box. Uses the quadratic constraint when P is
/// negative definite, otherwise drops the quadratic term.
QcqpSolution solve_qcqp(const QcqpParams& params, const ControlVec& u_task, const ModelSpec& model);

/// Minimum-norm correction for the linear constraint p^T du + c >= 0 within the box.
QcqpSolution solve_linear_qp(const Eigen::VectorXd& p, double c, const ControlVec& u_task, const ModelSpec& model);

namespace detail {

struct BoxQcqpResult {
    bool feasible = false;
    Eigen::VectorXd x;
};

/// min |x|^2  s.t.  x^T P x + p^T x + c >= 0,  lo <= x <= hi.
/// `quadratic` selects the ellipsoidal (P negative definite) or the half-space
/// (P ignored) constraint. The minimizer sits either at the unconstrained
/// minimum-norm point or on a box face, where the problem reduces to the same
/// form in one dimension less; all faces are enumerated.
BoxQcqpResult min_norm_in_box(const Eigen::MatrixXd& P, const Eigen::VectorXd& p, double c,
                              const Eigen::VectorXd& lo, const Eigen::VectorXd& hi, bool quadratic);

}  // namespace detail

}  // namespace cbfddp
