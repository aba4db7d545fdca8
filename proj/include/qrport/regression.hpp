#pragma once

// The four estimation problems behind the allocation strategies. Each one is
// a minimization over (intercept, coefficients) of
//
//     least squares:      sum_t e_t^2                 [+ lambda sum_j |w_j|]
//     quantile (theta):   sum_t rho_theta(e_t)        [+ lambda sum_j |w_j|]
//
// with e_t = y_t - xi - x_t' w. The intercept is never penalized. Losses are
// raw sums over observations, not means.
//
// Quantile problems are solved exactly as linear programs through their dual
//
//     maximize  y'd   s.t.  1'd = 0,  -lambda <= X_j'd <= lambda,
//                           theta - 1 <= d_t <= theta,
//
// whose equality multipliers are the primal (xi, w). Least squares goes
// through a complete orthogonal decomposition; the lasso through cyclic
// coordinate descent.

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qrport/detail/bounded_simplex.hpp"
#include "qrport/error.hpp"

namespace qrport {

// ============================================================================
// Problem and fit types
// ============================================================================

struct DesignProblem {
    Eigen::VectorXd response;    ///< y, length T
    Eigen::MatrixXd covariates;  ///< X, T x p (may have zero columns)
    std::optional<double> theta; ///< quantile level; absent for least squares
    double lambda = 0.0;         ///< l1 weight on the covariate coefficients

    Eigen::Index observations() const { return response.size(); }
    Eigen::Index covariate_count() const { return covariates.cols(); }

    void validate() const {
        if (response.size() == 0) throw DataError("design problem: empty response");
        if (covariates.rows() != response.size())
            throw DataError("design problem: covariate rows do not match response length");
        if (theta && !(*theta > 0.0 && *theta < 1.0))
            throw DataError("design problem: theta must lie strictly inside (0,1)");
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw DataError("design problem: lambda must be >= 0");
        if (!response.allFinite() || !covariates.allFinite())
            throw DataError("design problem: non-finite data");
    }
};

struct FitDiagnostics {
    bool rank_deficient = false;  ///< least squares: minimum-norm solution used
    bool degenerate = false;      ///< quantile: fewer than p+1 interpolated observations
    Eigen::Index interpolated = 0;  ///< observations with zero residual (quantile fits)
    Eigen::Index iterations = 0;
};

struct RegressionFit {
    double intercept = 0.0;
    Eigen::VectorXd coefficients;
    double objective = 0.0;
    Eigen::VectorXd residuals;
    FitDiagnostics diagnostics;
};

/// Coordinate descent hit its iteration cap; carries the last iterate.
class NonConvergenceError : public SolverError {
public:
    NonConvergenceError(const std::string& what, RegressionFit best)
        : SolverError(SolverStatus::not_converged, what), best_(std::move(best)) {}
    const RegressionFit& best_iterate() const noexcept { return best_; }

private:
    RegressionFit best_;
};

// ============================================================================
// Losses
// ============================================================================

/// Check (pinball) loss rho_theta(e) = e (theta - 1{e < 0}).
inline double check_loss(double e, double theta) {
    if (!(theta > 0.0 && theta < 1.0)) throw DataError("check_loss: theta must lie strictly inside (0,1)");
    return e * (theta - (e < 0.0 ? 1.0 : 0.0));
}

inline Eigen::VectorXd residuals_of(const DesignProblem& problem, double intercept, const Eigen::VectorXd& coefficients) {
    Eigen::VectorXd res = problem.response.array() - intercept;
    if (coefficients.size() > 0) res.noalias() -= problem.covariates * coefficients;
    return res;
}

/// Objective value of (intercept, coefficients) for the problem's loss.
inline double objective_of(const DesignProblem& problem, double intercept, const Eigen::VectorXd& coefficients) {
    const Eigen::VectorXd res = residuals_of(problem, intercept, coefficients);
    double loss = 0.0;
    if (problem.theta) {
        const double theta = *problem.theta;
        for (Eigen::Index t = 0; t < res.size(); ++t) loss += check_loss(res[t], theta);
    } else {
        loss = res.squaredNorm();
    }
    return loss + problem.lambda * coefficients.cwiseAbs().sum();
}

namespace detail {

inline double residual_tolerance(const DesignProblem& problem) {
    double scale = problem.response.size() ? problem.response.cwiseAbs().maxCoeff() : 0.0;
    if (problem.covariates.size()) scale = std::max(scale, problem.covariates.cwiseAbs().maxCoeff());
    return 1e-9 * std::max(1.0, scale);
}

inline RegressionFit finish_fit(const DesignProblem& problem, double intercept, Eigen::VectorXd coefficients) {
    RegressionFit fit;
    fit.intercept = intercept;
    fit.coefficients = std::move(coefficients);
    fit.residuals = residuals_of(problem, fit.intercept, fit.coefficients);
    fit.objective = objective_of(problem, fit.intercept, fit.coefficients);
    return fit;
}

inline RegressionFit solve_quantile_lp(const DesignProblem& problem) {
    const double theta = *problem.theta;
    const Eigen::Index obs = problem.observations();
    const Eigen::Index p = problem.covariate_count();
    const bool penalized = problem.lambda > 0.0;
    const Eigen::Index cols = obs + (penalized ? p : 0);

    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p + 1, cols);
    a.row(0).head(obs).setOnes();
    if (p > 0) a.block(1, 0, p, obs) = problem.covariates.transpose();
    Eigen::VectorXd c = Eigen::VectorXd::Zero(cols);
    c.head(obs) = problem.response;
    Eigen::VectorXd lower(cols), upper(cols);
    lower.head(obs).setConstant(theta - 1.0);
    upper.head(obs).setConstant(theta);
    std::vector<bool> start_up(static_cast<std::size_t>(cols), false);
    for (Eigen::Index t = 0; t < obs; ++t) start_up[static_cast<std::size_t>(t)] = problem.response[t] > 0.0;
    if (penalized) {
        for (Eigen::Index j = 0; j < p; ++j) a(j + 1, obs + j) = -1.0;
        lower.tail(p).setConstant(-problem.lambda);
        upper.tail(p).setConstant(problem.lambda);
    }

    BoundedSimplex lp(a, Eigen::VectorXd::Zero(p + 1), c, lower, upper);
    const SimplexResult sol = lp.solve(start_up);

    Eigen::VectorXd coefficients = sol.duals.tail(p);
    // a basic slack means |X_j'd| < lambda, so w_j is exactly zero
    for (auto j : sol.basis)
        if (j >= obs) coefficients[j - obs] = 0.0;
    RegressionFit fit = finish_fit(problem, sol.duals[0], std::move(coefficients));
    const double tol = residual_tolerance(problem);
    fit.diagnostics.interpolated = (fit.residuals.array().abs() <= tol).count();
    fit.diagnostics.iterations = sol.iterations;
    Eigen::Index zero_coefs = penalized ? (fit.coefficients.array() == 0.0).count() : 0;
    fit.diagnostics.degenerate = sol.redundant_rows || fit.diagnostics.interpolated < p + 1 - zero_coefs;
    return fit;
}

}  // namespace detail

// ============================================================================
// Solvers
// ============================================================================

/// Least squares with intercept. Rank-deficient designs get the minimum-norm
/// coefficient vector and are flagged.
inline RegressionFit fit_ols(const DesignProblem& problem) {
    problem.validate();
    if (problem.theta) throw DataError("fit_ols: theta must be absent");
    if (problem.lambda != 0.0) throw DataError("fit_ols: lambda must be 0 (use fit_ols_l1)");
    const Eigen::Index p = problem.covariate_count();
    const double ybar = problem.response.mean();
    if (p == 0) return detail::finish_fit(problem, ybar, Eigen::VectorXd());

    const Eigen::RowVectorXd xbar = problem.covariates.colwise().mean();
    const Eigen::MatrixXd xc = problem.covariates.rowwise() - xbar;
    const Eigen::VectorXd yc = problem.response.array() - ybar;
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(xc);
    cod.setThreshold(1e-12);
    Eigen::VectorXd w = cod.solve(yc);
    const double intercept = ybar - xbar.dot(w);
    RegressionFit fit = detail::finish_fit(problem, intercept, std::move(w));
    fit.diagnostics.rank_deficient = cod.rank() < p;
    return fit;
}

inline RegressionFit fit_qr(const DesignProblem& problem) {
    problem.validate();
    if (!problem.theta) throw DataError("fit_qr: theta is required");
    if (problem.lambda != 0.0) throw DataError("fit_qr: lambda must be 0 (use fit_qr_l1)");
    return detail::solve_quantile_lp(problem);
}

inline RegressionFit fit_qr_l1(const DesignProblem& problem) {
    problem.validate();
    if (!problem.theta) throw DataError("fit_qr_l1: theta is required");
    return detail::solve_quantile_lp(problem);
}

struct CoordinateDescentOptions {
    Eigen::Index max_sweeps = 10000;
    double tolerance = 1e-8;
};

namespace detail {

inline double soft_threshold(double z, double gamma) {
    if (z > gamma) return z - gamma;
    if (z < -gamma) return z + gamma;
    return 0.0;
}

/// Largest distance between a coefficient and its exact coordinate minimizer
/// given all other coefficients, on centered data.
inline double coordinate_stationarity(const Eigen::MatrixXd& xc, const Eigen::VectorXd& norms,
                                      const Eigen::VectorXd& w, const Eigen::VectorXd& res, double lambda) {
    double worst = 0.0;
    for (Eigen::Index j = 0; j < xc.cols(); ++j) {
        if (norms[j] == 0.0) {
            worst = std::max(worst, std::abs(w[j]));
            continue;
        }
        const double target = soft_threshold(norms[j] * w[j] + xc.col(j).dot(res), lambda / 2.0) / norms[j];
        worst = std::max(worst, std::abs(target - w[j]));
    }
    return worst;
}

}  // namespace detail

/// Lasso: sum_t e_t^2 + lambda sum_j |w_j| by cyclic coordinate descent on
/// centered data (the intercept is recovered from the means).
inline RegressionFit fit_ols_l1(const DesignProblem& problem, CoordinateDescentOptions opts = {}) {
    problem.validate();
    if (problem.theta) throw DataError("fit_ols_l1: theta must be absent");
    const Eigen::Index p = problem.covariate_count();
    const double ybar = problem.response.mean();
    if (p == 0) return detail::finish_fit(problem, ybar, Eigen::VectorXd());

    const Eigen::RowVectorXd xbar = problem.covariates.colwise().mean();
    const Eigen::MatrixXd xc = problem.covariates.rowwise() - xbar;
    const Eigen::VectorXd norms = xc.colwise().squaredNorm().transpose();
    const double half_lambda = problem.lambda / 2.0;

    Eigen::VectorXd w = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd res = problem.response.array() - ybar;  // centered residual
    Eigen::Index sweep = 0;
    for (; sweep < opts.max_sweeps; ++sweep) {
        double max_change = 0.0;
        for (Eigen::Index j = 0; j < p; ++j) {
            if (norms[j] == 0.0) continue;
            const double old = w[j];
            const double updated = detail::soft_threshold(norms[j] * old + xc.col(j).dot(res), half_lambda) / norms[j];
            if (updated != old) {
                res.noalias() -= (updated - old) * xc.col(j);
                w[j] = updated;
                max_change = std::max(max_change, std::abs(updated - old));
            }
        }
        if (max_change < opts.tolerance &&
            detail::coordinate_stationarity(xc, norms, w, res, problem.lambda) <= opts.tolerance) {
            ++sweep;
            RegressionFit fit = detail::finish_fit(problem, ybar - xbar.dot(w), w);
            fit.diagnostics.iterations = sweep;
            return fit;
        }
    }
    RegressionFit best = detail::finish_fit(problem, ybar - xbar.dot(w), w);
    best.diagnostics.iterations = sweep;
    throw NonConvergenceError("fit_ols_l1: coordinate descent did not converge in " +
                                  std::to_string(opts.max_sweeps) + " sweeps",
                              std::move(best));
}

/// Called after every successful fit() when set. Used for auditing; not
/// synchronized, so install it before starting threaded work.
using FitObserver = std::function<void(const DesignProblem&, const RegressionFit&)>;

inline FitObserver& fit_observer() {
    static FitObserver observer;
    return observer;
}

/// Dispatches on theta / lambda.
inline RegressionFit fit(const DesignProblem& problem) {
    RegressionFit f;
    if (problem.theta) f = problem.lambda > 0.0 ? fit_qr_l1(problem) : fit_qr(problem);
    else f = problem.lambda > 0.0 ? fit_ols_l1(problem) : fit_ols(problem);
    if (const auto& obs = fit_observer()) obs(problem, f);
    return f;
}

// ============================================================================
// Certificate
// ============================================================================

struct CertificateCheck {
    std::string name;
    bool passed = false;
    double slack = 0.0;  ///< non-negative when the condition holds
};

struct Certificate {
    std::vector<CertificateCheck> checks;

    bool passed() const {
        return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
    }
    const CertificateCheck* find(const std::string& name) const {
        for (const auto& c : checks)
            if (c.name == name) return &c;
        return nullptr;
    }
};

struct CertifyTolerances {
    double objective_rel = 1e-8;
    double ols_gradient = 1e-6;
    double lasso_stationarity = 1e-8;
};

/// Recomputes the objective and checks the first-order conditions that
/// define "solved" for the problem's estimator.
inline Certificate certify(const RegressionFit& fit, const DesignProblem& problem, CertifyTolerances tol = {}) {
    problem.validate();
    Certificate cert;
    const Eigen::Index p = problem.covariate_count();
    if (fit.coefficients.size() != p) {
        cert.checks.push_back({"shape", false, -1.0});
        return cert;
    }
    const Eigen::VectorXd res = residuals_of(problem, fit.intercept, fit.coefficients);
    const double recomputed = objective_of(problem, fit.intercept, fit.coefficients);
    {
        const double bound = tol.objective_rel * std::max(1.0, std::abs(recomputed));
        const double gap = std::abs(recomputed - fit.objective);
        cert.checks.push_back({"objective", gap <= bound, bound - gap});
    }

    if (problem.theta) {
        const double theta = *problem.theta;
        const double zero_tol = detail::residual_tolerance(problem);
        const auto neg = static_cast<double>((res.array() < -zero_tol).count());
        const auto nonpos = static_cast<double>((res.array() <= zero_tol).count());
        const double target = theta * static_cast<double>(res.size());
        const double slack = std::min(target - neg, nonpos - target);
        cert.checks.push_back({"subgradient_counts", slack >= -1e-9, slack});

        // one-sided directional derivatives along every coordinate axis
        double worst = std::numeric_limits<double>::infinity();
        for (Eigen::Index j = 0; j <= p; ++j) {
            for (double dir : {1.0, -1.0}) {
                double deriv = 0.0;
                for (Eigen::Index t = 0; t < res.size(); ++t) {
                    const double x = j == 0 ? 1.0 : problem.covariates(t, j - 1);
                    const double move = -dir * x;  // change of residual per unit step
                    const double e = res[t];
                    if (e > zero_tol)
                        deriv += theta * move;
                    else if (e < -zero_tol)
                        deriv += (theta - 1.0) * move;
                    else
                        deriv += move >= 0.0 ? theta * move : (theta - 1.0) * move;
                }
                if (j > 0 && problem.lambda > 0.0) {
                    const double w = fit.coefficients[j - 1];
                    if (w > 0.0) deriv += problem.lambda * dir;
                    else if (w < 0.0) deriv -= problem.lambda * dir;
                    else deriv += problem.lambda;
                }
                worst = std::min(worst, deriv);
            }
        }
        const double deriv_tol = 1e-7 * std::max(1.0, problem.covariates.size() ? problem.covariates.cwiseAbs().maxCoeff() : 1.0);
        cert.checks.push_back({"directional_derivatives", worst >= -deriv_tol, worst + deriv_tol});
        return cert;
    }

    const Eigen::RowVectorXd xbar = p > 0 ? Eigen::RowVectorXd(problem.covariates.colwise().mean()) : Eigen::RowVectorXd();
    const Eigen::MatrixXd xc = p > 0 ? Eigen::MatrixXd(problem.covariates.rowwise() - xbar) : Eigen::MatrixXd(res.size(), 0);
    {
        const double grad0 = 2.0 * std::abs(res.sum());
        cert.checks.push_back({"intercept_gradient", grad0 < tol.ols_gradient, tol.ols_gradient - grad0});
    }
    if (problem.lambda == 0.0) {
        const double g = p > 0 ? (2.0 * problem.covariates.transpose() * res).cwiseAbs().maxCoeff() : 0.0;
        cert.checks.push_back({"gradient", g < tol.ols_gradient, tol.ols_gradient - g});
    } else {
        const Eigen::VectorXd norms = xc.colwise().squaredNorm().transpose();
        const Eigen::VectorXd centered_res = res.array() - res.mean();
        const double v = detail::coordinate_stationarity(xc, norms, fit.coefficients, centered_res, problem.lambda);
        cert.checks.push_back({"coordinate_stationarity", v <= tol.lasso_stationarity, tol.lasso_stationarity - v});
    }
    return cert;
}

}  // namespace qrport
