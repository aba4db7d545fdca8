#pragma once

// From a return window to a fully invested weight vector:
//
//   numeraire k  ->  response r_k, covariates r*_j = r_k - r_j (j != k)
//                ->  regression fit (xi, w_{-k})
//                ->  w_k = 1 - sum_{j != k} w_j
//                ->  thresholding of tiny positions (penalized estimators)
//
// The portfolio return r w' equals r_k - sum_j w_j r*_j under the budget
// constraint, so the regression residual is the de-meaned (de-quantiled)
// portfolio return.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qrport/error.hpp"
#include "qrport/indicators.hpp"
#include "qrport/penalty.hpp"
#include "qrport/regression.hpp"

namespace qrport {

using WindowRef = Eigen::Ref<const Eigen::MatrixXd>;

// ============================================================================
// Strategy description
// ============================================================================

enum class Estimator { ols, lasso, qr, pqr };

struct NumeraireRule {
    enum class Kind { lowest_psi1, fixed, last_column };
    Kind kind = Kind::last_column;
    Eigen::Index index = 0;  ///< for Kind::fixed

    static NumeraireRule lowest_psi1() { return {Kind::lowest_psi1, 0}; }
    static NumeraireRule last_column() { return {Kind::last_column, 0}; }
    static NumeraireRule fixed(Eigen::Index i) { return {Kind::fixed, i}; }
};

struct StrategySpec {
    Estimator estimator = Estimator::ols;
    std::optional<double> theta;
    std::optional<LambdaRule> lambda_rule;
    std::optional<NumeraireRule> numeraire;  ///< empty: last column if unpenalized, lowest psi1 otherwise
    double psi_level = 0.9;
    double threshold = 0.0005;
    std::string label;  ///< optional display name

    static StrategySpec ols() { return StrategySpec{}; }
    static StrategySpec qr(double theta) {
        StrategySpec s;
        s.estimator = Estimator::qr;
        s.theta = theta;
        return s;
    }
    static StrategySpec pqr(double theta, LambdaRule rule = LambdaRule::pivotal()) {
        StrategySpec s;
        s.estimator = Estimator::pqr;
        s.theta = theta;
        s.lambda_rule = rule;
        return s;
    }
    static StrategySpec lasso(LambdaRule rule) {
        StrategySpec s;
        s.estimator = Estimator::lasso;
        s.lambda_rule = rule;
        return s;
    }

    bool penalized() const { return estimator == Estimator::lasso || estimator == Estimator::pqr; }
    bool quantile() const { return estimator == Estimator::qr || estimator == Estimator::pqr; }

    NumeraireRule numeraire_rule() const {
        if (numeraire) return *numeraire;
        return penalized() ? NumeraireRule::lowest_psi1() : NumeraireRule::last_column();
    }

    std::string name() const {
        if (!label.empty()) return label;
        auto level = [&] {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%g", theta.value_or(0.0));
            return std::string(buf);
        };
        switch (estimator) {
            case Estimator::ols: return "OLS";
            case Estimator::lasso: return "LASSO";
            case Estimator::qr: return "QR(" + level() + ")";
            case Estimator::pqr: return "PQR(" + level() + ")";
        }
        return "?";
    }

    void validate() const {
        if (quantile() != theta.has_value())
            throw ConfigError(name() + ": theta must be given for QR/PQR and only for them");
        if (theta && !(*theta > 0.0 && *theta < 1.0)) throw ConfigError(name() + ": theta must lie in (0,1)");
        if (penalized() != lambda_rule.has_value())
            throw ConfigError(name() + ": a lambda rule must be given for LASSO/PQR and only for them");
        if (lambda_rule) {
            lambda_rule->validate();
            if (estimator == Estimator::lasso && lambda_rule->method == LambdaRule::Method::pivotal_simulation)
                throw ConfigError("LASSO: pivotal-simulation lambda applies to quantile regression only");
        }
        if (!(psi_level > 0.0 && psi_level < 1.0)) throw ConfigError(name() + ": psi level must lie in (0,1)");
        if (!(threshold >= 0.0)) throw ConfigError(name() + ": threshold must be >= 0");
    }
};

// ============================================================================
// Weights
// ============================================================================

struct WeightVector {
    Eigen::VectorXd weights;
    Eigen::Index numeraire_index = 0;
    double intercept = 0.0;
    Eigen::Index active_count = 0;
    Eigen::Index short_count = 0;
    double lambda = 0.0;  ///< penalty used for the fit
};

inline void count_positions(WeightVector& w, double threshold) {
    w.active_count = (w.weights.array().abs() > threshold).count();
    w.short_count = (w.weights.array() < -threshold).count();
}

/// argmin over assets of psi1_hat(column, psi); ties go to the lowest index.
inline Eigen::Index select_numeraire(const WindowRef& window, double psi_level = 0.9) {
    if (window.cols() < 2) throw DataError("select_numeraire: need at least 2 assets");
    if (window.rows() < 10) throw DataError("select_numeraire: need at least 10 observations");
    Eigen::Index best = 0;
    double best_value = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < window.cols(); ++j) {
        const double v = psi1_hat(window.col(j), psi_level);
        if (v < best_value) {
            best_value = v;
            best = j;
        }
    }
    return best;
}

/// Response r_k; covariate columns r_k - r_j for j != k in ascending j.
inline DesignProblem deviation_design(const WindowRef& window, Eigen::Index k) {
    if (k < 0 || k >= window.cols()) throw DataError("deviation_design: numeraire index out of range");
    DesignProblem p;
    p.response = window.col(k);
    p.covariates.resize(window.rows(), window.cols() - 1);
    Eigen::Index c = 0;
    for (Eigen::Index j = 0; j < window.cols(); ++j)
        if (j != k) p.covariates.col(c++) = window.col(k) - window.col(j);
    return p;
}

/// Covariate position of asset j in the deviation design built around k.
inline Eigen::Index covariate_slot(Eigen::Index j, Eigen::Index k) { return j < k ? j : j - 1; }

inline WeightVector recover_weights(const RegressionFit& fit, Eigen::Index k, Eigen::Index n, double threshold = 0.0005) {
    if (fit.coefficients.size() != n - 1) throw DataError("recover_weights: expected n-1 coefficients");
    if (k < 0 || k >= n) throw DataError("recover_weights: numeraire index out of range");
    WeightVector w;
    w.weights.resize(n);
    double others = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        if (j == k) continue;
        w.weights[j] = fit.coefficients[covariate_slot(j, k)];
        others += w.weights[j];
    }
    w.weights[k] = 1.0 - others;
    w.numeraire_index = k;
    w.intercept = fit.intercept;
    count_positions(w, threshold);
    return w;
}

/// Zeroes every non-numeraire position with |w_j| <= threshold and moves the
/// freed mass onto the numeraire, keeping the budget.
inline WeightVector threshold_positions(WeightVector w, double threshold = 0.0005) {
    double freed = 0.0;
    for (Eigen::Index j = 0; j < w.weights.size(); ++j) {
        if (j == w.numeraire_index) continue;
        if (std::abs(w.weights[j]) <= threshold) {
            freed += w.weights[j];
            w.weights[j] = 0.0;
        }
    }
    w.weights[w.numeraire_index] += freed;
    count_positions(w, threshold);
    return w;
}

// ============================================================================
// Estimation
// ============================================================================

inline Eigen::Index resolve_numeraire(const StrategySpec& spec, const WindowRef& window) {
    const auto rule = spec.numeraire_rule();
    switch (rule.kind) {
        case NumeraireRule::Kind::last_column: return window.cols() - 1;
        case NumeraireRule::Kind::fixed:
            if (rule.index < 0 || rule.index >= window.cols()) throw ConfigError("fixed numeraire index out of range");
            return rule.index;
        case NumeraireRule::Kind::lowest_psi1: return select_numeraire(window, spec.psi_level);
    }
    return window.cols() - 1;
}

inline DesignProblem strategy_problem(const StrategySpec& spec, const WindowRef& window, Eigen::Index k, double lambda) {
    DesignProblem p = deviation_design(window, k);
    p.theta = spec.theta;
    p.lambda = spec.penalized() ? lambda : 0.0;
    return p;
}

/// Weights for an explicit penalty value (ignored for unpenalized estimators).
inline WeightVector estimate_weights_with_lambda(const StrategySpec& spec, const WindowRef& window, double lambda,
                                                 RegressionFit* fit_out = nullptr) {
    spec.validate();
    if (!spec.penalized() && window.rows() <= window.cols())
        throw SolverError(SolverStatus::insufficient_sample,
                          "insufficient sample for unpenalized fit (T=" + std::to_string(window.rows()) +
                              ", n=" + std::to_string(window.cols()) + ")");
    const Eigen::Index k = resolve_numeraire(spec, window);
    const DesignProblem problem = strategy_problem(spec, window, k, lambda);
    RegressionFit f = fit(problem);
    WeightVector w = recover_weights(f, k, window.cols(), spec.threshold);
    w.lambda = problem.lambda;
    if (spec.penalized()) w = threshold_positions(std::move(w), spec.threshold);
    if (fit_out) *fit_out = std::move(f);
    return w;
}

// ============================================================================
// Penalty resolution
// ============================================================================

/// Pivotal lambda* for a quantile strategy on this window: numeraire by the
/// strategy's rule, deviation design, simulated Lambda, then the closed form.
inline LambdaChoice pivotal_lambda(const StrategySpec& spec, const WindowRef& window, unsigned threads = 1) {
    if (!spec.theta) throw ConfigError("pivotal lambda needs a quantile level");
    LambdaRule rule = spec.lambda_rule.value_or(LambdaRule::pivotal());
    const Eigen::Index k = resolve_numeraire(spec, window);
    const DesignProblem design = deviation_design(window, k);
    std::vector<double> levels = rule.theta_set.empty() ? std::vector<double>{*spec.theta} : rule.theta_set;
    const auto samples = simulate_pivot(design.covariates, levels, rule.n_sims, rule.seed, threads);
    return optimal_lambda(samples, *spec.theta, window.rows(), rule.confidence);
}

struct LassoCalibration {
    double lambda = 0.0;
    Eigen::Index active = 0;
    bool within_tolerance = false;  ///< |active - target| <= 2
    bool non_monotone = false;      ///< active count was not monotone along the search
    int evaluations = 0;
};

/// A penalty large enough to zero every covariate coefficient on this window:
/// 2 max_j |x_j'y| (centered) for the lasso, max_j sum_t |x_tj| for PQR.
inline double zeroing_lambda(const StrategySpec& spec, const WindowRef& window) {
    const Eigen::Index k = resolve_numeraire(spec, window);
    const DesignProblem p = deviation_design(window, k);
    if (spec.quantile()) return p.covariates.cwiseAbs().colwise().sum().maxCoeff();
    const Eigen::MatrixXd xc = p.covariates.rowwise() - p.covariates.colwise().mean();
    const Eigen::VectorXd yc = p.response.array() - p.response.mean();
    return 2.0 * (xc.transpose() * yc).cwiseAbs().maxCoeff();
}

/// Bisection in log(lambda) for a penalized allocation whose thresholded
/// active count is within 2 of `target_active`. Works for LASSO and PQR specs;
/// bounds default to [1e-8, 1.01] times the zeroing penalty of the window.
inline LassoCalibration calibrate_active_count(const StrategySpec& spec, const WindowRef& window,
                                               Eigen::Index target_active, std::optional<double> lower = {},
                                               std::optional<double> upper = {}, int max_steps = 60) {
    if (!spec.penalized()) throw ConfigError("calibrate_active_count: strategy is not penalized");
    if (target_active < 1 || target_active > window.cols())
        throw ConfigError("calibrate_active_count: target_active must lie in [1, n]");
    StrategySpec probe = spec;
    probe.lambda_rule = LambdaRule::fixed(0.0);

    const double zeroing = std::max(zeroing_lambda(probe, window), 1e-12);
    double lo = lower.value_or(1e-8 * zeroing);
    double hi = upper.value_or(1.01 * zeroing);
    if (!(lo > 0.0 && hi > lo)) throw ConfigError("calibrate_active_count: need 0 < lower < upper");

    LassoCalibration best;
    Eigen::Index best_gap = std::numeric_limits<Eigen::Index>::max();
    auto active_at = [&](double lambda) {
        const auto w = estimate_weights_with_lambda(probe, window, lambda);
        ++best.evaluations;
        const Eigen::Index gap = std::abs(w.active_count - target_active);
        if (gap < best_gap || (gap == best_gap && lambda > best.lambda)) {
            best_gap = gap;
            best.lambda = lambda;
            best.active = w.active_count;
        }
        return w.active_count;
    };

    Eigen::Index count_lo = active_at(lo);
    Eigen::Index count_hi = active_at(hi);
    if (count_lo < count_hi) best.non_monotone = true;
    for (int step = 0; step < max_steps && best_gap > 2; ++step) {
        const double mid = std::sqrt(lo * hi);
        const Eigen::Index c = active_at(mid);
        if (c > count_lo || c < count_hi) best.non_monotone = true;
        if (c > target_active) {
            lo = mid;
            count_lo = c;
        } else if (c < target_active) {
            hi = mid;
            count_hi = c;
        } else {
            break;
        }
        if (hi / lo < 1.0 + 1e-12) break;
    }
    best.within_tolerance = best_gap <= 2;
    return best;
}

inline LassoCalibration calibrate_lasso_lambda(const StrategySpec& spec, const WindowRef& window,
                                               Eigen::Index target_active, std::optional<double> lower = {},
                                               std::optional<double> upper = {}) {
    StrategySpec lasso = spec;
    lasso.estimator = Estimator::lasso;
    lasso.theta.reset();
    lasso.lambda_rule = LambdaRule::fixed(0.0);
    return calibrate_active_count(lasso, window, target_active, lower, upper);
}

/// Penalty for `spec` on `window` according to its lambda rule (0 if unpenalized).
inline double resolve_lambda(const StrategySpec& spec, const WindowRef& window, unsigned threads = 1) {
    if (!spec.penalized()) return 0.0;
    const LambdaRule& rule = *spec.lambda_rule;
    switch (rule.method) {
        case LambdaRule::Method::fixed: return rule.fixed_value;
        case LambdaRule::Method::pivotal_simulation: return pivotal_lambda(spec, window, threads).lambda_star;
        case LambdaRule::Method::match_active_count:
            return calibrate_active_count(spec, window, rule.target_active).lambda;
    }
    return 0.0;
}

/// Full pipeline: numeraire, design, penalty, fit, recovery, thresholding.
inline WeightVector estimate_weights(const StrategySpec& spec, const WindowRef& window, RegressionFit* fit_out = nullptr) {
    spec.validate();
    return estimate_weights_with_lambda(spec, window, resolve_lambda(spec, window), fit_out);
}

}  // namespace qrport
