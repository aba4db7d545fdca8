#pragma once

// Performance statistics for portfolio return series (percent units) and
// weight paths. Every tail estimator is built on the same lower empirical
// quantile, so results are invariant to the ordering of observations.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qrport/error.hpp"

namespace qrport {

using Series = Eigen::VectorXd;
using SeriesRef = Eigen::Ref<const Eigen::VectorXd>;

namespace detail {

inline void require_nonempty(const SeriesRef& r, const char* who) {
    if (r.size() == 0) throw DataError(std::string(who) + ": empty return series");
}

inline void require_level(double p, const char* who) {
    if (!(p > 0.0 && p < 1.0)) throw DataError(std::string(who) + ": level must lie in (0,1)");
}

inline std::vector<double> sorted_copy(const SeriesRef& r) {
    std::vector<double> v(r.data(), r.data() + r.size());
    std::sort(v.begin(), v.end());
    return v;
}

}  // namespace detail

/// Rank of the lower empirical p-quantile: ceil(p*T), clamped to [1, T].
/// A relative guard absorbs representation error in p*T (0.1*30 and the like).
inline Eigen::Index quantile_rank(double p, Eigen::Index count) {
    const double scaled = p * static_cast<double>(count);
    auto k = static_cast<Eigen::Index>(std::ceil(scaled - 1e-9 * std::max(1.0, scaled)));
    return std::clamp<Eigen::Index>(k, 1, count);
}

/// Lower (type-1) empirical quantile: the ceil(p*T)-th order statistic.
inline double empirical_quantile(const SeriesRef& r, double p) {
    detail::require_nonempty(r, "empirical_quantile");
    detail::require_level(p, "empirical_quantile");
    std::vector<double> v(r.data(), r.data() + r.size());
    const auto k = quantile_rank(p, r.size());
    std::nth_element(v.begin(), v.begin() + (k - 1), v.end());
    return v[static_cast<std::size_t>(k - 1)];
}

/// Negative mean of the returns at or below the psi-quantile.
inline double psi1_hat(const SeriesRef& r, double psi) {
    const double q = empirical_quantile(r, psi);
    double sum = 0.0;
    Eigen::Index count = 0;
    for (Eigen::Index t = 0; t < r.size(); ++t) {
        if (r[t] <= q) {
            sum += r[t];
            ++count;
        }
    }
    return -sum / static_cast<double>(count);
}

/// alpha-risk: the left-tail version of psi1_hat, sharing its code path.
inline double alpha_risk_hat(const SeriesRef& r, double alpha) { return psi1_hat(r, alpha); }

/// Value-at-Risk reported as the alpha-quantile itself (negative in the left tail).
inline double var_hat(const SeriesRef& r, double alpha) { return empirical_quantile(r, alpha); }

/// Capped positive mass (0 <= r <= Q_psi) over the absolute negative mass.
/// Throws when there is no negative return; the ratio is undefined then.
inline double psi2_hat(const SeriesRef& r, double psi) {
    const double q = empirical_quantile(r, psi);
    double numerator = 0.0;
    double negative = 0.0;
    for (Eigen::Index t = 0; t < r.size(); ++t) {
        const double x = r[t];
        if (x < 0.0) negative += x;
        if (x >= 0.0 && x <= q) numerator += x;
    }
    if (negative == 0.0) throw DataError("psi2_hat: undefined ratio (no negative returns)");
    return numerator / std::abs(negative);
}

inline double mean_of(const SeriesRef& r) {
    detail::require_nonempty(r, "mean");
    return r.mean();
}

/// Sample standard deviation with denominator T-1 (0 for a single observation).
inline double std_dev(const SeriesRef& r) {
    detail::require_nonempty(r, "std_dev");
    if (r.size() < 2) return 0.0;
    const double m = r.mean();
    return std::sqrt((r.array() - m).square().sum() / static_cast<double>(r.size() - 1));
}

inline double mad_hat(const SeriesRef& r) {
    detail::require_nonempty(r, "mad_hat");
    const double m = r.mean();
    return (r.array() - m).abs().mean();
}

/// Mean over standard deviation; the risk-free rate is taken as zero.
inline double sharpe_hat(const SeriesRef& r) {
    const double sd = std_dev(r);
    if (!(sd > 0.0)) throw DataError("sharpe_hat: degenerate series (zero standard deviation)");
    return r.mean() / sd;
}

inline double omega_hat(const SeriesRef& r) {
    detail::require_nonempty(r, "omega_hat");
    const double gains = r.array().max(0.0).sum();
    const double losses = (-r.array()).max(0.0).sum();
    if (losses == 0.0) throw DataError("omega_hat: undefined ratio (no negative returns)");
    return gains / losses;
}

/// Modified Rachev ratio: left-tail loss (alpha-risk) over the mean of the
/// returns strictly beyond the psi-quantile.
inline double rachev_hat(const SeriesRef& r, double alpha, double psi) {
    const double left = alpha_risk_hat(r, alpha);
    const double q = empirical_quantile(r, psi);
    double sum = 0.0;
    Eigen::Index count = 0;
    for (Eigen::Index t = 0; t < r.size(); ++t) {
        if (r[t] > q) {
            sum += r[t];
            ++count;
        }
    }
    if (count == 0) throw DataError("rachev_hat: undefined ratio (empty right tail)");
    const double right = sum / static_cast<double>(count);
    if (right == 0.0) throw DataError("rachev_hat: undefined ratio (zero right-tail mean)");
    return left / right;
}

/// Average absolute weight change. Rows of `weights` are consecutive
/// rebalance dates; the sum of changes is divided by `periods`, which
/// defaults to the number of rebalance dates.
inline double turnover(const Eigen::Ref<const Eigen::MatrixXd>& weights, Eigen::Index periods = 0) {
    if (weights.rows() < 2) throw DataError("turnover: need at least two rebalance dates");
    if (periods <= 0) periods = weights.rows();
    double total = 0.0;
    for (Eigen::Index t = 1; t < weights.rows(); ++t)
        total += (weights.row(t) - weights.row(t - 1)).cwiseAbs().sum();
    return total / static_cast<double>(periods);
}

/// W_0 = initial, W_t = W_{t-1} (1 + r_t / 100). Length T + 1.
inline Series wealth_path(const SeriesRef& r, double initial = 100.0) {
    Series w(r.size() + 1);
    w[0] = initial;
    for (Eigen::Index t = 0; t < r.size(); ++t) w[t + 1] = w[t] * (1.0 + r[t] / 100.0);
    return w;
}

inline double final_wealth(const SeriesRef& r, double initial = 100.0) {
    double w = initial;
    for (Eigen::Index t = 0; t < r.size(); ++t) w *= 1.0 + r[t] / 100.0;
    return w;
}

// ============================================================================
// Report
// ============================================================================

struct IndicatorLevels {
    double alpha = 0.1;
    double psi = 0.9;
};

/// Undefined ratios are stored as NaN, except psi2 and omega which become
/// +inf when the series has no losses.
struct IndicatorReport {
    double mean = 0.0;
    double std_dev = 0.0;
    double mad = 0.0;
    double var_alpha = 0.0;
    double alpha_risk = 0.0;
    double psi1 = 0.0;
    double psi2 = 0.0;
    double sharpe = 0.0;
    double omega = 0.0;
    double rachev = 0.0;
    double turnover = std::numeric_limits<double>::quiet_NaN();
    double final_wealth = 0.0;
    IndicatorLevels levels;
};

/// Serialized field names, in column order.
inline const std::vector<std::string>& indicator_field_names() {
    static const std::vector<std::string> names = {"mean",   "std",   "mad",    "var10",    "alpha_risk10", "psi1_90",
                                                   "psi2_90", "sharpe", "omega", "rachev", "turnover",     "final_wealth"};
    return names;
}

inline std::vector<double> indicator_values(const IndicatorReport& rep) {
    return {rep.mean,   rep.std_dev, rep.mad,   rep.var_alpha, rep.alpha_risk, rep.psi1,
            rep.psi2,   rep.sharpe,  rep.omega, rep.rachev,    rep.turnover,   rep.final_wealth};
}

inline IndicatorReport compute_report(const SeriesRef& r, IndicatorLevels levels = {}, double initial_wealth = 100.0) {
    detail::require_nonempty(r, "compute_report");
    detail::require_level(levels.alpha, "compute_report");
    detail::require_level(levels.psi, "compute_report");
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    constexpr double inf = std::numeric_limits<double>::infinity();

    IndicatorReport rep;
    rep.levels = levels;
    rep.mean = r.mean();
    rep.std_dev = std_dev(r);
    rep.mad = mad_hat(r);
    rep.var_alpha = var_hat(r, levels.alpha);
    rep.alpha_risk = alpha_risk_hat(r, levels.alpha);
    rep.psi1 = psi1_hat(r, levels.psi);
    const bool has_loss = (r.array() < 0.0).any();
    rep.psi2 = has_loss ? psi2_hat(r, levels.psi) : inf;
    rep.omega = has_loss ? omega_hat(r) : inf;
    rep.sharpe = rep.std_dev > 0.0 ? rep.mean / rep.std_dev : nan;
    try {
        rep.rachev = rachev_hat(r, levels.alpha, levels.psi);
    } catch (const DataError&) {
        rep.rachev = nan;
    }
    rep.final_wealth = final_wealth(r, initial_wealth);
    return rep;
}

}  // namespace qrport
