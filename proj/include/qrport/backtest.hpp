#pragma once

// Rolling-window protocol. With 0-based rows, window i covers rows
// [s_i, s_i + ws) with s_i = i * stride, and its weights are applied to the
// following rows until the next rebalance. Every row from ws to T-1 gets
// exactly one out-of-sample return.

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "qrport/allocation.hpp"
#include "qrport/error.hpp"
#include "qrport/indicators.hpp"
#include "qrport/market_data.hpp"

namespace qrport {

struct WindowPlan {
    Eigen::Index periods = 0;  ///< T
    Eigen::Index ws = 0;
    Eigen::Index stride = 1;

    Eigen::Index oos_count() const { return periods - ws; }
    Eigen::Index window_count() const { return (oos_count() + stride - 1) / stride; }
    Eigen::Index window_start(Eigen::Index i) const { return i * stride; }
    /// Row index of the last in-sample observation of window i.
    Eigen::Index window_end(Eigen::Index i) const { return window_start(i) + ws - 1; }
};

inline WindowPlan make_windows(Eigen::Index periods, Eigen::Index ws, Eigen::Index stride = 1) {
    if (ws < 2) throw ConfigError("window size must be >= 2");
    if (ws >= periods)
        throw ConfigError("window size " + std::to_string(ws) + " must be smaller than the sample length " +
                          std::to_string(periods));
    if (stride < 1) throw ConfigError("stride must be >= 1");
    return WindowPlan{periods, ws, stride};
}

struct BacktestOptions {
    Eigen::Index stride = 1;
    bool fix_numeraire = false;  ///< choose the numeraire on the first window and keep it
    IndicatorLevels levels;
    unsigned threads = 1;  ///< for the pivotal simulation
};

struct BacktestResult {
    std::string strategy;
    Eigen::Index ws = 0;
    std::vector<std::string> assets;
    double lambda = 0.0;  ///< penalty used when held fixed across windows

    // one entry per rebalance window
    std::vector<Date> rebalance_dates;  ///< last in-sample date of each window
    Eigen::MatrixXd weights;            ///< windows x n
    std::vector<Eigen::Index> numeraire;
    std::vector<Eigen::Index> active_count;
    std::vector<Eigen::Index> short_count;
    std::vector<double> window_lambda;
    std::vector<IndicatorReport> in_sample;

    // one entry per out-of-sample date
    std::vector<Date> oos_dates;
    Series oos_returns;
    Series intercept_path;  ///< xi of the weights in force
    Series residual_path;   ///< r_k - xi - sum_j w_j r*_j at the out-of-sample date
    std::vector<Eigen::Index> oos_window;  ///< which rebalance the date belongs to
};

namespace detail {

[[noreturn]] inline void rethrow_tagged(const Error& e, const std::string& tag) {
    const std::string msg = tag + ": " + e.what();
    switch (e.kind()) {
        case ErrorKind::config: throw ConfigError(msg);
        case ErrorKind::data: throw DataError(msg);
        case ErrorKind::solver: {
            const auto* s = dynamic_cast<const SolverError*>(&e);
            throw SolverError(s ? s->status() : SolverStatus::not_converged, msg);
        }
    }
    throw DataError(msg);
}

}  // namespace detail

/// Penalty held over all windows: resolved once on the full sample
/// (T = full length) unless the rule asks for per-window recomputation.
inline std::optional<double> full_sample_lambda(const StrategySpec& spec, const ReturnPanel& panel, unsigned threads = 1) {
    if (!spec.penalized()) return 0.0;
    if (spec.lambda_rule->per_window) return std::nullopt;
    return resolve_lambda(spec, panel.values(), threads);
}

inline BacktestResult run_backtest(const StrategySpec& spec, const ReturnPanel& panel, const WindowPlan& plan,
                                   const BacktestOptions& opts = {}) {
    spec.validate();
    if (plan.periods != panel.periods()) throw ConfigError("window plan does not match the panel length");
    const Eigen::MatrixXd& r = panel.values();
    const Eigen::Index n = panel.assets_count();

    BacktestResult res;
    res.strategy = spec.name();
    res.ws = plan.ws;
    res.assets = panel.assets();

    std::optional<double> held;
    try {
        held = full_sample_lambda(spec, panel, opts.threads);
    } catch (const Error& e) {
        detail::rethrow_tagged(e, res.strategy + " full-sample penalty");
    }
    res.lambda = held.value_or(std::numeric_limits<double>::quiet_NaN());

    const Eigen::Index windows = plan.window_count();
    const Eigen::Index oos = plan.oos_count();
    res.weights.resize(windows, n);
    res.oos_returns.resize(oos);
    res.intercept_path.resize(oos);
    res.residual_path.resize(oos);

    StrategySpec window_spec = spec;
    for (Eigen::Index i = 0; i < windows; ++i) {
        const Eigen::Index start = plan.window_start(i);
        const Date end_date = panel.dates()[static_cast<std::size_t>(plan.window_end(i))];
        const auto window = r.middleRows(start, plan.ws);

        WeightVector w;
        try {
            const double lambda = held ? *held : resolve_lambda(window_spec, window, opts.threads);
            w = estimate_weights_with_lambda(window_spec, window, lambda);
        } catch (const Error& e) {
            detail::rethrow_tagged(e, res.strategy + " window ending " + end_date.iso());
        }
        if (opts.fix_numeraire && i == 0) window_spec.numeraire = NumeraireRule::fixed(w.numeraire_index);

        res.rebalance_dates.push_back(end_date);
        res.weights.row(i) = w.weights.transpose();
        res.numeraire.push_back(w.numeraire_index);
        res.active_count.push_back(w.active_count);
        res.short_count.push_back(w.short_count);
        res.window_lambda.push_back(w.lambda);
        IndicatorReport rep = compute_report(window * w.weights, opts.levels);
        res.in_sample.push_back(rep);

        const Eigen::Index k = w.numeraire_index;
        for (Eigen::Index d = 0; d < plan.stride; ++d) {
            const Eigen::Index row = start + plan.ws + d;
            if (row >= plan.periods) break;
            const Eigen::Index o = row - plan.ws;
            res.oos_dates.push_back(panel.dates()[static_cast<std::size_t>(row)]);
            res.oos_window.push_back(i);
            res.oos_returns[o] = r.row(row).dot(w.weights);
            double fitted = w.intercept;
            for (Eigen::Index j = 0; j < n; ++j)
                if (j != k) fitted += w.weights[j] * (r(row, k) - r(row, j));
            res.intercept_path[o] = w.intercept;
            res.residual_path[o] = r(row, k) - fitted;
        }
    }
    return res;
}

// ============================================================================
// Summaries
// ============================================================================

struct PerformanceSummary {
    IndicatorReport report;
    double mean_active = 0.0;
    double mean_short = 0.0;
    Eigen::Index observations = 0;
};

/// Out-of-sample indicators over oos rows [begin, begin + count). Turnover is
/// the sum of weight changes between rebalances inside the range divided by
/// the number of out-of-sample dates in it.
inline PerformanceSummary summarize_range(const BacktestResult& res, Eigen::Index begin, Eigen::Index count,
                                          IndicatorLevels levels = {}, double initial_wealth = 100.0) {
    if (count <= 0) throw DataError("empty out-of-sample range");
    if (begin < 0 || begin + count > res.oos_returns.size()) throw DataError("out-of-sample range out of bounds");
    PerformanceSummary s;
    s.observations = count;
    s.report = compute_report(res.oos_returns.segment(begin, count), levels, initial_wealth);

    const Eigen::Index first = res.oos_window[static_cast<std::size_t>(begin)];
    const Eigen::Index last = res.oos_window[static_cast<std::size_t>(begin + count - 1)];
    double total = 0.0;
    for (Eigen::Index i = first + 1; i <= last; ++i) total += (res.weights.row(i) - res.weights.row(i - 1)).cwiseAbs().sum();
    s.report.turnover = last > first ? total / static_cast<double>(count) : 0.0;
    for (Eigen::Index i = first; i <= last; ++i) {
        s.mean_active += static_cast<double>(res.active_count[static_cast<std::size_t>(i)]);
        s.mean_short += static_cast<double>(res.short_count[static_cast<std::size_t>(i)]);
    }
    const auto windows = static_cast<double>(last - first + 1);
    s.mean_active /= windows;
    s.mean_short /= windows;
    return s;
}

inline PerformanceSummary summarize(const BacktestResult& res, IndicatorLevels levels = {}, double initial_wealth = 100.0) {
    return summarize_range(res, 0, res.oos_returns.size(), levels, initial_wealth);
}

/// First part: out-of-sample dates up to and including `split`; second part: after it.
inline std::pair<PerformanceSummary, PerformanceSummary> split_subperiods(const BacktestResult& res, const Date& split,
                                                                          IndicatorLevels levels = {},
                                                                          double initial_wealth = 100.0) {
    Eigen::Index cut = 0;
    while (cut < static_cast<Eigen::Index>(res.oos_dates.size()) && !(split < res.oos_dates[static_cast<std::size_t>(cut)]))
        ++cut;
    const Eigen::Index total = res.oos_returns.size();
    if (cut == 0) throw DataError("split date " + split.iso() + " leaves the first sub-period empty");
    if (cut == total) throw DataError("split date " + split.iso() + " leaves the second sub-period empty");
    return {summarize_range(res, 0, cut, levels, initial_wealth), summarize_range(res, cut, total - cut, levels, initial_wealth)};
}

struct DecompositionStats {
    double intercept_mean = 0.0;
    double intercept_std = 0.0;
    double residual_mean = 0.0;
    double residual_std = 0.0;
};

/// Mean and standard deviation of the intercepts (one per rebalance window)
/// and of the out-of-sample residuals.
inline DecompositionStats decomposition_stats(const BacktestResult& res) {
    if (res.residual_path.size() == 0) throw DataError("decomposition_stats: empty backtest");
    Series xi(static_cast<Eigen::Index>(res.rebalance_dates.size()));
    for (Eigen::Index o = 0; o < res.intercept_path.size(); ++o)
        xi[res.oos_window[static_cast<std::size_t>(o)]] = res.intercept_path[o];
    DecompositionStats d;
    d.intercept_mean = xi.mean();
    d.intercept_std = std_dev(xi);
    d.residual_mean = res.residual_path.mean();
    d.residual_std = std_dev(res.residual_path);
    return d;
}

}  // namespace qrport
