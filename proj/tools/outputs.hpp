#pragma once

// Artifact writers. Every file is written to "<path>.tmp" and renamed into place.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "qrport/backtest.hpp"
#include "qrport/error.hpp"
#include "qrport/indicators.hpp"
#include "qrport/market_data.hpp"

namespace qrport::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create directory '" + dir.string() + "': " + ec.message());
}

inline void write_atomic(const fs::path& path, const std::function<void(std::ostream&)>& body) {
    ensure_dir(path.parent_path().empty() ? fs::path(".") : path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write '" + tmp.string() + "'");
        body(out);
        out.flush();
        if (!out) throw DataError("write failed for '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw DataError("cannot rename '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

inline void write_json(const fs::path& path, const json& doc) {
    write_atomic(path, [&](std::ostream& out) { out << doc.dump(2) << '\n'; });
}

/// Non-finite values become JSON null.
inline json number(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

/// CSV cell; non-finite values are written as nan, inf or -inf.
inline std::string cell(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    return format_double(x);
}

inline std::string slugify(const std::string& name) {
    std::string out;
    for (char c : name) {
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '.') out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        else if (!out.empty() && out.back() != '-') out += '-';
    }
    while (!out.empty() && out.back() == '-') out.pop_back();
    return out.empty() ? "strategy" : out;
}

inline json report_json(const IndicatorReport& rep) {
    json j = json::object();
    const auto& names = indicator_field_names();
    const auto values = indicator_values(rep);
    for (std::size_t i = 0; i < names.size(); ++i) j[names[i]] = number(values[i]);
    return j;
}

inline json summary_json(const PerformanceSummary& s) {
    json j = report_json(s.report);
    j["mean_active"] = number(s.mean_active);
    j["mean_short"] = number(s.mean_short);
    j["observations"] = s.observations;
    return j;
}

// ============================================================================
// Backtest job files
// ============================================================================

inline void write_oos_returns(const fs::path& path, const BacktestResult& res) {
    write_atomic(path, [&](std::ostream& out) {
        out << "date,return,intercept,residual\n";
        for (std::size_t o = 0; o < res.oos_dates.size(); ++o) {
            const auto i = static_cast<Eigen::Index>(o);
            out << res.oos_dates[o].iso() << ',' << cell(res.oos_returns[i]) << ',' << cell(res.intercept_path[i]) << ','
                << cell(res.residual_path[i]) << '\n';
        }
    });
}

inline void write_weights(const fs::path& path, const BacktestResult& res) {
    write_atomic(path, [&](std::ostream& out) {
        out << "date,asset,weight\n";
        for (std::size_t i = 0; i < res.rebalance_dates.size(); ++i)
            for (std::size_t j = 0; j < res.assets.size(); ++j)
                out << res.rebalance_dates[i].iso() << ',' << res.assets[j] << ','
                    << cell(res.weights(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) << '\n';
    });
}

inline void write_weights_summary(const fs::path& path, const BacktestResult& res) {
    write_atomic(path, [&](std::ostream& out) {
        out << "date,numeraire,active,short,lambda\n";
        for (std::size_t i = 0; i < res.rebalance_dates.size(); ++i)
            out << res.rebalance_dates[i].iso() << ',' << res.assets[static_cast<std::size_t>(res.numeraire[i])] << ','
                << res.active_count[i] << ',' << res.short_count[i] << ',' << cell(res.window_lambda[i]) << '\n';
    });
}

inline void write_insample(const fs::path& path, const BacktestResult& res) {
    write_atomic(path, [&](std::ostream& out) {
        out << "date";
        for (const auto& n : indicator_field_names()) out << ',' << n;
        out << '\n';
        for (std::size_t i = 0; i < res.rebalance_dates.size(); ++i) {
            out << res.rebalance_dates[i].iso();
            for (double v : indicator_values(res.in_sample[i])) out << ',' << cell(v);
            out << '\n';
        }
    });
}

inline void write_decomposition(const fs::path& path, const DecompositionStats& d) {
    write_atomic(path, [&](std::ostream& out) {
        out << "component,mean,std\n";
        out << "intercept," << cell(d.intercept_mean) << ',' << cell(d.intercept_std) << '\n';
        out << "residual," << cell(d.residual_mean) << ',' << cell(d.residual_std) << '\n';
    });
}

// ============================================================================
// Strategy comparison table
// ============================================================================

struct SummaryRow {
    std::string strategy;
    Eigen::Index ws = 0;
    std::string period;
    PerformanceSummary summary;
};

inline const std::vector<std::string>& summary_columns() {
    static const std::vector<std::string> cols = {"strategy", "ws",      "period", "std",   "mad",          "var10",
                                                  "alpha_risk10", "psi1_90", "psi2_90", "mean", "sharpe", "final_wealth",
                                                  "turnover", "mean_active", "mean_short"};
    return cols;
}

inline std::vector<double> summary_values(const SummaryRow& r) {
    const auto& p = r.summary.report;
    return {p.std_dev, p.mad, p.var_alpha, p.alpha_risk, p.psi1,     p.psi2,
            p.mean,    p.sharpe, p.final_wealth, p.turnover, r.summary.mean_active, r.summary.mean_short};
}

inline void write_summary_csv(const fs::path& path, const std::vector<SummaryRow>& rows) {
    write_atomic(path, [&](std::ostream& out) {
        const auto& cols = summary_columns();
        for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
        out << '\n';
        for (const auto& r : rows) {
            out << r.strategy << ',' << r.ws << ',' << r.period;
            for (double v : summary_values(r)) out << ',' << cell(v);
            out << '\n';
        }
    });
}

inline std::string fixed(double x, int digits) {
    if (!std::isfinite(x)) return std::isnan(x) ? "nan" : (x > 0 ? "inf" : "-inf");
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(digits);
    s << x;
    return s.str();
}

inline void print_summary_table(std::ostream& out, const std::vector<SummaryRow>& rows) {
    const std::vector<std::string> head = {"Strategy", "ws", "Period", "Std", "MAD", "VaR", "a-risk", "Psi1", "Psi2",
                                           "Mean", "Sharpe", "Wealth", "Turnover"};
    std::vector<std::vector<std::string>> table{head};
    for (const auto& r : rows) {
        std::vector<std::string> line = {r.strategy, std::to_string(r.ws), r.period};
        const auto v = summary_values(r);
        for (std::size_t i = 0; i < 10; ++i) line.push_back(fixed(v[i], i == 7 ? 2 : 4));
        table.push_back(std::move(line));
    }
    std::vector<std::size_t> width(head.size(), 0);
    for (const auto& line : table)
        for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
    for (const auto& line : table) {
        for (std::size_t i = 0; i < line.size(); ++i) {
            if (i) out << "  ";
            if (i < 3) out << line[i] << std::string(width[i] - line[i].size(), ' ');
            else out << std::string(width[i] - line[i].size(), ' ') << line[i];
        }
        out << '\n';
    }
}

// ============================================================================
// Plot data
// ============================================================================

struct FiveNumbers {
    double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;
};

/// Type-1 empirical quartiles; non-finite values are dropped first.
inline FiveNumbers five_numbers(std::vector<double> v) {
    v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return !std::isfinite(x); }), v.end());
    constexpr double nan = std::numeric_limits<double>::quiet_NaN();
    if (v.empty()) return {nan, nan, nan, nan, nan};
    const Eigen::Map<const Eigen::VectorXd> s(v.data(), static_cast<Eigen::Index>(v.size()));
    return {s.minCoeff(), empirical_quantile(s, 0.25), empirical_quantile(s, 0.5), empirical_quantile(s, 0.75),
            s.maxCoeff()};
}

}  // namespace qrport::cli
