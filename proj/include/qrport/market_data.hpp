#pragma once

// Return panels: calendar dates, CSV ingestion (returns or prices) and the
// per-asset descriptive battery.

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <Eigen/Dense>

#include "qrport/error.hpp"
#include "qrport/indicators.hpp"

namespace qrport {

// ============================================================================
// Dates
// ============================================================================

class Date {
public:
    Date() = default;
    explicit Date(std::chrono::sys_days days) : days_(days) {}

    static Date from_ymd(int y, unsigned m, unsigned d) {
        const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
        if (!ymd.ok()) throw DataError("invalid calendar date");
        return Date(std::chrono::sys_days{ymd});
    }

    /// Strict ISO-8601 calendar date, YYYY-MM-DD.
    static Date parse(std::string_view text) {
        auto bad = [&] { return DataError("invalid ISO-8601 date '" + std::string(text) + "'"); };
        if (text.size() != 10 || text[4] != '-' || text[7] != '-') throw bad();
        int y = 0;
        unsigned m = 0, d = 0;
        auto num = [&](std::size_t pos, std::size_t len, auto& out) {
            auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + pos + len, out);
            if (ec != std::errc{} || ptr != text.data() + pos + len) throw bad();
        };
        num(0, 4, y);
        num(5, 2, m);
        num(8, 2, d);
        const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
        if (!ymd.ok()) throw bad();
        return Date(std::chrono::sys_days{ymd});
    }

    std::string iso() const {
        const std::chrono::year_month_day ymd{days_};
        char buf[16];
        std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                      static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
        return buf;
    }

    std::chrono::sys_days days() const { return days_; }
    Date plus_days(int n) const { return Date(days_ + std::chrono::days{n}); }

    friend auto operator<=>(const Date&, const Date&) = default;

private:
    std::chrono::sys_days days_{};
};

// ============================================================================
// ReturnPanel
// ============================================================================

/// T x n simple returns in percent (1.25 means 1.25%), dates ascending.
class ReturnPanel {
public:
    ReturnPanel(std::vector<Date> dates, std::vector<std::string> assets, Eigen::MatrixXd values)
        : dates_(std::move(dates)), assets_(std::move(assets)), values_(std::move(values)) {
        validate();
    }

    Eigen::Index periods() const { return values_.rows(); }
    Eigen::Index assets_count() const { return values_.cols(); }
    const std::vector<Date>& dates() const { return dates_; }
    const std::vector<std::string>& assets() const { return assets_; }
    const Eigen::MatrixXd& values() const { return values_; }

    /// Rows [begin, begin + count) as a new panel.
    ReturnPanel slice(Eigen::Index begin, Eigen::Index count) const {
        if (begin < 0 || count < 2 || begin + count > periods()) throw DataError("panel slice out of range");
        std::vector<Date> d(dates_.begin() + begin, dates_.begin() + begin + count);
        return ReturnPanel(std::move(d), assets_, values_.middleRows(begin, count));
    }

    Eigen::Index asset_index(const std::string& id) const {
        for (std::size_t j = 0; j < assets_.size(); ++j)
            if (assets_[j] == id) return static_cast<Eigen::Index>(j);
        throw DataError("unknown asset '" + id + "'");
    }

private:
    void validate() const {
        if (values_.cols() < 2) throw DataError("panel needs at least 2 assets");
        if (values_.rows() < 2) throw DataError("panel needs at least 2 dates");
        if (static_cast<Eigen::Index>(dates_.size()) != values_.rows())
            throw DataError("date count does not match panel rows");
        if (static_cast<Eigen::Index>(assets_.size()) != values_.cols())
            throw DataError("asset count does not match panel columns");
        for (std::size_t t = 1; t < dates_.size(); ++t)
            if (!(dates_[t - 1] < dates_[t]))
                throw DataError("non-monotone dates at row " + std::to_string(t + 1) + " (" + dates_[t].iso() + ")");
        if (!values_.allFinite()) throw DataError("panel contains non-finite values");
    }

    std::vector<Date> dates_;
    std::vector<std::string> assets_;
    Eigen::MatrixXd values_;
};

/// r_t = 100 (p_t / p_{t-1} - 1), column by column. Output has one row fewer.
inline Eigen::MatrixXd prices_to_returns(const Eigen::Ref<const Eigen::MatrixXd>& prices) {
    if (prices.rows() < 2) throw DataError("need at least two price rows");
    if ((prices.array() <= 0.0).any()) throw DataError("prices must be strictly positive");
    const Eigen::Index t = prices.rows() - 1;
    return 100.0 * (prices.bottomRows(t).array() / prices.topRows(t).array() - 1.0);
}

// ============================================================================
// CSV
// ============================================================================

enum class PanelFormat { returns_csv, prices_csv };

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
    return out;
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline bool parse_double(std::string_view s, double& out) {
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    return ec == std::errc{} && ptr == s.data() + s.size();
}

}  // namespace detail

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double x) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, ptr);
}

/// Parses "date,ASSET1,...,ASSETn" CSV text. Rows are 1-based in messages,
/// counting the header as row 1.
inline ReturnPanel parse_panel_csv(std::istream& in, PanelFormat format) {
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty CSV input");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    const auto header = detail::split_csv_line(line);
    if (header.empty() || detail::trim(header[0]) != "date") throw DataError("CSV header must start with 'date'");
    std::vector<std::string> assets;
    for (std::size_t j = 1; j < header.size(); ++j) {
        const auto name = detail::trim(header[j]);
        if (name.empty()) throw DataError("empty asset name in header column " + std::to_string(j + 1));
        assets.emplace_back(name);
    }
    const auto n = assets.size();

    std::vector<Date> dates;
    std::vector<double> flat;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (detail::trim(line).empty()) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() > n + 1)
            throw DataError("row " + std::to_string(row) + ": " + std::to_string(cells.size()) + " cells, expected " +
                            std::to_string(n + 1));
        dates.push_back(Date::parse(detail::trim(cells[0])));
        for (std::size_t j = 0; j < n; ++j) {
            const std::string_view cell = j + 1 < cells.size() ? detail::trim(cells[j + 1]) : std::string_view{};
            double v = 0.0;
            if (cell.empty())
                throw DataError("missing value at row " + std::to_string(row) + ", column " + assets[j]);
            if (!detail::parse_double(cell, v) || !std::isfinite(v))
                throw DataError("unparseable value '" + std::string(cell) + "' at row " + std::to_string(row) +
                                ", column " + assets[j]);
            flat.push_back(v);
        }
    }

    const auto rows = static_cast<Eigen::Index>(dates.size());
    Eigen::MatrixXd values(rows, static_cast<Eigen::Index>(n));
    for (Eigen::Index t = 0; t < rows; ++t)
        for (std::size_t j = 0; j < n; ++j) values(t, static_cast<Eigen::Index>(j)) = flat[t * n + j];

    for (std::size_t t = 1; t < dates.size(); ++t)
        if (!(dates[t - 1] < dates[t]))
            throw DataError("non-monotone dates at row " + std::to_string(t + 2) + " (" + dates[t].iso() + ")");

    if (format == PanelFormat::prices_csv) {
        if (rows < 3) throw DataError("prices-csv needs at least 3 rows to yield 2 returns");
        dates.erase(dates.begin());
        return ReturnPanel(std::move(dates), std::move(assets), prices_to_returns(values));
    }
    return ReturnPanel(std::move(dates), std::move(assets), std::move(values));
}

inline ReturnPanel load_returns(const std::string& path, PanelFormat format = PanelFormat::returns_csv) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path + "'");
    return parse_panel_csv(in, format);
}

inline void write_panel_csv(std::ostream& out, const ReturnPanel& panel) {
    out << "date";
    for (const auto& a : panel.assets()) out << ',' << a;
    out << '\n';
    for (Eigen::Index t = 0; t < panel.periods(); ++t) {
        out << panel.dates()[static_cast<std::size_t>(t)].iso();
        for (Eigen::Index j = 0; j < panel.assets_count(); ++j) out << ',' << format_double(panel.values()(t, j));
        out << '\n';
    }
}

inline void save_returns(const std::string& path, const ReturnPanel& panel) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path + "'");
    write_panel_csv(out, panel);
}

// ============================================================================
// Descriptive statistics
// ============================================================================

struct AssetStats {
    std::string asset;
    double mean = 0.0;
    double std_dev = 0.0;
    double kurtosis = 0.0;  ///< non-excess, normal = 3; NaN for a constant series
    double skewness = 0.0;  ///< NaN for a constant series
    double q10 = 0.0;
    double final_wealth = 0.0;
};

inline AssetStats describe_series(const SeriesRef& r, double initial_wealth = 100.0) {
    AssetStats s;
    s.mean = r.mean();
    s.std_dev = std_dev(r);
    const Eigen::ArrayXd dev = r.array() - s.mean;
    const double m2 = dev.square().mean();
    if (m2 > 0.0) {
        s.skewness = dev.cube().mean() / std::pow(m2, 1.5);
        s.kurtosis = dev.square().square().mean() / (m2 * m2);
    } else {
        s.skewness = s.kurtosis = std::numeric_limits<double>::quiet_NaN();
    }
    s.q10 = empirical_quantile(r, 0.1);
    s.final_wealth = final_wealth(r, initial_wealth);
    return s;
}

inline std::vector<AssetStats> descriptive_stats(const ReturnPanel& panel, double initial_wealth = 100.0) {
    std::vector<AssetStats> out;
    out.reserve(static_cast<std::size_t>(panel.assets_count()));
    for (Eigen::Index j = 0; j < panel.assets_count(); ++j) {
        auto s = describe_series(panel.values().col(j), initial_wealth);
        s.asset = panel.assets()[static_cast<std::size_t>(j)];
        out.push_back(std::move(s));
    }
    return out;
}

inline void write_stats_csv(std::ostream& out, const std::vector<AssetStats>& stats) {
    out << "asset,mean,std,kurtosis,skewness,q10,final_wealth\n";
    for (const auto& s : stats)
        out << s.asset << ',' << format_double(s.mean) << ',' << format_double(s.std_dev) << ','
            << format_double(s.kurtosis) << ',' << format_double(s.skewness) << ',' << format_double(s.q10) << ','
            << format_double(s.final_wealth) << '\n';
}

}  // namespace qrport
