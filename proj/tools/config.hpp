#pragma once

// RunConfig: a JSON document plus command-line overrides.

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qrport/allocation.hpp"
#include "qrport/error.hpp"
#include "qrport/indicators.hpp"
#include "qrport/market_data.hpp"
#include "qrport/simulation.hpp"

namespace qrport::cli {

using json = nlohmann::json;

struct SimulationConfig {
    std::int64_t n_samples = 100;
    Eigen::Index n_periods = 300;
    Eigen::Index n_assets = 10;
    std::string family = "normal";
    double df = 5.0;
    double skew_target = 0.02;
    std::string moments = "synthetic";  ///< synthetic | estimate (from the input panel)
    double min_eigen = 0.25;
    double max_eigen = 4.0;
};

struct TuneConfig {
    std::vector<double> thetas{0.1, 0.5, 0.9};
    std::int64_t n_sims = 100000;
    double confidence = 0.9;
    std::optional<double> tau;             ///< skip the simulation and use this tau
    std::optional<Eigen::Index> periods;   ///< T for a fixed tau without input data
};

struct RunConfig {
    std::optional<std::string> input;
    PanelFormat format = PanelFormat::returns_csv;
    std::string output_dir = "qrport-out";
    std::uint64_t seed = 20160101;
    std::vector<Eigen::Index> ws;
    Eigen::Index stride = 1;
    IndicatorLevels levels;
    std::optional<Date> split_date;
    bool fix_numeraire = false;
    unsigned threads = 1;
    std::vector<StrategySpec> strategies;
    SimulationConfig simulation;
    TuneConfig tune;
};

namespace detail {

template <class T>
T get(const json& j, const std::string& key, const std::string& where) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(where + "." + key + ": missing or of the wrong type");
    }
}

template <class T>
void read_opt(const json& j, const std::string& key, const std::string& where, T& out) {
    if (j.contains(key)) out = get<T>(j, key, where);
}

inline void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || it.key() == a;
        if (!ok) throw ConfigError(where + ": unknown field '" + it.key() + "'");
    }
}

inline Estimator parse_estimator(const std::string& s, const std::string& where) {
    if (s == "ols") return Estimator::ols;
    if (s == "lasso") return Estimator::lasso;
    if (s == "qr") return Estimator::qr;
    if (s == "pqr") return Estimator::pqr;
    throw ConfigError(where + ".estimator: unknown estimator '" + s + "' (expected ols, lasso, qr or pqr)");
}

inline LambdaRule parse_lambda(const json& j, const std::string& where, std::uint64_t seed) {
    if (j.is_number()) return LambdaRule::fixed(j.get<double>());
    check_keys(j, where, {"method", "value", "n_sims", "confidence", "theta_set", "target_active", "seed", "per_window"});
    LambdaRule r;
    r.seed = seed;
    const auto method = get<std::string>(j, "method", where);
    if (method == "pivotal-simulation") r.method = LambdaRule::Method::pivotal_simulation;
    else if (method == "fixed") r.method = LambdaRule::Method::fixed;
    else if (method == "match-active-count") r.method = LambdaRule::Method::match_active_count;
    else throw ConfigError(where + ".method: unknown lambda method '" + method + "'");
    read_opt(j, "value", where, r.fixed_value);
    if (r.method == LambdaRule::Method::fixed && !j.contains("value")) throw ConfigError(where + ".value: required for a fixed lambda");
    read_opt(j, "n_sims", where, r.n_sims);
    read_opt(j, "confidence", where, r.confidence);
    read_opt(j, "theta_set", where, r.theta_set);
    read_opt(j, "target_active", where, r.target_active);
    read_opt(j, "seed", where, r.seed);
    read_opt(j, "per_window", where, r.per_window);
    try {
        r.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(where + ": " + e.what());
    }
    return r;
}

inline StrategySpec parse_strategy(const json& j, const std::string& where, std::uint64_t seed) {
    check_keys(j, where, {"estimator", "theta", "lambda", "numeraire", "psi_level", "threshold", "label"});
    StrategySpec s;
    s.estimator = parse_estimator(get<std::string>(j, "estimator", where), where);
    if (j.contains("theta")) s.theta = get<double>(j, "theta", where);
    if (j.contains("lambda")) s.lambda_rule = parse_lambda(j.at("lambda"), where + ".lambda", seed);
    else if (s.penalized()) s.lambda_rule = LambdaRule::pivotal(100000, seed);
    if (j.contains("numeraire")) {
        const json& n = j.at("numeraire");
        if (n.is_string() && n == "lowest-psi1") s.numeraire = NumeraireRule::lowest_psi1();
        else if (n.is_string() && n == "last-column") s.numeraire = NumeraireRule::last_column();
        else if (n.is_number_integer()) s.numeraire = NumeraireRule::fixed(n.get<Eigen::Index>());
        else throw ConfigError(where + ".numeraire: expected \"lowest-psi1\", \"last-column\" or a column index");
    }
    read_opt(j, "psi_level", where, s.psi_level);
    read_opt(j, "threshold", where, s.threshold);
    read_opt(j, "label", where, s.label);
    try {
        s.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(where + ": " + e.what());
    }
    return s;
}

}  // namespace detail

inline RunConfig parse_config(const json& j) {
    using namespace detail;
    RunConfig c;
    check_keys(j, "config", {"input", "format", "output_dir", "seed", "ws", "stride", "levels", "split_date",
                             "fix_numeraire", "threads", "strategies", "simulation", "tune"});
    read_opt(j, "seed", "config", c.seed);
    if (j.contains("input")) c.input = get<std::string>(j, "input", "config");
    if (j.contains("format")) {
        const auto f = get<std::string>(j, "format", "config");
        if (f == "returns-csv") c.format = PanelFormat::returns_csv;
        else if (f == "prices-csv") c.format = PanelFormat::prices_csv;
        else throw ConfigError("config.format: expected returns-csv or prices-csv");
    }
    read_opt(j, "output_dir", "config", c.output_dir);
    if (j.contains("ws")) {
        if (j.at("ws").is_number_integer()) c.ws = {j.at("ws").get<Eigen::Index>()};
        else c.ws = get<std::vector<Eigen::Index>>(j, "ws", "config");
    }
    read_opt(j, "stride", "config", c.stride);
    if (j.contains("levels")) {
        check_keys(j.at("levels"), "config.levels", {"alpha", "psi"});
        read_opt(j.at("levels"), "alpha", "config.levels", c.levels.alpha);
        read_opt(j.at("levels"), "psi", "config.levels", c.levels.psi);
    }
    if (j.contains("split_date")) {
        try {
            c.split_date = Date::parse(get<std::string>(j, "split_date", "config"));
        } catch (const DataError& e) {
            throw ConfigError(std::string("config.split_date: ") + e.what());
        }
    }
    read_opt(j, "fix_numeraire", "config", c.fix_numeraire);
    read_opt(j, "threads", "config", c.threads);
    if (j.contains("strategies")) {
        const json& list = j.at("strategies");
        if (!list.is_array()) throw ConfigError("config.strategies: expected an array");
        for (std::size_t i = 0; i < list.size(); ++i)
            c.strategies.push_back(parse_strategy(list[i], "config.strategies[" + std::to_string(i) + "]", c.seed));
    }
    if (j.contains("simulation")) {
        const json& s = j.at("simulation");
        const std::string w = "config.simulation";
        check_keys(s, w, {"n_samples", "n_periods", "n_assets", "family", "df", "skew_target", "moments", "min_eigen", "max_eigen"});
        read_opt(s, "n_samples", w, c.simulation.n_samples);
        read_opt(s, "n_periods", w, c.simulation.n_periods);
        read_opt(s, "n_assets", w, c.simulation.n_assets);
        read_opt(s, "family", w, c.simulation.family);
        read_opt(s, "df", w, c.simulation.df);
        read_opt(s, "skew_target", w, c.simulation.skew_target);
        read_opt(s, "moments", w, c.simulation.moments);
        read_opt(s, "min_eigen", w, c.simulation.min_eigen);
        read_opt(s, "max_eigen", w, c.simulation.max_eigen);
        parse_family(c.simulation.family);
        if (c.simulation.moments != "synthetic" && c.simulation.moments != "estimate")
            throw ConfigError(w + ".moments: expected synthetic or estimate");
    }
    if (j.contains("tune")) {
        const json& t = j.at("tune");
        const std::string w = "config.tune";
        check_keys(t, w, {"theta", "n_sims", "confidence", "tau", "periods"});
        if (t.contains("theta")) {
            if (t.at("theta").is_number()) c.tune.thetas = {t.at("theta").get<double>()};
            else c.tune.thetas = get<std::vector<double>>(t, "theta", w);
        }
        read_opt(t, "n_sims", w, c.tune.n_sims);
        read_opt(t, "confidence", w, c.tune.confidence);
        if (t.contains("tau")) c.tune.tau = get<double>(t, "tau", w);
        if (t.contains("periods")) c.tune.periods = get<Eigen::Index>(t, "periods", w);
    }
    return c;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    try {
        return parse_config(json::parse(in));
    } catch (const json::parse_error& e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
}

/// Checks shared by every command.
inline void validate_common(const RunConfig& c) {
    if (!(c.levels.alpha > 0.0 && c.levels.alpha < 1.0)) throw ConfigError("levels.alpha must lie in (0,1)");
    if (!(c.levels.psi > 0.0 && c.levels.psi < 1.0)) throw ConfigError("levels.psi must lie in (0,1)");
    if (c.output_dir.empty()) throw ConfigError("output_dir must not be empty");
    if (c.threads < 1) throw ConfigError("threads must be >= 1");
}

inline void validate_strategies(const RunConfig& c) {
    if (c.strategies.empty()) throw ConfigError("strategies: at least one strategy is required");
}

}  // namespace qrport::cli
