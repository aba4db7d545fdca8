#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "config.hpp"
#include "outputs.hpp"
#include "qrport/backtest.hpp"
#include "qrport/penalty.hpp"
#include "qrport/simulation.hpp"

using namespace qrport;
using namespace qrport::cli;

namespace {

struct Overrides {
    std::string config;
    std::string input;
    std::vector<Eigen::Index> ws;
    std::vector<double> theta;
    std::optional<double> lambda;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string split_date;
};

void add_common_options(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config, "JSON run configuration");
    cmd->add_option("--input", o.input, "input returns CSV (report: result directory)");
    cmd->add_option("--ws", o.ws, "rolling window sizes, comma separated")->delimiter(',');
    cmd->add_option("--theta", o.theta, "quantile levels, comma separated")->delimiter(',');
    cmd->add_option("--lambda", o.lambda, "fixed penalty for LASSO/PQR strategies");
    cmd->add_option("--seed", o.seed, "random seed");
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--split-date", o.split_date, "last date of the first sub-period (YYYY-MM-DD)");
}

void log_line(const std::string& event, const std::vector<std::pair<std::string, std::string>>& fields = {}) {
    std::cerr << "qrport event=" << event;
    for (const auto& [k, v] : fields) {
        const bool quote = v.find(' ') != std::string::npos;
        std::cerr << ' ' << k << '=' << (quote ? "\"" + v + "\"" : v);
    }
    std::cerr << '\n';
}

/// QR/PQR strategies are repeated once per requested level.
std::vector<StrategySpec> expand_thetas(const std::vector<StrategySpec>& in, const std::vector<double>& thetas) {
    if (thetas.empty()) return in;
    std::vector<StrategySpec> out;
    for (const auto& s : in) {
        if (!s.quantile()) {
            out.push_back(s);
            continue;
        }
        for (double t : thetas) {
            StrategySpec e = s;
            e.theta = t;
            if (!e.label.empty() && thetas.size() > 1) e.label += "@" + format_double(t);
            out.push_back(e);
        }
    }
    return out;
}

RunConfig resolve_config(const Overrides& o) {
    RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
    if (o.seed) {
        c.seed = *o.seed;
        for (auto& s : c.strategies)
            if (s.lambda_rule) s.lambda_rule->seed = *o.seed;
    }
    if (!o.input.empty()) c.input = o.input;
    if (!o.ws.empty()) c.ws = o.ws;
    if (!o.out.empty()) c.output_dir = o.out;
    if (!o.split_date.empty()) {
        try {
            c.split_date = Date::parse(o.split_date);
        } catch (const DataError& e) {
            throw ConfigError(std::string("--split-date: ") + e.what());
        }
    }
    for (double t : o.theta)
        if (!(t > 0.0 && t < 1.0)) throw ConfigError("--theta: levels must lie in (0,1)");
    if (!o.theta.empty()) c.tune.thetas = o.theta;
    c.strategies = expand_thetas(c.strategies, o.theta);
    if (o.lambda) {
        if (!(*o.lambda >= 0.0)) throw ConfigError("--lambda: must be >= 0");
        for (auto& s : c.strategies)
            if (s.penalized()) s.lambda_rule = LambdaRule::fixed(*o.lambda);
    }
    for (const auto& s : c.strategies) s.validate();
    validate_common(c);
    return c;
}

ReturnPanel load_input(const RunConfig& c) {
    if (!c.input) throw ConfigError("input: a returns file is required (config 'input' or --input)");
    return load_returns(*c.input, c.format);
}

json strategy_json(const StrategySpec& s) {
    json j;
    j["name"] = s.name();
    j["theta"] = s.theta ? json(*s.theta) : json(nullptr);
    if (s.lambda_rule) {
        j["lambda_method"] = to_string(s.lambda_rule->method);
        j["per_window"] = s.lambda_rule->per_window;
    }
    return j;
}

// ============================================================================
// backtest
// ============================================================================

int cmd_backtest(const RunConfig& c) {
    validate_strategies(c);
    if (c.ws.empty()) throw ConfigError("ws: at least one window size is required (config 'ws' or --ws)");
    const ReturnPanel panel = load_input(c);
    const fs::path root(c.output_dir);
    log_line("load", {{"input", *c.input}, {"periods", std::to_string(panel.periods())},
                      {"assets", std::to_string(panel.assets_count())}});

    write_atomic(root / "asset_stats.csv", [&](std::ostream& out) {
        write_stats_csv(out, descriptive_stats(panel));
    });

    BacktestOptions opts;
    opts.fix_numeraire = c.fix_numeraire;
    opts.levels = c.levels;
    opts.threads = c.threads;

    std::vector<SummaryRow> rows;
    json jobs = json::array();
    std::set<std::string> used;
    for (Eigen::Index ws : c.ws) {
        const WindowPlan plan = make_windows(panel.periods(), ws, c.stride);
        for (const auto& spec : c.strategies) {
            std::string slug = slugify(spec.name()) + "-ws" + std::to_string(ws);
            for (int k = 2; used.count(slug); ++k) slug = slugify(spec.name()) + "-" + std::to_string(k) + "-ws" + std::to_string(ws);
            used.insert(slug);

            const BacktestResult res = run_backtest(spec, panel, plan, opts);
            const fs::path dir = root / "jobs" / slug;
            write_oos_returns(dir / "oos_returns.csv", res);
            write_weights(dir / "weights.csv", res);
            write_weights_summary(dir / "weights_summary.csv", res);
            write_insample(dir / "insample_distributions.csv", res);
            const DecompositionStats deco = decomposition_stats(res);
            write_decomposition(dir / "decomposition.csv", deco);

            const PerformanceSummary full = summarize(res, c.levels);
            rows.push_back({res.strategy, ws, "full", full});
            json periods;
            periods["full"] = summary_json(full);
            if (c.split_date) {
                const auto [first, second] = split_subperiods(res, *c.split_date, c.levels);
                rows.push_back({res.strategy, ws, "first", first});
                rows.push_back({res.strategy, ws, "second", second});
                periods["first"] = summary_json(first);
                periods["second"] = summary_json(second);
            }

            json job;
            job["strategy"] = strategy_json(spec);
            job["ws"] = ws;
            job["stride"] = c.stride;
            job["dir"] = "jobs/" + slug;
            job["start_date"] = res.rebalance_dates.front().iso();
            job["windows"] = res.rebalance_dates.size();
            job["lambda"] = number(res.lambda);
            job["periods"] = periods;
            job["decomposition"] = {{"intercept_mean", number(deco.intercept_mean)},
                                    {"intercept_std", number(deco.intercept_std)},
                                    {"residual_mean", number(deco.residual_mean)},
                                    {"residual_std", number(deco.residual_std)}};
            write_json(dir / "summary.json", job);
            jobs.push_back(job);
            log_line("job", {{"strategy", res.strategy}, {"ws", std::to_string(ws)},
                             {"windows", std::to_string(res.rebalance_dates.size())}, {"dir", "jobs/" + slug}});
        }
    }

    json doc;
    doc["command"] = "backtest";
    doc["input"] = *c.input;
    doc["seed"] = c.seed;
    doc["levels"] = {{"alpha", c.levels.alpha}, {"psi", c.levels.psi}};
    doc["split_date"] = c.split_date ? json(c.split_date->iso()) : json(nullptr);
    doc["jobs"] = jobs;
    write_json(root / "summary.json", doc);
    write_summary_csv(root / "summary.csv", rows);
    print_summary_table(std::cout, rows);
    log_line("done", {{"command", "backtest"}, {"out", c.output_dir}, {"jobs", std::to_string(jobs.size())}});
    return 0;
}

// ============================================================================
// simulate
// ============================================================================

int cmd_simulate(const RunConfig& c) {
    validate_strategies(c);
    const SimulationConfig& sc = c.simulation;
    MonteCarloSpec mc;
    mc.n_samples = sc.n_samples;
    mc.n_periods = sc.n_periods;
    mc.strategies = c.strategies;
    mc.levels = c.levels;
    mc.seed = c.seed;
    mc.threads = c.threads;
    mc.distribution.family = parse_family(sc.family);
    mc.distribution.df = sc.df;
    mc.distribution.skew_target = sc.skew_target;

    Moments m;
    if (sc.moments == "estimate") {
        m = estimate_moments(load_input(c));
        if (m.repaired) log_line("warning", {{"message", "estimated covariance repaired to be positive semidefinite"}});
    } else {
        if (sc.n_assets < 2) throw ConfigError("simulation.n_assets must be >= 2");
        m = synthetic_moments(sc.n_assets, c.seed, sc.min_eigen, sc.max_eigen);
    }
    mc.distribution.mean = m.mean;
    mc.distribution.covariance = m.covariance;
    mc.validate();

    const MonteCarloResult res = run_monte_carlo(mc);
    const fs::path root(c.output_dir);
    const auto& names = sample_indicator_names();

    write_atomic(root / "simulation.csv", [&](std::ostream& out) {
        out << "replication,strategy,indicator,value\n";
        for (const auto& d : res.strategies)
            for (const auto& s : d.samples) {
                const auto v = sample_indicator_values(s);
                for (std::size_t i = 0; i < names.size(); ++i)
                    out << s.replication << ',' << d.strategy << ',' << names[i] << ',' << cell(v[i]) << '\n';
            }
    });
    write_atomic(root / "simulation_medians.csv", [&](std::ostream& out) {
        out << "strategy";
        for (const auto& n : names) out << ',' << n;
        out << ",samples,failures\n";
        for (const auto& d : res.strategies) {
            out << d.strategy;
            for (double v : indicator_medians(d)) out << ',' << cell(v);
            out << ',' << d.samples.size() << ',' << d.failures << '\n';
        }
    });

    json doc;
    doc["command"] = "simulate";
    doc["seed"] = c.seed;
    doc["family"] = to_string(mc.distribution.family);
    doc["n_samples"] = mc.n_samples;
    doc["n_periods"] = mc.n_periods;
    doc["n_assets"] = mc.distribution.assets();
    doc["moments"] = sc.moments;
    json strategies = json::array();
    for (std::size_t s = 0; s < res.strategies.size(); ++s) {
        const auto& d = res.strategies[s];
        json e = strategy_json(c.strategies[s]);
        e["samples"] = d.samples.size();
        e["failures"] = d.failures;
        json med;
        const auto mv = indicator_medians(d);
        for (std::size_t i = 0; i < names.size(); ++i) med[names[i]] = number(mv[i]);
        e["medians"] = med;
        strategies.push_back(e);
        if (d.failures > 0)
            log_line("warning", {{"strategy", d.strategy}, {"failures", std::to_string(d.failures)},
                                 {"first", d.failure_messages.front()}});
    }
    doc["strategies"] = strategies;
    write_json(root / "simulation_summary.json", doc);

    std::cout << "strategy";
    for (const auto& n : names) std::cout << "  " << n;
    std::cout << "  failures\n";
    for (const auto& d : res.strategies) {
        std::cout << d.strategy;
        for (double v : indicator_medians(d)) std::cout << "  " << fixed(v, 4);
        std::cout << "  " << d.failures << '\n';
    }
    log_line("done", {{"command", "simulate"}, {"out", c.output_dir}});
    return 0;
}

// ============================================================================
// tune-lambda
// ============================================================================

int cmd_tune_lambda(const RunConfig& c) {
    const TuneConfig& t = c.tune;
    if (t.thetas.empty()) throw ConfigError("tune.theta: at least one level is required");
    for (double th : t.thetas)
        if (!(th > 0.0 && th < 1.0)) throw ConfigError("tune.theta: levels must lie in (0,1)");
    if (t.n_sims < 1) throw ConfigError("tune.n_sims must be >= 1");
    if (!(t.confidence > 0.0 && t.confidence < 1.0)) throw ConfigError("tune.confidence must lie in (0,1)");

    json records = json::array();
    if (t.tau) {
        if (!(*t.tau >= 0.0)) throw ConfigError("tune.tau must be >= 0");
        Eigen::Index periods = 0;
        if (t.periods) periods = *t.periods;
        else if (c.input) periods = load_input(c).periods();
        else throw ConfigError("tune.periods: required with a fixed tau when no input is given");
        if (periods < 1) throw ConfigError("tune.periods must be >= 1");
        for (double th : t.thetas)
            records.push_back({{"theta", th}, {"tau", *t.tau}, {"lambda_star", lambda_from_tau(*t.tau, th, periods)},
                               {"n_sims", 0}, {"seed", c.seed}, {"periods", periods}});
    } else {
        const ReturnPanel panel = load_input(c);
        for (double th : t.thetas) {
            LambdaRule rule = LambdaRule::pivotal(t.n_sims, c.seed);
            rule.confidence = t.confidence;
            const StrategySpec spec = StrategySpec::pqr(th, rule);
            const LambdaChoice ch = pivotal_lambda(spec, panel.values(), c.threads);
            records.push_back({{"theta", th}, {"tau", ch.tau}, {"lambda_star", ch.lambda_star}, {"n_sims", ch.n_sims},
                               {"seed", c.seed}, {"periods", ch.periods}});
        }
    }

    json doc;
    doc["command"] = "tune-lambda";
    doc["input"] = c.input ? json(*c.input) : json(nullptr);
    doc["confidence"] = t.confidence;
    doc["records"] = records;
    write_json(fs::path(c.output_dir) / "lambda.json", doc);
    std::cout << "theta  tau  lambda_star\n";
    for (const auto& r : records)
        std::cout << format_double(r["theta"].get<double>()) << "  " << fixed(r["tau"].get<double>(), 6) << "  "
                  << format_double(r["lambda_star"].get<double>()) << '\n';
    log_line("done", {{"command", "tune-lambda"}, {"out", c.output_dir}, {"records", std::to_string(records.size())}});
    return 0;
}

// ============================================================================
// report
// ============================================================================

std::vector<std::vector<std::string>> read_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        for (auto sv : qrport::detail::split_csv_line(line)) cells.emplace_back(sv);
        rows.push_back(std::move(cells));
    }
    if (rows.empty()) throw DataError("'" + path.string() + "' is empty");
    return rows;
}

double parse_cell(const std::string& s, const fs::path& path) {
    double v = 0.0;
    if (!qrport::detail::parse_double(s, v)) throw DataError("unparseable value '" + s + "' in '" + path.string() + "'");
    return v;
}

json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

struct BoxRow {
    std::string source;
    std::string strategy;
    std::string ws;
    std::string indicator;
    std::vector<double> values;
};

int cmd_report(const Overrides& o) {
    if (o.input.empty()) throw ConfigError("input: the result directory is required (--input)");
    const fs::path dir(o.input);
    if (!fs::is_directory(dir)) throw DataError("result directory '" + dir.string() + "' does not exist");
    const fs::path out = o.out.empty() ? dir : fs::path(o.out);
    const bool has_backtest = fs::exists(dir / "summary.json");
    const bool has_simulation = fs::exists(dir / "simulation.csv");
    if (!has_backtest && !has_simulation)
        throw DataError("'" + dir.string() + "' holds neither backtest (summary.json) nor simulation (simulation.csv) results");

    std::vector<BoxRow> boxes;
    if (has_simulation) {
        const fs::path path = dir / "simulation.csv";
        const auto rows = read_csv(path);
        std::map<std::pair<std::string, std::string>, std::size_t> index;
        for (std::size_t r = 1; r < rows.size(); ++r) {
            if (rows[r].size() != 4) throw DataError("malformed row " + std::to_string(r + 1) + " in '" + path.string() + "'");
            const auto key = std::make_pair(rows[r][1], rows[r][2]);
            auto it = index.find(key);
            if (it == index.end()) {
                it = index.emplace(key, boxes.size()).first;
                boxes.push_back({"simulation", rows[r][1], "", rows[r][2], {}});
            }
            boxes[it->second].values.push_back(parse_cell(rows[r][3], path));
        }
    }

    json wealth_jobs = json::array();
    if (has_backtest) {
        const json summary = read_json(dir / "summary.json");
        if (!summary.contains("jobs")) throw DataError("summary.json has no jobs list");
        write_atomic(out / "turnover.csv", [&](std::ostream& os) {
            os << "strategy,ws,period,turnover,mean_active,mean_short\n";
            for (const auto& job : summary["jobs"])
                for (const auto& [period, s] : job["periods"].items())
                    os << job["strategy"]["name"].get<std::string>() << ',' << job["ws"].get<Eigen::Index>() << ','
                       << period << ',' << (s["turnover"].is_null() ? "nan" : format_double(s["turnover"].get<double>()))
                       << ',' << format_double(s["mean_active"].get<double>()) << ','
                       << format_double(s["mean_short"].get<double>()) << '\n';
        });
        write_atomic(out / "wealth_paths.csv", [&](std::ostream& os) {
            os << "strategy,ws,step,date,wealth\n";
            for (const auto& job : summary["jobs"]) {
                const auto name = job["strategy"]["name"].get<std::string>();
                const auto ws = std::to_string(job["ws"].get<Eigen::Index>());
                const fs::path path = dir / job["dir"].get<std::string>() / "oos_returns.csv";
                const auto rows = read_csv(path);
                Series r(static_cast<Eigen::Index>(rows.size() - 1));
                for (std::size_t i = 1; i < rows.size(); ++i) r[static_cast<Eigen::Index>(i - 1)] = parse_cell(rows[i][1], path);
                const Series w = wealth_path(r, 100.0);
                os << name << ',' << ws << ",0," << job["start_date"].get<std::string>() << ',' << cell(w[0]) << '\n';
                for (Eigen::Index t = 1; t < w.size(); ++t)
                    os << name << ',' << ws << ',' << t << ',' << rows[static_cast<std::size_t>(t)][0] << ','
                       << cell(w[t]) << '\n';

                const fs::path ins = dir / job["dir"].get<std::string>() / "insample_distributions.csv";
                const auto irows = read_csv(ins);
                for (std::size_t col = 1; col < irows[0].size(); ++col) {
                    BoxRow b{"insample", name, ws, irows[0][col], {}};
                    for (std::size_t i = 1; i < irows.size(); ++i) b.values.push_back(parse_cell(irows[i][col], ins));
                    boxes.push_back(std::move(b));
                }
                wealth_jobs.push_back(name + " ws=" + ws);
            }
        });
    }

    write_atomic(out / "boxplot.csv", [&](std::ostream& os) {
        os << "source,strategy,ws,indicator,min,q1,median,q3,max,count\n";
        for (const auto& b : boxes) {
            const FiveNumbers f = five_numbers(b.values);
            std::size_t finite = 0;
            for (double v : b.values) finite += std::isfinite(v) ? 1 : 0;
            os << b.source << ',' << b.strategy << ',' << b.ws << ',' << b.indicator << ',' << cell(f.min) << ','
               << cell(f.q1) << ',' << cell(f.median) << ',' << cell(f.q3) << ',' << cell(f.max) << ',' << finite << '\n';
        }
    });
    std::cout << "boxplot rows: " << boxes.size() << "\nwealth paths: " << wealth_jobs.size() << '\n';
    log_line("done", {{"command", "report"}, {"out", out.string()}});
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Quantile-regression portfolio construction"};
    app.require_subcommand(1);
    Overrides o;
    CLI::App* backtest = app.add_subcommand("backtest", "rolling-window backtest of every strategy and window size");
    CLI::App* simulate = app.add_subcommand("simulate", "Monte Carlo in-sample indicator distributions");
    CLI::App* tune = app.add_subcommand("tune-lambda", "pivotal penalty calibration");
    CLI::App* report = app.add_subcommand("report", "plot data from a result directory");
    for (CLI::App* cmd : {backtest, simulate, tune, report}) add_common_options(cmd, o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (report->parsed()) return cmd_report(o);
        const RunConfig c = resolve_config(o);
        if (backtest->parsed()) return cmd_backtest(c);
        if (simulate->parsed()) return cmd_simulate(c);
        return cmd_tune_lambda(c);
    } catch (const qrport::Error& e) {
        log_line("error", {{"kind", e.kind() == ErrorKind::config ? "config" : e.kind() == ErrorKind::data ? "data" : "solver"},
                           {"message", e.what()}});
        return exit_code(e.kind());
    } catch (const nlohmann::json::exception& e) {
        log_line("error", {{"kind", "data"}, {"message", e.what()}});
        return 3;
    } catch (const std::exception& e) {
        log_line("error", {{"kind", "internal"}, {"message", e.what()}});
        return 1;
    }
}
