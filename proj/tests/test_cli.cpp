#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "qrport/indicators.hpp"
#include "qrport/market_data.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace qrport;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("qrport_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int run(const std::string& args) {
    const std::string cmd = std::string(QRPORT_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

fs::path write_panel(const fs::path& dir, Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const Eigen::MatrixXd v = oracle::gaussian_matrix(rng, rows, cols);
    std::vector<Date> dates;
    for (Eigen::Index t = 0; t < rows; ++t) dates.push_back(Date::from_ymd(2012, 1, 2).plus_days(static_cast<int>(t)));
    std::vector<std::string> names;
    for (Eigen::Index j = 0; j < cols; ++j) names.push_back("X" + std::to_string(j));
    const fs::path p = dir / "panel.csv";
    save_returns(p.string(), ReturnPanel(dates, names, v));
    return p;
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream s(line);
        std::string c;
        while (std::getline(s, c, ',')) cells.push_back(c);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        rows.push_back(cells);
    }
    return rows;
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
    return files;
}

const char* kBacktestConfig = R"({
  "ws": [20], "seed": 11,
  "strategies": [{"estimator": "ols"}, {"estimator": "qr", "theta": 0.5}]
})";

}  // namespace

TEST(CliBacktest, SmokeSchema) {
    const auto dir = scratch("smoke");
    const auto panel = write_panel(dir, 60, 5, 1);
    write_text(dir / "cfg.json", kBacktestConfig);
    ASSERT_EQ(run("backtest --config " + (dir / "cfg.json").string() + " --input " + panel.string() + " --out " +
                  (dir / "out").string()),
              0);

    const json doc = json::parse(slurp(dir / "out" / "summary.json"));
    ASSERT_EQ(doc["jobs"].size(), 2u);
    EXPECT_EQ(doc["jobs"][0]["strategy"]["name"], "OLS");
    EXPECT_EQ(doc["jobs"][1]["strategy"]["name"], "QR(0.5)");
    for (const auto& job : doc["jobs"]) {
        const json& full = job["periods"]["full"];
        for (const auto& f : indicator_field_names()) {
            ASSERT_TRUE(full.contains(f)) << f;
            EXPECT_TRUE(full[f].is_number()) << f;
        }
        EXPECT_EQ(full["observations"], 40);
        const fs::path jd = dir / "out" / job["dir"].get<std::string>();
        for (const char* file : {"oos_returns.csv", "weights.csv", "weights_summary.csv", "insample_distributions.csv",
                                 "decomposition.csv", "summary.json"})
            EXPECT_TRUE(fs::exists(jd / file)) << file;

        // the out-of-sample file re-parses with the engine's own loader
        const auto oos = load_returns((jd / "oos_returns.csv").string());
        EXPECT_EQ(oos.periods(), 40);
        EXPECT_EQ(oos.assets()[0], "return");
        const IndicatorReport rep = compute_report(oos.values().col(0));
        EXPECT_NEAR(rep.final_wealth, full["final_wealth"].get<double>(), 1e-9);
        EXPECT_NEAR(rep.std_dev, full["std"].get<double>(), 1e-12);

        // weights of each rebalance sum to one
        std::map<std::string, double> sums;
        const auto w = read_csv(jd / "weights.csv");
        for (std::size_t r = 1; r < w.size(); ++r) sums[w[r][0]] += std::stod(w[r][2]);
        EXPECT_EQ(sums.size(), 40u);
        for (const auto& [date, s] : sums) EXPECT_NEAR(s, 1.0, 1e-9) << date;
    }
    const auto table = read_csv(dir / "out" / "summary.csv");
    ASSERT_EQ(table.size(), 3u);
    EXPECT_EQ(table[0][3], "std");
    EXPECT_EQ(table[0][9], "mean");
}

TEST(CliBacktest, EmptyStrategiesRejected) {
    const auto dir = scratch("empty");
    const auto panel = write_panel(dir, 40, 3, 2);
    write_text(dir / "cfg.json", R"({"ws": [20], "strategies": []})");
    EXPECT_EQ(run("backtest --config " + (dir / "cfg.json").string() + " --input " + panel.string() + " --out " +
                  (dir / "out").string()),
              2);
    EXPECT_FALSE(fs::exists(dir / "out" / "summary.json"));
}

TEST(CliBacktest, ExitCodes) {
    const auto dir = scratch("codes");
    const auto panel = write_panel(dir, 40, 3, 3);
    write_text(dir / "cfg.json", kBacktestConfig);
    const std::string cfg = " --config " + (dir / "cfg.json").string() + " --out " + (dir / "out").string();
    EXPECT_EQ(run("backtest" + cfg + " --input " + (dir / "missing.csv").string()), 3);
    EXPECT_EQ(run("backtest" + cfg + " --input " + panel.string() + " --ws 1"), 2);
    EXPECT_EQ(run("backtest" + cfg + " --input " + panel.string() + " --theta 1.5"), 2);
    EXPECT_EQ(run("backtest" + cfg + " --input " + panel.string() + " --no-such-flag"), 2);
    write_text(dir / "bad.json", R"({"strategies": [{"estimator": "qr"}]})");
    EXPECT_EQ(run("backtest --config " + (dir / "bad.json").string() + " --input " + panel.string() + " --ws 20"), 2);
    write_text(dir / "broken.json", "{ not json");
    EXPECT_EQ(run("backtest --config " + (dir / "broken.json").string()), 2);
    // T <= n inside every window: the unpenalized fit is rejected by the solver layer
    const auto wide = write_panel(dir, 30, 8, 4);
    EXPECT_EQ(run("backtest" + cfg + " --input " + wide.string() + " --ws 6"), 4);
}

TEST(CliBacktest, SplitDateAndRepeatability) {
    const auto dir = scratch("repeat");
    const auto panel = write_panel(dir, 60, 4, 5);
    write_text(dir / "cfg.json", R"({
      "ws": [20, 30], "seed": 5, "split_date": "2012-02-15",
      "strategies": [{"estimator": "ols"}, {"estimator": "pqr", "theta": 0.9, "lambda": {"method": "pivotal-simulation", "n_sims": 500}},
                     {"estimator": "lasso", "lambda": {"method": "match-active-count", "target_active": 2}}]
    })");
    const std::string base = "backtest --config " + (dir / "cfg.json").string() + " --input " + panel.string();
    ASSERT_EQ(run(base + " --out " + (dir / "a").string()), 0);
    ASSERT_EQ(run(base + " --out " + (dir / "b").string()), 0);
    ASSERT_EQ(run("report --input " + (dir / "a").string()), 0);
    ASSERT_EQ(run("report --input " + (dir / "b").string()), 0);
    EXPECT_EQ(snapshot(dir / "a"), snapshot(dir / "b"));

    const json doc = json::parse(slurp(dir / "a" / "summary.json"));
    EXPECT_EQ(doc["jobs"].size(), 6u);
    for (const auto& job : doc["jobs"]) {
        const auto& p = job["periods"];
        EXPECT_EQ(p["first"]["observations"].get<int>() + p["second"]["observations"].get<int>(),
                  p["full"]["observations"].get<int>());
    }
}

TEST(CliSimulate, SchemaAndMedians) {
    const auto dir = scratch("simulate");
    write_text(dir / "cfg.json", R"({
      "seed": 9, "strategies": [{"estimator": "ols"}, {"estimator": "qr", "theta": 0.1}],
      "simulation": {"n_samples": 12, "n_periods": 80, "n_assets": 4, "family": "student-t", "df": 6}
    })");
    const fs::path out = dir / "nested" / "deeper";
    ASSERT_EQ(run("simulate --config " + (dir / "cfg.json").string() + " --out " + out.string()), 0);
    const auto rows = read_csv(out / "simulation.csv");
    ASSERT_EQ(rows[0], (std::vector<std::string>{"replication", "strategy", "indicator", "value"}));
    EXPECT_EQ(rows.size(), 1u + 12u * 2u * 5u);

    std::vector<double> ols_var;
    for (std::size_t r = 1; r < rows.size(); ++r)
        if (rows[r][1] == "OLS" && rows[r][2] == "variance") ols_var.push_back(std::stod(rows[r][3]));
    ASSERT_EQ(ols_var.size(), 12u);
    std::sort(ols_var.begin(), ols_var.end());
    const auto med = read_csv(out / "simulation_medians.csv");
    EXPECT_EQ(med[1][0], "OLS");
    EXPECT_DOUBLE_EQ(std::stod(med[1][1]), ols_var[5]);  // type-1 median of 12: the 6th order statistic

    ASSERT_EQ(run("simulate --config " + (dir / "cfg.json").string() + " --out " + (dir / "again").string()), 0);
    EXPECT_EQ(snapshot(out), snapshot(dir / "again"));
}

TEST(CliSimulate, InvalidFamilyRejected) {
    const auto dir = scratch("family");
    write_text(dir / "cfg.json", R"({"strategies": [{"estimator": "ols"}], "simulation": {"family": "cauchy"}})");
    EXPECT_EQ(run("simulate --config " + (dir / "cfg.json").string() + " --out " + (dir / "out").string()), 2);
    EXPECT_FALSE(fs::exists(dir / "out" / "simulation.csv"));
}

TEST(CliTuneLambda, FixedTauArithmetic) {
    const auto dir = scratch("tau");
    write_text(dir / "cfg.json", R"({"seed": 4, "tune": {"tau": 2.0, "periods": 100, "theta": [0.1, 0.5, 0.9]}})");
    ASSERT_EQ(run("tune-lambda --config " + (dir / "cfg.json").string() + " --out " + dir.string()), 0);
    const json doc = json::parse(slurp(dir / "lambda.json"));
    const auto& r = doc["records"];
    ASSERT_EQ(r.size(), 3u);
    for (const auto& rec : r)
        for (const char* f : {"theta", "tau", "lambda_star", "n_sims", "seed"}) EXPECT_TRUE(rec.contains(f)) << f;
    EXPECT_EQ(r[1]["lambda_star"].get<double>(), 0.01);
    EXPECT_DOUBLE_EQ(r[0]["lambda_star"].get<double>(), r[2]["lambda_star"].get<double>());
    EXPECT_EQ(r[0]["seed"], 4);
}

TEST(CliTuneLambda, SimulatedAndSeeded) {
    const auto dir = scratch("tune");
    const auto panel = write_panel(dir, 50, 4, 6);
    write_text(dir / "cfg.json", R"({"tune": {"theta": [0.1, 0.9], "n_sims": 400}})");
    const std::string base = "tune-lambda --config " + (dir / "cfg.json").string() + " --input " + panel.string();
    ASSERT_EQ(run(base + " --seed 3 --out " + (dir / "a").string()), 0);
    ASSERT_EQ(run(base + " --seed 3 --out " + (dir / "b").string()), 0);
    ASSERT_EQ(run(base + " --seed 8 --out " + (dir / "c").string()), 0);
    EXPECT_EQ(slurp(dir / "a" / "lambda.json"), slurp(dir / "b" / "lambda.json"));
    EXPECT_NE(slurp(dir / "a" / "lambda.json"), slurp(dir / "c" / "lambda.json"));
    const json doc = json::parse(slurp(dir / "a" / "lambda.json"));
    for (const auto& rec : doc["records"]) {
        const double th = rec["theta"].get<double>();
        EXPECT_EQ(rec["n_sims"], 400);
        EXPECT_DOUBLE_EQ(rec["lambda_star"].get<double>(), rec["tau"].get<double>() * std::sqrt(th * (1 - th)) / 50.0);
    }
}

TEST(CliReport, QuartilesAndWealthPaths) {
    const auto dir = scratch("report");
    write_text(dir / "cfg.json", R"({
      "seed": 2, "strategies": [{"estimator": "ols"}, {"estimator": "qr", "theta": 0.9}],
      "simulation": {"n_samples": 9, "n_periods": 60, "n_assets": 3}
    })");
    ASSERT_EQ(run("simulate --config " + (dir / "cfg.json").string() + " --out " + (dir / "sim").string()), 0);
    ASSERT_EQ(run("report --input " + (dir / "sim").string()), 0);

    std::map<std::pair<std::string, std::string>, std::vector<double>> dist;
    const auto sim = read_csv(dir / "sim" / "simulation.csv");
    for (std::size_t r = 1; r < sim.size(); ++r) dist[{sim[r][1], sim[r][2]}].push_back(std::stod(sim[r][3]));
    const auto box = read_csv(dir / "sim" / "boxplot.csv");
    ASSERT_EQ(box[0], (std::vector<std::string>{"source", "strategy", "ws", "indicator", "min", "q1", "median", "q3", "max",
                                                "count"}));
    ASSERT_EQ(box.size(), 1u + dist.size());
    for (std::size_t r = 1; r < box.size(); ++r) {
        auto v = dist.at({box[r][1], box[r][3]});
        std::sort(v.begin(), v.end());
        // type-1 quantile of 9 sorted values: ceil(9p)-th order statistic
        EXPECT_DOUBLE_EQ(std::stod(box[r][4]), v[0]);
        EXPECT_DOUBLE_EQ(std::stod(box[r][5]), v[2]);
        EXPECT_DOUBLE_EQ(std::stod(box[r][6]), v[4]);
        EXPECT_DOUBLE_EQ(std::stod(box[r][7]), v[6]);
        EXPECT_DOUBLE_EQ(std::stod(box[r][8]), v[8]);
    }

    const auto panel = write_panel(dir, 50, 3, 7);
    write_text(dir / "bt.json", kBacktestConfig);
    ASSERT_EQ(run("backtest --config " + (dir / "bt.json").string() + " --input " + panel.string() + " --out " +
                  (dir / "bt").string()),
              0);
    ASSERT_EQ(run("report --input " + (dir / "bt").string() + " --out " + (dir / "plots").string()), 0);
    const auto paths = read_csv(dir / "plots" / "wealth_paths.csv");
    EXPECT_EQ(paths[1][2], "0");
    EXPECT_EQ(paths[1][4], "100");
    EXPECT_EQ(paths.size(), 1u + 2u * 31u);
    const json doc = json::parse(slurp(dir / "bt" / "summary.json"));
    EXPECT_NEAR(std::stod(paths[31][4]), doc["jobs"][0]["periods"]["full"]["final_wealth"].get<double>(), 1e-9);
    EXPECT_TRUE(fs::exists(dir / "plots" / "turnover.csv"));
    EXPECT_TRUE(fs::exists(dir / "plots" / "boxplot.csv"));

    EXPECT_EQ(run("report --input " + (dir / "nowhere").string()), 3);
}
