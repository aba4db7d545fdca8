#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "qrport/allocation.hpp"
#include "support/oracles.hpp"

using namespace qrport;

namespace {

// Correlated returns in percent: common factor plus idiosyncratic noise.
Eigen::MatrixXd panel(std::uint64_t seed, Eigen::Index rows, Eigen::Index cols) {
    std::mt19937_64 rng(seed);
    const Eigen::MatrixXd f = oracle::gaussian_matrix(rng, rows, 1, 1.0);
    Eigen::MatrixXd r = oracle::gaussian_matrix(rng, rows, cols, 1.0);
    for (Eigen::Index j = 0; j < cols; ++j) r.col(j) = r.col(j) * (0.5 + 0.2 * static_cast<double>(j)) + 0.7 * f;
    return r;
}

double in_sample_variance(const Eigen::MatrixXd& r, const Eigen::VectorXd& w) {
    const Eigen::VectorXd p = r * w;
    return (p.array() - p.mean()).square().sum() / static_cast<double>(p.size() - 1);
}

}  // namespace

// ---------------------------------------------------------------- numeraire

TEST(SelectNumeraire, ConstantSeries) {
    Eigen::MatrixXd w(12, 2);
    w.col(0).setConstant(1.0);
    w.col(1).setConstant(-1.0);
    EXPECT_EQ(select_numeraire(w), 0);
    EXPECT_DOUBLE_EQ(psi1_hat(w.col(0), 0.9), -1.0);
    EXPECT_DOUBLE_EQ(psi1_hat(w.col(1), 0.9), 1.0);
}

TEST(SelectNumeraire, TiesGoToLowestIndex) {
    const Eigen::MatrixXd one = panel(1, 30, 1);
    Eigen::MatrixXd w(30, 3);
    w << one, one, one;
    EXPECT_EQ(select_numeraire(w), 0);
}

TEST(SelectNumeraire, MatchesExhaustiveScan) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto w = panel(seed, 50, 5);
        Eigen::Index best = 0;
        double best_value = 1e300;
        for (Eigen::Index j = 0; j < 5; ++j) {
            // negated mean of the returns at or below the 90% lower quantile
            std::vector<double> col(w.col(j).data(), w.col(j).data() + 50);
            const double q = oracle::lower_quantile(col, 0.9);
            double s = 0.0;
            int c = 0;
            for (double v : col)
                if (v <= q) s += v, ++c;
            const double psi = -s / c;
            if (psi < best_value) best_value = psi, best = j;
        }
        EXPECT_EQ(select_numeraire(w), best) << seed;
    }
}

TEST(SelectNumeraire, Preconditions) {
    EXPECT_THROW(select_numeraire(Eigen::MatrixXd::Ones(20, 1)), DataError);
    EXPECT_THROW(select_numeraire(Eigen::MatrixXd::Ones(9, 3)), DataError);
}

// ---------------------------------------------------------------- design

TEST(DeviationDesign, TwoAssetExample) {
    Eigen::MatrixXd w(1, 2);
    w << 3, 1;
    const auto p = deviation_design(w, 0);
    EXPECT_DOUBLE_EQ(p.response[0], 3.0);
    ASSERT_EQ(p.covariates.cols(), 1);
    EXPECT_DOUBLE_EQ(p.covariates(0, 0), 2.0);
}

TEST(DeviationDesign, IdenticalColumnGivesZeroCovariate) {
    Eigen::MatrixXd w = panel(2, 15, 3);
    w.col(2) = w.col(0);
    const auto p = deviation_design(w, 0);
    EXPECT_EQ(p.covariates.col(1).cwiseAbs().maxCoeff(), 0.0);
}

TEST(DeviationDesign, ColumnOrderSkipsNumeraire) {
    const auto w = panel(3, 10, 4);
    const auto p = deviation_design(w, 2);
    EXPECT_TRUE(p.covariates.col(0).isApprox(w.col(2) - w.col(0)));
    EXPECT_TRUE(p.covariates.col(1).isApprox(w.col(2) - w.col(1)));
    EXPECT_TRUE(p.covariates.col(2).isApprox(w.col(2) - w.col(3)));
    EXPECT_THROW(deviation_design(w, 4), DataError);
}

TEST(DeviationDesign, PortfolioIdentity) {
    std::mt19937_64 rng(4);
    for (int rep = 0; rep < 50; ++rep) {
        const auto r = oracle::gaussian_matrix(rng, 20, 6);
        Eigen::VectorXd w = oracle::gaussian_matrix(rng, 6, 1).col(0);
        w[3] = 1.0 - (w.sum() - w[3]);
        const Eigen::Index k = rep % 6;
        const auto p = deviation_design(r, k);
        Eigen::VectorXd others(5);
        for (Eigen::Index j = 0; j < 6; ++j)
            if (j != k) others[covariate_slot(j, k)] = w[j];
        const Eigen::VectorXd lhs = p.response - p.covariates * others;
        EXPECT_LT((lhs - r * w).cwiseAbs().maxCoeff(), 1e-12);
    }
}

// ---------------------------------------------------------------- recovery and threshold

TEST(RecoverWeights, Examples) {
    RegressionFit f;
    f.intercept = 0.25;
    f.coefficients = Eigen::Vector2d(0.3, 0.2);
    const auto w = recover_weights(f, 2, 3);
    EXPECT_NEAR(w.weights[0], 0.3, 1e-15);
    EXPECT_NEAR(w.weights[1], 0.2, 1e-15);
    EXPECT_NEAR(w.weights[2], 0.5, 1e-15);
    EXPECT_EQ(w.numeraire_index, 2);
    EXPECT_DOUBLE_EQ(w.intercept, 0.25);
    EXPECT_EQ(w.active_count, 3);

    f.coefficients = Eigen::Vector2d::Zero();
    const auto z = recover_weights(f, 0, 3);
    EXPECT_DOUBLE_EQ(z.weights[0], 1.0);
    EXPECT_EQ(z.active_count, 1);
    EXPECT_THROW(recover_weights(f, 0, 4), DataError);
}

TEST(RecoverWeights, BudgetOnRandomFits) {
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 200; ++rep) {
        RegressionFit f;
        f.coefficients = oracle::gaussian_matrix(rng, 7, 1).col(0);
        const auto w = recover_weights(f, rep % 8, 8);
        EXPECT_NEAR(w.weights.sum(), 1.0, 1e-12);
    }
}

TEST(ThresholdPositions, Example) {
    WeightVector w;
    w.weights = Eigen::Vector2d(0.9996, 0.0004);
    w.numeraire_index = 0;
    const auto t = threshold_positions(w);
    EXPECT_DOUBLE_EQ(t.weights[0], 1.0);
    EXPECT_DOUBLE_EQ(t.weights[1], 0.0);
    EXPECT_EQ(t.active_count, 1);
    EXPECT_EQ(t.short_count, 0);
}

TEST(ThresholdPositions, NoOpWhenAllLarge) {
    WeightVector w;
    w.weights = Eigen::Vector3d(0.6, -0.1, 0.5);
    w.numeraire_index = 2;
    const auto t = threshold_positions(w);
    EXPECT_EQ(t.weights, w.weights);
    EXPECT_EQ(t.active_count, 3);
    EXPECT_EQ(t.short_count, 1);
}

TEST(ThresholdPositions, BudgetOverRandomDraws) {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(-0.002, 0.002);
    for (int rep = 0; rep < 1000; ++rep) {
        WeightVector w;
        w.weights.resize(10);
        for (auto& v : w.weights) v = u(rng);
        w.numeraire_index = rep % 10;
        w.weights[w.numeraire_index] += 1.0 - w.weights.sum();
        const auto t = threshold_positions(w);
        EXPECT_NEAR(t.weights.sum(), 1.0, 1e-12);
        for (Eigen::Index j = 0; j < 10; ++j)
            if (j != t.numeraire_index) {
                EXPECT_TRUE(t.weights[j] == 0.0 || std::abs(t.weights[j]) > 0.0005);
            }
    }
}

// ---------------------------------------------------------------- strategy specs

TEST(StrategySpec, NamesAndValidation) {
    EXPECT_EQ(StrategySpec::ols().name(), "OLS");
    EXPECT_EQ(StrategySpec::qr(0.1).name(), "QR(0.1)");
    EXPECT_EQ(StrategySpec::pqr(0.5).name(), "PQR(0.5)");
    EXPECT_EQ(StrategySpec::lasso(LambdaRule::fixed(0.0004)).name(), "LASSO");

    auto bad = StrategySpec::qr(0.5);
    bad.theta.reset();
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = StrategySpec::ols();
    bad.theta = 0.5;
    EXPECT_THROW(bad.validate(), ConfigError);
    bad = StrategySpec::qr(0.5);
    bad.lambda_rule = LambdaRule::fixed(1.0);
    EXPECT_THROW(bad.validate(), ConfigError);
    EXPECT_THROW(StrategySpec::qr(1.0).validate(), ConfigError);
    EXPECT_THROW(StrategySpec::lasso(LambdaRule::pivotal()).validate(), ConfigError);
}

// ---------------------------------------------------------------- estimation

TEST(EstimateWeights, OlsEqualsGmvp) {
    for (std::uint64_t seed = 10; seed < 20; ++seed) {
        const auto r = panel(seed, 120, 6);
        const auto w = estimate_weights(StrategySpec::ols(), r);
        const Eigen::VectorXd g = oracle::gmvp(r);
        EXPECT_LT((w.weights - g).cwiseAbs().maxCoeff(), 1e-6) << seed;
        EXPECT_NEAR(w.weights.sum(), 1.0, 1e-10);
    }
}

TEST(EstimateWeights, ExchangeablePairNearHalf) {
    std::mt19937_64 rng(21);
    const auto r = oracle::gaussian_matrix(rng, 20000, 2);
    const auto w = estimate_weights(StrategySpec::ols(), r);
    EXPECT_NEAR(w.weights[0], 0.5, 0.02);
    EXPECT_NEAR(w.weights[1], 0.5, 0.02);
}

TEST(EstimateWeights, NumeraireInvarianceForUnpenalized) {
    const auto r = panel(22, 80, 5);
    for (const auto& base : {StrategySpec::ols(), StrategySpec::qr(0.5), StrategySpec::qr(0.1)}) {
        auto spec = base;
        const Eigen::VectorXd ref = r * estimate_weights(spec, r).weights;
        for (Eigen::Index k = 0; k < 5; ++k) {
            spec.numeraire = NumeraireRule::fixed(k);
            const auto w = estimate_weights(spec, r);
            EXPECT_EQ(w.numeraire_index, k);
            EXPECT_LT((r * w.weights - ref).cwiseAbs().maxCoeff(), 1e-6) << base.name() << " k=" << k;
        }
    }
}

TEST(EstimateWeights, OlsHasLowestInSampleVariance) {
    for (std::uint64_t seed = 30; seed < 35; ++seed) {
        const auto r = panel(seed, 100, 5);
        const double v_ols = in_sample_variance(r, estimate_weights(StrategySpec::ols(), r).weights);
        for (const auto& s : {StrategySpec::qr(0.1), StrategySpec::qr(0.5), StrategySpec::qr(0.9),
                              StrategySpec::pqr(0.5, LambdaRule::fixed(5.0)),
                              StrategySpec::lasso(LambdaRule::fixed(20.0))}) {
            EXPECT_LE(v_ols, in_sample_variance(r, estimate_weights(s, r).weights) + 1e-12) << s.name();
        }
    }
}

TEST(EstimateWeights, InsufficientSampleForUnpenalized) {
    const auto r = panel(40, 5, 5);
    try {
        estimate_weights(StrategySpec::ols(), r);
        FAIL();
    } catch (const SolverError& e) {
        EXPECT_EQ(e.status(), SolverStatus::insufficient_sample);
        EXPECT_NE(std::string(e.what()).find("insufficient sample for unpenalized fit"), std::string::npos);
    }
    EXPECT_THROW(estimate_weights(StrategySpec::qr(0.5), r), SolverError);
    // penalized estimators handle T < n
    const auto wide = panel(41, 12, 20);
    EXPECT_NO_THROW(estimate_weights(StrategySpec::pqr(0.5, LambdaRule::fixed(1.0)), wide));
}

TEST(EstimateWeights, PenalizedBudgetAndThreshold) {
    const auto r = panel(42, 60, 8);
    for (const auto& s : {StrategySpec::pqr(0.1, LambdaRule::pivotal(2000)), StrategySpec::pqr(0.5, LambdaRule::fixed(2.0)),
                          StrategySpec::lasso(LambdaRule::fixed(5.0))}) {
        const auto w = estimate_weights(s, r);
        EXPECT_NEAR(w.weights.sum(), 1.0, 1e-10);
        EXPECT_EQ(w.numeraire_index, select_numeraire(r));
        for (Eigen::Index j = 0; j < 8; ++j)
            if (j != w.numeraire_index) {
                EXPECT_TRUE(w.weights[j] == 0.0 || std::abs(w.weights[j]) > 0.0005);
            }
    }
}

TEST(EstimateWeights, PivotalLambdaUsesFullWindowLength) {
    const auto r = panel(43, 50, 4);
    auto spec = StrategySpec::pqr(0.3, LambdaRule::pivotal(500, 3));
    const auto c = pivotal_lambda(spec, r);
    EXPECT_EQ(c.periods, 50);
    EXPECT_NEAR(c.lambda_star, c.tau * std::sqrt(0.3 * 0.7) / 50.0, 1e-15);
    EXPECT_DOUBLE_EQ(resolve_lambda(spec, r), c.lambda_star);
}

TEST(Calibration, TargetOneGivesNumeraireOnly) {
    const auto r = panel(50, 60, 5);
    const auto cal = calibrate_lasso_lambda(StrategySpec::lasso(LambdaRule::fixed(0.0)), r, 1);
    EXPECT_TRUE(cal.within_tolerance);
    const auto w = estimate_weights(StrategySpec::lasso(LambdaRule::fixed(cal.lambda)), r);
    EXPECT_LE(w.active_count, 3);

    const auto p = estimate_weights(StrategySpec::pqr(0.5, LambdaRule::match_active(1)), r);
    EXPECT_EQ(p.active_count, 1);
    EXPECT_DOUBLE_EQ(p.weights[p.numeraire_index], 1.0);
    EXPECT_EQ(p.numeraire_index, select_numeraire(r));

    const auto big = estimate_weights(StrategySpec::lasso(LambdaRule::fixed(1.01 * zeroing_lambda(
                                                                               StrategySpec::lasso(LambdaRule::fixed(0.0)), r))),
                                      r);
    EXPECT_EQ(big.active_count, 1);
}

TEST(Calibration, TargetAllGivesNearOls) {
    const auto r = panel(51, 80, 6);
    const auto cal = calibrate_lasso_lambda(StrategySpec::lasso(LambdaRule::fixed(0.0)), r, 6, 1e-10);
    EXPECT_TRUE(cal.within_tolerance);
    EXPECT_GE(cal.active, 4);
    const auto ols = estimate_weights(StrategySpec::ols(), r);
    EXPECT_EQ(ols.active_count, 6);
}

TEST(Calibration, Preconditions) {
    const auto r = panel(52, 30, 4);
    EXPECT_THROW(calibrate_lasso_lambda(StrategySpec::lasso(LambdaRule::fixed(0.0)), r, 0), ConfigError);
    EXPECT_THROW(calibrate_lasso_lambda(StrategySpec::lasso(LambdaRule::fixed(0.0)), r, 5), ConfigError);
    EXPECT_THROW(calibrate_active_count(StrategySpec::ols(), r, 2), ConfigError);
}
