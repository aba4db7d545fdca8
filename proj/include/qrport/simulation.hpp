#pragma once

// Seeded i.i.d. return panels (normal, Student t, skew-normal) and the
// in-sample Monte Carlo comparison of allocation strategies.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "qrport/allocation.hpp"
#include "qrport/error.hpp"
#include "qrport/indicators.hpp"
#include "qrport/market_data.hpp"
#include "qrport/rng.hpp"

namespace qrport {

// ============================================================================
// Distributions
// ============================================================================

enum class Family { normal, student_t, skew_normal };

inline const char* to_string(Family f) {
    switch (f) {
        case Family::normal: return "normal";
        case Family::student_t: return "student-t";
        case Family::skew_normal: return "skew-normal";
    }
    return "?";
}

inline Family parse_family(const std::string& s) {
    if (s == "normal" || s == "gaussian") return Family::normal;
    if (s == "student-t" || s == "t") return Family::student_t;
    if (s == "skew-normal") return Family::skew_normal;
    throw ConfigError("unknown distribution family '" + s + "' (expected normal, student-t or skew-normal)");
}

struct DistributionSpec {
    Family family = Family::normal;
    Eigen::VectorXd mean;        ///< percent
    Eigen::MatrixXd covariance;  ///< percent^2
    double df = 5.0;
    double skew_target = 0.02;  ///< average marginal skewness (skew-normal)

    Eigen::Index assets() const { return mean.size(); }

    void validate() const {
        if (mean.size() < 1) throw ConfigError("distribution: empty mean vector");
        if (covariance.rows() != mean.size() || covariance.cols() != mean.size())
            throw ConfigError("distribution: covariance must be n x n with n = mean length");
        if (!mean.allFinite() || !covariance.allFinite()) throw ConfigError("distribution: non-finite moments");
        if ((covariance - covariance.transpose()).cwiseAbs().maxCoeff() > 1e-10 * (1.0 + covariance.cwiseAbs().maxCoeff()))
            throw ConfigError("distribution: covariance is not symmetric");
        if (family == Family::student_t && !(df > 2.0)) throw ConfigError("distribution: student-t needs df > 2");
        if (family == Family::skew_normal && !std::isfinite(skew_target))
            throw ConfigError("distribution: skew target must be finite");
    }
};

struct Moments {
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
    bool repaired = false;  ///< negative eigenvalues were clipped to zero
};

/// Clips negative eigenvalues at zero. Returns true when anything was clipped.
inline bool repair_psd(Eigen::MatrixXd& cov, double tol = 0.0) {
    const Eigen::MatrixXd sym = 0.5 * (cov + cov.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
    if (es.eigenvalues().minCoeff() >= -tol * scale) return false;
    const Eigen::VectorXd clipped = es.eigenvalues().cwiseMax(0.0);
    cov = es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
    return true;
}

inline Moments estimate_moments(const Eigen::Ref<const Eigen::MatrixXd>& returns) {
    if (returns.rows() < 2) throw DataError("estimate_moments: need at least 2 observations");
    Moments m;
    m.mean = returns.colwise().mean().transpose();
    const Eigen::MatrixXd c = returns.rowwise() - m.mean.transpose();
    m.covariance = c.transpose() * c / static_cast<double>(returns.rows() - 1);
    m.repaired = repair_psd(m.covariance, 1e-12);
    return m;
}

inline Moments estimate_moments(const ReturnPanel& panel) { return estimate_moments(panel.values()); }

/// Random covariance: orthogonal rotation (QR of a Gaussian matrix) of a
/// log-spaced spectrum between `min_eigen` and `max_eigen`; means drawn from
/// N(mean_center, mean_spread^2).
inline Moments synthetic_moments(Eigen::Index n, std::uint64_t seed, double min_eigen = 0.25, double max_eigen = 4.0,
                                 double mean_center = 0.02, double mean_spread = 0.02) {
    if (n < 1) throw ConfigError("synthetic_moments: n must be >= 1");
    if (!(min_eigen > 0.0 && max_eigen >= min_eigen)) throw ConfigError("synthetic_moments: need 0 < min <= max eigenvalue");
    std::mt19937_64 rng(derive_seed(seed, 0x5EED));
    NormalSampler normal;
    Eigen::MatrixXd g(n, n);
    for (Eigen::Index j = 0; j < n; ++j)
        for (Eigen::Index i = 0; i < n; ++i) g(i, j) = normal(rng);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < n; ++j)
        if (r(j, j) < 0.0) q.col(j) *= -1.0;

    Eigen::VectorXd spectrum(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double u = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
        spectrum[i] = std::exp(std::log(min_eigen) + u * (std::log(max_eigen) - std::log(min_eigen)));
    }
    Moments m;
    m.covariance = q * spectrum.asDiagonal() * q.transpose();
    m.covariance = 0.5 * (m.covariance + m.covariance.transpose());
    m.mean.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) m.mean[i] = mean_center + mean_spread * normal(rng);
    return m;
}

namespace detail {

/// Symmetric square root V sqrt(D) V' of a PSD matrix; zero matrix maps to zero.
/// Eigenvalues within round-off of zero are clipped, anything more negative is rejected.
inline Eigen::MatrixXd covariance_factor(const Eigen::MatrixXd& cov) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (cov + cov.transpose()));
    if (es.eigenvalues().minCoeff() < -1e-8 * std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff()))
        throw ConfigError("distribution: covariance is not positive semi-definite");
    const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

/// Gamma(shape, 1) by Marsaglia and Tsang, on the engine's own uniforms and normals.
inline double gamma_draw(double shape, std::mt19937_64& rng, NormalSampler& normal) {
    if (shape < 1.0) {
        const double u = uniform01(rng);
        return gamma_draw(shape + 1.0, rng, normal) * std::pow(u > 0.0 ? u : 0x1.0p-53, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = normal(rng);
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = uniform01(rng);
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

}  // namespace detail

/// Skewness of the standard skew-normal with parameter delta in (-1, 1).
inline double skew_normal_skewness(double delta) {
    const double b = delta * std::sqrt(2.0 / std::numbers::pi);
    return (4.0 - std::numbers::pi) / 2.0 * b * b * b / std::pow(1.0 - b * b, 1.5);
}

/// mean_i( sum_k L_ik^3 / sigma_i^3 ): the factor mapping a common component
/// skewness onto the average marginal skewness of X = L Z.
inline double skew_loading(const Eigen::MatrixXd& factor) {
    double acc = 0.0;
    Eigen::Index used = 0;
    for (Eigen::Index i = 0; i < factor.rows(); ++i) {
        const double s2 = factor.row(i).squaredNorm();
        if (!(s2 > 0.0)) continue;
        acc += factor.row(i).array().cube().sum() / std::pow(s2, 1.5);
        ++used;
    }
    return used ? acc / static_cast<double>(used) : 0.0;
}

/// delta whose component skewness, pushed through `factor`, gives `target`
/// average marginal skewness.
inline double calibrate_skew_delta(double target, const Eigen::MatrixXd& factor) {
    if (target == 0.0) return 0.0;
    const double load = skew_loading(factor);
    const double need = load != 0.0 ? target / load : std::numeric_limits<double>::infinity();
    const double cap = skew_normal_skewness(1.0 - 1e-12);
    if (!(std::abs(need) < cap))
        throw ConfigError("skew target " + std::to_string(target) + " is not attainable for this covariance");
    double lo = 0.0, hi = 1.0 - 1e-12;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (skew_normal_skewness(mid) < std::abs(need)) lo = mid;
        else hi = mid;
    }
    return std::copysign(0.5 * (lo + hi), need);
}

/// T x n matrix of i.i.d. draws from `dist`, reproducible from `seed`.
inline Eigen::MatrixXd sample_returns(const DistributionSpec& dist, Eigen::Index periods, std::uint64_t seed) {
    dist.validate();
    if (periods < 1) throw ConfigError("sample: n_periods must be >= 1");
    const Eigen::Index n = dist.assets();
    const Eigen::MatrixXd factor = detail::covariance_factor(dist.covariance);
    std::mt19937_64 rng(derive_seed(seed, 1));
    NormalSampler normal;

    double delta = 0.0, mu = 0.0, sd = 1.0;
    if (dist.family == Family::skew_normal) {
        delta = calibrate_skew_delta(dist.skew_target, factor);
        mu = delta * std::sqrt(2.0 / std::numbers::pi);
        sd = std::sqrt(1.0 - mu * mu);
    }
    const double t_scale = dist.family == Family::student_t ? std::sqrt((dist.df - 2.0) / dist.df) : 1.0;

    Eigen::MatrixXd out(periods, n);
    Eigen::VectorXd z(n);
    for (Eigen::Index t = 0; t < periods; ++t) {
        for (Eigen::Index k = 0; k < n; ++k) {
            if (dist.family == Family::skew_normal) {
                const double u0 = std::abs(normal(rng));
                const double u1 = normal(rng);
                z[k] = (delta * u0 + std::sqrt(1.0 - delta * delta) * u1 - mu) / sd;
            } else {
                z[k] = normal(rng);
            }
        }
        Eigen::VectorXd x = factor * z;
        if (dist.family == Family::student_t) {
            const double w = 2.0 * detail::gamma_draw(0.5 * dist.df, rng, normal);  // chi-square(df)
            x *= t_scale * std::sqrt(dist.df / w);
        }
        out.row(t) = (dist.mean + x).transpose();
    }
    return out;
}

inline ReturnPanel sample_panel(const DistributionSpec& dist, Eigen::Index periods, std::uint64_t seed,
                                Date start = Date::from_ymd(2000, 1, 3)) {
    Eigen::MatrixXd v = sample_returns(dist, periods, seed);
    std::vector<Date> dates;
    dates.reserve(static_cast<std::size_t>(periods));
    for (Eigen::Index t = 0; t < periods; ++t) dates.push_back(start.plus_days(static_cast<int>(t)));
    std::vector<std::string> names;
    for (Eigen::Index j = 0; j < dist.assets(); ++j) names.push_back("S" + std::to_string(j + 1));
    return ReturnPanel(std::move(dates), std::move(names), std::move(v));
}

// ============================================================================
// Monte Carlo
// ============================================================================

struct MonteCarloSpec {
    std::int64_t n_samples = 100;
    Eigen::Index n_periods = 300;
    DistributionSpec distribution;
    std::vector<StrategySpec> strategies;
    IndicatorLevels levels;
    std::uint64_t seed = 1;
    unsigned threads = 1;

    void validate() const {
        if (n_samples < 1) throw ConfigError("monte carlo: n_samples must be >= 1");
        if (n_periods < 2) throw ConfigError("monte carlo: n_periods must be >= 2");
        if (strategies.empty()) throw ConfigError("monte carlo: at least one strategy is required");
        distribution.validate();
        if (distribution.assets() < 2) throw ConfigError("monte carlo: need at least 2 assets");
        for (const auto& s : strategies) s.validate();
    }
};

/// In-sample indicators of one replication for one strategy.
struct SampleIndicators {
    std::int64_t replication = 0;
    double variance = 0.0;
    double mad = 0.0;
    double alpha_risk = 0.0;
    double psi1 = 0.0;
    double psi2 = 0.0;
};

inline const std::vector<std::string>& sample_indicator_names() {
    static const std::vector<std::string> names = {"variance", "mad", "alpha_risk10", "psi1_90", "psi2_90"};
    return names;
}

inline std::vector<double> sample_indicator_values(const SampleIndicators& s) {
    return {s.variance, s.mad, s.alpha_risk, s.psi1, s.psi2};
}

struct StrategyDistribution {
    std::string strategy;
    std::vector<SampleIndicators> samples;  ///< successful replications, in replication order
    std::int64_t failures = 0;
    std::vector<std::string> failure_messages;

    std::vector<double> values(std::size_t indicator) const {
        std::vector<double> v;
        v.reserve(samples.size());
        for (const auto& s : samples) v.push_back(sample_indicator_values(s)[indicator]);
        return v;
    }
};

struct MonteCarloResult {
    std::vector<StrategyDistribution> strategies;
};

inline SampleIndicators in_sample_indicators(const Series& p, IndicatorLevels levels) {
    SampleIndicators s;
    s.variance = p.size() > 1 ? (p.array() - p.mean()).square().sum() / static_cast<double>(p.size() - 1) : 0.0;
    s.mad = mad_hat(p);
    s.alpha_risk = alpha_risk_hat(p, levels.alpha);
    s.psi1 = psi1_hat(p, levels.psi);
    s.psi2 = (p.array() < 0.0).any() ? psi2_hat(p, levels.psi) : std::numeric_limits<double>::infinity();
    return s;
}

inline MonteCarloResult run_monte_carlo(const MonteCarloSpec& mc) {
    mc.validate();
    const auto reps = static_cast<std::size_t>(mc.n_samples);
    const std::size_t m = mc.strategies.size();

    struct Cell {
        bool ok = false;
        SampleIndicators ind;
        std::string error;
    };
    std::vector<Cell> cells(reps * m);

    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t rep = begin; rep < end; ++rep) {
            const Eigen::MatrixXd r = sample_returns(mc.distribution, mc.n_periods, derive_seed(mc.seed, rep));
            for (std::size_t s = 0; s < m; ++s) {
                Cell& c = cells[rep * m + s];
                try {
                    const auto w = estimate_weights(mc.strategies[s], r);
                    c.ind = in_sample_indicators(r * w.weights, mc.levels);
                    c.ind.replication = static_cast<std::int64_t>(rep);
                    c.ok = true;
                } catch (const Error& e) {
                    c.error = "replication " + std::to_string(rep) + ": " + e.what();
                }
            }
        }
    };

    const unsigned threads = std::max(1u, mc.threads);
    if (threads == 1 || reps < 2) {
        work(0, reps);
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (reps + threads - 1) / threads;
        for (unsigned k = 0; k < threads; ++k) {
            const std::size_t b = k * chunk, e = std::min(reps, b + chunk);
            if (b < e) pool.emplace_back(work, b, e);
        }
        for (auto& th : pool) th.join();
    }

    MonteCarloResult res;
    for (std::size_t s = 0; s < m; ++s) {
        StrategyDistribution d;
        d.strategy = mc.strategies[s].name();
        for (std::size_t rep = 0; rep < reps; ++rep) {
            const Cell& c = cells[rep * m + s];
            if (c.ok) {
                d.samples.push_back(c.ind);
            } else {
                ++d.failures;
                d.failure_messages.push_back(c.error);
            }
        }
        res.strategies.push_back(std::move(d));
    }
    return res;
}

/// Median (type-1 convention) of each indicator for one strategy; NaN when
/// every replication failed.
inline std::vector<double> indicator_medians(const StrategyDistribution& d) {
    std::vector<double> out;
    for (std::size_t i = 0; i < sample_indicator_names().size(); ++i) {
        const auto v = d.values(i);
        if (v.empty()) {
            out.push_back(std::numeric_limits<double>::quiet_NaN());
            continue;
        }
        out.push_back(empirical_quantile(Eigen::Map<const Series>(v.data(), static_cast<Eigen::Index>(v.size())), 0.5));
    }
    return out;
}

}  // namespace qrport
