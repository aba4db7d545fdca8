#pragma once

// Data-driven l1 penalty for quantile regression. The pivotal statistic
//
//     Lambda = T sup_{theta in U} max_j | T^-1 sum_t r*_jt (theta - 1{e_t <= theta}) |
//                                        / (sigma_j sqrt(theta (1 - theta)))
//
// with e_t i.i.d. uniform and sigma_j^2 = T^-1 sum_t r*_jt^2 is simulated
// conditionally on the covariates, and
//
//     lambda*(theta) = tau sqrt(theta (1 - theta)) / T,  tau = 2 Q_conf(Lambda).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "qrport/error.hpp"
#include "qrport/indicators.hpp"
#include "qrport/rng.hpp"

namespace qrport {

struct LambdaRule {
    enum class Method { pivotal_simulation, fixed, match_active_count };

    Method method = Method::pivotal_simulation;
    std::vector<double> theta_set;  ///< empty: the strategy's own level
    std::int64_t n_sims = 100000;
    double confidence = 0.9;
    double fixed_value = 0.0;
    Eigen::Index target_active = 0;
    std::uint64_t seed = 20160101;
    bool per_window = false;  ///< recompute on every rolling window instead of once on the full sample

    static LambdaRule pivotal(std::int64_t sims = 100000, std::uint64_t seed = 20160101) {
        LambdaRule r;
        r.n_sims = sims;
        r.seed = seed;
        return r;
    }
    static LambdaRule fixed(double value) {
        LambdaRule r;
        r.method = Method::fixed;
        r.fixed_value = value;
        return r;
    }
    static LambdaRule match_active(Eigen::Index target) {
        LambdaRule r;
        r.method = Method::match_active_count;
        r.target_active = target;
        return r;
    }

    void validate() const {
        for (double t : theta_set)
            if (!(t > 0.0 && t < 1.0)) throw ConfigError("lambda rule: theta_set levels must lie in (0,1)");
        if (n_sims < 1) throw ConfigError("lambda rule: n_sims must be >= 1");
        if (!(confidence > 0.0 && confidence < 1.0)) throw ConfigError("lambda rule: confidence must lie in (0,1)");
        if (method == Method::fixed && !(fixed_value >= 0.0)) throw ConfigError("lambda rule: fixed lambda must be >= 0");
        if (method == Method::match_active_count && target_active < 1)
            throw ConfigError("lambda rule: target_active must be >= 1");
    }
};

inline const char* to_string(LambdaRule::Method m) {
    switch (m) {
        case LambdaRule::Method::pivotal_simulation: return "pivotal-simulation";
        case LambdaRule::Method::fixed: return "fixed";
        case LambdaRule::Method::match_active_count: return "match-active-count";
    }
    return "?";
}

struct LambdaChoice {
    double theta = 0.0;
    double tau = 0.0;
    double lambda_star = 0.0;
    Eigen::Index periods = 0;
    std::int64_t n_sims = 0;
    double sample_mean = 0.0;
    double sample_quantile = 0.0;  ///< the confidence-quantile of Lambda
    double confidence = 0.9;
};

/// Simulated draws of the pivotal statistic. Sample i uses its own derived
/// substream, so the output does not depend on `threads`.
inline std::vector<double> simulate_pivot(const Eigen::Ref<const Eigen::MatrixXd>& covariates,
                                          const std::vector<double>& theta_set, std::int64_t n_sims,
                                          std::uint64_t seed, unsigned threads = 1) {
    if (covariates.rows() == 0 || covariates.cols() == 0) throw DataError("simulate_pivot: empty covariate matrix");
    if (theta_set.empty()) throw DataError("simulate_pivot: empty quantile level set");
    for (double t : theta_set)
        if (!(t > 0.0 && t < 1.0)) throw DataError("simulate_pivot: levels must lie in (0,1)");
    if (n_sims < 1) throw DataError("simulate_pivot: n_sims must be >= 1");

    const Eigen::Index obs = covariates.rows();
    const Eigen::Index p = covariates.cols();
    Eigen::VectorXd sigma(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        sigma[j] = std::sqrt(covariates.col(j).squaredNorm() / static_cast<double>(obs));
        if (!(sigma[j] > 0.0))
            throw DataError("simulate_pivot: zero-variance covariate in column " + std::to_string(j));
    }
    // normalized design: column j divided by sigma_j
    const Eigen::MatrixXd z = covariates * sigma.cwiseInverse().asDiagonal();
    const Eigen::MatrixXd zt = z.transpose();

    std::vector<double> out(static_cast<std::size_t>(n_sims));
    auto work = [&](std::int64_t begin, std::int64_t end) {
        Eigen::VectorXd e(obs), v(obs), score(p);
        for (std::int64_t i = begin; i < end; ++i) {
            std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
            for (Eigen::Index t = 0; t < obs; ++t) e[t] = uniform01(rng);
            double sup = 0.0;
            for (double theta : theta_set) {
                for (Eigen::Index t = 0; t < obs; ++t) v[t] = theta - (e[t] <= theta ? 1.0 : 0.0);
                score.noalias() = zt * v;
                sup = std::max(sup, score.cwiseAbs().maxCoeff() / std::sqrt(theta * (1.0 - theta)));
            }
            out[static_cast<std::size_t>(i)] = sup;
        }
    };

    threads = std::max(1u, threads);
    if (threads == 1 || n_sims < 1000) {
        work(0, n_sims);
    } else {
        std::vector<std::thread> pool;
        const std::int64_t chunk = (n_sims + threads - 1) / threads;
        for (unsigned k = 0; k < threads; ++k) {
            const std::int64_t b = k * chunk, e = std::min<std::int64_t>(n_sims, b + chunk);
            if (b < e) pool.emplace_back(work, b, e);
        }
        for (auto& th : pool) th.join();
    }
    return out;
}

inline double lambda_from_tau(double tau, double theta, Eigen::Index periods) {
    return tau * std::sqrt(theta * (1.0 - theta)) / static_cast<double>(periods);
}

/// tau = 2 Q_conf(samples) (lower empirical quantile); lambda* = tau sqrt(theta(1-theta)) / T.
inline LambdaChoice optimal_lambda(const std::vector<double>& samples, double theta, Eigen::Index periods,
                                   double confidence = 0.9) {
    if (samples.empty()) throw DataError("optimal_lambda: no samples");
    if (!(theta > 0.0 && theta < 1.0)) throw DataError("optimal_lambda: theta must lie in (0,1)");
    if (periods < 1) throw DataError("optimal_lambda: T must be >= 1");
    const Eigen::Map<const Eigen::VectorXd> s(samples.data(), static_cast<Eigen::Index>(samples.size()));
    LambdaChoice c;
    c.theta = theta;
    c.periods = periods;
    c.n_sims = static_cast<std::int64_t>(samples.size());
    c.confidence = confidence;
    c.sample_mean = s.mean();
    c.sample_quantile = empirical_quantile(s, confidence);
    c.tau = 2.0 * c.sample_quantile;
    c.lambda_star = lambda_from_tau(c.tau, theta, periods);
    return c;
}

}  // namespace qrport
