#pragma once

// Dense revised simplex for
//
//     maximize c'x  subject to  A x = b,  lower <= x <= upper
//
// with every variable boxed (finite bounds). Small row count, many columns:
// this is the shape of the quantile-regression dual, where the rows are the
// regression coefficients and the columns are the observations.
//
// Phase 1 starts from nonbasic structurals at a bound plus one artificial per
// row; phase 2 continues from the feasible basis. Dantzig pricing, two-pass
// (Harris) ratio test, Bland's rule while stalling, and a periodic refactor of
// the explicit basis inverse.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "qrport/error.hpp"

namespace qrport::detail {

struct SimplexResult {
    Eigen::VectorXd x;       ///< primal solution (structural part)
    Eigen::VectorXd duals;   ///< multipliers of the equality rows
    std::vector<Eigen::Index> basis;  ///< structural basic indices (artificials omitted)
    double objective = 0.0;
    Eigen::Index iterations = 0;
    bool redundant_rows = false;  ///< some row could not be covered by a structural column
};

class BoundedSimplex {
public:
    enum class State : unsigned char { basic, at_lower, at_upper };

    BoundedSimplex(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& c,
                   const Eigen::VectorXd& lower, const Eigen::VectorXd& upper)
        : a_(a), b_(b), c_(c), lower_(lower), upper_(upper), m_(a.rows()), n_(a.cols()) {
        scale_ = std::max({1.0, c_.cwiseAbs().maxCoeff(), a_.cwiseAbs().maxCoeff()});
    }

    /// `start_at_upper[j]` picks the initial bound of structural j.
    SimplexResult solve(const std::vector<bool>& start_at_upper) {
        init_phase1(start_at_upper);
        Eigen::VectorXd phase1_cost = Eigen::VectorXd::Zero(n_ + m_);
        phase1_cost.tail(m_).setConstant(-1.0);
        run(phase1_cost);

        const double infeas = x_.tail(m_).sum();
        if (infeas > 1e-9 * std::max(1.0, b_.cwiseAbs().sum() + a_.cwiseAbs().sum()))
            throw SolverError(SolverStatus::infeasible, "linear program is infeasible");

        for (Eigen::Index i = 0; i < m_; ++i) {
            lower_full_[n_ + i] = 0.0;
            upper_full_[n_ + i] = 0.0;
            x_[n_ + i] = 0.0;
        }
        refactor();
        const bool redundant = drive_out_artificials();

        Eigen::VectorXd cost = Eigen::VectorXd::Zero(n_ + m_);
        cost.head(n_) = c_;
        run(cost);

        SimplexResult res;
        res.x = x_.head(n_);
        res.iterations = iterations_;
        res.redundant_rows = redundant;
        for (auto j : basis_)
            if (j < n_) res.basis.push_back(j);
        res.duals = final_duals(cost);
        res.objective = c_.dot(res.x);
        return res;
    }

private:
    Eigen::VectorXd column(Eigen::Index j) const {
        if (j < n_) return a_.col(j);
        Eigen::VectorXd e = Eigen::VectorXd::Zero(m_);
        e[j - n_] = art_sign_[j - n_];
        return e;
    }

    void init_phase1(const std::vector<bool>& start_at_upper) {
        const Eigen::Index total = n_ + m_;
        x_.setZero(total);
        state_.assign(static_cast<std::size_t>(total), State::at_lower);
        lower_full_.resize(total);
        upper_full_.resize(total);
        lower_full_.head(n_) = lower_;
        upper_full_.head(n_) = upper_;
        lower_full_.tail(m_).setZero();
        upper_full_.tail(m_).setConstant(std::numeric_limits<double>::infinity());
        for (Eigen::Index j = 0; j < n_; ++j) {
            const bool up = start_at_upper[static_cast<std::size_t>(j)] && upper_[j] > lower_[j];
            state_[static_cast<std::size_t>(j)] = up ? State::at_upper : State::at_lower;
            x_[j] = up ? upper_[j] : lower_[j];
        }
        const Eigen::VectorXd r = b_ - a_ * x_.head(n_);
        art_sign_.resize(m_);
        basis_.resize(static_cast<std::size_t>(m_));
        for (Eigen::Index i = 0; i < m_; ++i) {
            art_sign_[i] = r[i] >= 0.0 ? 1.0 : -1.0;
            x_[n_ + i] = std::abs(r[i]);
            basis_[static_cast<std::size_t>(i)] = n_ + i;
            state_[static_cast<std::size_t>(n_ + i)] = State::basic;
        }
        binv_ = art_sign_.asDiagonal();
        iterations_ = 0;
    }

    void refactor() {
        Eigen::MatrixXd bmat(m_, m_);
        for (Eigen::Index i = 0; i < m_; ++i) bmat.col(i) = column(basis_[static_cast<std::size_t>(i)]);
        Eigen::FullPivLU<Eigen::MatrixXd> lu(bmat);
        binv_ = lu.inverse();
        // recompute basic values from nonbasic ones
        Eigen::VectorXd rhs = b_;
        for (Eigen::Index j = 0; j < n_ + m_; ++j)
            if (state_[static_cast<std::size_t>(j)] != State::basic && x_[j] != 0.0) rhs -= x_[j] * column(j);
        const Eigen::VectorXd xb = binv_ * rhs;
        for (Eigen::Index i = 0; i < m_; ++i) x_[basis_[static_cast<std::size_t>(i)]] = xb[i];
        since_refactor_ = 0;
    }

    Eigen::VectorXd reduced_costs(const Eigen::VectorXd& cost, Eigen::VectorXd& pi) const {
        Eigen::VectorXd cb(m_);
        for (Eigen::Index i = 0; i < m_; ++i) cb[i] = cost[basis_[static_cast<std::size_t>(i)]];
        pi = binv_.transpose() * cb;
        Eigen::VectorXd d(n_ + m_);
        d.head(n_) = cost.head(n_) - a_.transpose() * pi;
        for (Eigen::Index i = 0; i < m_; ++i) d[n_ + i] = cost[n_ + i] - art_sign_[i] * pi[i];
        return d;
    }

    bool movable(Eigen::Index j) const { return upper_full_[j] > lower_full_[j]; }

    void pivot(Eigen::Index row, Eigen::Index entering, const Eigen::VectorXd& alpha) {
        const double piv = alpha[row];
        binv_.row(row) /= piv;
        for (Eigen::Index i = 0; i < m_; ++i)
            if (i != row && alpha[i] != 0.0) binv_.row(i) -= alpha[i] * binv_.row(row);
        basis_[static_cast<std::size_t>(row)] = entering;
        state_[static_cast<std::size_t>(entering)] = State::basic;
        if (++since_refactor_ >= 64) refactor();
    }

    void run(const Eigen::VectorXd& cost) {
        const double dual_tol = 1e-10 * scale_;
        const double pivot_tol = 1e-9;
        const double primal_tol = 1e-11 * std::max(1.0, upper_full_.head(n_).cwiseAbs().maxCoeff());
        const Eigen::Index cap = 200 * (n_ + m_) + 10000;
        Eigen::Index stall = 0;
        double last_obj = -std::numeric_limits<double>::infinity();
        Eigen::VectorXd pi;

        for (;;) {
            if (iterations_ > cap) throw SolverError(SolverStatus::iteration_limit, "simplex iteration limit reached");
            const Eigen::VectorXd d = reduced_costs(cost, pi);
            const bool bland = stall > 50;

            Eigen::Index entering = -1;
            double best = 0.0;
            for (Eigen::Index j = 0; j < n_ + m_; ++j) {
                const auto s = state_[static_cast<std::size_t>(j)];
                if (s == State::basic || !movable(j)) continue;
                double gain = 0.0;
                if (s == State::at_lower && d[j] > dual_tol) gain = d[j];
                if (s == State::at_upper && d[j] < -dual_tol) gain = -d[j];
                if (gain <= 0.0) continue;
                if (bland) {
                    entering = j;
                    break;
                }
                if (gain > best) {
                    best = gain;
                    entering = j;
                }
            }
            if (entering < 0) return;

            const double dir = state_[static_cast<std::size_t>(entering)] == State::at_lower ? 1.0 : -1.0;
            const Eigen::VectorXd alpha = binv_ * column(entering);

            // pass 1: bound on the step with relaxed bounds
            double relaxed = upper_full_[entering] - lower_full_[entering];
            for (Eigen::Index i = 0; i < m_; ++i) {
                const double g = dir * alpha[i];
                const Eigen::Index bi = basis_[static_cast<std::size_t>(i)];
                if (g > pivot_tol)
                    relaxed = std::min(relaxed, (x_[bi] - lower_full_[bi] + primal_tol) / g);
                else if (g < -pivot_tol && std::isfinite(upper_full_[bi]))
                    relaxed = std::min(relaxed, (upper_full_[bi] - x_[bi] + primal_tol) / -g);
            }
            if (!std::isfinite(relaxed)) throw SolverError(SolverStatus::unbounded, "linear program is unbounded");

            // pass 2: among rows within the relaxed step, the largest pivot
            Eigen::Index leave = -1;
            double step = upper_full_[entering] - lower_full_[entering];
            double biggest = 0.0;
            for (Eigen::Index i = 0; i < m_; ++i) {
                const double g = dir * alpha[i];
                const Eigen::Index bi = basis_[static_cast<std::size_t>(i)];
                double ratio = std::numeric_limits<double>::infinity();
                if (g > pivot_tol)
                    ratio = (x_[bi] - lower_full_[bi]) / g;
                else if (g < -pivot_tol && std::isfinite(upper_full_[bi]))
                    ratio = (upper_full_[bi] - x_[bi]) / -g;
                else
                    continue;
                if (ratio <= relaxed && std::abs(g) > biggest) {
                    biggest = std::abs(g);
                    leave = i;
                    step = std::max(ratio, 0.0);
                }
            }
            if (leave >= 0 && step > upper_full_[entering] - lower_full_[entering]) leave = -1;
            if (leave < 0) step = upper_full_[entering] - lower_full_[entering];

            for (Eigen::Index i = 0; i < m_; ++i) x_[basis_[static_cast<std::size_t>(i)]] -= dir * step * alpha[i];
            x_[entering] += dir * step;

            if (leave < 0) {
                // bound flip
                state_[static_cast<std::size_t>(entering)] =
                    dir > 0 ? State::at_upper : State::at_lower;
                x_[entering] = dir > 0 ? upper_full_[entering] : lower_full_[entering];
            } else {
                const Eigen::Index out = basis_[static_cast<std::size_t>(leave)];
                const bool to_lower = dir * alpha[leave] > 0.0;
                state_[static_cast<std::size_t>(out)] = to_lower ? State::at_lower : State::at_upper;
                x_[out] = to_lower ? lower_full_[out] : upper_full_[out];
                pivot(leave, entering, alpha);
            }
            ++iterations_;

            const double obj = cost.dot(x_);
            if (obj > last_obj + 1e-12 * std::max(1.0, std::abs(obj))) {
                stall = 0;
                last_obj = obj;
            } else {
                ++stall;
            }
        }
    }

    /// Replaces zero-valued basic artificials by structural columns. Returns
    /// true when some row admits no structural replacement (redundant row).
    bool drive_out_artificials() {
        bool redundant = false;
        for (Eigen::Index i = 0; i < m_; ++i) {
            if (basis_[static_cast<std::size_t>(i)] < n_) continue;
            const Eigen::RowVectorXd row = binv_.row(i) * a_;
            Eigen::Index best = -1;
            double mag = 1e-7 * std::max(1.0, a_.cwiseAbs().maxCoeff());
            for (Eigen::Index j = 0; j < n_; ++j) {
                if (state_[static_cast<std::size_t>(j)] == State::basic || !movable(j)) continue;
                if (std::abs(row[j]) > mag) {
                    mag = std::abs(row[j]);
                    best = j;
                }
            }
            if (best < 0) {
                redundant = true;
                continue;
            }
            const Eigen::VectorXd alpha = binv_ * a_.col(best);
            const Eigen::Index out = basis_[static_cast<std::size_t>(i)];
            state_[static_cast<std::size_t>(out)] = State::at_lower;
            x_[out] = 0.0;
            pivot(i, best, alpha);
        }
        refactor();
        return redundant;
    }

    Eigen::VectorXd final_duals(const Eigen::VectorXd& cost) {
        Eigen::MatrixXd bmat(m_, m_);
        Eigen::VectorXd cb(m_);
        for (Eigen::Index i = 0; i < m_; ++i) {
            const auto j = basis_[static_cast<std::size_t>(i)];
            bmat.col(i) = column(j);
            cb[i] = cost[j];
        }
        return bmat.transpose().fullPivLu().solve(cb);
    }

    Eigen::MatrixXd a_;
    Eigen::VectorXd b_, c_, lower_, upper_;
    Eigen::Index m_, n_;
    double scale_ = 1.0;

    Eigen::VectorXd x_, lower_full_, upper_full_, art_sign_;
    std::vector<State> state_;
    std::vector<Eigen::Index> basis_;
    Eigen::MatrixXd binv_;
    Eigen::Index iterations_ = 0;
    int since_refactor_ = 0;
};

}  // namespace qrport::detail
