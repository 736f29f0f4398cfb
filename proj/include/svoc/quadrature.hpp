#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <stdexcept>
#include <vector>

#include "core.hpp"
#include "special_functions.hpp"

namespace svoc {

// ---------------------------------------------------------------------------
// Product-trapezoidal weights for the weakly singular integral
//
//   / t_n   phi(s)
//   |     ----------------- ds  ~=  sum_{j=0}^{n} w[n][j] phi(t_j)
//   / 0    (t_n-s)^(1-alpha)
//
// The rule integrates the kernel exactly against the piecewise-linear
// interpolant of phi, so it is exact whenever phi is piecewise linear on the
// grid. With c = h^alpha/(alpha(alpha+1)) and b = alpha+1:
//
//   w[n][n] = c
//   w[n][j] = c [ (n-j+1)^b - 2(n-j)^b + (n-j-1)^b ],   1 <= j <= n-1
//   w[n][0] = c [ (n-1)^b - n^alpha (n - alpha - 1) ]
//
// The second differences of k^b cancel catastrophically for large k, so they
// are evaluated by a binomial series there.
// ---------------------------------------------------------------------------

namespace detail {

// (k+1)^b - 2 k^b + (k-1)^b for b = alpha+1, k >= 1.
inline double power_second_difference(double alpha, std::size_t k) {
    const double b = alpha + 1.0;
    if (k == 1) return 2.0 * std::expm1(alpha * 0.6931471805599453094);  // 2^b - 2
    if (k < 4) {
        const double kd = static_cast<double>(k);
        return std::pow(kd + 1.0, b) - 2.0 * std::pow(kd, b) + std::pow(kd - 1.0, b);
    }
    // k^b [ (1+x)^b + (1-x)^b - 2 ] with x = 1/k, summed as 2 sum_m C(b,2m) x^{2m}.
    const double kd = static_cast<double>(k);
    const double x2 = 1.0 / (kd * kd);
    double coeff = b * (b - 1.0) / 2.0;  // C(b,2)
    double term = coeff * x2;
    double sum = term;
    double m2 = 2.0;
    while (std::fabs(term) > 1e-18 * std::fabs(sum)) {
        coeff *= (b - m2) * (b - m2 - 1.0) / ((m2 + 1.0) * (m2 + 2.0));
        m2 += 2.0;
        term = coeff * std::pow(x2, m2 / 2.0);
        sum += term;
        if (m2 > 60.0) break;
    }
    return 2.0 * sum * std::pow(kd, b);
}

// (alpha+1) n^alpha - ( n^b - (n-1)^b ) for b = alpha+1, n >= 1 (first-column factor).
inline double first_column_factor(double alpha, std::size_t n) {
    const double b = alpha + 1.0;
    if (n == 1) return alpha;
    if (n < 4) {
        const double nd = static_cast<double>(n);
        return std::pow(nd - 1.0, b) - std::pow(nd, alpha) * (nd - alpha - 1.0);
    }
    // n^b [ (1-x)^b - 1 + b x ] with x = 1/n: sum_{m>=2} C(b,m) (-x)^m.
    const double nd = static_cast<double>(n);
    const double x = 1.0 / nd;
    double coeff = b * (b - 1.0) / 2.0;  // C(b,2)
    double xp = x * x;
    double term = coeff * xp;
    double sum = term;
    double m = 2.0;
    while (std::fabs(term) > 1e-18 * std::fabs(sum)) {
        coeff *= (b - m) / (m + 1.0);
        m += 1.0;
        xp *= -x;
        term = coeff * xp;
        sum += term;
        if (m > 60.0) break;
    }
    return sum * std::pow(nd, b);
}

}  // namespace detail

class SingularWeights {
  public:
    SingularWeights(double alpha, TimeGrid grid) : alpha_(alpha), grid_(grid) {
        if (!(alpha > 0.0 && alpha < 1.0))
            throw std::invalid_argument("SingularWeights: alpha must lie in (0,1)");
        const std::size_t N = grid.intervals();
        c_ = std::pow(grid.step(), alpha) / (alpha * (alpha + 1.0));
        second_diff_.resize(N + 1, 0.0);
        first_col_.resize(N + 1, 0.0);
        for (std::size_t k = 1; k <= N; ++k) {
            second_diff_[k] = detail::power_second_difference(alpha, k);
            first_col_[k] = detail::first_column_factor(alpha, k);
        }
    }

    double alpha() const { return alpha_; }
    const TimeGrid& grid() const { return grid_; }

    // w[n][j]; rows are 0 for n = 0 (empty integral).
    double weight(std::size_t n, std::size_t j) const {
        if (n == 0) return 0.0;
        if (j == n) return c_;
        if (j == 0) return c_ * first_col_[n];
        return c_ * second_diff_[n - j];
    }

    // Kahan-compensated row sum; equals t_n^alpha/alpha up to rounding.
    double row_sum(std::size_t n) const {
        double sum = 0.0, comp = 0.0;
        for (std::size_t j = 0; j <= n; ++j) {
            const double y = weight(n, j) - comp;
            const double t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        }
        return sum;
    }

  private:
    double alpha_;
    TimeGrid grid_;
    double c_;
    std::vector<double> second_diff_;
    std::vector<double> first_col_;
};

inline SingularWeights build_singular_weights(double alpha, const TimeGrid& grid) {
    return SingularWeights(alpha, grid);
}

// sum_{j=0}^{n} w[n][j] phi(t_j) for a sampled integrand.
inline VectorXd singular_convolve(const SingularWeights& weights, const Trajectory& samples,
                                  std::size_t n) {
    if (samples.grid() != weights.grid())
        throw std::invalid_argument("singular_convolve: grid mismatch");
    if (n >= samples.grid().node_count())
        throw std::out_of_range("singular_convolve: node index out of range");
    VectorXd acc = VectorXd::Zero(samples.dim());
    for (std::size_t j = 0; j <= n; ++j)
        acc.noalias() += weights.weight(n, j) * samples.values().row(static_cast<Eigen::Index>(j)).transpose();
    return acc;
}

// Composite trapezoid of the samples over nodes 0..n.
inline VectorXd trapezoid_integral(const Trajectory& samples, std::size_t n) {
    if (n >= samples.grid().node_count())
        throw std::out_of_range("trapezoid_integral: node index out of range");
    VectorXd acc = VectorXd::Zero(samples.dim());
    if (n == 0) return acc;
    const double h = samples.grid().step();
    acc = 0.5 * (samples.at(0) + samples.at(n));
    for (std::size_t j = 1; j < n; ++j) acc += samples.at(j);
    return h * acc;
}

// Trapezoid weight of node j in the rule over nodes 0..n.
inline double trapezoid_weight(const TimeGrid& grid, std::size_t n, std::size_t j) {
    if (n == 0 || j > n) return 0.0;
    const double h = grid.step();
    return (j == 0 || j == n) ? 0.5 * h : h;
}

// ---------------------------------------------------------------------------
// Hat-function moments of the two-sided Jacobi weight s^(a-1) (1-s)^(a-1)
// on [0,1] split into m uniform cells. Used to integrate
//
//   / t_j
//   |     mu(r) (t_j - r)^(alpha-1) (r - t_k)^(alpha-1) dr
//   / t_k
//
// as (t_j - t_k)^(2 alpha - 1) * sum_i V[m][i] mu(t_{k+i}), with mu modeled
// piecewise linear. Rows are built lazily and cached.
// ---------------------------------------------------------------------------

class JacobiHatWeights {
  public:
    explicit JacobiHatWeights(double alpha) : alpha_(alpha) {
        if (!(alpha > 0.0 && alpha < 1.0))
            throw std::invalid_argument("JacobiHatWeights: alpha must lie in (0,1)");
    }

    double alpha() const { return alpha_; }

    const std::vector<double>& row(std::size_t m) const {
        if (m == 0) throw std::invalid_argument("JacobiHatWeights: m must be positive");
        if (m >= rows_.size()) rows_.resize(m + 1);
        if (rows_[m].empty()) rows_[m] = build_row(m);
        return rows_[m];
    }

  private:
    std::vector<double> build_row(std::size_t m) const {
        const double a = alpha_;
        const double md = static_cast<double>(m);
        const double b00 = beta_fn(a, a);
        const double b10 = beta_fn(a + 1.0, a);
        // Cumulative unregularized incomplete betas at the cell boundaries.
        std::vector<double> c0(m + 1), c1(m + 1);
        for (std::size_t i = 0; i <= m; ++i) {
            const double x = static_cast<double>(i) / md;
            c0[i] = b00 * inc_beta(a, a, x);
            c1[i] = b10 * inc_beta(a + 1.0, a, x);
        }
        std::vector<double> v(m + 1, 0.0);
        for (std::size_t i = 0; i < m; ++i) {
            const double m0 = c0[i + 1] - c0[i];
            const double m1 = c1[i + 1] - c1[i];
            const double s_lo = static_cast<double>(i) / md;
            const double s_hi = static_cast<double>(i + 1) / md;
            v[i] += (s_hi * m0 - m1) * md;
            v[i + 1] += (m1 - s_lo * m0) * md;
        }
        return v;
    }

    double alpha_;
    mutable std::vector<std::vector<double>> rows_;
};

// ---------------------------------------------------------------------------
// Discrete L^p machinery and the Young-type bound check
// ---------------------------------------------------------------------------

// (trapezoid of |psi|^p over nodes 0..n)^(1/p) for a scalar trajectory.
inline double lp_norm(const Trajectory& psi, double p, std::size_t n) {
    if (psi.dim() != 1) throw std::invalid_argument("lp_norm: scalar trajectories only");
    Trajectory powed(psi.grid(), 1);
    for (std::size_t k = 0; k < psi.grid().node_count(); ++k)
        powed.values()(static_cast<Eigen::Index>(k), 0) = std::pow(std::fabs(psi.values()(static_cast<Eigen::Index>(k), 0)), p);
    return std::pow(trapezoid_integral(powed, n)(0), 1.0 / p);
}

struct YoungBoundResult {
    double lhs = 0.0;
    double rhs = 0.0;
    bool satisfied = false;
};

// Checks the Young-type estimate for the singular convolution: the discrete
// L^q norm over [0, tau] of the convolved signal against
// (tau^{1-r(1-alpha)}/(1-r(1-alpha)))^{1/r} * ||psi||_{L^p}.
// Requires 1/q + 1 = 1/p + 1/r and r < 1/(1-alpha).
inline YoungBoundResult check_young_bound(const Trajectory& psi, double alpha, double p, double q,
                                          double r, double tau) {
    if (psi.dim() != 1) throw std::invalid_argument("check_young_bound: psi must be scalar");
    if (std::fabs(1.0 / q + 1.0 - 1.0 / p - 1.0 / r) > 1e-12)
        throw std::invalid_argument("check_young_bound: exponent relation 1/q+1 = 1/p+1/r violated");
    if (!(r >= 1.0 && r < 1.0 / (1.0 - alpha)))
        throw std::invalid_argument("check_young_bound: r must lie in [1, 1/(1-alpha))");
    const TimeGrid& grid = psi.grid();
    if (!(tau > 0.0 && tau <= grid.horizon() + 1e-12))
        throw std::invalid_argument("check_young_bound: tau must lie in (0, T]");

    const auto n_tau = static_cast<std::size_t>(std::llround(tau / grid.step()));
    const std::size_t n = std::min(std::max<std::size_t>(n_tau, 1), grid.intervals());

    SingularWeights weights(alpha, grid);
    Trajectory conv(grid, 1);
    for (std::size_t k = 0; k < grid.node_count(); ++k)
        conv.values()(static_cast<Eigen::Index>(k), 0) = (k <= n) ? singular_convolve(weights, psi, k)(0) : 0.0;

    YoungBoundResult res;
    res.lhs = lp_norm(conv, q, n);
    const double expo = 1.0 - r * (1.0 - alpha);
    res.rhs = std::pow(std::pow(grid.node(n), expo) / expo, 1.0 / r) * lp_norm(psi, p, grid.intervals());
    res.satisfied = res.lhs <= res.rhs * (1.0 + 1e-8);
    return res;
}

}  // namespace svoc
