#include <catch2/catch_amalgamated.hpp>
#include <svoc/quadrature.hpp>

#include <cmath>
#include <random>

#include "oracles.hpp"

using namespace svoc;

namespace {

Trajectory sample_scalar(const TimeGrid& grid, const std::function<double(double)>& fn) {
    Trajectory out(grid, 1);
    for (std::size_t k = 0; k < grid.node_count(); ++k)
        out.values()(static_cast<Eigen::Index>(k), 0) = fn(grid.node(k));
    return out;
}

}  // namespace

TEST_CASE("singular weights reject alpha outside (0,1)") {
    TimeGrid grid(1.0, 10);
    CHECK_THROWS_AS(build_singular_weights(1.2, grid), std::invalid_argument);
    CHECK_THROWS_AS(build_singular_weights(0.0, grid), std::invalid_argument);
}

TEST_CASE("diagonal weight formula") {
    // alpha = 0.5, N = 2, T = 1: w[2][2] = h^0.5 / (0.5 * 1.5)
    TimeGrid grid(1.0, 2);
    SingularWeights w(0.5, grid);
    CHECK(w.weight(2, 2) == Catch::Approx(std::sqrt(0.5) / 0.75).epsilon(1e-15));
}

TEST_CASE("weights are nonnegative") {
    for (double alpha : {0.1, 0.3, 0.5, 0.7, 0.9}) {
        TimeGrid grid(2.0, 400);
        SingularWeights w(alpha, grid);
        double lo = 0.0;
        for (std::size_t n = 1; n <= 400; ++n)
            for (std::size_t j = 0; j <= n; ++j) lo = std::min(lo, w.weight(n, j));
        CAPTURE(alpha);
        CHECK(lo >= 0.0);
    }
}

TEST_CASE("row sums reproduce the exact kernel integral") {
    // sum_j w[n][j] = t_n^alpha / alpha  (rule applied to 1)
    for (double alpha : {0.1, 0.5, 0.9}) {
        TimeGrid grid(1.0, 1000);
        SingularWeights w(alpha, grid);
        double worst = 0.0;
        for (std::size_t n = 1; n <= 1000; ++n) {
            const double exact = std::pow(grid.node(n), alpha) / alpha;
            worst = std::max(worst, std::fabs(w.row_sum(n) - exact) / exact);
        }
        CAPTURE(alpha);
        CHECK(worst <= 1e-12);
    }
}

TEST_CASE("rule is exact for linear integrands") {
    // int_0^1 s (1-s)^(-1/2) ds = B(2, 1/2) = 4/3
    TimeGrid grid(1.0, 64);
    SingularWeights w(0.5, grid);
    Trajectory phi = sample_scalar(grid, [](double s) { return s; });
    CHECK(singular_convolve(w, phi, 64)(0) == Catch::Approx(4.0 / 3.0).epsilon(1e-13));

    // same at N = 1000 per the stated tolerance
    TimeGrid fine(1.0, 1000);
    SingularWeights wf(0.5, fine);
    Trajectory phif = sample_scalar(fine, [](double s) { return s; });
    CHECK(std::fabs(singular_convolve(wf, phif, 1000)(0) - 4.0 / 3.0) <= 1e-6);
}

TEST_CASE("zero integrand convolves to zero") {
    TimeGrid grid(1.0, 32);
    SingularWeights w(0.5, grid);
    Trajectory zero(grid, 1);
    CHECK(singular_convolve(w, zero, 32)(0) == 0.0);
    CHECK_THROWS_AS(singular_convolve(w, zero, 33), std::out_of_range);
}

TEST_CASE("constant integrand uses the row-sum identity") {
    TimeGrid grid(1.0, 200);
    SingularWeights w(0.5, grid);
    Trajectory one = sample_scalar(grid, [](double) { return 1.0; });
    CHECK(singular_convolve(w, one, 200)(0) == Catch::Approx(2.0).epsilon(1e-13));
}

TEST_CASE("second-order convergence on a smooth integrand") {
    // phi(s) = s^2, alpha = 0.5 on [0,1]: exact value B(3, 1/2) = 16/15.
    const double exact = 16.0 / 15.0;
    double prev_err = 0.0;
    std::vector<double> errs;
    for (std::size_t n : {250u, 500u, 1000u}) {
        TimeGrid grid(1.0, n);
        SingularWeights w(0.5, grid);
        Trajectory phi = sample_scalar(grid, [](double s) { return s * s; });
        errs.push_back(std::fabs(singular_convolve(w, phi, n)(0) - exact));
    }
    CHECK(errs[0] / errs[1] >= 3.0);
    CHECK(errs[1] / errs[2] >= 3.0);
    (void)prev_err;
}

TEST_CASE("trapezoid integral basics") {
    TimeGrid grid(2.0, 100);
    Trajectory c = sample_scalar(grid, [](double) { return 3.0; });
    CHECK(trapezoid_integral(c, 100)(0) == Catch::Approx(6.0).epsilon(1e-14));
    CHECK(trapezoid_integral(c, 0)(0) == 0.0);

    Trajectory lin = sample_scalar(grid, [](double s) { return s; });
    CHECK(trapezoid_integral(lin, 100)(0) == Catch::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("trapezoid against a Simpson oracle on a random cubic") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> coef(-2.0, 2.0);
    const double a = coef(rng), b = coef(rng), c = coef(rng), d = coef(rng);
    auto cubic = [&](double s) { return ((a * s + b) * s + c) * s + d; };
    TimeGrid grid(1.0, 1000);
    Trajectory phi = sample_scalar(grid, cubic);
    const double ref = oracles::simpson(cubic, 0.0, 1.0, 2000);
    CHECK(std::fabs(trapezoid_integral(phi, 1000)(0) - ref) <= 1e-5);
}

TEST_CASE("jacobi hat weights integrate the two-sided kernel exactly") {
    for (double alpha : {0.25, 0.5, 0.8}) {
        JacobiHatWeights jac(alpha);
        for (std::size_t m : {1u, 2u, 7u, 40u}) {
            const auto& v = jac.row(m);
            double total = 0.0, lin = 0.0;
            for (std::size_t i = 0; i <= m; ++i) {
                total += v[i];
                lin += v[i] * static_cast<double>(i) / static_cast<double>(m);
            }
            CAPTURE(alpha, m);
            CHECK(total == Catch::Approx(beta_fn(alpha, alpha)).epsilon(1e-11));
            CHECK(lin == Catch::Approx(beta_fn(alpha + 1.0, alpha)).epsilon(1e-11));
        }
    }
}

TEST_CASE("young bound: zero signal") {
    TimeGrid grid(1.0, 100);
    Trajectory zero(grid, 1);
    auto res = check_young_bound(zero, 0.5, 2.0, 2.0, 1.0, 1.0);
    CHECK(res.lhs == 0.0);
    CHECK(res.satisfied);
}

TEST_CASE("young bound: constant signal") {
    TimeGrid grid(1.0, 400);
    Trajectory one(grid, 1);
    one.values().setOnes();
    auto res = check_young_bound(one, 0.5, 2.0, 2.0, 1.0, 1.0);
    CHECK(res.satisfied);
    CHECK(res.lhs / res.rhs < 1.0);
}

TEST_CASE("young bound rejects bad exponents") {
    TimeGrid grid(1.0, 50);
    Trajectory one(grid, 1);
    one.values().setOnes();
    CHECK_THROWS_AS(check_young_bound(one, 0.5, 2.0, 3.0, 1.0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(check_young_bound(one, 0.5, 2.0, 2.0, 3.0, 1.0), std::invalid_argument);
}

TEST_CASE("young bound holds across a randomized sweep") {
    std::mt19937_64 rng(20240518u);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    int checked = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const double alpha = std::vector<double>{0.25, 0.5, 0.75}[trial % 3];
        TimeGrid grid(1.0 + unit(rng), 200);
        Trajectory psi(grid, 1);
        // random piecewise-linear signal from a handful of knots
        const int knots = 4 + trial % 5;
        std::vector<double> kv(knots + 1);
        for (auto& v : kv) v = gauss(rng);
        for (std::size_t k = 0; k < grid.node_count(); ++k) {
            const double pos = static_cast<double>(k) / grid.intervals() * knots;
            const int i = std::min<int>(knots - 1, static_cast<int>(pos));
            const double frac = pos - i;
            psi.values()(static_cast<Eigen::Index>(k), 0) = kv[i] * (1 - frac) + kv[i + 1] * frac;
        }
        // exponents with 1/q + 1 = 1/p + 1/r, r in [1, 1/(1-alpha)), q >= 1
        const double r = 1.0 + unit(rng) * 0.9 * (1.0 / (1.0 - alpha) - 1.0);
        const double inv_p = 1.0 - 1.0 / r + (0.05 + 0.9 * unit(rng)) / r;
        const double p = 1.0 / inv_p;
        const double q = 1.0 / (1.0 / p + 1.0 / r - 1.0);
        const double tau = grid.horizon() * (0.2 + 0.8 * unit(rng));
        auto res = check_young_bound(psi, alpha, p, q, r, tau);
        CAPTURE(trial, alpha, p, q, r, tau);
        CHECK(res.satisfied);
        ++checked;
    }
    CHECK(checked >= 40);
}
