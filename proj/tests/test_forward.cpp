#include <catch2/catch_amalgamated.hpp>
#include <svoc/forward.hpp>
#include <svoc/special_functions.hpp>

#include <cmath>

#include "oracles.hpp"

using namespace svoc;

namespace {

ProblemSpec scalar_spec(double alpha, double horizon, std::size_t n, Dynamics dyn) {
    ProblemSpec spec;
    spec.alpha = alpha;
    spec.grid = TimeGrid(horizon, n);
    spec.dynamics = std::move(dyn);
    spec.x0 = VectorXd::Constant(1, 1.0);
    spec.control_bounds.lower = VectorXd::Constant(1, -1.0);
    spec.control_bounds.upper = VectorXd::Constant(1, 1.0);
    spec.u_ref = VectorXd::Zero(1);
    return spec;
}

Dynamics zero_dynamics() {
    Dynamics dyn;
    dyn.state_dim = 1;
    dyn.control_dim = 1;
    dyn.f_depends_on_outer_time = false;
    dyn.g_depends_on_outer_time = false;
    dyn.f = [](double, double, const VectorXd&, const VectorXd&) { return VectorXd::Zero(1); };
    dyn.g = [](double, double, const VectorXd&, const VectorXd&) { return VectorXd::Zero(1); };
    dyn.f_x = [](double, double, const VectorXd&, const VectorXd&) { return MatrixXd::Zero(1, 1); };
    dyn.g_x = [](double, double, const VectorXd&, const VectorXd&) { return MatrixXd::Zero(1, 1); };
    return dyn;
}

}  // namespace

TEST_CASE("no dynamics keeps the state constant") {
    ProblemSpec spec = scalar_spec(0.5, 1.0, 40, zero_dynamics());
    Trajectory u(spec.grid, 1);
    Trajectory x = solve_forward(spec, u, spec.x0);
    for (std::size_t k = 0; k <= 40; ++k) CHECK(x.values()(k, 0) == 1.0);
}

TEST_CASE("caputo bridge matches the mittag-leffler series") {
    // f = -x / Gamma(0.5), g = 0, x0 = 1 on [0,1]: x(t) = E_{1/2}(-sqrt(t)).
    ProblemSpec spec = scalar_spec(0.5, 1.0, 2000, caputo_to_volterra(MatrixXd::Constant(1, 1, -1.0), 0.5));
    Trajectory u(spec.grid, 1);
    Trajectory x = solve_forward(spec, u, spec.x0);
    for (double t : {0.25, 0.5, 1.0}) {
        const auto k = static_cast<std::size_t>(std::llround(t * 2000));
        const double ref = oracles::mittag_leffler(0.5, -std::sqrt(t));
        CAPTURE(t);
        CHECK(std::fabs(x.values()(static_cast<Eigen::Index>(k), 0) - ref) <= 1e-3);
    }
}

TEST_CASE("caputo bridge trivial and decoupled cases") {
    // A = 0 gives f = 0
    Dynamics zero = caputo_to_volterra(MatrixXd::Zero(1, 1), 0.5);
    CHECK(zero.f(1.0, 0.5, VectorXd::Constant(1, 3.0), VectorXd::Zero(1))(0) == 0.0);
    // A = -I_2 equals two scalar runs componentwise
    ProblemSpec two = scalar_spec(0.5, 1.0, 200, caputo_to_volterra(-MatrixXd::Identity(2, 2), 0.5));
    two.x0 = VectorXd::Constant(2, 1.0);
    Trajectory u2(two.grid, 1);
    Trajectory x2 = solve_forward(two, u2, two.x0);
    ProblemSpec one = scalar_spec(0.5, 1.0, 200, caputo_to_volterra(-MatrixXd::Identity(1, 1), 0.5));
    Trajectory u1(one.grid, 1);
    Trajectory x1 = solve_forward(one, u1, one.x0);
    // componentwise equal up to the inner solver tolerance (the vector solve
    // stops on the joint residual)
    CHECK((x2.values().col(0) - x1.values().col(0)).cwiseAbs().maxCoeff() <= 5e-10);
    CHECK((x2.values().col(1) - x1.values().col(0)).cwiseAbs().maxCoeff() <= 5e-10);
}

TEST_CASE("ode bridge reproduces the exponential") {
    Dynamics dyn = zero_dynamics();
    dyn.g = [](double, double, const VectorXd& x, const VectorXd&) -> VectorXd { return -x; };
    dyn.g_x = [](double, double, const VectorXd&, const VectorXd&) {
        return MatrixXd::Constant(1, 1, -1.0);
    };
    ProblemSpec spec = scalar_spec(0.5, 1.0, 2000, dyn);
    Trajectory u(spec.grid, 1);
    Trajectory x = solve_forward(spec, u, spec.x0);
    double worst = 0.0;
    for (std::size_t k = 0; k <= 2000; ++k)
        worst = std::max(worst, std::fabs(x.values()(static_cast<Eigen::Index>(k), 0) -
                                          std::exp(-spec.grid.node(k))));
    CHECK(worst <= 1e-5);
}

TEST_CASE("discrete residual is at the solver tolerance") {
    Trajectory x = solve_forward_figure1(0.4, 300);
    ProblemSpec spec = figure1_spec(0.4, 300);
    Trajectory u(spec.grid, 1);
    CHECK(forward_residual(spec, u, x) <= 1e-10);
}

TEST_CASE("two identical runs are bitwise identical") {
    Trajectory a = solve_forward_figure1(0.3, 400);
    Trajectory b = solve_forward_figure1(0.3, 400);
    CHECK((a.values() - b.values()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("figure-1 ordering: the most singular run deviates most at t = 0.01") {
    const std::size_t n = 800;  // t = 0.01 lies on the grid (T = 1)
    auto deviation = [n](double alpha) {
        Trajectory x = solve_forward_figure1(alpha, n);
        const auto k = static_cast<std::size_t>(std::llround(0.01 * n));
        return std::fabs(x.values()(static_cast<Eigen::Index>(k), 0) - 1.0);
    };
    CHECK(deviation(0.9) < deviation(0.1));
}

TEST_CASE("figure-1 grid errors") {
    CHECK_THROWS_AS(solve_forward_figure1(0.5, 0), std::invalid_argument);
    CHECK_THROWS_AS(solve_forward_figure1(1.5, 10), std::invalid_argument);
}

TEST_CASE("figure-1 self-refinement") {
    Trajectory coarse = solve_forward_figure1(0.5, 500);
    Trajectory fine = solve_forward_figure1(0.5, 2000);
    double worst = 0.0;
    for (std::size_t k = 0; k <= 500; ++k)
        worst = std::max(worst, std::fabs(coarse.values()(static_cast<Eigen::Index>(k), 0) -
                                          fine.values()(static_cast<Eigen::Index>(4 * k), 0)));
    CHECK(worst <= 1e-3);
}

TEST_CASE("initial-condition stability ratio") {
    // Lipschitz shadow: || x(x0 + d) - x(x0) ||_{L2} <= 10 d for small d.
    ProblemSpec spec = figure1_spec(0.6, 400);
    Trajectory u(spec.grid, 1);
    Trajectory base = solve_forward(spec, u, spec.x0);
    for (double delta : {1e-3, 1e-4}) {
        Trajectory pert = solve_forward(spec, u, spec.x0 + VectorXd::Constant(1, delta));
        Trajectory diff(spec.grid, 1);
        diff.values() = pert.values() - base.values();
        Trajectory sq(spec.grid, 1);
        sq.values() = diff.values().array().square();
        const double l2 = std::sqrt(trapezoid_integral(sq, spec.grid.intervals())(0));
        CAPTURE(delta);
        CHECK(l2 <= 10.0 * delta);
    }
}

TEST_CASE("strong singularity requires the newton fallback") {
    // alpha = 0.02 makes the diagonal weight ~ 1/alpha, far beyond the plain
    // fixed-point contraction range.
    Dynamics dyn = zero_dynamics();
    dyn.f = [](double, double, const VectorXd& x, const VectorXd&) -> VectorXd { return -x; };
    dyn.f_x = [](double, double, const VectorXd&, const VectorXd&) {
        return MatrixXd::Constant(1, 1, -1.0);
    };
    ProblemSpec spec = scalar_spec(0.02, 1.0, 100, dyn);
    Trajectory u(spec.grid, 1);
    Trajectory x = solve_forward(spec, u, spec.x0);
    CHECK(forward_residual(spec, u, x) <= 1e-10);
    // the singular term dominates: x collapses toward 0 immediately
    CHECK(x.values()(1, 0) < 0.05);
}
