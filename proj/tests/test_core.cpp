#include <catch2/catch_amalgamated.hpp>
#include <svoc/core.hpp>
#include <svoc/forward.hpp>

#include <cmath>

using namespace svoc;

namespace {

// Minimal scalar spec with analytic Jacobians for the validation checks.
ProblemSpec make_valid_spec() {
    ProblemSpec spec;
    spec.alpha = 0.5;
    spec.grid = TimeGrid(2.0, 50);
    Dynamics dyn;
    dyn.state_dim = 1;
    dyn.control_dim = 1;
    dyn.f = [](double, double, const VectorXd& x, const VectorXd& u) -> VectorXd {
        return VectorXd::Constant(1, -x[0] + 2.0 * u[0]);
    };
    dyn.f_x = [](double, double, const VectorXd&, const VectorXd&) -> MatrixXd {
        return MatrixXd::Constant(1, 1, -1.0);
    };
    dyn.g = [](double, double, const VectorXd& x, const VectorXd& u) -> VectorXd {
        return VectorXd::Constant(1, 0.2 * x[0] + 0.1 * u[0]);
    };
    dyn.g_x = [](double, double, const VectorXd&, const VectorXd&) -> MatrixXd {
        return MatrixXd::Constant(1, 1, 0.2);
    };
    spec.dynamics = dyn;
    spec.cost.l = [](double, const VectorXd&, const VectorXd& u) { return 0.5 * u[0] * u[0]; };
    spec.cost.l_x = [](double, const VectorXd&, const VectorXd&) { return RowVectorXd::Zero(1); };
    spec.cost.h = [](const VectorXd&, const VectorXd& xT) { return 0.5 * xT[0] * xT[0]; };
    spec.cost.h_x0 = [](const VectorXd&, const VectorXd&) { return RowVectorXd::Zero(1); };
    spec.cost.h_x = [](const VectorXd&, const VectorXd& xT) {
        return RowVectorXd::Constant(1, xT[0]);
    };
    spec.x0 = VectorXd::Constant(1, 1.0);
    spec.control_bounds.lower = VectorXd::Constant(1, -10.0);
    spec.control_bounds.upper = VectorXd::Constant(1, 10.0);
    spec.u_ref = VectorXd::Zero(1);
    return spec;
}

}  // namespace

TEST_CASE("time grid basics") {
    TimeGrid g(2.0, 8);
    CHECK(g.step() == 0.25);
    CHECK(g.node(0) == 0.0);
    CHECK(g.node(8) == 2.0);
    for (std::size_t k = 1; k <= 8; ++k) CHECK(g.node(k) > g.node(k - 1));
    CHECK(std::fabs(g.step() * 8 - 2.0) <= 1e-15);
    CHECK_THROWS_AS(TimeGrid(0.0, 5), std::invalid_argument);
    CHECK_THROWS_AS(TimeGrid(1.0, 0), std::invalid_argument);
}

TEST_CASE("trajectory rejects non-finite values and bad shapes") {
    TimeGrid g(1.0, 4);
    MatrixXd vals = MatrixXd::Zero(5, 2);
    CHECK_NOTHROW(Trajectory(g, vals));
    vals(2, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(Trajectory(g, vals), std::invalid_argument);
    MatrixXd wrong = MatrixXd::Zero(4, 2);
    CHECK_THROWS_AS(Trajectory(g, wrong), std::invalid_argument);
}

TEST_CASE("multiplier cumulative integral") {
    TimeGrid g(2.0, 4);
    MultiplierSet mult;
    Trajectory dens(g, 1);
    dens.values().setOnes();
    mult.theta_density.push_back(dens);
    auto cum = mult.theta_cumulative();
    REQUIRE(cum.size() == 1);
    CHECK(cum[0].values()(0, 0) == 0.0);
    CHECK(cum[0].values()(4, 0) == Catch::Approx(2.0));
}

TEST_CASE("validate_spec accepts a well-formed spec") {
    CHECK(validate_spec(make_valid_spec()).empty());
}

TEST_CASE("validate_spec flags alpha out of range") {
    ProblemSpec spec = make_valid_spec();
    spec.alpha = 1.2;
    const auto diags = validate_spec(spec);
    REQUIRE_FALSE(diags.empty());
    CHECK(diags[0] == "alpha out of (0,1)");
}

TEST_CASE("validate_spec flags a wrong jacobian by name") {
    ProblemSpec spec = make_valid_spec();
    spec.dynamics.f_x = [](double, double, const VectorXd&, const VectorXd&) -> MatrixXd {
        return MatrixXd::Constant(1, 1, -2.0);  // 2x the true jacobian
    };
    const auto diags = validate_spec(spec);
    REQUIRE_FALSE(diags.empty());
    CHECK(diags[0].find("f_x") != std::string::npos);
}

TEST_CASE("validate_spec flags empty boxes") {
    ProblemSpec spec = make_valid_spec();
    spec.control_bounds.lower[0] = 1.0;
    spec.control_bounds.upper[0] = -1.0;
    const auto diags = validate_spec(spec);
    REQUIRE_FALSE(diags.empty());
    CHECK(diags[0].find("control_bounds") != std::string::npos);

    ProblemSpec spec2 = make_valid_spec();
    spec2.terminal = TerminalConstraint::box_set(VectorXd::Constant(2, 1.0),
                                                 VectorXd::Constant(2, -1.0));
    const auto diags2 = validate_spec(spec2);
    REQUIRE_FALSE(diags2.empty());
    CHECK(diags2[0].find("terminal box") != std::string::npos);
}

TEST_CASE("validate_spec is deterministic for a fixed seed") {
    ProblemSpec spec = make_valid_spec();
    spec.dynamics.g_x = [](double, double, const VectorXd&, const VectorXd&) -> MatrixXd {
        return MatrixXd::Constant(1, 1, 0.35);  // wrong on purpose
    };
    const auto a = validate_spec(spec, 123u);
    const auto b = validate_spec(spec, 123u);
    CHECK(a == b);
}

TEST_CASE("regularity envelopes must be nonnegative") {
    RegularityData reg;
    reg.K0 = [](double) { return 1.0; };
    reg.K = [](double s) { return s - 0.5; };
    reg.omega = [](double d) { return d; };
    TimeGrid grid(1.0, 10);
    const auto diags = validate_regularity(reg, grid);
    REQUIRE(diags.size() == 1);
    CHECK(diags[0].find("K negative") != std::string::npos);
}
