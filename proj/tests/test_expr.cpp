#include <catch2/catch_amalgamated.hpp>
#include <svoc/expr.hpp>

#include <cmath>
#include <random>

using namespace svoc::expr;

TEST_CASE("basic arithmetic and precedence") {
    CHECK(eval(parse("2+3*4"), {}) == 14.0);
    CHECK(eval(parse("2^3^2"), {}) == 512.0);          // right-associative
    CHECK(eval(parse("u1^2/2 + x1"), {{"u1", 4.0}, {"x1", 1.0}}) == 9.0);
    CHECK(eval(parse("-2^2"), {}) == -4.0);            // ^ binds tighter than unary minus
    CHECK(eval(parse("(1+2)*(3-5)"), {}) == -6.0);
}

TEST_CASE("figure-style source parses and evaluates") {
    auto f = parse("-0.4*sin(2*3.141592653589793*x1)");
    CHECK(eval(f, {{"x1", 0.25}}) == Catch::Approx(-0.4).epsilon(1e-12));
    auto g = parse("-0.4*sin(2*pi*x1)");
    CHECK(eval(g, {{"x1", 0.25}}) == Catch::Approx(-0.4).epsilon(1e-12));
}

TEST_CASE("gamma constant identity") {
    CHECK(eval(parse("gamma(0.5)^2"), {}) == Catch::Approx(M_PI).epsilon(1e-10));
}

TEST_CASE("example constraint expression at its boundary") {
    auto g = parse("-x1 - (t^2/5 + 20)");
    CHECK(eval(g, {{"t", 0.0}, {"x1", -20.0}}) == 0.0);
    CHECK(eval(g, {{"t", 1.0}, {"x1", -10.0}}) == Catch::Approx(-10.2).epsilon(1e-14));
}

TEST_CASE("parse errors carry positions") {
    CHECK_THROWS_AS(parse("x1 +"), ParseError);
    try {
        parse("x1 +");
    } catch (const ParseError& e) {
        CHECK(e.col == 5);
    }
    CHECK_THROWS_AS(parse("sin(1"), ParseError);
    CHECK_THROWS_AS(parse("foo(1)"), ParseError);
    CHECK_THROWS_AS(parse("1 2"), ParseError);
}

TEST_CASE("evaluation errors are typed") {
    CHECK_THROWS_AS(eval(parse("x9"), {}), UnboundVariable);
    CHECK_THROWS_AS(eval(parse("1/0"), {}), DomainError);
    CHECK_THROWS_AS(eval(parse("log(-1)"), {}), DomainError);
    CHECK_THROWS_AS(eval(parse("sqrt(-1)"), {}), DomainError);
}

TEST_CASE("print round-trips through parse") {
    std::vector<std::string> sources = {
        "1+2*3",
        "-0.4*sin(2*pi*x1)",
        "u1^2/2 + x1",
        "x1 - (t^2/5 + 20)",
        "a/(b/c)",
        "(x1+x2)^(u1-1)",
        "-(x1+1)",
        "2^-3",
        "sqrt(abs(x1))*exp(-t)",
    };
    for (const auto& src : sources) {
        CAPTURE(src);
        auto ast = parse(src);
        auto round = parse(print(ast));
        CHECK(structurally_equal(ast, round));
    }
}

TEST_CASE("symbolic derivative simple cases") {
    auto d1 = differentiate(parse("x1^2"), "x1");
    CHECK(eval(d1, {{"x1", 3.0}}) == 6.0);
    auto d2 = differentiate(parse("u1^2/2"), "u1");
    CHECK(eval(d2, {{"u1", 3.0}}) == 3.0);
    auto d3 = differentiate(parse("sin(x1)*cos(x1)"), "x1");
    CHECK(eval(d3, {{"x1", 0.3}}) ==
          Catch::Approx(std::cos(0.6)).epsilon(1e-12));  // d(sin cos) = cos(2x)
    CHECK_THROWS_AS(differentiate(parse("gamma(x1)"), "x1"), UnsupportedDerivative);
}

TEST_CASE("derivatives agree with central differences on random probes") {
    std::vector<std::string> sources = {
        "-0.4*sin(2*pi*x1)",
        "x1^3 - 2*x1*u1 + exp(-x1)",
        "sqrt(x1^2 + 1)/(u1^2 + 2)",
        "log(x1^2 + 1)*cos(u1)",
        "x1^u1",
    };
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> unif(0.2, 1.7);
    for (const auto& src : sources) {
        auto e = parse(src);
        auto dx = differentiate(e, "x1");
        for (int probe = 0; probe < 8; ++probe) {
            const double x = unif(rng), u = unif(rng);
            Env env{{"x1", x}, {"u1", u}};
            const double step = 1e-6 * (1.0 + std::fabs(x));
            Env ep = env, em = env;
            ep["x1"] = x + step;
            em["x1"] = x - step;
            const double fd = (eval(e, ep) - eval(e, em)) / (2.0 * step);
            const double sym = eval(dx, env);
            CAPTURE(src, x, u);
            CHECK(sym == Catch::Approx(fd).margin(1e-6 * (1.0 + std::fabs(fd))));
        }
    }
}

TEST_CASE("figure-1 derivative matches finite difference at a quarter period") {
    auto e = parse("-0.4*sin(2*pi*x1)");
    auto dx = differentiate(e, "x1");
    const double x = 0.25;
    const double step = 1e-6;
    const double fd = (eval(e, {{"x1", x + step}}) - eval(e, {{"x1", x - step}})) / (2 * step);
    CHECK(eval(dx, {{"x1", x}}) == Catch::Approx(fd).margin(1e-6));
}

TEST_CASE("parse determinism") {
    auto a = parse("1 + x1*  sin(t)");
    auto b = parse("1 + x1*sin(t)");
    CHECK(structurally_equal(a, b));
    CHECK(print(a) == print(b));
}
