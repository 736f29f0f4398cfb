#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace svoc {

using Eigen::MatrixXd;
using Eigen::RowVectorXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct SolverError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NonConvergence : SolverError {
    NonConvergence(std::string what, std::size_t node_, double residual_)
        : SolverError(std::move(what)), node(node_), residual(residual_) {}
    std::size_t node = 0;
    double residual = 0.0;
};

struct NonFinite : SolverError {
    explicit NonFinite(std::size_t node_)
        : SolverError("iterate left finite range at node " + std::to_string(node_)), node(node_) {}
    std::size_t node = 0;
};

struct SingularDiagonal : SolverError {
    SingularDiagonal(std::size_t node_, double cond_)
        : SolverError("near-singular diagonal system at node " + std::to_string(node_)),
          node(node_), condition(cond_) {}
    std::size_t node = 0;
    double condition = 0.0;
};

struct RNotPositive : SolverError {
    using SolverError::SolverError;
};

struct InfeasibleGuess : SolverError {
    using SolverError::SolverError;
};

// ---------------------------------------------------------------------------
// Grid and trajectories
// ---------------------------------------------------------------------------

// Uniform grid t_k = k*T/N on [0, T].
class TimeGrid {
  public:
    TimeGrid(double horizon, std::size_t node_count) : T_(horizon), N_(node_count) {
        if (!(horizon > 0.0) || !std::isfinite(horizon))
            throw std::invalid_argument("TimeGrid: horizon must be positive and finite");
        if (node_count == 0) throw std::invalid_argument("TimeGrid: node count must be positive");
        h_ = horizon / static_cast<double>(node_count);
    }

    double horizon() const { return T_; }
    std::size_t intervals() const { return N_; }
    std::size_t node_count() const { return N_ + 1; }
    double step() const { return h_; }
    double node(std::size_t k) const {
        return k == N_ ? T_ : static_cast<double>(k) * T_ / static_cast<double>(N_);
    }

    bool operator==(const TimeGrid& o) const { return T_ == o.T_ && N_ == o.N_; }
    bool operator!=(const TimeGrid& o) const { return !(*this == o); }

  private:
    double T_;
    std::size_t N_;
    double h_;
};

// Grid-sampled vector-valued function of time; row k holds the value at t_k.
class Trajectory {
  public:
    Trajectory(TimeGrid grid, Eigen::Index dim)
        : grid_(grid), values_(MatrixXd::Zero(static_cast<Eigen::Index>(grid.node_count()), dim)) {
        if (dim <= 0) throw std::invalid_argument("Trajectory: dim must be positive");
    }

    Trajectory(TimeGrid grid, MatrixXd values) : grid_(grid), values_(std::move(values)) {
        if (values_.rows() != static_cast<Eigen::Index>(grid_.node_count()))
            throw std::invalid_argument("Trajectory: row count must equal grid node count");
        if (values_.cols() <= 0) throw std::invalid_argument("Trajectory: dim must be positive");
        if (!values_.allFinite())
            throw std::invalid_argument("Trajectory: values must be finite");
    }

    static Trajectory constant(const TimeGrid& grid, const VectorXd& value) {
        Trajectory out(grid, value.size());
        out.values_.rowwise() = value.transpose();
        return out;
    }

    static Trajectory sampled(const TimeGrid& grid,
                              const std::function<VectorXd(double)>& fn) {
        MatrixXd vals;
        for (std::size_t k = 0; k < grid.node_count(); ++k) {
            VectorXd v = fn(grid.node(k));
            if (k == 0) vals.resize(static_cast<Eigen::Index>(grid.node_count()), v.size());
            vals.row(static_cast<Eigen::Index>(k)) = v.transpose();
        }
        return Trajectory(grid, std::move(vals));
    }

    const TimeGrid& grid() const { return grid_; }
    Eigen::Index dim() const { return values_.cols(); }
    const MatrixXd& values() const { return values_; }
    MatrixXd& values() { return values_; }

    VectorXd at(std::size_t k) const { return values_.row(static_cast<Eigen::Index>(k)).transpose(); }
    void set(std::size_t k, const VectorXd& v) { values_.row(static_cast<Eigen::Index>(k)) = v.transpose(); }

    bool all_finite() const { return values_.allFinite(); }

  private:
    TimeGrid grid_;
    MatrixXd values_;
};

// ---------------------------------------------------------------------------
// Problem data
// ---------------------------------------------------------------------------

using KernelFn = std::function<VectorXd(double t, double s, const VectorXd& x, const VectorXd& u)>;
using KernelJacFn = std::function<MatrixXd(double t, double s, const VectorXd& x, const VectorXd& u)>;

// Generators of the state equation
//
//            / t  f(t,s,x(s),u(s))        / t
//   x(t) = x0 +  |  ----------------- ds + |   g(t,s,x(s),u(s)) ds
//               / 0  (t-s)^(1-alpha)      / 0
//
// f, g must be defined on 0 <= s <= t <= T.
struct Dynamics {
    KernelFn f;
    KernelFn g;
    KernelJacFn f_x;
    KernelJacFn g_x;
    Eigen::Index state_dim = 0;
    Eigen::Index control_dim = 0;
    // Set false when the generator does not read its first argument; solvers
    // then hoist kernel evaluations out of the convolution loops. Purely an
    // optimization hint, results are unchanged.
    bool f_depends_on_outer_time = true;
    bool g_depends_on_outer_time = true;
};

struct Cost {
    std::function<double(double t, const VectorXd& x, const VectorXd& u)> l;
    std::function<RowVectorXd(double t, const VectorXd& x, const VectorXd& u)> l_x;
    std::function<double(const VectorXd& x0, const VectorXd& xT)> h;
    std::function<RowVectorXd(const VectorXd& x0, const VectorXd& xT)> h_x0;
    std::function<RowVectorXd(const VectorXd& x0, const VectorXd& xT)> h_x;
};

struct TerminalConstraint {
    enum class Kind { none, point, box };
    Kind kind = Kind::none;
    // point: target (x0*, xT*) stacked in R^{2n}; box: coordinatewise bounds on (x0, xT).
    VectorXd target;
    VectorXd lower;
    VectorXd upper;

    static TerminalConstraint none_set() { return {}; }
    static TerminalConstraint point_set(VectorXd x0_star, VectorXd xT_star) {
        TerminalConstraint c;
        c.kind = Kind::point;
        c.target.resize(x0_star.size() + xT_star.size());
        c.target << x0_star, xT_star;
        return c;
    }
    static TerminalConstraint box_set(VectorXd lower, VectorXd upper) {
        TerminalConstraint c;
        c.kind = Kind::box;
        c.lower = std::move(lower);
        c.upper = std::move(upper);
        return c;
    }
};

struct InequalityConstraint {
    std::function<double(double t, const VectorXd& x)> G;
    std::function<RowVectorXd(double t, const VectorXd& x)> G_x;
    std::string label;
};

struct ControlBounds {
    VectorXd lower;  // -inf allowed
    VectorXd upper;  // +inf allowed
};

// Linear-quadratic structure, attached when the problem was stated in matrix form.
struct LqData {
    std::function<MatrixXd(double t, double s)> A1, A2, B1, B2;
    std::function<MatrixXd(double t)> Q, R;
    MatrixXd M;
};

struct ProblemSpec {
    double alpha = 0.5;
    TimeGrid grid{1.0, 100};
    Dynamics dynamics;
    Cost cost;
    TerminalConstraint terminal;
    std::vector<InequalityConstraint> inequalities;
    VectorXd x0;
    ControlBounds control_bounds;
    VectorXd u_ref;
    std::optional<LqData> lq;
};

// Growth/continuity envelopes; only exercised by the bound-checking routines.
struct RegularityData {
    std::function<double(double s)> K0;
    std::function<double(double s)> K;
    std::function<double(double d)> omega;
};

inline std::vector<std::string> validate_regularity(const RegularityData& reg, const TimeGrid& grid) {
    std::vector<std::string> out;
    for (std::size_t k = 0; k < grid.node_count(); ++k) {
        const double s = grid.node(k);
        if (reg.K0 && reg.K0(s) < 0.0) {
            out.push_back("K0 negative at s=" + std::to_string(s));
            break;
        }
    }
    for (std::size_t k = 0; k < grid.node_count(); ++k) {
        const double s = grid.node(k);
        if (reg.K && reg.K(s) < 0.0) {
            out.push_back("K negative at s=" + std::to_string(s));
            break;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Multipliers and reports
// ---------------------------------------------------------------------------

struct MultiplierSet {
    double lambda = 1.0;
    VectorXd xi;                              // (xi_1, xi_2) stacked in R^{2n}
    std::vector<Trajectory> theta_density;    // densities of d(theta_i), one scalar trajectory each

    VectorXd xi1(Eigen::Index n) const {
        return xi.size() ? VectorXd(xi.head(n)) : VectorXd(VectorXd::Zero(n));
    }
    VectorXd xi2(Eigen::Index n) const {
        return xi.size() ? VectorXd(xi.tail(n)) : VectorXd(VectorXd::Zero(n));
    }

    // theta_i(t) = int_0^t Theta_i(s) ds (cumulative trapezoid).
    std::vector<Trajectory> theta_cumulative() const {
        std::vector<Trajectory> out;
        out.reserve(theta_density.size());
        for (const auto& dens : theta_density) {
            Trajectory cum(dens.grid(), 1);
            const double h = dens.grid().step();
            double acc = 0.0;
            cum.values()(0, 0) = 0.0;
            for (std::size_t k = 1; k < dens.grid().node_count(); ++k) {
                acc += 0.5 * h * (dens.values()(static_cast<Eigen::Index>(k - 1), 0) +
                                  dens.values()(static_cast<Eigen::Index>(k), 0));
                cum.values()(static_cast<Eigen::Index>(k), 0) = acc;
            }
            out.push_back(std::move(cum));
        }
        return out;
    }
};

struct SolveReport {
    double cost = 0.0;
    std::map<std::string, double> residuals;
    std::size_t iterations = 0;
    bool converged = false;
};

// ---------------------------------------------------------------------------
// Spec validation
// ---------------------------------------------------------------------------

namespace detail {

inline VectorXd random_in_box(std::mt19937_64& rng, const VectorXd& lo, const VectorXd& hi) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    VectorXd out(lo.size());
    for (Eigen::Index i = 0; i < lo.size(); ++i) {
        double a = std::isfinite(lo[i]) ? lo[i] : -1.0;
        double b = std::isfinite(hi[i]) ? hi[i] : 1.0;
        if (a > b) std::swap(a, b);
        out[i] = a + (b - a) * unit(rng);
    }
    return out;
}

inline bool jac_matches_fd(const std::function<VectorXd(const VectorXd&)>& fn,
                           const MatrixXd& jac, const VectorXd& x, double tol) {
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        const double step = 1e-6 * (1.0 + std::fabs(x[j]));
        VectorXd xp = x, xm = x;
        xp[j] += step;
        xm[j] -= step;
        const VectorXd fd = (fn(xp) - fn(xm)) / (2.0 * step);
        for (Eigen::Index i = 0; i < fd.size(); ++i) {
            const double ref = std::max({1.0, std::fabs(fd[i]), std::fabs(jac(i, j))});
            if (std::fabs(fd[i] - jac(i, j)) > tol * ref) return false;
        }
    }
    return true;
}

}  // namespace detail

// Returns an empty list iff the spec passes all structural and derivative checks.
// Deterministic for a fixed probe seed.
inline std::vector<std::string> validate_spec(const ProblemSpec& spec, std::uint64_t seed = 20240117u) {
    std::vector<std::string> diags;
    const double tol = 1e-5;

    if (!(spec.alpha > 0.0 && spec.alpha < 1.0)) diags.push_back("alpha out of (0,1)");
    if (spec.dynamics.state_dim <= 0) diags.push_back("state_dim must be positive");
    if (spec.dynamics.control_dim <= 0) diags.push_back("control_dim must be positive");
    if (spec.x0.size() != spec.dynamics.state_dim) diags.push_back("x0 dimension mismatch");

    if (spec.control_bounds.lower.size() != spec.dynamics.control_dim ||
        spec.control_bounds.upper.size() != spec.dynamics.control_dim) {
        diags.push_back("control_bounds dimension mismatch");
    } else {
        for (Eigen::Index i = 0; i < spec.control_bounds.lower.size(); ++i)
            if (spec.control_bounds.lower[i] > spec.control_bounds.upper[i]) {
                diags.push_back("control_bounds empty (lower > upper)");
                break;
            }
    }

    const Eigen::Index n = spec.dynamics.state_dim;
    if (spec.terminal.kind == TerminalConstraint::Kind::point &&
        spec.terminal.target.size() != 2 * n)
        diags.push_back("terminal point set has wrong dimension");
    if (spec.terminal.kind == TerminalConstraint::Kind::box) {
        if (spec.terminal.lower.size() != 2 * n || spec.terminal.upper.size() != 2 * n)
            diags.push_back("terminal box has wrong dimension");
        else
            for (Eigen::Index i = 0; i < 2 * n; ++i)
                if (spec.terminal.lower[i] > spec.terminal.upper[i]) {
                    diags.push_back("terminal box empty (lower > upper)");
                    break;
                }
    }

    if (!diags.empty()) return diags;

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const int probes = 4;
    const Eigen::Index d = spec.dynamics.control_dim;

    for (int probe = 0; probe < probes; ++probe) {
        const double t = spec.grid.horizon() * unit(rng);
        const double s = t * unit(rng);
        VectorXd x = spec.x0 + detail::random_in_box(rng, VectorXd::Constant(n, -1.0), VectorXd::Constant(n, 1.0));
        VectorXd u = detail::random_in_box(rng, spec.control_bounds.lower, spec.control_bounds.upper);

        if (spec.dynamics.f_x) {
            MatrixXd jac = spec.dynamics.f_x(t, s, x, u);
            auto fn = [&](const VectorXd& xx) { return spec.dynamics.f(t, s, xx, u); };
            if (!detail::jac_matches_fd(fn, jac, x, tol)) {
                diags.push_back("f_x disagrees with finite differences of f");
                break;
            }
        }
        if (spec.dynamics.g_x) {
            MatrixXd jac = spec.dynamics.g_x(t, s, x, u);
            auto fn = [&](const VectorXd& xx) { return spec.dynamics.g(t, s, xx, u); };
            if (!detail::jac_matches_fd(fn, jac, x, tol)) {
                diags.push_back("g_x disagrees with finite differences of g");
                break;
            }
        }
        if (spec.cost.l_x) {
            RowVectorXd lx = spec.cost.l_x(t, x, u);
            auto fn = [&](const VectorXd& xx) { return VectorXd::Constant(1, spec.cost.l(t, xx, u)); };
            if (!detail::jac_matches_fd(fn, lx, x, tol)) {
                diags.push_back("l_x disagrees with finite differences of l");
                break;
            }
        }
        if (spec.cost.h_x0 && spec.cost.h_x) {
            VectorXd xT = spec.x0 + detail::random_in_box(rng, VectorXd::Constant(n, -1.0), VectorXd::Constant(n, 1.0));
            RowVectorXd hx0 = spec.cost.h_x0(x, xT);
            RowVectorXd hx = spec.cost.h_x(x, xT);
            auto fn0 = [&](const VectorXd& a) { return VectorXd::Constant(1, spec.cost.h(a, xT)); };
            auto fnT = [&](const VectorXd& b) { return VectorXd::Constant(1, spec.cost.h(x, b)); };
            if (!detail::jac_matches_fd(fn0, hx0, x, tol)) {
                diags.push_back("h_x0 disagrees with finite differences of h");
                break;
            }
            if (!detail::jac_matches_fd(fnT, hx, xT, tol)) {
                diags.push_back("h_x disagrees with finite differences of h");
                break;
            }
        }
        bool broke = false;
        for (const auto& ineq : spec.inequalities) {
            RowVectorXd gx = ineq.G_x(t, x);
            auto fn = [&](const VectorXd& xx) { return VectorXd::Constant(1, ineq.G(t, xx)); };
            if (!detail::jac_matches_fd(fn, gx, x, tol)) {
                diags.push_back("G_x of '" + ineq.label + "' disagrees with finite differences of G");
                broke = true;
                break;
            }
        }
        if (broke) break;
    }
    return diags;
}

}  // namespace svoc
