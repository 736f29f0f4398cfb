#pragma once

#include <cmath>
#include <cstddef>

#include "core.hpp"
#include "quadrature.hpp"
#include "special_functions.hpp"

namespace svoc {

struct ForwardOptions {
    double tol_fp = 1e-10;
    std::size_t max_inner = 200;
    std::size_t undamped_inner = 10;   // plain fixed point first
    std::size_t newton_after = 50;     // then damped; Newton past this count
    double damping = 0.5;
};

// Time stepping for the nonlinear state equation. At node n the discrete
// equation is
//
//   x_n = x0 + sum_{j<=n} w[n][j] f(t_n,t_j,x_j,u_j) + trapz g(t_n,.,x,u)
//
// with the diagonal term (the w[n][n] and h/2 weights on node n) implicit in
// x_n; it is resolved by fixed-point iteration, damped after a few sweeps,
// with a Newton fallback on the diagonal Jacobian.
inline Trajectory solve_forward(const ProblemSpec& spec, const Trajectory& control,
                                const VectorXd& x0, const ForwardOptions& opts = {}) {
    const TimeGrid& grid = spec.grid;
    if (control.grid() != grid) throw std::invalid_argument("solve_forward: control grid mismatch");
    if (control.dim() != spec.dynamics.control_dim)
        throw std::invalid_argument("solve_forward: control dimension mismatch");
    if (x0.size() != spec.dynamics.state_dim)
        throw std::invalid_argument("solve_forward: x0 dimension mismatch");

    const SingularWeights weights(spec.alpha, grid);
    const std::size_t N = grid.intervals();
    const double T = grid.horizon();
    const auto& dyn = spec.dynamics;
    const bool fast_f = !dyn.f_depends_on_outer_time;
    const bool fast_g = !dyn.g_depends_on_outer_time;

    Trajectory x(grid, dyn.state_dim);
    x.set(0, x0);

    // Kernel values at finalized nodes, reused across rows when the generator
    // ignores its outer time argument.
    std::vector<VectorXd> fvals(N + 1), gvals(N + 1);
    if (fast_f) fvals[0] = dyn.f(T, 0.0, x0, control.at(0));
    if (fast_g) gvals[0] = dyn.g(T, 0.0, x0, control.at(0));

    for (std::size_t n = 1; n <= N; ++n) {
        const double tn = grid.node(n);
        const VectorXd un = control.at(n);

        // Explicit part: all contributions from nodes j < n.
        VectorXd base = x0;
        for (std::size_t j = 0; j < n; ++j) {
            const double tj = grid.node(j);
            if (fast_f) {
                base.noalias() += weights.weight(n, j) * fvals[j];
            } else {
                base.noalias() += weights.weight(n, j) * dyn.f(tn, tj, x.at(j), control.at(j));
            }
            if (fast_g) {
                base.noalias() += trapezoid_weight(grid, n, j) * gvals[j];
            } else {
                base.noalias() += trapezoid_weight(grid, n, j) * dyn.g(tn, tj, x.at(j), control.at(j));
            }
        }

        const double wf = weights.weight(n, n);
        const double wg = trapezoid_weight(grid, n, n);
        auto rhs = [&](const VectorXd& xx) -> VectorXd {
            return base + wf * dyn.f(tn, tn, xx, un) + wg * dyn.g(tn, tn, xx, un);
        };

        VectorXd xn = x.at(n - 1);  // warm start from the previous node
        double residual = std::numeric_limits<double>::infinity();
        bool done = false;
        for (std::size_t it = 0; it < opts.max_inner; ++it) {
            VectorXd target = rhs(xn);
            if (!target.allFinite()) throw NonFinite(n);
            residual = (target - xn).norm();
            if (residual <= opts.tol_fp) {
                xn = target;
                done = true;
                break;
            }
            if (it < opts.undamped_inner) {
                xn = target;
            } else if (it < opts.newton_after) {
                xn = (1.0 - opts.damping) * xn + opts.damping * target;
            } else {
                // Newton on F(x) = x - rhs(x), backtracked on the residual so a
                // non-contractive diagonal (strongly singular kernels) cannot cycle.
                MatrixXd jac = MatrixXd::Identity(dyn.state_dim, dyn.state_dim);
                jac -= wf * dyn.f_x(tn, tn, xn, un);
                jac -= wg * dyn.g_x(tn, tn, xn, un);
                const VectorXd step = jac.partialPivLu().solve(target - xn);
                double scale = 1.0;
                VectorXd candidate = xn + step;
                for (int bt = 0; bt < 30; ++bt) {
                    if (candidate.allFinite()) {
                        const double cand_res = (rhs(candidate) - candidate).norm();
                        if (cand_res < residual) break;
                    }
                    scale *= 0.5;
                    candidate = xn + scale * step;
                }
                xn = candidate;
            }
            if (!xn.allFinite()) throw NonFinite(n);
        }
        if (!done && dyn.state_dim == 1) {
            // Scalar rescue: backtracked Newton can stall in a residual basin
            // between roots when the diagonal map is strongly non-monotone.
            // Bracket a sign change of F(x) = x - rhs(x) and bisect.
            auto fval = [&](double v) { return v - rhs(VectorXd::Constant(1, v))(0); };
            const double center = xn(0);
            double lo = center, hi = center;
            double flo = fval(lo), fhi = fval(hi);
            double span = std::max(1.0, std::fabs(center));
            for (int grow = 0; grow < 60 && flo * fhi > 0.0; ++grow) {
                lo = center - span;
                hi = center + span;
                flo = fval(lo);
                fhi = fval(hi);
                if (flo * fhi > 0.0) span *= 1.5;
            }
            if (flo * fhi <= 0.0) {
                for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, std::fabs(hi)); ++it) {
                    const double mid = 0.5 * (lo + hi);
                    const double fm = fval(mid);
                    if (flo * fm <= 0.0) {
                        hi = mid;
                        fhi = fm;
                    } else {
                        lo = mid;
                        flo = fm;
                    }
                }
                xn = VectorXd::Constant(1, 0.5 * (lo + hi));
                done = (rhs(xn) - xn).norm() <= opts.tol_fp;
            }
        }
        if (!done) {
            // Newton may land exactly on the root without one more rhs evaluation.
            residual = (rhs(xn) - xn).norm();
            if (residual > opts.tol_fp)
                throw NonConvergence("forward step did not converge", n, residual);
        }
        x.set(n, xn);
        if (fast_f) fvals[n] = dyn.f(T, tn, xn, un);
        if (fast_g) gvals[n] = dyn.g(T, tn, xn, un);
    }
    return x;
}

// Largest residual of the discrete state equation after a solve.
inline double forward_residual(const ProblemSpec& spec, const Trajectory& control,
                               const Trajectory& x) {
    const TimeGrid& grid = spec.grid;
    const SingularWeights weights(spec.alpha, grid);
    const auto& dyn = spec.dynamics;
    double worst = 0.0;
    for (std::size_t n = 1; n <= grid.intervals(); ++n) {
        const double tn = grid.node(n);
        VectorXd acc = x.at(0);
        for (std::size_t j = 0; j <= n; ++j) {
            const double tj = grid.node(j);
            acc.noalias() += weights.weight(n, j) * dyn.f(tn, tj, x.at(j), control.at(j));
            acc.noalias() += trapezoid_weight(grid, n, j) * dyn.g(tn, tj, x.at(j), control.at(j));
        }
        worst = std::max(worst, (x.at(n) - acc).norm());
    }
    return worst;
}

// Dynamics of the Caputo-type equation D^alpha x = A x, i.e.
// f(t,s,x,u) = A x / Gamma(alpha), g = 0.
inline Dynamics caputo_to_volterra(const MatrixXd& coeff, double alpha) {
    if (coeff.rows() != coeff.cols())
        throw std::invalid_argument("caputo_to_volterra: matrix must be square");
    const double scale = 1.0 / gamma_fn(alpha);
    const Eigen::Index n = coeff.rows();
    Dynamics dyn;
    dyn.state_dim = n;
    dyn.control_dim = 1;
    dyn.f_depends_on_outer_time = false;
    dyn.g_depends_on_outer_time = false;
    MatrixXd a = coeff;
    dyn.f = [a, scale](double, double, const VectorXd& x, const VectorXd&) -> VectorXd {
        return scale * (a * x);
    };
    dyn.f_x = [a, scale, n](double, double, const VectorXd&, const VectorXd&) -> MatrixXd {
        return scale * a;
    };
    dyn.g = [n](double, double, const VectorXd&, const VectorXd&) -> VectorXd {
        return VectorXd::Zero(n);
    };
    dyn.g_x = [n](double, double, const VectorXd&, const VectorXd&) -> MatrixXd {
        return MatrixXd::Zero(n, n);
    };
    return dyn;
}

// Scalar demo system: x0 = 1, f = -0.4 sin(2 pi x), g = -x on [0, 1].
inline ProblemSpec figure1_spec(double alpha, std::size_t n_nodes) {
    ProblemSpec spec;
    spec.alpha = alpha;
    spec.grid = TimeGrid(1.0, n_nodes);
    Dynamics dyn;
    dyn.state_dim = 1;
    dyn.control_dim = 1;
    dyn.f_depends_on_outer_time = false;
    dyn.g_depends_on_outer_time = false;
    constexpr double two_pi = 6.283185307179586476925286766559;
    dyn.f = [](double, double, const VectorXd& x, const VectorXd&) -> VectorXd {
        return VectorXd::Constant(1, -0.4 * std::sin(two_pi * x[0]));
    };
    dyn.f_x = [](double, double, const VectorXd& x, const VectorXd&) -> MatrixXd {
        return MatrixXd::Constant(1, 1, -0.4 * two_pi * std::cos(two_pi * x[0]));
    };
    dyn.g = [](double, double, const VectorXd& x, const VectorXd&) -> VectorXd { return -x; };
    dyn.g_x = [](double, double, const VectorXd&, const VectorXd&) -> MatrixXd {
        return MatrixXd::Constant(1, 1, -1.0);
    };
    spec.dynamics = dyn;
    spec.x0 = VectorXd::Constant(1, 1.0);
    spec.control_bounds.lower = VectorXd::Constant(1, -1.0);
    spec.control_bounds.upper = VectorXd::Constant(1, 1.0);
    spec.u_ref = VectorXd::Zero(1);
    return spec;
}

inline Trajectory solve_forward_figure1(double alpha, std::size_t n_nodes,
                                        const ForwardOptions& opts = {}) {
    if (!(alpha > 0.0 && alpha < 1.0))
        throw std::invalid_argument("solve_forward_figure1: alpha must lie in (0,1)");
    ProblemSpec spec = figure1_spec(alpha, n_nodes);
    Trajectory u(spec.grid, 1);
    return solve_forward(spec, u, spec.x0, opts);
}

}  // namespace svoc
