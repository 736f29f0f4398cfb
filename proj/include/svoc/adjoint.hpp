#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "core.hpp"
#include "linear.hpp"
#include "quadrature.hpp"

namespace svoc {

struct AdjointConfig {
    RowVectorXd terminal_coeff;   // c = lambda h_x(x0, x(T)) + xi_2^T
    MultiplierSet multipliers;    // lambda and the constraint densities Theta_i
    double endpoint_guard = 0.05; // fraction of nodes before T flagged as convention-affected

    void validate() const {
        if (!(endpoint_guard > 0.0 && endpoint_guard <= 0.1))
            throw std::invalid_argument("AdjointConfig: endpoint_guard must lie in (0, 0.1]");
    }
};

// The costate solves the backward equation
//
//          / T  f_x(r,t)^T p(r)        f_x(T,t)^T c^T     / T
//   p(t) = |    --------------- dr  -  --------------  +  |   g_x(r,t)^T p(r) dr
//          / t  (r-t)^(1-alpha)        (T-t)^(1-alpha)    / t
//
//          - g_x(T,t)^T c^T - lambda l_x(t)^T - sum_i G_x^i(t)^T Theta_i(t)
//
// (kernels frozen along (xbar, ubar)). The pointwise source blows up like
// (T-t)^(alpha-1), so p is decomposed as
//
//   p(t) = p_smooth(t) + (T-t)^(alpha-1) sigma(t),   sigma(t) = -f_x(T,t)^T c^T,
//
// which cancels the blow-up from the equation for p_smooth. The sigma terms
// re-enter the integrals through product rules that carry the (T-r)^(alpha-1)
// factor analytically (a two-sided Jacobi rule against f_x, a one-sided rule
// against g_x), so no quadrature ever samples the unbounded part.
struct AdjointSolution {
    Trajectory p;         // combined values; the node at T is a convention when the spike is active
    Trajectory p_smooth;  // p with the spike removed
    Trajectory spike;     // sigma
    bool spike_active = false;
};

namespace detail {

class AdjointStepper {
  public:
    AdjointStepper(const ProblemSpec& spec, const Trajectory& xbar, const Trajectory& ubar,
                   const AdjointConfig& cfg)
        : spec_(spec), xbar_(xbar), ubar_(ubar), cfg_(cfg),
          grid_(spec.grid), weights_(spec.alpha, spec.grid), jacobi_(spec.alpha),
          n_(spec.dynamics.state_dim) {
        cfg.validate();
        const std::size_t N = grid_.intervals();
        const double T = grid_.horizon();
        c_ = cfg.terminal_coeff.size() ? cfg.terminal_coeff : RowVectorXd::Zero(n_);

        sigma_.assign(N + 1, VectorXd::Zero(n_));
        spike_active_ = false;
        for (std::size_t l = 0; l <= N; ++l) {
            const MatrixXd fxT = spec.dynamics.f_x(T, grid_.node(l), xbar.at(l), ubar.at(l));
            sigma_[l] = -(fxT.transpose() * c_.transpose());
            if (sigma_[l].norm() > 0.0) spike_active_ = true;
        }

        fast_f_ = !spec.dynamics.f_depends_on_outer_time;
        fast_g_ = !spec.dynamics.g_depends_on_outer_time;
        if (fast_f_ || fast_g_) {
            fx_cache_.resize(N + 1);
            gx_cache_.resize(N + 1);
            for (std::size_t k = 0; k <= N; ++k) {
                if (fast_f_) fx_cache_[k] = spec.dynamics.f_x(T, grid_.node(k), xbar.at(k), ubar.at(k));
                if (fast_g_) gx_cache_[k] = spec.dynamics.g_x(T, grid_.node(k), xbar.at(k), ubar.at(k));
            }
        }

        source_.assign(N + 1, VectorXd::Zero(n_));
        const auto& mult = cfg.multipliers;
        for (std::size_t k = 0; k <= N; ++k) {
            const double tk = grid_.node(k);
            const VectorXd xk = xbar.at(k);
            const VectorXd uk = ubar.at(k);
            VectorXd src = -(spec.dynamics.g_x(T, tk, xk, uk).transpose() * c_.transpose());
            src -= mult.lambda * spec.cost.l_x(tk, xk, uk).transpose();
            for (std::size_t i = 0; i < spec.inequalities.size(); ++i) {
                const double theta = mult.theta_density.size() > i
                                         ? mult.theta_density[i].values()(static_cast<Eigen::Index>(k), 0)
                                         : 0.0;
                src -= theta * spec.inequalities[i].G_x(tk, xk).transpose();
            }
            source_[k] = src;
        }
    }

    const TimeGrid& grid() const { return grid_; }
    bool spike_active() const { return spike_active_; }
    const std::vector<VectorXd>& sigma() const { return sigma_; }

    // Weight of node l in the rule for int_{t_k}^T phi(r) (r - t_k)^(alpha-1) dr.
    double back_singular_weight(std::size_t k, std::size_t l) const {
        const std::size_t N = grid_.intervals();
        return weights_.weight(N - k, N - l);
    }
    // Weight of node l in the rule for int_{t_k}^T phi(r) (T - r)^(alpha-1) dr.
    double to_terminal_weight(std::size_t k, std::size_t l) const {
        return weights_.weight(grid_.intervals() - k, l - k);
    }
    double back_trapezoid_weight(std::size_t k, std::size_t l) const {
        const std::size_t m = grid_.intervals() - k;
        if (m == 0) return 0.0;
        return (l == k || l == grid_.intervals()) ? 0.5 * grid_.step() : grid_.step();
    }

    MatrixXd fx_at(std::size_t l, std::size_t k) const {
        if (fast_f_) return fx_cache_[k];
        return spec_.dynamics.f_x(grid_.node(l), grid_.node(k), xbar_.at(k), ubar_.at(k));
    }
    MatrixXd gx_at(std::size_t l, std::size_t k) const {
        if (fast_g_) return gx_cache_[k];
        return spec_.dynamics.g_x(grid_.node(l), grid_.node(k), xbar_.at(k), ubar_.at(k));
    }

    // Integral terms of the equation at node k applied to a given p_smooth
    // field; `include_diag` controls whether the l = k contribution of the
    // p-dependent rules enters (it is split off during the backward solve).
    VectorXd integral_terms(std::size_t k, const std::vector<VectorXd>& ps, bool include_diag) const {
        const std::size_t N = grid_.intervals();
        VectorXd acc = VectorXd::Zero(n_);
        const std::size_t first = include_diag ? k : k + 1;
        if (fast_f_ && fast_g_) {
            // Kernels do not vary along the integration variable: factor the
            // weighted sums of the costate out of the kernel products.
            VectorXd sing_sum = VectorXd::Zero(n_);
            VectorXd trap_sum = VectorXd::Zero(n_);
            for (std::size_t l = first; l <= N; ++l) {
                sing_sum.noalias() += back_singular_weight(k, l) * ps[l];
                trap_sum.noalias() += back_trapezoid_weight(k, l) * ps[l];
            }
            acc.noalias() += fx_cache_[k].transpose() * sing_sum;
            acc.noalias() += gx_cache_[k].transpose() * trap_sum;
            if (spike_active_ && k < N) {
                const std::size_t m = N - k;
                const double span = grid_.horizon() - grid_.node(k);
                const auto& v = jacobi_.row(m);
                const double scale = std::pow(span, 2.0 * spec_.alpha - 1.0);
                VectorXd jac_sum = VectorXd::Zero(n_);
                VectorXd term_sum = VectorXd::Zero(n_);
                for (std::size_t i = 0; i <= m; ++i) {
                    const std::size_t l = k + i;
                    jac_sum.noalias() += v[i] * sigma_[l];
                    term_sum.noalias() += to_terminal_weight(k, l) * sigma_[l];
                }
                acc.noalias() += scale * (fx_cache_[k].transpose() * jac_sum);
                acc.noalias() += gx_cache_[k].transpose() * term_sum;
            }
            return acc;
        }
        for (std::size_t l = first; l <= N; ++l) {
            const MatrixXd fx = fx_at(l, k);
            const MatrixXd gx = gx_at(l, k);
            acc.noalias() += back_singular_weight(k, l) * (fx.transpose() * ps[l]);
            acc.noalias() += back_trapezoid_weight(k, l) * (gx.transpose() * ps[l]);
        }
        if (spike_active_ && k < N) {
            const std::size_t m = N - k;
            const double span = grid_.horizon() - grid_.node(k);
            const auto& v = jacobi_.row(m);
            const double scale = std::pow(span, 2.0 * spec_.alpha - 1.0);
            for (std::size_t i = 0; i <= m; ++i) {
                const std::size_t l = k + i;
                acc.noalias() += scale * v[i] * (fx_at(l, k).transpose() * sigma_[l]);
                acc.noalias() += to_terminal_weight(k, l) * (gx_at(l, k).transpose() * sigma_[l]);
            }
        }
        return acc;
    }

    const VectorXd& source(std::size_t k) const { return source_[k]; }

    MatrixXd diagonal(std::size_t k) const {
        const double wf = back_singular_weight(k, k);
        const double wg = back_trapezoid_weight(k, k);
        return MatrixXd::Identity(n_, n_) - wf * fx_at(k, k).transpose() -
               wg * gx_at(k, k).transpose();
    }

    std::vector<VectorXd> solve() const {
        const std::size_t N = grid_.intervals();
        std::vector<VectorXd> ps(N + 1, VectorXd::Zero(n_));
        ps[N] = source_[N];
        for (std::size_t k = N; k-- > 0;) {
            VectorXd rhs = integral_terms(k, ps, false) + source_[k];
            MatrixXd lhs = diagonal(k);
            check_diagonal(lhs, k);
            ps[k] = lhs.partialPivLu().solve(rhs);
            if (!ps[k].allFinite()) throw NonFinite(k);
        }
        return ps;
    }

    double residual(const std::vector<VectorXd>& ps) const {
        const std::size_t N = grid_.intervals();
        double worst = 0.0;
        for (std::size_t k = 0; k < N; ++k) {
            const VectorXd rhs = integral_terms(k, ps, true) + source_[k];
            worst = std::max(worst, (ps[k] - rhs).norm());
        }
        return worst;
    }

  private:
    const ProblemSpec& spec_;
    const Trajectory& xbar_;
    const Trajectory& ubar_;
    AdjointConfig cfg_;
    TimeGrid grid_;
    SingularWeights weights_;
    mutable JacobiHatWeights jacobi_;
    Eigen::Index n_;
    RowVectorXd c_;
    std::vector<VectorXd> sigma_;
    std::vector<VectorXd> source_;
    std::vector<MatrixXd> fx_cache_, gx_cache_;
    bool fast_f_ = false, fast_g_ = false;
    bool spike_active_ = false;
};

}  // namespace detail

inline AdjointSolution solve_adjoint_split(const ProblemSpec& spec, const Trajectory& xbar,
                                           const Trajectory& ubar, const AdjointConfig& cfg) {
    if (xbar.grid() != spec.grid || ubar.grid() != spec.grid)
        throw std::invalid_argument("solve_adjoint: trajectories must live on the spec grid");
    detail::AdjointStepper stepper(spec, xbar, ubar, cfg);
    const std::vector<VectorXd> ps = stepper.solve();
    const TimeGrid& grid = spec.grid;
    const std::size_t N = grid.intervals();
    const double T = grid.horizon();

    AdjointSolution out{Trajectory(grid, spec.dynamics.state_dim),
                        Trajectory(grid, spec.dynamics.state_dim),
                        Trajectory(grid, spec.dynamics.state_dim), stepper.spike_active()};
    for (std::size_t k = 0; k <= N; ++k) {
        out.p_smooth.set(k, ps[k]);
        out.spike.set(k, stepper.sigma()[k]);
    }
    for (std::size_t k = 0; k < N; ++k) {
        const double gap = T - grid.node(k);
        out.p.set(k, ps[k] + std::pow(gap, spec.alpha - 1.0) * stepper.sigma()[k]);
    }
    // The equation holds a.e. and excludes t = T; the stored terminal value is
    // the one-sided limit taken at the last interior node when the spike is
    // active, and the finite limit of the sources otherwise.
    out.p.set(N, stepper.spike_active() ? out.p.at(N - 1) : ps[N]);
    return out;
}

inline Trajectory solve_adjoint(const ProblemSpec& spec, const Trajectory& xbar,
                                const Trajectory& ubar, const AdjointConfig& cfg) {
    return solve_adjoint_split(spec, xbar, ubar, cfg).p;
}

// Largest residual of the discrete backward equation over interior nodes.
inline double adjoint_residual(const ProblemSpec& spec, const Trajectory& xbar,
                               const Trajectory& ubar, const AdjointConfig& cfg,
                               const AdjointSolution& sol) {
    detail::AdjointStepper stepper(spec, xbar, ubar, cfg);
    std::vector<VectorXd> ps(spec.grid.node_count());
    for (std::size_t k = 0; k < spec.grid.node_count(); ++k) ps[k] = sol.p_smooth.at(k);
    return stepper.residual(ps);
}

// ---------------------------------------------------------------------------
// Variational equation and the cost variation
// ---------------------------------------------------------------------------

struct VariationalResult {
    Trajectory Z;
    double Zhat_T = 0.0;
    Trajectory forcing;  // a + spike-forcing convolutions, reused by the duality check
};

// Z solves the linearized state equation along (xbar, ubar) with initial
// perturbation a and control replacement u_alt; Zhat_T is the matching
// first-order cost variation.
inline VariationalResult solve_variational(const ProblemSpec& spec, const Trajectory& xbar,
                                           const Trajectory& ubar, const VectorXd& a,
                                           const Trajectory& u_alt) {
    const TimeGrid& grid = spec.grid;
    if (xbar.grid() != grid || ubar.grid() != grid || u_alt.grid() != grid)
        throw std::invalid_argument("solve_variational: grid mismatch");
    const SingularWeights weights(spec.alpha, grid);
    const std::size_t N = grid.intervals();
    const auto& dyn = spec.dynamics;

    const bool fast_f = !dyn.f_depends_on_outer_time;
    const bool fast_g = !dyn.g_depends_on_outer_time;
    const double T = grid.horizon();

    std::vector<VectorXd> df_cache(N + 1), dg_cache(N + 1);
    if (fast_f || fast_g) {
        for (std::size_t j = 0; j <= N; ++j) {
            const double tj = grid.node(j);
            const VectorXd xj = xbar.at(j);
            if (fast_f) df_cache[j] = dyn.f(T, tj, xj, u_alt.at(j)) - dyn.f(T, tj, xj, ubar.at(j));
            if (fast_g) dg_cache[j] = dyn.g(T, tj, xj, u_alt.at(j)) - dyn.g(T, tj, xj, ubar.at(j));
        }
    }

    Trajectory forcing(grid, dyn.state_dim);
    forcing.set(0, a);
    for (std::size_t nn = 1; nn <= N; ++nn) {
        const double tn = grid.node(nn);
        VectorXd acc = a;
        for (std::size_t j = 0; j <= nn; ++j) {
            const double tj = grid.node(j);
            const VectorXd xj = xbar.at(j);
            if (fast_f) {
                acc.noalias() += weights.weight(nn, j) * df_cache[j];
            } else {
                acc.noalias() += weights.weight(nn, j) *
                                 (dyn.f(tn, tj, xj, u_alt.at(j)) - dyn.f(tn, tj, xj, ubar.at(j)));
            }
            if (fast_g) {
                acc.noalias() += trapezoid_weight(grid, nn, j) * dg_cache[j];
            } else {
                acc.noalias() += trapezoid_weight(grid, nn, j) *
                                 (dyn.g(tn, tj, xj, u_alt.at(j)) - dyn.g(tn, tj, xj, ubar.at(j)));
            }
        }
        forcing.set(nn, acc);
    }

    const double h = grid.step();
    auto node_of = [h](double s) { return static_cast<std::size_t>(std::llround(s / h)); };
    std::vector<MatrixXd> fx_cache(N + 1), gx_cache(N + 1);
    if (fast_f || fast_g) {
        for (std::size_t j = 0; j <= N; ++j) {
            const double tj = grid.node(j);
            if (fast_f) fx_cache[j] = dyn.f_x(T, tj, xbar.at(j), ubar.at(j));
            if (fast_g) gx_cache[j] = dyn.g_x(T, tj, xbar.at(j), ubar.at(j));
        }
    }
    MatrixKernel F = [&, node_of](double t, double s) {
        const std::size_t j = node_of(s);
        if (fast_f) return fx_cache[j];
        return spec.dynamics.f_x(t, s, xbar.at(j), ubar.at(j));
    };
    MatrixKernel H = [&, node_of](double t, double s) {
        const std::size_t j = node_of(s);
        if (fast_g) return gx_cache[j];
        return spec.dynamics.g_x(t, s, xbar.at(j), ubar.at(j));
    };

    VariationalResult res{solve_linear(F, H, forcing, spec.alpha, grid), 0.0, forcing};

    Trajectory integrand(grid, 1);
    for (std::size_t k = 0; k <= N; ++k) {
        const double tk = grid.node(k);
        const VectorXd xk = xbar.at(k);
        double v = spec.cost.l_x(tk, xk, ubar.at(k)).dot(res.Z.at(k));
        v += spec.cost.l(tk, xk, u_alt.at(k)) - spec.cost.l(tk, xk, ubar.at(k));
        integrand.values()(static_cast<Eigen::Index>(k), 0) = v;
    }
    res.Zhat_T = trapezoid_integral(integrand, N)(0);
    res.Zhat_T += spec.cost.h_x0(xbar.at(0), xbar.at(N)).dot(a);
    res.Zhat_T += spec.cost.h_x(xbar.at(0), xbar.at(N)).dot(res.Z.at(N));
    return res;
}

// ---------------------------------------------------------------------------
// Duality identity (integration-order exchange)
// ---------------------------------------------------------------------------

struct DualityResult {
    double lhs = 0.0;
    double rhs = 0.0;
    double gap = 0.0;
};

// Both sides of
//
//   int_0^T [ -p(s) + int_s^T (kernels)^T p(r) dr ]^T Z(s) ds
//     = - int_0^T p(s)^T [ a + spike-forcing convolutions ](s) ds
//
// evaluated independently: the left side re-integrates the adjoint kernels
// against the solved costate, the right side uses only the variational
// forcing. The spike factor (T-s)^(alpha-1) in both outer integrals is
// handled by the product rule, never sampled.
inline DualityResult check_duality(const ProblemSpec& spec, const Trajectory& xbar,
                                   const Trajectory& ubar, const AdjointConfig& cfg,
                                   const VectorXd& a, const Trajectory& u_alt) {
    const TimeGrid& grid = spec.grid;
    const std::size_t N = grid.intervals();
    detail::AdjointStepper stepper(spec, xbar, ubar, cfg);
    const std::vector<VectorXd> ps = stepper.solve();
    const VariationalResult var = solve_variational(spec, xbar, ubar, a, u_alt);
    const SingularWeights weights(spec.alpha, grid);

    double lhs = 0.0;
    for (std::size_t k = 0; k <= N; ++k) {
        const VectorXd bracket = stepper.integral_terms(k, ps, true) - ps[k];
        lhs += trapezoid_weight(grid, N, k) * bracket.dot(var.Z.at(k));
        // -(T-s)^(alpha-1) sigma(s)^T Z(s), integrated with the singular rule.
        lhs -= weights.weight(N, k) * stepper.sigma()[k].dot(var.Z.at(k));
    }

    double rhs = 0.0;
    for (std::size_t k = 0; k <= N; ++k) {
        rhs -= trapezoid_weight(grid, N, k) * ps[k].dot(var.forcing.at(k));
        rhs -= weights.weight(N, k) * stepper.sigma()[k].dot(var.forcing.at(k));
    }

    DualityResult res;
    res.lhs = lhs;
    res.rhs = rhs;
    res.gap = std::fabs(lhs - rhs) / (1.0 + std::fabs(lhs));
    return res;
}

}  // namespace svoc
