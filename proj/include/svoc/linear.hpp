#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "core.hpp"
#include "parallel.hpp"
#include "quadrature.hpp"

namespace svoc {

using MatrixKernel = std::function<MatrixXd(double t, double s)>;

namespace detail {

inline void check_diagonal(const MatrixXd& m, std::size_t node) {
    Eigen::JacobiSVD<MatrixXd> svd(m);
    const double smin = svd.singularValues().minCoeff();
    const double smax = svd.singularValues().maxCoeff();
    if (smin <= 0.0 || smax / smin > 1e12) throw SingularDiagonal(node, smin > 0.0 ? smax / smin : std::numeric_limits<double>::infinity());
}

// Combined quadrature weight of node l in the discrete operator at node j:
//   A[j][l] = w_sing[j][l] F(t_j,t_l) + w_trapz[j][l] H(t_j,t_l).
struct LinearOperator {
    const SingularWeights& weights;
    const MatrixKernel& F;
    const MatrixKernel& H;

    MatrixXd block(std::size_t j, std::size_t l) const {
        const TimeGrid& grid = weights.grid();
        const double tj = grid.node(j);
        const double tl = grid.node(l);
        return weights.weight(j, l) * F(tj, tl) + trapezoid_weight(grid, j, l) * H(tj, tl);
    }
};

}  // namespace detail

// Solve the linear equation
//
//   x(t) = x0(t) + int_0^t F(t,s) x(s) (t-s)^(alpha-1) ds + int_0^t H(t,s) x(s) ds
//
// by the same stepping as solve_forward; the diagonal term is linear, so each
// node is an exact small solve.
inline Trajectory solve_linear(const MatrixKernel& F, const MatrixKernel& H,
                               const Trajectory& forcing, double alpha, const TimeGrid& grid) {
    if (forcing.grid() != grid) throw std::invalid_argument("solve_linear: forcing grid mismatch");
    const SingularWeights weights(alpha, grid);
    detail::LinearOperator op{weights, F, H};
    const Eigen::Index n = forcing.dim();
    const std::size_t N = grid.intervals();

    Trajectory x(grid, n);
    x.set(0, forcing.at(0));
    for (std::size_t j = 1; j <= N; ++j) {
        VectorXd rhs = forcing.at(j);
        for (std::size_t l = 0; l < j; ++l) rhs.noalias() += op.block(j, l) * x.at(l);
        MatrixXd lhs = MatrixXd::Identity(n, n) - op.block(j, j);
        detail::check_diagonal(lhs, j);
        x.set(j, lhs.partialPivLu().solve(rhs));
    }
    return x;
}

// ---------------------------------------------------------------------------
// State-transition (resolvent) kernel
//
// The linear solution admits the representation
//
//   x(t) = x0(t) + int_0^t Psi(t,s) x0(s) ds,
//
// where Psi solves Psi(t,s) = K(t,s) + int_s^t K(t,r) Psi(r,s) dr with
// K(t,s) = F(t,s)(t-s)^(alpha-1) + H(t,s). Psi inherits the kernel
// singularity, so the table stores the regularized density
// Psi~(t,s) = Psi(t,s) (t-s)^(1-alpha) and the quadrature in apply()
// re-attaches the weight through the singular product rule.
//
// Columns are built by the weighted-source recursion
//
//   R[j][k] = A[j][k] + sum_{l=k..j} A[j][l] R[l][k],
//
// i.e. the Psi equation discretized with the same singular/trapezoid weight
// matrix A used by solve_linear. This choice makes the discrete
// representation identity hold to rounding for every forcing; the stored
// density is Psi~[j][k] = R[j][k] / w_sing[j][k].
// ---------------------------------------------------------------------------

class ResolventKernel {
  public:
    ResolventKernel(double alpha, TimeGrid grid, Eigen::Index dim)
        : alpha_(alpha), grid_(grid), dim_(dim),
          weights_(alpha, grid),
          table_(table_size(grid.intervals()), MatrixXd::Zero(dim, dim)),
          diag_(grid.node_count(), MatrixXd::Zero(dim, dim)) {}

    double alpha() const { return alpha_; }
    const TimeGrid& grid() const { return grid_; }
    Eigen::Index dim() const { return dim_; }

    // Regularized density Psi~(t_j, t_k), k < j.
    const MatrixXd& density(std::size_t j, std::size_t k) const { return table_[index(j, k)]; }
    MatrixXd& density(std::size_t j, std::size_t k) { return table_[index(j, k)]; }

    // Pointwise kernel value Psi(t_j, t_k) recovered from the density.
    MatrixXd value_at(std::size_t j, std::size_t k) const {
        const double gap = grid_.node(j) - grid_.node(k);
        return density(j, k) * std::pow(gap, alpha_ - 1.0);
    }

    const MatrixXd& diagonal(std::size_t j) const { return diag_[j]; }
    MatrixXd& diagonal(std::size_t j) { return diag_[j]; }

    // x0(t) + quadrature of Psi(t,.) x0(.) with the singular rule on the density.
    Trajectory apply(const Trajectory& forcing) const {
        if (forcing.grid() != grid_) throw std::invalid_argument("ResolventKernel: grid mismatch");
        Trajectory out(grid_, dim_);
        out.set(0, forcing.at(0) + diag_[0] * forcing.at(0));
        for (std::size_t j = 1; j <= grid_.intervals(); ++j) {
            VectorXd acc = forcing.at(j);
            for (std::size_t k = 0; k < j; ++k)
                acc.noalias() += weights_.weight(j, k) * (density(j, k) * forcing.at(k));
            acc.noalias() += diag_[j] * forcing.at(j);
            out.set(j, acc);
        }
        return out;
    }

  private:
    static std::size_t table_size(std::size_t N) { return N * (N + 1) / 2; }
    std::size_t index(std::size_t j, std::size_t k) const {
        if (k >= j) throw std::out_of_range("ResolventKernel: strictly lower-triangular only");
        return j * (j - 1) / 2 + k;
    }

    double alpha_;
    TimeGrid grid_;
    Eigen::Index dim_;
    SingularWeights weights_;
    std::vector<MatrixXd> table_;  // row-major strict lower triangle
    std::vector<MatrixXd> diag_;   // discrete diagonal of the resolvent operator
};

inline ResolventKernel build_resolvent(const MatrixKernel& F, const MatrixKernel& H, double alpha,
                                       const TimeGrid& grid) {
    const std::size_t N = grid.intervals();
    MatrixXd probe = F(grid.node(1), grid.node(0));
    const Eigen::Index n = probe.rows();
    ResolventKernel kernel(alpha, grid, n);
    const SingularWeights weights(alpha, grid);

    // Cache kernel blocks A[j][l]; columns then reduce to dense recursions.
    std::vector<std::vector<MatrixXd>> blocks(N + 1);
    for (std::size_t j = 0; j <= N; ++j) {
        blocks[j].resize(j + 1);
        const double tj = grid.node(j);
        for (std::size_t l = 0; l <= j; ++l) {
            const double tl = grid.node(l);
            blocks[j][l] = weights.weight(j, l) * F(tj, tl) + trapezoid_weight(grid, j, l) * H(tj, tl);
        }
    }

    std::vector<Eigen::PartialPivLU<MatrixXd>> diag_lu(N + 1);
    for (std::size_t j = 0; j <= N; ++j) {
        MatrixXd lhs = MatrixXd::Identity(n, n) - blocks[j][j];
        detail::check_diagonal(lhs, j);
        diag_lu[j] = lhs.partialPivLu();
    }

    parallel_for(N + 1, [&](std::size_t k) {
        // Column k of R: R[j][k] = A[j][k] + sum_{l=k..j} A[j][l] R[l][k].
        std::vector<MatrixXd> col(N + 1);
        col[k] = diag_lu[k].solve(blocks[k][k]);
        for (std::size_t j = k + 1; j <= N; ++j) {
            MatrixXd rhs = blocks[j][k];
            for (std::size_t l = k; l < j; ++l) rhs.noalias() += blocks[j][l] * col[l];
            col[j] = diag_lu[j].solve(rhs);
        }
        kernel.diagonal(k) = col[k];
        for (std::size_t j = k + 1; j <= N; ++j)
            kernel.density(j, k) = col[j] / weights.weight(j, k);
    });
    return kernel;
}

// ---------------------------------------------------------------------------
// Monotone comparison (Gronwall corollary)
// ---------------------------------------------------------------------------

// Solves z_i = b_i + int P z_i (singular + nonsingular) for both forcings and
// checks the nodewise ordering z_1 <= z_2. Nonnegative kernels make the
// discrete solution map monotone, which is the assertable content of the
// comparison estimate.
inline bool check_comparison(const std::function<double(double)>& P, const Trajectory& b1,
                             const Trajectory& b2, double alpha, const TimeGrid& grid) {
    if (b1.grid() != grid || b2.grid() != grid || b1.dim() != 1 || b2.dim() != 1)
        throw std::invalid_argument("check_comparison: forcings must be scalar on the given grid");
    for (std::size_t k = 0; k < grid.node_count(); ++k) {
        const double s = grid.node(k);
        if (P(s) < 0.0) throw std::invalid_argument("check_comparison: P must be nonnegative");
        const double v1 = b1.values()(static_cast<Eigen::Index>(k), 0);
        const double v2 = b2.values()(static_cast<Eigen::Index>(k), 0);
        if (v1 < 0.0 || v2 < 0.0) throw std::invalid_argument("check_comparison: forcings must be nonnegative");
        if (v1 > v2) throw std::invalid_argument("check_comparison: requires b1 <= b2 nodewise");
    }
    MatrixKernel F = [&P](double, double s) { return MatrixXd::Constant(1, 1, P(s)); };
    MatrixKernel H = F;
    Trajectory z1 = solve_linear(F, H, b1, alpha, grid);
    Trajectory z2 = solve_linear(F, H, b2, alpha, grid);
    for (std::size_t k = 0; k < grid.node_count(); ++k) {
        if (z1.values()(static_cast<Eigen::Index>(k), 0) >
            z2.values()(static_cast<Eigen::Index>(k), 0) + 1e-10)
            return false;
    }
    return true;
}

}  // namespace svoc
