#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "ness/fdop.hpp"
#include "ness/grid.hpp"
#include "ness/model.hpp"

namespace ness {

/// Solver tolerances. Steady/Poisson residuals are tighter in 1d than for
/// 2d and phase-space systems; compatibility defects on truncated momentum
/// grids carry the boundary-flux allowance.
struct SolveTolerances {
    double residual_1d = 1e-10;
    double residual_big = 1e-8;
    double compatibility_periodic = 1e-8;
    double compatibility_phase = 1e-6;
    double eigen_residual = 1e-10;
    int max_eigen_iterations = 500;

    double residual_for(const Grid& g) const {
        return g.kind() == Grid::Kind::periodic1d ? residual_1d : residual_big;
    }
    double compatibility_for(const Grid& g) const {
        return g.is_phase() ? compatibility_phase : compatibility_periodic;
    }
};

struct SolverStats {
    double residual = 0.0;          // max-norm over unconstrained rows
    double constraint_residual = 0.0;  // defect of the replaced row
    int refinement_steps = 0;
    int iterations = 0;             // eigen iterations (0 for direct solves)
};

struct SteadySolution {
    GridFunction psi;
    double eta = 0.0;
    double alpha = 0.0;
    double lambda = 0.0;            // principal eigenvalue (0 for non-FK)
    SolverStats stats;
    bool eigen_mode = false;
};

/// Sparse LU of a square operator with one row replaced by a linear
/// constraint functional. Reused across right-hand sides; deterministic
/// fill-reducing ordering (COLAMD).
class ConstrainedLU {
public:
    ConstrainedLU(const Eigen::SparseMatrix<double>& A, const Eigen::VectorXd& constraint_row,
                  int row = 0)
        : a_(A), row_(row) {
        const long n = A.rows();
        std::vector<Eigen::Triplet<double>> t;
        t.reserve(std::size_t(A.nonZeros()) + std::size_t(n));
        for (int k = 0; k < A.outerSize(); ++k)
            for (Eigen::SparseMatrix<double>::InnerIterator it(A, k); it; ++it)
                if (it.row() != row) t.emplace_back(int(it.row()), int(it.col()), it.value());
        for (long j = 0; j < n; ++j)
            if (constraint_row[j] != 0.0) t.emplace_back(row, int(j), constraint_row[j]);
        Eigen::SparseMatrix<double> M(n, n);
        M.setFromTriplets(t.begin(), t.end());
        M.makeCompressed();
        lu_.compute(M);
        if (lu_.info() != Eigen::Success)
            throw SolverError("ConstrainedLU: factorization failed (degenerate system?)");
        m_ = std::move(M);
    }

    /// Solve with rhs on the unconstrained rows and `target` on the
    /// constraint row; one step of iterative refinement.
    Eigen::VectorXd solve(const Eigen::VectorXd& rhs, double target, SolverStats* stats = nullptr) const {
        Eigen::VectorXd b = rhs;
        b[row_] = target;
        Eigen::VectorXd x = lu_.solve(b);
        Eigen::VectorXd r = b - m_ * x;
        x += lu_.solve(r);
        if (stats) {
            stats->refinement_steps = 1;
            Eigen::VectorXd res = a_ * x - rhs;
            stats->constraint_residual = std::abs(res[row_]);
            res[row_] = 0.0;
            stats->residual = res.cwiseAbs().maxCoeff();
        }
        return x;
    }

    int constraint_row_index() const { return row_; }

private:
    Eigen::SparseMatrix<double> a_;   // original (unconstrained) matrix
    Eigen::SparseMatrix<double> m_;   // constrained matrix
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu_;
    int row_ = 0;
};

/// Stationary density of an adjoint-form operator without FK weight: all
/// rows of the Fokker-Planck system except one, which is replaced by the
/// quadrature normalization.
inline SteadySolution solve_stationary(const SparseOperator& op, double eta = 0.0, double alpha = 0.0,
                                       const SolveTolerances& tol = {}) {
    if (op.form != OperatorForm::adjoint)
        throw SolverError("solve_stationary expects an adjoint-form operator");
    const Grid& grid = *op.grid;
    Eigen::VectorXd w = Eigen::VectorXd::Constant(long(grid.dof()), grid.cell_volume());
    ConstrainedLU lu(op.matrix, w);
    SolverStats stats;
    Eigen::VectorXd psi = lu.solve(Eigen::VectorXd::Zero(long(grid.dof())), 1.0, &stats);
    double q = quadrature(grid, psi);
    if (!std::isfinite(q) || std::abs(q) < 1e-14)
        throw SolverError("solve_stationary: degenerate steady state (zero mass)");
    psi /= q;
    double rtol = tol.residual_for(grid);
    if (stats.residual > std::max(rtol, 1e3 * rtol * psi.cwiseAbs().maxCoeff()))
        throw SolverError("solve_stationary: residual " + std::to_string(stats.residual) +
                          " exceeds tolerance (null space dimension > 1?)");
    SteadySolution out{GridFunction(grid, std::move(psi), FieldTag::density), eta, alpha, 0.0, stats, false};
    return out;
}

/// Principal eigenpair (eigenvalue of smallest magnitude) of an adjoint-form
/// operator carrying an FK weight, by shift-invert power iteration around 0.
inline SteadySolution solve_principal_eigen(const SparseOperator& op, double eta = 0.0,
                                            double alpha = 0.0, const SolveTolerances& tol = {}) {
    if (op.form != OperatorForm::adjoint)
        throw SolverError("solve_principal_eigen expects an adjoint-form operator");
    const Grid& grid = *op.grid;
    const long n = long(grid.dof());

    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(op.matrix);
    if (lu.info() != Eigen::Success) {
        // Singular composite (no effective FK weight): fall back to the
        // constrained stationary solve, lambda = 0.
        SteadySolution s = solve_stationary(op, eta, alpha, tol);
        s.eigen_mode = true;
        return s;
    }

    // operator scale for the relative eigen-residual criterion
    double op_scale = 0.0;
    {
        Eigen::VectorXd rowsum = Eigen::VectorXd::Zero(n);
        for (int k = 0; k < op.matrix.outerSize(); ++k)
            for (Eigen::SparseMatrix<double>::InnerIterator it2(op.matrix, k); it2; ++it2)
                rowsum[it2.row()] += std::abs(it2.value());
        op_scale = std::max(1.0, rowsum.maxCoeff());
    }

    Eigen::VectorXd x = Eigen::VectorXd::Constant(n, 1.0 / double(n));
    double lambda = 0.0;
    double res = std::numeric_limits<double>::infinity();
    int it = 0;
    int sign_flips = 0;
    double prev_change = 0.0;
    for (; it < tol.max_eigen_iterations; ++it) {
        Eigen::VectorXd y = lu.solve(x);
        double nrm = y.norm();
        if (!std::isfinite(nrm) || nrm == 0.0)
            throw SolverError("solve_principal_eigen: inverse iteration broke down");
        y /= nrm;
        Eigen::VectorXd Ay = op.matrix * y;
        double lambda_new = y.dot(Ay);
        double change = lambda_new - lambda;
        if (it > 0 && change * prev_change < 0.0 && std::abs(change) > 1e-13 * op_scale) ++sign_flips;
        prev_change = change;
        lambda = lambda_new;
        res = (Ay - lambda * y).norm();
        x = y;
        // absolute target with a rounding floor set by the operator scale
        if (res <= std::max(tol.eigen_residual, 8.0 * std::numeric_limits<double>::epsilon() * op_scale))
            break;
    }
    if (res > std::max(tol.eigen_residual, 8.0 * std::numeric_limits<double>::epsilon() * op_scale)) {
        if (sign_flips > tol.max_eigen_iterations / 4)
            throw SolverError("solve_principal_eigen: oscillating Rayleigh quotient (complex pair?)");
        throw SolverError("solve_principal_eigen: no convergence after " +
                          std::to_string(tol.max_eigen_iterations) + " iterations");
    }
    double q = quadrature(grid, x);
    if (std::abs(q) < 1e-300) throw SolverError("solve_principal_eigen: zero-mass eigenvector");
    x /= q;
    SolverStats stats;
    stats.iterations = it + 1;
    stats.residual = res;
    SteadySolution out{GridFunction(grid, std::move(x), FieldTag::density), eta, alpha, lambda, stats, true};
    return out;
}

/// Steady state dispatch: eigen solve when an FK weight is active,
/// constrained stationary solve otherwise.
inline SteadySolution solve_steady_state(const DynamicsSpec& dyn, const Grid& grid, double eta,
                                         double alpha, const SolveTolerances& tol = {},
                                         const AssemblyOptions& opts = {}) {
    SparseOperator op = assemble_composite(dyn, eta, alpha, grid, OperatorForm::adjoint, opts);
    if (op.has_fk_weight()) return solve_principal_eigen(op, eta, alpha, tol);
    return solve_stationary(op, eta, alpha, tol);
}

/// Perturbative corrections psibar_1..k of the steady density in powers of
/// eta, all mean-zero, plus the eigenvalue corrections lambdabar_j (zero for
/// non-FK forcings up to the compatibility defect).
struct ResponseHierarchy {
    GridFunction psi0;
    std::vector<GridFunction> bars;
    std::vector<double> lambda_bar;   // lambda_bar[j] corresponds to order j+2
    double alpha = 0.0;
};

/// Factorization of the reference adjoint with the mean constraint, reused
/// across hierarchy orders, alpha values and Newton iterations.
class HierarchySolver {
public:
    HierarchySolver(const DynamicsSpec& dyn, const Grid& grid, const SolveTolerances& tol = {})
        : dyn_(dyn), grid_(&grid), tol_(tol) {
        SparseOperator ref = assemble_reference_adjoint(dyn, grid);
        Eigen::VectorXd w = Eigen::VectorXd::Constant(long(grid.dof()), grid.cell_volume());
        lu_ = std::make_shared<ConstrainedLU>(ref.matrix, w);
        // The expansion is taken around the analytic Gibbs density: it is
        // known in closed form, and only the corrections require solves.
        psi0_ = gibbs_density(dyn, grid);
        phys_ = assemble_perturbation_adjoint(dyn, grid).matrix;
    }

    const GridFunction& psi0() const { return psi0_; }
    const Grid& grid() const { return *grid_; }
    const DynamicsSpec& dynamics() const { return dyn_; }

    /// Hierarchy for the dynamics' own extra forcing at magnitude alpha.
    ResponseHierarchy solve(double alpha, int k) const {
        std::vector<const ExtraForcing*> fs;
        std::vector<double> as;
        if (dyn_.extra.type != ExtraForcing::Type::none) {
            fs.push_back(&dyn_.extra);
            as.push_back(alpha);
        }
        return solve_combined(fs, as, k);
    }

    /// Hierarchy for a linear combination of extra forcings.
    ResponseHierarchy solve_combined(const std::vector<const ExtraForcing*>& forcings,
                                     const std::vector<double>& alphas, int k) const {
        if (k < 1) throw SolverError("solve_hierarchy: order k must be >= 1");
        const Grid& grid = *grid_;
        Eigen::SparseMatrix<double> pert = phys_;
        bool any_fk = false;
        for (std::size_t i = 0; i < forcings.size(); ++i) {
            if (forcings[i]->type == ExtraForcing::Type::none || alphas[i] == 0.0) continue;
            SparseOperator ex = assemble_perturbation_adjoint(dyn_, *forcings[i], grid);
            pert = pert + Eigen::SparseMatrix<double>(alphas[i] * ex.matrix);
            any_fk = any_fk || forcings[i]->is_fk();
        }
        double compat_tol = tol_.compatibility_for(grid);

        ResponseHierarchy h;
        h.psi0 = psi0_;
        h.alpha = alphas.empty() ? 0.0 : alphas[0];
        const Eigen::VectorXd* prev = &psi0_.values;
        for (int j = 1; j <= k; ++j) {
            Eigen::VectorXd rhs = j == 1 ? Eigen::VectorXd(-(phys_ * psi0_.values))
                                         : Eigen::VectorXd(-(pert * (*prev)));
            // FK eigenvalue correction lambda_bar_j from lower orders
            if (j >= 2) {
                for (int l = 2; l < j; ++l)
                    rhs += h.lambda_bar[std::size_t(l - 2)] * h.bars[std::size_t(j - l - 1)].values;
            }
            // Fredholm compatibility: project the defect onto psi0. For
            // FK forcings the projection coefficient is the eigenvalue
            // correction; otherwise it must vanish within tolerance.
            double defect = quadrature(grid, rhs);
            if (j >= 2) {
                h.lambda_bar.push_back(defect);
                rhs -= defect * psi0_.values;
                if (!any_fk && std::abs(defect) > compat_tol)
                    throw SolverError("solve_hierarchy: inconsistent right-hand side at order " +
                                      std::to_string(j) + " (defect " + std::to_string(defect) + ")");
            } else if (std::abs(defect) > compat_tol) {
                throw SolverError("solve_hierarchy: inconsistent first-order right-hand side (defect " +
                                  std::to_string(defect) + ")");
            } else {
                rhs -= defect * psi0_.values;
            }
            Eigen::VectorXd x = lu_->solve(rhs, 0.0);
            // pin the quadrature exactly
            x.array() -= quadrature(grid, x) / (double(grid.dof()) * grid.cell_volume());
            h.bars.emplace_back(grid, std::move(x), FieldTag::mean_zero);
            prev = &h.bars.back().values;
        }
        return h;
    }

private:
    DynamicsSpec dyn_;
    const Grid* grid_;
    SolveTolerances tol_;
    std::shared_ptr<ConstrainedLU> lu_;
    GridFunction psi0_;
    Eigen::SparseMatrix<double> phys_;
};

inline ResponseHierarchy solve_hierarchy(const DynamicsSpec& dyn, const Grid& grid, double alpha,
                                         int k, const SolveTolerances& tol = {}) {
    return HierarchySolver(dyn, grid, tol).solve(alpha, k);
}

struct VarianceResult {
    double value = 0.0;
    double lambda = 0.0;
    bool fk_convention = false;   // true when the lambda-shifted generator was used
};

/// Asymptotic variance of time averages of R under the (eta, alpha)
/// dynamics: solve the generator-form Poisson equation for the recentered
/// observable with the steady-weighted mean pinned to zero, then integrate
/// 2 R_c Rhat against the steady density. FK variants use the
/// eigenvalue-shifted generator and are flagged.
inline VarianceResult asymptotic_variance(const DynamicsSpec& dyn, const Grid& grid, double eta,
                                          double alpha, const Observable& R,
                                          const SolveTolerances& tol = {}) {
    SteadySolution st = solve_steady_state(dyn, grid, eta, alpha, tol);
    SparseOperator gen = assemble_composite(dyn, eta, alpha, grid, OperatorForm::generator);

    Eigen::VectorXd r = R.on(grid);
    const Eigen::VectorXd& psi = st.psi.values;
    double mean = quadrature(grid, Eigen::VectorXd(r.cwiseProduct(psi)));
    Eigen::VectorXd rc = r.array() - mean;

    // -(L - lambda) Rhat = R - <R>, with quadrature(Rhat psi) pinned to 0.
    Eigen::SparseMatrix<double> A = -gen.matrix;
    if (st.lambda != 0.0) {
        Eigen::SparseMatrix<double> I(A.rows(), A.cols());
        I.setIdentity();
        A = A + Eigen::SparseMatrix<double>(st.lambda * I);
    }
    Eigen::VectorXd w = psi * grid.cell_volume();
    ConstrainedLU lu(A, w);
    Eigen::VectorXd rhs = rc;
    Eigen::VectorXd rhat = lu.solve(rhs, 0.0);
    // realize the projection: remove the psi-weighted mean of the solution
    rhat.array() -= quadrature(grid, Eigen::VectorXd(rhat.cwiseProduct(psi)));

    VarianceResult out;
    out.value = 2.0 * quadrature(grid, Eigen::VectorXd(rc.cwiseProduct(rhat).cwiseProduct(psi)));
    out.lambda = st.lambda;
    out.fk_convention = st.eigen_mode && st.lambda != 0.0;
    return out;
}

}  // namespace ness
