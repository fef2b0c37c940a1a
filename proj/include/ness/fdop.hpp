#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include <Eigen/Sparse>

#include "ness/grid.hpp"
#include "ness/model.hpp"

namespace ness {

enum class OperatorForm { generator, adjoint };

struct AssemblyOptions {
    /// Regression knob: discretize the Langevin q-transport with centered
    /// differences instead of upwinding (exhibits odd-even decoupling).
    bool centered_langevin_transport = false;
};

/// Sparse finite-difference operator on a grid. Adjoint-form matrices are
/// exact transposes of the generator-form ones, so the discrete duality
/// pairing holds to rounding. The FK zero-order multiplication term (when
/// present) is stored in the matrix diagonal and exposed separately.
struct SparseOperator {
    Eigen::SparseMatrix<double> matrix;
    const Grid* grid = nullptr;
    OperatorForm form = OperatorForm::adjoint;
    Eigen::VectorXd fk_weight;   // scaled diagonal term included in matrix; size 0 if none

    std::size_t dim() const { return std::size_t(matrix.rows()); }
    bool has_fk_weight() const { return fk_weight.size() > 0; }
};

namespace detail {

using Triplets = std::vector<Eigen::Triplet<double>>;

// Centered first difference along a position axis (periodic).
// axis: 0 = q1, 1 = q2. coeff is sampled per dof.
inline void add_centered_q(Triplets& t, const Grid& grid, int axis, const Eigen::VectorXd& coeff) {
    const auto& pos = grid.position();
    double inv2h = 1.0 / (2.0 * pos.h_q);
    if (grid.kind() == Grid::Kind::periodic1d) {
        for (int i = 0; i < pos.m_q; ++i) {
            double c = coeff[i] * inv2h;
            if (c == 0.0) continue;
            t.emplace_back(i, pos.wrap(i + 1), c);
            t.emplace_back(i, pos.wrap(i - 1), -c);
        }
    } else if (grid.kind() == Grid::Kind::periodic2d) {
        int m = pos.m_q;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j) {
                int k = i * m + j;
                double c = coeff[k] * inv2h;
                if (c == 0.0) continue;
                int kp = axis == 0 ? pos.wrap(i + 1) * m + j : i * m + pos.wrap(j + 1);
                int km = axis == 0 ? pos.wrap(i - 1) * m + j : i * m + pos.wrap(j - 1);
                t.emplace_back(k, kp, c);
                t.emplace_back(k, km, -c);
            }
    } else {  // phase: q axis only
        int ni = grid.momentum().interior();
        for (int i = 0; i < pos.m_q; ++i)
            for (int j = 0; j < ni; ++j) {
                int k = i * ni + j;
                double c = coeff[k] * inv2h;
                if (c == 0.0) continue;
                t.emplace_back(k, pos.wrap(i + 1) * ni + j, c);
                t.emplace_back(k, pos.wrap(i - 1) * ni + j, -c);
            }
    }
}

// Second difference along a position axis (periodic), scaled by d.
inline void add_diffusion_q(Triplets& t, const Grid& grid, int axis, double d) {
    const auto& pos = grid.position();
    double w = d / (pos.h_q * pos.h_q);
    if (grid.kind() == Grid::Kind::periodic1d) {
        for (int i = 0; i < pos.m_q; ++i) {
            t.emplace_back(i, i, -2.0 * w);
            t.emplace_back(i, pos.wrap(i + 1), w);
            t.emplace_back(i, pos.wrap(i - 1), w);
        }
    } else if (grid.kind() == Grid::Kind::periodic2d) {
        int m = pos.m_q;
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < m; ++j) {
                int k = i * m + j;
                int kp = axis == 0 ? pos.wrap(i + 1) * m + j : i * m + pos.wrap(j + 1);
                int km = axis == 0 ? pos.wrap(i - 1) * m + j : i * m + pos.wrap(j - 1);
                t.emplace_back(k, k, -2.0 * w);
                t.emplace_back(k, kp, w);
                t.emplace_back(k, km, w);
            }
    } else {
        int ni = grid.momentum().interior();
        for (int i = 0; i < pos.m_q; ++i)
            for (int j = 0; j < ni; ++j) {
                int k = i * ni + j;
                t.emplace_back(k, k, -2.0 * w);
                t.emplace_back(k, pos.wrap(i + 1) * ni + j, w);
                t.emplace_back(k, pos.wrap(i - 1) * ni + j, w);
            }
    }
}

// Centered first difference along the momentum axis (Dirichlet elimination:
// entries beyond the interior band are dropped).
inline void add_centered_p(Triplets& t, const Grid& grid, const Eigen::VectorXd& coeff) {
    int ni = grid.momentum().interior();
    double inv2h = 1.0 / (2.0 * grid.momentum().h_p);
    for (int i = 0; i < grid.position().m_q; ++i)
        for (int j = 0; j < ni; ++j) {
            int k = i * ni + j;
            double c = coeff[k] * inv2h;
            if (c == 0.0) continue;
            if (j + 1 < ni) t.emplace_back(k, k + 1, c);
            if (j - 1 >= 0) t.emplace_back(k, k - 1, -c);
        }
}

inline void add_diffusion_p(Triplets& t, const Grid& grid, double d) {
    int ni = grid.momentum().interior();
    double hp = grid.momentum().h_p;
    double w = d / (hp * hp);
    for (int i = 0; i < grid.position().m_q; ++i)
        for (int j = 0; j < ni; ++j) {
            int k = i * ni + j;
            t.emplace_back(k, k, -2.0 * w);
            if (j + 1 < ni) t.emplace_back(k, k + 1, w);
            if (j - 1 >= 0) t.emplace_back(k, k - 1, w);
        }
}

// Upwinded q-transport p M^{-1} d/dq for the Langevin generator: forward
// difference where p > 0, backward where p < 0 (the row vanishes at p = 0).
// Its transpose is the decentered adjoint stencil.
inline void add_upwind_transport_q(Triplets& t, const Grid& grid, double inv_mass) {
    const auto& pos = grid.position();
    const auto& mom = grid.momentum();
    int ni = mom.interior();
    double invh = 1.0 / pos.h_q;
    for (int i = 0; i < pos.m_q; ++i)
        for (int j = 0; j < ni; ++j) {
            int k = i * ni + j;
            double pj = mom.node(j + 1) * inv_mass;
            double cp = std::max(pj, 0.0) * invh;
            double cm = std::min(pj, 0.0) * invh;
            if (cp != 0.0) {
                t.emplace_back(k, pos.wrap(i + 1) * ni + j, cp);
                t.emplace_back(k, k, -cp);
            }
            if (cm != 0.0) {
                t.emplace_back(k, pos.wrap(i - 1) * ni + j, -cm);
                t.emplace_back(k, k, cm);
            }
        }
}

inline void add_diagonal(Triplets& t, const Eigen::VectorXd& w) {
    for (int k = 0; k < w.size(); ++k)
        if (w[k] != 0.0) t.emplace_back(k, k, w[k]);
}

inline void check_grid(const DynamicsSpec& dyn, const Grid& grid) {
    if (dyn.is_langevin() && !grid.is_phase())
        throw DimensionError("Langevin dynamics requires a phase-space grid");
    if (!dyn.is_langevin() && grid.is_phase())
        throw DimensionError("overdamped dynamics requires a position-space grid");
    if (dyn.kind == DynamicsKind::overdamped2d && grid.kind() != Grid::Kind::periodic2d)
        throw DimensionError("overdamped2d requires a 2d periodic grid");
    if (dyn.kind == DynamicsKind::overdamped1d && grid.kind() != Grid::Kind::periodic1d)
        throw DimensionError("overdamped1d requires a 1d periodic grid");
}

// Generator of the reference dynamics.
inline Triplets reference_generator(const DynamicsSpec& dyn, const Grid& grid,
                                    const AssemblyOptions& opts) {
    Triplets t;
    const Potential& pot = dyn.potential;
    if (!dyn.is_langevin()) {
        Eigen::VectorXd mg1 = sample(grid, [&](double a, double b) { return -pot.d1(a, b); });
        add_centered_q(t, grid, 0, mg1);
        add_diffusion_q(t, grid, 0, 1.0 / dyn.beta);
        if (grid.kind() == Grid::Kind::periodic2d) {
            Eigen::VectorXd mg2 = sample(grid, [&](double a, double b) { return -pot.d2(a, b); });
            add_centered_q(t, grid, 1, mg2);
            add_diffusion_q(t, grid, 1, 1.0 / dyn.beta);
        }
        return t;
    }
    // Langevin: p M^-1 d/dq - V' d/dp + gamma (-p M^-1 d/dp + beta^-1 d2/dp2)
    if (opts.centered_langevin_transport) {
        Eigen::VectorXd pm = sample(grid, [&](double, double p) { return p / dyn.mass; });
        add_centered_q(t, grid, 0, pm);
    } else {
        add_upwind_transport_q(t, grid, 1.0 / dyn.mass);
    }
    Eigen::VectorXd mvp = sample(grid, [&](double q, double) { return -pot.d1(q, 0.0); });
    add_centered_p(t, grid, mvp);
    Eigen::VectorXd ou = sample(grid, [&](double, double p) { return -dyn.gamma * p / dyn.mass; });
    add_centered_p(t, grid, ou);
    add_diffusion_p(t, grid, dyn.gamma / dyn.beta);
    return t;
}

// Generator of the physical perturbation F^T grad (overdamped) or
// F d/dp (Langevin).
inline Triplets physical_generator(const DynamicsSpec& dyn, const Grid& grid) {
    Triplets t;
    if (dyn.is_langevin()) {
        Eigen::VectorXd c = Eigen::VectorXd::Constant(grid.dof(), dyn.forcing[0]);
        add_centered_p(t, grid, c);
        return t;
    }
    Eigen::VectorXd c1 = Eigen::VectorXd::Constant(grid.dof(), dyn.forcing[0]);
    add_centered_q(t, grid, 0, c1);
    if (grid.kind() == Grid::Kind::periodic2d && dyn.forcing[1] != 0.0) {
        Eigen::VectorXd c2 = Eigen::VectorXd::Constant(grid.dof(), dyn.forcing[1]);
        add_centered_q(t, grid, 1, c2);
    }
    return t;
}

/// Zero-order Feynman-Kac weight field (unscaled): beta xi^T grad V for a
/// q target, beta xi^T M^{-1} p for a p target.
inline Eigen::VectorXd fk_weight_field(const DynamicsSpec& dyn, const ExtraForcing& extra,
                                       const Grid& grid) {
    const Potential& pot = dyn.potential;
    double beta = dyn.beta;
    if (extra.target == ExtraForcing::Target::p) {
        double c = beta * extra.xi[0] / dyn.mass;
        return sample(grid, [c](double, double p) { return c * p; });
    }
    if (dyn.is_langevin()) {
        double xi = extra.xi[0];
        return sample(grid, [&pot, beta, xi](double q, double) { return beta * xi * pot.d1(q, 0.0); });
    }
    Eigen::Vector2d xi = extra.xi;
    return sample(grid, [&pot, beta, xi](double a, double b) {
        return beta * (xi[0] * pot.d1(a, b) + xi[1] * pot.d2(a, b));
    });
}

// Generator of the extra forcing.
inline Triplets extra_generator(const DynamicsSpec& dyn, const ExtraForcing& extra,
                                const Grid& grid, const AssemblyOptions& opts) {
    Triplets t;
    const Potential& pot = dyn.potential;
    double beta = dyn.beta;
    switch (extra.type) {
        case ExtraForcing::Type::none:
            break;
        case ExtraForcing::Type::div_free_exp: {
            if (dyn.is_langevin()) {
                double xi = extra.xi[0];
                Eigen::VectorXd g = sample(grid, [&pot, beta, xi](double q, double) {
                    return xi * std::exp(beta * pot.v(q, 0.0));
                });
                add_centered_q(t, grid, 0, g);
                break;
            }
            for (int axis = 0; axis < dyn.position_dim(); ++axis) {
                if (extra.xi[axis] == 0.0) continue;
                double xi = extra.xi[axis];
                Eigen::VectorXd g = sample(grid, [&pot, beta, xi](double a, double b) {
                    return xi * std::exp(beta * pot.v(a, b));
                });
                add_centered_q(t, grid, axis, g);
            }
            break;
        }
        case ExtraForcing::Type::div_free_symplectic: {
            if (dyn.kind != DynamicsKind::overdamped2d)
                throw ConfigError("div_free_symplectic requires 2d overdamped dynamics");
            Eigen::Matrix2d A = extra.A;
            Eigen::VectorXd g1 = sample(grid, [&pot, A](double a, double b) {
                return A(0, 0) * pot.d1(a, b) + A(0, 1) * pot.d2(a, b);
            });
            Eigen::VectorXd g2 = sample(grid, [&pot, A](double a, double b) {
                return A(1, 0) * pot.d1(a, b) + A(1, 1) * pot.d2(a, b);
            });
            add_centered_q(t, grid, 0, g1);
            add_centered_q(t, grid, 1, g2);
            break;
        }
        case ExtraForcing::Type::modified_fd: {
            if (!dyn.is_langevin()) {
                return reference_generator(dyn, grid, opts);
            }
            if (extra.target == ExtraForcing::Target::q) {
                Eigen::VectorXd mvp = sample(grid, [&pot](double q, double) { return -pot.d1(q, 0.0); });
                add_centered_q(t, grid, 0, mvp);
                add_diffusion_q(t, grid, 0, 1.0 / beta);
            } else if (extra.target == ExtraForcing::Target::p) {
                Eigen::VectorXd ou = sample(grid, [&dyn](double, double p) { return -p / dyn.mass; });
                add_centered_p(t, grid, ou);
                add_diffusion_p(t, grid, 1.0 / beta);
            } else {
                throw ConfigError("modified_fd target must be q or p for Langevin dynamics");
            }
            break;
        }
        case ExtraForcing::Type::feynman_kac: {
            if (extra.target == ExtraForcing::Target::p && !dyn.is_langevin())
                throw ConfigError("feynman_kac p target requires Langevin dynamics");
            if (extra.target == ExtraForcing::Target::full)
                throw ConfigError("feynman_kac target must be q or p");
            if (extra.target == ExtraForcing::Target::q) {
                if (dyn.is_langevin()) {
                    Eigen::VectorXd c = Eigen::VectorXd::Constant(grid.dof(), -extra.xi[0]);
                    add_centered_q(t, grid, 0, c);
                } else {
                    for (int axis = 0; axis < dyn.position_dim(); ++axis) {
                        if (extra.xi[axis] == 0.0) continue;
                        Eigen::VectorXd c = Eigen::VectorXd::Constant(grid.dof(), -extra.xi[axis]);
                        add_centered_q(t, grid, axis, c);
                    }
                }
            } else {
                Eigen::VectorXd c = Eigen::VectorXd::Constant(grid.dof(), -extra.xi[0]);
                add_centered_p(t, grid, c);
            }
            add_diagonal(t, fk_weight_field(dyn, extra, grid));
            break;
        }
    }
    return t;
}

inline Eigen::SparseMatrix<double> from_triplets(std::size_t n, const Triplets& t) {
    const long rows = long(n);
    Eigen::SparseMatrix<double> m{rows, rows};
    m.setFromTriplets(t.begin(), t.end());
    m.makeCompressed();
    return m;
}

}  // namespace detail

/// Reference Fokker-Planck operator in adjoint form: the exact transpose of
/// the upwinded/centered generator discretization.
inline SparseOperator assemble_reference_adjoint(const DynamicsSpec& dyn, const Grid& grid,
                                                 const AssemblyOptions& opts = {}) {
    detail::check_grid(dyn, grid);
    auto gen = detail::from_triplets(grid.dof(), detail::reference_generator(dyn, grid, opts));
    SparseOperator op;
    op.matrix = gen.transpose();
    op.grid = &grid;
    op.form = OperatorForm::adjoint;
    return op;
}

/// Adjoint of the physical perturbation.
inline SparseOperator assemble_perturbation_adjoint(const DynamicsSpec& dyn, const Grid& grid) {
    detail::check_grid(dyn, grid);
    auto gen = detail::from_triplets(grid.dof(), detail::physical_generator(dyn, grid));
    SparseOperator op;
    op.matrix = gen.transpose();
    op.grid = &grid;
    op.form = OperatorForm::adjoint;
    return op;
}

/// Adjoint of an extra (synthetic) forcing. For Feynman-Kac variants the
/// diagonal multiplication term is self-adjoint and carried in fk_weight.
inline SparseOperator assemble_perturbation_adjoint(const DynamicsSpec& dyn,
                                                    const ExtraForcing& extra, const Grid& grid,
                                                    const AssemblyOptions& opts = {}) {
    detail::check_grid(dyn, grid);
    auto gen = detail::from_triplets(grid.dof(), detail::extra_generator(dyn, extra, grid, opts));
    SparseOperator op;
    op.matrix = gen.transpose();
    op.grid = &grid;
    op.form = OperatorForm::adjoint;
    if (extra.is_fk()) op.fk_weight = detail::fk_weight_field(dyn, extra, grid);
    return op;
}

/// Composite operator for magnitudes (eta, alpha): reference plus eta times
/// the physical perturbation plus eta*alpha times the extra forcing. The
/// generator form is the exact transpose of the adjoint form.
inline SparseOperator assemble_composite(const DynamicsSpec& dyn, double eta, double alpha,
                                         const Grid& grid, OperatorForm form,
                                         const AssemblyOptions& opts = {}) {
    detail::check_grid(dyn, grid);
    if (!dyn.extra.admissible_at(eta, alpha, dyn.gamma))
        throw AdmissibilityError("assemble_composite: coefficient positivity violated at eta=" +
                                 std::to_string(eta) + ", alpha=" + std::to_string(alpha));
    auto ref = detail::from_triplets(grid.dof(), detail::reference_generator(dyn, grid, opts));
    auto phys = detail::from_triplets(grid.dof(), detail::physical_generator(dyn, grid));
    Eigen::SparseMatrix<double> gen = ref;
    if (eta != 0.0) gen = gen + Eigen::SparseMatrix<double>(eta * phys);
    if (eta * alpha != 0.0 && dyn.extra.type != ExtraForcing::Type::none) {
        auto extra = detail::from_triplets(grid.dof(),
                                           detail::extra_generator(dyn, dyn.extra, grid, opts));
        gen = gen + Eigen::SparseMatrix<double>((eta * alpha) * extra);
    }
    SparseOperator op;
    op.matrix = form == OperatorForm::adjoint ? Eigen::SparseMatrix<double>(gen.transpose()) : gen;
    op.grid = &grid;
    op.form = form;
    if (dyn.extra.is_fk() && eta * alpha != 0.0)
        op.fk_weight = (eta * alpha) * detail::fk_weight_field(dyn, dyn.extra, grid);
    return op;
}

/// Unscaled FK weight field for diagnostics and Monte Carlo reweighting.
inline Eigen::VectorXd fk_weight_field(const DynamicsSpec& dyn, const ExtraForcing& extra,
                                       const Grid& grid) {
    return detail::fk_weight_field(dyn, extra, grid);
}

/// Coordinate-format Matrix Market dump (1-based indices).
inline void write_matrix_market(const SparseOperator& op, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("write_matrix_market: cannot open " + path);
    out << "%%MatrixMarket matrix coordinate real general\n";
    out << op.matrix.rows() << " " << op.matrix.cols() << " " << op.matrix.nonZeros() << "\n";
    char buf[64];
    for (int k = 0; k < op.matrix.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(op.matrix, k); it; ++it) {
            std::snprintf(buf, sizeof buf, "%ld %ld %.17g\n", long(it.row()) + 1, long(it.col()) + 1,
                          it.value());
            out << buf;
        }
}

}  // namespace ness
