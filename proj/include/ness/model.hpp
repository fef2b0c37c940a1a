#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ness/grid.hpp"

namespace ness {

inline constexpr double two_pi = 2.0 * std::numbers::pi;

/// Periodic potential with analytic first and second derivatives.
struct Potential {
    int dim = 1;
    std::function<double(double, double)> v;
    std::function<double(double, double)> d1;      // dV/dq1
    std::function<double(double, double)> d2;      // dV/dq2 (0 in 1d)
    std::function<double(double, double)> d11;     // second derivative along q1
    std::function<double(double, double)> d22;
    std::string name = "custom";

    double laplacian(double q1, double q2) const { return d11(q1, q2) + d22(q1, q2); }

    /// V(q) = cos(2 pi q)
    static Potential cosine1d() {
        Potential p;
        p.dim = 1;
        p.name = "cosine1d";
        p.v = [](double q, double) { return std::cos(two_pi * q); };
        p.d1 = [](double q, double) { return -two_pi * std::sin(two_pi * q); };
        p.d2 = [](double, double) { return 0.0; };
        p.d11 = [](double q, double) { return -two_pi * two_pi * std::cos(two_pi * q); };
        p.d22 = [](double, double) { return 0.0; };
        return p;
    }

    /// V(q) = cos(2 pi q1)/2 + cos(2 pi q2) + kappa cos(2 pi (q1 - q2))
    static Potential two_scale2d(double kappa) {
        Potential p;
        p.dim = 2;
        p.name = "twoscale2d";
        p.v = [kappa](double a, double b) {
            return 0.5 * std::cos(two_pi * a) + std::cos(two_pi * b) + kappa * std::cos(two_pi * (a - b));
        };
        p.d1 = [kappa](double a, double b) {
            return -0.5 * two_pi * std::sin(two_pi * a) - kappa * two_pi * std::sin(two_pi * (a - b));
        };
        p.d2 = [kappa](double a, double b) {
            return -two_pi * std::sin(two_pi * b) + kappa * two_pi * std::sin(two_pi * (a - b));
        };
        p.d11 = [kappa](double a, double b) {
            return -0.5 * two_pi * two_pi * std::cos(two_pi * a) - kappa * two_pi * two_pi * std::cos(two_pi * (a - b));
        };
        p.d22 = [kappa](double a, double b) {
            return -two_pi * two_pi * std::cos(two_pi * b) - kappa * two_pi * two_pi * std::cos(two_pi * (a - b));
        };
        return p;
    }

    static Potential zero(int dim) {
        Potential p;
        p.dim = dim;
        p.name = "zero";
        auto z = [](double, double) { return 0.0; };
        p.v = z; p.d1 = z; p.d2 = z; p.d11 = z; p.d22 = z;
        return p;
    }
};

enum class DynamicsKind { overdamped1d, overdamped2d, langevin1d };

/// Synthetic-forcing variants. The admissibility condition (the adjoint of
/// the extra generator annihilates constants) holds analytically for every
/// variant; admissibility_residual verifies it numerically.
struct ExtraForcing {
    enum class Type { none, div_free_exp, div_free_symplectic, modified_fd, feynman_kac };
    enum class Target { full, q, p };

    Type type = Type::none;
    Target target = Target::full;
    Eigen::Vector2d xi{1.0, 0.0};                       // fk shift direction / exp field direction
    Eigen::Matrix2d A = (Eigen::Matrix2d() << 0.0, -1.0, 1.0, 0.0).finished();

    static ExtraForcing none() { return {}; }

    /// G = e^{beta V} xi_G; in 1d the only divergence-free field (xi_G = 1).
    /// The 2d default direction (1,1) applies e^V to every partial.
    static ExtraForcing div_free_exp(Eigen::Vector2d xi_g = {1.0, 1.0}) {
        ExtraForcing f;
        f.type = Type::div_free_exp;
        f.xi = xi_g;
        return f;
    }

    /// G = A grad V with antisymmetric A (2d overdamped only).
    static ExtraForcing div_free_symplectic(
        Eigen::Matrix2d A = (Eigen::Matrix2d() << 0.0, -1.0, 1.0, 0.0).finished()) {
        ExtraForcing f;
        f.type = Type::div_free_symplectic;
        f.A = A;
        return f;
    }

    /// Rescaled fluctuation-dissipation: the full generator block
    /// (overdamped) or the q/p sub-block (Langevin).
    static ExtraForcing modified_fd(Target t = Target::full) {
        ExtraForcing f;
        f.type = Type::modified_fd;
        f.target = t;
        return f;
    }

    static ExtraForcing feynman_kac(Target t, Eigen::Vector2d xi = {1.0, 0.0}) {
        ExtraForcing f;
        f.type = Type::feynman_kac;
        f.target = t;
        f.xi = xi;
        return f;
    }

    bool is_fk() const { return type == Type::feynman_kac; }

    /// Positivity constraints on the composite coefficients.
    bool admissible_at(double eta, double alpha, double gamma) const {
        if (type != Type::modified_fd) return true;
        if (target == Target::q) return alpha == 0.0 || eta == 0.0 || alpha * eta > 0.0;
        if (target == Target::p) return gamma + alpha * eta > 0.0;
        return 1.0 + alpha * eta > 0.0;
    }
};

/// Dynamics kind, physical parameters, potential and forcings.
struct DynamicsSpec {
    DynamicsKind kind = DynamicsKind::overdamped1d;
    double beta = 1.0;
    double gamma = 1.0;   // Langevin only
    double mass = 1.0;
    Potential potential = Potential::cosine1d();
    Eigen::Vector2d forcing{1.0, 0.0};   // constant nongradient physical forcing
    ExtraForcing extra;

    bool is_langevin() const { return kind == DynamicsKind::langevin1d; }
    int position_dim() const { return kind == DynamicsKind::overdamped2d ? 2 : 1; }

    void validate() const {
        if (beta <= 0) throw ConfigError("DynamicsSpec: beta must be > 0");
        if (mass <= 0) throw ConfigError("DynamicsSpec: mass must be > 0");
        if (is_langevin() && gamma <= 0) throw ConfigError("DynamicsSpec: gamma must be > 0");
        if (potential.dim != position_dim()) throw ConfigError("DynamicsSpec: potential dimension mismatch");
        if (forcing.norm() == 0.0) throw ConfigError("DynamicsSpec: physical forcing must be nonzero");
    }

    double hamiltonian(double q, double p) const {
        return potential.v(q, 0.0) + p * p / (2.0 * mass);
    }
};

inline Grid default_grid(const DynamicsSpec& dyn, int m_q, int m_p = 0, double p_max = 6.0) {
    switch (dyn.kind) {
        case DynamicsKind::overdamped1d: return Grid::periodic1d(m_q);
        case DynamicsKind::overdamped2d: return Grid::periodic2d(m_q);
        case DynamicsKind::langevin1d: return Grid::phase(m_q, m_p > 0 ? m_p : 1000, p_max);
    }
    throw ConfigError("default_grid: unknown dynamics kind");
}

/// Boltzmann-Gibbs density of the reference dynamics, sampled on the grid
/// and normalized by the grid quadrature.
inline GridFunction gibbs_density(const DynamicsSpec& dyn, const Grid& grid) {
    Eigen::VectorXd v;
    if (dyn.is_langevin()) {
        v = sample(grid, [&](double q, double p) { return std::exp(-dyn.beta * dyn.hamiltonian(q, p)); });
    } else {
        v = sample(grid, [&](double a, double b) { return std::exp(-dyn.beta * dyn.potential.v(a, b)); });
    }
    v /= quadrature(grid, v);
    return GridFunction(grid, std::move(v), FieldTag::density);
}

/// Observable on state space. For phase grids the callable receives (q, p).
struct Observable {
    std::function<double(double, double)> r;
    std::string name = "custom";

    Eigen::VectorXd on(const Grid& grid) const { return sample(grid, r); }

    /// (a cos(2 pi q1) + b sin(2 pi q1)) e^{beta V}; V is the position
    /// potential for both overdamped and Langevin dynamics.
    static Observable normalized_trig(const DynamicsSpec& dyn, double a, double b) {
        Observable o;
        o.name = "normtrig";
        double beta = dyn.beta;
        Potential pot = dyn.potential;
        bool langevin = dyn.is_langevin();
        o.r = [beta, pot, a, b, langevin](double x, double y) {
            double vq = langevin ? pot.v(x, 0.0) : pot.v(x, y);
            return (a * std::cos(two_pi * x) + b * std::sin(two_pi * x)) * std::exp(beta * vq);
        };
        return o;
    }

    /// R(p) = F^T M^{-1} p (Langevin mobility flux).
    static Observable mobility_velocity(const DynamicsSpec& dyn) {
        Observable o;
        o.name = "mobility";
        double f = dyn.forcing[0], minv = 1.0 / dyn.mass;
        o.r = [f, minv](double, double p) { return f * minv * p; };
        return o;
    }

    /// R(q) = F^T grad V (overdamped projected force).
    static Observable projected_force(const DynamicsSpec& dyn) {
        Observable o;
        o.name = "projforce";
        Potential pot = dyn.potential;
        Eigen::Vector2d F = dyn.forcing;
        o.r = [pot, F](double a, double b) { return F[0] * pot.d1(a, b) + F[1] * pot.d2(a, b); };
        return o;
    }
};

/// Conjugate response S: the physical perturbation's weighted adjoint applied
/// to constants. beta F^T M^{-1} p for Langevin, beta F^T grad V overdamped.
inline GridFunction conjugate_response(const DynamicsSpec& dyn, const Grid& grid) {
    dyn.validate();
    Eigen::VectorXd v;
    if (dyn.is_langevin()) {
        double c = dyn.beta * dyn.forcing[0] / dyn.mass;
        v = sample(grid, [c](double, double p) { return c * p; });
    } else {
        double beta = dyn.beta;
        Eigen::Vector2d F = dyn.forcing;
        const Potential& pot = dyn.potential;
        v = sample(grid, [&pot, beta, F](double a, double b) {
            return beta * (F[0] * pot.d1(a, b) + F[1] * pot.d2(a, b));
        });
    }
    return GridFunction(grid, std::move(v), FieldTag::mean_zero);
}

namespace detail {

/// Smooth test function with analytic first and pure second derivatives,
/// used by the admissibility check. Coordinates are (q1, q2) for overdamped
/// grids and (q, p) for phase grids.
struct TestFunction {
    std::function<double(double, double)> f;
    std::function<double(double, double)> d1, d2;
    std::function<double(double, double)> d11, d22;
};

inline std::vector<TestFunction> admissibility_basis(const DynamicsSpec& dyn) {
    auto zero2 = [](double, double) { return 0.0; };
    auto trig_x = [zero2](int k, bool sin_) {
        TestFunction t;
        double w = two_pi * k;
        t.f = [w, sin_](double x, double) { return sin_ ? std::sin(w * x) : std::cos(w * x); };
        t.d1 = [w, sin_](double x, double) { return sin_ ? w * std::cos(w * x) : -w * std::sin(w * x); };
        t.d11 = [w, sin_](double x, double) { return sin_ ? -w * w * std::sin(w * x) : -w * w * std::cos(w * x); };
        t.d2 = zero2;
        t.d22 = zero2;
        return t;
    };

    std::vector<TestFunction> basis;
    switch (dyn.kind) {
        case DynamicsKind::overdamped1d:
            basis = {trig_x(1, true), trig_x(1, false), trig_x(2, true), trig_x(2, false)};
            break;
        case DynamicsKind::overdamped2d: {
            auto trig_y = [zero2](int k, bool sin_) {
                TestFunction t;
                double w = two_pi * k;
                t.f = [w, sin_](double, double y) { return sin_ ? std::sin(w * y) : std::cos(w * y); };
                t.d2 = [w, sin_](double, double y) { return sin_ ? w * std::cos(w * y) : -w * std::sin(w * y); };
                t.d22 = [w, sin_](double, double y) { return sin_ ? -w * w * std::sin(w * y) : -w * w * std::cos(w * y); };
                t.d1 = zero2;
                t.d11 = zero2;
                return t;
            };
            basis = {trig_x(1, true), trig_x(1, false), trig_y(1, true), trig_y(1, false),
                     trig_x(2, true), trig_y(2, false)};
            TestFunction mixed;
            mixed.f = [](double x, double y) { return std::sin(two_pi * x) * std::cos(two_pi * y); };
            mixed.d1 = [](double x, double y) { return two_pi * std::cos(two_pi * x) * std::cos(two_pi * y); };
            mixed.d2 = [](double x, double y) { return -two_pi * std::sin(two_pi * x) * std::sin(two_pi * y); };
            mixed.d11 = [](double x, double y) { return -two_pi * two_pi * std::sin(two_pi * x) * std::cos(two_pi * y); };
            mixed.d22 = [](double x, double y) { return -two_pi * two_pi * std::sin(two_pi * x) * std::cos(two_pi * y); };
            basis.push_back(mixed);
            break;
        }
        case DynamicsKind::langevin1d: {
            // trig in q times Gaussian-damped monomials in p; the damping
            // keeps truncated-momentum quadrature tails negligible
            auto mode = [](int k, bool sin_, int ppow) {
                TestFunction t;
                double w = two_pi * k;
                auto base = [w, sin_](double x) { return sin_ ? std::sin(w * x) : std::cos(w * x); };
                auto dbase = [w, sin_](double x) { return sin_ ? w * std::cos(w * x) : -w * std::sin(w * x); };
                auto d2base = [w, sin_](double x) { return sin_ ? -w * w * std::sin(w * x) : -w * w * std::cos(w * x); };
                auto damp = [ppow](double p) { return std::pow(p, ppow) * std::exp(-0.25 * p * p); };
                auto ddamp = [ppow](double p) {
                    double e = std::exp(-0.25 * p * p);
                    if (ppow == 0) return -0.5 * p * e;
                    return (ppow * std::pow(p, ppow - 1) - 0.5 * std::pow(p, ppow + 1)) * e;
                };
                auto d2damp = [ppow](double p) {
                    double e = std::exp(-0.25 * p * p);
                    double a = ppow >= 2 ? ppow * (ppow - 1) * std::pow(p, ppow - 2) : 0.0;
                    double b = -0.5 * (2 * ppow + 1) * std::pow(p, ppow);
                    double c = 0.25 * std::pow(p, ppow + 2);
                    return (a + b + c) * e;
                };
                t.f = [base, damp](double x, double p) { return base(x) * damp(p); };
                t.d1 = [dbase, damp](double x, double p) { return dbase(x) * damp(p); };
                t.d2 = [base, ddamp](double x, double p) { return base(x) * ddamp(p); };
                t.d11 = [d2base, damp](double x, double p) { return d2base(x) * damp(p); };
                t.d22 = [base, d2damp](double x, double p) { return base(x) * d2damp(p); };
                return t;
            };
            basis = {mode(1, true, 0), mode(1, false, 0), mode(1, true, 1),
                     mode(1, false, 1), mode(2, true, 0), mode(1, true, 2)};
            break;
        }
    }
    return basis;
}

/// Analytic action of the extra generator on a test function at one point.
/// Coordinates: (x, y) = (q1, q2) overdamped, (q, p) for phase grids.
inline double extra_generator_on(const DynamicsSpec& dyn, const ExtraForcing& extra,
                                 const TestFunction& phi, double x, double y) {
    const Potential& pot = dyn.potential;
    double beta = dyn.beta;
    switch (extra.type) {
        case ExtraForcing::Type::none:
            return 0.0;
        case ExtraForcing::Type::div_free_exp: {
            if (dyn.is_langevin())
                return std::exp(beta * pot.v(x, 0.0)) * extra.xi[0] * phi.d1(x, y);
            double g = std::exp(beta * pot.v(x, y));
            double out = g * extra.xi[0] * phi.d1(x, y);
            if (dyn.position_dim() == 2) out += g * extra.xi[1] * phi.d2(x, y);
            return out;
        }
        case ExtraForcing::Type::div_free_symplectic: {
            Eigen::Vector2d grad(pot.d1(x, y), pot.d2(x, y));
            Eigen::Vector2d G = extra.A * grad;
            return G[0] * phi.d1(x, y) + G[1] * phi.d2(x, y);
        }
        case ExtraForcing::Type::modified_fd: {
            if (!dyn.is_langevin()) {
                double out = -pot.d1(x, y) * phi.d1(x, y) + phi.d11(x, y) / beta;
                if (dyn.position_dim() == 2) out += -pot.d2(x, y) * phi.d2(x, y) + phi.d22(x, y) / beta;
                return out;
            }
            if (extra.target == ExtraForcing::Target::q)
                return -pot.d1(x, 0.0) * phi.d1(x, y) + phi.d11(x, y) / beta;
            return -(y / dyn.mass) * phi.d2(x, y) + phi.d22(x, y) / beta;  // p target
        }
        case ExtraForcing::Type::feynman_kac: {
            if (extra.target == ExtraForcing::Target::p)
                return extra.xi[0] * (beta * y / dyn.mass * phi.f(x, y) - phi.d2(x, y));
            if (dyn.is_langevin())
                return extra.xi[0] * (beta * pot.d1(x, 0.0) * phi.f(x, y) - phi.d1(x, y));
            double w = beta * (extra.xi[0] * pot.d1(x, y) + extra.xi[1] * pot.d2(x, y));
            return w * phi.f(x, y) - (extra.xi[0] * phi.d1(x, y) + extra.xi[1] * phi.d2(x, y));
        }
    }
    return 0.0;
}

}  // namespace detail

/// Verification grid for the admissibility check; refine scales resolution.
inline Grid admissibility_grid(const DynamicsSpec& dyn, int refine = 1) {
    switch (dyn.kind) {
        case DynamicsKind::overdamped1d: return Grid::periodic1d(512 * refine);
        case DynamicsKind::overdamped2d: return Grid::periodic2d(128 * refine);
        case DynamicsKind::langevin1d: return Grid::phase(96 * refine, 400 * refine + 1, 8.0);
    }
    throw ConfigError("admissibility_grid");
}

/// Stationarity defect of the extra forcing: max over a fixed basis of
/// low-frequency test functions phi of |integral of (L_extra phi) psi0|.
/// The generator action is analytic; only the integral is discretized.
inline double admissibility_residual(const DynamicsSpec& dyn, const ExtraForcing& extra, int refine = 1) {
    if (extra.type == ExtraForcing::Type::none)
        throw ConfigError("admissibility_residual: extra forcing is none");
    dyn.validate();
    Grid grid = admissibility_grid(dyn, refine);
    GridFunction psi0 = gibbs_density(dyn, grid);
    auto basis = detail::admissibility_basis(dyn);

    double worst = 0.0;
    for (const auto& phi : basis) {
        Eigen::VectorXd integrand(grid.dof());
        for (std::size_t k = 0; k < grid.dof(); ++k) {
            double x = grid.q1(k);
            double y = grid.kind() == Grid::Kind::periodic2d ? grid.q2(k)
                       : grid.is_phase() ? grid.p(k)
                                         : 0.0;
            integrand[long(k)] = detail::extra_generator_on(dyn, extra, phi, x, y) * psi0.values[long(k)];
        }
        worst = std::max(worst, std::abs(quadrature(grid, integrand)));
    }
    return worst;
}

}  // namespace ness
