#pragma once

// Test-only independent oracles: quadrature references, the closed-form
// tilted 1d density, and dense linear-algebra routes. These deliberately
// avoid the library's sparse solve and grid-quadrature paths.

#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace oracles {

/// Composite Simpson rule on [a, b] with n panels (n even).
inline double simpson(const std::function<double(double)>& f, double a, double b, int n = 4096) {
    if (n % 2) ++n;
    double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
    return s * h / 3.0;
}

/// Richardson-refined Simpson: doubles panels until two refinements agree.
inline double refined_quadrature(const std::function<double(double)>& f, double a, double b,
                                 double rel_tol = 1e-12) {
    double prev = simpson(f, a, b, 256);
    for (int n = 512; n <= 1 << 20; n *= 2) {
        double cur = simpson(f, a, b, n);
        if (std::abs(cur - prev) <= rel_tol * std::abs(cur)) return cur;
        prev = cur;
    }
    return prev;
}

/// Closed-form nonequilibrium 1d overdamped density for constant forcing:
/// psi(q) proportional to exp(-beta W(q)) int_q^{q+1} exp(beta W(s)) ds with
/// the tilted potential W(q) = V(q) - eta F q, normalized on [0, 1).
struct Tilted1d {
    std::function<double(double)> V;
    double beta, eta, F;

    double unnormalized(double q) const {
        auto W = [&](double s) { return V(s) - eta * F * s; };
        auto integrand = [&](double s) { return std::exp(beta * W(s)); };
        return std::exp(-beta * W(q)) * simpson(integrand, q, q + 1.0, 8192);
    }

    double normalization() const {
        return simpson([&](double q) { return unnormalized(q); }, 0.0, 1.0, 2048);
    }
};

/// Dense-matrix asymptotic variance at equilibrium: sigma^2 = 2 quad(R_c *
/// Rhat * psi) with Rhat from a dense full-pivot LU of the constrained
/// negative generator. Independent of the sparse solver path.
inline double dense_variance(const Eigen::MatrixXd& neg_generator, const Eigen::VectorXd& psi,
                             const Eigen::VectorXd& r, double cell_volume) {
    const long n = psi.size();
    double mean = (r.cwiseProduct(psi)).sum() * cell_volume;
    Eigen::VectorXd rc = r.array() - mean;
    Eigen::MatrixXd A = neg_generator;
    for (long j = 0; j < n; ++j) A(0, j) = psi[j] * cell_volume;
    Eigen::VectorXd b = rc;
    b[0] = 0.0;
    Eigen::VectorXd rhat = A.fullPivLu().solve(b);
    rhat.array() -= (rhat.cwiseProduct(psi)).sum() * cell_volume;
    return 2.0 * (rc.cwiseProduct(rhat).cwiseProduct(psi)).sum() * cell_volume;
}

/// chi-squared critical value at p = 0.01 for 24 degrees of freedom
/// (25-bin equilibrium histogram test).
inline constexpr double chi2_crit_dof24_p01 = 42.97982013935165;

/// int_0^1 exp(-cos(2 pi q)) dq = I_0(1).
inline constexpr double bessel_i0_1 = 1.2660658777520084;

}  // namespace oracles
