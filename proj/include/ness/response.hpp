#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "ness/model.hpp"
#include "ness/parallel.hpp"
#include "ness/steady.hpp"

namespace ness {

/// Normalization constants (a, b) making the first- and second-order
/// responses of the trigonometric observable equal to one.
struct Normalization {
    double a = 0.0;
    double b = 0.0;
};

/// b = 1 / quad(sin(2 pi q1) e^{beta V} psibar_1),
/// a = 1 / quad(cos(2 pi q1) e^{beta V} psibar_2), the discrete counterparts
/// of the Gibbs-weighted integrals defining the normalized observable.
inline Normalization normalize_observable(const DynamicsSpec& dyn, const Grid& grid,
                                          const SolveTolerances& tol = {}) {
    DynamicsSpec ref = dyn;
    ref.extra = ExtraForcing::none();
    ResponseHierarchy h = solve_hierarchy(ref, grid, 0.0, 2, tol);
    double beta = dyn.beta;
    const Potential& pot = dyn.potential;
    bool langevin = dyn.is_langevin();
    Eigen::VectorXd sin_ev = sample(grid, [&](double x, double y) {
        double vq = langevin ? pot.v(x, 0.0) : pot.v(x, y);
        return std::sin(two_pi * x) * std::exp(beta * vq);
    });
    Eigen::VectorXd cos_ev = sample(grid, [&](double x, double y) {
        double vq = langevin ? pot.v(x, 0.0) : pot.v(x, y);
        return std::cos(two_pi * x) * std::exp(beta * vq);
    });
    double den_b = quadrature(grid, Eigen::VectorXd(sin_ev.cwiseProduct(h.bars[0].values)));
    double den_a = quadrature(grid, Eigen::VectorXd(cos_ev.cwiseProduct(h.bars[1].values)));
    if (std::abs(den_b) < 1e-12 || std::abs(den_a) < 1e-12)
        throw SolverError("normalize_observable: degenerate observable (vanishing response integral)");
    return {1.0 / den_a, 1.0 / den_b};
}

/// rho_k(alpha) = quad(R psibar_k(alpha)).
inline double response_order(const DynamicsSpec& dyn, const Grid& grid, const Observable& R,
                             double alpha, int k, const SolveTolerances& tol = {}) {
    ResponseHierarchy h = solve_hierarchy(dyn, grid, alpha, k, tol);
    return quadrature(grid, Eigen::VectorXd(R.on(grid).cwiseProduct(h.bars[std::size_t(k - 1)].values)));
}

struct AlphaStar {
    double value = 0.0;
    double rho2_phys = 0.0;
    double rho2_extra = 0.0;
};

/// alpha* = -rho2_phys / rho2_extra, the magnitude canceling the
/// second-order response; rho2 is affine in alpha so two hierarchy solves
/// determine it.
inline AlphaStar alpha_cancel_rho2(const DynamicsSpec& dyn, const Grid& grid, const Observable& R,
                                   const SolveTolerances& tol = {}) {
    if (dyn.extra.type == ExtraForcing::Type::none)
        throw ConfigError("alpha_cancel_rho2: dynamics has no extra forcing");
    HierarchySolver solver(dyn, grid, tol);
    Eigen::VectorXd r = R.on(grid);
    auto rho2_at = [&](double a) {
        ResponseHierarchy h = solver.solve(a, 2);
        return quadrature(grid, Eigen::VectorXd(r.cwiseProduct(h.bars[1].values)));
    };
    double r20 = rho2_at(0.0);
    double r21 = rho2_at(1.0);
    AlphaStar out;
    out.rho2_phys = r20;
    out.rho2_extra = r21 - r20;
    if (std::abs(out.rho2_extra) <= 1e-12 * std::abs(out.rho2_phys))
        throw SolverError("alpha_cancel_rho2: extra forcing has no second-order contribution");
    out.value = -out.rho2_phys / out.rho2_extra;
    return out;
}

struct CurvePoint {
    double eta = 0.0;
    double r = 0.0;
    double delta = 0.0;
    double lambda = 0.0;
    bool ok = false;
    std::string error;
};

struct ResponseCurve {
    std::vector<CurvePoint> points;
    double alpha = 0.0;
    double rho1 = 0.0;
};

struct ResponseOptions {
    double eta_max = 5.0;
    double eta_min = 1e-3;
    int scan_points = 48;
    double bisect_tol = 1e-4;
    int workers = 0;
    /// Momentum truncation widened to this p_max for |eta| > wide_eta_cut
    /// (Langevin divergence-free forcing at large drifts).
    double wide_p_max = 10.0;
    double wide_eta_cut = 1.0;
};

/// Response evaluation with the discrete equilibrium offset removed, so
/// r(0) = 0 identically. Holds the wide-momentum grid used by the Langevin
/// divergence-free forcing at large |eta|.
class ResponseEvaluator {
public:
    ResponseEvaluator(const DynamicsSpec& dyn, const Grid& grid, const Observable& R,
                      const SolveTolerances& tol = {}, const ResponseOptions& opts = {})
        : dyn_(dyn), grid_(&grid), obs_(R), tol_(tol), opts_(opts) {
        r_on_grid_ = R.on(grid);
        SteadySolution s0 = solve_steady_state(dyn_, grid, 0.0, 0.0, tol_);
        r0_offset_ = quadrature(grid, Eigen::VectorXd(r_on_grid_.cwiseProduct(s0.psi.values)));
        if (needs_wide_grid()) {
            const MomentumGrid& m = grid.momentum();
            wide_grid_.emplace(Grid::phase(grid.position().m_q, m.m_p, opts_.wide_p_max));
            wide_r_ = R.on(*wide_grid_);
            SteadySolution w0 = solve_steady_state(dyn_, *wide_grid_, 0.0, 0.0, tol_);
            wide_offset_ = quadrature(*wide_grid_, Eigen::VectorXd(wide_r_.cwiseProduct(w0.psi.values)));
        }
    }

    const Grid& grid() const { return *grid_; }
    const DynamicsSpec& dynamics() const { return dyn_; }
    const Observable& observable() const { return obs_; }

    CurvePoint evaluate(double eta, double alpha) const {
        CurvePoint pt;
        pt.eta = eta;
        try {
            bool wide = wide_grid_ && std::abs(eta) > opts_.wide_eta_cut;
            const Grid& g = wide ? *wide_grid_ : *grid_;
            SteadySolution st = solve_steady_state(dyn_, g, eta, alpha, tol_);
            const Eigen::VectorXd& r = wide ? wide_r_ : r_on_grid_;
            double off = wide ? wide_offset_ : r0_offset_;
            pt.r = quadrature(g, Eigen::VectorXd(r.cwiseProduct(st.psi.values))) - off;
            pt.lambda = st.lambda;
            pt.ok = true;
        } catch (const Error& e) {
            pt.error = e.what();
        }
        return pt;
    }

    VarianceResult variance(double eta, double alpha) const {
        bool wide = wide_grid_ && std::abs(eta) > opts_.wide_eta_cut;
        return asymptotic_variance(dyn_, wide ? *wide_grid_ : *grid_, eta, alpha, obs_, tol_);
    }

private:
    bool needs_wide_grid() const {
        return dyn_.is_langevin() && dyn_.extra.type == ExtraForcing::Type::div_free_exp &&
               grid_->is_phase() && opts_.wide_p_max > grid_->momentum().p_max;
    }

    DynamicsSpec dyn_;
    const Grid* grid_;
    Observable obs_;
    SolveTolerances tol_;
    ResponseOptions opts_;
    Eigen::VectorXd r_on_grid_;
    double r0_offset_ = 0.0;
    std::optional<Grid> wide_grid_;
    Eigen::VectorXd wide_r_;
    double wide_offset_ = 0.0;
};

struct Threshold {
    double eta = 0.0;
    bool saturated = false;
};

namespace detail {

inline double delta_at(const ResponseEvaluator& ev, double rho1, double eta, double alpha) {
    CurvePoint pt = ev.evaluate(eta, alpha);
    if (!pt.ok) throw SolverError("threshold scan: " + pt.error);
    return std::abs(pt.r - rho1 * eta) / std::abs(rho1 * eta);
}

/// Reference slope for the relative-deviation curves: the discrete curve's
/// own linear response at alpha = 0, by central difference at eta_min (so
/// delta -> 0 as eta -> 0 on upwind-biased grids too). Falls back to a
/// forward difference when -eta_min is inadmissible.
inline double delta_reference_slope(const ResponseEvaluator& ev, const ResponseOptions& opts) {
    const DynamicsSpec& dyn = ev.dynamics();
    double e = opts.eta_min;
    CurvePoint plus = ev.evaluate(e, 0.0);
    if (!plus.ok) throw SolverError("delta slope: " + plus.error);
    if (dyn.extra.admissible_at(-e, 0.0, dyn.gamma)) {
        CurvePoint minus = ev.evaluate(-e, 0.0);
        if (minus.ok) return (plus.r - minus.r) / (2.0 * e);
    }
    return plus.r / e;
}

inline Threshold eta_threshold_impl(const ResponseEvaluator& ev, double rho1, double alpha,
                                    double eps, const ResponseOptions& opts) {
    const DynamicsSpec& dyn = ev.dynamics();
    auto admissible = [&](double eta) { return dyn.extra.admissible_at(eta, alpha, dyn.gamma); };

    // geometric coarse scan, bracket the first crossing of eps
    double prev_eta = 0.0;
    bool have_prev = false;
    double lo = 0.0, hi = 0.0;
    bool bracketed = false;
    int n = opts.scan_points;
    for (int i = 0; i < n; ++i) {
        double eta = opts.eta_min * std::pow(opts.eta_max / opts.eta_min, double(i) / (n - 1));
        if (!admissible(eta)) break;
        double d = detail::delta_at(ev, rho1, eta, alpha);
        if (d >= eps) {
            lo = have_prev ? prev_eta : opts.eta_min * 0.1;
            hi = eta;
            bracketed = true;
            break;
        }
        prev_eta = eta;
        have_prev = true;
    }
    if (!bracketed) return {have_prev ? prev_eta : 0.0, true};

    while (hi - lo > opts.bisect_tol) {
        double mid = 0.5 * (lo + hi);
        if (detail::delta_at(ev, rho1, mid, alpha) >= eps)
            hi = mid;
        else
            lo = mid;
    }
    return {0.5 * (lo + hi), false};
}

}  // namespace detail

/// Full response curve r_alpha(eta) with per-point relative deviation from
/// the linear response. Failed points are flagged, not fatal.
inline ResponseCurve response_curve(const DynamicsSpec& dyn, const Grid& grid, const Observable& R,
                                    double alpha, std::vector<double> etas,
                                    const SolveTolerances& tol = {}, const ResponseOptions& opts = {}) {
    std::sort(etas.begin(), etas.end());
    ResponseEvaluator ev(dyn, grid, R, tol, opts);
    ResponseCurve curve;
    curve.alpha = alpha;
    curve.rho1 = response_order(dyn, grid, R, alpha, 1, tol);
    double slope = detail::delta_reference_slope(ev, opts);
    curve.points.resize(etas.size());
    parallel_for(etas.size(), [&](std::size_t i) {
        if (etas[i] == 0.0) {
            curve.points[i] = CurvePoint{0.0, 0.0, 0.0, 0.0, true, ""};
        } else {
            curve.points[i] = ev.evaluate(etas[i], alpha);
            if (curve.points[i].ok)
                curve.points[i].delta =
                    std::abs(curve.points[i].r - slope * etas[i]) / std::abs(slope * etas[i]);
        }
    }, opts.workers);
    return curve;
}


/// Smallest positive eta at which the response deviates from linearity by
/// the relative error eps: coarse geometric scan, then bisection on fresh
/// solves. Saturation (no crossing below eta_max) is flagged.
inline Threshold eta_threshold(const DynamicsSpec& dyn, const Grid& grid, const Observable& R,
                               double alpha, double eps, const SolveTolerances& tol = {},
                               const ResponseOptions& opts = {}) {
    if (eps <= 0) throw ConfigError("eta_threshold: eps must be > 0");
    ResponseEvaluator ev(dyn, grid, R, tol, opts);
    double rho1 = detail::delta_reference_slope(ev, opts);
    if (rho1 == 0.0) throw SolverError("eta_threshold: vanishing linear response");
    return detail::eta_threshold_impl(ev, rho1, alpha, eps, opts);
}

struct AlphaMaxResult {
    double alpha = 0.0;
    double eta_threshold = 0.0;
    bool degenerate = false;   // every scanned alpha saturated
    std::vector<std::pair<double, double>> scan;   // (alpha, threshold) audit trail
};

/// alpha maximizing eta_alpha(eps) over an interval: coarse scan (17 points)
/// plus golden-section refinement; ties broken toward smaller |alpha|.
inline AlphaMaxResult alpha_max_threshold(const DynamicsSpec& dyn, const Grid& grid,
                                          const Observable& R, double eps, double alpha_lo,
                                          double alpha_hi, const SolveTolerances& tol = {},
                                          const ResponseOptions& opts = {}, int coarse_points = 17) {
    ResponseEvaluator ev(dyn, grid, R, tol, opts);
    double rho1 = detail::delta_reference_slope(ev, opts);

    std::vector<double> alphas(std::size_t(coarse_points), 0.0);
    for (int i = 0; i < coarse_points; ++i)
        alphas[std::size_t(i)] = alpha_lo + (alpha_hi - alpha_lo) * double(i) / (coarse_points - 1);
    std::vector<Threshold> th(alphas.size());
    parallel_for(alphas.size(), [&](std::size_t i) {
        th[i] = detail::eta_threshold_impl(ev, rho1, alphas[i], eps, opts);
    }, opts.workers);

    AlphaMaxResult out;
    for (std::size_t i = 0; i < alphas.size(); ++i) out.scan.emplace_back(alphas[i], th[i].eta);
    std::size_t best = 0;
    bool all_saturated = true;
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        all_saturated = all_saturated && th[i].saturated;
        bool better = th[i].eta > th[best].eta + 1e-12 ||
                      (std::abs(th[i].eta - th[best].eta) <= 1e-12 &&
                       std::abs(alphas[i]) < std::abs(alphas[best]));
        if (better) best = i;
    }
    if (all_saturated) {
        out.alpha = alphas[best];
        out.eta_threshold = th[best].eta;
        out.degenerate = true;
        return out;
    }

    double lo = alphas[best > 0 ? best - 1 : best];
    double hi = alphas[best + 1 < alphas.size() ? best + 1 : best];
    auto f = [&](double a) { return detail::eta_threshold_impl(ev, rho1, a, eps, opts).eta; };
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = hi - gr * (hi - lo), d = lo + gr * (hi - lo);
    double fc = f(c), fd = f(d);
    while (hi - lo > 1e-3) {
        if (fc > fd || (fc == fd && std::abs(c) < std::abs(d))) {
            hi = d; d = c; fd = fc;
            c = hi - gr * (hi - lo);
            fc = f(c);
        } else {
            lo = c; c = d; fc = fd;
            d = lo + gr * (hi - lo);
            fd = f(d);
        }
    }
    out.alpha = 0.5 * (lo + hi);
    out.eta_threshold = f(out.alpha);
    return out;
}

struct GainResult {
    double gain = 0.0;
    double eta0 = 0.0;
    double eta_alpha = 0.0;
    double var0 = 0.0;
    double var_alpha = 0.0;
    bool fk_convention = false;
    bool saturated = false;
};

/// Variance-reduction gain: scaled asymptotic variance at the baseline
/// threshold eta_0(eps) over the scaled variance at eta_alpha(eps).
inline GainResult variance_gain(const DynamicsSpec& dyn, const Grid& grid, const Observable& R,
                                double alpha, double eps, const SolveTolerances& tol = {},
                                const ResponseOptions& opts = {}) {
    DynamicsSpec base = dyn;
    base.extra = ExtraForcing::none();
    Threshold t0 = eta_threshold(base, grid, R, 0.0, eps, tol, opts);
    Threshold ta = alpha == 0.0 ? t0 : eta_threshold(dyn, grid, R, alpha, eps, tol, opts);

    GainResult out;
    out.eta0 = t0.eta;
    out.eta_alpha = ta.eta;
    out.saturated = ta.saturated || t0.saturated;
    VarianceResult v0 = asymptotic_variance(base, grid, t0.eta, 0.0, R, tol);
    out.var0 = v0.value;
    if (alpha == 0.0) {
        out.var_alpha = out.var0;
        out.gain = 1.0;
        return out;
    }
    ResponseEvaluator ev(dyn, grid, R, tol, opts);
    VarianceResult va = ev.variance(ta.eta, alpha);
    out.var_alpha = va.value;
    out.fk_convention = va.fk_convention;
    out.gain = (out.var0 / (t0.eta * t0.eta)) / (out.var_alpha / (ta.eta * ta.eta));
    return out;
}

struct CombineResult {
    Eigen::VectorXd alpha;
    Eigen::VectorXd residual;   // rho_2..rho_{k+1} at the returned alpha
    int iterations = 0;
};

/// Joint magnitudes of k extra forcings canceling response orders 2..k+1,
/// by damped Newton with finite-difference Jacobian over exact hierarchy
/// solves.
inline CombineResult combine_forcings(const DynamicsSpec& dyn, const Grid& grid, const Observable& R,
                                      const std::vector<ExtraForcing>& forcings,
                                      const SolveTolerances& tol = {}) {
    const int k = int(forcings.size());
    if (k < 1 || k > 3) throw ConfigError("combine_forcings: supported k is 1..3");
    DynamicsSpec ref = dyn;
    ref.extra = ExtraForcing::none();
    HierarchySolver solver(ref, grid, tol);
    Eigen::VectorXd r = R.on(grid);
    std::vector<const ExtraForcing*> fs;
    for (const auto& f : forcings) fs.push_back(&f);

    auto rho_vec = [&](const Eigen::VectorXd& a) {
        std::vector<double> av(a.data(), a.data() + a.size());
        ResponseHierarchy h = solver.solve_combined(fs, av, k + 1);
        Eigen::VectorXd out(k);
        for (int j = 0; j < k; ++j)
            out[j] = quadrature(grid, Eigen::VectorXd(r.cwiseProduct(h.bars[std::size_t(j + 1)].values)));
        return out;
    };

    Eigen::VectorXd alpha = Eigen::VectorXd::Zero(k);
    Eigen::VectorXd rho = rho_vec(alpha);
    int it = 0;
    for (; it < 50; ++it) {
        if (rho.cwiseAbs().maxCoeff() < 1e-12) break;
        Eigen::MatrixXd J(k, k);
        double step = 1e-5;
        for (int j = 0; j < k; ++j) {
            Eigen::VectorXd ap = alpha;
            ap[j] += step;
            J.col(j) = (rho_vec(ap) - rho) / step;
        }
        Eigen::VectorXd d = J.fullPivLu().solve(-rho);
        if (!d.allFinite()) throw SolverError("combine_forcings: singular Jacobian");
        double damp = 1.0;
        Eigen::VectorXd rho_new;
        for (int ls = 0; ls < 30; ++ls) {
            rho_new = rho_vec(alpha + damp * d);
            if (rho_new.norm() < rho.norm()) break;
            damp *= 0.5;
        }
        alpha += damp * d;
        rho = rho_new;
    }
    if (rho.cwiseAbs().maxCoeff() > 1e-8)
        throw SolverError("combine_forcings: Newton failed to converge (last residual " +
                          std::to_string(rho.cwiseAbs().maxCoeff()) + ")");
    return {alpha, rho, it};
}

}  // namespace ness
