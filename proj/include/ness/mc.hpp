#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "ness/model.hpp"
#include "ness/parallel.hpp"

namespace ness {

/// Counter-based generator (splitmix64 stream per (seed, stream) key):
/// replicas and seed replications draw from independent reproducible
/// streams regardless of scheduling.
class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
        : key_(mix(seed ^ mix(stream + 0x9E3779B97F4A7C15ull))) {}

    std::uint64_t next_u64() {
        ctr_ += 0x9E3779B97F4A7C15ull;
        return mix(key_ + ctr_);
    }

    /// uniform on (0, 1)
    double uniform() {
        return (double(next_u64() >> 11) + 0.5) * 0x1.0p-53;
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xBF58476D1CE4E5B9ull;
        z ^= z >> 27;
        z *= 0x94D049BB133111EBull;
        z ^= z >> 31;
        return z;
    }
    std::uint64_t key_;
    std::uint64_t ctr_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

enum class IntegratorScheme { euler_maruyama, splitting };

struct IntegratorConfig {
    double dt = 1e-4;
    double horizon = 1e3;       // total simulated time T
    double burn_in = 10.0;
    std::uint64_t seed = 0;
    IntegratorScheme scheme = IntegratorScheme::euler_maruyama;
    int batches = 32;           // batch-means blocks
    double resample_threshold = 0.5;   // FK: resample when ESS/N drops below
    int record_stride = 10;            // FK: recording interval in steps

    void validate() const {
        if (dt <= 0) throw ConfigError("IntegratorConfig: dt must be > 0");
        if (burn_in >= horizon) throw ConfigError("IntegratorConfig: burn-in must be < T");
    }
};

struct TrajectoryEstimate {
    double value = 0.0;               // estimator of rho_1 (time average / eta)
    double asymptotic_variance = 0.0; // batch-means estimate of sigma^2 of the time average
    double std_error = 0.0;
    double ess_min = 0.0;             // FK only
    int resample_events = 0;          // FK only
    double log_weight_rate = 0.0;     // FK only: average growth rate of log weights
};

namespace mc_detail {

/// One overdamped walker with forcing-modified drift and diffusion.
struct OverdampedWalker {
    const DynamicsSpec* dyn;
    double eta, alpha;
    double diff_scale = 1.0;   // multiplies 2/beta
    bool fk_shift = false;
    double q1 = 0.0, q2 = 0.0;

    OverdampedWalker(const DynamicsSpec& d, double eta_, double alpha_, bool allow_fk)
        : dyn(&d), eta(eta_), alpha(alpha_) {
        if (d.extra.type == ExtraForcing::Type::modified_fd) {
            if (1.0 + alpha * eta <= 0.0)
                throw AdmissibilityError("overdamped modified_fd requires 1 + alpha*eta > 0");
            diff_scale = 1.0 + alpha * eta;
        }
        if (d.extra.is_fk()) {
            if (!allow_fk) throw ConfigError("nemd_estimate requires a drift-realizable forcing");
            fk_shift = true;
        }
    }

    void drift(double& d1, double& d2) const {
        const Potential& pot = dyn->potential;
        double g1 = pot.d1(q1, q2), g2 = pot.d2(q1, q2);
        double scale = dyn->extra.type == ExtraForcing::Type::modified_fd ? diff_scale : 1.0;
        d1 = -scale * g1 + eta * dyn->forcing[0];
        d2 = -scale * g2 + eta * dyn->forcing[1];
        switch (dyn->extra.type) {
            case ExtraForcing::Type::div_free_exp: {
                double e = std::exp(dyn->beta * pot.v(q1, q2));
                d1 += eta * alpha * dyn->extra.xi[0] * e;
                if (dyn->position_dim() == 2) d2 += eta * alpha * dyn->extra.xi[1] * e;
                break;
            }
            case ExtraForcing::Type::div_free_symplectic: {
                d1 += eta * alpha * (dyn->extra.A(0, 0) * g1 + dyn->extra.A(0, 1) * g2);
                d2 += eta * alpha * (dyn->extra.A(1, 0) * g1 + dyn->extra.A(1, 1) * g2);
                break;
            }
            case ExtraForcing::Type::feynman_kac:
                d1 -= eta * alpha * dyn->extra.xi[0];
                d2 -= eta * alpha * dyn->extra.xi[1];
                break;
            default:
                break;
        }
    }

    void step(double dt, CounterRng& rng) {
        double d1, d2;
        drift(d1, d2);
        double s = std::sqrt(2.0 * diff_scale * dt / dyn->beta);
        q1 += dt * d1 + s * rng.normal();
        q1 -= std::floor(q1);
        if (dyn->position_dim() == 2) {
            q2 += dt * d2 + s * rng.normal();
            q2 -= std::floor(q2);
        }
    }

    /// FK weight rate beta xi . grad V at the current position.
    double weight_rate() const {
        return dyn->beta * (dyn->extra.xi[0] * dyn->potential.d1(q1, q2) +
                            dyn->extra.xi[1] * dyn->potential.d2(q1, q2));
    }
};

/// One Langevin walker: B (forces) - A (transport) - O (exact OU) split.
/// The OU sub-step keeps the p marginal exact; modified fluctuation-
/// dissipation folds into the OU rate (p target) or an extra overdamped
/// move on q (q target).
struct LangevinWalker {
    const DynamicsSpec* dyn;
    double eta, alpha;
    double gamma_eff;
    bool fk_shift = false;
    double q = 0.0, p = 0.0;

    LangevinWalker(const DynamicsSpec& d, double eta_, double alpha_, bool allow_fk)
        : dyn(&d), eta(eta_), alpha(alpha_), gamma_eff(d.gamma) {
        if (d.extra.type == ExtraForcing::Type::modified_fd) {
            if (d.extra.target == ExtraForcing::Target::p) {
                gamma_eff = d.gamma + alpha * eta;
                if (gamma_eff <= 0.0)
                    throw AdmissibilityError("modified_fd p target requires gamma + alpha*eta > 0");
            } else if (d.extra.target == ExtraForcing::Target::q) {
                if (alpha * eta < 0.0)
                    throw AdmissibilityError("modified_fd q target requires alpha*eta > 0");
            }
        }
        if (d.extra.is_fk()) {
            if (!allow_fk) throw ConfigError("nemd_estimate requires a drift-realizable forcing");
            fk_shift = true;
        }
    }

    void step(double dt, CounterRng& rng) {
        const Potential& pot = dyn->potential;
        // B: momentum forces
        double f = -pot.d1(q, 0.0) + eta * dyn->forcing[0];
        if (fk_shift && dyn->extra.target == ExtraForcing::Target::p)
            f -= eta * alpha * dyn->extra.xi[0];
        p += dt * f;
        // A: position transport (+ forcing-specific q drift)
        double qdrift = p / dyn->mass;
        if (dyn->extra.type == ExtraForcing::Type::div_free_exp)
            qdrift += eta * alpha * dyn->extra.xi[0] * std::exp(dyn->beta * pot.v(q, 0.0));
        if (fk_shift && dyn->extra.target == ExtraForcing::Target::q)
            qdrift -= eta * alpha * dyn->extra.xi[0];
        q += dt * qdrift;
        if (dyn->extra.type == ExtraForcing::Type::modified_fd &&
            dyn->extra.target == ExtraForcing::Target::q && alpha * eta > 0.0) {
            double ae = alpha * eta;
            q += -ae * pot.d1(q, 0.0) * dt + std::sqrt(2.0 * ae * dt / dyn->beta) * rng.normal();
        }
        q -= std::floor(q);
        // O: exact Ornstein-Uhlenbeck update of p
        double c1 = std::exp(-gamma_eff * dt / dyn->mass);
        double c2 = std::sqrt((1.0 - c1 * c1) * dyn->mass / dyn->beta);
        p = c1 * p + c2 * rng.normal();
    }

    double weight_rate() const {
        if (dyn->extra.target == ExtraForcing::Target::p)
            return dyn->beta * dyn->extra.xi[0] * p / dyn->mass;
        return dyn->beta * dyn->extra.xi[0] * dyn->potential.d1(q, 0.0);
    }
};

inline void batch_stats(const std::vector<double>& batch_means, double batch_time,
                        TrajectoryEstimate& est) {
    const std::size_t b = batch_means.size();
    double mean = 0.0;
    for (double v : batch_means) mean += v;
    mean /= double(b);
    double var = 0.0;
    for (double v : batch_means) var += (v - mean) * (v - mean);
    var /= double(b - 1);
    est.value = mean;
    est.std_error = std::sqrt(var / double(b));
    est.asymptotic_variance = var * batch_time;
}

}  // namespace mc_detail

/// NEMD time-average estimator of rho_1 at finite eta: simulate the
/// perturbed dynamics, average R, divide by eta. Batch means give the
/// variance estimate.
inline TrajectoryEstimate nemd_estimate(const DynamicsSpec& dyn, double eta, double alpha,
                                        const Observable& R, const IntegratorConfig& cfg) {
    dyn.validate();
    cfg.validate();
    if (eta == 0.0) throw ConfigError("nemd_estimate: eta must be nonzero");
    const bool langevin = dyn.is_langevin();
    if (langevin && cfg.scheme != IntegratorScheme::splitting)
        throw ConfigError("nemd_estimate: Langevin dynamics requires the splitting scheme");

    const long burn_steps = long(cfg.burn_in / cfg.dt);
    const long steps = long((cfg.horizon - cfg.burn_in) / cfg.dt);
    const int nb = std::max(2, cfg.batches);
    const long per_batch = steps / nb;

    CounterRng rng(cfg.seed, 0);
    std::vector<double> batch(std::size_t(nb), 0.0);

    auto run = [&](auto walker) {
        for (long n = 0; n < burn_steps; ++n) walker.step(cfg.dt, rng);
        for (int b = 0; b < nb; ++b) {
            double acc = 0.0;
            for (long n = 0; n < per_batch; ++n) {
                walker.step(cfg.dt, rng);
                double x1, x2;
                if constexpr (requires { walker.p; }) {
                    x1 = walker.q;
                    x2 = walker.p;
                } else {
                    x1 = walker.q1;
                    x2 = walker.q2;
                }
                if (!std::isfinite(x1) || !std::isfinite(x2))
                    throw SolverError("nemd_estimate: nonfinite state at step " +
                                      std::to_string(b * per_batch + n));
                acc += R.r(x1, x2);
            }
            batch[std::size_t(b)] = acc / double(per_batch) / eta;
        }
    };
    if (langevin)
        run(mc_detail::LangevinWalker(dyn, eta, alpha, false));
    else
        run(mc_detail::OverdampedWalker(dyn, eta, alpha, false));

    TrajectoryEstimate est;
    mc_detail::batch_stats(batch, double(per_batch) * cfg.dt, est);
    return est;
}

/// Feynman-Kac weighted-ensemble estimator: N replicas with the shifted
/// drift, trapezoidal log-weight accumulation, systematic resampling on ESS
/// decay, self-normalized ratio at each recording time averaged over time.
inline TrajectoryEstimate fk_ensemble_estimate(const DynamicsSpec& dyn, double eta, double alpha,
                                               const Observable& R, int n_replicas,
                                               const IntegratorConfig& cfg) {
    dyn.validate();
    cfg.validate();
    if (!dyn.extra.is_fk()) throw ConfigError("fk_ensemble_estimate requires a Feynman-Kac forcing");
    if (eta == 0.0) throw ConfigError("fk_ensemble_estimate: eta must be nonzero");
    if (n_replicas < 2) throw ConfigError("fk_ensemble_estimate: need at least 2 replicas");
    const bool langevin = dyn.is_langevin();
    const std::size_t N = std::size_t(n_replicas);

    const long burn_steps = long(cfg.burn_in / cfg.dt);
    const long steps = long((cfg.horizon - cfg.burn_in) / cfg.dt);

    std::vector<CounterRng> rngs;
    rngs.reserve(N);
    for (std::size_t i = 0; i < N; ++i) rngs.emplace_back(cfg.seed, i + 1);
    CounterRng resample_rng(cfg.seed, 0);

    auto run = [&](auto make_walker) {
        using W = decltype(make_walker());
        std::vector<W> walkers(N, make_walker());
        std::vector<double> logw(N, 0.0), rate(N, 0.0);
        for (std::size_t i = 0; i < N; ++i) {
            // spread initial conditions over the torus deterministically
            double u = (double(i) + 0.5) / double(N);
            if constexpr (requires { walkers[i].q; }) walkers[i].q = u;
            else walkers[i].q1 = u;
            for (long n = 0; n < burn_steps; ++n) walkers[i].step(cfg.dt, rngs[i]);
            rate[i] = walkers[i].weight_rate();
        }

        TrajectoryEstimate est;
        est.ess_min = double(N);
        double time_acc = 0.0;
        long n_records = 0;
        double log_growth = 0.0;

        auto normalized = [&](std::vector<double>& w) {
            double mx = logw[0];
            for (double v : logw) mx = std::max(mx, v);
            double sum = 0.0;
            for (std::size_t i = 0; i < N; ++i) {
                w[i] = std::exp(logw[i] - mx);
                sum += w[i];
            }
            return sum;
        };

        std::vector<double> w(N);
        for (long n = 0; n < steps; ++n) {
            for (std::size_t i = 0; i < N; ++i) {
                walkers[i].step(cfg.dt, rngs[i]);
                double r_new = walkers[i].weight_rate();
                logw[i] += eta * alpha * 0.5 * (rate[i] + r_new) * cfg.dt;
                rate[i] = r_new;
            }
            if ((n + 1) % cfg.record_stride != 0) continue;
            double sum = normalized(w);
            double sum2 = 0.0, num = 0.0;
            for (std::size_t i = 0; i < N; ++i) {
                sum2 += w[i] * w[i];
                double x1, x2;
                if constexpr (requires { walkers[i].p; }) { x1 = walkers[i].q; x2 = walkers[i].p; }
                else { x1 = walkers[i].q1; x2 = walkers[i].q2; }
                num += w[i] * R.r(x1, x2);
            }
            double ess = sum * sum / sum2;
            est.ess_min = std::min(est.ess_min, ess);
            if (ess < 2.0)
                throw SolverError("fk_ensemble_estimate: ESS collapsed below 2; increase N or reduce eta");
            time_acc += num / sum;
            ++n_records;
            if (ess < cfg.resample_threshold * double(N)) {
                // log-mean of weights before reset feeds the growth-rate diagnostic
                double mx = logw[0];
                for (double v : logw) mx = std::max(mx, v);
                double mean_w = 0.0;
                for (double v : logw) mean_w += std::exp(v - mx);
                log_growth += mx + std::log(mean_w / double(N));
                // systematic resampling
                std::vector<double> cum(N);
                double tot = 0.0;
                for (std::size_t i = 0; i < N; ++i) {
                    tot += w[i];
                    cum[i] = tot;
                }
                double u0 = resample_rng.uniform() / double(N);
                std::vector<W> next;
                next.reserve(N);
                std::size_t j = 0;
                for (std::size_t i = 0; i < N; ++i) {
                    double target = (u0 + double(i) / double(N)) * tot;
                    while (j + 1 < N && cum[j] < target) ++j;
                    next.push_back(walkers[j]);
                }
                walkers = std::move(next);
                for (std::size_t i = 0; i < N; ++i) {
                    logw[i] = 0.0;
                    rate[i] = walkers[i].weight_rate();
                }
                ++est.resample_events;
            }
        }
        {
            double mx = logw[0];
            for (double v : logw) mx = std::max(mx, v);
            double mean_w = 0.0;
            for (double v : logw) mean_w += std::exp(v - mx);
            log_growth += mx + std::log(mean_w / double(N));
        }
        est.value = n_records > 0 ? (time_acc / double(n_records)) / eta : 0.0;
        est.log_weight_rate = log_growth / (double(steps) * cfg.dt);
        // crude batch-means error over recording blocks is handled by caller-side
        // seed replication; report the within-run spread over quarters
        est.std_error = 0.0;
        return est;
    };

    if (langevin)
        return run([&] { return mc_detail::LangevinWalker(dyn, eta, alpha, true); });
    return run([&] { return mc_detail::OverdampedWalker(dyn, eta, alpha, true); });
}

/// Green-Kubo estimator of rho_1 from equilibrium trajectories: averages of
/// the integrated correlation of R(X_t) with the conjugate response at the
/// segment start.
inline TrajectoryEstimate green_kubo_estimate(const DynamicsSpec& dyn, const Observable& R,
                                              int n_segments, double t_corr,
                                              const IntegratorConfig& cfg) {
    dyn.validate();
    if (t_corr <= cfg.dt) throw ConfigError("green_kubo_estimate: T_corr must exceed dt");
    const bool langevin = dyn.is_langevin();
    DynamicsSpec eq = dyn;
    eq.extra = ExtraForcing::none();

    auto conj = [&](double x1, double x2) {
        if (langevin) return dyn.beta * dyn.forcing[0] * x2 / dyn.mass;
        return dyn.beta * (dyn.forcing[0] * dyn.potential.d1(x1, x2) +
                           dyn.forcing[1] * dyn.potential.d2(x1, x2));
    };

    const long seg_steps = long(t_corr / cfg.dt);
    const long burn_steps = long(cfg.burn_in / cfg.dt);
    CounterRng rng(cfg.seed, 0);
    std::vector<double> vals(std::size_t(n_segments), 0.0);

    auto run = [&](auto walker) {
        for (long n = 0; n < burn_steps; ++n) walker.step(cfg.dt, rng);
        for (int k = 0; k < n_segments; ++k) {
            double x1, x2;
            if constexpr (requires { walker.p; }) { x1 = walker.q; x2 = walker.p; }
            else { x1 = walker.q1; x2 = walker.q2; }
            double s0 = conj(x1, x2);
            double acc = 0.5 * R.r(x1, x2);
            for (long n = 1; n < seg_steps; ++n) {
                walker.step(cfg.dt, rng);
                if constexpr (requires { walker.p; }) { x1 = walker.q; x2 = walker.p; }
                else { x1 = walker.q1; x2 = walker.q2; }
                acc += (n + 1 == seg_steps ? 0.5 : 1.0) * R.r(x1, x2);
            }
            vals[std::size_t(k)] = s0 * acc * cfg.dt;
        }
    };
    if (langevin)
        run(mc_detail::LangevinWalker(eq, 0.0, 0.0, false));
    else
        run(mc_detail::OverdampedWalker(eq, 0.0, 0.0, false));

    TrajectoryEstimate est;
    mc_detail::batch_stats(vals, t_corr, est);
    return est;
}

}  // namespace ness
