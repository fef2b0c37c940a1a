#pragma once

#include <cinttypes>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ness/mc.hpp"
#include "ness/response.hpp"

namespace ness {

using json = nlohmann::json;
namespace fs = std::filesystem;

/// FNV-1a 64-bit content hash for artifact provenance.
inline std::uint64_t fnv1a64(const std::string& data) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

inline std::string fnv1a64_hex(const std::string& data) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, fnv1a64(data));
    return buf;
}

inline std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// ---------------------------------------------------------------------------
// Config schema
// ---------------------------------------------------------------------------

struct GridConfig {
    int m_q = 0;
    int m_p = 1000;
    double p_max = 6.0;
};

struct ObservableConfig {
    std::string preset = "normtrig";
    std::optional<double> a, b;            // explicit coefficients
    bool normalize = true;                 // derive a, b from the hierarchy
    std::optional<double> normalize_kappa; // freeze a, b from this coupling
};

struct TaskConfig {
    std::string type;
    json params;
};

struct ExperimentConfig {
    DynamicsSpec dynamics;
    GridConfig grid;
    ObservableConfig observable;
    TaskConfig task;
    std::string output = "out";
    json resolved;   // fully-resolved config echoed into artifacts
};

namespace config_detail {

inline void fail(const std::string& field, const std::string& why) {
    throw ConfigError(field + ": " + why);
}

inline double num(const json& j, const std::string& field, double fallback,
                  bool required = false) {
    if (!j.contains(field)) {
        if (required) fail(field, "missing required numeric field");
        return fallback;
    }
    if (!j[field].is_number()) fail(field, "expected a number");
    return j[field].get<double>();
}

inline DynamicsKind parse_kind(const std::string& s) {
    if (s == "overdamped1d") return DynamicsKind::overdamped1d;
    if (s == "overdamped2d") return DynamicsKind::overdamped2d;
    if (s == "langevin1d") return DynamicsKind::langevin1d;
    fail("dynamics.kind", "unknown kind '" + s + "'");
    return DynamicsKind::overdamped1d;
}

inline Potential parse_potential(const json& j, DynamicsKind kind) {
    std::string preset = j.value("preset", kind == DynamicsKind::overdamped2d ? "twoscale2d" : "cosine1d");
    if (preset == "cosine1d") return Potential::cosine1d();
    if (preset == "twoscale2d") return Potential::two_scale2d(num(j, "kappa", 0.3));
    if (preset == "zero") return Potential::zero(kind == DynamicsKind::overdamped2d ? 2 : 1);
    fail("dynamics.potential.preset", "unknown preset '" + preset + "'");
    return Potential::cosine1d();
}

inline ExtraForcing parse_extra(const json& j, DynamicsKind kind) {
    std::string variant = j.value("variant", "none");
    auto vec2 = [&](const std::string& field, Eigen::Vector2d dflt) {
        if (!j.contains(field)) return dflt;
        auto& a = j[field];
        if (!a.is_array() || a.empty() || a.size() > 2) fail("extra." + field, "expected [x] or [x, y]");
        Eigen::Vector2d v{a[0].get<double>(), a.size() > 1 ? a[1].get<double>() : 0.0};
        return v;
    };
    if (variant == "none") return ExtraForcing::none();
    if (variant == "divfree-exp") {
        Eigen::Vector2d dflt = kind == DynamicsKind::overdamped2d ? Eigen::Vector2d{1.0, 1.0}
                                                                  : Eigen::Vector2d{1.0, 0.0};
        return ExtraForcing::div_free_exp(vec2("xi", dflt));
    }
    if (variant == "divfree-symp") {
        Eigen::Matrix2d A = (Eigen::Matrix2d() << 0.0, -1.0, 1.0, 0.0).finished();
        if (j.contains("A")) {
            auto& a = j["A"];
            if (!a.is_array() || a.size() != 2 || !a[0].is_array() || a[0].size() != 2)
                fail("extra.A", "expected a 2x2 array");
            A << a[0][0].get<double>(), a[0][1].get<double>(), a[1][0].get<double>(), a[1][1].get<double>();
            if (std::abs(A(0, 0)) > 0 || std::abs(A(1, 1)) > 0 || A(0, 1) != -A(1, 0))
                fail("extra.A", "matrix must be antisymmetric");
        }
        return ExtraForcing::div_free_symplectic(A);
    }
    if (variant == "mfd") return ExtraForcing::modified_fd(ExtraForcing::Target::full);
    if (variant == "mfd-q") return ExtraForcing::modified_fd(ExtraForcing::Target::q);
    if (variant == "mfd-p") return ExtraForcing::modified_fd(ExtraForcing::Target::p);
    if (variant == "fk-q") return ExtraForcing::feynman_kac(ExtraForcing::Target::q, vec2("xi", {1.0, 0.0}));
    if (variant == "fk-p") return ExtraForcing::feynman_kac(ExtraForcing::Target::p, vec2("xi", {1.0, 0.0}));
    fail("extra.variant", "unknown variant '" + variant + "'");
    return ExtraForcing::none();
}

inline json extra_to_json(const ExtraForcing& e) {
    json j;
    switch (e.type) {
        case ExtraForcing::Type::none: j["variant"] = "none"; break;
        case ExtraForcing::Type::div_free_exp:
            j["variant"] = "divfree-exp";
            j["xi"] = {e.xi[0], e.xi[1]};
            break;
        case ExtraForcing::Type::div_free_symplectic:
            j["variant"] = "divfree-symp";
            j["A"] = {{e.A(0, 0), e.A(0, 1)}, {e.A(1, 0), e.A(1, 1)}};
            break;
        case ExtraForcing::Type::modified_fd:
            j["variant"] = e.target == ExtraForcing::Target::q   ? "mfd-q"
                           : e.target == ExtraForcing::Target::p ? "mfd-p"
                                                                 : "mfd";
            break;
        case ExtraForcing::Type::feynman_kac:
            j["variant"] = e.target == ExtraForcing::Target::p ? "fk-p" : "fk-q";
            j["xi"] = {e.xi[0], e.xi[1]};
            break;
    }
    return j;
}

inline DynamicsSpec parse_dynamics(const json& j) {
    if (!j.contains("kind") || !j["kind"].is_string()) fail("dynamics.kind", "missing");
    DynamicsSpec d;
    d.kind = parse_kind(j["kind"].get<std::string>());
    d.beta = num(j, "beta", 1.0);
    d.gamma = num(j, "gamma", 1.0);
    d.mass = num(j, "mass", 1.0);
    d.potential = parse_potential(j.value("potential", json::object()), d.kind);
    if (j.contains("forcing")) {
        auto& f = j["forcing"];
        if (!f.is_array() || f.empty() || f.size() > 2) fail("dynamics.forcing", "expected [Fx] or [Fx, Fy]");
        d.forcing = {f[0].get<double>(), f.size() > 1 ? f[1].get<double>() : 0.0};
    }
    d.validate();
    return d;
}

inline GridConfig parse_grid(const json& j, DynamicsKind kind) {
    GridConfig g;
    int dflt_mq = kind == DynamicsKind::overdamped1d ? 2000 : 200;
    g.m_q = int(num(j, "m_q", dflt_mq));
    g.m_p = int(num(j, "m_p", 1000));
    g.p_max = num(j, "p_max", 6.0);
    if (g.m_q < 3) fail("grid.m_q", "must be >= 3");
    if (kind == DynamicsKind::langevin1d && g.m_p < 5) fail("grid.m_p", "must be >= 5");
    return g;
}

inline ObservableConfig parse_observable(const json& j) {
    ObservableConfig o;
    o.preset = j.value("preset", "normtrig");
    if (o.preset != "normtrig" && o.preset != "mobility" && o.preset != "projforce")
        fail("observable.preset", "unknown preset '" + o.preset + "'");
    if (j.contains("a")) o.a = j["a"].get<double>();
    if (j.contains("b")) o.b = j["b"].get<double>();
    o.normalize = j.value("normalize", !(o.a && o.b));
    if (j.contains("normalize_kappa")) o.normalize_kappa = j["normalize_kappa"].get<double>();
    return o;
}

}  // namespace config_detail

inline ExperimentConfig parse_config(const json& j) {
    using namespace config_detail;
    ExperimentConfig c;
    if (!j.contains("task") || !j["task"].is_object() || !j["task"].contains("type"))
        fail("task", "missing task block with a type");
    c.task.type = j["task"]["type"].get<std::string>();
    c.task.params = j["task"];

    const bool table = c.task.type == "gain-table";
    if (!table) {
        if (!j.contains("dynamics")) fail("dynamics", "missing block");
        c.dynamics = parse_dynamics(j["dynamics"]);
        c.dynamics.extra = parse_extra(j.value("extra", json::object()), c.dynamics.kind);
        c.grid = parse_grid(j.value("grid", json::object()), c.dynamics.kind);
        c.observable = parse_observable(j.value("observable", json::object()));
    }
    c.output = j.value("output", "out");

    // echo the fully-resolved configuration
    json r = j;
    if (!table) {
        r["dynamics"]["beta"] = c.dynamics.beta;
        r["dynamics"]["gamma"] = c.dynamics.gamma;
        r["dynamics"]["mass"] = c.dynamics.mass;
        r["dynamics"]["forcing"] = {c.dynamics.forcing[0], c.dynamics.forcing[1]};
        r["dynamics"]["potential"]["preset"] = c.dynamics.potential.name;
        r["extra"] = extra_to_json(c.dynamics.extra);
        r["grid"] = {{"m_q", c.grid.m_q}, {"m_p", c.grid.m_p}, {"p_max", c.grid.p_max}};
        r["observable"]["preset"] = c.observable.preset;
        r["observable"]["normalize"] = c.observable.normalize;
    }
    r["output"] = c.output;
    c.resolved = r;
    return c;
}

// ---------------------------------------------------------------------------
// Artifact helpers
// ---------------------------------------------------------------------------

struct ArtifactWriter {
    fs::path dir;
    json files = json::object();
    json config;

    explicit ArtifactWriter(const fs::path& d, json cfg) : dir(d), config(std::move(cfg)) {
        fs::create_directories(dir);
    }

    void write_text(const std::string& name, const std::string& body) {
        std::string full = "# config " + config.dump() + "\n" + body;
        std::ofstream out(dir / name, std::ios::binary);
        out << full;
        files[name] = fnv1a64_hex(full);
    }

    void finalize(const std::string& task, json results) {
        json report;
        report["format"] = "ness-bundle-v1";
        report["task"] = task;
        report["config"] = config;
        report["results"] = std::move(results);
        report["files"] = files;
        std::string body = report.dump(2);
        report["report_hash"] = fnv1a64_hex(body);
        std::ofstream out(dir / "report.json", std::ios::binary);
        out << report.dump(2) << "\n";
    }
};

namespace exp_detail {

inline std::string csv_row(std::initializer_list<double> vals) {
    std::ostringstream ss;
    bool first = true;
    for (double v : vals) {
        if (!first) ss << ",";
        ss << std::setprecision(17) << v;
        first = false;
    }
    ss << "\n";
    return ss.str();
}

inline std::string field_csv(const Grid& grid, const Eigen::VectorXd& v,
                             const std::string& value_name) {
    std::ostringstream ss;
    switch (grid.kind()) {
        case Grid::Kind::periodic1d:
            ss << "q," << value_name << "\n";
            for (std::size_t k = 0; k < grid.dof(); ++k) ss << csv_row({grid.q1(k), v[long(k)]});
            break;
        case Grid::Kind::periodic2d:
            ss << "q1,q2," << value_name << "\n";
            for (std::size_t k = 0; k < grid.dof(); ++k)
                ss << csv_row({grid.q1(k), grid.q2(k), v[long(k)]});
            break;
        case Grid::Kind::phase:
            ss << "q,p," << value_name << "\n";
            for (std::size_t k = 0; k < grid.dof(); ++k)
                ss << csv_row({grid.q1(k), grid.p(k), v[long(k)]});
            break;
    }
    return ss.str();
}

inline Observable build_observable(const DynamicsSpec& dyn, const Grid& grid,
                                   const ObservableConfig& oc, json* norm_out = nullptr) {
    if (oc.preset == "mobility") return Observable::mobility_velocity(dyn);
    if (oc.preset == "projforce") return Observable::projected_force(dyn);
    double a = oc.a.value_or(1.0), b = oc.b.value_or(1.0);
    if (oc.normalize) {
        DynamicsSpec nd = dyn;
        if (oc.normalize_kappa && dyn.potential.name == "twoscale2d")
            nd.potential = Potential::two_scale2d(*oc.normalize_kappa);
        Normalization n = normalize_observable(nd, grid);
        a = n.a;
        b = n.b;
    }
    if (norm_out) {
        (*norm_out)["a"] = a;
        (*norm_out)["b"] = b;
    }
    return Observable::normalized_trig(dyn, a, b);
}

}  // namespace exp_detail

// ---------------------------------------------------------------------------
// Tasks
// ---------------------------------------------------------------------------

struct RunOptions {
    std::string out_dir;     // overrides config output
    int workers = 0;
    bool dump_matrices = false;
};

namespace exp_detail {

inline json run_steady(const ExperimentConfig& c, const Grid& grid, ArtifactWriter& w,
                       const RunOptions& opts) {
    double eta = config_detail::num(c.task.params, "eta", 0.0);
    double alpha = config_detail::num(c.task.params, "alpha", 0.0);
    SteadySolution s = solve_steady_state(c.dynamics, grid, eta, alpha);
    w.write_text("density.csv", field_csv(grid, s.psi.values, "psi"));
    if (opts.dump_matrices) {
        SparseOperator op = assemble_composite(c.dynamics, eta, alpha, grid, OperatorForm::adjoint);
        write_matrix_market(op, (w.dir / "operator_adjoint.mtx").string());
    }
    json r;
    r["eta"] = eta;
    r["alpha"] = alpha;
    r["lambda"] = s.lambda;
    r["eigen_mode"] = s.eigen_mode;
    r["residual"] = s.stats.residual;
    r["quadrature"] = quadrature(s.psi);
    r["min_value"] = s.psi.values.minCoeff();
    return r;
}

inline json run_hierarchy(const ExperimentConfig& c, const Grid& grid, ArtifactWriter& w,
                          const RunOptions&) {
    double alpha = config_detail::num(c.task.params, "alpha", 0.0);
    int k = int(config_detail::num(c.task.params, "k", 2));
    ResponseHierarchy h = solve_hierarchy(c.dynamics, grid, alpha, k);
    json norm;
    Observable R = build_observable(c.dynamics, grid, c.observable, &norm);
    Eigen::VectorXd r_grid = R.on(grid);
    json orders = json::array(), quads = json::array();
    for (int j = 1; j <= k; ++j) {
        const auto& bar = h.bars[std::size_t(j - 1)];
        w.write_text("hierarchy_" + std::to_string(j) + ".csv",
                     field_csv(grid, bar.values, "psibar"));
        orders.push_back(quadrature(grid, Eigen::VectorXd(r_grid.cwiseProduct(bar.values))));
        quads.push_back(quadrature(bar));
    }
    json r;
    r["alpha"] = alpha;
    r["k"] = k;
    r["rho"] = orders;
    r["bar_quadratures"] = quads;
    r["lambda_bar"] = h.lambda_bar;
    r["normalization"] = norm;
    return r;
}

inline json run_curve(const ExperimentConfig& c, const Grid& grid, ArtifactWriter& w,
                      const RunOptions& opts) {
    double alpha = config_detail::num(c.task.params, "alpha", 0.0);
    std::vector<double> etas;
    if (c.task.params.contains("etas")) {
        for (auto& e : c.task.params["etas"]) etas.push_back(e.get<double>());
    } else {
        double eta_max = config_detail::num(c.task.params, "eta_max", 5.0);
        int n = int(config_detail::num(c.task.params, "points", 40));
        bool neg = c.task.params.value("negative", false);
        for (int i = 1; i <= n; ++i) {
            double e = eta_max * double(i) / n;
            etas.push_back(e);
            if (neg) etas.push_back(-e);
        }
        etas.push_back(0.0);
    }
    json norm;
    Observable R = build_observable(c.dynamics, grid, c.observable, &norm);
    ResponseOptions ro;
    ro.workers = opts.workers;
    ResponseCurve curve = response_curve(c.dynamics, grid, R, alpha, etas, {}, ro);
    std::ostringstream ss;
    ss << "eta,r,delta\n";
    int failures = 0;
    for (const auto& pt : curve.points) {
        if (!pt.ok) {
            ++failures;
            continue;
        }
        ss << csv_row({pt.eta, pt.r, pt.delta});
    }
    w.write_text("curve.csv", ss.str());
    json r;
    r["alpha"] = alpha;
    r["rho1"] = curve.rho1;
    r["failed_points"] = failures;
    r["normalization"] = norm;
    return r;
}

inline json run_alpha_opt(const ExperimentConfig& c, const Grid& grid, ArtifactWriter& w,
                          const RunOptions& opts) {
    double eps = config_detail::num(c.task.params, "epsilon", 0.05);
    ResponseOptions ro;
    ro.workers = opts.workers;
    ro.eta_max = config_detail::num(c.task.params, "eta_max", 5.0);
    json norm;
    Observable R = build_observable(c.dynamics, grid, c.observable, &norm);

    AlphaStar as = alpha_cancel_rho2(c.dynamics, grid, R);
    json r;
    r["alpha_star"] = as.value;
    r["rho2_phys"] = as.rho2_phys;
    r["rho2_extra"] = as.rho2_extra;
    r["epsilon"] = eps;
    r["normalization"] = norm;

    bool with_eps = c.task.params.value("search_alpha_star_eps", true);
    if (with_eps) {
        double lo = as.value, hi = 0.0;
        if (c.task.params.contains("alpha_interval")) {
            lo = c.task.params["alpha_interval"][0].get<double>();
            hi = c.task.params["alpha_interval"][1].get<double>();
        } else {
            lo = std::min(0.0, as.value);
            hi = std::max(0.0, as.value);
        }
        AlphaMaxResult am = alpha_max_threshold(c.dynamics, grid, R, eps, lo, hi, {}, ro);
        r["alpha_star_eps"] = am.alpha;
        r["alpha_star_eps_threshold"] = am.eta_threshold;
        r["degenerate_objective"] = am.degenerate;
        json scan = json::array();
        for (auto& [a, t] : am.scan) scan.push_back({{"alpha", a}, {"eta_threshold", t}});
        r["scan"] = scan;

        json th;
        Threshold t0, ts, te;
        DynamicsSpec base = c.dynamics;
        base.extra = ExtraForcing::none();
        t0 = eta_threshold(base, grid, R, 0.0, eps, {}, ro);
        ts = eta_threshold(c.dynamics, grid, R, as.value, eps, {}, ro);
        th["alpha_zero"] = t0.eta;
        th["alpha_star"] = ts.eta;
        th["alpha_star_eps"] = am.eta_threshold;
        r["eta_thresholds"] = th;

        GainResult g_star = variance_gain(c.dynamics, grid, R, as.value, eps, {}, ro);
        GainResult g_eps = variance_gain(c.dynamics, grid, R, am.alpha, eps, {}, ro);
        r["gains"] = {{"alpha_star", g_star.gain}, {"alpha_star_eps", g_eps.gain}};
        r["fk_variance_convention"] = g_star.fk_convention;
    }
    return r;
}

inline json run_gain_table(const json& params, ArtifactWriter& w, const RunOptions& opts) {
    double eps = config_detail::num(params, "epsilon", 0.05);
    if (!params.contains("rows") || !params["rows"].is_array())
        config_detail::fail("task.rows", "gain-table requires a rows array");

    std::ostringstream csv;
    csv << "dynamics,forcing,alpha_policy,alpha,eta0,eta_alpha,gain,fk_convention\n";
    json rows_out = json::array();
    for (const auto& row : params["rows"]) {
        DynamicsSpec base = config_detail::parse_dynamics(row.at("dynamics"));
        GridConfig gc = config_detail::parse_grid(row.value("grid", json::object()), base.kind);
        Grid grid = default_grid(base, gc.m_q, gc.m_p, gc.p_max);
        ObservableConfig oc = config_detail::parse_observable(row.value("observable", json::object()));
        json norm;
        Observable R = build_observable(base, grid, oc, &norm);
        std::string label = row.value("label", std::string(row.at("dynamics").at("kind")));

        for (const auto& entry : row.at("entries")) {
            DynamicsSpec dyn = base;
            dyn.extra = config_detail::parse_extra(entry.at("extra"), dyn.kind);
            ResponseOptions ro;
            ro.workers = opts.workers;
            ro.eta_max = config_detail::num(entry, "eta_max", 5.0);

            std::string policy = "fixed";
            double alpha = 0.0;
            if (entry.contains("alpha") && entry["alpha"].is_string()) {
                policy = entry["alpha"].get<std::string>();
                if (policy == "star") {
                    alpha = alpha_cancel_rho2(dyn, grid, R).value;
                } else if (policy == "star-eps") {
                    double lo = entry.at("alpha_interval")[0].get<double>();
                    double hi = entry.at("alpha_interval")[1].get<double>();
                    alpha = alpha_max_threshold(dyn, grid, R, eps, lo, hi, {}, ro).alpha;
                } else {
                    config_detail::fail("entries.alpha", "expected a number, 'star' or 'star-eps'");
                }
            } else {
                alpha = config_detail::num(entry, "alpha", 0.0, true);
            }

            GainResult g = variance_gain(dyn, grid, R, alpha, eps, {}, ro);
            std::string forcing = config_detail::extra_to_json(dyn.extra)["variant"].get<std::string>();
            csv << label << "," << forcing << "," << policy << ","
                << std::setprecision(17) << alpha << "," << g.eta0 << "," << g.eta_alpha << ","
                << g.gain << "," << (g.fk_convention ? 1 : 0) << "\n";
            rows_out.push_back({{"dynamics", label},
                                {"forcing", forcing},
                                {"alpha_policy", policy},
                                {"alpha", alpha},
                                {"eta0", g.eta0},
                                {"eta_alpha", g.eta_alpha},
                                {"var0", g.var0},
                                {"var_alpha", g.var_alpha},
                                {"gain", g.gain},
                                {"fk_convention", g.fk_convention},
                                {"saturated", g.saturated},
                                {"normalization", norm}});
        }
    }
    w.write_text("gain_table.csv", csv.str());
    json r;
    r["epsilon"] = eps;
    r["entries"] = rows_out;
    return r;
}

inline json run_mc(const ExperimentConfig& c, const Grid& grid, ArtifactWriter& w,
                   const RunOptions&) {
    IntegratorConfig mc;
    mc.dt = config_detail::num(c.task.params, "dt", 1e-4);
    mc.horizon = config_detail::num(c.task.params, "T", 1e3);
    mc.burn_in = config_detail::num(c.task.params, "burn_in", 10.0);
    mc.seed = std::uint64_t(config_detail::num(c.task.params, "seed", 0));
    mc.scheme = c.dynamics.is_langevin() ? IntegratorScheme::splitting : IntegratorScheme::euler_maruyama;
    double eta = config_detail::num(c.task.params, "eta", 0.0, true);
    double alpha = config_detail::num(c.task.params, "alpha", 0.0);
    json norm;
    Observable R = build_observable(c.dynamics, grid, c.observable, &norm);

    TrajectoryEstimate est;
    json r;
    if (c.dynamics.extra.is_fk() && alpha != 0.0) {
        int n = int(config_detail::num(c.task.params, "replicas", 1024));
        est = fk_ensemble_estimate(c.dynamics, eta, alpha, R, n, mc);
        r["replicas"] = n;
        r["ess_min"] = est.ess_min;
        r["resample_events"] = est.resample_events;
        r["log_weight_rate"] = est.log_weight_rate;
    } else {
        est = nemd_estimate(c.dynamics, eta, alpha, R, mc);
    }
    r["eta"] = eta;
    r["alpha"] = alpha;
    r["estimate"] = est.value;
    r["std_error"] = est.std_error;
    r["asymptotic_variance"] = est.asymptotic_variance;
    r["normalization"] = norm;
    (void)w;
    return r;
}

inline json run_gk(const ExperimentConfig& c, const Grid& grid, ArtifactWriter& w, const RunOptions&) {
    IntegratorConfig mc;
    mc.dt = config_detail::num(c.task.params, "dt", 1e-3);
    mc.burn_in = config_detail::num(c.task.params, "burn_in", 10.0);
    mc.horizon = mc.burn_in + 1.0;   // horizon is set by segments * t_corr
    mc.seed = std::uint64_t(config_detail::num(c.task.params, "seed", 0));
    mc.scheme = c.dynamics.is_langevin() ? IntegratorScheme::splitting : IntegratorScheme::euler_maruyama;
    int segments = int(config_detail::num(c.task.params, "segments", 2000));
    double t_corr = config_detail::num(c.task.params, "t_corr", 10.0);
    json norm;
    Observable R = build_observable(c.dynamics, grid, c.observable, &norm);
    TrajectoryEstimate est = green_kubo_estimate(c.dynamics, R, segments, t_corr, mc);
    json r;
    r["segments"] = segments;
    r["t_corr"] = t_corr;
    r["rho1_estimate"] = est.value;
    r["std_error"] = est.std_error;
    r["normalization"] = norm;
    (void)w;
    return r;
}

inline json run_convergence(const ExperimentConfig& c, const Grid&, ArtifactWriter& w,
                            const RunOptions&) {
    std::vector<int> ms;
    if (c.task.params.contains("grids"))
        for (auto& m : c.task.params["grids"]) ms.push_back(m.get<int>());
    else
        ms = {250, 500, 1000, 2000};
    std::ostringstream csv;
    csv << "m_q,residual,order\n";
    json rows = json::array();
    double prev = 0.0;
    for (std::size_t i = 0; i < ms.size(); ++i) {
        Grid g = default_grid(c.dynamics, ms[i], c.grid.m_p, c.grid.p_max);
        SparseOperator op = assemble_reference_adjoint(c.dynamics, g);
        GridFunction gibbs = gibbs_density(c.dynamics, g);
        double res = (op.matrix * gibbs.values).cwiseAbs().maxCoeff();
        double order = i > 0 ? std::log2(prev / res) : 0.0;
        csv << ms[i] << "," << std::setprecision(17) << res << "," << order << "\n";
        rows.push_back({{"m_q", ms[i]}, {"residual", res}, {"order", order}});
        prev = res;
    }
    w.write_text("convergence.csv", csv.str());
    json r;
    r["rows"] = rows;
    return r;
}

}  // namespace exp_detail

/// Execute a config file; returns the process exit status (0 ok).
inline int run_experiment(const std::string& config_path, const RunOptions& opts = {}) {
    json raw;
    {
        std::ifstream in(config_path);
        if (!in) throw ConfigError("cannot open config file " + config_path);
        try {
            in >> raw;
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config is not valid JSON: ") + e.what());
        }
    }
    ExperimentConfig c = parse_config(raw);
    fs::path out = opts.out_dir.empty() ? fs::path(c.output) : fs::path(opts.out_dir);
    c.resolved["output"] = out.string();
    ArtifactWriter w(out, c.resolved);

    json results;
    const std::string& t = c.task.type;
    if (t == "gain-table") {
        results = exp_detail::run_gain_table(c.task.params, w, opts);
    } else {
        Grid grid = default_grid(c.dynamics, c.grid.m_q, c.grid.m_p, c.grid.p_max);
        if (t == "steady") results = exp_detail::run_steady(c, grid, w, opts);
        else if (t == "hierarchy") results = exp_detail::run_hierarchy(c, grid, w, opts);
        else if (t == "curve") results = exp_detail::run_curve(c, grid, w, opts);
        else if (t == "alpha-opt") results = exp_detail::run_alpha_opt(c, grid, w, opts);
        else if (t == "mc") results = exp_detail::run_mc(c, grid, w, opts);
        else if (t == "gk") results = exp_detail::run_gk(c, grid, w, opts);
        else if (t == "convergence") results = exp_detail::run_convergence(c, grid, w, opts);
        else throw ConfigError("task.type: unknown task '" + t + "'");
    }
    w.finalize(t, results);
    return 0;
}

// ---------------------------------------------------------------------------
// Bundle verification
// ---------------------------------------------------------------------------

namespace exp_detail {

struct CsvTable {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;
};

inline CsvTable parse_csv(const std::string& body) {
    CsvTable t;
    std::istringstream in(body);
    std::string line;
    bool header_done = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string cell;
        if (!header_done) {
            while (std::getline(ls, cell, ',')) t.columns.push_back(cell);
            header_done = true;
            continue;
        }
        std::vector<double> row;
        while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
        if (!row.empty()) t.rows.push_back(std::move(row));
    }
    return t;
}

}  // namespace exp_detail

/// Re-check the invariants of a produced bundle from its stored outputs
/// without re-solving. Returns 0 on pass, 1 on failure.
inline int verify_bundle(const std::string& dir_str) {
    fs::path dir(dir_str);
    if (!fs::exists(dir / "report.json")) {
        std::fprintf(stderr, "verify: no report.json in %s\n", dir_str.c_str());
        return 1;
    }
    json report;
    try {
        report = json::parse(read_file(dir / "report.json"));
    } catch (const json::exception& e) {
        std::fprintf(stderr, "verify: unreadable report: %s\n", e.what());
        return 1;
    }
    bool ok = true;
    auto check = [&](bool cond, const std::string& what) {
        std::printf("%s: %s\n", cond ? "pass" : "FAIL", what.c_str());
        ok = ok && cond;
    };

    // content hashes
    std::map<std::string, std::string> bodies;
    const json files = report.value("files", json::object());
    for (auto& [name, hash] : files.items()) {
        fs::path p = dir / name;
        if (!fs::exists(p)) {
            check(false, name + " present");
            continue;
        }
        std::string body = read_file(p);
        bool match = fnv1a64_hex(body) == hash.get<std::string>();
        if (!match) std::printf("tamper warning: %s content hash mismatch\n", name.c_str());
        check(match, name + " content hash");
        bodies[name] = std::move(body);
    }

    const std::string task = report.value("task", "");
    const json& cfg = report["config"];
    const json& res = report["results"];

    auto cell_volume = [&]() {
        double hq = 1.0 / cfg["grid"]["m_q"].get<double>();
        std::string kind = cfg["dynamics"]["kind"].get<std::string>();
        if (kind == "overdamped2d") return hq * hq;
        if (kind == "langevin1d") {
            double pmax = cfg["grid"]["p_max"].get<double>();
            double mp = cfg["grid"]["m_p"].get<double>();
            return hq * 2.0 * pmax / (mp - 1.0);
        }
        return hq;
    };

    if (task == "steady" && bodies.count("density.csv")) {
        auto t = exp_detail::parse_csv(bodies["density.csv"]);
        double q = 0.0, mn = std::numeric_limits<double>::infinity();
        for (auto& row : t.rows) {
            q += row.back();
            mn = std::min(mn, row.back());
        }
        q *= cell_volume();
        check(std::abs(q - 1.0) <= 1e-12, "density normalization (|quad - 1| = " +
                                              std::to_string(std::abs(q - 1.0)) + ")");
        check(mn > 0.0, "density positivity");
        double rec = res.value("residual", 0.0);
        check(rec <= 1e-6, "recorded residual within tolerance");
    }
    if (task == "hierarchy") {
        double vol = cell_volume();
        double worst = 0.0;
        for (auto& [name, body] : bodies) {
            if (name.rfind("hierarchy_", 0) != 0) continue;
            auto t = exp_detail::parse_csv(body);
            double q = 0.0;
            for (auto& row : t.rows) q += row.back();
            worst = std::max(worst, std::abs(q * vol));
        }
        std::printf("info: max |quadrature(psibar_j)| = %.3e\n", worst);
        check(worst <= 1e-10, "hierarchy corrections mean-zero");
    }
    if (task == "curve" && bodies.count("curve.csv")) {
        auto t = exp_detail::parse_csv(bodies["curve.csv"]);
        bool finite = true, zero_ok = true;
        for (auto& row : t.rows) {
            for (double v : row) finite = finite && std::isfinite(v);
            if (row[0] == 0.0) zero_ok = zero_ok && std::abs(row[1]) <= 1e-10;
        }
        check(finite, "curve values finite");
        check(zero_ok, "curve passes through the origin");
    }
    return ok ? 0 : 1;
}

}  // namespace ness
