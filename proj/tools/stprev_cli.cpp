// stprev: command-line pipeline over the library.
//
//   stprev <command> --config run.json [--out DIR] [--seed N] [--threads N] [--set key.path=value ...]
//
// Every command is a pure function of the effective config, its input files
// and the master seed. Artifacts land under --out together with
// run_manifest.json. Exit status: 0 success, 2 validation error, 3 numerical
// failure.

#include "stprev/stprev.hpp"

#include <CLI11.hpp>
#include <boost/version.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <set>

namespace fs = std::filesystem;
using namespace stprev;

#ifndef STPREV_VERSION
#define STPREV_VERSION "0.0.0"
#endif

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

struct Options {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    unsigned threads = 1;
    std::vector<std::string> overrides;
    std::string bundle;
};

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

/// `a.b.c=value`: value is parsed as JSON, falling back to a plain string.
void apply_override(json& cfg, const std::string& item) {
    const auto eq = item.find('=');
    require(eq != std::string::npos && eq > 0, ErrorKind::InvalidArgument, "override '" + item + "' is not key=value");
    const std::string key = item.substr(0, eq), text = item.substr(eq + 1);
    json value;
    try {
        value = json::parse(text);
    } catch (const json::exception&) {
        value = text;
    }
    json* node = &cfg;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        require(!part.empty(), ErrorKind::InvalidArgument, "override key '" + key + "' has an empty component");
        if (!node->is_object()) *node = json::object();
        node = &(*node)[part];
        if (dot == std::string::npos) break;
        start = dot + 1;
    }
    *node = value;
}

const json& section(const json& cfg, const char* name) {
    static const json empty = json::object();
    if (!cfg.contains(name) || cfg[name].is_null()) return empty;
    require(cfg[name].is_object(), ErrorKind::InvalidArgument, std::string("config section '") + name + "' must be an object");
    return cfg[name];
}

struct Context {
    std::string command;
    json config = json::object();
    fs::path config_dir = ".";
    fs::path out;
    std::uint64_t seed = 0;
    unsigned threads = 1;
    json inputs = json::object();
    json outputs = json::object();

    std::uint64_t sub_seed(const std::string& stream) const { return derive_seed(seed, stream); }

    fs::path resolve(const std::string& p) const {
        const fs::path path(p);
        return path.is_absolute() ? path : config_dir / path;
    }

    /// Path of an input: an explicit config path, else an artifact under --out.
    fs::path input(const char* config_key, const std::string& default_artifact) const {
        const json& paths = section(config, "paths");
        const fs::path p = paths.contains(config_key) && !paths[config_key].is_null()
                               ? resolve(paths[config_key].get<std::string>())
                               : out / default_artifact;
        require(fs::is_regular_file(p), ErrorKind::Io, std::string("input file not found: ") + p.string());
        return p;
    }

    std::optional<fs::path> optional_input(const char* config_key) const {
        const json& paths = section(config, "paths");
        if (!paths.contains(config_key) || paths[config_key].is_null()) return std::nullopt;
        const fs::path p = resolve(paths[config_key].get<std::string>());
        require(fs::is_regular_file(p), ErrorKind::Io, std::string("input file not found: ") + p.string());
        return p;
    }

    void note_input(const fs::path& p) {
        inputs[fs::relative(p, out).generic_string()] = bundle_io::crc32_hex(bundle_io::read_file(p));
    }

    void write(const std::string& rel, const std::string& text) {
        const fs::path p = out / rel;
        fs::create_directories(p.parent_path());
        io::write_text(p.string(), text);
        outputs[rel] = bundle_io::crc32_hex(text);
    }

    void write(const std::string& rel, const json& j) { write(rel, io::dump(j)); }
};

Context make_context(const std::string& command, const Options& opt) {
    Context ctx;
    ctx.command = command;
    if (!opt.config.empty()) {
        require(fs::is_regular_file(opt.config), ErrorKind::Io, "config file not found: " + opt.config);
        ctx.config = io::read_json(opt.config);
        require(ctx.config.is_object(), ErrorKind::InvalidArgument, "config must be a JSON object");
        ctx.config_dir = fs::path(opt.config).parent_path();
        if (ctx.config_dir.empty()) ctx.config_dir = ".";
    }
    for (const auto& o : opt.overrides) apply_override(ctx.config, o);
    if (opt.seed) ctx.config["seed"] = *opt.seed;
    require(ctx.config.contains("seed"), ErrorKind::InvalidArgument, "config needs a master 'seed'");
    ctx.seed = ctx.config["seed"].get<std::uint64_t>();
    if (!opt.out.empty()) {
        ctx.out = opt.out;
    } else {
        const json& paths = section(ctx.config, "paths");
        require(paths.contains("out"), ErrorKind::InvalidArgument, "no output directory: pass --out or set paths.out");
        ctx.out = ctx.resolve(paths["out"].get<std::string>());
    }
    require(opt.threads >= 1, ErrorKind::InvalidArgument, "--threads must be >= 1");
    ctx.threads = opt.threads;
    fs::create_directories(ctx.out);
    return ctx;
}

/// Adds this command's entry to run_manifest.json under --out.
void write_manifest(Context& ctx) {
    const fs::path p = ctx.out / "run_manifest.json";
    json m = json::object();
    if (fs::is_regular_file(p)) {
        try {
            m = io::read_json(p.string());
        } catch (const Error&) {
            m = json::object();
        }
    }
    if (!m.is_object()) m = json::object();
    m["tool"] = "stprev";
    m["versions"] = json{{"stprev", STPREV_VERSION},
                         {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                       std::to_string(EIGEN_MINOR_VERSION)},
                         {"boost", BOOST_LIB_VERSION},
                         {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                               std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                               std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
    if (!m.contains("runs") || !m["runs"].is_object()) m["runs"] = json::object();
    m["runs"][ctx.command] = json{{"config_hash", bundle_io::crc32_hex(ctx.config.dump())},
                                  {"master_seed", ctx.seed},
                                  {"command_seed", ctx.sub_seed(ctx.command)},
                                  {"threads", ctx.threads},
                                  {"config", ctx.config},
                                  {"inputs", ctx.inputs},
                                  {"outputs", ctx.outputs}};
    io::write_json(p.string(), m);
}

// ---------------------------------------------------------------------------
// Shared inputs
// ---------------------------------------------------------------------------

SurveySchema data_schema(const Context& ctx) {
    SurveySchema s;
    const json& j = section(ctx.config, "data_schema");
    s.id = io::value_or(j, "id", s.id);
    s.x = io::value_or(j, "x", s.x);
    s.y = io::value_or(j, "y", s.y);
    s.lon = io::value_or(j, "lon", s.lon);
    s.lat = io::value_or(j, "lat", s.lat);
    s.t = io::value_or(j, "t", s.t);
    s.n_tested = io::value_or(j, "n_tested", s.n_tested);
    s.n_positive = io::value_or(j, "n_positive", s.n_positive);
    if (j.contains("covariates")) s.covariates = j["covariates"].get<std::vector<std::string>>();
    return s;
}

SurveyDataset load_data(Context& ctx) {
    const fs::path p = ctx.input("data", "data.csv");
    ctx.note_input(p);
    return load_surveys(p.string(), data_schema(ctx));
}

std::vector<ColumnSpec> column_specs(const Context& ctx) {
    const json& model = section(ctx.config, "model");
    std::vector<ColumnSpec> specs;
    if (model.contains("covariates"))
        for (const auto& c : model["covariates"]) specs.push_back(column_spec_from_json(c));
    if (model.contains("age_splines")) {
        const json& a = model["age_splines"];
        for (auto& c : age_spline_columns(a.at("min_age").get<std::string>(), a.at("max_age").get<std::string>(),
                                          io::value_or(a, "knot_a", 5.0), io::value_or(a, "knot_A", 20.0)))
            specs.push_back(std::move(c));
    }
    return specs;
}

std::vector<double> kappa_set(const Context& ctx) {
    const json& model = section(ctx.config, "model");
    if (!model.contains("kappa")) return {0.5};
    if (model["kappa"].is_array()) return model["kappa"].get<std::vector<double>>();
    return {model["kappa"].get<double>()};
}

McmlControl mcml_control(const Context& ctx) {
    McmlControl c = mcml_control_from_json(section(ctx.config, "mcml"));
    const json& model = section(ctx.config, "model");
    c.kappa_candidates = kappa_set(ctx);
    if (model.contains("free")) c.free = free_flags_from_json(model["free"], c.free);
    c.threads = ctx.threads;
    return c;
}

GlmmOptions glmm_options(const Context& ctx) {
    GlmmOptions o;
    const json& e = section(ctx.config, "explore");
    const std::string est = io::value_or<std::string>(e, "residuals", "mode");
    require(est == "mode" || est == "mean", ErrorKind::InvalidArgument, "explore.residuals must be 'mode' or 'mean'");
    o.estimator = est == "mean" ? ResidualEstimator::Mean : ResidualEstimator::Mode;
    return o;
}

/// Spatial lag edges of a config section: explicit `u_edges`, else `u_bins`
/// equal bins up to `max_lag` (default half the largest distance).
std::vector<double> spatial_edges(const json& s, std::span<const SpaceTimePoint> coords) {
    if (s.contains("u_edges")) return s["u_edges"].get<std::vector<double>>();
    const int bins = io::value_or(s, "u_bins", 15);
    require(bins >= 1, ErrorKind::InvalidArgument, "u_bins must be >= 1");
    if (!s.contains("max_lag")) return default_spatial_edges(coords, bins);
    const double top = s["max_lag"].get<double>();
    require(top > 0.0, ErrorKind::InvalidArgument, "max_lag must be > 0");
    std::vector<double> e;
    for (int k = 0; k <= bins; ++k) e.push_back(top * k / bins);
    return e;
}

std::vector<double> temporal_edges(const json& s, std::span<const SpaceTimePoint> coords) {
    if (s.contains("v_edges")) return s["v_edges"].get<std::vector<double>>();
    return default_temporal_edges(coords);
}

struct Exploration {
    ResidualSet glmm;
    VariogramTable table;
    VariogramFit ls;
    ModelParams init;
};

Exploration explore_data(const Context& ctx, const SurveyDataset& ds, const DesignMatrix& d) {
    const json& e = section(ctx.config, "explore");
    const auto coords = ds.coords();
    Exploration x;
    x.glmm = fit_nonspatial_glmm(ds, d, glmm_options(ctx));
    x.table = empirical_variogram(x.glmm, coords, spatial_edges(e, coords), temporal_edges(e, coords));
    VariogramFitOptions vo;
    vo.kappa = kappa_set(ctx).front();
    vo.weighted = io::value_or(e, "weighted", true);
    x.ls = ls_variogram_fit(x.table, vo);
    x.init.beta = x.glmm.beta;
    x.init.cov = x.ls.params;
    return x;
}

/// Starting values: model.init when given (beta defaults to the GLMM
/// estimate), otherwise the exploratory GLMM plus variogram fit.
ModelParams initial_params(const Context& ctx, const SurveyDataset& ds, const DesignMatrix& d) {
    const json& model = section(ctx.config, "model");
    ModelParams m;
    if (model.contains("init")) {
        const json& j = model["init"];
        m.cov = correlation_params_from_json(j);
        m.cov.kappa = io::value_or(j, "kappa", kappa_set(ctx).front());
        m.beta = j.contains("beta") ? io::get_vec(j["beta"]) : fit_nonspatial_glmm(ds, d, glmm_options(ctx)).beta;
    } else {
        m = explore_data(ctx, ds, d).init;
    }
    require(m.beta.size() == d.rows.cols(), ErrorKind::InvalidParam,
            "initial beta has " + std::to_string(m.beta.size()) + " entries, design has " +
                std::to_string(d.rows.cols()) + " columns");
    m.cov.validate();
    return m;
}

FittedModel load_fit(Context& ctx) {
    const fs::path p = ctx.input("fit", "fit.json");
    ctx.note_input(p);
    return fitted_model_from_json(io::read_json(p.string()));
}

// ---------------------------------------------------------------------------
// Console tables
// ---------------------------------------------------------------------------

std::string interval_text(const ParamInterval* p) {
    if (!p) return "n/a";
    char buf[64];
    std::snprintf(buf, sizeof buf, "(%.4g, %.4g)", p->lower, p->upper);
    return buf;
}

void print_fit_table(const FittedModel& fit, const std::optional<std::vector<ParamInterval>>& ga,
                     const std::optional<std::vector<ParamInterval>>& pb) {
    std::vector<ParamInterval> est;
    for (const auto& n : fit.names()) est.push_back({n, 0, 0, 0});
    for (std::size_t j = 0; j < est.size(); ++j) est[j].estimate = est[j].lower = est[j].upper = fit.lambda_hat(j);
    est = natural_scale(est);
    std::printf("%-14s %12s %28s %28s\n", "parameter", "estimate", "95% CI (Gaussian approx.)", "95% CI (bootstrap)");
    for (std::size_t j = 0; j < est.size(); ++j) {
        std::printf("%-14s %12.4g %28s %28s\n", est[j].name.c_str(), est[j].estimate,
                    interval_text(ga ? &(*ga)[j] : nullptr).c_str(), interval_text(pb ? &(*pb)[j] : nullptr).c_str());
    }
    std::printf("kappa %.3g, log-likelihood %.6g, outer iterations %d, converged %s\n", fit.params.cov.kappa,
                fit.log_likelihood, fit.outer_iterations, fit.converged ? "yes" : "no");
}

std::optional<std::vector<ParamInterval>> ga_intervals(const FittedModel& fit) {
    try {
        return natural_scale(mle_sampling_distribution(fit).intervals());
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::SingularHessian) throw;
        std::fprintf(stderr, "warning: %s\n", e.what());
        return std::nullopt;
    }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

void cmd_simulate(Context& ctx) {
    const json& s = section(ctx.config, "simulate");
    SimulationDesign sd;
    sd.n_sites = io::value_or(s, "n_sites", sd.n_sites);
    sd.extent = io::value_or(s, "extent", sd.extent);
    sd.times = io::value_or(s, "times", sd.times);
    sd.n_tested = io::value_or(s, "n_tested", sd.n_tested);
    sd.jitter_sites_per_time = io::value_or(s, "jitter_sites_per_time", sd.jitter_sites_per_time);
    require(s.contains("truth"), ErrorKind::InvalidArgument, "simulate.truth is required");
    ModelParams truth = model_params_from_json(s["truth"]);
    truth.cov.validate();

    SurveyDataset ds = make_design(sd, ctx.sub_seed("simulate-design"));
    // site-level covariates, constant over time
    if (s.contains("covariates")) {
        Rng rng = make_rng(ctx.seed, "simulate-covariates");
        std::map<std::pair<double, double>, std::vector<double>> by_site;
        for (const auto& c : s["covariates"]) ds.design_columns.push_back(c.at("name").get<std::string>());
        for (auto& r : ds.records) {
            auto [it, fresh] = by_site.try_emplace({r.x, r.y});
            if (fresh) {
                for (const auto& c : s["covariates"]) {
                    std::normal_distribution<double> nd(io::value_or(c, "mean", 0.0), io::value_or(c, "sd", 1.0));
                    it->second.push_back(nd(rng));
                }
            }
            r.covariates = it->second;
        }
    }
    const DesignMatrix d = build_design(ds, column_specs(ctx));
    require(truth.beta.size() == d.rows.cols(), ErrorKind::InvalidParam,
            "simulate.truth.beta has " + std::to_string(truth.beta.size()) + " entries, design has " +
                std::to_string(d.rows.cols()) + " columns");
    ds = simulate_binomial(ds, d, truth, ctx.sub_seed("simulate-outcome"));

    ctx.write("data.csv", to_csv(ds));
    json design{{"n_sites", sd.n_sites},
                {"extent", sd.extent},
                {"times", sd.times},
                {"n_tested", sd.n_tested},
                {"jitter_sites_per_time", sd.jitter_sites_per_time}};
    ctx.write("truth.json", json{{"kind", "simulation_truth"}, {"params", to_json(truth)}, {"design", design},
                                 {"seed", ctx.seed}});
    double prev = 0.0;
    for (const auto& r : ds.records) prev += static_cast<double>(r.n_positive) / r.n_tested;
    std::printf("simulated %zu records at %zu sites, mean empirical prevalence %.4f\n", ds.size(),
                ds.distinct_locations(), prev / static_cast<double>(ds.size()));
}

void cmd_explore(Context& ctx) {
    const SurveyDataset ds = load_data(ctx);
    const DesignMatrix d = build_design(ds, column_specs(ctx));
    const json& e = section(ctx.config, "explore");
    const auto coords = ds.coords();
    const Exploration x = explore_data(ctx, ds, d);
    const std::size_t B = io::value_or<std::size_t>(e, "permutations", 200);
    const EnvelopeResult perm =
        permutation_independence_test(x.glmm, coords, spatial_edges(e, coords), temporal_edges(e, coords), B,
                                      ctx.sub_seed("explore"), ctx.threads);

    std::ostringstream os;
    os << "u_lo,u_hi,v_lo,v_hi,u_mean,v_mean,count,gamma\n";
    for (const auto& b : x.table.bins)
        os << csv::format_double(b.u_lo) << ',' << csv::format_double(b.u_hi) << ',' << csv::format_double(b.v_lo) << ','
           << csv::format_double(b.v_hi) << ',' << csv::format_double(b.u_mean) << ',' << csv::format_double(b.v_mean)
           << ',' << b.count << ',' << csv::format_double(b.gamma) << '\n';
    ctx.write("variogram.csv", os.str());
    ctx.write("permutation.json", to_json(perm));
    ctx.write("permutation_envelope.csv", perm.plot_csv());
    ctx.write("initial_theta.json",
              json{{"kind", "initial_theta"},
                   {"glmm", {{"beta", io::vec(x.glmm.beta)}, {"tau2", x.glmm.tau2},
                             {"log_likelihood", io::num(x.glmm.log_likelihood)}}},
                   {"variogram_fit", to_json(x.ls)},
                   {"init", to_json(x.init)}});
    std::size_t outside = 0;
    for (bool r : perm.reject) outside += r ? 1 : 0;
    std::printf("GLMM tau2 %.4g; %zu variogram bins, %zu outside the permutation envelope, global p-value %.4g\n",
                x.glmm.tau2, x.table.size(), outside, perm.global_p_value);
    std::printf("initial theta: sigma2 %.4g tau2 %.4g phi %.4g psi %.4g\n", x.init.cov.sigma2, x.init.cov.tau2,
                x.init.cov.phi, x.init.cov.psi);
}

void cmd_fit(Context& ctx) {
    const SurveyDataset ds = load_data(ctx);
    const DesignMatrix d = build_design(ds, column_specs(ctx));
    const ModelParams init = initial_params(ctx, ds, d);
    const FittedModel fit = fit_mcml(ds, d, init, mcml_control(ctx), ctx.sub_seed("fit"));
    ctx.write("fit.json", to_json(fit));
    const auto ga = ga_intervals(fit);
    json summary{{"kind", "fit_summary"}, {"names", fit.names()}};
    summary["gaussian_approx"] = ga ? to_json(*ga) : json(nullptr);
    ctx.write("fit_summary.json", summary);
    print_fit_table(fit, ga, std::nullopt);
}

void cmd_bayes(Context& ctx) {
    const SurveyDataset ds = load_data(ctx);
    const DesignMatrix d = build_design(ds, column_specs(ctx));
    const ModelParams init = initial_params(ctx, ds, d);
    const json& b = section(ctx.config, "bayes");
    const PriorSpec prior = prior_spec_from_json(b.contains("priors") ? b["priors"] : json::object(),
                                                 static_cast<std::size_t>(d.rows.cols()));
    const BayesControl ctl = bayes_control_from_json(b.contains("control") ? b["control"] : json::object());
    const PosteriorDraws draws = fit_bayes(ds, d, prior, init, ctl, ctx.sub_seed("bayes"));
    ctx.write("posterior.json", to_json(draws));
    const auto sum = posterior_summaries(draws);
    ctx.write("posterior_summary.json", json{{"kind", "posterior_summary"}, {"summaries", to_json(sum)},
                                             {"acceptance_latent", draws.acceptance_latent},
                                             {"acceptance_theta", draws.acceptance_theta}});
    std::printf("%-10s %12s %12s %28s %10s\n", "parameter", "mean", "sd", "95% credible interval", "ESS");
    for (const auto& s : sum) {
        const ParamInterval ci{s.name, s.mean, s.lower, s.upper};
        std::printf("%-10s %12.4g %12.4g %28s %10.1f\n", s.name.c_str(), s.mean, s.sd, interval_text(&ci).c_str(), s.ess);
    }
    std::printf("acceptance: latent %.3f, theta %.3f\n", draws.acceptance_latent, draws.acceptance_theta);
    for (const auto& w : draws.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
}

void cmd_diagnose(Context& ctx) {
    const SurveyDataset ds = load_data(ctx);
    const DesignMatrix d = build_design(ds, column_specs(ctx));
    const json& g = section(ctx.config, "diagnose");
    const std::string mode = io::value_or<std::string>(g, "mode", "plugin");
    require(mode == "plugin" || mode == "bayesian", ErrorKind::InvalidArgument,
            "diagnose.mode must be 'plugin' or 'bayesian'");
    std::vector<ModelParams> params;
    if (mode == "plugin") {
        params.push_back(load_fit(ctx).params);
    } else {
        const fs::path p = ctx.input("posterior", "posterior.json");
        ctx.note_input(p);
        params = posterior_draws_from_json(io::read_json(p.string())).all_params();
    }
    const auto coords = ds.coords();
    GofOptions opt;
    opt.glmm = glmm_options(ctx);
    opt.threads = ctx.threads;
    const std::size_t B = io::value_or<std::size_t>(g, "B", 200);
    const GofOutput out = gof_simulation_test(ds, d, params, mode == "plugin" ? GofMode::Plugin : GofMode::BayesianAveraged,
                                              spatial_edges(g, coords), temporal_edges(g, coords), B,
                                              ctx.sub_seed("diagnose"), opt);
    ctx.write("diagnose.json", json{{"kind", "goodness_of_fit"}, {"gof", to_json(out.gof)}, {"envelope", to_json(out.envelope)}});
    ctx.write("diagnose_envelope.csv", out.envelope.plot_csv());
    std::printf("goodness of fit (%s): T = %.5g, p-value %.4g over %zu replicates (%zu dropped)\n", mode.c_str(),
                out.gof.t_observed, out.gof.p_value, out.gof.t_null.size(), out.gof.dropped);
}

void cmd_bootstrap(Context& ctx) {
    const SurveyDataset ds = load_data(ctx);
    const DesignMatrix d = build_design(ds, column_specs(ctx));
    const FittedModel fit = load_fit(ctx);
    const json& b = section(ctx.config, "bootstrap");
    const std::size_t R = io::value_or<std::size_t>(b, "R", 20);
    std::optional<McmlControl> ctl;
    if (b.contains("mcml")) ctl = mcml_control_from_json(b["mcml"], fit.control);
    const BootstrapSet set = parametric_bootstrap(fit, ds, d, R, ctx.sub_seed("bootstrap"), ctx.threads, ctl);
    ctx.write("bootstrap.json", to_json(set));
    const auto pb = natural_scale(set.intervals(fit.lambda_hat));
    const auto ga = ga_intervals(fit);
    json summary{{"kind", "fit_summary"}, {"names", fit.names()}, {"bootstrap", to_json(pb)},
                 {"replicates", set.replicates.rows()}, {"failures", set.failures}};
    summary["gaussian_approx"] = ga ? to_json(*ga) : json(nullptr);
    ctx.write("bootstrap_summary.json", summary);
    print_fit_table(fit, ga, pb);
    std::printf("bootstrap replicates %lld, failed refits %zu\n", static_cast<long long>(set.replicates.rows()),
                set.failures);
}

void cmd_profile(Context& ctx) {
    const SurveyDataset ds = load_data(ctx);
    const DesignMatrix d = build_design(ds, column_specs(ctx));
    const ModelParams init = initial_params(ctx, ds, d);
    const json& p = section(ctx.config, "profile");
    const auto grid = io::value_or(p, "xi_grid", std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
    const ProfileResult r = profile_deviance_xi(ds, d, init, grid, mcml_control(ctx), ctx.sub_seed("profile"));
    ctx.write("profile.json", to_json(r));
    std::printf("%-8s %16s %12s\n", "xi", "log-likelihood", "deviance");
    for (const auto& q : r.points) std::printf("%-8.3g %16.6g %12.4g\n", q.xi, q.log_likelihood, q.deviance);
    std::printf("xi_hat %.3g (reference chi-square(1) 95%% point %.4g)\n", r.xi_hat, r.chi2_reference);
}

BoundingBox regions_bbox(const std::vector<Region>& regions) {
    BoundingBox b{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
                  std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto& r : regions)
        for (const auto& ring : r.rings)
            for (const auto& p : ring) {
                b.xmin = std::min(b.xmin, p[0]);
                b.xmax = std::max(b.xmax, p[0]);
                b.ymin = std::min(b.ymin, p[1]);
                b.ymax = std::max(b.ymax, p[1]);
            }
    return b;
}

void cmd_predict(Context& ctx) {
    const json& p = section(ctx.config, "prediction");
    PredictionTargets targets;
    targets.quantiles = io::value_or(p, "quantiles", targets.quantiles);
    targets.thresholds = io::value_or(p, "thresholds", targets.thresholds);
    for (double l : targets.thresholds)
        require(l > 0.0 && l < 1.0, ErrorKind::InvalidArgument, "prediction thresholds must lie in (0, 1)");
    for (double a : targets.quantiles)
        require(a > 0.0 && a < 1.0, ErrorKind::InvalidArgument, "prediction quantiles must lie in (0, 1)");
    const UncertaintyMode mode = uncertainty_mode_from_string(io::value_or<std::string>(p, "mode", "plugin"));

    const SurveyDataset ds = load_data(ctx);
    const DesignMatrix d = build_design(ds, column_specs(ctx));

    std::vector<Region> regions;
    if (const auto poly = ctx.optional_input("polygons")) {
        ctx.note_input(*poly);
        regions = load_regions(poly->string(), ds.projection);
    }
    std::vector<double> times;
    if (p.contains("times")) {
        times = p["times"].get<std::vector<double>>();
    } else {
        std::set<double> s;
        for (const auto& r : ds.records) s.insert(r.t);
        times.assign(s.begin(), s.end());
    }
    PredictionGrid grid;
    if (const auto gp = ctx.optional_input("grid")) {
        ctx.note_input(*gp);
        grid = load_grid_csv(gp->string(), times, io::value_or(p, "cell_area", 1.0));
    } else {
        const BoundingBox bbox = regions.empty() ? ds.region_bbox : regions_bbox(regions);
        const double res = p.contains("resolution") ? p["resolution"].get<double>()
                                                    : (bbox.xmax - bbox.xmin) / io::value_or(p, "cells_x", 40.0);
        grid = make_grid(bbox, res, times, regions);
    }

    FittedModel fit;
    BootstrapSet boot;
    PosteriorDraws post;
    ParamUncertainty src;
    src.tag = mode;
    if (mode == UncertaintyMode::Bayesian) {
        const fs::path pp = ctx.input("posterior", "posterior.json");
        ctx.note_input(pp);
        post = posterior_draws_from_json(io::read_json(pp.string()));
        src.posterior = &post;
    } else {
        fit = load_fit(ctx);
        src.fit = &fit;
        if (mode == UncertaintyMode::Bootstrap) {
            const fs::path bp = ctx.input("bootstrap", "bootstrap.json");
            ctx.note_input(bp);
            boot = bootstrap_set_from_json(io::read_json(bp.string()));
            src.bootstrap = &boot;
        }
    }

    PredictionControl pc;
    pc.B_pred = io::value_or(p, "B_pred", pc.B_pred);
    pc.refresh_burn_in = io::value_or(p, "refresh_burn_in", pc.refresh_burn_in);
    pc.storage_budget = io::value_or(p, "storage_budget", pc.storage_budget);
    if (p.contains("plugin_chain")) pc.plugin_chain = mala_control_from_json(p["plugin_chain"], pc.plugin_chain);
    if (p.contains("fixed_covariates")) pc.fixed_covariates = p["fixed_covariates"].get<std::map<std::string, double>>();
    pc.threads = ctx.threads;
    const SurfaceBundle b = conditional_simulate(src, ds, d, grid, pc, ctx.sub_seed("predict"));

    targets.regions = regions;
    if (!b.has_draws() && !targets.regions.empty()) {
        std::fprintf(stderr, "warning: raw draws exceed the storage budget; district series skipped\n");
        targets.regions.clear();
    }
    const json manifest = write_bundle(ctx.out / "bundle", b, targets);
    // record bundle files in the run manifest
    for (const auto& e : manifest["layers"]) ctx.outputs["bundle/" + e["file"].get<std::string>()] = e["checksum"];
    ctx.outputs["bundle/manifest.json"] = bundle_io::crc32_hex(bundle_io::read_file(ctx.out / "bundle" / "manifest.json"));
    if (!manifest["districts"].is_null()) {
        const std::string text = bundle_io::read_file(ctx.out / "bundle" / "districts.csv");
        ctx.write("districts.csv", text);
        std::printf("district series written for %zu region(s)\n", targets.regions.size());
    }
    std::printf("prediction (%s): %zu active cells x %zu times, B_pred %zu, raw draws %s\n", to_string(mode).c_str(),
                b.cells.size(), b.slices.size(), b.B_pred, b.has_draws() ? "retained" : "sketch only");
}

void cmd_export_viewer(Context& ctx, const std::string& bundle) {
    const fs::path src = bundle.empty() ? ctx.out / "bundle" : fs::path(bundle);
    require(fs::is_regular_file(src / "manifest.json"), ErrorKind::Io, "no bundle manifest in " + src.string());
    const json v = export_viewer(src, ctx.out / "viewer");
    ctx.outputs["viewer/viewer.json"] = bundle_io::crc32_hex(bundle_io::read_file(ctx.out / "viewer" / "viewer.json"));
    std::printf("viewer bundle: %zu layers, %zu times\n", v["layers"].size(), v["times"].size());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stprev: space-time binomial geostatistics for prevalence mapping"};
    app.set_version_flag("--version", STPREV_VERSION);
    app.require_subcommand(1);
    app.fallthrough();
    Options opt;
    app.add_option("-c,--config", opt.config, "JSON run configuration");
    app.add_option("-o,--out", opt.out, "output directory (overrides paths.out)");
    app.add_option("--seed", opt.seed, "master seed (overrides the config)");
    app.add_option("--threads", opt.threads, "maximum worker threads")->check(CLI::PositiveNumber);
    app.add_option("--set", opt.overrides, "config override key.path=value (repeatable)");

    const std::vector<std::pair<std::string, std::string>> commands{
        {"simulate", "simulate a survey dataset and record the truth"},
        {"explore", "non-spatial GLMM residual variogram, permutation test and initial values"},
        {"fit", "Monte Carlo maximum likelihood fit"},
        {"bayes", "Bayesian fit by MCMC"},
        {"diagnose", "simulation-based goodness-of-fit test"},
        {"bootstrap", "parametric bootstrap of the fitted model"},
        {"profile", "profile deviance of the space-time interaction"},
        {"predict", "predictive simulation to a surface bundle"},
        {"export-viewer", "static viewer bundle from a surface bundle"}};
    for (const auto& [name, help] : commands) app.add_subcommand(name, help);
    app.get_subcommand("export-viewer")->add_option("--bundle", opt.bundle, "surface bundle directory (default OUT/bundle)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitValidation;
    }

    const std::string name = app.get_subcommands().front()->get_name();
    try {
        if (name == "export-viewer" && opt.config.empty()) {
            require(!opt.out.empty(), ErrorKind::InvalidArgument, "export-viewer needs --out");
            opt.overrides.push_back("seed=0");
        }
        Context ctx = make_context(name, opt);
        if (name == "simulate") cmd_simulate(ctx);
        else if (name == "explore") cmd_explore(ctx);
        else if (name == "fit") cmd_fit(ctx);
        else if (name == "bayes") cmd_bayes(ctx);
        else if (name == "diagnose") cmd_diagnose(ctx);
        else if (name == "bootstrap") cmd_bootstrap(ctx);
        else if (name == "profile") cmd_profile(ctx);
        else if (name == "predict") cmd_predict(ctx);
        else cmd_export_viewer(ctx, opt.bundle);
        write_manifest(ctx);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return e.is_validation() ? kExitValidation : kExitNumerical;
    } catch (const json::exception& e) {
        std::fprintf(stderr, "error: invalid configuration or input: %s\n", e.what());
        return kExitValidation;
    } catch (const fs::filesystem_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitValidation;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitNumerical;
    }
    return 0;
}
