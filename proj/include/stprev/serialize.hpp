#pragma once

// JSON round-tripping for parameters, fits, bootstrap sets, posterior
// draws and diagnostics. Non-finite numbers are written as null.

#include "stprev/bayes.hpp"
#include "stprev/diagnostics.hpp"
#include "stprev/mcml.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <limits>

namespace stprev {

using json = nlohmann::ordered_json;

namespace io {

inline json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline double get_num(const json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline json vec(const Eigen::VectorXd& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(num(v(i)));
    return a;
}

inline Eigen::VectorXd get_vec(const json& j) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = get_num(j[i]);
    return v;
}

/// Row-major nested arrays.
inline json mat(const Eigen::MatrixXd& m) {
    json a = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) a.push_back(vec(m.row(r).transpose()));
    return a;
}

inline Eigen::MatrixXd get_mat(const json& j) {
    if (j.empty()) return {};
    Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(j[0].size()));
    for (std::size_t r = 0; r < j.size(); ++r) {
        require(j[r].size() == static_cast<std::size_t>(m.cols()), ErrorKind::InvalidArgument, "ragged matrix in JSON");
        for (std::size_t c = 0; c < j[r].size(); ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = get_num(j[r][c]);
    }
    return m;
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path);
    out << text;
    require(static_cast<bool>(out), ErrorKind::Io, "write failed: " + path);
}

inline void write_json(const std::string& path, const json& j) { write_text(path, dump(j)); }

inline json read_json(const std::string& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorKind::Io, "cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        fail(ErrorKind::Io, path + ": " + e.what());
    }
}

template <class T>
T value_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key) || j[key].is_null()) return fallback;
    return j[key].get<T>();
}

}  // namespace io

// ---------------------------------------------------------------------------

inline json to_json(const CorrelationParams& p) {
    return json{{"sigma2", io::num(p.sigma2)}, {"tau2", io::num(p.tau2)}, {"phi", io::num(p.phi)},
                {"psi", io::num(p.psi)},       {"delta", io::num(p.delta)}, {"xi", io::num(p.xi)},
                {"kappa", io::num(p.kappa)}};
}

/// Missing keys keep the defaults of `base`; "nu2" may replace "tau2".
inline CorrelationParams correlation_params_from_json(const json& j, CorrelationParams base = {}) {
    CorrelationParams p = base;
    p.sigma2 = io::value_or(j, "sigma2", p.sigma2);
    p.phi = io::value_or(j, "phi", p.phi);
    p.psi = io::value_or(j, "psi", p.psi);
    p.delta = io::value_or(j, "delta", p.delta);
    p.xi = io::value_or(j, "xi", p.xi);
    p.kappa = io::value_or(j, "kappa", p.kappa);
    if (j.contains("tau2")) p.tau2 = j["tau2"].get<double>();
    else if (j.contains("nu2")) p.tau2 = j["nu2"].get<double>() * p.sigma2;
    return p;
}

inline json to_json(const ModelParams& m) {
    json j = to_json(m.cov);
    j["beta"] = io::vec(m.beta);
    return j;
}

inline ModelParams model_params_from_json(const json& j) {
    ModelParams m;
    m.cov = correlation_params_from_json(j);
    require(j.contains("beta"), ErrorKind::InvalidArgument, "parameter JSON needs 'beta'");
    m.beta = io::get_vec(j["beta"]);
    return m;
}

inline json to_json(const TVVParams& t) {
    return json{{"eta2", t.eta2},
                {"rho_b_scale", t.rho_b_scale},
                {"rho_b_family", t.rho_b_family == TemporalFamily::Exponential ? "exponential" : "gaussian"}};
}

inline TVVParams tvv_params_from_json(const json& j) {
    TVVParams t;
    t.eta2 = io::value_or(j, "eta2", t.eta2);
    t.rho_b_scale = io::value_or(j, "rho_b_scale", t.rho_b_scale);
    const std::string fam = io::value_or<std::string>(j, "rho_b_family", "exponential");
    t.rho_b_family = fam == "gaussian" ? TemporalFamily::Gaussian : TemporalFamily::Exponential;
    return t;
}

inline json to_json(const ColumnSpec& c) {
    const char* t = c.transform == Transform::Hinge ? "hinge" : c.transform == Transform::Indicator ? "indicator" : "identity";
    return json{{"source", c.source}, {"transform", t}, {"knot", c.knot}};
}

inline ColumnSpec column_spec_from_json(const json& j) {
    ColumnSpec c;
    c.source = j.at("source").get<std::string>();
    const std::string t = io::value_or<std::string>(j, "transform", "identity");
    if (t == "hinge") c.transform = Transform::Hinge;
    else if (t == "indicator") c.transform = Transform::Indicator;
    else if (t == "identity") c.transform = Transform::Identity;
    else fail(ErrorKind::InvalidArgument, "unknown column transform '" + t + "'");
    c.knot = io::value_or(j, "knot", 0.0);
    return c;
}

inline json to_json(const ParamLayout& l) {
    json f = json::array();
    for (bool b : l.free) f.push_back(b);
    return json{{"n_beta", l.n_beta}, {"free", f}};
}

inline ParamLayout param_layout_from_json(const json& j) {
    ParamLayout l;
    l.n_beta = j.at("n_beta").get<std::size_t>();
    for (std::size_t k = 0; k < 6; ++k) l.free[k] = j.at("free").at(k).get<bool>();
    return l;
}

inline json free_flags_json(const std::array<bool, 6>& f) {
    json o = json::object();
    for (int k = 0; k < 6; ++k) o[kCovCoordNames[k]] = f[static_cast<std::size_t>(k)];
    return o;
}

inline std::array<bool, 6> free_flags_from_json(const json& j, std::array<bool, 6> base) {
    for (int k = 0; k < 6; ++k)
        if (j.contains(kCovCoordNames[k])) base[static_cast<std::size_t>(k)] = j[kCovCoordNames[k]].get<bool>();
    return base;
}

inline json to_json(const MalaControl& c) {
    json j{{"n_samples", c.n_samples}, {"burn_in", c.burn_in}, {"thin", c.thin}, {"adapt", c.adapt}};
    j["h0"] = c.h0 ? json(*c.h0) : json(nullptr);
    return j;
}

inline MalaControl mala_control_from_json(const json& j, MalaControl c = {}) {
    c.n_samples = io::value_or(j, "n_samples", c.n_samples);
    c.burn_in = io::value_or(j, "burn_in", c.burn_in);
    c.thin = io::value_or(j, "thin", c.thin);
    c.adapt = io::value_or(j, "adapt", c.adapt);
    if (j.contains("h0") && !j["h0"].is_null()) c.h0 = j["h0"].get<double>();
    return c;
}

inline json to_json(const McmlControl& c) {
    return json{{"mala", to_json(c.mala)},
                {"outer_iters", c.outer_iters},
                {"rel_tol", c.rel_tol},
                {"objective_tol", c.objective_tol},
                {"free", free_flags_json(c.free)},
                {"kappa_candidates", c.kappa_candidates},
                {"refine_beta", c.refine_beta},
                {"loglik_draws", c.loglik_draws},
                {"max_step", c.max_step},
                {"hessian_step", c.hessian_step}};
}

inline McmlControl mcml_control_from_json(const json& j, McmlControl c = {}) {
    if (j.contains("mala")) c.mala = mala_control_from_json(j["mala"], c.mala);
    c.outer_iters = io::value_or(j, "outer_iters", c.outer_iters);
    c.rel_tol = io::value_or(j, "rel_tol", c.rel_tol);
    c.objective_tol = io::value_or(j, "objective_tol", c.objective_tol);
    if (j.contains("free")) c.free = free_flags_from_json(j["free"], c.free);
    c.kappa_candidates = io::value_or(j, "kappa_candidates", c.kappa_candidates);
    c.refine_beta = io::value_or(j, "refine_beta", c.refine_beta);
    c.loglik_draws = io::value_or(j, "loglik_draws", c.loglik_draws);
    c.max_step = io::value_or(j, "max_step", c.max_step);
    c.hessian_step = io::value_or(j, "hessian_step", c.hessian_step);
    return c;
}

inline json to_json(const FittedModel& f) {
    json path = json::array();
    for (const auto& v : f.lambda0_path) path.push_back(io::vec(v));
    json kl = json::array();
    for (const auto& [k, ll] : f.kappa_log_likelihood) kl.push_back(json{{"kappa", k}, {"log_likelihood", io::num(ll)}});
    return json{{"kind", "mcml_fit"},
                {"params", to_json(f.params)},
                {"layout", to_json(f.layout)},
                {"names", f.names()},
                {"lambda_hat", io::vec(f.lambda_hat)},
                {"hessian", io::mat(f.hessian)},
                {"lambda0_path", path},
                {"final_rel_change", io::num(f.final_rel_change)},
                {"final_objective", io::num(f.final_objective)},
                {"outer_iterations", f.outer_iterations},
                {"converged", f.converged},
                {"B", f.B},
                {"mala_acceptance", io::num(f.mala_acceptance)},
                {"log_likelihood", io::num(f.log_likelihood)},
                {"kappa_log_likelihood", kl},
                {"control", to_json(f.control)},
                {"seed", f.seed}};
}

inline FittedModel fitted_model_from_json(const json& j) {
    require(io::value_or<std::string>(j, "kind", "") == "mcml_fit", ErrorKind::ModeMismatch, "not an MCML fit file");
    FittedModel f;
    f.params = model_params_from_json(j.at("params"));
    f.layout = param_layout_from_json(j.at("layout"));
    f.lambda_hat = io::get_vec(j.at("lambda_hat"));
    f.hessian = io::get_mat(j.at("hessian"));
    for (const auto& v : j.at("lambda0_path")) f.lambda0_path.push_back(io::get_vec(v));
    f.final_rel_change = io::get_num(j.at("final_rel_change"));
    f.final_objective = io::get_num(j.at("final_objective"));
    f.outer_iterations = j.at("outer_iterations").get<int>();
    f.converged = j.at("converged").get<bool>();
    f.B = j.at("B").get<std::size_t>();
    f.mala_acceptance = io::get_num(j.at("mala_acceptance"));
    f.log_likelihood = io::get_num(j.at("log_likelihood"));
    for (const auto& e : j.at("kappa_log_likelihood"))
        f.kappa_log_likelihood.emplace_back(e.at("kappa").get<double>(), io::get_num(e.at("log_likelihood")));
    f.control = mcml_control_from_json(j.at("control"));
    f.seed = j.at("seed").get<std::uint64_t>();
    return f;
}

inline json to_json(const std::vector<ParamInterval>& v) {
    json a = json::array();
    for (const auto& p : v)
        a.push_back(json{{"name", p.name}, {"estimate", io::num(p.estimate)}, {"lower", io::num(p.lower)},
                         {"upper", io::num(p.upper)}});
    return a;
}

inline json to_json(const GaussianApprox& g) {
    return json{{"kind", "gaussian_approx"}, {"names", g.names()}, {"mean", io::vec(g.mean)}, {"cov", io::mat(g.cov)}};
}

inline json to_json(const BootstrapSet& b) {
    return json{{"kind", "bootstrap"},
                {"names", b.names},
                {"layout", to_json(b.layout)},
                {"base", to_json(b.base)},
                {"failures", b.failures},
                {"replicates", io::mat(b.replicates)}};
}

inline BootstrapSet bootstrap_set_from_json(const json& j) {
    require(io::value_or<std::string>(j, "kind", "") == "bootstrap", ErrorKind::ModeMismatch, "not a bootstrap file");
    BootstrapSet b;
    b.names = j.at("names").get<std::vector<std::string>>();
    b.layout = param_layout_from_json(j.at("layout"));
    b.base = model_params_from_json(j.at("base"));
    b.failures = j.at("failures").get<std::size_t>();
    b.replicates = io::get_mat(j.at("replicates"));
    return b;
}

inline json to_json(const Interval& i) { return json::array({i.lo, i.hi}); }

inline Interval interval_from_json(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

inline json to_json(const PriorSpec& p) {
    return json{{"beta_mean", io::vec(p.beta_mean)}, {"beta_cov", io::mat(p.beta_cov)}, {"sigma2", to_json(p.sigma2)},
                {"phi", to_json(p.phi)},           {"nu2", to_json(p.nu2)},           {"psi", to_json(p.psi)}};
}

inline PriorSpec prior_spec_from_json(const json& j, std::size_t p) {
    PriorSpec s = PriorSpec::vague(p);
    if (j.contains("beta_mean")) s.beta_mean = io::get_vec(j["beta_mean"]);
    if (j.contains("beta_cov")) s.beta_cov = io::get_mat(j["beta_cov"]);
    if (j.contains("beta_var"))
        s.beta_cov = j["beta_var"].get<double>() *
                     Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
    if (j.contains("sigma2")) s.sigma2 = interval_from_json(j["sigma2"]);
    if (j.contains("phi")) s.phi = interval_from_json(j["phi"]);
    if (j.contains("nu2")) s.nu2 = interval_from_json(j["nu2"]);
    if (j.contains("psi")) s.psi = interval_from_json(j["psi"]);
    return s;
}

inline json to_json(const BayesControl& c) {
    json j{{"iters", c.iters},
           {"burn_in", c.burn_in},
           {"thin", c.thin},
           {"update_latent", c.update_latent},
           {"update_beta", c.update_beta},
           {"update_theta", c.update_theta},
           {"noncentered_theta", c.noncentered_theta},
           {"store_latent", c.store_latent},
           {"theta_target_acceptance", c.theta_target_acceptance},
           {"preconditioner_refreshes", c.preconditioner_refreshes}};
    j["h0"] = c.h0 ? json(*c.h0) : json(nullptr);
    return j;
}

inline BayesControl bayes_control_from_json(const json& j, BayesControl c = {}) {
    c.iters = io::value_or(j, "iters", c.iters);
    c.burn_in = io::value_or(j, "burn_in", c.burn_in);
    c.thin = io::value_or(j, "thin", c.thin);
    c.update_latent = io::value_or(j, "update_latent", c.update_latent);
    c.update_beta = io::value_or(j, "update_beta", c.update_beta);
    c.update_theta = io::value_or(j, "update_theta", c.update_theta);
    c.noncentered_theta = io::value_or(j, "noncentered_theta", c.noncentered_theta);
    c.store_latent = io::value_or(j, "store_latent", c.store_latent);
    c.theta_target_acceptance = io::value_or(j, "theta_target_acceptance", c.theta_target_acceptance);
    c.preconditioner_refreshes = io::value_or(j, "preconditioner_refreshes", c.preconditioner_refreshes);
    if (j.contains("h0") && !j["h0"].is_null()) c.h0 = j["h0"].get<double>();
    return c;
}

inline json to_json(const PosteriorDraws& d) {
    return json{{"kind", "posterior"},
                {"names", d.names},
                {"chains", io::mat(d.chains)},
                {"latent", io::mat(d.latent)},
                {"acceptance_latent", io::num(d.acceptance_latent)},
                {"acceptance_theta", io::num(d.acceptance_theta)},
                {"acceptance_theta_nc", io::num(d.acceptance_theta_nc)},
                {"mala_h", io::num(d.mala_h)},
                {"warnings", d.warnings},
                {"fixed", to_json(d.fixed)},
                {"priors", to_json(d.priors)},
                {"control", to_json(d.control)},
                {"seed", d.seed}};
}

inline PosteriorDraws posterior_draws_from_json(const json& j) {
    require(io::value_or<std::string>(j, "kind", "") == "posterior", ErrorKind::ModeMismatch, "not a posterior file");
    PosteriorDraws d;
    d.names = j.at("names").get<std::vector<std::string>>();
    d.chains = io::get_mat(j.at("chains"));
    d.latent = io::get_mat(j.at("latent"));
    d.acceptance_latent = io::get_num(j.at("acceptance_latent"));
    d.acceptance_theta = io::get_num(j.at("acceptance_theta"));
    d.acceptance_theta_nc = io::get_num(j.at("acceptance_theta_nc"));
    d.mala_h = io::get_num(j.at("mala_h"));
    d.warnings = j.at("warnings").get<std::vector<std::string>>();
    d.fixed = correlation_params_from_json(j.at("fixed"));
    d.priors = prior_spec_from_json(j.at("priors"), d.n_beta());
    d.control = bayes_control_from_json(j.at("control"));
    d.seed = j.at("seed").get<std::uint64_t>();
    return d;
}

inline json to_json(const std::vector<PosteriorSummary>& v) {
    json a = json::array();
    for (const auto& s : v)
        a.push_back(json{{"name", s.name},
                         {"mean", io::num(s.mean)},
                         {"sd", io::num(s.sd)},
                         {"lower", io::num(s.lower)},
                         {"upper", io::num(s.upper)},
                         {"ess", io::num(s.ess)}});
    return a;
}

inline json to_json(const EnvelopeResult& e) {
    json bins = json::array();
    for (std::size_t k = 0; k < e.observed.bins.size(); ++k) {
        const auto& b = e.observed.bins[k];
        bins.push_back(json{{"u_mid", b.u_mid},
                            {"v_mid", b.v_mid},
                            {"count", b.count},
                            {"gamma", io::num(b.gamma)},
                            {"lower95", io::num(e.lower95[k])},
                            {"upper95", io::num(e.upper95[k])},
                            {"null_mean", io::num(e.null_mean[k])},
                            {"reject", static_cast<bool>(e.reject[k])}});
    }
    std::size_t outside = 0;
    for (bool r : e.reject) outside += r ? 1 : 0;
    return json{{"B", e.B},
                {"bins_outside", outside},
                {"global_statistic", io::num(e.global_statistic)},
                {"global_p_value", io::num(e.global_p_value)},
                {"bins", bins}};
}

inline json to_json(const GofResult& g) {
    return json{{"mode", g.mode == GofMode::Plugin ? "plugin" : "bayesian_averaged"},
                {"t_observed", io::num(g.t_observed)},
                {"p_value", io::num(g.p_value)},
                {"B", g.t_null.size()},
                {"dropped", g.dropped}};
}

inline json to_json(const ProfileResult& p) {
    json pts = json::array();
    for (const auto& q : p.points)
        pts.push_back(json{{"xi", q.xi},
                           {"log_likelihood", io::num(q.log_likelihood)},
                           {"deviance", io::num(q.deviance)},
                           {"converged", q.converged}});
    return json{{"kind", "profile_xi"}, {"xi_hat", p.xi_hat}, {"chi2_reference", p.chi2_reference}, {"points", pts}};
}

inline json to_json(const VariogramFit& f) { return json{{"params", to_json(f.params)}, {"objective", io::num(f.objective)}}; }

}  // namespace stprev
