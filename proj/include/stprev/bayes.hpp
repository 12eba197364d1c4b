#pragma once

// Bayesian fitting by MCMC. Each sweep updates the latent total predictor W
// by preconditioned MALA, beta by its Gaussian full conditional given W, and
// (log sigma2, log phi, log nu2, log psi) by adaptive random-walk Metropolis,
// once with W held fixed and once with the whitened W held fixed.

#include "stprev/exploratory.hpp"
#include "stprev/latent.hpp"
#include "stprev/mcml.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace stprev {

struct PriorSpec {
    Eigen::VectorXd beta_mean;
    Eigen::MatrixXd beta_cov;
    Interval sigma2{0.0, 20.0};
    Interval phi{0.0, 1000.0};
    Interval nu2{0.0, 20.0};  // tau2 / sigma2
    Interval psi{0.0, 20.0};

    /// beta ~ MVN(0, 1e4 I), sigma2 ~ U(0, 20), phi ~ U(0, 1000),
    /// tau2/sigma2 ~ U(0, 20), psi ~ U(0, 20).
    static PriorSpec vague(std::size_t p) {
        PriorSpec s;
        s.beta_mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p));
        s.beta_cov = 1e4 * Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
        return s;
    }

    void validate() const {
        for (const Interval* i : {&sigma2, &phi, &nu2, &psi})
            require(std::isfinite(i->lo) && std::isfinite(i->hi) && i->lo < i->hi && i->lo >= 0.0,
                    ErrorKind::InvalidParam, "prior bounds must be finite with 0 <= lo < hi");
        require(beta_mean.size() == beta_cov.rows() && beta_cov.rows() == beta_cov.cols(), ErrorKind::InvalidParam,
                "beta prior dimensions");
        require(Eigen::LLT<Eigen::MatrixXd>(beta_cov).info() == Eigen::Success, ErrorKind::InvalidParam,
                "beta prior covariance must be positive definite");
    }

    /// Open-interval support check on the natural scale.
    bool in_support(double s2, double ph, double n2, double ps) const {
        auto in = [](const Interval& i, double v) { return v > i.lo && v < i.hi; };
        return in(sigma2, s2) && in(phi, ph) && in(nu2, n2) && in(psi, ps);
    }
};

struct BayesControl {
    std::size_t iters = 20000;   // sweeps after burn-in
    std::size_t burn_in = 5000;
    std::size_t thin = 10;
    bool update_latent = true;
    bool update_beta = true;
    bool update_theta = true;
    bool noncentered_theta = true;  // extra theta move with whitened W fixed
    bool store_latent = true;
    double theta_target_acceptance = 0.25;
    std::optional<double> h0;
    int preconditioner_refreshes = 3;  // Laplace re-anchoring during burn-in
};

struct PosteriorDraws {
    std::vector<std::string> names;  // beta0..beta_{p-1}, sigma2, phi, nu2, psi
    Eigen::MatrixXd chains;          // draws x (p + 4), natural scale
    Eigen::MatrixXd latent;          // N x draws (empty unless stored)
    double acceptance_latent = 0.0;
    double acceptance_theta = 0.0;
    double acceptance_theta_nc = 0.0;
    double mala_h = 0.0;
    std::vector<std::string> warnings;
    CorrelationParams fixed;         // kappa, delta, xi (and psi when not sampled)
    PriorSpec priors;
    BayesControl control;
    std::uint64_t seed = 0;

    std::size_t size() const { return static_cast<std::size_t>(chains.rows()); }
    std::size_t n_beta() const { return static_cast<std::size_t>(chains.cols()) - 4; }

    ModelParams params(std::size_t k) const {
        const auto r = static_cast<Eigen::Index>(k);
        const auto p = static_cast<Eigen::Index>(n_beta());
        ModelParams m;
        m.beta = chains.row(r).head(p).transpose();
        m.cov = fixed;
        m.cov.sigma2 = chains(r, p);
        m.cov.phi = chains(r, p + 1);
        m.cov.tau2 = chains(r, p + 2) * chains(r, p);
        m.cov.psi = chains(r, p + 3);
        return m;
    }

    std::vector<ModelParams> all_params() const {
        std::vector<ModelParams> out;
        for (std::size_t k = 0; k < size(); ++k) out.push_back(params(k));
        return out;
    }
};

/// Gaussian full conditional of beta given W and the covariance:
/// precision V0^-1 + D' Sigma^-1 D, mean = precision^-1 (V0^-1 m0 + D' Sigma^-1 W).
struct BetaConditional {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

inline BetaConditional beta_full_conditional(const Eigen::MatrixXd& d, const Eigen::VectorXd& w,
                                             const JitteredCholesky& sigma_chol, const PriorSpec& prior) {
    const Eigen::LLT<Eigen::MatrixXd> v0(prior.beta_cov);
    const Eigen::MatrixXd sid = sigma_chol.llt.solve(d);
    Eigen::MatrixXd prec = v0.solve(Eigen::MatrixXd::Identity(d.cols(), d.cols())) + d.transpose() * sid;
    prec = 0.5 * (prec + prec.transpose()).eval();
    const Eigen::VectorXd rhs = v0.solve(prior.beta_mean) + sid.transpose() * w;
    const Eigen::LLT<Eigen::MatrixXd> pl(prec);
    BetaConditional out;
    out.mean = pl.solve(rhs);
    out.cov = pl.solve(Eigen::MatrixXd::Identity(d.cols(), d.cols()));
    return out;
}

inline Eigen::VectorXd draw_beta_full_conditional(const BetaConditional& bc, Rng& rng) {
    const Eigen::LLT<Eigen::MatrixXd> l(bc.cov);
    return bc.mean + l.matrixL() * standard_normal(rng, bc.mean.size());
}

namespace detail {

// Adaptive random-walk proposal on the log scale: covariance scale^2 * C,
// with C the empirical covariance of the burn-in history once available.
struct AdaptiveWalk {
    Eigen::MatrixXd chol;
    double log_scale = 0.0;
    std::vector<Eigen::VectorXd> history;

    explicit AdaptiveWalk(Eigen::Index dim, double initial_sd)
        : chol(initial_sd * Eigen::MatrixXd::Identity(dim, dim)) {}

    Eigen::VectorXd propose(const Eigen::VectorXd& x, Rng& rng) const {
        return x + std::exp(log_scale) * (chol * standard_normal(rng, x.size()));
    }

    void adapt(double alpha, std::size_t t, double target, const Eigen::VectorXd& x) {
        log_scale += std::pow(static_cast<double>(t + 1), -0.6) * (alpha - target);
        log_scale = std::clamp(log_scale, -10.0, 5.0);
        history.push_back(x);
        const std::size_t n = history.size();
        if (n >= 200 && n % 100 == 0) {
            const auto dim = x.size();
            Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
            for (const auto& h : history) mean += h;
            mean /= static_cast<double>(n);
            Eigen::MatrixXd c = Eigen::MatrixXd::Zero(dim, dim);
            for (const auto& h : history) c += (h - mean) * (h - mean).transpose();
            c /= static_cast<double>(n - 1);
            c.diagonal().array() += 1e-6;
            const Eigen::LLT<Eigen::MatrixXd> l(c * (2.38 * 2.38 / static_cast<double>(dim)));
            if (l.info() == Eigen::Success) {
                chol = l.matrixL();
                log_scale = 0.0;
            }
        }
    }
};

}  // namespace detail

/// MCMC for the binomial geostatistical model under `prior`. `init` supplies
/// the starting point and the fixed kappa, delta and xi; psi is held fixed
/// when all records share one time.
inline PosteriorDraws fit_bayes(const SurveyDataset& ds, const DesignMatrix& design, const PriorSpec& prior,
                                const ModelParams& init, const BayesControl& ctl, std::uint64_t seed) {
    prior.validate();
    require(prior.beta_mean.size() == design.rows.cols(), ErrorKind::InvalidParam, "beta prior length vs design");
    require(ctl.thin >= 1, ErrorKind::InvalidArgument, "thin must be >= 1");
    init.cov.validate();
    const McmlProblem prob = McmlProblem::from(ds, design);
    const Eigen::Index nn = prob.size();
    const bool sample_psi = ds.distinct_times() >= 2;
    const Eigen::Index tdim = sample_psi ? 4 : 3;

    // theta on the log scale: (log sigma2, log phi, log nu2[, log psi])
    auto theta_of = [&](const CorrelationParams& c) {
        Eigen::VectorXd t(tdim);
        t(0) = std::log(c.sigma2);
        t(1) = std::log(c.phi);
        t(2) = std::log(c.nu2());
        if (sample_psi) t(3) = std::log(c.psi);
        return t;
    };
    auto cov_of = [&](const Eigen::VectorXd& t) {
        CorrelationParams c = init.cov;
        c.sigma2 = std::exp(t(0));
        c.phi = std::exp(t(1));
        c.tau2 = std::exp(t(2)) * c.sigma2;
        if (sample_psi) c.psi = std::exp(t(3));
        return c;
    };
    auto in_support = [&](const CorrelationParams& c) { return prior.in_support(c.sigma2, c.phi, c.nu2(), c.psi); };
    // log prior density of log-theta: uniform on the natural scale plus Jacobian
    auto log_prior_theta = [&](const Eigen::VectorXd& t) { return t.sum(); };

    require(in_support(init.cov), ErrorKind::InvalidParam, "initial covariance parameters outside the prior support");

    Rng rng = make_rng(seed, "bayes");
    ModelParams cur = init;
    Eigen::VectorXd theta = theta_of(cur.cov);
    JitteredCholesky chol = cholesky_with_jitter(prob.sigma(cur.cov), cur.cov.sigma2 + cur.cov.tau2);
    auto make_target = [&](const ModelParams& m, const JitteredCholesky& c) {
        return LatentTarget(prob.y, prob.n, prob.d * m.beta, c);
    };

    std::optional<LatentTarget> target;
    target.emplace(make_target(cur, chol));
    Preconditioner pc = Preconditioner::from_laplace(laplace_mode(*target), *target);
    Eigen::VectorXd w = pc.w_hat;

    MalaChain chain;
    chain.h = ctl.h0.value_or(default_step_size(nn));
    auto refresh_chain = [&] {
        const GeneralZTarget zt(*target, pc);
        chain.reset(zt, pc.to_z(w));
    };
    refresh_chain();

    detail::AdaptiveWalk walk(tdim, 0.1), walk_nc(tdim, 0.1);
    const std::size_t total = ctl.burn_in + ctl.iters;
    const std::size_t n_keep = ctl.iters / ctl.thin;
    PosteriorDraws out;
    const auto p = design.rows.cols();
    for (Eigen::Index j = 0; j < p; ++j) out.names.push_back("beta" + std::to_string(j));
    for (const char* n : {"sigma2", "phi", "nu2", "psi"}) out.names.push_back(n);
    out.chains.resize(static_cast<Eigen::Index>(n_keep), p + 4);
    if (ctl.store_latent) out.latent.resize(nn, static_cast<Eigen::Index>(n_keep));
    out.fixed = init.cov;
    out.priors = prior;
    out.control = ctl;
    out.seed = seed;

    // Gaussian log-density of W at (beta, Sigma); 2 pi terms dropped.
    auto log_gauss = [&](const Eigen::VectorXd& resid, const JitteredCholesky& c) {
        return -0.5 * c.log_det() - 0.5 * c.llt.matrixL().solve(resid).squaredNorm();
    };
    std::vector<std::size_t> refresh_at;
    for (int k = 1; k <= ctl.preconditioner_refreshes; ++k)
        refresh_at.push_back(ctl.burn_in * static_cast<std::size_t>(k) / static_cast<std::size_t>(ctl.preconditioner_refreshes + 1));

    double acc_lat = 0.0, acc_th = 0.0, acc_nc = 0.0;
    std::size_t kept = 0;
    for (std::size_t it = 0; it < total; ++it) {
        const bool burning = it < ctl.burn_in;
        const std::size_t post = burning ? 0 : it - ctl.burn_in;
        if (burning && std::find(refresh_at.begin(), refresh_at.end(), it) != refresh_at.end() && it > 0) {
            try {
                pc = Preconditioner::from_laplace(laplace_mode(*target, 1e-8, 100, w), *target);
                refresh_chain();
            } catch (const Error&) {
                // keep the previous preconditioner
            }
        }

        // (1) latent field
        if (ctl.update_latent) {
            const GeneralZTarget zt(*target, pc);
            const double a = mala_step(zt, chain, rng);
            if (burning) adapt_step_size(chain, a, it);
            else acc_lat += a;
            w = chain.w;
        }

        // (2) beta | W, theta
        if (ctl.update_beta) {
            cur.beta = draw_beta_full_conditional(beta_full_conditional(prob.d, w, chol, prior), rng);
            target.emplace(make_target(cur, chol));
        }

        // (3) theta | W, beta
        if (ctl.update_theta) {
            const Eigen::VectorXd mu = prob.d * cur.beta;
            const Eigen::VectorXd resid = w - mu;
            {
                const Eigen::VectorXd prop = walk.propose(theta, rng);
                const CorrelationParams c = cov_of(prop);
                double alpha = 0.0;
                std::optional<JitteredCholesky> pch;
                if (in_support(c)) {
                    try {
                        pch = cholesky_with_jitter(prob.sigma(c), c.sigma2 + c.tau2);
                        const double la = log_gauss(resid, *pch) + log_prior_theta(prop) - log_gauss(resid, chol) -
                                          log_prior_theta(theta);
                        alpha = std::isnan(la) ? 0.0 : std::min(1.0, std::exp(la));
                    } catch (const Error&) {
                        alpha = 0.0;
                    }
                }
                if (uniform01(rng) < alpha) {
                    theta = prop;
                    cur.cov = c;
                    chol = std::move(*pch);
                }
                if (burning) walk.adapt(alpha, it, ctl.theta_target_acceptance, theta);
                else acc_th += alpha;
            }
            if (ctl.noncentered_theta) {
                const Eigen::VectorXd e = chol.llt.matrixL().solve(resid);
                const Eigen::VectorXd prop = walk_nc.propose(theta, rng);
                const CorrelationParams c = cov_of(prop);
                double alpha = 0.0;
                std::optional<JitteredCholesky> pch;
                Eigen::VectorXd w_new;
                if (in_support(c)) {
                    try {
                        pch = cholesky_with_jitter(prob.sigma(c), c.sigma2 + c.tau2);
                        w_new = mu + pch->llt.matrixL() * e;
                        const double la = target->log_likelihood(w_new) + log_prior_theta(prop) -
                                          target->log_likelihood(w) - log_prior_theta(theta);
                        alpha = std::isnan(la) ? 0.0 : std::min(1.0, std::exp(la));
                    } catch (const Error&) {
                        alpha = 0.0;
                    }
                }
                if (uniform01(rng) < alpha) {
                    theta = prop;
                    cur.cov = c;
                    chol = std::move(*pch);
                    w = std::move(w_new);
                }
                if (burning) walk_nc.adapt(alpha, it, ctl.theta_target_acceptance, theta);
                else acc_nc += alpha;
            }
            target.emplace(make_target(cur, chol));
        }
        if (ctl.update_beta || ctl.update_theta) refresh_chain();

        if (!burning && (post + 1) % ctl.thin == 0 && kept < n_keep) {
            const double lp = chain.log_density;
            if (!std::isfinite(lp)) fail(ErrorKind::NonFiniteDensity, "non-finite log-posterior at a retained state");
            const auto r = static_cast<Eigen::Index>(kept);
            out.chains.row(r).head(p) = cur.beta.transpose();
            out.chains(r, p) = cur.cov.sigma2;
            out.chains(r, p + 1) = cur.cov.phi;
            out.chains(r, p + 2) = cur.cov.nu2();
            out.chains(r, p + 3) = cur.cov.psi;
            if (ctl.store_latent) out.latent.col(r) = w;
            ++kept;
        }
    }
    const double n_post = static_cast<double>(std::max<std::size_t>(ctl.iters, 1));
    out.acceptance_latent = acc_lat / n_post;
    out.acceptance_theta = acc_th / n_post;
    out.acceptance_theta_nc = acc_nc / n_post;
    out.mala_h = chain.h;
    auto warn = [&](bool on, double a, const char* block) {
        if (on && ctl.iters > 0 && a < 0.05)
            out.warnings.push_back(std::string("ChainStuck: ") + block + " acceptance " + std::to_string(a));
    };
    warn(ctl.update_latent, out.acceptance_latent, "latent");
    warn(ctl.update_theta, out.acceptance_theta, "theta");
    warn(ctl.update_theta && ctl.noncentered_theta, out.acceptance_theta_nc, "theta (non-centred)");
    return out;
}

// ---------------------------------------------------------------------------
// Summaries
// ---------------------------------------------------------------------------

struct PosteriorSummary {
    std::string name;
    double mean = 0.0;
    double sd = 0.0;
    double lower = 0.0;  // 2.5%
    double upper = 0.0;  // 97.5%
    double ess = 0.0;
};

inline std::vector<PosteriorSummary> posterior_summaries(const Eigen::MatrixXd& chains,
                                                         const std::vector<std::string>& names) {
    require(chains.rows() >= 100, ErrorKind::InvalidArgument, "posterior summaries need >= 100 retained draws");
    require(static_cast<std::size_t>(chains.cols()) == names.size(), ErrorKind::InvalidArgument, "names vs columns");
    std::vector<PosteriorSummary> out;
    for (Eigen::Index j = 0; j < chains.cols(); ++j) {
        std::vector<double> col(chains.col(j).data(), chains.col(j).data() + chains.rows());
        PosteriorSummary s;
        s.name = names[static_cast<std::size_t>(j)];
        s.mean = chains.col(j).mean();
        s.sd = std::sqrt((chains.col(j).array() - s.mean).square().sum() / static_cast<double>(chains.rows() - 1));
        s.ess = effective_sample_size(col);
        std::sort(col.begin(), col.end());
        s.lower = quantile_sorted(col, 0.025);
        s.upper = quantile_sorted(col, 0.975);
        out.push_back(s);
    }
    return out;
}

inline std::vector<PosteriorSummary> posterior_summaries(const PosteriorDraws& d) {
    return posterior_summaries(d.chains, d.names);
}

}  // namespace stprev
