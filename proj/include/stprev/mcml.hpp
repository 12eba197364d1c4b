#pragma once

// Monte Carlo maximum likelihood for the binomial geostatistical model.
// Samples of the latent total predictor W drawn at an anchor lambda0 turn
// the likelihood ratio L(lambda)/L(lambda0) into an average of Gaussian
// density ratios, which is maximised by BFGS and re-anchored until stable.

#include "stprev/latent.hpp"
#include "stprev/model.hpp"
#include "stprev/optim.hpp"
#include "stprev/parallel.hpp"

#include <Eigen/Cholesky>
#include <boost/math/distributions/normal.hpp>

#include <array>
#include <limits>
#include <string>
#include <vector>

namespace stprev {

// ---------------------------------------------------------------------------
// Parameter layout
// ---------------------------------------------------------------------------

/// Covariance coordinates on the optimisation scale.
enum class CovCoord { LogSigma2 = 0, LogPhi, LogNu2, LogPsi, LogDelta, LogitXi };

inline constexpr std::array<const char*, 6> kCovCoordNames{"log_sigma2", "log_phi", "log_nu2", "log_psi",
                                                          "log_delta", "logit_xi"};

/// Which parameters are free. The free vector is beta (p entries) followed by
/// the free covariance coordinates in CovCoord order.
struct ParamLayout {
    std::size_t n_beta = 1;
    std::array<bool, 6> free{true, true, true, true, false, false};

    std::vector<CovCoord> free_cov() const {
        std::vector<CovCoord> out;
        for (int j = 0; j < 6; ++j)
            if (free[j]) out.push_back(static_cast<CovCoord>(j));
        return out;
    }

    std::size_t dim() const { return n_beta + free_cov().size(); }

    std::vector<std::string> names() const {
        std::vector<std::string> n;
        for (std::size_t j = 0; j < n_beta; ++j) n.push_back("beta" + std::to_string(j));
        for (CovCoord c : free_cov()) n.push_back(kCovCoordNames[static_cast<int>(c)]);
        return n;
    }

    /// Free vector -> parameters (fixed entries taken from `base`).
    ModelParams unpack(const Eigen::VectorXd& x, const ModelParams& base) const {
        require(static_cast<std::size_t>(x.size()) == dim(), ErrorKind::InvalidArgument, "parameter vector length");
        ModelParams m = base;
        m.beta = x.head(static_cast<Eigen::Index>(n_beta));
        double nu2 = base.cov.nu2();
        Eigen::Index k = static_cast<Eigen::Index>(n_beta);
        for (CovCoord c : free_cov()) {
            const double v = x(k++);
            switch (c) {
            case CovCoord::LogSigma2: m.cov.sigma2 = std::exp(v); break;
            case CovCoord::LogPhi: m.cov.phi = std::exp(v); break;
            case CovCoord::LogNu2: nu2 = std::exp(v); break;
            case CovCoord::LogPsi: m.cov.psi = std::exp(v); break;
            case CovCoord::LogDelta: m.cov.delta = std::exp(v); break;
            case CovCoord::LogitXi: m.cov.xi = expit(v); break;
            }
        }
        m.cov.tau2 = nu2 * m.cov.sigma2;
        return m;
    }

    Eigen::VectorXd pack(const ModelParams& m) const {
        require(static_cast<std::size_t>(m.beta.size()) == n_beta, ErrorKind::InvalidArgument, "beta length");
        Eigen::VectorXd x(static_cast<Eigen::Index>(dim()));
        x.head(static_cast<Eigen::Index>(n_beta)) = m.beta;
        Eigen::Index k = static_cast<Eigen::Index>(n_beta);
        for (CovCoord c : free_cov()) {
            double v = 0.0;
            switch (c) {
            case CovCoord::LogSigma2: v = std::log(m.cov.sigma2); break;
            case CovCoord::LogPhi: v = std::log(m.cov.phi); break;
            case CovCoord::LogNu2: v = std::log(m.cov.nu2()); break;
            case CovCoord::LogPsi: v = std::log(m.cov.psi); break;
            case CovCoord::LogDelta: v = std::log(m.cov.delta); break;
            case CovCoord::LogitXi: v = logit(m.cov.xi); break;
            }
            require(std::isfinite(v), ErrorKind::InvalidParam,
                    std::string("free parameter ") + kCovCoordNames[static_cast<int>(c)] + " is not finite");
            x(k++) = v;
        }
        return x;
    }
};

// ---------------------------------------------------------------------------
// Gaussian log-density of latent samples and its derivatives
// ---------------------------------------------------------------------------

/// Data-side quantities shared by every likelihood evaluation.
struct McmlProblem {
    Eigen::VectorXd y, n;
    Eigen::MatrixXd d;
    LagMatrices lags;

    static McmlProblem from(const SurveyDataset& ds, const DesignMatrix& design) {
        require(design.rows.rows() == static_cast<Eigen::Index>(ds.size()), ErrorKind::InvalidArgument,
                "design rows differ from record count");
        const auto coords = ds.coords();
        return McmlProblem{ds.positives(), ds.tested(), design.rows, pairwise_lags(coords)};
    }

    Eigen::Index size() const { return y.size(); }

    Eigen::MatrixXd sigma(const CorrelationParams& c) const { return covariance_matrix(lags, c); }

    LatentTarget target(const ModelParams& m) const {
        return LatentTarget(y, n, d * m.beta, sigma(m.cov), m.cov.sigma2 + m.cov.tau2);
    }
};

namespace detail {

// log N(w_h; mu, Sigma) for every column, without the 2 pi term.
inline Eigen::VectorXd gaussian_log_densities(const Eigen::MatrixXd& w, const Eigen::VectorXd& mu,
                                              const JitteredCholesky& ch, Eigen::MatrixXd* whitened = nullptr) {
    Eigen::MatrixXd r = w.colwise() - mu;
    ch.llt.matrixL().solveInPlace(r);
    Eigen::VectorXd out = -0.5 * r.colwise().squaredNorm().transpose();
    out.array() -= 0.5 * ch.log_det();
    if (whitened) *whitened = std::move(r);
    return out;
}

}  // namespace detail

struct McmlEvaluation {
    double value = 0.0;     // log L_B
    double ess = 0.0;       // 1 / sum(weights^2)
    Eigen::VectorXd grad;   // with respect to the free vector
};

/// log L_B(lambda) = log (1/B) sum_h N(w_h; D beta, Sigma) / N(w_h; D beta0, Sigma0)
/// for samples w_h drawn from [W | y, lambda0].
class McmlObjective {
public:
    McmlObjective(const McmlProblem& prob, Eigen::MatrixXd samples, ModelParams anchor, ParamLayout layout)
        : prob_(prob), samples_(std::move(samples)), anchor_(std::move(anchor)), layout_(layout) {
        require(samples_.rows() == prob_.size() && samples_.cols() >= 1, ErrorKind::InvalidArgument,
                "MCML samples must be N x B with B >= 1");
        const JitteredCholesky ch = cholesky_with_jitter(prob_.sigma(anchor_.cov), anchor_.cov.sigma2 + anchor_.cov.tau2);
        anchor_logd_ = detail::gaussian_log_densities(samples_, prob_.d * anchor_.beta, ch);
        anchor_x_ = layout_.pack(anchor_);
    }

    const ModelParams& anchor() const { return anchor_; }
    const ParamLayout& layout() const { return layout_; }
    Eigen::Index n_samples() const { return samples_.cols(); }
    const Eigen::MatrixXd& samples() const { return samples_; }

    /// Evaluates log L_B at free vector x; the gradient is filled when asked
    /// and the ESS reaches `min_ess`.
    McmlEvaluation evaluate(const Eigen::VectorXd& x, bool with_gradient, double min_ess = 0.0) const {
        // exp(log v) need not round-trip, so the anchor itself is used verbatim
        const ModelParams m = x == anchor_x_ ? anchor_ : layout_.unpack(x, anchor_);
        const CorrelationParams& c = m.cov;
        c.validate();
        const Eigen::MatrixXd sigma = prob_.sigma(c);
        const JitteredCholesky ch = cholesky_with_jitter(sigma, c.sigma2 + c.tau2);
        const Eigen::VectorXd mu = prob_.d * m.beta;
        Eigen::MatrixXd white;
        const Eigen::VectorXd logd = detail::gaussian_log_densities(samples_, mu, ch, with_gradient ? &white : nullptr);
        const Eigen::VectorXd r = logd - anchor_logd_;
        McmlEvaluation out;
        out.value = log_mean_exp(r);
        const double rmax = r.maxCoeff();
        Eigen::VectorXd omega = (r.array() - rmax).exp().matrix();
        omega /= omega.sum();
        out.ess = 1.0 / omega.squaredNorm();
        if (!with_gradient || out.ess < min_ess) return out;

        const Eigen::Index nn = prob_.size();
        // A = Sigma^-1 (W - mu 1')
        Eigen::MatrixXd a = std::move(white);
        ch.llt.matrixU().solveInPlace(a);
        out.grad.resize(static_cast<Eigen::Index>(layout_.dim()));
        const auto nb = static_cast<Eigen::Index>(layout_.n_beta);
        const Eigen::VectorXd a_omega = a * omega;
        out.grad.head(nb) = prob_.d.transpose() * a_omega;
        const auto free_cov = layout_.free_cov();
        if (free_cov.empty()) return out;

        // G = sum_h omega_h a_h a_h' - Sigma^-1
        const Eigen::MatrixXd as = a * omega.cwiseSqrt().asDiagonal();
        Eigen::MatrixXd g = Eigen::MatrixXd::Zero(nn, nn);
        g.selfadjointView<Eigen::Lower>().rankUpdate(as);
        g.triangularView<Eigen::StrictlyUpper>() = g.transpose();
        g -= ch.llt.solve(Eigen::MatrixXd::Identity(nn, nn));

        const bool need_corr_grad = std::any_of(free_cov.begin(), free_cov.end(), [](CovCoord cc) {
            return cc != CovCoord::LogSigma2 && cc != CovCoord::LogNu2;
        });
        std::array<double, 4> corr_grad{0, 0, 0, 0};  // log phi, log psi, delta, xi
        if (need_corr_grad) {
            for (Eigen::Index j = 0; j < nn; ++j) {
                for (Eigen::Index i = 0; i < j; ++i) {
                    const CorrelationGradient cg = gneiting_with_gradient(prob_.lags.u(i, j), prob_.lags.v(i, j), c);
                    const double gij = 2.0 * g(i, j);  // symmetric pair
                    corr_grad[0] += cg.d_log_phi * gij;
                    corr_grad[1] += cg.d_log_psi * gij;
                    corr_grad[2] += cg.d_delta * gij;
                    corr_grad[3] += cg.d_xi * gij;
                }
            }
        }
        double wq = 0.0;  // sum_h omega_h q_h with q_h = a_h' Sigma a_h
        for (Eigen::Index h = 0; h < samples_.cols(); ++h) wq += omega(h) * (-2.0 * (logd(h) + 0.5 * ch.log_det()));
        Eigen::Index k = nb;
        for (CovCoord cc : free_cov) {
            double v = 0.0;
            switch (cc) {
            case CovCoord::LogSigma2: v = 0.5 * wq - 0.5 * static_cast<double>(nn); break;
            case CovCoord::LogNu2: v = 0.5 * c.tau2 * g.trace(); break;
            case CovCoord::LogPhi: v = 0.5 * c.sigma2 * corr_grad[0]; break;
            case CovCoord::LogPsi: v = 0.5 * c.sigma2 * corr_grad[1]; break;
            case CovCoord::LogDelta: v = 0.5 * c.sigma2 * corr_grad[2] * c.delta; break;
            case CovCoord::LogitXi: v = 0.5 * c.sigma2 * corr_grad[3] * c.xi * (1.0 - c.xi); break;
            }
            out.grad(k++) = v;
        }
        return out;
    }

private:
    const McmlProblem& prob_;
    Eigen::MatrixXd samples_;
    ModelParams anchor_;
    ParamLayout layout_;
    Eigen::VectorXd anchor_logd_;
    Eigen::VectorXd anchor_x_;
};

/// log L_B at `x`, rejecting degenerate importance weights (ESS < 0.01 B).
inline McmlEvaluation mcml_objective(const McmlObjective& obj, const Eigen::VectorXd& x, bool with_gradient = true) {
    McmlEvaluation e = obj.evaluate(x, with_gradient);
    if (e.ess < 0.01 * static_cast<double>(obj.n_samples()))
        fail(ErrorKind::DegenerateWeights, "MCML importance weights degenerate (ESS " + std::to_string(e.ess) + ")");
    return e;
}

// ---------------------------------------------------------------------------
// Absolute log-likelihood by importance sampling
// ---------------------------------------------------------------------------

/// log [y; lambda] by importance sampling from the Laplace approximation
/// N(w_hat, H^-1), with antithetic pairs. Includes binomial coefficients.
inline double log_likelihood_is(const McmlProblem& prob, const ModelParams& m, std::size_t draws, std::uint64_t seed) {
    require(draws >= 2, ErrorKind::InvalidArgument, "importance sampling needs at least 2 draws");
    const LatentTarget target = prob.target(m);
    const LaplaceResult lap = laplace_mode(target);
    const Preconditioner pc = Preconditioner::from_laplace(lap, target);
    const Eigen::Index nn = prob.size();
    const std::size_t half = (draws + 1) / 2;
    Rng rng = make_rng(seed, "loglik-is");
    Eigen::MatrixXd z(nn, static_cast<Eigen::Index>(2 * half));
    for (std::size_t k = 0; k < half; ++k) {
        const Eigen::VectorXd e = standard_normal(rng, nn);
        z.col(static_cast<Eigen::Index>(2 * k)) = e;
        z.col(static_cast<Eigen::Index>(2 * k + 1)) = -e;
    }
    Eigen::MatrixXd w = pc.a.triangularView<Eigen::Upper>() * z;
    w.colwise() += pc.w_hat;
    const Eigen::VectorXd log_prior = detail::gaussian_log_densities(w, target.mu(), target.chol());
    // log q(w) = 0.5 log|H| - 0.5 z'z (2 pi terms cancel with the prior's)
    const double half_logdet_h = pc.l.diagonal().array().log().sum();
    double log_c = 0.0;
    for (Eigen::Index i = 0; i < nn; ++i) log_c += log_binomial_coef(prob.n(i), prob.y(i));
    Eigen::VectorXd lw(z.cols());
    for (Eigen::Index h = 0; h < z.cols(); ++h)
        lw(h) = target.log_likelihood(w.col(h)) + log_prior(h) - (half_logdet_h - 0.5 * z.col(h).squaredNorm());
    return log_c + log_mean_exp(lw);
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

struct McmlControl {
    MalaControl mala{};             // B = mala.n_samples
    int outer_iters = 10;
    double rel_tol = 1e-3;
    double objective_tol = 0.02;    // stop once log L_B(lambda_hat_B) falls below this
    std::array<bool, 6> free{true, true, true, true, false, false};
    std::vector<double> kappa_candidates{0.5};
    bool refine_beta = true;        // start beta at the joint (beta, W) mode
    std::size_t loglik_draws = 2000;  // 0 skips the absolute log-likelihood
    double max_step = 1.0;          // BFGS step cap on the optimisation scale
    double hessian_step = 1e-4;
    unsigned threads = 1;
};

struct FittedModel {
    ModelParams params;
    ParamLayout layout;
    Eigen::VectorXd lambda_hat;       // free vector
    Eigen::MatrixXd hessian;          // of log L at lambda_hat, optimisation scale
    std::vector<Eigen::VectorXd> lambda0_path;
    double final_rel_change = 0.0;
    double final_objective = 0.0;     // log L_B(lambda_hat) against the last anchor
    int outer_iterations = 0;
    bool converged = false;
    std::size_t B = 0;
    double mala_acceptance = 0.0;
    double log_likelihood = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::pair<double, double>> kappa_log_likelihood;
    McmlControl control;
    std::uint64_t seed = 0;

    std::vector<std::string> names() const { return layout.names(); }
};

namespace detail {

inline std::array<bool, 6> effective_free(const McmlControl& ctl, const SurveyDataset& ds) {
    std::array<bool, 6> f = ctl.free;
    if (ds.distinct_times() < 2) f[static_cast<int>(CovCoord::LogPsi)] = false;
    if (ds.distinct_times() < 2) f[static_cast<int>(CovCoord::LogDelta)] = false;
    return f;
}

inline Eigen::MatrixXd mcml_hessian(const McmlObjective& obj, const Eigen::VectorXd& x, double h) {
    const auto k = x.size();
    Eigen::MatrixXd hess(k, k);
    for (Eigen::Index j = 0; j < k; ++j) {
        Eigen::VectorXd xp = x, xm = x;
        xp(j) += h;
        xm(j) -= h;
        hess.col(j) = (obj.evaluate(xp, true).grad - obj.evaluate(xm, true).grad) / (2.0 * h);
    }
    return 0.5 * (hess + hess.transpose());
}

inline FittedModel fit_mcml_fixed_kappa(const McmlProblem& prob, const ModelParams& init, const ParamLayout& layout,
                                        const McmlControl& ctl, std::uint64_t seed) {
    FittedModel fit;
    fit.layout = layout;
    fit.control = ctl;
    fit.seed = seed;
    fit.B = ctl.mala.n_samples;
    ModelParams anchor = init;
    anchor.cov.validate();
    if (ctl.refine_beta) {
        anchor.beta = profiled_joint_mode(prob.y, prob.n, prob.d, prob.sigma(anchor.cov),
                                          anchor.cov.sigma2 + anchor.cov.tau2)
                          .beta;
    }
    Eigen::VectorXd x0 = layout.pack(anchor);
    std::optional<Eigen::VectorXd> w_start;
    std::optional<McmlObjective> last;
    BfgsOptions bo;
    bo.max_iter = 200;
    bo.grad_tol = 1e-6;
    bo.max_step = ctl.max_step;
    bo.max_line_search = 20;  // backtracking mostly probes the low-ESS region
    for (int it = 0; it < ctl.outer_iters; ++it) {
        fit.lambda0_path.push_back(x0);
        const LatentTarget target = prob.target(anchor);
        const LaplaceResult lap = laplace_mode(target, 1e-8, 100, w_start);
        w_start = lap.mode;
        const MalaResult mr = mala_sample(target, ctl.mala, derive_seed(seed, "mcml-mala", static_cast<std::uint64_t>(it)),
                                          &lap);
        fit.mala_acceptance = mr.acceptance;
        last.emplace(prob, mr.samples, anchor, layout);
        const McmlObjective& obj = *last;
        const double min_ess = 0.01 * static_cast<double>(obj.n_samples());
        auto fg = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
            McmlEvaluation e;
            try {
                e = obj.evaluate(x, true, min_ess);
            } catch (const Error& err) {
                if (err.is_validation() && err.kind() != ErrorKind::InvalidParam) throw;
                return std::numeric_limits<double>::quiet_NaN();
            }
            if (e.ess < min_ess) return std::numeric_limits<double>::quiet_NaN();
            *g = -e.grad;
            return -e.value;
        };
        const OptimResult r = minimize_bfgs(fg, x0, bo);
        const Eigen::VectorXd delta = r.x - x0;
        double rel = 0.0;
        for (Eigen::Index j = 0; j < delta.size(); ++j)
            rel = std::max(rel, std::abs(delta(j)) / std::max(1.0, std::abs(x0(j))));
        fit.final_rel_change = rel;
        fit.final_objective = -r.f;
        fit.outer_iterations = it + 1;
        x0 = r.x;
        anchor = layout.unpack(x0, anchor);
        if (rel < ctl.rel_tol || -r.f < ctl.objective_tol) {
            fit.converged = true;
            break;
        }
    }
    fit.lambda_hat = x0;
    fit.params = anchor;
    fit.hessian = mcml_hessian(*last, x0, ctl.hessian_step);
    if (ctl.loglik_draws > 0)
        fit.log_likelihood = log_likelihood_is(prob, fit.params, ctl.loglik_draws, derive_seed(seed, "mcml-loglik"));
    return fit;
}

}  // namespace detail

/// Fits the model by MCML at each candidate smoothness and keeps the one with
/// the largest log-likelihood (ties go to the smaller kappa).
inline FittedModel fit_mcml(const SurveyDataset& ds, const DesignMatrix& design, const ModelParams& init,
                            const McmlControl& ctl, std::uint64_t seed) {
    require(ds.distinct_locations() >= 2, ErrorKind::InvalidArgument, "spatial fitting needs >= 2 distinct locations");
    require(!ctl.kappa_candidates.empty(), ErrorKind::InvalidArgument, "no smoothness candidates");
    require(ctl.mala.n_samples >= 1, ErrorKind::InvalidArgument, "MCML needs B >= 1");
    const McmlProblem prob = McmlProblem::from(ds, design);
    ParamLayout layout;
    layout.n_beta = static_cast<std::size_t>(design.rows.cols());
    layout.free = detail::effective_free(ctl, ds);

    std::vector<double> kappas = ctl.kappa_candidates;
    std::sort(kappas.begin(), kappas.end());
    std::vector<std::optional<FittedModel>> fits(kappas.size());
    McmlControl inner = ctl;
    if (kappas.size() > 1 && inner.loglik_draws == 0) inner.loglik_draws = 2000;
    parallel_for(kappas.size(), ctl.threads, [&](std::size_t k) {
        ModelParams start = init;
        start.cov.kappa = kappas[k];
        fits[k] = detail::fit_mcml_fixed_kappa(prob, start, layout, inner, derive_seed(seed, "kappa", k));
    });
    std::size_t best = 0;
    for (std::size_t k = 1; k < fits.size(); ++k)
        if (fits[k]->log_likelihood > fits[best]->log_likelihood) best = k;
    FittedModel out = std::move(*fits[best]);
    for (std::size_t k = 0; k < fits.size(); ++k) out.kappa_log_likelihood.push_back({kappas[k], fits[k]->log_likelihood});
    out.control = ctl;
    out.seed = seed;
    return out;
}

// ---------------------------------------------------------------------------
// Sampling distribution of the MLE
// ---------------------------------------------------------------------------

struct ParamInterval {
    std::string name;
    double estimate = 0.0;
    double lower = 0.0;
    double upper = 0.0;
};

/// Gaussian approximation N(lambda_hat, [-Hessian]^-1) on the optimisation
/// scale.
struct GaussianApprox {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    ParamLayout layout;
    ModelParams base;

    std::vector<std::string> names() const { return layout.names(); }

    Eigen::MatrixXd draw_vectors(std::size_t count, std::uint64_t seed) const {
        const Eigen::LLT<Eigen::MatrixXd> llt(cov);
        const Eigen::MatrixXd l = llt.matrixL();
        Rng rng = make_rng(seed, "ga-draw");
        Eigen::MatrixXd out(mean.size(), static_cast<Eigen::Index>(count));
        for (std::size_t k = 0; k < count; ++k)
            out.col(static_cast<Eigen::Index>(k)) = mean + l * standard_normal(rng, mean.size());
        return out;
    }

    std::vector<ModelParams> draw(std::size_t count, std::uint64_t seed) const {
        const Eigen::MatrixXd v = draw_vectors(count, seed);
        std::vector<ModelParams> out;
        out.reserve(count);
        for (Eigen::Index k = 0; k < v.cols(); ++k) out.push_back(layout.unpack(v.col(k), base));
        return out;
    }

    /// Marginal intervals on the optimisation scale (beta and log/logit
    /// coordinates).
    std::vector<ParamInterval> intervals(double level = 0.95) const {
        const double zq = boost::math::quantile(boost::math::normal(), 0.5 + level / 2.0);
        const auto n = names();
        std::vector<ParamInterval> out;
        for (Eigen::Index j = 0; j < mean.size(); ++j) {
            const double sd = std::sqrt(cov(j, j));
            out.push_back({n[static_cast<std::size_t>(j)], mean(j), mean(j) - zq * sd, mean(j) + zq * sd});
        }
        return out;
    }
};

inline GaussianApprox mle_sampling_distribution(const FittedModel& fit) {
    const Eigen::MatrixXd neg_h = -fit.hessian;
    const Eigen::LLT<Eigen::MatrixXd> llt(neg_h);
    if (llt.info() != Eigen::Success || !neg_h.allFinite())
        fail(ErrorKind::SingularHessian, "Hessian of the log-likelihood is not negative definite");
    GaussianApprox ga;
    ga.mean = fit.lambda_hat;
    ga.cov = llt.solve(Eigen::MatrixXd::Identity(neg_h.rows(), neg_h.cols()));
    ga.cov = 0.5 * (ga.cov + ga.cov.transpose()).eval();
    ga.layout = fit.layout;
    ga.base = fit.params;
    return ga;
}

/// Natural-scale summary: beta as is, covariance parameters back-transformed
/// (exp for log coordinates, expit for xi). `tau2_over_sigma2` replaces nu2.
inline std::vector<ParamInterval> natural_scale(const std::vector<ParamInterval>& v) {
    std::vector<ParamInterval> out;
    for (const auto& p : v) {
        if (p.name.rfind("log_", 0) == 0) {
            std::string name = p.name.substr(4);
            if (name == "nu2") name = "tau2/sigma2";
            out.push_back({name, std::exp(p.estimate), std::exp(p.lower), std::exp(p.upper)});
        } else if (p.name == "logit_xi") {
            out.push_back({"xi", expit(p.estimate), expit(p.lower), expit(p.upper)});
        } else {
            out.push_back(p);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Parametric bootstrap
// ---------------------------------------------------------------------------

struct BootstrapSet {
    Eigen::MatrixXd replicates;  // R_ok x dim, optimisation scale
    std::size_t failures = 0;
    std::vector<std::string> names;
    ParamLayout layout;
    ModelParams base;

    std::vector<ModelParams> params() const {
        std::vector<ModelParams> out;
        for (Eigen::Index r = 0; r < replicates.rows(); ++r)
            out.push_back(layout.unpack(replicates.row(r).transpose(), base));
        return out;
    }

    /// Percentile intervals on the optimisation scale.
    std::vector<ParamInterval> intervals(const Eigen::VectorXd& estimate, double level = 0.95) const {
        std::vector<ParamInterval> out;
        for (Eigen::Index j = 0; j < replicates.cols(); ++j) {
            std::vector<double> col(replicates.rows());
            for (Eigen::Index r = 0; r < replicates.rows(); ++r) col[static_cast<std::size_t>(r)] = replicates(r, j);
            std::sort(col.begin(), col.end());
            out.push_back({names[static_cast<std::size_t>(j)], estimate(j), quantile_sorted(col, 0.5 - level / 2.0),
                           quantile_sorted(col, 0.5 + level / 2.0)});
        }
        return out;
    }
};

/// R simulate-and-refit replicates at the fitted parameters; each refit starts
/// from lambda_hat with the smoothness fixed at the fitted value.
inline BootstrapSet parametric_bootstrap(const FittedModel& fit, const SurveyDataset& ds, const DesignMatrix& design,
                                         std::size_t R, std::uint64_t seed, unsigned threads = 1,
                                         std::optional<McmlControl> control = std::nullopt) {
    require(R >= 1, ErrorKind::InvalidArgument, "bootstrap needs R >= 1");
    McmlControl ctl = control.value_or(fit.control);
    ctl.kappa_candidates = {fit.params.cov.kappa};
    ctl.loglik_draws = 0;
    ctl.threads = 1;
    std::vector<std::optional<Eigen::VectorXd>> rows(R);
    parallel_for(R, threads, [&](std::size_t r) {
        const std::uint64_t s = derive_seed(seed, "bootstrap", r);
        const SurveyDataset sim = simulate_binomial(ds, design, fit.params, s);
        try {
            const FittedModel f = fit_mcml(sim, design, fit.params, ctl, derive_seed(s, "refit"));
            rows[r] = f.lambda_hat;
        } catch (const Error& e) {
            if (e.is_validation()) throw;
        }
    });
    BootstrapSet out;
    out.names = fit.layout.names();
    out.layout = fit.layout;
    out.base = fit.params;
    std::vector<Eigen::VectorXd> ok;
    for (auto& r : rows) {
        if (r) {
            ok.push_back(*r);
        } else {
            ++out.failures;
        }
    }
    if (static_cast<double>(out.failures) > 0.1 * static_cast<double>(R))
        fail(ErrorKind::TooManyFailures,
             "bootstrap: " + std::to_string(out.failures) + " of " + std::to_string(R) + " refits failed");
    out.replicates.resize(static_cast<Eigen::Index>(ok.size()), static_cast<Eigen::Index>(fit.layout.dim()));
    for (std::size_t r = 0; r < ok.size(); ++r) out.replicates.row(static_cast<Eigen::Index>(r)) = ok[r].transpose();
    return out;
}

// ---------------------------------------------------------------------------
// Profile deviance for the space-time interaction
// ---------------------------------------------------------------------------

inline constexpr double kChiSquare1_95 = 3.841458820694124;

struct ProfilePoint {
    double xi = 0.0;
    double log_likelihood = 0.0;
    double deviance = 0.0;
    bool converged = false;
};

struct ProfileResult {
    std::vector<ProfilePoint> points;
    double xi_hat = 0.0;
    double chi2_reference = kChiSquare1_95;
};

/// D(xi) = 2 {max log L_p - log L_p(xi)} over a grid, refitting every other
/// parameter at each fixed xi. The importance-sampling log-likelihood uses
/// common random numbers across grid points.
inline ProfileResult profile_deviance_xi(const SurveyDataset& ds, const DesignMatrix& design, const ModelParams& init,
                                         const std::vector<double>& xi_grid, const McmlControl& control,
                                         std::uint64_t seed) {
    require(!xi_grid.empty(), ErrorKind::InvalidArgument, "empty xi grid");
    for (double xi : xi_grid) require(xi >= 0.0 && xi <= 1.0, ErrorKind::InvalidParam, "xi grid must lie in [0, 1]");
    McmlControl ctl = control;
    ctl.free[static_cast<int>(CovCoord::LogitXi)] = false;
    if (ctl.loglik_draws == 0) ctl.loglik_draws = 2000;
    const McmlProblem prob = McmlProblem::from(ds, design);
    ProfileResult out;
    out.points.resize(xi_grid.size());
    McmlControl inner = ctl;
    inner.threads = 1;
    parallel_for(xi_grid.size(), control.threads, [&](std::size_t k) {
        ModelParams start = init;
        start.cov.xi = xi_grid[k];
        const FittedModel f = fit_mcml(ds, design, start, inner, derive_seed(seed, "profile", k));
        out.points[k].xi = xi_grid[k];
        out.points[k].converged = f.converged;
        out.points[k].log_likelihood = log_likelihood_is(prob, f.params, ctl.loglik_draws, derive_seed(seed, "profile-is"));
    });
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& p : out.points) {
        if (p.log_likelihood > best) {
            best = p.log_likelihood;
            out.xi_hat = p.xi;
        }
    }
    for (auto& p : out.points) p.deviance = 2.0 * (best - p.log_likelihood);
    return out;
}

}  // namespace stprev
