#pragma once

// Conditional distribution of the latent total predictor W given binomial
// data: Laplace mode and a preconditioned Langevin (MALA) sampler.

#include "stprev/covariance.hpp"
#include "stprev/error.hpp"
#include "stprev/numeric.hpp"
#include "stprev/rng.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <optional>

namespace stprev {

/// log [W | y] up to a constant:
///   sum_i {y_i w_i - n_i log(1 + e^w_i)} - (w - mu)' Sigma^-1 (w - mu) / 2.
class LatentTarget {
public:
    LatentTarget(Eigen::VectorXd y, Eigen::VectorXd n, Eigen::VectorXd mu, const Eigen::MatrixXd& sigma,
                 double jitter_scale)
        : y_(std::move(y)), n_(std::move(n)), mu_(std::move(mu)), chol_(cholesky_with_jitter(sigma, jitter_scale)) {
        require(y_.size() == n_.size() && y_.size() == mu_.size() && sigma.rows() == y_.size(),
                ErrorKind::InvalidArgument, "latent target: inconsistent sizes");
    }

    LatentTarget(Eigen::VectorXd y, Eigen::VectorXd n, Eigen::VectorXd mu, JitteredCholesky chol)
        : y_(std::move(y)), n_(std::move(n)), mu_(std::move(mu)), chol_(std::move(chol)) {}

    Eigen::Index size() const { return y_.size(); }
    const Eigen::VectorXd& y() const { return y_; }
    const Eigen::VectorXd& n() const { return n_; }
    const Eigen::VectorXd& mu() const { return mu_; }
    const JitteredCholesky& chol() const { return chol_; }

    Eigen::VectorXd precision_times(const Eigen::VectorXd& x) const { return chol_.llt.solve(x); }

    Eigen::MatrixXd precision() const {
        return chol_.llt.solve(Eigen::MatrixXd::Identity(size(), size()));
    }

    double log_likelihood(const Eigen::VectorXd& w) const {
        double f = 0.0;
        for (Eigen::Index i = 0; i < w.size(); ++i) f += y_(i) * w(i) - n_(i) * log1pexp(w(i));
        return f;
    }

    double log_density(const Eigen::VectorXd& w) const {
        const Eigen::VectorXd r = chol_.llt.matrixL().solve(w - mu_);
        return log_likelihood(w) - 0.5 * r.squaredNorm();
    }

    Eigen::VectorXd gradient(const Eigen::VectorXd& w) const {
        Eigen::VectorXd g(w.size());
        for (Eigen::Index i = 0; i < w.size(); ++i) g(i) = y_(i) - n_(i) * expit(w(i));
        return g - precision_times(w - mu_);
    }

    Eigen::VectorXd binomial_weight(const Eigen::VectorXd& w) const {
        Eigen::VectorXd out(w.size());
        for (Eigen::Index i = 0; i < w.size(); ++i) {
            const double p = expit(w(i));
            out(i) = n_(i) * p * (1.0 - p);
        }
        return out;
    }

private:
    Eigen::VectorXd y_, n_, mu_;
    JitteredCholesky chol_;
};

struct LaplaceResult {
    Eigen::VectorXd mode;
    Eigen::MatrixXd neg_hessian;  // Sigma^-1 + diag(n p (1 - p)) at the mode
    int iterations = 0;
};

/// Newton-Raphson with step halving for the mode of [W | y].
inline LaplaceResult laplace_mode(const LatentTarget& target, double tol = 1e-8, int max_iter = 100,
                                  std::optional<Eigen::VectorXd> start = std::nullopt) {
    const Eigen::MatrixXd q = target.precision();
    Eigen::VectorXd w = start ? *start : target.mu();
    double f = target.log_density(w);
    LaplaceResult res;
    int stalls = 0;
    for (int iter = 0;; ++iter) {
        const Eigen::VectorXd g = target.gradient(w);
        if (g.lpNorm<Eigen::Infinity>() < tol) {
            res.iterations = iter;
            break;
        }
        if (iter >= max_iter)
            fail(ErrorKind::NonConvergence, "Laplace mode: no convergence after " + std::to_string(max_iter) +
                                                " iterations");
        Eigen::MatrixXd h = q;
        h.diagonal() += target.binomial_weight(w);
        const Eigen::VectorXd step = h.llt().solve(g);
        // Newton decrement: scale-free stop when Sigma is nearly singular
        if (g.dot(step) < 1e-18) {
            res.iterations = iter;
            break;
        }
        double t = 1.0;
        bool improved = false;
        for (int k = 0; k < 40; ++k) {
            const Eigen::VectorXd w_new = w + t * step;
            const double f_new = target.log_density(w_new);
            if (std::isfinite(f_new) && f_new >= f - 1e-14 * (1.0 + std::abs(f))) {
                w = w_new;
                stalls = f_new > f ? 0 : stalls + 1;
                f = f_new;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if (improved && stalls >= 3) {
            res.iterations = iter;
            break;
        }
        if (!improved) {
            // Rounding floor: accept if we are within a loose multiple of tol.
            if (g.lpNorm<Eigen::Infinity>() < 1e3 * tol) {
                res.iterations = iter;
                break;
            }
            fail(ErrorKind::NonConvergence, "Laplace mode: step halving exhausted");
        }
    }
    res.mode = std::move(w);
    res.neg_hessian = q;
    res.neg_hessian.diagonal() += target.binomial_weight(res.mode);
    return res;
}

/// Affine standardisation w = w_hat + A z with A = L^-T, where L L' is the
/// negated Hessian at the Laplace mode. z is then roughly N(0, I).
struct Preconditioner {
    Eigen::VectorXd w_hat;
    Eigen::MatrixXd a;       // upper triangular
    Eigen::MatrixXd l;       // lower Cholesky factor of the negated Hessian
    Eigen::VectorXd weight;  // n p (1 - p) at w_hat

    static Preconditioner from_laplace(const LaplaceResult& lap, const LatentTarget& target) {
        Preconditioner pc;
        pc.w_hat = lap.mode;
        const JitteredCholesky ch = cholesky_with_jitter(lap.neg_hessian, lap.neg_hessian.diagonal().mean());
        pc.l = ch.llt.matrixL();
        const auto n = lap.mode.size();
        pc.a = pc.l.transpose().triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(n, n));
        pc.weight = target.binomial_weight(lap.mode);
        return pc;
    }

    Eigen::VectorXd to_w(const Eigen::VectorXd& z) const {
        return w_hat + a.triangularView<Eigen::Upper>() * z;
    }

    Eigen::VectorXd to_z(const Eigen::VectorXd& w) const {
        return l.transpose().triangularView<Eigen::Upper>() * (w - w_hat);
    }
};

/// log density of [W | y] in the standardised coordinate z, with gradient.
/// The target parameters must equal those at which the preconditioner was
/// built; A' Sigma^-1 A = I - A' diag(weight) A then removes every solve
/// against Sigma from the inner loop.
class AnchoredZTarget {
public:
    AnchoredZTarget(const LatentTarget& target, const Preconditioner& pc) : target_(target), pc_(pc) {
        b_ = pc_.a.transpose().triangularView<Eigen::Lower>() * target_.precision_times(pc_.w_hat - target_.mu());
    }

    Eigen::Index size() const { return target_.size(); }

    // Returns log pi(z) (up to a constant), writes grad and w = w(z).
    double eval(const Eigen::VectorXd& z, Eigen::VectorXd& grad, Eigen::VectorXd& w) const {
        const Eigen::VectorXd v = pc_.a.triangularView<Eigen::Upper>() * z;
        w = pc_.w_hat + v;
        Eigen::VectorXd r(v.size());
        double f = 0.0;
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            const double yi = target_.y()(i), ni = target_.n()(i);
            f += yi * w(i) - ni * log1pexp(w(i));
            r(i) = yi - ni * expit(w(i)) + pc_.weight(i) * v(i);
        }
        f += -b_.dot(z) - 0.5 * z.squaredNorm() + 0.5 * v.dot(pc_.weight.cwiseProduct(v));
        grad = pc_.a.transpose().triangularView<Eigen::Lower>() * r - b_ - z;
        return f;
    }

private:
    const LatentTarget& target_;
    const Preconditioner& pc_;
    Eigen::VectorXd b_;
};

/// Same density for any target parameters (used when the covariance moves
/// away from the anchor, e.g. inside the Bayesian sampler).
class GeneralZTarget {
public:
    GeneralZTarget(const LatentTarget& target, const Preconditioner& pc) : target_(target), pc_(pc) {}

    Eigen::Index size() const { return target_.size(); }

    double eval(const Eigen::VectorXd& z, Eigen::VectorXd& grad, Eigen::VectorXd& w) const {
        w = pc_.to_w(z);
        const Eigen::VectorXd resid = w - target_.mu();
        const Eigen::VectorXd half = target_.chol().llt.matrixL().solve(resid);
        const Eigen::VectorXd qr = target_.chol().llt.matrixU().solve(half);
        Eigen::VectorXd g(w.size());
        for (Eigen::Index i = 0; i < w.size(); ++i) g(i) = target_.y()(i) - target_.n()(i) * expit(w(i));
        grad = pc_.a.transpose().triangularView<Eigen::Lower>() * (g - qr);
        return target_.log_likelihood(w) - 0.5 * half.squaredNorm();
    }

private:
    const LatentTarget& target_;
    const Preconditioner& pc_;
};

/// Mean of the Langevin proposal: z + (h/2) grad.
inline Eigen::VectorXd mala_proposal_mean(const Eigen::VectorXd& z, const Eigen::VectorXd& grad, double h) {
    return z + 0.5 * h * grad;
}

/// Chain state in standardised coordinates.
struct MalaChain {
    Eigen::VectorXd z;
    Eigen::VectorXd w;
    Eigen::VectorXd grad;
    double log_density = 0.0;
    double h = 0.1;

    template <class ZTarget>
    void reset(const ZTarget& t, Eigen::VectorXd z0) {
        z = std::move(z0);
        log_density = t.eval(z, grad, w);
    }
};

inline double default_step_size(Eigen::Index n) { return 2.72 * std::pow(static_cast<double>(n), -1.0 / 3.0); }

/// One Metropolis-adjusted Langevin step; returns the acceptance probability
/// (the move itself is accepted at random).
template <class ZTarget>
double mala_step(const ZTarget& t, MalaChain& c, Rng& rng) {
    const Eigen::Index n = c.z.size();
    const double sh = std::sqrt(c.h);
    const Eigen::VectorXd mean_fwd = mala_proposal_mean(c.z, c.grad, c.h);
    const Eigen::VectorXd z_new = mean_fwd + sh * standard_normal(rng, n);
    Eigen::VectorXd grad_new, w_new;
    const double f_new = t.eval(z_new, grad_new, w_new);
    double log_alpha = -std::numeric_limits<double>::infinity();
    if (std::isfinite(f_new) && grad_new.allFinite()) {
        const Eigen::VectorXd mean_bwd = mala_proposal_mean(z_new, grad_new, c.h);
        const double q_fwd = -(z_new - mean_fwd).squaredNorm() / (2.0 * c.h);
        const double q_bwd = -(c.z - mean_bwd).squaredNorm() / (2.0 * c.h);
        log_alpha = f_new - c.log_density + q_bwd - q_fwd;
    }
    const double alpha = std::isnan(log_alpha) ? 0.0 : std::min(1.0, std::exp(log_alpha));
    if (uniform01(rng) < alpha) {
        c.z = z_new;
        c.w = std::move(w_new);
        c.grad = std::move(grad_new);
        c.log_density = f_new;
    }
    return alpha;
}

inline constexpr double kMalaTargetAcceptance = 0.574;

/// Robbins-Monro update of log h towards the target acceptance, gain
/// (t+1)^-0.6.
inline void adapt_step_size(MalaChain& c, double alpha, std::size_t t, double target = kMalaTargetAcceptance) {
    const double gain = std::pow(static_cast<double>(t + 1), -0.6);
    c.h = std::clamp(std::exp(std::log(c.h) + gain * (alpha - target)), 1e-10, 1e3);
}

struct MalaControl {
    std::size_t n_samples = 10000;
    std::size_t burn_in = 2000;
    std::size_t thin = 8;
    std::optional<double> h0;  // default 2.72 N^-1/3
    bool adapt = true;
};

struct MalaResult {
    Eigen::MatrixXd samples;      // N x n_samples, W scale
    double acceptance = 0.0;      // mean acceptance probability after burn-in
    double acceptance_rate = 0.0; // fraction of accepted moves after burn-in
    double h = 0.0;               // frozen step size
};

/// Runs a MALA chain on the standardised latent variable. The step size is
/// adapted during burn-in only and frozen afterwards.
template <class ZTarget>
MalaResult run_mala(const ZTarget& t, const Preconditioner& pc, const MalaControl& ctl, std::uint64_t seed,
                    std::optional<Eigen::VectorXd> z0 = std::nullopt) {
    require(ctl.thin >= 1, ErrorKind::InvalidArgument, "MALA thinning must be >= 1");
    (void)pc;
    Rng rng = make_rng(seed, "mala");
    MalaChain c;
    c.h = ctl.h0.value_or(default_step_size(t.size()));
    c.reset(t, z0 ? *z0 : Eigen::VectorXd::Zero(t.size()));
    for (std::size_t it = 0; it < ctl.burn_in; ++it) {
        const double a = mala_step(t, c, rng);
        if (ctl.adapt) adapt_step_size(c, a, it);
    }
    MalaResult res;
    res.h = c.h;
    res.samples.resize(t.size(), static_cast<Eigen::Index>(ctl.n_samples));
    double acc = 0.0;
    std::size_t moved = 0;
    const std::size_t total = ctl.n_samples * ctl.thin;
    for (std::size_t it = 0; it < total; ++it) {
        const Eigen::VectorXd before = c.z;
        acc += mala_step(t, c, rng);
        if (c.z != before) ++moved;
        if ((it + 1) % ctl.thin == 0) res.samples.col(static_cast<Eigen::Index>(it / ctl.thin)) = c.w;
    }
    res.acceptance = total ? acc / static_cast<double>(total) : 0.0;
    res.acceptance_rate = total ? static_cast<double>(moved) / static_cast<double>(total) : 0.0;
    return res;
}

/// Laplace mode, preconditioner and MALA at fixed parameters.
inline MalaResult mala_sample(const LatentTarget& target, const MalaControl& ctl, std::uint64_t seed,
                              const LaplaceResult* laplace = nullptr) {
    std::optional<LaplaceResult> own;
    if (!laplace) {
        own = laplace_mode(target);
        laplace = &*own;
    }
    const Preconditioner pc = Preconditioner::from_laplace(*laplace, target);
    const AnchoredZTarget zt(target, pc);
    return run_mala(zt, pc, ctl, seed);
}

// ---------------------------------------------------------------------------
// Joint mode in (beta, W)
// ---------------------------------------------------------------------------

struct ProfiledMode {
    Eigen::VectorXd beta;
    Eigen::VectorXd w;
};

/// Maximiser of [y | W] [W; D beta, Sigma] jointly over (beta, W), with beta
/// profiled out: beta(w) = (D' Q D)^-1 D' Q w leaves the projected precision
/// P = Q - Q D (D' Q D)^-1 D' Q on W.
inline ProfiledMode profiled_joint_mode(const Eigen::VectorXd& y, const Eigen::VectorXd& n, const Eigen::MatrixXd& d,
                                        const Eigen::MatrixXd& sigma, double jitter_scale, double tol = 1e-8,
                                        int max_iter = 200) {
    const JitteredCholesky ch = cholesky_with_jitter(sigma, jitter_scale);
    const Eigen::Index m = y.size();
    const Eigen::MatrixXd q = ch.llt.solve(Eigen::MatrixXd::Identity(m, m));
    const Eigen::MatrixXd qd = q * d;
    const Eigen::LDLT<Eigen::MatrixXd> dqd((d.transpose() * qd).eval());
    Eigen::MatrixXd p = q - qd * dqd.solve(qd.transpose());
    p = 0.5 * (p + p.transpose()).eval();

    auto objective = [&](const Eigen::VectorXd& w) {
        double f = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) f += y(i) * w(i) - n(i) * log1pexp(w(i));
        return f - 0.5 * w.dot(p * w);
    };
    Eigen::VectorXd w(m);
    for (Eigen::Index i = 0; i < m; ++i) w(i) = logit((y(i) + 0.5) / (n(i) + 1.0));
    double f = objective(w);
    int stalls = 0;
    for (int iter = 0;; ++iter) {
        Eigen::VectorXd g(m), wt(m);
        for (Eigen::Index i = 0; i < m; ++i) {
            const double pr = expit(w(i));
            g(i) = y(i) - n(i) * pr;
            wt(i) = n(i) * pr * (1.0 - pr);
        }
        g -= p * w;
        if (g.lpNorm<Eigen::Infinity>() < tol) break;
        if (iter >= max_iter) fail(ErrorKind::NonConvergence, "joint (beta, W) mode did not converge");
        Eigen::MatrixXd h = p;
        h.diagonal() += wt;
        const Eigen::VectorXd step = h.ldlt().solve(g);
        if (g.dot(step) < 1e-18) break;
        double t = 1.0;
        bool improved = false;
        for (int k = 0; k < 40; ++k) {
            const Eigen::VectorXd w_new = w + t * step;
            const double f_new = objective(w_new);
            if (std::isfinite(f_new) && f_new >= f - 1e-14 * (1.0 + std::abs(f))) {
                w = w_new;
                stalls = f_new > f ? 0 : stalls + 1;
                f = f_new;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if (!improved || stalls >= 3) break;  // rounding floor
    }
    ProfiledMode out;
    out.beta = dqd.solve(qd.transpose() * w);
    out.w = std::move(w);
    return out;
}

}  // namespace stprev
