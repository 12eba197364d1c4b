#pragma once

// Non-spatial binomial GLMM residuals, empirical and theoretical variograms
// and a least-squares variogram fit used to initialise the covariance.

#include "stprev/covariance.hpp"
#include "stprev/numeric.hpp"
#include "stprev/optim.hpp"
#include "stprev/survey_data.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

namespace stprev {

// ---------------------------------------------------------------------------
// Non-spatial GLMM: logit p_i = d_i'beta + Z_i, Z_i ~ N(0, tau2)
// ---------------------------------------------------------------------------

enum class ResidualEstimator { Mode, Mean };

struct ResidualSet {
    Eigen::VectorXd z_tilde;
    ResidualEstimator estimator = ResidualEstimator::Mode;
    Eigen::VectorXd beta;
    double tau2 = 0.0;
    double log_likelihood = 0.0;  // Laplace approximation at tau2
};

struct GlmmOptions {
    ResidualEstimator estimator = ResidualEstimator::Mode;
    double tol = 1e-9;          // max-norm of the joint gradient
    int max_iter = 100;
    double log_tau2_lo = -12.0;
    double log_tau2_hi = 6.0;
    int quadrature_nodes = 40;  // adaptive Gauss-Hermite for the mean estimator
};

namespace detail {

struct JointMode {
    Eigen::VectorXd beta;
    Eigen::VectorXd z;
    Eigen::VectorXd weight;  // n p (1 - p) at the mode
    double objective = 0.0;  // sum(y eta - n log(1+e^eta)) - sum z^2 / (2 tau2)
};

inline double joint_objective(const Eigen::VectorXd& y, const Eigen::VectorXd& n, const Eigen::VectorXd& eta,
                              const Eigen::VectorXd& z, double tau2) {
    double f = 0.0;
    for (Eigen::Index i = 0; i < eta.size(); ++i) f += y(i) * eta(i) - n(i) * log1pexp(eta(i));
    return f - z.squaredNorm() / (2.0 * tau2);
}

// Newton maximisation of the joint log-density in (beta, z) at fixed tau2. The
// z block is diagonal, so beta is solved through its Schur complement
// D' diag(W / (1 + tau2 W)) D.
inline JointMode glmm_joint_mode(const Eigen::VectorXd& y, const Eigen::VectorXd& n, const Eigen::MatrixXd& d,
                                 double tau2, Eigen::VectorXd beta, Eigen::VectorXd z, const GlmmOptions& opt) {
    const Eigen::Index m = y.size();
    Eigen::VectorXd eta = d * beta + z;
    double f = joint_objective(y, n, eta, z, tau2);
    Eigen::VectorXd p(m), w(m), g(m);
    int stalls = 0;
    for (int iter = 0;; ++iter) {
        for (Eigen::Index i = 0; i < m; ++i) {
            p(i) = expit(eta(i));
            w(i) = n(i) * p(i) * (1.0 - p(i));
            g(i) = y(i) - n(i) * p(i);
        }
        const Eigen::VectorXd g_beta = d.transpose() * g;
        const Eigen::VectorXd g_z = g - z / tau2;
        const double gnorm = std::max(g_beta.lpNorm<Eigen::Infinity>(), g_z.lpNorm<Eigen::Infinity>());
        if (gnorm < opt.tol) break;
        if (eta.cwiseAbs().maxCoeff() > 40.0)
            fail(ErrorKind::Separation, "non-spatial GLMM: linear predictor diverges (complete separation)");
        if (iter >= opt.max_iter)
            fail(ErrorKind::NonConvergence, "non-spatial GLMM: Newton did not converge (gradient " +
                                                std::to_string(gnorm) + ")");
        const Eigen::ArrayXd a = w.array() + 1.0 / tau2;
        const Eigen::ArrayXd schur_w = w.array() / (1.0 + tau2 * w.array());
        const Eigen::MatrixXd s = d.transpose() * schur_w.matrix().asDiagonal() * d;
        const Eigen::VectorXd rhs = g_beta - d.transpose() * (w.array() * g_z.array() / a).matrix();
        Eigen::LDLT<Eigen::MatrixXd> ldlt(s);
        Eigen::VectorXd step_beta = ldlt.solve(rhs);
        if (!step_beta.allFinite()) fail(ErrorKind::Separation, "non-spatial GLMM: singular information for beta");
        Eigen::VectorXd step_z = ((g_z.array() - w.array() * (d * step_beta).array()) / a).matrix();
        if (g_beta.dot(step_beta) + g_z.dot(step_z) < 1e-18) break;
        double t = 1.0;
        bool improved = false;
        for (int h = 0; h < 50; ++h) {
            const Eigen::VectorXd beta_new = beta + t * step_beta;
            const Eigen::VectorXd z_new = z + t * step_z;
            const Eigen::VectorXd eta_new = d * beta_new + z_new;
            const double f_new = joint_objective(y, n, eta_new, z_new, tau2);
            // near the optimum the gain is below the rounding of f
            if (std::isfinite(f_new) && f_new >= f - 1e-14 * (1.0 + std::abs(f))) {
                beta = beta_new;
                z = z_new;
                eta = eta_new;
                stalls = f_new > f ? 0 : stalls + 1;
                f = f_new;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if (!improved || stalls >= 3) break;  // rounding floor  // at machine precision of the optimum
    }
    for (Eigen::Index i = 0; i < m; ++i) {
        p(i) = expit(eta(i));
        w(i) = n(i) * p(i) * (1.0 - p(i));
    }
    return JointMode{std::move(beta), std::move(z), std::move(w), f};
}

}  // namespace detail

/// Posterior mean of Z_i at fixed (beta, tau2) by adaptive Gauss-Hermite
/// quadrature centred at the conditional mode.
inline double glmm_posterior_mean(double y, double n, double offset, double tau2, double mode, int nodes) {
    const QuadratureRule rule = gauss_hermite(nodes);
    auto logf = [&](double z) { return y * (offset + z) - n * log1pexp(offset + z) - z * z / (2.0 * tau2); };
    const double p = expit(offset + mode);
    const double s = 1.0 / std::sqrt(n * p * (1.0 - p) + 1.0 / tau2);
    const double f0 = logf(mode);
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < rule.nodes.size(); ++k) {
        const double x = rule.nodes[k];
        const double z = mode + std::sqrt(2.0) * s * x;
        const double v = rule.weights[k] * std::exp(x * x + logf(z) - f0);
        num += z * v;
        den += v;
    }
    return num / den;
}

/// Fits the non-spatial binomial GLMM by Laplace-approximate maximum
/// likelihood in tau2 (Brent on log tau2), with (beta, Z) at their joint mode.
inline ResidualSet fit_nonspatial_glmm(const Eigen::VectorXd& y, const Eigen::VectorXd& n, const Eigen::MatrixXd& d,
                                       const GlmmOptions& opt = {}) {
    const Eigen::Index m = y.size();
    require(m >= 1 && n.size() == m && d.rows() == m, ErrorKind::InvalidArgument, "GLMM: inconsistent sizes");
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(d);
    require(qr.rank() == d.cols(), ErrorKind::InvalidArgument, "GLMM: design matrix is not of full column rank");

    double log_c = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) log_c += log_binomial_coef(n(i), y(i));

    // Start beta from the empirical logit of the pooled prevalence.
    Eigen::VectorXd beta0 = Eigen::VectorXd::Zero(d.cols());
    beta0(0) = logit((y.sum() + 0.5) / (n.sum() + 1.0));
    Eigen::VectorXd warm_beta = beta0;
    Eigen::VectorXd warm_z = Eigen::VectorXd::Zero(m);

    auto laplace = [&](double log_tau2) {
        const double tau2 = std::exp(log_tau2);
        detail::JointMode jm = detail::glmm_joint_mode(y, n, d, tau2, warm_beta, warm_z, opt);
        warm_beta = jm.beta;
        warm_z = jm.z;
        return jm.objective + log_c - 0.5 * (1.0 + tau2 * jm.weight.array()).log().sum();
    };
    const auto [best_log_tau2, neg_ll] =
        minimize_brent([&](double lt) { return -laplace(lt); }, opt.log_tau2_lo, opt.log_tau2_hi, 30);
    (void)neg_ll;

    ResidualSet out;
    out.tau2 = std::exp(best_log_tau2);
    const detail::JointMode jm = detail::glmm_joint_mode(y, n, d, out.tau2, warm_beta, warm_z, opt);
    out.beta = jm.beta;
    // Unpenalised fixed effects running off to |logit| > 15 signal separation.
    require((d * jm.beta).cwiseAbs().maxCoeff() < 15.0, ErrorKind::Separation,
            "non-spatial GLMM: fixed effects diverge (complete separation)");
    out.log_likelihood = jm.objective + log_c - 0.5 * (1.0 + out.tau2 * jm.weight.array()).log().sum();
    out.estimator = opt.estimator;
    if (opt.estimator == ResidualEstimator::Mode) {
        out.z_tilde = jm.z;
    } else {
        const Eigen::VectorXd offset = d * jm.beta;
        out.z_tilde.resize(m);
        for (Eigen::Index i = 0; i < m; ++i)
            out.z_tilde(i) = glmm_posterior_mean(y(i), n(i), offset(i), out.tau2, jm.z(i), opt.quadrature_nodes);
    }
    require(out.z_tilde.allFinite() && out.beta.allFinite(), ErrorKind::NonConvergence, "GLMM: non-finite estimates");
    return out;
}

inline ResidualSet fit_nonspatial_glmm(const SurveyDataset& ds, const DesignMatrix& d, const GlmmOptions& opt = {}) {
    return fit_nonspatial_glmm(ds.positives(), ds.tested(), d.rows, opt);
}

/// Gradient of the joint log-density in (beta, z) at fixed tau2.
inline Eigen::VectorXd glmm_joint_gradient(const Eigen::VectorXd& y, const Eigen::VectorXd& n,
                                           const Eigen::MatrixXd& d, const Eigen::VectorXd& beta,
                                           const Eigen::VectorXd& z, double tau2) {
    const Eigen::VectorXd eta = d * beta + z;
    Eigen::VectorXd g(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) g(i) = y(i) - n(i) * expit(eta(i));
    Eigen::VectorXd out(beta.size() + z.size());
    out << d.transpose() * g, g - z / tau2;
    return out;
}

// ---------------------------------------------------------------------------
// Variograms
// ---------------------------------------------------------------------------

struct VariogramBin {
    double u_lo = 0.0, u_hi = 0.0;
    double v_lo = 0.0, v_hi = 0.0;
    double u_mid = 0.0, v_mid = 0.0;    // interval midpoints
    double u_mean = 0.0, v_mean = 0.0;  // average lag of the pairs in the bin
    std::size_t count = 0;
    double gamma = 0.0;
};

struct VariogramTable {
    std::vector<VariogramBin> bins;

    std::size_t size() const { return bins.size(); }

    std::string to_csv() const {
        std::ostringstream os;
        os << "u_mid,v_mid,count,gamma\n";
        for (const auto& b : bins)
            os << csv::format_double(b.u_mid) << ',' << csv::format_double(b.v_mid) << ',' << b.count << ','
               << csv::format_double(b.gamma) << '\n';
        return os.str();
    }
};

/// Assignment of every unordered pair (i < j) to a (u, v) bin by half-open
/// intervals [lo, hi). Depends only on coordinates, so it is computed once and
/// reused across permutation or simulation replicates.
class PairBinning {
public:
    PairBinning(std::span<const SpaceTimePoint> coords, std::vector<double> u_edges, std::vector<double> v_edges)
        : u_edges_(std::move(u_edges)), v_edges_(std::move(v_edges)), n_(coords.size()) {
        check_edges(u_edges_, "spatial");
        check_edges(v_edges_, "temporal");
        const std::size_t nu = u_edges_.size() - 1;
        const std::size_t nv = v_edges_.size() - 1;
        count_.assign(nu * nv, 0);
        u_sum_.assign(nu * nv, 0.0);
        v_sum_.assign(nu * nv, 0.0);
        for (std::size_t i = 0; i < coords.size(); ++i) {
            for (std::size_t j = i + 1; j < coords.size(); ++j) {
                const double dx = coords[i].x - coords[j].x;
                const double dy = coords[i].y - coords[j].y;
                const double u = std::sqrt(dx * dx + dy * dy);
                const double v = std::abs(coords[i].t - coords[j].t);
                const int ku = locate(u_edges_, u);
                const int kv = locate(v_edges_, v);
                if (ku < 0 || kv < 0) continue;
                const auto b = static_cast<std::uint32_t>(ku * static_cast<int>(nv) + kv);
                pair_i_.push_back(static_cast<std::uint32_t>(i));
                pair_j_.push_back(static_cast<std::uint32_t>(j));
                pair_bin_.push_back(b);
                ++count_[b];
                u_sum_[b] += u;
                v_sum_[b] += v;
            }
        }
        for (std::size_t b = 0; b < count_.size(); ++b)
            if (count_[b] > 0) nonempty_.push_back(b);
        require(!nonempty_.empty(), ErrorKind::EmptyBins, "no pair of records falls inside the variogram bins");
    }

    std::size_t n_points() const { return n_; }
    std::size_t n_pairs() const { return pair_bin_.size(); }
    const std::vector<double>& u_edges() const { return u_edges_; }
    const std::vector<double>& v_edges() const { return v_edges_; }

    /// Empirical variogram of `z` (indexed like the coordinates). Pairs are
    /// accumulated in (i, j) lexicographic order.
    VariogramTable compute(const Eigen::VectorXd& z) const {
        require(z.size() == static_cast<Eigen::Index>(n_), ErrorKind::InvalidArgument,
                "variogram: value count differs from coordinate count");
        std::vector<double> sums(count_.size(), 0.0);
        for (std::size_t k = 0; k < pair_bin_.size(); ++k) {
            const double diff = z(pair_i_[k]) - z(pair_j_[k]);
            sums[pair_bin_[k]] += diff * diff;
        }
        return make_table(sums);
    }

    /// Same as compute(z(perm)) without materialising the permuted vector.
    VariogramTable compute_permuted(const Eigen::VectorXd& z, const std::vector<std::size_t>& perm) const {
        std::vector<double> sums(count_.size(), 0.0);
        for (std::size_t k = 0; k < pair_bin_.size(); ++k) {
            const double diff = z(static_cast<Eigen::Index>(perm[pair_i_[k]])) -
                                z(static_cast<Eigen::Index>(perm[pair_j_[k]]));
            sums[pair_bin_[k]] += diff * diff;
        }
        return make_table(sums);
    }

private:
    static void check_edges(const std::vector<double>& e, const char* what) {
        require(e.size() >= 2, ErrorKind::InvalidArgument, std::string(what) + " bin edges need at least two values");
        for (std::size_t k = 1; k < e.size(); ++k)
            require(e[k] > e[k - 1], ErrorKind::InvalidArgument,
                    std::string(what) + " bin edges must be strictly increasing");
    }

    static int locate(const std::vector<double>& e, double x) {
        if (x < e.front() || x >= e.back()) return -1;
        const auto it = std::upper_bound(e.begin(), e.end(), x);
        return static_cast<int>(it - e.begin()) - 1;
    }

    VariogramTable make_table(const std::vector<double>& sums) const {
        const std::size_t nv = v_edges_.size() - 1;
        VariogramTable t;
        t.bins.reserve(nonempty_.size());
        for (std::size_t b : nonempty_) {
            const std::size_t ku = b / nv;
            const std::size_t kv = b % nv;
            VariogramBin bin;
            bin.u_lo = u_edges_[ku];
            bin.u_hi = u_edges_[ku + 1];
            bin.v_lo = v_edges_[kv];
            bin.v_hi = v_edges_[kv + 1];
            bin.u_mid = 0.5 * (bin.u_lo + bin.u_hi);
            bin.v_mid = 0.5 * (bin.v_lo + bin.v_hi);
            bin.count = count_[b];
            bin.u_mean = u_sum_[b] / static_cast<double>(count_[b]);
            bin.v_mean = v_sum_[b] / static_cast<double>(count_[b]);
            bin.gamma = sums[b] / (2.0 * static_cast<double>(count_[b]));
            t.bins.push_back(bin);
        }
        return t;
    }

    std::vector<double> u_edges_, v_edges_;
    std::size_t n_ = 0;
    std::vector<std::uint32_t> pair_i_, pair_j_, pair_bin_;
    std::vector<std::size_t> count_;
    std::vector<double> u_sum_, v_sum_;
    std::vector<std::size_t> nonempty_;
};

inline VariogramTable empirical_variogram(const Eigen::VectorXd& z, std::span<const SpaceTimePoint> coords,
                                          const std::vector<double>& u_edges, const std::vector<double>& v_edges) {
    return PairBinning(coords, u_edges, v_edges).compute(z);
}

inline VariogramTable empirical_variogram(const ResidualSet& r, std::span<const SpaceTimePoint> coords,
                                          const std::vector<double>& u_edges, const std::vector<double>& v_edges) {
    return empirical_variogram(r.z_tilde, coords, u_edges, v_edges);
}

/// 15 (by default) equal-width spatial bins up to half the largest pairwise
/// distance.
inline std::vector<double> default_spatial_edges(std::span<const SpaceTimePoint> coords, int n_bins = 15) {
    double umax = 0.0;
    for (std::size_t i = 0; i < coords.size(); ++i)
        for (std::size_t j = i + 1; j < coords.size(); ++j)
            umax = std::max(umax, std::hypot(coords[i].x - coords[j].x, coords[i].y - coords[j].y));
    require(umax > 0.0, ErrorKind::InvalidArgument, "need at least two distinct locations");
    std::vector<double> e;
    for (int k = 0; k <= n_bins; ++k) e.push_back(0.5 * umax * k / n_bins);
    return e;
}

/// Temporal bins: one per distinct time lag when there are at most
/// `max_distinct` of them (edges halfway between consecutive lags), otherwise
/// `n_bins` equal-width bins.
inline std::vector<double> default_temporal_edges(std::span<const SpaceTimePoint> coords, std::size_t max_distinct = 10,
                                                  int n_bins = 4) {
    std::vector<double> times;
    for (const auto& c : coords) times.push_back(c.t);
    std::sort(times.begin(), times.end());
    times.erase(std::unique(times.begin(), times.end()), times.end());
    std::vector<double> lags{0.0};
    for (std::size_t i = 0; i < times.size(); ++i)
        for (std::size_t j = i + 1; j < times.size(); ++j) lags.push_back(times[j] - times[i]);
    std::sort(lags.begin(), lags.end());
    lags.erase(std::unique(lags.begin(), lags.end()), lags.end());
    if (lags.size() == 1) return {0.0, 1.0};
    std::vector<double> e{0.0};
    if (lags.size() <= max_distinct) {
        for (std::size_t k = 1; k < lags.size(); ++k) e.push_back(0.5 * (lags[k - 1] + lags[k]));
        e.push_back(lags.back() + 0.5 * (lags.back() - lags[lags.size() - 2]));
        return e;
    }
    const double top = lags.back() * (1.0 + 1e-9) + 1e-12;
    for (int k = 1; k <= n_bins; ++k) e.push_back(top * k / n_bins);
    return e;
}

inline double theoretical_variogram(double u, double v, const CorrelationParams& p) {
    p.validate();
    return p.tau2 + p.sigma2 * (1.0 - gneiting(u, v, p));
}

// ---------------------------------------------------------------------------
// Least-squares variogram fit
// ---------------------------------------------------------------------------

struct Interval {
    double lo = 0.0;
    double hi = 1.0;
};

struct VariogramFitOptions {
    double kappa = 0.5;
    bool weighted = true;     // weights |n(u,v)|
    bool fit_psi = true;      // ignored (psi fixed) when every pair has the same time lag
    bool fit_delta = false;
    bool fit_xi = false;
    double psi_fixed = 1.0;
    double delta_fixed = 0.0;
    double xi_fixed = 0.0;
    std::optional<Interval> sigma2, tau2, phi, psi, delta, xi;  // defaults from the table
};

struct VariogramFit {
    CorrelationParams params;
    double objective = 0.0;
};

namespace detail {

inline double variogram_sse(const VariogramTable& t, const CorrelationParams& p, bool weighted) {
    double f = 0.0;
    for (const auto& b : t.bins) {
        const double r = b.gamma - (p.tau2 + p.sigma2 * (1.0 - gneiting(b.u_mean, b.v_mean, p)));
        f += (weighted ? static_cast<double>(b.count) : 1.0) * r * r;
    }
    return f;
}

}  // namespace detail

/// Least-squares objective of a parameter set against a table (theoretical
/// ordinates at the average pair lags of each bin).
inline double variogram_objective(const VariogramTable& t, const CorrelationParams& p, bool weighted = true) {
    return detail::variogram_sse(t, p, weighted);
}

/// Bounded minimiser of sum_k w_k (gamma_k - gamma(u_k, v_k))^2 over
/// (sigma2, tau2, phi[, psi, delta, xi]). Each parameter lives in an interval
/// and is optimised through a logistic map onto it.
inline VariogramFit ls_variogram_fit(const VariogramTable& t, const VariogramFitOptions& opt = {}) {
    require(!t.bins.empty(), ErrorKind::InvalidArgument, "variogram fit needs a non-empty table");
    double gmax = 0.0, umax = 0.0, vmax = 0.0, vmin = std::numeric_limits<double>::infinity();
    for (const auto& b : t.bins) {
        gmax = std::max(gmax, b.gamma);
        umax = std::max(umax, b.u_mean);
        vmax = std::max(vmax, b.v_mean);
        vmin = std::min(vmin, b.v_mean);
    }
    gmax = std::max(gmax, 1e-6);
    umax = std::max(umax, 1e-9);
    const bool fit_psi = opt.fit_psi && vmax > vmin;

    struct Slot {
        int which;  // 0 sigma2, 1 tau2, 2 phi, 3 psi, 4 delta, 5 xi
        Interval box;
    };
    std::vector<Slot> slots{{0, opt.sigma2.value_or(Interval{1e-6 * gmax, 5.0 * gmax})},
                            {1, opt.tau2.value_or(Interval{0.0, 5.0 * gmax})},
                            {2, opt.phi.value_or(Interval{1e-3 * umax, 10.0 * umax})}};
    if (fit_psi) slots.push_back({3, opt.psi.value_or(Interval{1e-2 * std::max(vmax, 1e-6), 10.0 * std::max(vmax, 1.0)})});
    if (opt.fit_delta) slots.push_back({4, opt.delta.value_or(Interval{0.0, 5.0})});
    if (opt.fit_xi) slots.push_back({5, opt.xi.value_or(Interval{0.0, 1.0})});
    for (const auto& s : slots)
        require(s.box.hi > s.box.lo, ErrorKind::InvalidParam, "variogram fit: empty parameter interval");
    require(t.bins.size() >= slots.size(), ErrorKind::InvalidArgument,
            "variogram fit: fewer non-empty bins than free parameters");

    const auto k = static_cast<Eigen::Index>(slots.size());
    auto unpack = [&](const Eigen::VectorXd& z) {
        CorrelationParams p;
        p.kappa = opt.kappa;
        p.psi = opt.psi_fixed;
        p.delta = opt.delta_fixed;
        p.xi = opt.xi_fixed;
        for (Eigen::Index j = 0; j < k; ++j) {
            const auto& s = slots[static_cast<std::size_t>(j)];
            const double v = s.box.lo + (s.box.hi - s.box.lo) * expit(z(j));
            switch (s.which) {
            case 0: p.sigma2 = v; break;
            case 1: p.tau2 = v; break;
            case 2: p.phi = v; break;
            case 3: p.psi = v; break;
            case 4: p.delta = v; break;
            default: p.xi = v; break;
            }
        }
        return p;
    };
    auto pack = [&](const CorrelationParams& p) {
        Eigen::VectorXd z(k);
        for (Eigen::Index j = 0; j < k; ++j) {
            const auto& s = slots[static_cast<std::size_t>(j)];
            const double vals[] = {p.sigma2, p.tau2, p.phi, p.psi, p.delta, p.xi};
            const double f = std::clamp((vals[s.which] - s.box.lo) / (s.box.hi - s.box.lo), 1e-6, 1.0 - 1e-6);
            z(j) = logit(f);
        }
        return z;
    };
    auto fg = [&](const Eigen::VectorXd& z, Eigen::VectorXd* grad) {
        const CorrelationParams p = unpack(z);
        double f = 0.0;
        Eigen::VectorXd gp = Eigen::VectorXd::Zero(6);  // d f / d natural parameter
        for (const auto& b : t.bins) {
            const CorrelationGradient cg = gneiting_with_gradient(b.u_mean, b.v_mean, p);
            const double w = opt.weighted ? static_cast<double>(b.count) : 1.0;
            const double r = b.gamma - (p.tau2 + p.sigma2 * (1.0 - cg.rho));
            f += w * r * r;
            // d gamma / d parameter
            const double dg[] = {1.0 - cg.rho, 1.0, -p.sigma2 * cg.d_log_phi / p.phi, -p.sigma2 * cg.d_log_psi / p.psi,
                                 -p.sigma2 * cg.d_delta, -p.sigma2 * cg.d_xi};
            for (int q = 0; q < 6; ++q) gp(q) += -2.0 * w * r * dg[q];
        }
        if (grad) {
            grad->resize(k);
            for (Eigen::Index j = 0; j < k; ++j) {
                const auto& s = slots[static_cast<std::size_t>(j)];
                const double e = expit(z(j));
                (*grad)(j) = gp(s.which) * (s.box.hi - s.box.lo) * e * (1.0 - e);
            }
        }
        return f;
    };

    double gmin = gmax;
    for (const auto& b : t.bins) gmin = std::min(gmin, b.gamma);
    std::vector<CorrelationParams> starts;
    for (double phi_frac : {0.1, 0.3, 1.0}) {
        for (double psi_frac : {0.5, 2.0}) {
            CorrelationParams s;
            s.kappa = opt.kappa;
            s.tau2 = 0.5 * gmin;
            s.sigma2 = std::max(gmax - s.tau2, 1e-3 * gmax);
            s.phi = phi_frac * umax;
            s.psi = fit_psi ? psi_frac * std::max(vmax, 1e-3) : opt.psi_fixed;
            s.delta = opt.fit_delta ? 0.5 : opt.delta_fixed;
            s.xi = opt.fit_xi ? 0.5 : opt.xi_fixed;
            starts.push_back(s);
            if (!fit_psi) break;
        }
    }
    BfgsOptions bo;
    bo.max_iter = 500;
    bo.grad_tol = 1e-12 * std::max(1.0, gmax * gmax);
    bo.max_step = 5.0;
    VariogramFit best;
    best.objective = std::numeric_limits<double>::infinity();
    for (const auto& s : starts) {
        OptimResult r = minimize_bfgs(fg, pack(s), bo);
        if (r.f < best.objective) {
            best.objective = r.f;
            best.params = unpack(r.x);
        }
    }
    if (!std::isfinite(best.objective)) fail(ErrorKind::OptimFailed, "variogram fit found no finite objective");
    return best;
}

}  // namespace stprev
