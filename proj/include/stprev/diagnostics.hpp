#pragma once

// Monte Carlo variogram diagnostics: a permutation test of residual
// independence and a simulation test of compatibility with a fitted
// covariance model.

#include "stprev/exploratory.hpp"
#include "stprev/model.hpp"
#include "stprev/parallel.hpp"

#include <numeric>
#include <random>

namespace stprev {

struct EnvelopeResult {
    VariogramTable observed;     // bins and observed gamma
    std::vector<double> lower95;
    std::vector<double> upper95;
    std::vector<double> null_mean;
    std::vector<bool> reject;    // observed outside [lower95, upper95]
    std::size_t B = 0;
    // Envelope-wide statistic sum_k n_k (gamma_k - null_mean_k)^2 and its
    // Monte Carlo p-value.
    double global_statistic = 0.0;
    double global_p_value = 1.0;

    std::string plot_csv() const {
        std::ostringstream os;
        os << "u_mid,v_mid,obs,lo,hi\n";
        for (std::size_t k = 0; k < observed.bins.size(); ++k)
            os << csv::format_double(observed.bins[k].u_mid) << ',' << csv::format_double(observed.bins[k].v_mid) << ','
               << csv::format_double(observed.bins[k].gamma) << ',' << csv::format_double(lower95[k]) << ','
               << csv::format_double(upper95[k]) << '\n';
        return os.str();
    }
};

enum class GofMode { Plugin, BayesianAveraged };

struct GofResult {
    double t_observed = 0.0;
    std::vector<double> t_null;
    double p_value = 1.0;
    GofMode mode = GofMode::Plugin;
    std::size_t dropped = 0;
};

/// Fraction of null statistics strictly above the observed one.
inline double exceedance_p_value(const std::vector<double>& t_null, double t_obs) {
    if (t_null.empty()) return 1.0;
    std::size_t k = 0;
    for (double t : t_null)
        if (t > t_obs) ++k;
    return static_cast<double>(k) / static_cast<double>(t_null.size());
}

namespace detail {

// Per-bin percentile envelope from replicate tables that share the bins of
// `observed`, plus the global statistic.
inline EnvelopeResult make_envelope(const VariogramTable& observed, const std::vector<VariogramTable>& reps) {
    const std::size_t k = observed.bins.size();
    EnvelopeResult e;
    e.observed = observed;
    e.B = reps.size();
    e.lower95.resize(k);
    e.upper95.resize(k);
    e.null_mean.assign(k, 0.0);
    e.reject.resize(k);
    std::vector<double> col(reps.size());
    for (std::size_t b = 0; b < k; ++b) {
        for (std::size_t r = 0; r < reps.size(); ++r) col[r] = reps[r].bins[b].gamma;
        double s = 0.0;
        for (double v : col) s += v;
        e.null_mean[b] = s / static_cast<double>(col.size());
        std::sort(col.begin(), col.end());
        e.lower95[b] = quantile_sorted(col, 0.025);
        e.upper95[b] = quantile_sorted(col, 0.975);
        e.reject[b] = observed.bins[b].gamma < e.lower95[b] || observed.bins[b].gamma > e.upper95[b];
    }
    auto stat = [&](const VariogramTable& t) {
        double s = 0.0;
        for (std::size_t b = 0; b < k; ++b) {
            const double d = t.bins[b].gamma - e.null_mean[b];
            s += static_cast<double>(t.bins[b].count) * d * d;
        }
        return s;
    };
    e.global_statistic = stat(observed);
    std::vector<double> null_stats;
    null_stats.reserve(reps.size());
    for (const auto& r : reps) null_stats.push_back(stat(r));
    e.global_p_value = exceedance_p_value(null_stats, e.global_statistic);
    return e;
}

}  // namespace detail

/// Uniform random permutation of 0..n-1 (Fisher-Yates).
inline std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(perm[i - 1], perm[pick(rng)]);
    }
    return perm;
}

/// Envelope of the empirical variogram under random reassignment of the
/// residuals to the fixed space-time locations.
inline EnvelopeResult permutation_independence_test(const Eigen::VectorXd& residuals,
                                                    std::span<const SpaceTimePoint> coords,
                                                    const std::vector<double>& u_edges,
                                                    const std::vector<double>& v_edges, std::size_t B,
                                                    std::uint64_t seed, unsigned threads = 1) {
    require(B >= 100, ErrorKind::InvalidArgument, "permutation test needs B >= 100");
    const PairBinning bins(coords, u_edges, v_edges);
    const VariogramTable observed = bins.compute(residuals);
    std::vector<VariogramTable> reps(B);
    parallel_for(B, threads, [&](std::size_t b) {
        Rng rng = make_rng(seed, "permutation", b);
        reps[b] = bins.compute_permuted(residuals, random_permutation(residuals.size(), rng));
    });
    return detail::make_envelope(observed, reps);
}

inline EnvelopeResult permutation_independence_test(const ResidualSet& r, std::span<const SpaceTimePoint> coords,
                                                    const std::vector<double>& u_edges,
                                                    const std::vector<double>& v_edges, std::size_t B,
                                                    std::uint64_t seed, unsigned threads = 1) {
    return permutation_independence_test(r.z_tilde, coords, u_edges, v_edges, B, seed, threads);
}

// ---------------------------------------------------------------------------
// Test statistic T
// ---------------------------------------------------------------------------

/// Theoretical ordinates of `p` at the bins (average pair lags).
inline std::vector<double> theoretical_ordinates(const VariogramTable& t, const CorrelationParams& p) {
    std::vector<double> g;
    g.reserve(t.bins.size());
    for (const auto& b : t.bins) g.push_back(theoretical_variogram(b.u_mean, b.v_mean, p));
    return g;
}

inline double statistic_from_ordinates(const VariogramTable& t, const std::vector<double>& gamma) {
    double s = 0.0;
    for (std::size_t k = 0; k < t.bins.size(); ++k) {
        const double d = t.bins[k].gamma - gamma[k];
        s += static_cast<double>(t.bins[k].count) * d * d;
    }
    return s;
}

/// T = sum_k |n_k| (gamma_tilde_k - gamma(u_k, v_k; theta))^2.
inline double test_statistic_T(const VariogramTable& t, const CorrelationParams& p) {
    require(!t.bins.empty(), ErrorKind::InvalidParam, "test statistic needs a non-empty table");
    return statistic_from_ordinates(t, theoretical_ordinates(t, p));
}

/// T averaged over posterior draws of the covariance parameters.
inline double test_statistic_T(const VariogramTable& t, std::span<const CorrelationParams> draws) {
    require(!t.bins.empty(), ErrorKind::InvalidParam, "test statistic needs a non-empty table");
    require(!draws.empty(), ErrorKind::InvalidParam, "test statistic needs at least one parameter draw");
    double s = 0.0;
    for (const auto& p : draws) s += test_statistic_T(t, p);
    return s / static_cast<double>(draws.size());
}

// ---------------------------------------------------------------------------
// Simulation-based goodness of fit
// ---------------------------------------------------------------------------

struct GofOptions {
    GlmmOptions glmm;
    double max_dropped_fraction = 0.05;
    unsigned threads = 1;
};

struct GofOutput {
    EnvelopeResult envelope;
    GofResult gof;
};

/// Simulation test of a fitted covariance model. `params` holds one element
/// (plug-in estimate) or posterior draws (Bayesian mode: every replicate is
/// simulated at a freshly drawn element, and T is averaged over all of them).
/// `observed` overrides the residuals of `ds` when given.
inline GofOutput gof_simulation_test(const SurveyDataset& ds, const DesignMatrix& design,
                                     std::span<const ModelParams> params, GofMode mode,
                                     const std::vector<double>& u_edges, const std::vector<double>& v_edges,
                                     std::size_t B, std::uint64_t seed, const GofOptions& opt = {},
                                     const std::optional<VariogramTable>& observed = std::nullopt) {
    require(B >= 100, ErrorKind::InvalidArgument, "goodness-of-fit test needs B >= 100");
    require(!params.empty(), ErrorKind::InvalidArgument, "goodness-of-fit test needs parameters");
    require(mode == GofMode::BayesianAveraged || params.size() == 1, ErrorKind::ModeMismatch,
            "plug-in goodness-of-fit takes exactly one parameter set");
    const auto coords = ds.coords();
    const PairBinning bins(coords, u_edges, v_edges);
    const VariogramTable obs = observed ? *observed : bins.compute(fit_nonspatial_glmm(ds, design, opt.glmm).z_tilde);
    require(obs.bins.size() == bins.compute(Eigen::VectorXd::Zero(ds.size())).bins.size(), ErrorKind::InvalidArgument,
            "observed table does not match the bins");

    std::vector<std::vector<double>> ordinates;
    for (const auto& p : params) ordinates.push_back(theoretical_ordinates(obs, p.cov));
    auto statistic = [&](const VariogramTable& t) {
        double s = 0.0;
        for (const auto& g : ordinates) s += statistic_from_ordinates(t, g);
        return s / static_cast<double>(ordinates.size());
    };

    // Plug-in: one covariance factor shared by every replicate.
    const LagMatrices lags = pairwise_lags(coords);
    std::optional<JitteredCholesky> shared;
    if (mode == GofMode::Plugin) {
        const auto& c = params[0].cov;
        shared = cholesky_with_jitter(covariance_matrix(lags, c), c.sigma2 + c.tau2);
    }
    const auto n = static_cast<Eigen::Index>(ds.size());
    std::vector<std::optional<VariogramTable>> reps(B);
    parallel_for(B, opt.threads, [&](std::size_t b) {
        Rng rng = make_rng(seed, "gof", b);
        std::size_t which = 0;
        if (mode == GofMode::BayesianAveraged) {
            std::uniform_int_distribution<std::size_t> pick(0, params.size() - 1);
            which = pick(rng);
        }
        const ModelParams& m = params[which];
        Eigen::VectorXd w;
        if (shared) {
            w = shared->llt.matrixL() * standard_normal(rng, n);
        } else {
            const auto chol = cholesky_with_jitter(covariance_matrix(lags, m.cov), m.cov.sigma2 + m.cov.tau2);
            w = chol.llt.matrixL() * standard_normal(rng, n);
        }
        w += design.rows * m.beta;
        const SurveyDataset sim = resample_binomial(ds, w, derive_seed(seed, "gof-binomial", b));
        try {
            reps[b] = bins.compute(fit_nonspatial_glmm(sim, design, opt.glmm).z_tilde);
        } catch (const Error& e) {
            if (e.is_validation()) throw;
        }
    });

    std::vector<VariogramTable> kept;
    GofOutput out;
    for (auto& r : reps) {
        if (r) {
            kept.push_back(std::move(*r));
        } else {
            ++out.gof.dropped;
        }
    }
    if (static_cast<double>(out.gof.dropped) > opt.max_dropped_fraction * static_cast<double>(B))
        fail(ErrorKind::TooManyFailures, "goodness-of-fit: " + std::to_string(out.gof.dropped) + " of " +
                                             std::to_string(B) + " replicates failed to refit");
    out.envelope = detail::make_envelope(obs, kept);
    out.gof.mode = mode;
    out.gof.t_observed = statistic(obs);
    for (const auto& r : kept) out.gof.t_null.push_back(statistic(r));
    out.gof.p_value = exceedance_p_value(out.gof.t_null, out.gof.t_observed);
    return out;
}

}  // namespace stprev
