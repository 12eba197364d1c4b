#pragma once

// Predictive simulation of prevalence surfaces: W | y by MALA, then the
// latent surface S* | W from its Gaussian conditional, jointly over the
// cells of each time slice, under one of four treatments of parameter
// uncertainty.

#include "stprev/bayes.hpp"
#include "stprev/mcml.hpp"

#include <map>
#include <string>
#include <vector>

namespace stprev {

enum class UncertaintyMode { Plugin, GaussianApprox, Bootstrap, Bayesian };

inline std::string to_string(UncertaintyMode m) {
    switch (m) {
    case UncertaintyMode::GaussianApprox: return "gaussian_approx";
    case UncertaintyMode::Bootstrap: return "bootstrap";
    case UncertaintyMode::Bayesian: return "bayesian";
    case UncertaintyMode::Plugin: break;
    }
    return "plugin";
}

inline UncertaintyMode uncertainty_mode_from_string(const std::string& s) {
    if (s == "plugin") return UncertaintyMode::Plugin;
    if (s == "gaussian_approx" || s == "ga") return UncertaintyMode::GaussianApprox;
    if (s == "bootstrap") return UncertaintyMode::Bootstrap;
    if (s == "bayesian") return UncertaintyMode::Bayesian;
    fail(ErrorKind::InvalidArgument, "unknown uncertainty mode '" + s + "'");
}

/// Parameter source for prediction; the pointer matching `tag` must be set.
struct ParamUncertainty {
    UncertaintyMode tag = UncertaintyMode::Plugin;
    const FittedModel* fit = nullptr;        // plugin, gaussian_approx, bootstrap (for kappa etc.)
    const BootstrapSet* bootstrap = nullptr;
    const PosteriorDraws* posterior = nullptr;

    void validate() const {
        switch (tag) {
        case UncertaintyMode::Plugin:
        case UncertaintyMode::GaussianApprox:
            require(fit != nullptr, ErrorKind::ModeMismatch, to_string(tag) + " prediction needs a fitted model");
            break;
        case UncertaintyMode::Bootstrap:
            require(bootstrap != nullptr && bootstrap->replicates.rows() > 0, ErrorKind::ModeMismatch,
                    "bootstrap prediction needs a non-empty bootstrap set");
            break;
        case UncertaintyMode::Bayesian:
            require(posterior != nullptr && posterior->size() > 0, ErrorKind::ModeMismatch,
                    "bayesian prediction needs posterior draws");
            require(posterior->latent.cols() == static_cast<Eigen::Index>(posterior->size()), ErrorKind::ModeMismatch,
                    "bayesian prediction needs stored latent draws");
            break;
        }
    }
};

struct PredictionControl {
    std::size_t B_pred = 1000;
    MalaControl plugin_chain{0, 2000, 10, std::nullopt, true};  // n_samples set to B_pred
    std::size_t refresh_burn_in = 200;   // fresh chain per parameter draw
    double storage_budget = 5e7;         // cells x times x B_pred kept as raw draws
    std::map<std::string, double> fixed_covariates;  // e.g. standardised ages on the grid
    unsigned threads = 1;
};

inline constexpr int kSketchLevels = 101;

struct TimeSlice {
    double time = 0.0;
    Eigen::VectorXd mean;    // over active cells
    Eigen::VectorXd sd;
    Eigen::MatrixXd sketch;  // active cells x 101 quantiles at 0, 0.01, ..., 1
    Eigen::MatrixXd draws;   // active cells x B_pred prevalence draws (may be empty)
};

struct SurfaceBundle {
    PredictionGrid grid;
    std::vector<std::size_t> cells;  // active cell indices into grid.cell_centers
    std::vector<TimeSlice> slices;
    UncertaintyMode mode = UncertaintyMode::Plugin;
    std::uint64_t seed = 0;
    std::size_t B_pred = 0;

    bool has_draws() const { return !slices.empty() && slices.front().draws.size() > 0; }

    std::size_t time_index(double t) const {
        for (std::size_t k = 0; k < slices.size(); ++k)
            if (slices[k].time == t) return k;
        fail(ErrorKind::InvalidArgument, "time " + csv::format_double(t) + " not in the bundle");
    }
};

// ---------------------------------------------------------------------------
// Gaussian conditioning
// ---------------------------------------------------------------------------

struct ConditionalGaussian {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

/// Distribution of S* = d*'beta + S at `targets` given W at `data`:
/// mean d*'beta + C' Sigma^-1 (W - D beta), covariance sigma2 R** - C' Sigma^-1 C,
/// with C = sigma2 rho(data, targets) (the nugget only enters Sigma).
inline ConditionalGaussian conditional_gaussian(std::span<const SpaceTimePoint> data, const Eigen::VectorXd& w,
                                                const Eigen::VectorXd& data_mean,
                                                std::span<const SpaceTimePoint> targets,
                                                const Eigen::VectorXd& target_mean, const CorrelationParams& p) {
    const Eigen::MatrixXd sigma = covariance_matrix(data, p);
    const JitteredCholesky ch = cholesky_with_jitter(sigma, p.sigma2 + p.tau2);
    const Eigen::MatrixXd c = p.sigma2 * correlation_matrix(pairwise_lags(data, targets), p);
    const Eigen::MatrixXd k = ch.llt.solve(c).transpose();  // C' Sigma^-1
    ConditionalGaussian out;
    out.mean = target_mean + k * (w - data_mean);
    Eigen::MatrixXd rss = p.sigma2 * correlation_matrix(pairwise_lags(targets), p);
    out.cov = rss - k * c;
    out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
    return out;
}

namespace detail {

// Reusable conditioning operator for one parameter set and one target set.
struct ConditionalOperator {
    Eigen::MatrixXd k;       // targets x data, C' Sigma^-1
    Eigen::MatrixXd factor;  // targets x targets, cov = F F'

    static ConditionalOperator build(const JitteredCholesky& data_chol, const Eigen::MatrixXd& c,
                                     const Eigen::MatrixXd& rss) {
        ConditionalOperator op;
        op.k = data_chol.llt.solve(c).transpose();
        Eigen::MatrixXd cov = rss - op.k * c;
        cov = 0.5 * (cov + cov.transpose()).eval();
        op.factor = psd_sqrt_factor(cov);
        return op;
    }
};

inline Eigen::MatrixXd grid_design(const PredictionGrid& grid, const std::vector<std::size_t>& cells, double t,
                                   const std::vector<ColumnSpec>& specs,
                                   const std::map<std::string, double>& fixed) {
    Eigen::MatrixXd d(static_cast<Eigen::Index>(cells.size()), static_cast<Eigen::Index>(specs.size() + 1));
    for (std::size_t r = 0; r < cells.size(); ++r) {
        const std::size_t cell = cells[r];
        auto lookup = [&](const std::string& name) -> double {
            if (auto it = fixed.find(name); it != fixed.end()) return it->second;
            if (name == "t") return t;
            for (std::size_t j = 0; j < grid.covariate_names.size(); ++j)
                if (grid.covariate_names[j] == name)
                    return grid.covariates(static_cast<Eigen::Index>(cell), static_cast<Eigen::Index>(j));
            fail(ErrorKind::MissingColumn, "grid has no covariate '" + name + "' and no fixed value was given");
        };
        d.row(static_cast<Eigen::Index>(r)) = design_row(specs, lookup);
    }
    return d;
}

// Per-replicate parameter and latent draw at the data.
struct LatentDraw {
    ModelParams params;
    Eigen::VectorXd w;
};

inline double type7_from_sorted_row(const std::vector<double>& sorted, double alpha) {
    return quantile_sorted(sorted, alpha);
}

inline void summarise_slice(TimeSlice& s, const Eigen::MatrixXd& p, bool keep) {
    const Eigen::Index m = p.rows();
    const Eigen::Index b = p.cols();
    s.mean = p.rowwise().mean();
    s.sd.resize(m);
    s.sketch.resize(m, kSketchLevels);
    std::vector<double> row(static_cast<std::size_t>(b));
    for (Eigen::Index i = 0; i < m; ++i) {
        double ss = 0.0;
        for (Eigen::Index k = 0; k < b; ++k) {
            row[static_cast<std::size_t>(k)] = p(i, k);
            ss += (p(i, k) - s.mean(i)) * (p(i, k) - s.mean(i));
        }
        s.sd(i) = b > 1 ? std::sqrt(ss / static_cast<double>(b - 1)) : 0.0;
        std::sort(row.begin(), row.end());
        for (int q = 0; q < kSketchLevels; ++q) s.sketch(i, q) = quantile_sorted(row, q / 100.0);
    }
    if (keep) s.draws = p;
}

// Prevalence from a latent draw, clamped into the open unit interval.
inline double prevalence(double eta) {
    constexpr double eps = 1e-15;
    return std::clamp(expit(eta), eps, 1.0 - eps);
}

}  // namespace detail

/// Joint predictive simulation over the active cells of `grid` at every grid
/// time. The nugget is excluded from the target: p = expit(d'beta + S).
inline SurfaceBundle conditional_simulate(const ParamUncertainty& source, const SurveyDataset& ds,
                                          const DesignMatrix& design, const PredictionGrid& grid,
                                          const PredictionControl& ctl, std::uint64_t seed) {
    source.validate();
    grid.validate();
    require(ctl.B_pred >= 100, ErrorKind::InvalidArgument, "prediction needs B_pred >= 100");
    const McmlProblem prob = McmlProblem::from(ds, design);
    const auto coords = ds.coords();
    const std::size_t B = ctl.B_pred;

    // (1) parameter and latent draws
    std::vector<detail::LatentDraw> draws(B);
    switch (source.tag) {
    case UncertaintyMode::Plugin: {
        const LatentTarget target = prob.target(source.fit->params);
        MalaControl mc = ctl.plugin_chain;
        mc.n_samples = B;
        const MalaResult mr = mala_sample(target, mc, derive_seed(seed, "predict-mala"));
        for (std::size_t r = 0; r < B; ++r) draws[r] = {source.fit->params, mr.samples.col(static_cast<Eigen::Index>(r))};
        break;
    }
    case UncertaintyMode::GaussianApprox:
    case UncertaintyMode::Bootstrap: {
        std::vector<ModelParams> lambdas;
        if (source.tag == UncertaintyMode::GaussianApprox) {
            lambdas = mle_sampling_distribution(*source.fit).draw(B, derive_seed(seed, "predict-ga"));
        } else {
            const auto reps = source.bootstrap->params();
            for (std::size_t r = 0; r < B; ++r) lambdas.push_back(reps[r % reps.size()]);
        }
        std::vector<std::optional<detail::LatentDraw>> got(B);
        parallel_for(B, ctl.threads, [&](std::size_t r) {
            ModelParams m = lambdas[r];
            const LatentTarget target = prob.target(m);
            MalaControl mc{1, ctl.refresh_burn_in, 1, std::nullopt, true};
            const MalaResult mr = mala_sample(target, mc, derive_seed(seed, "predict-chain", r));
            got[r] = detail::LatentDraw{std::move(m), mr.samples.col(0)};
        });
        for (std::size_t r = 0; r < B; ++r) draws[r] = std::move(*got[r]);
        break;
    }
    case UncertaintyMode::Bayesian: {
        const PosteriorDraws& pd = *source.posterior;
        const std::size_t n = pd.size();
        for (std::size_t r = 0; r < B; ++r) {
            const std::size_t k = (r * n) / B;  // evenly spread over the retained draws
            draws[r] = {pd.params(k), pd.latent.col(static_cast<Eigen::Index>(k))};
        }
        break;
    }
    }

    SurfaceBundle bundle;
    bundle.grid = grid;
    bundle.cells = grid.active_cells();
    bundle.mode = source.tag;
    bundle.seed = seed;
    bundle.B_pred = B;
    const std::size_t m = bundle.cells.size();
    const bool keep = static_cast<double>(m) * static_cast<double>(grid.times.size()) * static_cast<double>(B) <=
                      ctl.storage_budget;

    std::vector<SpaceTimePoint> spatial_targets;
    for (std::size_t c : bundle.cells) spatial_targets.push_back({grid.cell_centers[c][0], grid.cell_centers[c][1], 0.0});

    // Separable plug-in fast path: spatial factors shared by every slice.
    const bool plugin = source.tag == UncertaintyMode::Plugin;
    const CorrelationParams* pc = plugin ? &source.fit->params.cov : nullptr;
    const bool separable = plugin && pc->xi == 0.0;
    Eigen::MatrixXd m_data_target, m_target;  // Matérn factors
    std::optional<JitteredCholesky> data_chol;
    if (plugin) {
        data_chol = cholesky_with_jitter(prob.sigma(*pc), pc->sigma2 + pc->tau2);
        if (separable) {
            const LagMatrices dt = pairwise_lags(coords, spatial_targets);
            const LagMatrices tt = pairwise_lags(spatial_targets);
            m_data_target.resize(dt.u.rows(), dt.u.cols());
            for (Eigen::Index j = 0; j < dt.u.cols(); ++j)
                for (Eigen::Index i = 0; i < dt.u.rows(); ++i)
                    m_data_target(i, j) = detail::matern_r(dt.u(i, j) / pc->phi, pc->kappa);
            m_target.resize(tt.u.rows(), tt.u.cols());
            for (Eigen::Index j = 0; j < tt.u.cols(); ++j)
                for (Eigen::Index i = 0; i < tt.u.rows(); ++i)
                    m_target(i, j) = detail::matern_r(tt.u(i, j) / pc->phi, pc->kappa);
        }
    }

    for (std::size_t ti = 0; ti < grid.times.size(); ++ti) {
        const double t = grid.times[ti];
        std::vector<SpaceTimePoint> targets = spatial_targets;
        for (auto& p : targets) p.t = t;
        const Eigen::MatrixXd dstar = detail::grid_design(grid, bundle.cells, t, design.column_spec, ctl.fixed_covariates);
        Eigen::MatrixXd prev(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(B));

        std::optional<detail::ConditionalOperator> shared;
        if (plugin) {
            Eigen::MatrixXd c, rss;
            if (separable) {
                c = m_data_target;
                for (std::size_t i = 0; i < coords.size(); ++i) {
                    const double g = 1.0 + std::abs(coords[i].t - t) / pc->psi;
                    c.row(static_cast<Eigen::Index>(i)) *= pc->sigma2 * std::pow(g, -(pc->delta + 1.0));
                }
                rss = pc->sigma2 * m_target;
            } else {
                c = pc->sigma2 * correlation_matrix(pairwise_lags(coords, targets), *pc);
                rss = pc->sigma2 * correlation_matrix(pairwise_lags(targets), *pc);
            }
            shared = detail::ConditionalOperator::build(*data_chol, c, rss);
        }
        parallel_for(B, ctl.threads, [&](std::size_t r) {
            const detail::LatentDraw& ld = draws[r];
            const CorrelationParams& p = ld.params.cov;
            std::optional<detail::ConditionalOperator> own;
            const detail::ConditionalOperator* op = shared ? &*shared : nullptr;
            if (!op) {
                const JitteredCholesky ch = cholesky_with_jitter(prob.sigma(p), p.sigma2 + p.tau2);
                own = detail::ConditionalOperator::build(ch, p.sigma2 * correlation_matrix(pairwise_lags(coords, targets), p),
                                                         p.sigma2 * correlation_matrix(pairwise_lags(targets), p));
                op = &*own;
            }
            Rng rng = make_rng(seed, "predict-slice", (static_cast<std::uint64_t>(ti) << 32) | r);
            const Eigen::VectorXd resid = ld.w - prob.d * ld.params.beta;
            const Eigen::VectorXd s = dstar * ld.params.beta + op->k * resid +
                                      op->factor * standard_normal(rng, static_cast<Eigen::Index>(m));
            for (Eigen::Index i = 0; i < s.size(); ++i) prev(i, static_cast<Eigen::Index>(r)) = detail::prevalence(s(i));
        });
        TimeSlice slice;
        slice.time = t;
        detail::summarise_slice(slice, prev, keep);
        bundle.slices.push_back(std::move(slice));
    }
    return bundle;
}

// ---------------------------------------------------------------------------
// Targets
// ---------------------------------------------------------------------------

/// Quantile read off a 101-point sketch by linear interpolation.
inline double sketch_quantile(const Eigen::Ref<const Eigen::RowVectorXd>& sk, double alpha) {
    const double pos = alpha * (kSketchLevels - 1);
    const auto lo = std::min(static_cast<Eigen::Index>(std::floor(pos)), static_cast<Eigen::Index>(kSketchLevels - 2));
    const double f = pos - static_cast<double>(lo);
    return sk(lo) + f * (sk(lo + 1) - sk(lo));
}

/// P(p > l) from a sketch: the interpolated CDF at l, complemented.
inline double sketch_exceedance(const Eigen::Ref<const Eigen::RowVectorXd>& sk, double l) {
    if (l < sk(0)) return 1.0;
    if (l >= sk(kSketchLevels - 1)) return 0.0;
    // last level with sketch <= l
    Eigen::Index k = 0;
    while (k + 1 < kSketchLevels && sk(k + 1) <= l) ++k;
    if (k >= kSketchLevels - 1) return 0.0;
    const double a = sk(k), b = sk(k + 1);
    const double frac = b > a ? (l - a) / (b - a) : 0.0;
    return 1.0 - (static_cast<double>(k) + frac) / (kSketchLevels - 1);
}

enum class SurfaceSource { Auto, Draws, Sketch };

/// Per-cell alpha-quantile of predictive prevalence for one time slice.
inline Eigen::VectorXd quantile_surface(const SurfaceBundle& b, double alpha, std::size_t time_index,
                                        SurfaceSource src = SurfaceSource::Auto) {
    require(alpha > 0.0 && alpha < 1.0, ErrorKind::InvalidArgument, "alpha must lie in (0, 1)");
    const TimeSlice& s = b.slices.at(time_index);
    const bool raw = src == SurfaceSource::Draws || (src == SurfaceSource::Auto && s.draws.size() > 0);
    if (raw) require(s.draws.size() > 0, ErrorKind::SketchOnly, "raw draws were not retained");
    Eigen::VectorXd out(static_cast<Eigen::Index>(b.cells.size()));
    std::vector<double> row;
    for (Eigen::Index i = 0; i < out.size(); ++i) {
        if (raw) {
            row.resize(static_cast<std::size_t>(s.draws.cols()));
            for (Eigen::Index k = 0; k < s.draws.cols(); ++k) row[static_cast<std::size_t>(k)] = s.draws(i, k);
            std::sort(row.begin(), row.end());
            out(i) = quantile_sorted(row, alpha);
        } else {
            out(i) = sketch_quantile(s.sketch.row(i), alpha);
        }
    }
    return out;
}

/// Per-cell P(p(x, t) > l | y) for one time slice.
inline Eigen::VectorXd exceedance_surface(const SurfaceBundle& b, double l, std::size_t time_index,
                                          SurfaceSource src = SurfaceSource::Auto) {
    require(l > 0.0 && l <= 1.0, ErrorKind::InvalidArgument, "threshold must lie in (0, 1]");
    const TimeSlice& s = b.slices.at(time_index);
    const bool raw = src == SurfaceSource::Draws || (src == SurfaceSource::Auto && s.draws.size() > 0);
    if (raw) require(s.draws.size() > 0, ErrorKind::SketchOnly, "raw draws were not retained");
    Eigen::VectorXd out(static_cast<Eigen::Index>(b.cells.size()));
    for (Eigen::Index i = 0; i < out.size(); ++i) {
        if (raw) {
            out(i) = (s.draws.row(i).array() > l).cast<double>().mean();
        } else {
            out(i) = sketch_exceedance(s.sketch.row(i), l);
        }
    }
    return out;
}

struct DistrictSummary {
    std::string id;
    double time = 0.0;
    std::vector<double> draws;
    double mean = 0.0;
    double lower = 0.0;  // 2.5%
    double upper = 0.0;  // 97.5%
    std::size_t n_cells = 0;

    double exceedance(double l) const {
        std::size_t k = 0;
        for (double v : draws)
            if (v > l) ++k;
        return static_cast<double>(k) / static_cast<double>(draws.size());
    }
};

/// Area-weighted (uniform cells) average prevalence over a region, per draw.
inline DistrictSummary district_average(const SurfaceBundle& b, const Region& region, std::size_t time_index) {
    const TimeSlice& s = b.slices.at(time_index);
    require(s.draws.size() > 0, ErrorKind::SketchOnly, "district averages need retained joint draws");
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < b.cells.size(); ++i) {
        const auto& c = b.grid.cell_centers[b.cells[i]];
        if (region.contains(c[0], c[1])) rows.push_back(static_cast<Eigen::Index>(i));
    }
    require(!rows.empty(), ErrorKind::InvalidArgument, "region '" + region.id + "' contains no active grid cell");
    DistrictSummary out;
    out.id = region.id;
    out.time = s.time;
    out.n_cells = rows.size();
    out.draws.resize(static_cast<std::size_t>(s.draws.cols()));
    for (Eigen::Index k = 0; k < s.draws.cols(); ++k) {
        double sum = 0.0;
        for (Eigen::Index r : rows) sum += s.draws(r, k);
        out.draws[static_cast<std::size_t>(k)] = sum / static_cast<double>(rows.size());
    }
    double total = 0.0;
    for (double v : out.draws) total += v;
    out.mean = total / static_cast<double>(out.draws.size());
    std::vector<double> sorted = out.draws;
    std::sort(sorted.begin(), sorted.end());
    out.lower = quantile_sorted(sorted, 0.025);
    out.upper = quantile_sorted(sorted, 0.975);
    return out;
}

/// District summaries over every time slice.
inline std::vector<DistrictSummary> district_series(const SurfaceBundle& b, const Region& region) {
    std::vector<DistrictSummary> out;
    for (std::size_t k = 0; k < b.slices.size(); ++k) out.push_back(district_average(b, region, k));
    return out;
}

inline std::string district_csv(const std::vector<DistrictSummary>& v) {
    std::ostringstream os;
    os << "id,t,mean,lower95,upper95,n_cells\n";
    for (const auto& d : v)
        os << d.id << ',' << csv::format_double(d.time) << ',' << csv::format_double(d.mean) << ','
           << csv::format_double(d.lower) << ',' << csv::format_double(d.upper) << ',' << d.n_cells << '\n';
    return os.str();
}

struct ModeComparison {
    Eigen::MatrixXd means;  // cells*times x 2
    Eigen::MatrixXd sds;
    double max_abs_mean = 0.0, rms_mean = 0.0;
    double max_abs_sd = 0.0, rms_sd = 0.0;
    double mean_sd_difference = 0.0;  // average of (sd_B - sd_A)
};

inline ModeComparison compare_modes(const SurfaceBundle& a, const SurfaceBundle& b) {
    require(a.grid.same_geometry(b.grid) && a.cells == b.cells && a.slices.size() == b.slices.size(),
            ErrorKind::GridMismatch, "bundles are defined on different grids");
    const auto m = static_cast<Eigen::Index>(a.cells.size());
    const Eigen::Index n = m * static_cast<Eigen::Index>(a.slices.size());
    ModeComparison c;
    c.means.resize(n, 2);
    c.sds.resize(n, 2);
    for (std::size_t k = 0; k < a.slices.size(); ++k) {
        c.means.block(static_cast<Eigen::Index>(k) * m, 0, m, 1) = a.slices[k].mean;
        c.means.block(static_cast<Eigen::Index>(k) * m, 1, m, 1) = b.slices[k].mean;
        c.sds.block(static_cast<Eigen::Index>(k) * m, 0, m, 1) = a.slices[k].sd;
        c.sds.block(static_cast<Eigen::Index>(k) * m, 1, m, 1) = b.slices[k].sd;
    }
    const Eigen::VectorXd dm = c.means.col(1) - c.means.col(0);
    const Eigen::VectorXd ds = c.sds.col(1) - c.sds.col(0);
    c.max_abs_mean = dm.cwiseAbs().maxCoeff();
    c.rms_mean = std::sqrt(dm.squaredNorm() / static_cast<double>(n));
    c.max_abs_sd = ds.cwiseAbs().maxCoeff();
    c.rms_sd = std::sqrt(ds.squaredNorm() / static_cast<double>(n));
    c.mean_sd_difference = ds.mean();
    return c;
}

}  // namespace stprev
