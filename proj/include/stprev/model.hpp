#pragma once

// Binomial-logit geostatistical model: logit p = d'beta + S(x,t) + Z.

#include "stprev/covariance.hpp"
#include "stprev/survey_data.hpp"

#include <random>

namespace stprev {

struct ModelParams {
    Eigen::VectorXd beta;
    CorrelationParams cov;

    bool operator==(const ModelParams& o) const { return beta == o.beta && cov == o.cov; }
};

/// Latent total predictor W = D beta + S + Z at the records.
inline Eigen::VectorXd simulate_latent(const SurveyDataset& ds, const DesignMatrix& d, const ModelParams& m,
                                       std::uint64_t seed) {
    require(d.rows.cols() == m.beta.size(), ErrorKind::InvalidParam, "beta length differs from design columns");
    const auto coords = ds.coords();
    return d.rows * m.beta + simulate_gaussian_field(coords, m.cov, derive_seed(seed, "latent"));
}

/// y_i ~ Binomial(n_i, expit(w_i)); everything but n_positive is copied.
inline SurveyDataset resample_binomial(const SurveyDataset& ds, const Eigen::VectorXd& w, std::uint64_t seed) {
    require(w.size() == static_cast<Eigen::Index>(ds.size()), ErrorKind::InvalidParam, "latent length differs");
    SurveyDataset out = ds;
    Rng rng = make_rng(seed, "binomial");
    for (std::size_t i = 0; i < out.records.size(); ++i) {
        std::binomial_distribution<int> bin(out.records[i].n_tested, expit(w(static_cast<Eigen::Index>(i))));
        out.records[i].n_positive = bin(rng);
    }
    return out;
}

/// Resimulates the positives of `ds` from the model, keeping (x, t, n).
inline SurveyDataset simulate_binomial(const SurveyDataset& ds, const DesignMatrix& d, const ModelParams& m,
                                       std::uint64_t seed) {
    return resample_binomial(ds, simulate_latent(ds, d, m, seed), seed);
}

/// Sampling design for synthetic studies: `n_sites` uniform locations in a
/// square of side `extent` km, each visited at every time in `times`.
struct SimulationDesign {
    int n_sites = 60;
    double extent = 1.0;
    std::vector<double> times{0.0};
    int n_tested = 100;
    bool jitter_sites_per_time = false;  // fresh locations at every time
};

inline SurveyDataset make_design(const SimulationDesign& sd, std::uint64_t seed) {
    require(sd.n_sites >= 1 && sd.n_tested >= 1 && !sd.times.empty() && sd.extent > 0.0, ErrorKind::InvalidParam,
            "invalid simulation design");
    Rng rng = make_rng(seed, "design");
    std::uniform_real_distribution<double> unif(0.0, sd.extent);
    SurveyDataset ds;
    std::vector<std::array<double, 2>> sites;
    auto draw_sites = [&] {
        sites.clear();
        for (int i = 0; i < sd.n_sites; ++i) {
            const double x = unif(rng);
            const double y = unif(rng);
            sites.push_back({x, y});
        }
    };
    draw_sites();
    int k = 0;
    for (double t : sd.times) {
        if (sd.jitter_sites_per_time && k > 0) draw_sites();
        for (int i = 0; i < sd.n_sites; ++i) {
            SurveyRecord r;
            r.id = "s" + std::to_string(i) + "_t" + std::to_string(k);
            r.x = sites[i][0];
            r.y = sites[i][1];
            r.t = t;
            r.n_tested = sd.n_tested;
            ds.records.push_back(std::move(r));
        }
        ++k;
    }
    ds.update_bbox();
    return ds;
}

}  // namespace stprev
