#pragma once

// Correlation kernels (Matérn, Gneiting space-time family, temporally varying
// variance) and covariance assembly / simulation on space-time points.

#include "stprev/error.hpp"
#include "stprev/numeric.hpp"
#include "stprev/optim.hpp"
#include "stprev/rng.hpp"

#include <Eigen/Dense>
#include <boost/math/special_functions/bessel.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace stprev {

struct CorrelationParams {
    double sigma2 = 1.0;   // variance of S
    double tau2 = 0.0;     // nugget variance of Z
    double phi = 1.0;      // spatial scale, km
    double psi = 1.0;      // temporal scale, years
    double delta = 0.0;    // temporal decay exponent
    double xi = 0.0;       // space-time interaction, 0 = separable
    double kappa = 0.5;    // Matérn smoothness

    double nu2() const { return tau2 / sigma2; }

    void validate() const {
        require(std::isfinite(sigma2) && sigma2 > 0.0, ErrorKind::InvalidParam, "sigma2 must be > 0");
        require(std::isfinite(tau2) && tau2 >= 0.0, ErrorKind::InvalidParam, "tau2 must be >= 0");
        validate_correlation();
    }

    void validate_correlation() const {
        require(std::isfinite(phi) && phi > 0.0, ErrorKind::InvalidParam, "phi must be > 0");
        require(std::isfinite(psi) && psi > 0.0, ErrorKind::InvalidParam, "psi must be > 0");
        require(std::isfinite(delta) && delta >= 0.0, ErrorKind::InvalidParam, "delta must be >= 0");
        require(xi >= 0.0 && xi <= 1.0, ErrorKind::InvalidParam, "xi must lie in [0, 1]");
        require(std::isfinite(kappa) && kappa > 0.0, ErrorKind::InvalidParam, "kappa must be > 0");
    }

    bool operator==(const CorrelationParams&) const = default;
};

enum class TemporalFamily { Exponential, Gaussian };

struct TVVParams {
    double eta2 = 0.0;          // variance of log B(t)
    double rho_b_scale = 1.0;   // years
    TemporalFamily rho_b_family = TemporalFamily::Exponential;

    void validate() const {
        require(std::isfinite(eta2) && eta2 >= 0.0, ErrorKind::InvalidParam, "eta2 must be >= 0");
        require(std::isfinite(rho_b_scale) && rho_b_scale > 0.0, ErrorKind::InvalidParam, "rho_b_scale must be > 0");
    }
};

struct SpaceTimePoint {
    double x = 0.0;  // km
    double y = 0.0;  // km
    double t = 0.0;  // decimal years
};

// ---------------------------------------------------------------------------
// Matérn
// ---------------------------------------------------------------------------

inline double bessel_k(double nu, double x) {
    require(x > 0.0 && std::isfinite(x), ErrorKind::DomainError, "bessel_k requires x > 0");
    require(std::isfinite(nu), ErrorKind::DomainError, "bessel_k requires a finite order");
    return boost::math::cyl_bessel_k(std::abs(nu), x);
}

namespace detail {

// M as a function of r = u / phi.
inline double matern_r(double r, double kappa) {
    if (r == 0.0) return 1.0;
    if (kappa == 0.5) return std::exp(-r);
    if (kappa == 1.5) return (1.0 + r) * std::exp(-r);
    if (kappa == 2.5) return (1.0 + r + r * r / 3.0) * std::exp(-r);
    if (r < 1e-12) return 1.0;
    if (r > 700.0) return 0.0;
    const double log_m = kappa * std::log(r) + std::log(bessel_k(kappa, r)) - (kappa - 1.0) * std::log(2.0) -
                         std::lgamma(kappa);
    return std::min(1.0, std::exp(log_m));
}

// dM/dr.
inline double matern_dr(double r, double kappa) {
    if (kappa == 0.5) return -std::exp(-r);
    if (kappa == 1.5) return -r * std::exp(-r);
    if (kappa == 2.5) return -(r * (1.0 + r) / 3.0) * std::exp(-r);
    if (r == 0.0) return kappa < 0.5 ? -std::numeric_limits<double>::infinity() : (kappa == 0.5 ? -1.0 : 0.0);
    if (r > 700.0) return 0.0;
    // d/dr [r^k K_k(r)] = -r^k K_{k-1}(r)
    const double log_d = kappa * std::log(r) + std::log(bessel_k(kappa - 1.0, r)) - (kappa - 1.0) * std::log(2.0) -
                         std::lgamma(kappa);
    return -std::exp(log_d);
}

}  // namespace detail

/// Matérn correlation {2^(k-1) Gamma(k)}^-1 (u/phi)^k K_k(u/phi), normalised
/// so that kappa = 1/2 is exactly exp(-u/phi) and M(0) = 1.
inline double matern(double u, double phi, double kappa) {
    require(phi > 0.0 && std::isfinite(phi), ErrorKind::InvalidParam, "matern: phi must be > 0");
    require(kappa > 0.0 && std::isfinite(kappa), ErrorKind::InvalidParam, "matern: kappa must be > 0");
    require(u >= 0.0, ErrorKind::InvalidParam, "matern: u must be >= 0");
    return detail::matern_r(u / phi, kappa);
}

// ---------------------------------------------------------------------------
// Gneiting-Matérn space-time family
// ---------------------------------------------------------------------------

/// rho(u, v) = (1 + v/psi)^-(delta+1) M(u / (1 + v/psi)^(xi/2); phi, kappa).
inline double gneiting(double u, double v, const CorrelationParams& p) {
    p.validate_correlation();
    require(u >= 0.0 && v >= 0.0, ErrorKind::InvalidParam, "gneiting: lags must be >= 0");
    const double g = 1.0 + v / p.psi;
    const double r = u / (p.phi * std::pow(g, p.xi / 2.0));
    return std::pow(g, -(p.delta + 1.0)) * detail::matern_r(r, p.kappa);
}

/// Correlation and its partial derivatives with respect to log phi, log psi,
/// delta and xi (kappa held fixed).
struct CorrelationGradient {
    double rho = 1.0;
    double d_log_phi = 0.0;
    double d_log_psi = 0.0;
    double d_delta = 0.0;
    double d_xi = 0.0;
};

inline CorrelationGradient gneiting_with_gradient(double u, double v, const CorrelationParams& p) {
    CorrelationGradient out;
    const double g = 1.0 + v / p.psi;
    const double log_g = std::log(g);
    const double gs = std::exp(-(p.delta + 1.0) * log_g);
    const double r = u / (p.phi * std::exp(0.5 * p.xi * log_g));
    const double m = detail::matern_r(r, p.kappa);
    const double dm = (r > 0.0) ? detail::matern_dr(r, p.kappa) : 0.0;
    out.rho = gs * m;
    out.d_log_phi = gs * dm * (-r);
    // dg/dlog(psi) = -(g - 1)
    const double drho_dg = -(p.delta + 1.0) * gs / g * m + gs * dm * r * (-0.5 * p.xi) / g;
    out.d_log_psi = drho_dg * (-(g - 1.0));
    out.d_delta = -log_g * out.rho;
    out.d_xi = gs * dm * r * (-0.5 * log_g);
    return out;
}

// ---------------------------------------------------------------------------
// Temporally varying variance
// ---------------------------------------------------------------------------

inline double rho_b(double v, const TVVParams& tvv) {
    const double a = v / tvv.rho_b_scale;
    switch (tvv.rho_b_family) {
    case TemporalFamily::Gaussian: return std::exp(-a * a);
    case TemporalFamily::Exponential: break;
    }
    return std::exp(-a);
}

/// Correlation of S*(x,t) = B(t) S(x,t): exp{eta2 (rho_B(v) - 1)} rho(u, v).
inline double tvv_correlation(double u, double v, const CorrelationParams& p, const TVVParams& tvv) {
    tvv.validate();
    return std::exp(tvv.eta2 * (rho_b(v, tvv) - 1.0)) * gneiting(u, v, p);
}

// ---------------------------------------------------------------------------
// Matrix assembly
// ---------------------------------------------------------------------------

/// Pairwise spatial (km) and temporal (years) lags between two point sets.
struct LagMatrices {
    Eigen::MatrixXd u;
    Eigen::MatrixXd v;
};

inline LagMatrices pairwise_lags(std::span<const SpaceTimePoint> a, std::span<const SpaceTimePoint> b) {
    LagMatrices lags{Eigen::MatrixXd(a.size(), b.size()), Eigen::MatrixXd(a.size(), b.size())};
    for (std::size_t j = 0; j < b.size(); ++j) {
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double dx = a[i].x - b[j].x;
            const double dy = a[i].y - b[j].y;
            lags.u(i, j) = std::sqrt(dx * dx + dy * dy);
            lags.v(i, j) = std::abs(a[i].t - b[j].t);
        }
    }
    return lags;
}

inline LagMatrices pairwise_lags(std::span<const SpaceTimePoint> a) { return pairwise_lags(a, a); }

inline Eigen::MatrixXd correlation_matrix(const LagMatrices& lags, const CorrelationParams& p) {
    p.validate_correlation();
    Eigen::MatrixXd r(lags.u.rows(), lags.u.cols());
    for (Eigen::Index j = 0; j < r.cols(); ++j)
        for (Eigen::Index i = 0; i < r.rows(); ++i) r(i, j) = gneiting(lags.u(i, j), lags.v(i, j), p);
    return r;
}

/// Covariance of W = S + Z: sigma2 rho(u_ij, v_ij) + tau2 1[i = j], assembled
/// from the upper triangle so the result is exactly symmetric.
inline Eigen::MatrixXd covariance_matrix(const LagMatrices& lags, const CorrelationParams& p) {
    p.validate();
    const Eigen::Index n = lags.u.rows();
    require(n >= 1 && lags.u.cols() == n, ErrorKind::InvalidArgument, "covariance_matrix needs a square lag set");
    Eigen::MatrixXd c(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        c(j, j) = p.sigma2 + p.tau2;
        for (Eigen::Index i = 0; i < j; ++i) {
            const double val = p.sigma2 * gneiting(lags.u(i, j), lags.v(i, j), p);
            c(i, j) = val;
            c(j, i) = val;
        }
    }
    return c;
}

inline Eigen::MatrixXd covariance_matrix(std::span<const SpaceTimePoint> coords, const CorrelationParams& p) {
    require(!coords.empty(), ErrorKind::InvalidArgument, "covariance_matrix needs at least one point");
    return covariance_matrix(pairwise_lags(coords), p);
}

inline JitteredCholesky factorize_covariance(const Eigen::MatrixXd& cov, const CorrelationParams& p) {
    return cholesky_with_jitter(cov, p.sigma2 + p.tau2);
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

namespace detail {

// Draws S ~ N(0, sigma2 R) and Z ~ N(0, tau2 I) from the "field" and "nugget"
// sub-streams of `seed`. Shared by the Gaussian and TVV simulators so that
// eta2 = 0 reproduces simulate_gaussian_field exactly.
inline void simulate_components(std::span<const SpaceTimePoint> coords, const CorrelationParams& p,
                                std::uint64_t seed, Eigen::VectorXd& s, Eigen::VectorXd& z) {
    const auto n = static_cast<Eigen::Index>(coords.size());
    require(p.sigma2 >= 0.0 && p.tau2 >= 0.0, ErrorKind::InvalidParam, "variances must be >= 0");
    p.validate_correlation();
    Rng field_rng = make_rng(seed, "field");
    Rng nugget_rng = make_rng(seed, "nugget");
    const Eigen::VectorXd e1 = standard_normal(field_rng, n);
    const Eigen::VectorXd e2 = standard_normal(nugget_rng, n);
    if (p.sigma2 > 0.0) {
        Eigen::MatrixXd r = correlation_matrix(pairwise_lags(coords), p);
        r = 0.5 * (r + r.transpose()).eval();
        const JitteredCholesky chol = cholesky_with_jitter(p.sigma2 * r, p.sigma2);
        s = chol.llt.matrixL() * e1;
    } else {
        s = Eigen::VectorXd::Zero(n);
    }
    z = std::sqrt(p.tau2) * e2;
}

}  // namespace detail

/// One draw of W = S + Z at the given points; deterministic in `seed`.
inline Eigen::VectorXd simulate_gaussian_field(std::span<const SpaceTimePoint> coords, const CorrelationParams& p,
                                               std::uint64_t seed) {
    Eigen::VectorXd s, z;
    detail::simulate_components(coords, p, seed, s, z);
    return s + z;
}

/// One draw of S* + Z with S*(x,t) = B(t) S(x,t). log B(t) is a stationary
/// Gaussian process over the distinct times with mean -eta2, variance eta2 and
/// correlation rho_B, so E[B^2] = 1 and corr(S*, S*') = exp{eta2(rho_B - 1)} rho.
/// S and Z use the same sub-streams as simulate_gaussian_field; B uses "tvv".
inline Eigen::VectorXd simulate_tvv_field(std::span<const SpaceTimePoint> coords, const CorrelationParams& p,
                                          const TVVParams& tvv, std::uint64_t seed) {
    tvv.validate();
    Eigen::VectorXd s, z;
    detail::simulate_components(coords, p, seed, s, z);
    if (tvv.eta2 > 0.0) {
        std::vector<double> times;
        times.reserve(coords.size());
        for (const auto& c : coords) times.push_back(c.t);
        std::sort(times.begin(), times.end());
        times.erase(std::unique(times.begin(), times.end()), times.end());
        const auto m = static_cast<Eigen::Index>(times.size());
        Eigen::MatrixXd cb(m, m);
        for (Eigen::Index i = 0; i < m; ++i)
            for (Eigen::Index j = 0; j < m; ++j) cb(i, j) = tvv.eta2 * rho_b(std::abs(times[i] - times[j]), tvv);
        const JitteredCholesky chol = cholesky_with_jitter(cb, tvv.eta2);
        Rng rng = make_rng(seed, "tvv");
        const Eigen::VectorXd log_b = (chol.llt.matrixL() * standard_normal(rng, m)).array() - tvv.eta2;
        std::map<double, double> b_of_t;
        for (Eigen::Index i = 0; i < m; ++i) b_of_t[times[i]] = std::exp(log_b(i));
        for (std::size_t i = 0; i < coords.size(); ++i) s(static_cast<Eigen::Index>(i)) *= b_of_t.at(coords[i].t);
    }
    return s + z;
}

// ---------------------------------------------------------------------------
// Matérn approximation of a Matérn mixture
// ---------------------------------------------------------------------------

struct MaternComponent {
    double phi = 1.0;
    double kappa = 0.5;
};

struct MaternFit {
    double phi = 0.0;
    double kappa = 0.0;
    double objective = 0.0;          // sum of squared residuals on the grid
    double max_abs_deviation = 0.0;  // max |f - M| on the grid
};

/// Least-squares fit of a single Matérn M(u; phi, kappa) to the mixture
/// f(u) = sum_j w_j M(u; phi_j, kappa_j) over `u_grid`.
inline MaternFit fit_matern_to_mixture(std::span<const double> weights, std::span<const MaternComponent> components,
                                       std::span<const double> u_grid) {
    require(!weights.empty() && weights.size() == components.size(), ErrorKind::InvalidParam,
            "weights and components must be non-empty and of equal length");
    double wsum = 0.0;
    for (double w : weights) {
        require(w >= 0.0, ErrorKind::InvalidParam, "mixture weights must be >= 0");
        wsum += w;
    }
    require(std::abs(wsum - 1.0) < 1e-9, ErrorKind::InvalidParam, "mixture weights must sum to 1");
    require(!u_grid.empty(), ErrorKind::InvalidParam, "empty u grid");
    for (const auto& c : components) {
        require(c.phi > 0.0 && c.kappa > 0.0, ErrorKind::InvalidParam, "invalid mixture component");
    }

    Eigen::VectorXd target(u_grid.size());
    for (std::size_t i = 0; i < u_grid.size(); ++i) {
        double f = 0.0;
        for (std::size_t j = 0; j < components.size(); ++j)
            f += weights[j] * matern(u_grid[i], components[j].phi, components[j].kappa);
        target(static_cast<Eigen::Index>(i)) = f;
    }
    auto sse_of = [&](double phi, double kappa) {
        double s = 0.0;
        for (std::size_t i = 0; i < u_grid.size(); ++i) {
            const double d = target(static_cast<Eigen::Index>(i)) - matern(u_grid[i], phi, kappa);
            s += d * d;
        }
        return s;
    };
    auto objective = [&](const Eigen::VectorXd& x) {
        if (!(std::abs(x(0)) < 50.0 && x(1) > std::log(1e-3) && x(1) < std::log(50.0)))
            return std::numeric_limits<double>::infinity();
        return sse_of(std::exp(x(0)), std::exp(x(1)));
    };
    auto fg = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
        const double f = objective(x);
        if (std::isfinite(f)) *g = central_gradient(objective, x, 1e-7);
        return f;
    };

    for (const auto& c : components) {
        if (sse_of(c.phi, c.kappa) == 0.0) return MaternFit{c.phi, c.kappa, 0.0, 0.0};
    }

    std::vector<Eigen::VectorXd> starts;
    double log_phi_mean = 0.0;
    double log_kappa_mean = 0.0;
    for (std::size_t j = 0; j < components.size(); ++j) {
        starts.push_back(Eigen::Vector2d(std::log(components[j].phi), std::log(components[j].kappa)));
        log_phi_mean += weights[j] * std::log(components[j].phi);
        log_kappa_mean += weights[j] * std::log(components[j].kappa);
    }
    starts.push_back(Eigen::Vector2d(log_phi_mean, log_kappa_mean));
    starts.push_back(Eigen::Vector2d(log_phi_mean, 0.0));

    BfgsOptions opt;
    opt.grad_tol = 1e-12;
    opt.max_iter = 500;
    MaternFit best;
    best.objective = std::numeric_limits<double>::infinity();
    bool any = false;
    for (const auto& s0 : starts) {
        OptimResult r;
        try {
            r = minimize_bfgs(fg, s0, opt);
        } catch (const Error&) {
            continue;
        }
        if (std::isfinite(r.f) && r.f < best.objective) {
            best.objective = r.f;
            best.phi = std::exp(r.x(0));
            best.kappa = std::exp(r.x(1));
            any = true;
        }
    }
    require(any, ErrorKind::OptimFailed, "no descent found for the Matérn approximation");
    double dev = 0.0;
    for (std::size_t i = 0; i < u_grid.size(); ++i)
        dev = std::max(dev, std::abs(target(static_cast<Eigen::Index>(i)) - matern(u_grid[i], best.phi, best.kappa)));
    best.max_abs_deviation = dev;
    return best;
}

}  // namespace stprev
