#pragma once

#include "stprev/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

namespace stprev {

inline double expit(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// log(1 + e^x) without overflow.
inline double log1pexp(double x) {
    if (x > 35.0) return x;
    if (x < -35.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline double log_binomial_coef(double n, double k) {
    return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

/// log(mean(exp(v))).
inline double log_mean_exp(const Eigen::VectorXd& v) {
    const double m = v.maxCoeff();
    if (!std::isfinite(m)) return m;
    return m + std::log((v.array() - m).exp().mean());
}

/// Sample quantile with linear interpolation between order statistics
/// (the "type 7" convention): the median of {0.2, 0.4} is 0.3.
inline double quantile_sorted(std::span<const double> sorted, double alpha) {
    require(!sorted.empty(), ErrorKind::InvalidArgument, "quantile of an empty sample");
    const double h = alpha * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double quantile(std::vector<double> v, double alpha) {
    std::sort(v.begin(), v.end());
    return quantile_sorted(v, alpha);
}

/// Cholesky factor of a covariance matrix. When the plain factorisation fails
/// the diagonal is inflated by 1e-10*scale, escalating x10 up to 1e-6*scale.
struct JitteredCholesky {
    Eigen::LLT<Eigen::MatrixXd> llt;
    double jitter = 0.0;  // absolute amount added to the diagonal

    Eigen::MatrixXd lower() const { return llt.matrixL(); }

    double log_det() const {
        return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    }
};

inline JitteredCholesky cholesky_with_jitter(Eigen::MatrixXd m, double scale) {
    JitteredCholesky out;
    out.llt.compute(m);
    if (out.llt.info() == Eigen::Success) return out;
    double added = 0.0;
    for (double rel = 1e-10; rel <= 1e-6 * (1.0 + 1e-9); rel *= 10.0) {
        const double target = rel * scale;
        m.diagonal().array() += target - added;
        added = target;
        out.llt.compute(m);
        if (out.llt.info() == Eigen::Success) {
            out.jitter = added;
            return out;
        }
    }
    fail(ErrorKind::NotPositiveDefinite, "covariance matrix not positive definite after jitter escalation to 1e-6");
}

/// Factor A = L L' of a symmetric positive semi-definite matrix that may be
/// singular (conditional covariances at observed sites); negative pivots from
/// rounding are clamped to zero.
inline Eigen::MatrixXd psd_sqrt_factor(const Eigen::MatrixXd& a) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
    if (ldlt.info() != Eigen::Success) fail(ErrorKind::NotPositiveDefinite, "LDLT factorisation failed");
    Eigen::VectorXd d = ldlt.vectorD().cwiseMax(0.0).cwiseSqrt();
    Eigen::MatrixXd l = ldlt.matrixL();
    Eigen::MatrixXd f = l * d.asDiagonal();
    // undo the pivoting: A = P' L D L' P
    return ldlt.transpositionsP().transpose() * f;
}

/// Gauss-Hermite rule for weight exp(-x^2) via Golub-Welsch.
struct QuadratureRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

inline QuadratureRule gauss_hermite(int n) {
    Eigen::MatrixXd j = Eigen::MatrixXd::Zero(n, n);
    for (int i = 1; i < n; ++i) {
        j(i, i - 1) = j(i - 1, i) = std::sqrt(i / 2.0);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(j);
    QuadratureRule r;
    r.nodes.resize(n);
    r.weights.resize(n);
    const double sqrt_pi = std::sqrt(std::acos(-1.0));
    for (int i = 0; i < n; ++i) {
        r.nodes[i] = es.eigenvalues()(i);
        const double v0 = es.eigenvectors()(0, i);
        r.weights[i] = sqrt_pi * v0 * v0;
    }
    return r;
}

/// Geyer's initial monotone sequence estimate of the effective sample size.
inline double effective_sample_size(std::span<const double> x) {
    const std::size_t n = x.size();
    if (n < 4) return static_cast<double>(n);
    const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    if (var <= 0.0) return static_cast<double>(n);
    auto acov = [&](std::size_t lag) {
        double s = 0.0;
        for (std::size_t i = 0; i + lag < n; ++i) s += (x[i] - mean) * (x[i + lag] - mean);
        return s / static_cast<double>(n);
    };
    double sum = 0.0;
    double prev_pair = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
        double pair = acov(2 * k) + acov(2 * k + 1);
        if (pair <= 0.0) break;
        pair = std::min(pair, prev_pair);
        sum += pair;
        prev_pair = pair;
    }
    const double tau = (2.0 * sum - var) / var;
    return static_cast<double>(n) / std::max(tau, 1e-12);
}

}  // namespace stprev
