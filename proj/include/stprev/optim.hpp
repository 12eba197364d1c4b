#pragma once

#include "stprev/error.hpp"

#include <Eigen/Dense>
#include <boost/math/tools/minima.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>

namespace stprev {

struct BfgsOptions {
    int max_iter = 200;
    double grad_tol = 1e-8;     // on the max-norm of the gradient
    double f_rel_tol = 1e-14;   // together with x_tol: stall criterion
    double x_tol = 1e-12;
    double max_step = std::numeric_limits<double>::infinity();
    int max_line_search = 60;
};

struct OptimResult {
    Eigen::VectorXd x;
    double f = std::numeric_limits<double>::quiet_NaN();
    Eigen::VectorXd grad;
    int iterations = 0;
    int evaluations = 0;
    bool converged = false;
};

/// Quasi-Newton minimisation with an inverse-Hessian BFGS update and an
/// Armijo backtracking line search. `fg(x, &grad)` returns f(x) and writes the
/// gradient; returning a non-finite value marks x as infeasible.
template <class F>
OptimResult minimize_bfgs(F&& fg, Eigen::VectorXd x, const BfgsOptions& opt = {}) {
    using Eigen::VectorXd;
    const Eigen::Index n = x.size();
    OptimResult res;
    VectorXd g(n);
    double f = fg(x, &g);
    res.evaluations = 1;
    if (!std::isfinite(f) || !g.allFinite()) fail(ErrorKind::OptimFailed, "objective not finite at the starting point");

    Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(n, n);
    bool fresh = true;
    VectorXd g_new(n), x_new(n);
    for (int iter = 0; iter < opt.max_iter; ++iter) {
        res.iterations = iter;
        if (g.lpNorm<Eigen::Infinity>() < opt.grad_tol) {
            res.converged = true;
            break;
        }
        VectorXd d = -hinv * g;
        if (d.dot(g) >= 0.0) {
            hinv.setIdentity();
            fresh = true;
            d = -g;
        }
        const double dn = d.norm();
        if (dn > opt.max_step) d *= opt.max_step / dn;

        const double slope = g.dot(d);
        double t = 1.0;
        double f_new = 0.0;
        bool found = false;
        for (int ls = 0; ls < opt.max_line_search; ++ls) {
            x_new = x + t * d;
            f_new = fg(x_new, &g_new);
            ++res.evaluations;
            if (std::isfinite(f_new) && g_new.allFinite() && f_new <= f + 1e-4 * t * slope) {
                found = true;
                break;
            }
            t *= 0.5;
        }
        if (!found) {
            if (!fresh) {
                hinv.setIdentity();
                fresh = true;
                continue;
            }
            break;
        }
        const VectorXd s = x_new - x;
        const VectorXd y = g_new - g;
        const double df = f - f_new;
        x = x_new;
        g = g_new;
        f = f_new;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm()) {
            if (fresh) {
                hinv *= sy / y.squaredNorm();
                fresh = false;
            }
            const double rho = 1.0 / sy;
            const VectorXd hy = hinv * y;
            hinv += (rho * rho * y.dot(hy) + rho) * s * s.transpose() - rho * (hy * s.transpose() + s * hy.transpose());
        }
        if (std::abs(df) <= opt.f_rel_tol * (1.0 + std::abs(f)) && s.lpNorm<Eigen::Infinity>() <= opt.x_tol) {
            res.converged = true;
            break;
        }
        res.iterations = iter + 1;
    }
    res.x = std::move(x);
    res.f = f;
    res.grad = std::move(g);
    return res;
}

/// Central-difference gradient of a scalar function.
template <class F>
Eigen::VectorXd central_gradient(F&& f, const Eigen::VectorXd& x, double h = 1e-6) {
    Eigen::VectorXd g(x.size());
    Eigen::VectorXd xp = x;
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        const double step = h * std::max(1.0, std::abs(x(j)));
        xp(j) = x(j) + step;
        const double fp = f(xp);
        xp(j) = x(j) - step;
        const double fm = f(xp);
        xp(j) = x(j);
        g(j) = (fp - fm) / (2.0 * step);
    }
    return g;
}

/// Brent's method on [lo, hi]; returns (argmin, min).
template <class F>
std::pair<double, double> minimize_brent(F&& f, double lo, double hi, int bits = 40) {
    std::uintmax_t iters = 200;
    auto r = boost::math::tools::brent_find_minima(std::forward<F>(f), lo, hi, bits, iters);
    return {r.first, r.second};
}

}  // namespace stprev
