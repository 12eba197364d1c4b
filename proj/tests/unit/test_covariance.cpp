#include "stprev/covariance.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

using namespace stprev;

TEST(BesselK, MatchesIntegralRepresentation) {
    for (double nu : {0.3, 0.5, 0.774, 1.0, 2.5, 4.2})
        for (double x : {0.05, 0.5, 1.0, 3.0, 10.0}) {
            const double ref = oracle::bessel_k_integral(nu, x);
            EXPECT_NEAR(bessel_k(nu, x) / ref, 1.0, 1e-9) << nu << " " << x;
        }
}

TEST(BesselK, RejectsNonPositiveArgument) {
    EXPECT_THROW(bessel_k(0.5, 0.0), Error);
    EXPECT_THROW(bessel_k(0.5, -1.0), Error);
}

TEST(Matern, ClosedFormsAgreeWithDefinition) {
    for (double kappa : {0.5, 1.5, 2.5, 0.774, 1.0, 3.3})
        for (double u : {0.0, 0.01, 0.2, 1.0, 4.0}) {
            EXPECT_NEAR(matern(u, 0.7, kappa), oracle::matern_definition(u, 0.7, kappa), 1e-10) << kappa << " " << u;
        }
    EXPECT_DOUBLE_EQ(matern(0.3, 1.0, 0.5), std::exp(-0.3));
    EXPECT_DOUBLE_EQ(matern(0.0, 1.0, 0.9), 1.0);
}

TEST(Matern, IsDecreasingInDistance) {
    double prev = 1.0;
    for (double u = 0.05; u < 5.0; u += 0.05) {
        const double m = matern(u, 1.0, 0.774);
        EXPECT_LT(m, prev);
        prev = m;
    }
}

TEST(Matern, ValidatesArguments) {
    EXPECT_THROW(matern(1.0, 0.0, 0.5), Error);
    EXPECT_THROW(matern(1.0, 1.0, -1.0), Error);
    EXPECT_THROW(matern(-1.0, 1.0, 0.5), Error);
}

TEST(Gneiting, MatchesDirectDefinition) {
    CorrelationParams p;
    p.phi = 0.8;
    p.psi = 2.0;
    p.delta = 0.4;
    p.xi = 0.6;
    for (double kappa : {0.5, 1.2}) {
        p.kappa = kappa;
        for (double u : {0.0, 0.3, 2.0})
            for (double v : {0.0, 1.0, 5.0})
                EXPECT_NEAR(gneiting(u, v, p), oracle::gneiting_definition(u, v, 0.8, 2.0, 0.4, 0.6, kappa), 1e-10);
    }
    EXPECT_DOUBLE_EQ(gneiting(0.0, 0.0, p), 1.0);
}

TEST(Gneiting, SeparableWhenXiIsZero) {
    CorrelationParams p;
    p.phi = 1.3;
    p.psi = 0.7;
    p.delta = 1.1;
    p.xi = 0.0;
    p.kappa = 1.5;
    for (double u : {0.1, 1.0, 3.0})
        for (double v : {0.5, 2.0}) EXPECT_NEAR(gneiting(u, v, p), gneiting(u, 0, p) * gneiting(0, v, p), 1e-15);
}

TEST(Gneiting, GradientMatchesFiniteDifferences) {
    CorrelationParams p;
    p.phi = 0.9;
    p.psi = 1.7;
    p.delta = 0.5;
    p.xi = 0.4;
    for (double kappa : {0.5, 1.5, 0.8}) {
        p.kappa = kappa;
        const double u = 0.7, v = 1.2;
        const CorrelationGradient g = gneiting_with_gradient(u, v, p);
        EXPECT_DOUBLE_EQ(g.rho, gneiting(u, v, p));
        auto at = [&](int which, double step) {
            CorrelationParams q = p;
            if (which == 0) q.phi = std::exp(std::log(p.phi) + step);
            if (which == 1) q.psi = std::exp(std::log(p.psi) + step);
            if (which == 2) q.delta = p.delta + step;
            if (which == 3) q.xi = p.xi + step;
            return gneiting(u, v, q);
        };
        const double h = 1e-5;
        const double fd[] = {(at(0, h) - at(0, -h)) / (2 * h), (at(1, h) - at(1, -h)) / (2 * h),
                             (at(2, h) - at(2, -h)) / (2 * h), (at(3, h) - at(3, -h)) / (2 * h)};
        EXPECT_NEAR(g.d_log_phi, fd[0], 1e-8);
        EXPECT_NEAR(g.d_log_psi, fd[1], 1e-8);
        EXPECT_NEAR(g.d_delta, fd[2], 1e-8);
        EXPECT_NEAR(g.d_xi, fd[3], 1e-8);
    }
}

TEST(Gneiting, ValidatesParameters) {
    CorrelationParams p;
    p.xi = 1.5;
    EXPECT_THROW(gneiting(1.0, 1.0, p), Error);
    p.xi = 0.0;
    p.phi = -1.0;
    EXPECT_THROW(gneiting(1.0, 1.0, p), Error);
}

TEST(CovarianceMatrix, HasNuggetOnDiagonalAndIsPositiveDefinite) {
    std::vector<SpaceTimePoint> pts{{0, 0, 0}, {1, 0, 0}, {0, 1, 1}, {2, 2, 1}};
    CorrelationParams p;
    p.sigma2 = 2.0;
    p.tau2 = 0.3;
    p.phi = 1.0;
    const Eigen::MatrixXd s = covariance_matrix(pts, p);
    for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(s(i, i), 2.3);
    EXPECT_NEAR(s(0, 1), 2.0 * std::exp(-1.0), 1e-15);
    EXPECT_EQ((s - s.transpose()).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(Eigen::LLT<Eigen::MatrixXd>(s).info(), Eigen::Success);
}

TEST(Simulation, GaussianFieldIsDeterministicAndHasRightVariance) {
    std::vector<SpaceTimePoint> pts;
    for (int i = 0; i < 40; ++i) pts.push_back({i * 10.0, 0.0, 0.0});  // far apart: nearly independent
    CorrelationParams p;
    p.sigma2 = 1.5;
    p.tau2 = 0.5;
    p.phi = 0.5;
    EXPECT_EQ(simulate_gaussian_field(pts, p, 3), simulate_gaussian_field(pts, p, 3));
    EXPECT_NE(simulate_gaussian_field(pts, p, 3), simulate_gaussian_field(pts, p, 4));
    std::vector<double> v;
    for (std::uint64_t s = 0; s < 200; ++s) {
        const Eigen::VectorXd w = simulate_gaussian_field(pts, p, s);
        for (Eigen::Index i = 0; i < w.size(); ++i) v.push_back(w(i) * w(i));
    }
    const auto ms = oracle::mean_se(v);
    EXPECT_NEAR(ms.mean, 2.0, 4.0 * ms.se);
}

TEST(Simulation, TvvWithZeroEtaReproducesGaussianField) {
    std::vector<SpaceTimePoint> pts{{0, 0, 0}, {1, 0, 1}, {0, 2, 2}};
    CorrelationParams p;
    TVVParams t;
    t.eta2 = 0.0;
    EXPECT_EQ(simulate_tvv_field(pts, p, t, 11), simulate_gaussian_field(pts, p, 11));
}

TEST(Tvv, CorrelationFormula) {
    CorrelationParams p;
    p.phi = 1.0;
    p.psi = 2.0;
    TVVParams t;
    t.eta2 = 0.3;
    t.rho_b_scale = 1.5;
    const double v = 1.0;
    const double expected = std::exp(0.3 * (std::exp(-v / 1.5) - 1.0)) * gneiting(0.5, v, p);
    EXPECT_NEAR(tvv_correlation(0.5, v, p, t), expected, 1e-14);
    EXPECT_DOUBLE_EQ(tvv_correlation(0.0, 0.0, p, t), 1.0);
}

TEST(MaternMixture, SingleComponentIsRecovered) {
    std::vector<double> grid;
    for (int i = 1; i <= 200; ++i) grid.push_back(i * 0.005);
    const std::vector<double> w{1.0};
    const std::vector<MaternComponent> c{{0.2, 1.3}};
    const MaternFit f = fit_matern_to_mixture(w, c, grid);
    EXPECT_NEAR(f.phi, 0.2, 1e-4);
    EXPECT_NEAR(f.kappa, 1.3, 1e-3);
}

TEST(MaternMixture, RejectsBadWeights) {
    const std::vector<double> grid{0.1, 0.2};
    const std::vector<MaternComponent> c{{0.2, 1.3}, {0.1, 0.5}};
    EXPECT_THROW(fit_matern_to_mixture(std::vector<double>{0.5, 0.6}, c, grid), Error);
    EXPECT_THROW(fit_matern_to_mixture(std::vector<double>{1.0}, c, grid), Error);
}
