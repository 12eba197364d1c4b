#include "stprev/latent.hpp"
#include "stprev/model.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

using namespace stprev;

namespace {

struct Toy {
    Eigen::VectorXd y, n, mu;
    Eigen::MatrixXd sigma;
};

Toy toy(int m, std::uint64_t seed, int n_tested = 50) {
    SimulationDesign sd;
    sd.n_sites = m;
    sd.n_tested = n_tested;
    SurveyDataset ds = make_design(sd, seed);
    ModelParams p;
    p.beta = Eigen::VectorXd::Constant(1, -0.5);
    p.cov.sigma2 = 1.0;
    p.cov.tau2 = 0.2;
    p.cov.phi = 0.2;
    const DesignMatrix d = build_design(ds, {});
    ds = simulate_binomial(ds, d, p, seed + 7);
    const auto c = ds.coords();
    return {ds.positives(), ds.tested(), d.rows * p.beta, covariance_matrix(c, p.cov)};
}

}  // namespace

TEST(LatentTarget, GradientMatchesFiniteDifferences) {
    const Toy t = toy(30, 1);
    const LatentTarget target(t.y, t.n, t.mu, t.sigma, 1.2);
    Rng rng(2);
    const Eigen::VectorXd w = t.mu + 0.5 * standard_normal(rng, 30);
    const Eigen::VectorXd g = target.gradient(w);
    const Eigen::VectorXd fd =
        oracle::numerical_gradient([&](const Eigen::VectorXd& x) { return target.log_density(x); }, w);
    EXPECT_LT((g - fd).lpNorm<Eigen::Infinity>() / g.lpNorm<Eigen::Infinity>(), 1e-6);
}

TEST(LatentTarget, DensityMatchesDirectFormula) {
    const Toy t = toy(10, 3);
    const LatentTarget target(t.y, t.n, t.mu, t.sigma, 1.2);
    const Eigen::VectorXd w = t.mu.array() + 0.3;
    double ll = 0.0;
    for (int i = 0; i < 10; ++i) ll += t.y(i) * w(i) - t.n(i) * oracle::log1pexp(w(i));
    const Eigen::VectorXd r = w - t.mu;
    EXPECT_NEAR(target.log_density(w), ll - 0.5 * r.dot(t.sigma.inverse() * r), 1e-9);
}

TEST(Laplace, ModeIsStationaryAndHessianIsExact) {
    const Toy t = toy(40, 5);
    const LatentTarget target(t.y, t.n, t.mu, t.sigma, 1.2);
    const LaplaceResult lap = laplace_mode(target);
    EXPECT_LT(target.gradient(lap.mode).lpNorm<Eigen::Infinity>(), 1e-8);
    Eigen::MatrixXd h = t.sigma.inverse();
    for (int i = 0; i < 40; ++i) {
        const double p = 1.0 / (1.0 + std::exp(-lap.mode(i)));
        h(i, i) += t.n(i) * p * (1.0 - p);
    }
    EXPECT_LT((lap.neg_hessian - h).cwiseAbs().maxCoeff(), 1e-6 * h.cwiseAbs().maxCoeff());
}

TEST(Preconditioner, CoordinateMapsAreInverse) {
    const Toy t = toy(20, 6);
    const LatentTarget target(t.y, t.n, t.mu, t.sigma, 1.2);
    const Preconditioner pc = Preconditioner::from_laplace(laplace_mode(target), target);
    Rng rng(1);
    const Eigen::VectorXd z = standard_normal(rng, 20);
    EXPECT_LT((pc.to_z(pc.to_w(z)) - z).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(ZTargets, AgreeWithLatentDensityUpToConstant) {
    const Toy t = toy(25, 8);
    const LatentTarget target(t.y, t.n, t.mu, t.sigma, 1.2);
    const Preconditioner pc = Preconditioner::from_laplace(laplace_mode(target), target);
    const AnchoredZTarget anchored(target, pc);
    const GeneralZTarget general(target, pc);
    Rng rng(4);
    const Eigen::VectorXd z0 = Eigen::VectorXd::Zero(25);
    const Eigen::VectorXd z1 = standard_normal(rng, 25);
    Eigen::VectorXd g, w;
    const double base = target.log_density(pc.to_w(z0)) - target.log_density(pc.to_w(z1));
    const double a = anchored.eval(z0, g, w) - anchored.eval(z1, g, w);
    const double b = general.eval(z0, g, w) - general.eval(z1, g, w);
    EXPECT_NEAR(a, base, 1e-8 * (1.0 + std::abs(base)));
    EXPECT_NEAR(b, base, 1e-8 * (1.0 + std::abs(base)));

    Eigen::VectorXd ga, gb;
    anchored.eval(z1, ga, w);
    general.eval(z1, gb, w);
    const Eigen::VectorXd fd = oracle::numerical_gradient(
        [&](const Eigen::VectorXd& x) { return target.log_density(pc.to_w(x)); }, z1);
    EXPECT_LT((ga - fd).lpNorm<Eigen::Infinity>(), 1e-6 * (1.0 + fd.lpNorm<Eigen::Infinity>()));
    EXPECT_LT((gb - fd).lpNorm<Eigen::Infinity>(), 1e-6 * (1.0 + fd.lpNorm<Eigen::Infinity>()));
}

TEST(Mala, AcceptanceIsTunedAfterBurnIn) {
    const Toy t = toy(50, 11);
    const LatentTarget target(t.y, t.n, t.mu, t.sigma, 1.2);
    MalaControl ctl;
    ctl.n_samples = 2000;
    ctl.burn_in = 2000;
    ctl.thin = 2;
    const MalaResult r = mala_sample(target, ctl, 3);
    EXPECT_NEAR(r.acceptance, 0.574, 0.05);
    EXPECT_EQ(r.samples.cols(), 2000);
    const MalaResult again = mala_sample(target, ctl, 3);
    EXPECT_EQ(r.samples, again.samples);
}

TEST(Mala, RecoversGaussianTargetWithoutData) {
    // n = 0: the conditional law of W is the prior N(mu, Sigma).
    Toy t = toy(6, 12);
    t.y.setZero();
    t.n.setZero();
    const LatentTarget target(t.y, t.n, t.mu, t.sigma, 1.2);
    MalaControl ctl;
    ctl.n_samples = 20000;
    ctl.burn_in = 1000;
    ctl.thin = 2;
    const MalaResult r = mala_sample(target, ctl, 5);
    const Eigen::VectorXd mean = r.samples.rowwise().mean();
    const Eigen::MatrixXd c = r.samples.colwise() - mean;
    const Eigen::MatrixXd cov = c * c.transpose() / static_cast<double>(r.samples.cols() - 1);
    for (int i = 0; i < 6; ++i) {
        const double se = std::sqrt(t.sigma(i, i) / 20000.0) * 2.0;  // two for autocorrelation
        EXPECT_NEAR(mean(i), t.mu(i), 4.0 * se);
        EXPECT_NEAR(cov(i, i) / t.sigma(i, i), 1.0, 0.1);
    }
}

TEST(Mala, StepSizeAdaptation) {
    MalaChain c;
    c.h = 1.0;
    adapt_step_size(c, 1.0, 0);
    EXPECT_NEAR(c.h, std::exp(1.0 - 0.574), 1e-12);
    adapt_step_size(c, 0.0, 3);
    EXPECT_LT(c.h, std::exp(1.0 - 0.574));
    EXPECT_NEAR(default_step_size(1000), 0.272, 1e-12);
}

TEST(ProfiledMode, IsStationaryInBetaAndW) {
    const Toy t = toy(30, 13);
    Eigen::MatrixXd d(30, 2);
    for (int i = 0; i < 30; ++i) d.row(i) << 1.0, i / 30.0;
    const ProfiledMode m = profiled_joint_mode(t.y, t.n, d, t.sigma, 1.2);
    const Eigen::MatrixXd q = t.sigma.inverse();
    const Eigen::VectorXd r = m.w - d * m.beta;
    Eigen::VectorXd gw(30);
    for (int i = 0; i < 30; ++i) gw(i) = t.y(i) - t.n(i) / (1.0 + std::exp(-m.w(i)));
    gw -= q * r;
    EXPECT_LT(gw.lpNorm<Eigen::Infinity>(), 1e-6);
    EXPECT_LT((d.transpose() * q * r).lpNorm<Eigen::Infinity>(), 1e-6);
}
