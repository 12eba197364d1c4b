#include "stprev/mcml.hpp"
#include "support/oracles.hpp"

#include <gtest/gtest.h>

using namespace stprev;

namespace {

// One record at the origin with prior variance s2 on W.
LatentTarget single_record(double y, double n, double mu, double s2) {
    return LatentTarget(Eigen::VectorXd::Constant(1, y), Eigen::VectorXd::Constant(1, n),
                        Eigen::VectorXd::Constant(1, mu), Eigen::MatrixXd::Constant(1, 1, s2), s2);
}

struct Sim {
    SurveyDataset ds;
    DesignMatrix design;
    ModelParams truth;
};

Sim simulate(int sites, std::vector<double> times, std::uint64_t seed, int n_tested = 100) {
    SimulationDesign sd;
    sd.n_sites = sites;
    sd.times = std::move(times);
    sd.n_tested = n_tested;
    Sim s;
    s.ds = make_design(sd, seed);
    s.design = build_design(s.ds, {});
    s.truth.beta = Eigen::VectorXd::Constant(1, -0.5);
    s.truth.cov.sigma2 = 1.0;
    s.truth.cov.tau2 = 0.2;
    s.truth.cov.phi = 0.2;
    s.truth.cov.psi = 1.0;
    s.ds = simulate_binomial(s.ds, s.design, s.truth, seed + 1);
    return s;
}

McmlControl quick_control(std::size_t B = 400) {
    McmlControl c;
    c.mala.n_samples = B;
    c.mala.burn_in = 300;
    c.mala.thin = 2;
    c.outer_iters = 4;
    c.loglik_draws = 0;
    return c;
}

}  // namespace

TEST(Layout, PackUnpackRoundTrip) {
    ParamLayout l;
    l.n_beta = 2;
    l.free = {true, true, true, true, true, true};
    ModelParams m;
    m.beta = Eigen::Vector2d(0.3, -1.0);
    m.cov.sigma2 = 1.7;
    m.cov.tau2 = 0.34;
    m.cov.phi = 2.5;
    m.cov.psi = 0.8;
    m.cov.delta = 0.6;
    m.cov.xi = 0.3;
    const ModelParams back = l.unpack(l.pack(m), m);
    EXPECT_NEAR(back.cov.sigma2, 1.7, 1e-14);
    EXPECT_NEAR(back.cov.tau2, 0.34, 1e-14);
    EXPECT_NEAR(back.cov.xi, 0.3, 1e-14);
    EXPECT_EQ(back.beta, m.beta);
    EXPECT_EQ(l.names().size(), 8u);
    EXPECT_EQ(l.names()[4], "log_nu2");
    EXPECT_THROW(l.unpack(Eigen::VectorXd::Zero(3), m), Error);
}

TEST(Laplace, SymmetricSingleRecordHasZeroMode) {
    const LaplaceResult r = laplace_mode(single_record(5, 10, 0.0, 1.3));
    EXPECT_NEAR(r.mode(0), 0.0, 1e-12);
}

TEST(Laplace, SingleRecordMatchesGridSearch) {
    const LatentTarget t = single_record(3, 10, 0.0, 1.0);
    const LaplaceResult r = laplace_mode(t);
    double best = -1e300, arg = 0.0;
    for (double w = -5.0; w <= 5.0; w += 1e-6) {
        const double f = 3 * w - 10 * oracle::log1pexp(w) - 0.5 * w * w;
        if (f > best) {
            best = f;
            arg = w;
        }
    }
    EXPECT_NEAR(r.mode(0), arg, 1e-6);
}

TEST(Mala, ProposalMeanIsStateAtZeroGradient) {
    const Eigen::Vector3d z(0.1, -2.0, 0.5);
    EXPECT_EQ(mala_proposal_mean(z, Eigen::Vector3d::Zero(), 0.7), z);
}

TEST(Mala, SingleRecordMeanMatchesQuadrature) {
    const LatentTarget t = single_record(3, 10, 0.2, 1.0);
    double num = 0.0, den = 0.0;
    for (double w = -12.0; w <= 12.0; w += 1e-4) {
        const double f = std::exp(3 * w - 10 * oracle::log1pexp(w) - 0.5 * (w - 0.2) * (w - 0.2));
        num += w * f;
        den += f;
    }
    MalaControl ctl;
    ctl.n_samples = 20000;
    ctl.burn_in = 1000;
    ctl.thin = 1;
    const MalaResult r = mala_sample(t, ctl, 17);
    std::vector<double> v(r.samples.data(), r.samples.data() + r.samples.size());
    const double mean = oracle::mean_se(v).mean;
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size() - 1);
    const double se = std::sqrt(var / effective_sample_size(v));
    EXPECT_NEAR(mean, num / den, 3.0 * se);
}

TEST(Mala, AcceptanceIsMonotoneInStepSize) {
    const Sim s = simulate(20, {0.0}, 4);
    const McmlProblem prob = McmlProblem::from(s.ds, s.design);
    const LatentTarget t = prob.target(s.truth);
    MalaControl ctl;
    ctl.n_samples = 300;
    ctl.burn_in = 0;
    ctl.thin = 1;
    ctl.adapt = false;
    ctl.h0 = 1e-6;
    EXPECT_GT(mala_sample(t, ctl, 1).acceptance, 0.99);
    ctl.h0 = 1e2;
    EXPECT_LT(mala_sample(t, ctl, 1).acceptance, 0.01);
}

namespace {

struct ObjectiveCase {
    Sim sim;
    McmlProblem prob;
    ParamLayout layout;
    Eigen::MatrixXd samples;
};

ObjectiveCase objective_case(std::size_t B) {
    ObjectiveCase c{simulate(25, {0.0, 1.0}, 8), {}, {}, {}};
    c.prob = McmlProblem::from(c.sim.ds, c.sim.design);
    c.layout.n_beta = 1;
    c.layout.free = {true, true, true, true, false, false};
    MalaControl ctl;
    ctl.n_samples = B;
    ctl.burn_in = 300;
    ctl.thin = 2;
    c.samples = mala_sample(c.prob.target(c.sim.truth), ctl, 2).samples;
    return c;
}

}  // namespace

TEST(McmlObjective, IsZeroAtAnchorAndReducesForSingleSample) {
    const ObjectiveCase c = objective_case(300);
    const McmlObjective obj(c.prob, c.samples, c.sim.truth, c.layout);
    const Eigen::VectorXd x0 = c.layout.pack(c.sim.truth);
    EXPECT_EQ(obj.evaluate(x0, false).value, 0.0);

    const McmlObjective one(c.prob, c.samples.leftCols(1), c.sim.truth, c.layout);
    Eigen::VectorXd x = x0;
    x(0) += 0.1;
    x(2) -= 0.2;
    const ModelParams m = c.layout.unpack(x, c.sim.truth);
    const Eigen::MatrixXd s1 = c.prob.sigma(m.cov), s0 = c.prob.sigma(c.sim.truth.cov);
    const Eigen::VectorXd w = c.samples.col(0);
    auto logn = [&](const Eigen::VectorXd& mu, const Eigen::MatrixXd& s) {
        const Eigen::VectorXd r = w - mu;
        return -0.5 * r.dot(s.inverse() * r) - 0.5 * std::log(s.determinant());
    };
    const double expect = logn(c.prob.d * m.beta, s1) - logn(c.prob.d * c.sim.truth.beta, s0);
    EXPECT_NEAR(one.evaluate(x, false).value, expect, 1e-8 * (1.0 + std::abs(expect)));
}

TEST(McmlObjective, GradientMatchesFiniteDifferences) {
    const ObjectiveCase c = objective_case(300);
    ParamLayout full = c.layout;
    full.free = {true, true, true, true, true, true};
    ModelParams anchor = c.sim.truth;
    anchor.cov.delta = 0.5;
    anchor.cov.xi = 0.4;
    for (const ParamLayout& l : {c.layout, full}) {
        const McmlObjective obj(c.prob, c.samples, anchor, l);
        Rng rng(3);
        for (int k = 0; k < 10; ++k) {
            const Eigen::VectorXd x = l.pack(anchor) + 0.05 * standard_normal(rng, static_cast<Eigen::Index>(l.dim()));
            const Eigen::VectorXd g = obj.evaluate(x, true).grad;
            const Eigen::VectorXd fd = oracle::numerical_gradient(
                [&](const Eigen::VectorXd& v) { return obj.evaluate(v, false).value; }, x, 1e-3);
            for (Eigen::Index j = 0; j < g.size(); ++j)
                EXPECT_NEAR(g(j), fd(j), 1e-5 * std::max(1.0, std::abs(fd(j)))) << "coordinate " << j;
        }
    }
}

TEST(McmlObjective, RejectsDegenerateWeights) {
    const ObjectiveCase c = objective_case(200);
    const McmlObjective obj(c.prob, c.samples, c.sim.truth, c.layout);
    Eigen::VectorXd x = c.layout.pack(c.sim.truth);
    x(1) -= 6.0;  // sigma2 shrunk by e^6
    try {
        mcml_objective(obj, x);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::DegenerateWeights);
    }
}

TEST(LogLikelihoodIs, MatchesQuadratureOnThreeRecords) {
    SurveyDataset ds;
    const double xs[] = {0.0, 0.3, 0.8};
    const int ys[] = {4, 9, 2};
    for (int i = 0; i < 3; ++i) {
        SurveyRecord r;
        r.id = std::to_string(i);
        r.x = xs[i];
        r.n_tested = 15;
        r.n_positive = ys[i];
        ds.records.push_back(r);
    }
    const DesignMatrix d = build_design(ds, {});
    const McmlProblem prob = McmlProblem::from(ds, d);
    ModelParams m;
    m.beta = Eigen::VectorXd::Constant(1, -0.4);
    m.cov.sigma2 = 0.9;
    m.cov.tau2 = 0.2;
    m.cov.phi = 0.5;
    const double ref = oracle::log_marginal_quadrature(prob.y, prob.n, prob.d * m.beta, prob.sigma(m.cov), 30);
    EXPECT_NEAR(log_likelihood_is(prob, m, 20000, 1), ref, 2e-3);
}

TEST(FitMcml, NegligibleCovarianceReducesToLogisticRegression) {
    Sim s = simulate(60, {0.0}, 21, 30);
    std::vector<ColumnSpec> specs;
    for (auto& r : s.ds.records) r.covariates = {r.x};
    s.ds.design_columns = {"x"};
    ColumnSpec c;
    c.source = "x";
    specs.push_back(c);
    const DesignMatrix d = build_design(s.ds, specs);
    // IRLS reference
    Eigen::Vector2d b = Eigen::Vector2d::Zero();
    const Eigen::VectorXd y = s.ds.positives(), n = s.ds.tested();
    for (int it = 0; it < 50; ++it) {
        const Eigen::VectorXd eta = d.rows * b;
        Eigen::VectorXd g(eta.size()), w(eta.size());
        for (Eigen::Index i = 0; i < eta.size(); ++i) {
            const double p = 1.0 / (1.0 + std::exp(-eta(i)));
            g(i) = y(i) - n(i) * p;
            w(i) = n(i) * p * (1 - p);
        }
        b += (d.rows.transpose() * w.asDiagonal() * d.rows).ldlt().solve(d.rows.transpose() * g);
    }
    ModelParams init;
    init.beta = Eigen::Vector2d::Zero();
    init.cov.sigma2 = 1e-8;
    init.cov.tau2 = 1e-8;
    init.cov.phi = 0.1;
    McmlControl ctl = quick_control(300);
    ctl.free = {false, false, false, false, false, false};
    const FittedModel f = fit_mcml(s.ds, d, init, ctl, 5);
    EXPECT_NEAR(f.params.beta(0), b(0), 1e-3);
    EXPECT_NEAR(f.params.beta(1), b(1), 1e-3);
}

TEST(FitMcml, DeterministicAndWellFormed) {
    const Sim s = simulate(30, {0.0, 1.0}, 31);
    const McmlControl ctl = quick_control();
    const FittedModel a = fit_mcml(s.ds, s.design, s.truth, ctl, 9);
    const FittedModel b = fit_mcml(s.ds, s.design, s.truth, ctl, 9);
    EXPECT_EQ(a.lambda_hat, b.lambda_hat);
    EXPECT_EQ(a.hessian, b.hessian);
    EXPECT_TRUE(a.lambda_hat.allFinite());
    EXPECT_EQ(a.lambda_hat.size(), 5);
    EXPECT_EQ(a.lambda0_path.size(), static_cast<std::size_t>(a.outer_iterations));
    EXPECT_EQ(a.B, ctl.mala.n_samples);
}

TEST(FitMcml, SingleTimeFixesTemporalParameters) {
    const Sim s = simulate(30, {0.0}, 32);
    const FittedModel f = fit_mcml(s.ds, s.design, s.truth, quick_control(), 1);
    EXPECT_FALSE(f.layout.free[static_cast<int>(CovCoord::LogPsi)]);
    EXPECT_EQ(f.lambda_hat.size(), 4);
    EXPECT_EQ(f.params.cov.psi, s.truth.cov.psi);
}

TEST(SamplingDistribution, DrawsMatchMeanAndCovariance) {
    FittedModel f;
    f.layout.n_beta = 1;
    f.layout.free = {true, true, false, false, false, false};
    f.params.beta = Eigen::VectorXd::Constant(1, 0.5);
    f.lambda_hat = Eigen::Vector3d(0.5, 0.1, -1.0);
    Eigen::Matrix3d h;
    h << -40, 5, 2, 5, -30, 1, 2, 1, -20;
    f.hessian = h;
    const GaussianApprox ga = mle_sampling_distribution(f);
    EXPECT_LT((ga.cov - (-h).inverse()).norm(), 1e-12);
    const Eigen::MatrixXd v = ga.draw_vectors(100000, 4);
    const Eigen::VectorXd mean = v.rowwise().mean();
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(mean(j), f.lambda_hat(j), 3.0 * std::sqrt(ga.cov(j, j) / 100000.0) + 1e-12);
    const Eigen::MatrixXd c = v.colwise() - mean;
    const Eigen::MatrixXd cov = c * c.transpose() / 99999.0;
    EXPECT_LT((cov - ga.cov).norm() / ga.cov.norm(), 0.05);
    EXPECT_EQ(ga.draw(3, 1).size(), 3u);

    const auto iv = ga.intervals();
    const double sd = std::sqrt(ga.cov(1, 1));
    EXPECT_NEAR(iv[1].lower, 0.1 - 1.959963984540054 * sd, 1e-12);
    const auto nat = natural_scale(iv);
    EXPECT_EQ(nat[1].name, "sigma2");
    EXPECT_NEAR(nat[1].lower, std::exp(iv[1].lower), 1e-14);
    EXPECT_EQ(nat[0].name, "beta0");

    f.hessian = -h;
    EXPECT_THROW(mle_sampling_distribution(f), Error);
}

TEST(Bootstrap, RejectsZeroReplicatesAndKeepsDesign) {
    const Sim s = simulate(20, {0.0}, 41);
    FittedModel f = fit_mcml(s.ds, s.design, s.truth, quick_control(200), 2);
    EXPECT_THROW(parametric_bootstrap(f, s.ds, s.design, 0, 1), Error);
    const SurveyDataset sim = simulate_binomial(s.ds, s.design, f.params, derive_seed(7, "bootstrap", 0));
    for (std::size_t i = 0; i < sim.size(); ++i) {
        EXPECT_EQ(sim.records[i].x, s.ds.records[i].x);
        EXPECT_EQ(sim.records[i].n_tested, s.ds.records[i].n_tested);
        EXPECT_LE(sim.records[i].n_positive, sim.records[i].n_tested);
    }
    const BootstrapSet b = parametric_bootstrap(f, s.ds, s.design, 3, 7);
    EXPECT_EQ(b.replicates.rows() + static_cast<Eigen::Index>(b.failures), 3);
    EXPECT_EQ(b.replicates.cols(), static_cast<Eigen::Index>(f.layout.dim()));
    EXPECT_EQ(b.params().size(), static_cast<std::size_t>(b.replicates.rows()));
}

TEST(Profile, DevianceIsZeroAtOptimumAndNonNegative) {
    const Sim s = simulate(20, {0.0, 1.0}, 51);
    McmlControl ctl = quick_control(200);
    ctl.outer_iters = 2;
    ctl.loglik_draws = 500;
    const ProfileResult p = profile_deviance_xi(s.ds, s.design, s.truth, {0.0, 0.5, 1.0}, ctl, 3);
    ASSERT_EQ(p.points.size(), 3u);
    double mn = 1e300;
    for (const auto& pt : p.points) {
        EXPECT_GE(pt.deviance, -1e-6);
        mn = std::min(mn, pt.deviance);
    }
    EXPECT_EQ(mn, 0.0);
    EXPECT_NEAR(p.chi2_reference, 3.841458820694124, 1e-15);
    EXPECT_THROW(profile_deviance_xi(s.ds, s.design, s.truth, {1.5}, ctl, 3), Error);
}
