#include "rbstein/errors.hpp"
#include "rbstein/linalg.hpp"
#include "rbstein/svgd.hpp"

#include <boost/math/tools/minima.hpp>
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

using namespace rbstein;

namespace {

Vector vec(std::initializer_list<double> v) {
    Vector out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

Matrix random_particles(int d, int n, std::uint64_t seed, double sd = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, sd);
    Matrix p(d, n);
    for (int j = 0; j < n; ++j)
        for (int i = 0; i < d; ++i) p(i, j) = g(rng);
    return p;
}

// Hand-rolled phi for k(a, b) = exp(-|a - b|^2 / h), one coordinate at a time.
Matrix phi_oracle(const Matrix& x, const Matrix& s, double h) {
    const auto d = x.rows(), n = x.cols();
    Matrix out = Matrix::Zero(d, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            double dist2 = 0.0;
            for (Eigen::Index c = 0; c < d; ++c) dist2 += (x(c, j) - x(c, i)) * (x(c, j) - x(c, i));
            const double k = std::exp(-dist2 / h);
            for (Eigen::Index c = 0; c < d; ++c) out(c, i) += k * s(c, j) - 2.0 / h * (x(c, j) - x(c, i)) * k;
        }
    }
    return out / static_cast<double>(n);
}

// x' = x, y = x + theta: the one-step predictive log-likelihood is quadratic in theta.
StateSpaceModel offset_model(double q, double r) {
    StateSpaceModel m;
    m.id = "offset";
    m.nx = m.ny = m.ntheta = 1;
    m.transform = ThetaTransform::identity(1);
    m.transition = [](const Vector& x, const Vector&, const Vector&) { return x; };
    m.measurement = [](const Vector& x, const Vector& th) { return Vector(x.array() + th(0)); };
    m.linearized_transition = [](const Vector& x, const Vector&, const Vector&) {
        return Linearization{x, Matrix::Identity(1, 1)};
    };
    m.linearized_measurement = [](const Vector& x, const Vector& th) {
        return Linearization{Vector(x.array() + th(0)), Matrix::Identity(1, 1)};
    };
    m.process_cov = [q](const Vector&) { return Matrix(Matrix::Constant(1, 1, q)); };
    m.measurement_cov = [r](const Vector&) { return Matrix(Matrix::Constant(1, 1, r)); };
    return m;
}

// Scalar AR predictive log-likelihood written out directly.
double ar_loglik(double theta, double y, double m, double p, double q, double r) {
    const double mean = theta * m;
    const double s = theta * theta * p + q + r;
    return -0.5 * (std::log(2 * std::numbers::pi * s) + (y - mean) * (y - mean) / s);
}

}  // namespace

// --- kernels -------------------------------------------------------------------

TEST(RbfKernel, SelfValueAndZeroGradient) {
    const Vector a = vec({0.3, -1.2});
    const KernelEval k = rbf_kernel(a, a, 0.7);
    EXPECT_EQ(k.value, 1.0);
    EXPECT_EQ(k.grad_wrt_first, Vector::Zero(2));
}

TEST(RbfKernel, SymmetricAndBounded) {
    const Matrix p = random_particles(3, 10, 4);
    for (int i = 0; i < 10; ++i)
        for (int j = 0; j < 10; ++j) {
            const double v = rbf_kernel(p.col(i), p.col(j), 1.3).value;
            EXPECT_EQ(v, rbf_kernel(p.col(j), p.col(i), 1.3).value);
            EXPECT_GT(v, 0.0);
            EXPECT_LE(v, 1.0);
        }
}

TEST(RbfKernel, DirectArithmetic) {
    const KernelEval k = rbf_kernel(vec({1.0, 0.0}), vec({0.0, 0.0}), 2.0);
    EXPECT_NEAR(k.value, std::exp(-0.5), 1e-15);
    EXPECT_NEAR(k.value, 0.60653, 1e-5);
    EXPECT_NEAR(k.grad_wrt_first(0), -std::exp(-0.5), 1e-15);
    EXPECT_EQ(k.grad_wrt_first(1), 0.0);
}

TEST(RbfKernel, GramMatrixIsSymmetricPsd) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        const Matrix p = random_particles(1 + static_cast<int>(seed % 4), 5 + static_cast<int>(seed), seed);
        const Matrix k = rbf_gram(p, median_bandwidth(p));
        EXPECT_LE((k - k.transpose()).cwiseAbs().maxCoeff(), 0.0);
        EXPECT_GE(Eigen::SelfAdjointEigenSolver<Matrix>(k).eigenvalues().minCoeff(), -1e-10);
    }
}

TEST(MedianBandwidth, Examples) {
    Matrix two(1, 2);
    two << 0.0, 1.0;
    EXPECT_NEAR(median_bandwidth(two), 1.0 / std::log(3.0), 1e-15);
    EXPECT_NEAR(median_bandwidth(two), 0.9102, 1e-4);
    EXPECT_EQ(median_bandwidth(Matrix::Constant(2, 6, 0.4)), 1.0);
    const Matrix p = random_particles(2, 9, 3);
    EXPECT_NEAR(median_bandwidth(3.0 * p), 9.0 * median_bandwidth(p), 1e-12);
}

// --- phi ------------------------------------------------------------------------

TEST(PhiHat, SingleParticleIsScore) {
    const Matrix p = vec({0.4, 1.0});
    const Matrix s = vec({-0.3, 2.0});
    EXPECT_LE((phi_hat_rbf(p, s, 0.8) - s).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(PhiHat, ZeroScoresRepel) {
    Matrix p(1, 2);
    p << -0.5, 0.5;
    const Matrix phi = phi_hat_rbf(p, Matrix::Zero(1, 2), 1.0);
    EXPECT_LT(phi(0, 0), 0.0);
    EXPECT_GT(phi(0, 1), 0.0);
}

TEST(PhiHat, StandardNormalThreeParticlesMatchesDoubleLoop) {
    Matrix p(1, 3);
    p << -0.7, 0.1, 1.6;
    const Matrix s = -p;
    const double h = median_bandwidth(p);
    const Matrix expected = phi_oracle(p, s, h);
    EXPECT_LE((phi_hat_rbf(p, s, h) - expected).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((phi_hat(p, s, [h](const Vector& a, const Vector& b) { return rbf_kernel(a, b, h); }) - expected)
                  .cwiseAbs()
                  .maxCoeff(),
              1e-12);
}

TEST(PhiHat, VectorizedEqualsDoubleLoopOnRandomSets) {
    for (std::uint64_t seed = 1; seed <= 25; ++seed) {
        const int d = 1 + static_cast<int>(seed % 5);
        const Matrix p = random_particles(d, 3 + static_cast<int>(seed % 9), seed);
        const Matrix s = random_particles(d, static_cast<int>(p.cols()), seed + 100, 2.0);
        const double h = median_bandwidth(p);
        EXPECT_LE((phi_hat_rbf(p, s, h) - phi_oracle(p, s, h)).cwiseAbs().maxCoeff(), 1e-12) << seed;
    }
}

TEST(PhiHat, TranslationInvariant) {
    const Matrix p = random_particles(2, 8, 6);
    const Vector mu = vec({0.5, -1.0});
    const Vector shift = vec({3.0, 7.5});
    // Target N(mu, I) and its translate N(mu + shift, I).
    const Matrix s = -(p.colwise() - mu);
    const Matrix moved = p.colwise() + shift;
    const Matrix s_moved = -(moved.colwise() - (mu + shift));
    const Matrix a = phi_hat_rbf(p, s, median_bandwidth(p));
    const Matrix b = phi_hat_rbf(moved, s_moved, median_bandwidth(moved));
    EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

// --- SVGD iteration ----------------------------------------------------------------

TEST(SvgdIterate, ZeroIterationsKeepParticles) {
    Matrix p = random_particles(1, 10, 2);
    const Matrix before = p;
    SvgdOptions o;
    o.iterations = 0;
    svgd_iterate(p, [](const Matrix& x) { return Matrix(-x); }, o);
    EXPECT_EQ(p, before);
}

TEST(SvgdIterate, ConvergesToStandardNormalMoments) {
    Matrix p = random_particles(1, 50, 3, 0.5);
    p.array() += 3.0;
    SvgdOptions o;
    o.epsilon = 0.1;
    o.iterations = 500;
    int calls = 0;
    o.observer = [&calls](int m, const Matrix&) { EXPECT_EQ(m, ++calls); };
    svgd_iterate(p, [](const Matrix& x) { return Matrix(-x); }, o);
    EXPECT_EQ(calls, 500);
    const double mean = p.mean();
    const double sd = std::sqrt((p.array() - mean).square().sum() / (p.cols() - 1));
    EXPECT_NEAR(mean, 0.0, 0.05);
    EXPECT_NEAR(sd, 1.0, 0.1);
}

TEST(SvgdIterate, NonFiniteParticleNamesIteration) {
    Matrix p = random_particles(1, 4, 1);
    SvgdOptions o;
    o.epsilon = 1.0;
    o.iterations = 5;
    int call = 0;
    auto scores = [&call](const Matrix& x) {
        ++call;
        Matrix s = Matrix::Zero(x.rows(), x.cols());
        if (call == 3) s(0, 0) = std::numeric_limits<double>::infinity();
        return s;
    };
    try {
        svgd_iterate(p, scores, o);
        FAIL() << "expected ParticleDiverged";
    } catch (const ParticleDiverged& e) {
        EXPECT_EQ(e.iteration(), 3);
    }
}

TEST(SvgdIterate, AdamFixedPointAtZeroDirection) {
    // A lone particle at the mode of N(0, 1) has phi = 0, which bias correction must keep at 0.
    Matrix p(1, 1);
    p << 0.0;
    std::vector<AdamState> adam(1, AdamState::zeros(1));
    SvgdOptions o;
    o.adam = true;
    o.iterations = 10;
    svgd_iterate(p, [](const Matrix& x) { return Matrix(-x); }, o, &adam);
    EXPECT_EQ(p(0, 0), 0.0);
    EXPECT_EQ(adam[0].m, 10);
}

// --- scores through the Kalman likelihood -----------------------------------------

TEST(LikelihoodGrad, SignFollowsMeasurement) {
    const StateSpaceModel m = make_scalar_ar_model(0.01, 0.01);
    const GaussianBelief prev{Vector::Constant(1, 1.0), Matrix::Constant(1, 1, 0.01)};
    EXPECT_GT(likelihood_grad(vec({0.5}), vec({0.9}), Vector(0), prev, m)(0), 0.0);
    EXPECT_LT(likelihood_grad(vec({0.5}), vec({0.1}), Vector(0), prev, m)(0), 0.0);
}

TEST(LikelihoodGrad, QuadraticLogLikelihoodMatchesAnalytic) {
    const StateSpaceModel m = offset_model(0.1, 0.3);
    const GaussianBelief prev{Vector::Constant(1, 0.4), Matrix::Constant(1, 1, 0.2)};
    const double s = 0.2 + 0.1 + 0.3;
    for (double theta : {-1.0, 0.0, 0.25, 2.0}) {
        const double y = 1.1;
        const double analytic = (y - 0.4 - theta) / s;
        EXPECT_NEAR(likelihood_grad(vec({theta}), vec({y}), Vector(0), prev, m)(0), analytic, 1e-6);
    }
}

TEST(LikelihoodGrad, MatchesIndependentLogLikelihood) {
    const double q = 0.05, r = 0.2;
    const StateSpaceModel m = make_scalar_ar_model(q, r);
    const GaussianBelief prev{Vector::Constant(1, 0.8), Matrix::Constant(1, 1, 0.3)};
    for (double theta : {-0.5, 0.3, 0.9, 1.4}) {
        const double y = 0.55;
        const double d = 1e-5 * (1 + std::abs(theta));
        const double oracle = (ar_loglik(theta + d, y, 0.8, 0.3, q, r) - ar_loglik(theta - d, y, 0.8, 0.3, q, r)) / (2 * d);
        EXPECT_NEAR(likelihood_grad(vec({theta}), vec({y}), Vector(0), prev, m)(0), oracle, 1e-9);
        EXPECT_NEAR(predictive_log_likelihood(vec({theta}), vec({y}), Vector(0), prev, m),
                    ar_loglik(theta, y, 0.8, 0.3, q, r), 1e-12);
    }
}

TEST(LikelihoodGrad, VanishesAtMaximum) {
    const double q = 0.05, r = 0.2;
    const StateSpaceModel m = make_scalar_ar_model(q, r);
    const GaussianBelief prev{Vector::Constant(1, 1.2), Matrix::Constant(1, 1, 0.1)};
    const Vector y = vec({0.9});
    const auto [theta_star, neg] = boost::math::tools::brent_find_minima(
        [&](double t) { return -predictive_log_likelihood(vec({t}), y, Vector(0), prev, m); }, -2.0, 2.0, 50);
    (void)neg;
    EXPECT_LE(likelihood_grad(vec({theta_star}), y, Vector(0), prev, m).norm(), 1e-3);
}

TEST(LikelihoodGrad, OneSidedFallbackAndUnavailable) {
    StateSpaceModel m = offset_model(0.1, 0.3);
    // Variance turns invalid just above theta = 1.
    m.measurement_cov = [](const Vector& th) { return Matrix(Matrix::Constant(1, 1, th(0) < 1.0 ? 0.3 : -1.0)); };
    const GaussianBelief prev{Vector::Constant(1, 0.4), Matrix::Constant(1, 1, 0.2)};
    const double theta = 1.0 - 1e-6;
    const double g = likelihood_grad(vec({theta}), vec({1.1}), Vector(0), prev, m)(0);
    EXPECT_NEAR(g, (1.1 - 0.4 - theta) / 0.6, 1e-4);

    m.measurement_cov = [](const Vector&) { return Matrix(Matrix::Constant(1, 1, -1.0)); };
    EXPECT_THROW(likelihood_grad(vec({0.0}), vec({1.1}), Vector(0), prev, m), GradientUnavailable);
}

TEST(PosteriorScore, PriorTermVanishesAtItsMean) {
    Matrix p(1, 3);
    p << 0.2, 0.5, 0.8;
    const GaussianPrior prior = GaussianPrior::fit(p);
    const Vector lik = vec({0.37});
    EXPECT_LE((posterior_score(lik, prior.mean, PriorMode::MomentFit, &prior, nullptr) - lik).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(PosteriorScore, PriorOnlyPointsToMean) {
    const Matrix p = random_particles(2, 12, 8);
    const GaussianPrior prior = GaussianPrior::fit(p);
    const Vector theta = prior.mean + vec({1.0, -2.0});
    const Vector s = posterior_score(Vector::Zero(2), theta, PriorMode::MomentFit, &prior, nullptr);
    EXPECT_LT(s.dot(theta - prior.mean), 0.0);
}

TEST(PosteriorScore, ConjugateGaussianClosedForm) {
    const StateSpaceModel m = offset_model(0.1, 0.3);
    const GaussianBelief prev{Vector::Constant(1, 0.4), Matrix::Constant(1, 1, 0.2)};
    GaussianPrior prior{vec({0.5}), Matrix::Constant(1, 1, 1.0 / 0.04)};
    const double y = 1.1, s = 0.6;
    for (double theta : {0.0, 0.5, 0.9}) {
        const Vector lik = likelihood_grad(vec({theta}), vec({y}), Vector(0), prev, m);
        const double analytic = (y - 0.4 - theta) / s - (theta - 0.5) / 0.04;
        EXPECT_NEAR(posterior_score(lik, vec({theta}), PriorMode::MomentFit, &prior, nullptr)(0), analytic, 1e-5);
    }
    const Vector prev_score = vec({2.5});
    EXPECT_NEAR(posterior_score(vec({1.0}), vec({0.0}), PriorMode::PreviousScore, nullptr, &prev_score)(0), 3.5, 1e-15);
    EXPECT_EQ(posterior_score(vec({1.0}), vec({0.0}), PriorMode::LikelihoodOnly, &prior, &prev_score)(0), 1.0);
}

TEST(GaussianPrior, MomentFitWithRidge) {
    Matrix p(1, 4);
    p << 1.0, 2.0, 3.0, 4.0;
    const GaussianPrior prior = GaussianPrior::fit(p);
    EXPECT_NEAR(prior.mean(0), 2.5, 1e-15);
    EXPECT_NEAR(1.0 / prior.precision(0, 0), 1.25 + 1e-6, 1e-12);
}

// --- RBSGD step ----------------------------------------------------------------------

TEST(RbsgdStep, ZeroStepFreezesParticlesAndRunsIndependentEkfs) {
    const StateSpaceModel m = make_scalar_ar_model(0.1, 0.2);
    Matrix thetas(1, 3);
    thetas << 0.3, 0.6, 0.9;
    const GaussianBelief b0{Vector::Constant(1, 1.0), Matrix::Identity(1, 1)};
    ParticleEnsemble ens = make_ensemble(thetas, b0, 1);
    RbsgdConfig cfg;
    cfg.epsilon = 0.0;
    cfg.iterations = 3;
    const Vector y = vec({0.7});
    rbsgd_step(ens, y, Vector(0), m, cfg);
    EXPECT_EQ(ens.thetas, thetas);
    for (int i = 0; i < 3; ++i) {
        const GaussianBelief ref = ekf_update(ekf_predict(b0, Vector(0), thetas.col(i), m), y, thetas.col(i), m).belief;
        EXPECT_EQ(ens.beliefs[static_cast<std::size_t>(i)].mean, ref.mean);
        EXPECT_EQ(ens.beliefs[static_cast<std::size_t>(i)].cov, ref.cov);
    }
}

TEST(RbsgdStep, SingleParticleIsGradientAscent) {
    const StateSpaceModel m = make_scalar_ar_model(0.1, 0.2);
    const GaussianBelief b0{Vector::Constant(1, 1.0), Matrix::Constant(1, 1, 0.5)};
    ParticleEnsemble ens = make_ensemble(Matrix::Constant(1, 1, 0.4), b0, 1);
    RbsgdConfig cfg;
    cfg.epsilon = 0.05;
    cfg.iterations = 1;
    cfg.prior_mode = PriorMode::LikelihoodOnly;
    const Vector y = vec({0.9});
    const double g = likelihood_grad(vec({0.4}), y, Vector(0), b0, m)(0);
    rbsgd_step(ens, y, Vector(0), m, cfg);
    EXPECT_NEAR(ens.thetas(0, 0), 0.4 + 0.05 * g, 1e-14);
    EXPECT_EQ(ens.weights(0), 1.0);
}

TEST(RbsgdStep, KalmanUpdatePrecedesTransport) {
    const StateSpaceModel m = make_scalar_ar_model(0.1, 0.2);
    ParticleEnsemble ens = make_ensemble(random_particles(1, 4, 3, 0.2), {Vector::Ones(1), Matrix::Identity(1, 1)}, 1);
    std::vector<std::string> calls;
    RbsgdConfig cfg;
    cfg.iterations = 3;
    cfg.trace = [&calls](std::string_view s) { calls.emplace_back(s); };
    rbsgd_step(ens, vec({0.5}), Vector(0), m, cfg);
    ASSERT_EQ(calls.size(), 7u);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(calls[i], "ekf");
    for (std::size_t i = 4; i < 7; ++i) EXPECT_EQ(calls[i], "transport");
}

TEST(RbsgdStep, WeightsStayUniform) {
    const StateSpaceModel m = make_scalar_ar_model(0.1, 0.2);
    ParticleEnsemble ens = make_ensemble(random_particles(1, 5, 3, 0.2), {Vector::Ones(1), Matrix::Identity(1, 1)}, 1);
    rbsgd_step(ens, vec({0.5}), Vector(0), m, RbsgdConfig{});
    EXPECT_EQ(ens.weights, Vector::Constant(5, 0.2));
}

TEST(RbsgdStep, RecoversIdentifiableScalarParameter) {
    const double theta_true = 0.8, q = 0.5, r = 0.1;
    const Trajectory traj = simulate_scalar_ar(theta_true, q, r, 1.0, 200, 21);
    const StateSpaceModel m = make_scalar_ar_model(q, r);

    // Grid posterior under a flat prior: one exact Kalman filter per grid point.
    const int g = 1201;
    std::vector<double> grid(g), logp(g, 0.0);
    for (int k = 0; k < g; ++k) {
        const double th = -0.2 + 1.4 * k / (g - 1);
        grid[static_cast<std::size_t>(k)] = th;
        double mean = 0.0, var = 1.0;
        for (std::size_t t = 0; t < traj.length(); ++t) {
            const double y = traj.measurements[t](0);
            const double pm = th * mean, pv = th * th * var + q;
            const double s = pv + r;
            logp[static_cast<std::size_t>(k)] += -0.5 * (std::log(2 * std::numbers::pi * s) + (y - pm) * (y - pm) / s);
            mean = pm + pv / s * (y - pm);
            var = pv - pv * pv / s;
        }
    }
    const double mx = *std::max_element(logp.begin(), logp.end());
    double z = 0, m1 = 0, m2 = 0;
    for (int k = 0; k < g; ++k) {
        const double w = std::exp(logp[static_cast<std::size_t>(k)] - mx);
        z += w;
        m1 += w * grid[static_cast<std::size_t>(k)];
        m2 += w * grid[static_cast<std::size_t>(k)] * grid[static_cast<std::size_t>(k)];
    }
    const double post_sd = std::sqrt(m2 / z - (m1 / z) * (m1 / z));

    Matrix init(1, 20);
    for (int i = 0; i < 20; ++i) init(0, i) = 0.3 + 0.02 * i;
    ParticleEnsemble ens = make_ensemble(init, {Vector::Zero(1), Matrix::Identity(1, 1)}, 1);
    RbsgdConfig cfg;
    cfg.epsilon = 1e-2;
    cfg.iterations = 5;
    for (std::size_t t = 0; t < traj.length(); ++t) rbsgd_step(ens, traj.measurements[t], traj.inputs[t], m, cfg);
    EXPECT_LE(std::abs(ens.thetas.mean() - theta_true), 2 * post_sd) << "posterior sd " << post_sd;
}
