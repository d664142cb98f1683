#include "../support/oracles.hpp"
#include "rbstein/ekf.hpp"
#include "rbstein/errors.hpp"

#include <gtest/gtest.h>

#include <array>
#include <numbers>
#include <random>

using namespace rbstein;

namespace {

Matrix mat2(double a, double b, double c, double d) {
    Matrix m(2, 2);
    m << a, b, c, d;
    return m;
}

StateSpaceModel constant_velocity(double ts, double q, double r) {
    Matrix c(1, 2);
    c << 1.0, 0.0;
    return make_linear_model(mat2(1, ts, 0, 1), Matrix(2, 0), c, q * Matrix::Identity(2, 2), Matrix::Constant(1, 1, r));
}

// Scalar-loop bioreactor RK4 and its central-difference Jacobian.
using A3 = std::array<double, 3>;

A3 reactor_field(const A3& x, double eta, const BioreactorParams& p) {
    const double s = x[1] > 0 ? x[1] : 0.0;
    const double mu = p.mu_max * s / (p.k_s + s + s * s / p.k_i) * eta;
    return {mu * x[0], -mu * x[0] / p.y_xs, p.y_px * mu * x[0]};
}

A3 reactor_rk4(const A3& x, double eta, const BioreactorParams& p) {
    auto axpy = [](const A3& a, double h, const A3& k) { return A3{a[0] + h * k[0], a[1] + h * k[1], a[2] + h * k[2]}; };
    const double h = p.ts;
    const A3 k1 = reactor_field(x, eta, p);
    const A3 k2 = reactor_field(axpy(x, h / 2, k1), eta, p);
    const A3 k3 = reactor_field(axpy(x, h / 2, k2), eta, p);
    const A3 k4 = reactor_field(axpy(x, h, k3), eta, p);
    A3 out{};
    for (int i = 0; i < 3; ++i) out[i] = x[i] + h / 6 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]);
    return out;
}

}  // namespace

TEST(EkfPredict, IdentityWithoutNoiseKeepsBelief) {
    const StateSpaceModel m = make_linear_model(Matrix::Identity(2, 2), Matrix(2, 0), Matrix::Identity(2, 2),
                                                Matrix::Zero(2, 2), Matrix::Identity(2, 2));
    const GaussianBelief b{Vector::Constant(2, 0.7), mat2(2.0, 0.3, 0.3, 1.0)};
    const GaussianBelief out = ekf_predict(b, Vector(0), Vector::Zero(1), m);
    EXPECT_EQ(out.mean, b.mean);
    EXPECT_EQ(out.cov, b.cov);
}

TEST(EkfPredict, LinearCovarianceClosedForm) {
    const double ts = 0.1, q = 0.01;
    const StateSpaceModel m = constant_velocity(ts, q, 1.0);
    const Matrix a = mat2(1, ts, 0, 1);
    const GaussianBelief b{Vector::Constant(2, 1.0), mat2(1.0, 0.2, 0.2, 0.5)};
    const GaussianBelief out = ekf_predict(b, Vector(0), Vector::Zero(1), m);
    EXPECT_LE((out.cov - (a * b.cov * a.transpose() + q * Matrix::Identity(2, 2))).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LE((out.mean - a * b.mean).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(EkfPredict, BioreactorMatchesScalarLoopOracle) {
    const BioreactorParams p;
    const Trajectory traj = simulate_bioreactor(p, 1, 1);
    const double eta = traj.true_params[0](0);
    const StateSpaceModel m = make_bioreactor_model(p);

    Matrix p0(3, 3);
    p0 << 1e-2, 1e-3, 0, 1e-3, 2e-2, 0, 0, 0, 1e-3;
    const GaussianBelief b{p.x0, p0};
    const GaussianBelief out = ekf_predict(b, Vector(0), Vector::Constant(1, eta), m);

    const A3 x0{p.x0(0), p.x0(1), p.x0(2)};
    const A3 mean = reactor_rk4(x0, eta, p);
    double f[3][3];
    for (int j = 0; j < 3; ++j) {
        const double h = 1e-5 * (1 + std::abs(x0[j]));
        A3 xp = x0, xm = x0;
        xp[j] += h;
        xm[j] -= h;
        const A3 fp = reactor_rk4(xp, eta, p), fm = reactor_rk4(xm, eta, p);
        for (int i = 0; i < 3; ++i) f[i][j] = (fp[i] - fm[i]) / (2 * h);
    }
    for (int i = 0; i < 3; ++i) {
        EXPECT_NEAR(out.mean(i), mean[i], 1e-12);
        for (int j = 0; j < 3; ++j) {
            double s = i == j ? p.q : 0.0;
            for (int k = 0; k < 3; ++k)
                for (int l = 0; l < 3; ++l) s += f[i][k] * p0(k, l) * f[j][l];
            EXPECT_NEAR(out.cov(i, j), s, 1e-8) << i << "," << j;
        }
    }
}

TEST(EkfPredict, NonFiniteRaisesFilterDiverged) {
    const StateSpaceModel m = make_scalar_ar_model(1.0, 1.0);
    const GaussianBelief b{Vector::Constant(1, 1e300), Matrix::Identity(1, 1)};
    EXPECT_THROW(ekf_predict(b, Vector(0), Vector::Constant(1, 1e10), m), FilterDiverged);
}

TEST(EkfUpdate, ScalarGainIsHalf) {
    const StateSpaceModel m = make_scalar_ar_model(0.0, 1.0);
    const GaussianBelief pred{Vector::Zero(1), Matrix::Identity(1, 1)};
    const UpdateResult r = ekf_update(pred, Vector::Constant(1, 2.0), Vector::Constant(1, 1.0), m);
    EXPECT_DOUBLE_EQ(r.diagnostics.kalman_gain(0, 0), 0.5);
    EXPECT_DOUBLE_EQ(r.belief.mean(0), 1.0);
    EXPECT_DOUBLE_EQ(r.belief.cov(0, 0), 0.5);
}

TEST(EkfUpdate, ZeroInnovationKeepsMeanAndShrinksCov) {
    const StateSpaceModel m = constant_velocity(0.1, 0.01, 0.3);
    const GaussianBelief pred{Vector::Constant(2, 0.4), mat2(1.0, 0.2, 0.2, 0.5)};
    const UpdateResult r = ekf_update(pred, Vector::Constant(1, 0.4), Vector::Zero(1), m);
    EXPECT_LE((r.belief.mean - pred.mean).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_LE(r.belief.cov.trace(), pred.cov.trace());
}

TEST(EkfUpdate, LinearGaussianMatchesTextbookKalman) {
    const double ts = 0.1;
    const StateSpaceModel m = constant_velocity(ts, 0.02, 0.5);
    oracle::Kalman kf{mat2(1, ts, 0, 1), Matrix(2, 0), Matrix(Matrix::Identity(1, 2)), 0.02 * Matrix::Identity(2, 2),
                      Matrix::Constant(1, 1, 0.5), Vector::Zero(2), Matrix::Identity(2, 2)};
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0.0, 1.0);
    GaussianBelief b{Vector::Zero(2), Matrix::Identity(2, 2)};
    double max_dm = 0, max_dp = 0, max_dl = 0;
    for (int t = 0; t < 50; ++t) {
        const Vector y = Vector::Constant(1, std::sin(0.1 * t) + 0.7 * n(rng));
        const UpdateResult r = ekf_update(ekf_predict(b, Vector(0), Vector::Zero(1), m), y, Vector::Zero(1), m);
        b = r.belief;
        kf.step(y, Vector(0));
        max_dm = std::max(max_dm, (b.mean - kf.mean).cwiseAbs().maxCoeff());
        max_dp = std::max(max_dp, (b.cov - kf.cov).cwiseAbs().maxCoeff());
        max_dl = std::max(max_dl, std::abs(r.diagnostics.log_likelihood - kf.loglik));
        EXPECT_LE((b.cov - b.cov.transpose()).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_EQ(Eigen::LLT<Matrix>(r.diagnostics.innovation_cov).info(), Eigen::Success);
    }
    EXPECT_LE(max_dm, 1e-10);
    EXPECT_LE(max_dp, 1e-10);
    EXPECT_LE(max_dl, 1e-10);
}

TEST(EkfUpdate, JosephFormConsistency) {
    const StateSpaceModel m = constant_velocity(0.2, 0.05, 0.4);
    const GaussianBelief pred{Vector::Constant(2, 0.1), mat2(2.0, 0.5, 0.5, 1.0)};
    const UpdateResult r = ekf_update(pred, Vector::Constant(1, 1.3), Vector::Zero(1), m);
    Matrix h(1, 2);
    h << 1, 0;
    const Matrix k = r.diagnostics.kalman_gain;
    const Matrix ikh = Matrix::Identity(2, 2) - k * h;
    const Matrix joseph = ikh * pred.cov * ikh.transpose() + k * Matrix::Constant(1, 1, 0.4) * k.transpose();
    EXPECT_LE((joseph - r.belief.cov).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(EkfUpdate, LogLikelihoodMatchesDirectDensity) {
    Matrix c(2, 2);
    c << 1, 0, 0.5, 1;
    Matrix rc(2, 2);
    rc << 0.3, 0.1, 0.1, 0.2;
    const StateSpaceModel m = make_linear_model(Matrix::Identity(2, 2), Matrix(2, 0), c, Matrix::Zero(2, 2), rc);
    const GaussianBelief pred{Vector::Constant(2, 0.2), mat2(0.8, 0.1, 0.1, 0.6)};
    Vector y(2);
    y << 1.0, -0.4;
    const UpdateResult r = ekf_update(pred, y, Vector::Zero(1), m);
    const Matrix s = c * pred.cov * c.transpose() + rc;
    const Vector e = y - c * pred.mean;
    const double direct = -std::log(2 * std::numbers::pi) - 0.5 * std::log(s.determinant()) - 0.5 * e.dot(s.inverse() * e);
    EXPECT_NEAR(r.diagnostics.log_likelihood, direct, 1e-12);
    EXPECT_LE((r.diagnostics.predicted_measurement(y) - c * pred.mean).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(EkfUpdate, SingularInnovationThrows) {
    const StateSpaceModel m = make_scalar_ar_model(0.0, -1.0);
    const GaussianBelief pred{Vector::Zero(1), Matrix::Zero(1, 1)};
    EXPECT_THROW(ekf_update(pred, Vector::Zero(1), Vector::Ones(1), m), InnovationSingular);
}

TEST(JacobianFd, RecoversLinearMap) {
    Matrix a(2, 3);
    a << 1, -2, 0.5, 3, 0.25, -1;
    const Matrix j = jacobian_fd([&a](const Vector& x) { return Vector(a * x); }, Vector::Constant(3, 0.7));
    EXPECT_LE((j - a).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(JacobianFd, SineAtZero) {
    const Matrix j = jacobian_fd([](const Vector& x) { return Vector(x.array().sin()); }, Vector::Zero(1));
    EXPECT_NEAR(j(0, 0), 1.0, 1e-9);
}

TEST(JacobianFd, BioreactorFieldMatchesAnalytic) {
    const BioreactorParams p;
    const Vector x = (Vector(3) << 1.5, 2.0, 0.3).finished();
    const double eta = 0.9;
    const Matrix j = jacobian_fd([&](const Vector& v) { return bioreactor_derivative(v, eta, p); }, x);
    // Hand-derived: mu(S) = m S / (Ks + S + S^2/Ki), dmu/dS = m (Ks - S^2/Ki) / D^2.
    const double s = x(1), big_x = x(0);
    const double d = p.k_s + s + s * s / p.k_i;
    const double mu = p.mu_max * eta * s / d;
    const double dmu = p.mu_max * eta * (p.k_s - s * s / p.k_i) / (d * d);
    Matrix expected(3, 3);
    expected << mu, dmu * big_x, 0, -mu / p.y_xs, -dmu * big_x / p.y_xs, 0, p.y_px * mu, p.y_px * dmu * big_x, 0;
    EXPECT_LE((j - expected).cwiseAbs().maxCoeff(), 1e-5);
    EXPECT_LE((bioreactor_derivative_jacobian(x, eta, p) - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(JacobianFd, NonFiniteColumnIsNamed) {
    auto map = [](const Vector& x) {
        Vector out = x;
        if (x(1) > 1.0) out(0) = std::numeric_limits<double>::quiet_NaN();
        return out;
    };
    try {
        jacobian_fd(map, Vector::Constant(2, 1.0));
        FAIL() << "expected JacobianError";
    } catch (const JacobianError& e) {
        EXPECT_EQ(e.coordinate(), 1);
    }
}

TEST(Ekf, FallsBackToFiniteDifferencesWithoutAnalyticJacobian) {
    StateSpaceModel analytic = make_bioreactor_model(BioreactorParams{});
    StateSpaceModel numeric = analytic;
    numeric.linearized_transition = nullptr;
    numeric.linearized_measurement = nullptr;
    const GaussianBelief b{Vector((Vector(3) << 1.0, 5.0, 0.0).finished()), 1e-3 * Matrix::Identity(3, 3)};
    const Vector theta = Vector::Constant(1, 0.95);
    const GaussianBelief pa = ekf_predict(b, Vector(0), theta, analytic);
    const GaussianBelief pn = ekf_predict(b, Vector(0), theta, numeric);
    EXPECT_LE((pa.mean - pn.mean).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LE((pa.cov - pn.cov).cwiseAbs().maxCoeff(), 1e-10);
}
