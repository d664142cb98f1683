#include "rbstein/ekf.hpp"

#include "rbstein/errors.hpp"
#include "rbstein/linalg.hpp"

#include <cmath>
#include <numbers>

namespace rbstein {

Matrix jacobian_fd(const std::function<Vector(const Vector&)>& map, const Vector& x) {
    Matrix jac;
    Vector probe = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double delta = 1e-6 * (1.0 + std::abs(x(i)));
        probe(i) = x(i) + delta;
        const Vector plus = map(probe);
        probe(i) = x(i) - delta;
        const Vector minus = map(probe);
        probe(i) = x(i);
        if (jac.size() == 0) jac.resize(plus.size(), x.size());
        jac.col(i) = (plus - minus) / (2.0 * delta);
        if (!jac.col(i).allFinite()) throw JacobianError(static_cast<int>(i));
    }
    return jac;
}

Eigen::LLT<Matrix> jittered_cholesky(const Matrix& s) {
    const Matrix sym = symmetrized(s);
    Eigen::LLT<Matrix> chol(sym);
    if (chol.info() == Eigen::Success && sym.allFinite()) return chol;
    const Matrix eye = Matrix::Identity(s.rows(), s.cols());
    for (double jitter = 1e-10; jitter <= 1e-6 * (1.0 + 1e-9); jitter *= 10.0) {
        chol.compute(sym + jitter * eye);
        if (chol.info() == Eigen::Success) return chol;
    }
    throw InnovationSingular("innovation covariance is not positive definite after jitter");
}

double gaussian_log_density(const Vector& residual, const Eigen::LLT<Matrix>& chol) {
    const Matrix& l = chol.matrixLLT();
    const Vector whitened = chol.matrixL().solve(residual);
    double log_det = 0.0;
    for (Eigen::Index i = 0; i < l.rows(); ++i) log_det += 2.0 * std::log(l(i, i));
    const auto n = static_cast<double>(residual.size());
    return -0.5 * (n * std::log(2.0 * std::numbers::pi) + log_det + whitened.squaredNorm());
}

Linearization linearize_transition(const StateSpaceModel& model, const Vector& x, const Vector& u,
                                   const Vector& theta) {
    if (model.linearized_transition) return model.linearized_transition(x, u, theta);
    Vector value = model.transition(x, u, theta);
    Matrix jac = jacobian_fd([&](const Vector& z) { return model.transition(z, u, theta); }, x);
    return {std::move(value), std::move(jac)};
}

Linearization linearize_measurement(const StateSpaceModel& model, const Vector& x, const Vector& theta) {
    if (model.linearized_measurement) return model.linearized_measurement(x, theta);
    Vector value = model.measurement(x, theta);
    Matrix jac = jacobian_fd([&](const Vector& z) { return model.measurement(z, theta); }, x);
    return {std::move(value), std::move(jac)};
}

GaussianBelief ekf_predict(const GaussianBelief& belief, const Vector& u, const Vector& theta,
                           const StateSpaceModel& model) {
    const Linearization f = linearize_transition(model, belief.mean, u, theta);
    GaussianBelief out{f.value, symmetrized(f.jacobian * belief.cov * f.jacobian.transpose() + model.process_cov(theta))};
    if (!out.mean.allFinite() || !out.cov.allFinite()) throw FilterDiverged("EKF prediction produced non-finite values");
    return out;
}

UpdateResult ekf_update(const GaussianBelief& predicted, const Vector& y, const Vector& theta,
                        const StateSpaceModel& model) {
    const Linearization h = linearize_measurement(model, predicted.mean, theta);
    const Matrix ph = predicted.cov * h.jacobian.transpose();
    const Matrix s = symmetrized(h.jacobian * ph + model.measurement_cov(theta));
    const Eigen::LLT<Matrix> chol = jittered_cholesky(s);

    UpdateResult out;
    auto& diag = out.diagnostics;
    diag.innovation = y - h.value;
    diag.innovation_cov = s;
    // K = P H^T S^{-1}, solved as S K^T = H P.
    diag.kalman_gain = chol.solve(ph.transpose()).transpose();
    diag.log_likelihood = gaussian_log_density(diag.innovation, chol);

    const auto n = predicted.mean.size();
    out.belief.mean = predicted.mean + diag.kalman_gain * diag.innovation;
    out.belief.cov = symmetrized((Matrix::Identity(n, n) - diag.kalman_gain * h.jacobian) * predicted.cov);
    if (!out.belief.mean.allFinite() || !out.belief.cov.allFinite() || !std::isfinite(diag.log_likelihood)) {
        throw FilterDiverged("EKF update produced non-finite values");
    }
    return out;
}

double predictive_log_likelihood(const Vector& theta, const Vector& y, const Vector& u,
                                 const GaussianBelief& belief_prev, const StateSpaceModel& model) {
    const GaussianBelief pred = ekf_predict(belief_prev, u, theta, model);
    const Linearization h = linearize_measurement(model, pred.mean, theta);
    const Matrix s = symmetrized(h.jacobian * pred.cov * h.jacobian.transpose() + model.measurement_cov(theta));
    return gaussian_log_density(y - h.value, jittered_cholesky(s));
}

}  // namespace rbstein
