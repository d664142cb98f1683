#pragma once

#include "rbstein/model.hpp"

#include <Eigen/Cholesky>

#include <functional>

namespace rbstein {

struct GaussianBelief {
    Vector mean;
    Matrix cov;
};

struct UpdateDiagnostics {
    Vector innovation;
    Matrix innovation_cov;
    Matrix kalman_gain;
    double log_likelihood = 0.0;

    /// Predicted measurement h(x_pred, theta).
    Vector predicted_measurement(const Vector& y) const { return y - innovation; }
};

struct UpdateResult {
    GaussianBelief belief;
    UpdateDiagnostics diagnostics;
};

/// Central differences with per-coordinate step 1e-6 * (1 + |x_i|).
/// Throws JacobianError naming the first non-finite column.
Matrix jacobian_fd(const std::function<Vector(const Vector&)>& map, const Vector& x);

/// Cholesky of a symmetric matrix, adding 1e-10 * I and escalating x10 up to
/// 1e-6 * I when the factorization fails. Throws InnovationSingular.
Eigen::LLT<Matrix> jittered_cholesky(const Matrix& s);

/// log N(residual; 0, S) from a Cholesky factor of S.
double gaussian_log_density(const Vector& residual, const Eigen::LLT<Matrix>& chol);

/// Linearization of f at (x, u, theta): analytic when the model supplies it.
Linearization linearize_transition(const StateSpaceModel& model, const Vector& x, const Vector& u, const Vector& theta);
Linearization linearize_measurement(const StateSpaceModel& model, const Vector& x, const Vector& theta);

GaussianBelief ekf_predict(const GaussianBelief& belief, const Vector& u, const Vector& theta,
                           const StateSpaceModel& model);

UpdateResult ekf_update(const GaussianBelief& predicted, const Vector& y, const Vector& theta,
                        const StateSpaceModel& model);

/// Predictive log-likelihood log N(y; h(x_pred), S) of one predict step from
/// belief_prev under theta. This is the scalar map whose theta-gradient drives
/// the Stein transports.
double predictive_log_likelihood(const Vector& theta, const Vector& y, const Vector& u,
                                 const GaussianBelief& belief_prev, const StateSpaceModel& model);

}  // namespace rbstein
