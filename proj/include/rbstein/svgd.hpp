#pragma once

#include "rbstein/ensemble.hpp"

#include <functional>
#include <optional>
#include <string_view>

namespace rbstein {

struct KernelEval {
    double value = 0.0;
    Vector grad_wrt_first;
};

/// k(a, b) = exp(-|a - b|^2 / h) and its gradient wrt a.
KernelEval rbf_kernel(const Vector& a, const Vector& b, double h);

/// k(a, b) = exp(-(a - b)^T F (a - b) / h) and its gradient wrt a (F symmetric).
KernelEval fisher_rbf_kernel(const Vector& a, const Vector& b, const Matrix& fisher, double h);

/// med^2 / log(N + 1) over pairwise distances between columns; 1 when med = 0.
/// With a metric the distance is sqrt(d^T F d).
double median_bandwidth(const Matrix& particles);
double median_bandwidth(const Matrix& particles, const Matrix& metric);

using KernelFn = std::function<KernelEval(const Vector& a, const Vector& b)>;

/// phi(theta_i) = (1/N) sum_j [k(theta_j, theta_i) s_j + grad_{theta_j} k(theta_j, theta_i)],
/// evaluated by a plain double loop over any kernel.
Matrix phi_hat(const Matrix& particles, const Matrix& scores, const KernelFn& kernel);

/// Same direction for the (optionally metric) RBF kernel using Gram-matrix algebra.
/// An empty metric means the Euclidean kernel.
Matrix phi_hat_rbf(const Matrix& particles, const Matrix& scores, double h, const Matrix& metric = Matrix());

/// Gram matrix K(i, j) = k(theta_i, theta_j) of the (metric) RBF kernel.
Matrix rbf_gram(const Matrix& particles, double h, const Matrix& metric = Matrix());

using ScoreFn = std::function<Matrix(const Matrix& particles)>;

struct SvgdOptions {
    double epsilon = 1e-3;
    int iterations = 1;
    /// Per-particle diagonal adaptive-moment steps instead of the raw direction.
    bool adam = false;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    /// When set, each step is epsilon * L^{-1} phi with L L^T = preconditioner.
    std::optional<Matrix> preconditioner;
    /// Invoked after every iteration with (iteration index starting at 1, particles).
    std::function<void(int, const Matrix&)> observer;
};

/// M steps theta <- theta + eps * phi(theta) with the scores and the median
/// bandwidth refreshed every iteration. Throws ParticleDiverged.
/// `adam` (one entry per particle) is only touched when options.adam is set.
void svgd_iterate(Matrix& particles, const ScoreFn& scores, const SvgdOptions& options,
                  std::vector<AdamState>* adam = nullptr);

// ---------------------------------------------------------------------------
// Scores through the Kalman likelihood

/// Central differences of theta -> predictive_log_likelihood with step
/// 1e-5 * (1 + |theta_k|). Falls back to a one-sided difference when one probe
/// hits a singular innovation; throws GradientUnavailable if both do.
Vector likelihood_grad(const Vector& theta, const Vector& y, const Vector& u, const GaussianBelief& belief_prev,
                       const StateSpaceModel& model);

/// Central differences of a scalar map with the same step rule and fallback.
Vector fd_gradient(const std::function<double(const Vector&)>& fn, const Vector& x);

enum class PriorMode {
    MomentFit,      // Gaussian fit to the previous ensemble
    PreviousScore,  // reuse each particle's posterior score from the previous step
    LikelihoodOnly  // prior term dropped
};

struct GaussianPrior {
    Vector mean;
    Matrix precision;

    /// Moment fit to the columns of `particles`, covariance regularized by +ridge*I.
    static GaussianPrior fit(const Matrix& particles, double ridge = 1e-6);
    Vector score(const Vector& theta) const { return -precision * (theta - mean); }
};

struct ScoreCache {
    Matrix likelihood;  // columns: per-particle likelihood gradients
    Matrix prior;       // columns: per-particle prior gradients
    std::optional<GaussianPrior> prior_model;
};

/// likelihood gradient + prior gradient for one particle.
Vector posterior_score(const Vector& likelihood_gradient, const Vector& theta, PriorMode mode,
                       const GaussianPrior* prior, const Vector* previous_score);

struct RbsgdConfig {
    double epsilon = 1e-3;
    int iterations = 1;
    PriorMode prior_mode = PriorMode::MomentFit;
    bool adam = false;
    /// Receives "ekf" once per particle update and "transport" once per SVGD iteration.
    std::function<void(std::string_view)> trace;
};

struct TransportReport {
    std::vector<UpdateDiagnostics> diagnostics;
    ScoreCache scores;  // scores at the final particle positions
};

/// Scores of every particle at `thetas` against the step's data.
ScoreCache compute_scores(const Matrix& thetas, const Vector& y, const Vector& u,
                          const std::vector<GaussianBelief>& beliefs_prev, const StateSpaceModel& model,
                          PriorMode mode, const std::optional<GaussianPrior>& prior, const Matrix& previous_scores);

/// One step of the Rao-Blackwellized Stein filter: Kalman predict/update of every
/// particle at its current theta, then M SVGD moves of the parameter particles.
/// Weights stay uniform.
TransportReport rbsgd_step(ParticleEnsemble& ens, const Vector& y, const Vector& u, const StateSpaceModel& model,
                           const RbsgdConfig& config);

}  // namespace rbstein
