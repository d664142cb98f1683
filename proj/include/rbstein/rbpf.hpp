#pragma once

#include "rbstein/ensemble.hpp"

#include <random>

namespace rbstein {

struct RbpfConfig {
    Matrix sigma_theta;             // random-walk covariance in unconstrained space
    double ess_threshold = -1.0;    // n_thr; negative means N/2
};

/// What a filter step produced besides the updated ensemble.
struct StepReport {
    std::vector<UpdateDiagnostics> diagnostics;  // per particle, from the Kalman update
    Vector predictive_weights;                   // weights attached to the predictive mixture
    double ess = 0.0;
    bool resampled = false;
};

/// theta_i += eta_i, eta_i ~ N(0, sigma_theta).
void propagate_particles(ParticleEnsemble& ens, const Matrix& sigma_theta, std::mt19937_64& rng);

double ess(const Vector& weights);

/// Systematic resampling with a single uniform offset; offspring inherit their
/// parent's belief and Adam state, weights reset to 1/N. Returns parent indices.
std::vector<int> systematic_resample(ParticleEnsemble& ens, std::mt19937_64& rng);

/// Parent indices selected by systematic resampling for a given offset u in [0, 1).
std::vector<int> systematic_indices(const Vector& weights, double offset);

/// One step of the Rao-Blackwellized particle filter: propagate, predict,
/// weight by the innovation likelihood, update, normalize in log-space and
/// resample when ESS < n_thr. Per-particle RNG streams are derived from the
/// ensemble seed and step counter.
StepReport rbpf_step(ParticleEnsemble& ens, const Vector& y, const Vector& u, const StateSpaceModel& model,
                     const RbpfConfig& config);

/// Predict + update for every particle at its current theta, no parameter move.
/// With N = 1 this is the plain EKF.
StepReport kalman_bank_step(ParticleEnsemble& ens, const Vector& y, const Vector& u, const StateSpaceModel& model);

}  // namespace rbstein
