#pragma once

#include "rbstein/svgd.hpp"

namespace rbstein {

/// (1/N) sum_i g_i g_i^T over the columns of `vectors`. Serves both the
/// likelihood-gradient FIM and the FIM of the transport directions.
Matrix empirical_fisher(const Matrix& vectors);
inline Matrix fim_likelihood(const Matrix& likelihood_grads) { return empirical_fisher(likelihood_grads); }
inline Matrix fim_svgd(const Matrix& directions) { return empirical_fisher(directions); }

struct FisherMatrices {
    Matrix lik;
    Matrix svgd;
};

struct FisherAdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    /// Jitter lambda starts at jitter_min * tr(v_hat)/n and grows x10 up to
    /// jitter_max * tr(v_hat)/n. jitter_min = 0 tries the bare factorization first.
    double jitter_min = 1e-8;
    double jitter_max = 1e-2;
};

/// Cholesky factor of v + lambda I with the escalation above. Throws PreconditionerSingular.
Eigen::LLT<Matrix> preconditioner_cholesky(const Matrix& v, double jitter_min, double jitter_max);

/// One Fisher-Adam move: moment updates with phi and F_svgd, bias correction at
/// m = adam.m + 1, then theta + eps * L^{-1} g_hat by forward substitution.
Vector fisher_adam_step(const Vector& theta, AdamState& adam, const Vector& phi, const Matrix& f_svgd, double epsilon,
                        const FisherAdamOptions& options = {});

struct RbfsgdConfig {
    double epsilon = 1e-3;
    int iterations = 1;
    PriorMode prior_mode = PriorMode::MomentFit;
    FisherAdamOptions adam;
    bool force_identity_lik = false;  // ablation: F_lik = I turns the kernel into plain RBF
    bool refresh_fisher = false;      // recompute both FIMs every inner iteration
    bool reset_adam_each_step = false;
    std::function<void(std::string_view)> trace;
};

struct FisherReport {
    std::vector<UpdateDiagnostics> diagnostics;
    FisherMatrices fisher;
    ScoreCache scores;
};

/// Transport directions under the Fisher-informed kernel with the median
/// bandwidth of the Fisher distance.
Matrix fisher_directions(const Matrix& thetas, const Matrix& scores, const Matrix& f_lik);

/// One step of the Fisher-preconditioned Rao-Blackwellized Stein filter.
FisherReport rbfsgd_step(ParticleEnsemble& ens, const Vector& y, const Vector& u, const StateSpaceModel& model,
                         const RbfsgdConfig& config);

}  // namespace rbstein
