#include "rbstein/rbpf.hpp"

#include "rbstein/errors.hpp"
#include "rbstein/linalg.hpp"

#include <cmath>
#include <limits>

namespace rbstein {

ParticleEnsemble make_ensemble(const Matrix& thetas, const GaussianBelief& initial_belief, std::uint64_t seed) {
    if (thetas.cols() < 1) throw ShapeError("ensemble needs at least one particle");
    ParticleEnsemble ens;
    ens.thetas = thetas;
    const auto n = thetas.cols();
    ens.weights = Vector::Constant(n, 1.0 / static_cast<double>(n));
    ens.beliefs.assign(static_cast<std::size_t>(n), initial_belief);
    ens.adam.assign(static_cast<std::size_t>(n), AdamState::zeros(static_cast<int>(thetas.rows())));
    ens.rng_seed = seed;
    return ens;
}

void validate_ensemble(const ParticleEnsemble& ens) {
    const int n = ens.size();
    if (n < 1) throw ShapeError("ensemble is empty");
    if (ens.weights.size() != n || static_cast<int>(ens.beliefs.size()) != n) {
        throw ShapeError("ensemble members have inconsistent sizes");
    }
    if ((ens.weights.array() < 0.0).any() || std::abs(ens.weights.sum() - 1.0) > 1e-12) {
        throw ShapeError("ensemble weights are not normalized");
    }
    for (const auto& b : ens.beliefs) {
        if ((b.cov - b.cov.transpose()).cwiseAbs().maxCoeff() > 1e-10) throw BeliefInvalid("belief covariance not symmetric");
        if ((b.cov.diagonal().array() < 0.0).any()) throw BeliefInvalid("belief covariance has negative variance");
    }
}

void propagate_particles(ParticleEnsemble& ens, const Matrix& sigma_theta, std::mt19937_64& rng) {
    if (sigma_theta.isZero(0.0)) return;
    const Matrix root = psd_sqrt(sigma_theta);
    for (int i = 0; i < ens.size(); ++i) ens.thetas.col(i) += sample_gaussian(root, rng);
}

double ess(const Vector& weights) { return 1.0 / weights.squaredNorm(); }

std::vector<int> systematic_indices(const Vector& weights, double offset) {
    const int n = static_cast<int>(weights.size());
    std::vector<int> parents(static_cast<std::size_t>(n));
    double cumulative = weights(0);
    int j = 0;
    for (int i = 0; i < n; ++i) {
        const double point = (static_cast<double>(i) + offset) / static_cast<double>(n);
        while (point >= cumulative && j < n - 1) {
            ++j;
            cumulative += weights(j);
        }
        parents[static_cast<std::size_t>(i)] = j;
    }
    return parents;
}

std::vector<int> systematic_resample(ParticleEnsemble& ens, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    const std::vector<int> parents = systematic_indices(ens.weights, uniform(rng));
    const ParticleEnsemble old = ens;
    for (int i = 0; i < ens.size(); ++i) {
        const auto p = static_cast<std::size_t>(parents[static_cast<std::size_t>(i)]);
        ens.thetas.col(i) = old.thetas.col(static_cast<Eigen::Index>(p));
        ens.beliefs[static_cast<std::size_t>(i)] = old.beliefs[p];
        ens.adam[static_cast<std::size_t>(i)] = old.adam[p];
        if (old.score_memory.cols() == ens.size()) {
            ens.score_memory.col(i) = old.score_memory.col(static_cast<Eigen::Index>(p));
        }
    }
    ens.weights.setConstant(1.0 / static_cast<double>(ens.size()));
    return parents;
}

StepReport rbpf_step(ParticleEnsemble& ens, const Vector& y, const Vector& u, const StateSpaceModel& model,
                     const RbpfConfig& config) {
    const int n = ens.size();
    const double threshold = config.ess_threshold < 0.0 ? 0.5 * n : config.ess_threshold;
    const Matrix root = config.sigma_theta.size() == 0 || config.sigma_theta.isZero(0.0)
                            ? Matrix::Zero(ens.dim(), ens.dim())
                            : psd_sqrt(config.sigma_theta);
    const bool drift = !root.isZero(0.0);

    StepReport report;
    report.predictive_weights = ens.weights;
    report.diagnostics.resize(static_cast<std::size_t>(n));
    Vector log_w(n);
    for (int i = 0; i < n; ++i) {
        if (drift) {
            auto stream = derived_stream(ens.rng_seed, ens.step, static_cast<std::uint64_t>(i) + 1);
            ens.thetas.col(i) += sample_gaussian(root, stream);
        }
        const Vector theta = ens.thetas.col(i);
        auto& belief = ens.beliefs[static_cast<std::size_t>(i)];
        const GaussianBelief pred = ekf_predict(belief, u, theta, model);
        UpdateResult upd = ekf_update(pred, y, theta, model);
        // Proposal equals the transition prior, so the weight ratio is the likelihood alone.
        log_w(i) = std::log(ens.weights(i)) + upd.diagnostics.log_likelihood;
        belief = std::move(upd.belief);
        report.diagnostics[static_cast<std::size_t>(i)] = std::move(upd.diagnostics);
    }

    const double max_log = log_w.maxCoeff();
    if (!std::isfinite(max_log)) throw WeightCollapse(max_log);
    const Vector shifted = (log_w.array() - max_log).exp().matrix();
    const double total = shifted.sum();
    if (!(total > 0.0) || !std::isfinite(total)) throw WeightCollapse(max_log);
    ens.weights = shifted / total;
    ens.weights /= ens.weights.sum();

    report.ess = ess(ens.weights);
    if (report.ess < threshold) {
        auto stream = derived_stream(ens.rng_seed, ens.step, 0);
        systematic_resample(ens, stream);
        report.resampled = true;
    }
    ++ens.step;
    return report;
}

StepReport kalman_bank_step(ParticleEnsemble& ens, const Vector& y, const Vector& u, const StateSpaceModel& model) {
    const int n = ens.size();
    StepReport report;
    report.predictive_weights = ens.weights;
    report.diagnostics.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const Vector theta = ens.thetas.col(i);
        auto& belief = ens.beliefs[static_cast<std::size_t>(i)];
        UpdateResult upd = ekf_update(ekf_predict(belief, u, theta, model), y, theta, model);
        belief = std::move(upd.belief);
        report.diagnostics[static_cast<std::size_t>(i)] = std::move(upd.diagnostics);
    }
    report.ess = ess(ens.weights);
    ++ens.step;
    return report;
}

}  // namespace rbstein
