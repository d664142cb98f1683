#include "rbstein/fisher.hpp"

#include "rbstein/errors.hpp"
#include "rbstein/linalg.hpp"

#include <cmath>

namespace rbstein {

Matrix empirical_fisher(const Matrix& vectors) {
    if (vectors.cols() < 1) throw ShapeError("empirical Fisher needs at least one vector");
    return symmetrized(vectors * vectors.transpose() / static_cast<double>(vectors.cols()));
}

Eigen::LLT<Matrix> preconditioner_cholesky(const Matrix& v, double jitter_min, double jitter_max) {
    const auto n = v.rows();
    const Matrix sym = symmetrized(v);
    const Matrix eye = Matrix::Identity(n, n);
    double scale = sym.trace() / static_cast<double>(n);
    if (!(scale > 0.0)) scale = 1.0;
    Eigen::LLT<Matrix> chol;
    if (jitter_min <= 0.0) {
        chol.compute(sym);
        if (chol.info() == Eigen::Success) return chol;
        jitter_min = 1e-8;
    }
    for (double rel = jitter_min; rel <= jitter_max * (1.0 + 1e-9); rel *= 10.0) {
        chol.compute(sym + rel * scale * eye);
        if (chol.info() == Eigen::Success) return chol;
    }
    throw PreconditionerSingular("Fisher-Adam second moment is not positive definite after jitter");
}

Vector fisher_adam_step(const Vector& theta, AdamState& adam, const Vector& phi, const Matrix& f_svgd, double epsilon,
                        const FisherAdamOptions& options) {
    const auto n = theta.size();
    if (adam.g.size() != n) adam = AdamState::zeros(static_cast<int>(n));
    ++adam.m;
    adam.g = options.beta1 * adam.g + (1.0 - options.beta1) * phi;
    adam.v = symmetrized(options.beta2 * adam.v + (1.0 - options.beta2) * f_svgd);
    const auto m = static_cast<double>(adam.m);
    const Vector g_hat = adam.g / (1.0 - std::pow(options.beta1, m));
    const Matrix v_hat = adam.v / (1.0 - std::pow(options.beta2, m));
    const Eigen::LLT<Matrix> chol = preconditioner_cholesky(v_hat, options.jitter_min, options.jitter_max);
    return theta + epsilon * chol.matrixL().solve(g_hat);
}

Matrix fisher_directions(const Matrix& thetas, const Matrix& scores, const Matrix& f_lik) {
    const double h = median_bandwidth(thetas, f_lik);
    return phi_hat_rbf(thetas, scores, h, f_lik);
}

FisherReport rbfsgd_step(ParticleEnsemble& ens, const Vector& y, const Vector& u, const StateSpaceModel& model,
                         const RbfsgdConfig& config) {
    const int n = ens.size();
    const int dim = ens.dim();
    const std::vector<GaussianBelief> beliefs_prev = ens.beliefs;
    FisherReport report;
    report.diagnostics.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const Vector theta = ens.thetas.col(i);
        auto& belief = ens.beliefs[static_cast<std::size_t>(i)];
        UpdateResult upd = ekf_update(ekf_predict(belief, u, theta, model), y, theta, model);
        belief = std::move(upd.belief);
        report.diagnostics[static_cast<std::size_t>(i)] = std::move(upd.diagnostics);
        if (config.trace) config.trace("ekf");
    }
    ens.weights.setConstant(1.0 / static_cast<double>(n));
    if (config.reset_adam_each_step) {
        for (auto& a : ens.adam) a = AdamState::zeros(dim);
    }
    if (!(config.epsilon > 0.0) || config.iterations < 1) {
        ++ens.step;
        return report;
    }

    std::optional<GaussianPrior> prior;
    if (config.prior_mode == PriorMode::MomentFit) prior = GaussianPrior::fit(ens.thetas);
    const Matrix previous = ens.score_memory;
    auto score_all = [&](const Matrix& thetas) {
        return compute_scores(thetas, y, u, beliefs_prev, model, config.prior_mode, prior, previous);
    };
    auto lik_fisher = [&](const ScoreCache& cache) {
        return config.force_identity_lik ? Matrix(Matrix::Identity(dim, dim)) : fim_likelihood(cache.likelihood);
    };

    ScoreCache cache = score_all(ens.thetas);
    report.fisher.lik = lik_fisher(cache);
    Matrix phi = fisher_directions(ens.thetas, cache.likelihood + cache.prior, report.fisher.lik);
    report.fisher.svgd = fim_svgd(phi);

    for (int m = 1; m <= config.iterations; ++m) {
        if (m > 1) {
            cache = score_all(ens.thetas);
            if (config.refresh_fisher) report.fisher.lik = lik_fisher(cache);
            phi = fisher_directions(ens.thetas, cache.likelihood + cache.prior, report.fisher.lik);
            if (config.refresh_fisher) report.fisher.svgd = fim_svgd(phi);
        }
        for (int i = 0; i < n; ++i) {
            ens.thetas.col(i) = fisher_adam_step(ens.thetas.col(i), ens.adam[static_cast<std::size_t>(i)], phi.col(i),
                                                 report.fisher.svgd, config.epsilon, config.adam);
        }
        if (!ens.thetas.allFinite()) throw ParticleDiverged(m);
        if (config.trace) config.trace("transport");
    }
    if (config.prior_mode == PriorMode::PreviousScore) {
        cache = score_all(ens.thetas);
        ens.score_memory = cache.likelihood + cache.prior;
    }
    report.scores = std::move(cache);
    ++ens.step;
    return report;
}

}  // namespace rbstein
