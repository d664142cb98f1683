#include "rbstein/svgd.hpp"

#include "rbstein/errors.hpp"
#include "rbstein/linalg.hpp"

#include <algorithm>
#include <cmath>

namespace rbstein {

KernelEval rbf_kernel(const Vector& a, const Vector& b, double h) {
    if (!(h > 0.0)) throw DomainError("kernel bandwidth must be positive");
    const Vector d = a - b;
    const double value = std::exp(-d.squaredNorm() / h);
    return {value, (-2.0 / h) * value * d};
}

KernelEval fisher_rbf_kernel(const Vector& a, const Vector& b, const Matrix& fisher, double h) {
    if (!(h > 0.0)) throw DomainError("kernel bandwidth must be positive");
    const Vector d = a - b;
    const Vector fd = fisher * d;
    const double value = std::exp(-d.dot(fd) / h);
    return {value, (-2.0 / h) * value * fd};
}

namespace {

double median_of(std::vector<double>& values) {
    const std::size_t n = values.size();
    const auto mid = values.begin() + static_cast<std::ptrdiff_t>(n / 2);
    std::nth_element(values.begin(), mid, values.end());
    if (n % 2 == 1) return *mid;
    const double upper = *mid;
    const double lower = *std::max_element(values.begin(), mid);
    return 0.5 * (lower + upper);
}

double bandwidth_from(std::vector<double>& distances, Eigen::Index n) {
    const double med = median_of(distances);
    if (med <= 0.0) return 1.0;
    return med * med / std::log(static_cast<double>(n) + 1.0);
}

// Squared pairwise distances (a - b)^T F (a - b) for all column pairs.
Matrix squared_distances(const Matrix& particles, const Matrix& metric) {
    const Matrix mp = metric.size() == 0 ? particles : Matrix(metric * particles);
    const Vector self = (particles.array() * mp.array()).colwise().sum().transpose();
    Matrix d2 = -2.0 * particles.transpose() * mp;
    d2.colwise() += self;
    d2.rowwise() += self.transpose();
    d2 = symmetrized(d2).cwiseMax(0.0);
    d2.diagonal().setZero();
    return d2;
}

}  // namespace

double median_bandwidth(const Matrix& particles) { return median_bandwidth(particles, Matrix()); }

double median_bandwidth(const Matrix& particles, const Matrix& metric) {
    const Eigen::Index n = particles.cols();
    if (n < 2) return 1.0;
    std::vector<double> distances;
    distances.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const Vector d = particles.col(i) - particles.col(j);
            const double q = metric.size() == 0 ? d.squaredNorm() : d.dot(metric * d);
            distances.push_back(std::sqrt(std::max(q, 0.0)));
        }
    }
    return bandwidth_from(distances, n);
}

Matrix phi_hat(const Matrix& particles, const Matrix& scores, const KernelFn& kernel) {
    const Eigen::Index n = particles.cols();
    Matrix phi = Matrix::Zero(particles.rows(), n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            const KernelEval k = kernel(particles.col(j), particles.col(i));
            phi.col(i) += k.value * scores.col(j) + k.grad_wrt_first;
        }
    }
    return phi / static_cast<double>(n);
}

Matrix rbf_gram(const Matrix& particles, double h, const Matrix& metric) {
    if (!(h > 0.0)) throw DomainError("kernel bandwidth must be positive");
    return (-squared_distances(particles, metric) / h).array().exp().matrix();
}

Matrix phi_hat_rbf(const Matrix& particles, const Matrix& scores, double h, const Matrix& metric) {
    const auto n = static_cast<double>(particles.cols());
    const Matrix gram = rbf_gram(particles, h, metric);
    // sum_j grad_{theta_j} k(theta_j, theta_i) = -(2/h) F (sum_j K_ji theta_j - theta_i sum_j K_ji)
    Matrix repulsion = particles * gram;
    repulsion -= particles * gram.colwise().sum().asDiagonal();
    repulsion *= -2.0 / h;
    if (metric.size() != 0) repulsion = metric * repulsion;
    return (scores * gram + repulsion) / n;
}

void svgd_iterate(Matrix& particles, const ScoreFn& scores, const SvgdOptions& options, std::vector<AdamState>* adam) {
    Eigen::LLT<Matrix> preconditioner;
    if (options.preconditioner) {
        preconditioner.compute(*options.preconditioner);
        if (preconditioner.info() != Eigen::Success) throw PreconditionerSingular("SVGD preconditioner is not positive definite");
    }
    if (options.adam && (adam == nullptr || static_cast<Eigen::Index>(adam->size()) != particles.cols())) {
        throw ShapeError("adaptive SVGD steps need one optimizer state per particle");
    }
    for (int m = 1; m <= options.iterations; ++m) {
        const Matrix s = scores(particles);
        const double h = median_bandwidth(particles);
        Matrix step = phi_hat_rbf(particles, s, h);
        if (options.preconditioner) step = preconditioner.matrixL().solve(step);
        if (options.adam) {
            for (Eigen::Index i = 0; i < particles.cols(); ++i) {
                AdamState& st = (*adam)[static_cast<std::size_t>(i)];
                if (st.g.size() != particles.rows()) st = AdamState::zeros(static_cast<int>(particles.rows()));
                ++st.m;
                const Vector phi = step.col(i);
                st.g = options.adam_beta1 * st.g + (1.0 - options.adam_beta1) * phi;
                st.v.diagonal() = options.adam_beta2 * st.v.diagonal() +
                                  (1.0 - options.adam_beta2) * phi.cwiseAbs2();
                const double c1 = 1.0 - std::pow(options.adam_beta1, static_cast<double>(st.m));
                const double c2 = 1.0 - std::pow(options.adam_beta2, static_cast<double>(st.m));
                const Vector g_hat = st.g / c1;
                const Vector v_hat = st.v.diagonal() / c2;
                step.col(i) = g_hat.array() / (v_hat.array().sqrt() + options.adam_eps);
            }
        }
        particles += options.epsilon * step;
        if (!particles.allFinite()) throw ParticleDiverged(m);
        if (options.observer) options.observer(m, particles);
    }
}

Vector fd_gradient(const std::function<double(const Vector&)>& fn, const Vector& x) {
    Vector grad(x.size());
    Vector probe = x;
    std::optional<double> center;
    auto evaluate = [&](double& out) {
        try {
            out = fn(probe);
            return std::isfinite(out);
        } catch (const InnovationSingular&) {
            return false;
        }
    };
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        const double delta = 1e-5 * (1.0 + std::abs(x(k)));
        double plus = 0.0;
        double minus = 0.0;
        probe(k) = x(k) + delta;
        const bool ok_plus = evaluate(plus);
        probe(k) = x(k) - delta;
        const bool ok_minus = evaluate(minus);
        probe(k) = x(k);
        if (ok_plus && ok_minus) {
            grad(k) = (plus - minus) / (2.0 * delta);
            continue;
        }
        if (!ok_plus && !ok_minus) throw GradientUnavailable("likelihood undefined on both sides of coordinate " + std::to_string(k));
        if (!center) center = fn(x);
        grad(k) = ok_plus ? (plus - *center) / delta : (*center - minus) / delta;
    }
    return grad;
}

Vector likelihood_grad(const Vector& theta, const Vector& y, const Vector& u, const GaussianBelief& belief_prev,
                       const StateSpaceModel& model) {
    return fd_gradient([&](const Vector& t) { return predictive_log_likelihood(t, y, u, belief_prev, model); }, theta);
}

GaussianPrior GaussianPrior::fit(const Matrix& particles, double ridge) {
    const auto n = particles.cols();
    GaussianPrior prior;
    prior.mean = particles.rowwise().mean();
    const Matrix centered = particles.colwise() - prior.mean;
    Matrix cov = centered * centered.transpose() / static_cast<double>(n);
    cov.diagonal().array() += ridge;
    prior.precision = symmetrized(cov.llt().solve(Matrix::Identity(cov.rows(), cov.cols())));
    return prior;
}

Vector posterior_score(const Vector& likelihood_gradient, const Vector& theta, PriorMode mode,
                       const GaussianPrior* prior, const Vector* previous_score) {
    switch (mode) {
        case PriorMode::MomentFit:
            return prior ? Vector(likelihood_gradient + prior->score(theta)) : likelihood_gradient;
        case PriorMode::PreviousScore:
            return previous_score ? Vector(likelihood_gradient + *previous_score) : likelihood_gradient;
        case PriorMode::LikelihoodOnly:
            break;
    }
    return likelihood_gradient;
}

ScoreCache compute_scores(const Matrix& thetas, const Vector& y, const Vector& u,
                          const std::vector<GaussianBelief>& beliefs_prev, const StateSpaceModel& model,
                          PriorMode mode, const std::optional<GaussianPrior>& prior, const Matrix& previous_scores) {
    const auto n = thetas.cols();
    ScoreCache cache;
    cache.likelihood.resize(thetas.rows(), n);
    cache.prior = Matrix::Zero(thetas.rows(), n);
    cache.prior_model = prior;
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vector theta = thetas.col(i);
        cache.likelihood.col(i) = likelihood_grad(theta, y, u, beliefs_prev[static_cast<std::size_t>(i)], model);
        if (mode == PriorMode::MomentFit && prior) cache.prior.col(i) = prior->score(theta);
        if (mode == PriorMode::PreviousScore && previous_scores.cols() == n) cache.prior.col(i) = previous_scores.col(i);
    }
    return cache;
}

namespace {

std::optional<GaussianPrior> prior_for(const ParticleEnsemble& ens, PriorMode mode) {
    if (mode != PriorMode::MomentFit) return std::nullopt;
    return GaussianPrior::fit(ens.thetas);
}

}  // namespace

TransportReport rbsgd_step(ParticleEnsemble& ens, const Vector& y, const Vector& u, const StateSpaceModel& model,
                           const RbsgdConfig& config) {
    const int n = ens.size();
    const std::vector<GaussianBelief> beliefs_prev = ens.beliefs;
    TransportReport report;
    report.diagnostics.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const Vector theta = ens.thetas.col(i);
        auto& belief = ens.beliefs[static_cast<std::size_t>(i)];
        UpdateResult upd = ekf_update(ekf_predict(belief, u, theta, model), y, theta, model);
        belief = std::move(upd.belief);
        report.diagnostics[static_cast<std::size_t>(i)] = std::move(upd.diagnostics);
        if (config.trace) config.trace("ekf");
    }

    const std::optional<GaussianPrior> prior = prior_for(ens, config.prior_mode);
    const Matrix previous = ens.score_memory;
    ScoreCache last;
    auto scores = [&](const Matrix& thetas) {
        last = compute_scores(thetas, y, u, beliefs_prev, model, config.prior_mode, prior, previous);
        return Matrix(last.likelihood + last.prior);
    };

    if (config.epsilon > 0.0 && config.iterations > 0) {
        SvgdOptions options;
        options.epsilon = config.epsilon;
        options.iterations = config.iterations;
        options.adam = config.adam;
        if (config.trace) options.observer = [&](int, const Matrix&) { config.trace("transport"); };
        svgd_iterate(ens.thetas, scores, options, &ens.adam);
    }
    if (config.prior_mode == PriorMode::PreviousScore) {
        scores(ens.thetas);
        ens.score_memory = last.likelihood + last.prior;
    }
    report.scores = std::move(last);
    ens.weights.setConstant(1.0 / static_cast<double>(n));
    ++ens.step;
    return report;
}

}  // namespace rbstein
