#include "rbstein/metrics.hpp"

#include "rbstein/errors.hpp"

#include <cmath>
#include <numbers>

namespace rbstein {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

double GaussianMixture1D::mean() const { return weights.dot(means); }

double GaussianMixture1D::variance() const {
    const double mu = mean();
    return weights.dot((stds.array().square() + (means.array() - mu).square()).matrix());
}

double GaussianMixture1D::cdf(double z) const {
    double total = 0.0;
    for (int i = 0; i < size(); ++i) total += weights(i) * normal_cdf((z - means(i)) / stds(i));
    return total;
}

double GaussianMixture1D::pdf(double z) const {
    double total = 0.0;
    for (int i = 0; i < size(); ++i) total += weights(i) * normal_pdf((z - means(i)) / stds(i)) / stds(i);
    return total;
}

GaussianMixture1D make_mixture(const Vector& means, const Vector& variances, const Vector& weights) {
    if (means.size() != variances.size() || means.size() != weights.size() || means.size() == 0) {
        throw ShapeError("mixture components have inconsistent sizes");
    }
    if ((variances.array() < 0.0).any()) throw BeliefInvalid("negative marginal variance");
    return {means, variances.cwiseSqrt(), weights / weights.sum()};
}

GaussianMixture1D state_marginal(const ParticleEnsemble& ens, int coordinate) {
    const int n = ens.size();
    Vector means(n);
    Vector variances(n);
    for (int i = 0; i < n; ++i) {
        const auto& b = ens.beliefs[static_cast<std::size_t>(i)];
        means(i) = b.mean(coordinate);
        variances(i) = b.cov(coordinate, coordinate);
    }
    return make_mixture(means, variances, ens.weights);
}

int map_index(const ParticleEnsemble& ens) {
    int best = 0;
    double best_log = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < ens.size(); ++i) {
        const Matrix& p = ens.beliefs[static_cast<std::size_t>(i)].cov;
        const Eigen::LLT<Matrix> chol(p);
        double log_det = 0.0;
        if (chol.info() == Eigen::Success) {
            for (Eigen::Index k = 0; k < p.rows(); ++k) log_det += 2.0 * std::log(chol.matrixLLT()(k, k));
        } else {
            log_det = std::log(std::max(p.determinant(), 0.0));
        }
        // w_i (2 pi)^{-n/2} |P_i|^{-1/2}; the (2 pi) factor is common to all components.
        const double score = std::log(ens.weights(i)) - 0.5 * log_det;
        if (score > best_log) {
            best_log = score;
            best = i;
        }
    }
    return best;
}

std::pair<Vector, Vector> map_estimate(const ParticleEnsemble& ens) {
    const int j = map_index(ens);
    return {ens.beliefs[static_cast<std::size_t>(j)].mean, ens.thetas.col(j)};
}

double crps_gaussian(double mu, double sigma, double y) {
    if (!(sigma > 0.0)) throw DomainError("CRPS needs a positive standard deviation");
    const double z = (y - mu) / sigma;
    return sigma * (z * (2.0 * normal_cdf(z) - 1.0) + 2.0 * normal_pdf(z) - 1.0 / std::sqrt(std::numbers::pi));
}

namespace {

// E|D| for D ~ N(d, s^2).
double abs_moment(double d, double s2) {
    const double s = std::sqrt(s2);
    if (s == 0.0) return std::abs(d);
    return d * (2.0 * normal_cdf(d / s) - 1.0) + 2.0 * s * normal_pdf(d / s);
}

}  // namespace

double crps_mixture(const GaussianMixture1D& mix, double y) {
    const int k = mix.size();
    double first = 0.0;
    double second = 0.0;
    for (int i = 0; i < k; ++i) {
        const double vi = mix.stds(i) * mix.stds(i);
        first += mix.weights(i) * abs_moment(y - mix.means(i), vi);
        for (int j = 0; j < k; ++j) {
            second += mix.weights(i) * mix.weights(j) * abs_moment(mix.means(i) - mix.means(j), vi + mix.stds(j) * mix.stds(j));
        }
    }
    return std::max(first - 0.5 * second, 0.0);
}

RmseResult rmse(const std::vector<Vector>& estimates, const std::vector<Vector>& truth) {
    if (estimates.size() != truth.size() || estimates.empty()) throw ShapeError("rmse inputs differ in length");
    const auto dim = truth.front().size();
    Vector sum = Vector::Zero(dim);
    for (std::size_t t = 0; t < truth.size(); ++t) {
        if (estimates[t].size() != dim || truth[t].size() != dim) throw ShapeError("rmse inputs differ in dimension");
        sum += (estimates[t] - truth[t]).cwiseAbs2();
    }
    const auto steps = static_cast<double>(truth.size());
    return {(sum / steps).cwiseSqrt(), std::sqrt(sum.sum() / (steps * static_cast<double>(dim)))};
}

}  // namespace rbstein
