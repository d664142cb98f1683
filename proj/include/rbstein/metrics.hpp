#pragma once

#include "rbstein/ensemble.hpp"

#include <utility>
#include <vector>

namespace rbstein {

struct GaussianMixture1D {
    Vector means;
    Vector stds;
    Vector weights;

    int size() const { return static_cast<int>(means.size()); }
    double mean() const;
    /// Law of total variance over the components.
    double variance() const;
    double cdf(double z) const;
    double pdf(double z) const;
};

double normal_cdf(double z);
double normal_pdf(double z);

/// Filtered marginal of one state coordinate: one component per particle.
/// Throws BeliefInvalid on a negative variance.
GaussianMixture1D state_marginal(const ParticleEnsemble& ens, int coordinate);

/// Mixture built from arbitrary per-component means/variances and weights.
GaussianMixture1D make_mixture(const Vector& means, const Vector& variances, const Vector& weights);

/// Component of the joint mixture with the highest density at its own mean;
/// ties go to the lowest index. Returns (state mean, theta) of that component.
std::pair<Vector, Vector> map_estimate(const ParticleEnsemble& ens);
int map_index(const ParticleEnsemble& ens);

/// Closed-form CRPS of N(mu, sigma^2) at y. Throws DomainError for sigma <= 0.
double crps_gaussian(double mu, double sigma, double y);

/// Closed-form CRPS of a Gaussian mixture at y.
double crps_mixture(const GaussianMixture1D& mix, double y);

/// Per-coordinate RMSE of estimates vs truth (rows are time steps), plus the
/// aggregate over all coordinates. Throws ShapeError on mismatched sizes.
struct RmseResult {
    Vector per_coordinate;
    double aggregate = 0.0;
};
RmseResult rmse(const std::vector<Vector>& estimates, const std::vector<Vector>& truth);

}  // namespace rbstein
