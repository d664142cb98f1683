#pragma once

#include "rbstein/ekf.hpp"

#include <cstdint>
#include <vector>

namespace rbstein {

/// Per-particle Fisher-Adam moments. `v` is a full matrix because the second
/// moment tracks an empirical Fisher matrix rather than squared gradients.
struct AdamState {
    Vector g;
    Matrix v;
    long m = 0;

    static AdamState zeros(int n) { return {Vector::Zero(n), Matrix::Zero(n, n), 0}; }
};

/// N parameter particles (columns of `thetas`, unconstrained space), their
/// normalized weights and per-particle conditional state beliefs.
struct ParticleEnsemble {
    Matrix thetas;
    Vector weights;
    std::vector<GaussianBelief> beliefs;
    std::vector<AdamState> adam;
    Matrix score_memory;  // last posterior scores, used by PriorMode::PreviousScore
    std::uint64_t rng_seed = 0;
    std::uint64_t step = 0;

    int size() const { return static_cast<int>(thetas.cols()); }
    int dim() const { return static_cast<int>(thetas.rows()); }
    Vector theta(int i) const { return thetas.col(i); }
};

/// Equal weights, identical state beliefs, fresh Adam moments.
ParticleEnsemble make_ensemble(const Matrix& thetas, const GaussianBelief& initial_belief, std::uint64_t seed);

/// Throws ShapeError / BeliefInvalid when the ensemble breaks its invariants.
void validate_ensemble(const ParticleEnsemble& ens);

}  // namespace rbstein
