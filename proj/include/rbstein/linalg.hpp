#pragma once

#include "rbstein/model.hpp"

#include <cstdint>
#include <random>

namespace rbstein {

inline Matrix symmetrized(const Matrix& m) { return 0.5 * (m + m.transpose()); }

/// Symmetric square root of a PSD matrix; negative eigenvalues are clipped to 0.
Matrix psd_sqrt(const Matrix& m);

/// Draws sqrt_cov * z with z standard normal.
Vector sample_gaussian(const Matrix& sqrt_cov, std::mt19937_64& rng);

/// Independent stream for (seed, a, b), e.g. (master seed, step, particle).
std::mt19937_64 derived_stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

bool all_finite(const Vector& v);
bool all_finite(const Matrix& m);

}  // namespace rbstein
