#include "rbstein/linalg.hpp"

#include <Eigen/Eigenvalues>

namespace rbstein {

Matrix psd_sqrt(const Matrix& m) {
    if (m.size() == 0) return m;
    if (m.isZero(0.0)) return Matrix::Zero(m.rows(), m.cols());
    Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrized(m));
    Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

Vector sample_gaussian(const Matrix& sqrt_cov, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector z(sqrt_cov.cols());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal(rng);
    return sqrt_cov * z;
}

std::mt19937_64 derived_stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(a),    static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b),    static_cast<std::uint32_t>(b >> 32)};
    return std::mt19937_64(seq);
}

bool all_finite(const Vector& v) { return v.allFinite(); }
bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace rbstein
