#pragma once

#include <utility>

#include "cadgmm/matrix.hpp"

namespace cadgmm {

/// Lower-triangular Cholesky factor of an SPD matrix, with the log-determinant
/// of the factored matrix and any diagonal jitter that was applied to reach
/// positive definiteness.
struct CholeskyFactor {
    Matrix lower;
    double log_det = 0.0;
    double jitter = 0.0;

    /// Solves (L L^T) X = rhs by forward/back substitution, never forming an
    /// explicit inverse.
    Matrix solve(const Matrix& rhs) const;
    Matrix inverse() const;
    std::size_t dim() const noexcept { return lower.rows(); }
};

/// Factors `spd` directly. Throws NumericError naming the failing pivot when
/// the matrix is not positive definite.
CholeskyFactor cholesky_factor(const Matrix& spd);

/// Factors `sym` with an eps*I fallback: on failure the jitter starts at
/// `eps` and doubles, up to `max_retries` extra attempts.
CholeskyFactor cholesky_factor_jittered(const Matrix& sym, double eps, int max_retries = 3);

/// Returns (log|s|, s^{-1} v) via Cholesky.
std::pair<double, Matrix> cholesky_logdet_solve(const Matrix& s, const Matrix& v);

}  // namespace cadgmm
