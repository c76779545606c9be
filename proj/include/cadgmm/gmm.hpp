#pragma once

#include <cstdint>
#include <vector>

#include "cadgmm/matrix.hpp"

namespace cadgmm {

/// Frozen mixture parameters used for scoring. Covariances are stored
/// already symmetrized with `eps` added to the diagonal.
struct GmmState {
    Matrix phi;                            // 1 x M, sums to 1
    Matrix mu;                             // M x D
    std::vector<Matrix> sigma;             // M matrices, D x D
    std::vector<std::uint8_t> degenerate;  // 1 = component had ~zero membership
    double eps = 1e-6;

    std::size_t mixture_count() const noexcept { return phi.cols(); }
    std::size_t dim() const noexcept { return mu.cols(); }
    /// Throws NumericError if mixture weights, symmetry, or positive
    /// definiteness are violated.
    void validate() const;
};

/// Weighted-moment fit: phi_m = mean membership, mu_m and sigma_m are the
/// membership-weighted mean and covariance. A component whose total
/// membership falls below 1e-12 is flagged degenerate and gets mu = 0,
/// sigma = eps*I.
GmmState gmm_fit(const Matrix& z, const Matrix& membership, double eps);

/// Per-sample energies, N x 1:
///   E_i = -log sum_m phi_m exp(-0.5 q_im - 0.5 log|2 pi sigma_m|)
/// evaluated with a log-sum-exp over components and Cholesky solves for the
/// quadratic forms. Mixture weights are floored at 1e-30 inside the log so
/// degenerate components contribute ~nothing instead of -inf.
Matrix energy(const Matrix& z, const GmmState& g);

/// Streaming raw-moment accumulator for fitting a GmmState over many
/// batches. Keeps sum of memberships, membership-weighted feature sums, and
/// membership-weighted outer products; finalize() matches gmm_fit on the
/// concatenation of all batches to rounding error.
class GmmAccumulator {
public:
    GmmAccumulator(std::size_t mixture_count, std::size_t dim);

    void add_batch(const Matrix& z, const Matrix& membership);
    std::size_t rows_seen() const noexcept { return n_; }
    GmmState finalize(double eps) const;

private:
    std::size_t m_ = 0;
    std::size_t d_ = 0;
    std::size_t n_ = 0;
    std::vector<double> s0_;   // per component: total membership
    std::vector<Matrix> s1_;   // per component: 1 x D weighted sum
    std::vector<Matrix> s2_;   // per component: D x D weighted outer products
};

}  // namespace cadgmm
