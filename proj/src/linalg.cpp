#include "cadgmm/linalg.hpp"

#include <cmath>

namespace cadgmm {

Matrix CholeskyFactor::solve(const Matrix& rhs) const {
    const std::size_t n = lower.rows();
    if (rhs.rows() != n) {
        throw ShapeError("cholesky solve: rhs has " + std::to_string(rhs.rows()) +
                         " rows, factor is " + shape_string(lower));
    }
    const std::size_t m = rhs.cols();
    Matrix y(n, m);
    // L y = rhs
    for (std::size_t i = 0; i < n; ++i) {
        const double* li = lower.row(i);
        for (std::size_t c = 0; c < m; ++c) {
            double acc = rhs(i, c);
            for (std::size_t j = 0; j < i; ++j) acc -= li[j] * y(j, c);
            y(i, c) = acc / li[i];
        }
    }
    // L^T x = y
    Matrix x(n, m);
    for (std::size_t ii = n; ii-- > 0;) {
        for (std::size_t c = 0; c < m; ++c) {
            double acc = y(ii, c);
            for (std::size_t j = ii + 1; j < n; ++j) acc -= lower(j, ii) * x(j, c);
            x(ii, c) = acc / lower(ii, ii);
        }
    }
    return x;
}

Matrix CholeskyFactor::inverse() const { return solve(Matrix::identity(lower.rows())); }

CholeskyFactor cholesky_factor(const Matrix& spd) {
    if (spd.rows() != spd.cols()) {
        throw ShapeError("cholesky: matrix not square, " + shape_string(spd));
    }
    const std::size_t n = spd.rows();
    CholeskyFactor f;
    f.lower = Matrix(n, n);
    double log_det = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double acc = spd(i, j);
            const double* li = f.lower.row(i);
            const double* lj = f.lower.row(j);
            for (std::size_t k = 0; k < j; ++k) acc -= li[k] * lj[k];
            if (i == j) {
                if (acc <= 0.0 || !std::isfinite(acc)) {
                    throw NumericError("cholesky: matrix not positive definite at pivot " +
                                       std::to_string(i));
                }
                f.lower(i, j) = std::sqrt(acc);
                log_det += 2.0 * std::log(f.lower(i, j));
            } else {
                f.lower(i, j) = acc / lj[j];
            }
        }
    }
    f.log_det = log_det;
    return f;
}

CholeskyFactor cholesky_factor_jittered(const Matrix& sym, double eps, int max_retries) {
    double jitter = 0.0;
    double next = eps;
    for (int attempt = 0;; ++attempt) {
        try {
            Matrix shifted = sym;
            if (jitter > 0.0) {
                for (std::size_t i = 0; i < shifted.rows(); ++i) shifted(i, i) += jitter;
            }
            CholeskyFactor f = cholesky_factor(shifted);
            f.jitter = jitter;
            return f;
        } catch (const NumericError&) {
            if (attempt >= max_retries) throw;
            jitter += next;
            next *= 2.0;
        }
    }
}

std::pair<double, Matrix> cholesky_logdet_solve(const Matrix& s, const Matrix& v) {
    const CholeskyFactor f = cholesky_factor(s);
    return {f.log_det, f.solve(v)};
}

}  // namespace cadgmm
