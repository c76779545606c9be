#include "cadgmm/gmm.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "cadgmm/linalg.hpp"

namespace cadgmm {

namespace {

constexpr double kMembershipFloor = 1e-12;
constexpr double kPhiFloor = 1e-30;

void check_fit_shapes(const Matrix& z, const Matrix& membership) {
    if (z.rows() == 0) throw ShapeError("gmm_fit: no samples");
    if (membership.rows() != z.rows()) {
        throw ShapeError("gmm_fit: membership " + shape_string(membership) + " vs z " +
                         shape_string(z));
    }
}

Matrix symmetrized_with_eps(const Matrix& s, double eps) {
    Matrix out(s.rows(), s.cols());
    for (std::size_t i = 0; i < s.rows(); ++i) {
        for (std::size_t j = 0; j < s.cols(); ++j) out(i, j) = 0.5 * (s(i, j) + s(j, i));
        out(i, i) += eps;
    }
    return out;
}

}  // namespace

void GmmState::validate() const {
    const std::size_t m = mixture_count(), d = dim();
    if (mu.rows() != m || sigma.size() != m || degenerate.size() != m) {
        throw ShapeError("GmmState: phi " + shape_string(phi) + " vs mu " + shape_string(mu) +
                         " vs " + std::to_string(sigma.size()) + " covariances");
    }
    double total = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
        const double p = phi(0, k);
        if (!(p >= 0.0)) throw NumericError("GmmState: negative mixture weight");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-6) {
        throw NumericError("GmmState: mixture weights sum to " + std::to_string(total));
    }
    for (std::size_t k = 0; k < m; ++k) {
        const Matrix& s = sigma[k];
        if (s.rows() != d || s.cols() != d) {
            throw ShapeError("GmmState: covariance " + std::to_string(k) + " is " +
                             shape_string(s));
        }
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = i + 1; j < d; ++j) {
                if (std::abs(s(i, j) - s(j, i)) > 1e-10) {
                    throw NumericError("GmmState: covariance " + std::to_string(k) +
                                       " not symmetric");
                }
            }
        }
        cholesky_factor(s);  // throws if not positive definite
    }
}

GmmState gmm_fit(const Matrix& z, const Matrix& membership, double eps) {
    check_fit_shapes(z, membership);
    GmmAccumulator acc(membership.cols(), z.cols());
    acc.add_batch(z, membership);
    return acc.finalize(eps);
}

GmmAccumulator::GmmAccumulator(std::size_t mixture_count, std::size_t dim)
    : m_(mixture_count), d_(dim), s0_(mixture_count, 0.0) {
    if (m_ == 0 || d_ == 0) throw ShapeError("GmmAccumulator: zero mixture count or dim");
    s1_.reserve(m_);
    s2_.reserve(m_);
    for (std::size_t k = 0; k < m_; ++k) {
        s1_.emplace_back(1, d_);
        s2_.emplace_back(d_, d_);
    }
}

void GmmAccumulator::add_batch(const Matrix& z, const Matrix& membership) {
    if (z.cols() != d_ || membership.cols() != m_ || membership.rows() != z.rows()) {
        throw ShapeError("GmmAccumulator: z " + shape_string(z) + ", membership " +
                         shape_string(membership) + ", expected dims " + std::to_string(d_) +
                         "/" + std::to_string(m_));
    }
    const std::size_t n = z.rows();
    for (std::size_t k = 0; k < m_; ++k) {
        double* s1 = s1_[k].data();
        Matrix& s2 = s2_[k];
        double s0 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double w = membership(i, k);
            if (w == 0.0) continue;
            s0 += w;
            const double* zi = z.row(i);
            for (std::size_t a = 0; a < d_; ++a) {
                const double wza = w * zi[a];
                s1[a] += wza;
                double* s2row = s2.row(a);
                for (std::size_t b = 0; b < d_; ++b) s2row[b] += wza * zi[b];
            }
        }
        s0_[k] += s0;
    }
    n_ += n;
}

GmmState GmmAccumulator::finalize(double eps) const {
    if (n_ == 0) throw NumericError("GmmAccumulator: no samples seen");
    GmmState g;
    g.eps = eps;
    g.phi = Matrix(1, m_);
    g.mu = Matrix(m_, d_);
    g.sigma.reserve(m_);
    g.degenerate.assign(m_, 0);
    for (std::size_t k = 0; k < m_; ++k) {
        g.phi(0, k) = s0_[k] / static_cast<double>(n_);
        if (s0_[k] < kMembershipFloor) {
            g.degenerate[k] = 1;
            Matrix s(d_, d_);
            for (std::size_t i = 0; i < d_; ++i) s(i, i) = eps;
            g.sigma.push_back(std::move(s));
            continue;
        }
        const double inv = 1.0 / s0_[k];
        Matrix raw(d_, d_);
        for (std::size_t a = 0; a < d_; ++a) {
            const double mu_a = s1_[k](0, a) * inv;
            g.mu(k, a) = mu_a;
        }
        for (std::size_t a = 0; a < d_; ++a) {
            const double* s2row = s2_[k].row(a);
            double* rrow = raw.row(a);
            const double mu_a = g.mu(k, a);
            for (std::size_t b = 0; b < d_; ++b) rrow[b] = s2row[b] * inv - mu_a * g.mu(k, b);
        }
        g.sigma.push_back(symmetrized_with_eps(raw, eps));
    }
    return g;
}

Matrix energy(const Matrix& z, const GmmState& g) {
    const std::size_t n = z.rows(), d = g.dim(), m = g.mixture_count();
    if (z.cols() != d) {
        throw ShapeError("energy: z " + shape_string(z) + " vs mixture dim " + std::to_string(d));
    }
    // Per-component log weights and Cholesky factors, reused for every sample.
    Matrix logp(n, m);
    for (std::size_t k = 0; k < m; ++k) {
        CholeskyFactor factor = [&] {
            try {
                return cholesky_factor_jittered(g.sigma[k], g.eps);
            } catch (const NumericError& e) {
                throw NumericError("energy: component " + std::to_string(k) + ": " + e.what());
            }
        }();
        const double scalar_term = std::log(g.phi(0, k) + kPhiFloor) -
                                   0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) +
                                          factor.log_det);
        // Solve sigma * V^T = centered^T once for the whole batch.
        Matrix centered_t(d, n);
        for (std::size_t i = 0; i < n; ++i) {
            const double* zi = z.row(i);
            for (std::size_t a = 0; a < d; ++a) centered_t(a, i) = zi[a] - g.mu(k, a);
        }
        const Matrix solved = factor.solve(centered_t);
        for (std::size_t i = 0; i < n; ++i) {
            double q = 0.0;
            for (std::size_t a = 0; a < d; ++a) q += centered_t(a, i) * solved(a, i);
            logp(i, k) = scalar_term - 0.5 * q;
        }
    }
    Matrix out(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = logp.row(i);
        double mx = row[0];
        for (std::size_t k = 1; k < m; ++k) mx = std::max(mx, row[k]);
        double total = 0.0;
        for (std::size_t k = 0; k < m; ++k) total += std::exp(row[k] - mx);
        out(i, 0) = -(mx + std::log(total));
    }
    return out;
}

}  // namespace cadgmm
