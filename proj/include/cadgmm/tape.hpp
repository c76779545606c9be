#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "cadgmm/graph.hpp"
#include "cadgmm/matrix.hpp"

namespace cadgmm {

class Tape;

/// Lightweight handle to a tape node. Valid only while its tape is alive.
struct Var {
    Tape* tape = nullptr;
    std::int32_t node = -1;

    bool valid() const noexcept { return tape != nullptr && node >= 0; }
    const Matrix& value() const;
    std::size_t rows() const;
    std::size_t cols() const;
};

/// Define-by-run reverse-mode tape over matrices. A tape is built fresh for
/// every forward pass, is confined to one thread, and supports exactly one
/// backward() per build. Node creation order is a topological order, so the
/// backward sweep visits each node exactly once in reverse.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Input that never receives a gradient.
    Var constant(Matrix value);
    /// Differentiable input (parameters).
    Var leaf(Matrix value);

    Var matmul(Var a, Var b);
    Var transpose(Var a);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);  // elementwise
    Var scale(Var a, double c);
    Var add_const(Var a, double c);
    Var add_row(Var a, Var row);     // row: 1 x d, broadcast over rows
    Var sub_row(Var a, Var row);
    Var add_col(Var a, Var col);     // col: N x 1, broadcast over columns
    Var add_scalar(Var a, Var s);    // s: 1 x 1
    Var scale_by(Var a, Var s);      // s: 1 x 1
    Var rows_scaled(Var a, Var w);   // w: N x 1, row i scaled by w_i
    Var tanh(Var a);
    Var log(Var a);
    Var reciprocal(Var a);
    Var row_softmax(Var a);
    Var row_logsumexp(Var a);        // N x 1
    Var sum(Var a);                  // 1 x 1
    Var col_sum(Var a);              // 1 x cols
    Var diag(Var a);                 // 1 x n from square a
    Var add_diag(Var a, double eps);
    Var hcat(std::span<const Var> parts);
    Var slice(Var a, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1);

    /// out(i,h) = col(hood(i,h), 0); col is N x 1.
    Var gather_hood(Var col, const NeighborGraph& g);
    /// out_i = sum_h alpha(i,h) * h_rows(hood(i,h), :).
    Var hood_weighted_sum(Var alpha, Var h_rows, const NeighborGraph& g);
    /// N x 2: [relative Euclidean distance, cosine similarity] per row.
    /// x must not require gradients.
    Var recon_features(Var x, Var xhat);
    /// q_i = c_i^T S^{-1} c_i, N x 1. S factored with eps-jitter fallback.
    Var quad_form(Var centered, Var spd, double jitter_eps);
    /// log|S| as 1 x 1, same jitter policy.
    Var logdet_spd(Var spd, double jitter_eps);

    /// Runs the reverse sweep from a scalar (1x1) loss node. Rejects a second
    /// call without rebuilding the tape.
    void backward(Var loss);

    /// Accumulated gradient; zeros of the node's shape if none reached it.
    Matrix grad_of(Var v) const;
    bool has_grad(Var v) const;
    const Matrix& value_of(Var v) const;
    std::size_t node_count() const noexcept { return nodes_.size(); }
    bool backward_done() const noexcept { return backward_done_; }

private:
    struct Node {
        Matrix value;
        Matrix grad;  // empty until a gradient reaches this node
        bool requires_grad = false;
        std::function<void(Tape&, const Matrix&)> backprop;  // null for inputs
    };

    std::vector<Node> nodes_;
    bool backward_done_ = false;

    Var push(Matrix value, bool requires_grad, std::function<void(Tape&, const Matrix&)> fn);
    Node& node(std::int32_t idx) { return nodes_[static_cast<std::size_t>(idx)]; }
    const Node& node(std::int32_t idx) const { return nodes_[static_cast<std::size_t>(idx)]; }
    void add_grad(std::int32_t idx, const Matrix& g);
    bool needs_grad(Var v) const { return node(v.node).requires_grad; }
    const Matrix& val(Var v) const { return node(v.node).value; }
    void check_owned(Var v, const char* op) const;

    friend struct Var;
};

}  // namespace cadgmm
