#include "cadgmm/tape.hpp"

#include <cmath>
#include <utility>

#include "cadgmm/linalg.hpp"

namespace cadgmm {

const Matrix& Var::value() const { return tape->value_of(*this); }
std::size_t Var::rows() const { return value().rows(); }
std::size_t Var::cols() const { return value().cols(); }

namespace {

void axpy(Matrix& acc, const Matrix& g, double scale = 1.0) {
    for (std::size_t i = 0; i < acc.size(); ++i) acc.data()[i] += scale * g.data()[i];
}

}  // namespace

Var Tape::push(Matrix value, bool requires_grad, std::function<void(Tape&, const Matrix&)> fn) {
    if (!requires_grad) fn = nullptr;
    nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, std::move(fn)});
    return Var{this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

void Tape::add_grad(std::int32_t idx, const Matrix& g) {
    Node& n = node(idx);
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
        n.grad = Matrix(n.value.rows(), n.value.cols());
    }
    axpy(n.grad, g);
}

void Tape::check_owned(Var v, const char* op) const {
    if (v.tape != this || v.node < 0 || static_cast<std::size_t>(v.node) >= nodes_.size()) {
        throw ShapeError(std::string(op) + ": operand does not belong to this tape");
    }
}

const Matrix& Tape::value_of(Var v) const {
    check_owned(v, "value_of");
    return node(v.node).value;
}

bool Tape::has_grad(Var v) const {
    check_owned(v, "has_grad");
    return !node(v.node).grad.empty();
}

Matrix Tape::grad_of(Var v) const {
    check_owned(v, "grad_of");
    const Node& n = node(v.node);
    if (n.grad.empty()) return Matrix(n.value.rows(), n.value.cols());
    return n.grad;
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::leaf(Matrix value) { return push(std::move(value), true, nullptr); }

Var Tape::matmul(Var a, Var b) {
    check_owned(a, "matmul");
    check_owned(b, "matmul");
    Matrix out = cadgmm::matmul(val(a), val(b));
    const bool needs = needs_grad(a) || needs_grad(b);
    const std::int32_t ia = a.node, ib = b.node;
    return push(std::move(out), needs, [ia, ib](Tape& t, const Matrix& g) {
        if (t.node(ia).requires_grad) t.add_grad(ia, matmul_nt(g, t.node(ib).value));
        if (t.node(ib).requires_grad) t.add_grad(ib, matmul_tn(t.node(ia).value, g));
    });
}

Var Tape::transpose(Var a) {
    check_owned(a, "transpose");
    Matrix out = val(a).transposed();
    const bool needs = needs_grad(a);
    const std::int32_t ia = a.node;
    return push(std::move(out), needs, [ia](Tape& t, const Matrix& g) {
        t.add_grad(ia, g.transposed());
    });
}

Var Tape::add(Var a, Var b) {
    check_owned(a, "add");
    check_owned(b, "add");
    require_same_shape(val(a), val(b), "add");
    Matrix out = val(a);
    axpy(out, val(b));
    const bool needs = needs_grad(a) || needs_grad(b);
    const std::int32_t ia = a.node, ib = b.node;
    return push(std::move(out), needs, [ia, ib](Tape& t, const Matrix& g) {
        t.add_grad(ia, g);
        t.add_grad(ib, g);
    });
}

Var Tape::sub(Var a, Var b) {
    check_owned(a, "sub");
    check_owned(b, "sub");
    require_same_shape(val(a), val(b), "sub");
    Matrix out = val(a);
    axpy(out, val(b), -1.0);
    const bool needs = needs_grad(a) || needs_grad(b);
    const std::int32_t ia = a.node, ib = b.node;
    return push(std::move(out), needs, [ia, ib](Tape& t, const Matrix& g) {
        t.add_grad(ia, g);
        if (t.node(ib).requires_grad) {
            Matrix neg = g;
            for (std::size_t i = 0; i < neg.size(); ++i) neg.data()[i] = -neg.data()[i];
            t.add_grad(ib, neg);
        }
    });
}

Var Tape::mul(Var a, Var b) {
    check_owned(a, "mul");
    check_owned(b, "mul");
    require_same_shape(val(a), val(b), "mul");
    Matrix out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= val(b).data()[i];
    const bool needs = needs_grad(a) || needs_grad(b);
    const std::int32_t ia = a.node, ib = b.node;
    return push(std::move(out), needs, [ia, ib](Tape& t, const Matrix& g) {
        if (t.node(ia).requires_grad) {
            Matrix da = g;
            const Matrix& bv = t.node(ib).value;
            for (std::size_t i = 0; i < da.size(); ++i) da.data()[i] *= bv.data()[i];
            t.add_grad(ia, da);
        }
        if (t.node(ib).requires_grad) {
            Matrix db = g;
            const Matrix& av = t.node(ia).value;
            for (std::size_t i = 0; i < db.size(); ++i) db.data()[i] *= av.data()[i];
            t.add_grad(ib, db);
        }
    });
}

Var Tape::scale(Var a, double c) {
    check_owned(a, "scale");
    Matrix out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= c;
    const bool needs = needs_grad(a);
    const std::int32_t ia = a.node;
    return push(std::move(out), needs, [ia, c](Tape& t, const Matrix& g) {
        Matrix da = g;
        for (std::size_t i = 0; i < da.size(); ++i) da.data()[i] *= c;
        t.add_grad(ia, da);
    });
}

Var Tape::add_const(Var a, double c) {
    check_owned(a, "add_const");
    Matrix out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += c;
    const bool needs = needs_grad(a);
    const std::int32_t ia = a.node;
    return push(std::move(out), needs, [ia](Tape& t, const Matrix& g) {
        t.add_grad(ia, g);
    });
}

Var Tape::add_row(Var a, Var row) {
    check_owned(a, "add_row");
    check_owned(row, "add_row");
    if (val(row).rows() != 1 || val(row).cols() != val(a).cols()) {
        throw ShapeError("add_row: " + shape_string(val(a)) + " + row " + shape_string(val(row)));
    }
    Matrix out = val(a);
    for (std::size_t i = 0; i < out.rows(); ++i) {
        double* dst = out.row(i);
        const double* r = val(row).row(0);
        for (std::size_t j = 0; j < out.cols(); ++j) dst[j] += r[j];
    }
    const bool needs = needs_grad(a) || needs_grad(row);
    const std::int32_t ia = a.node, ir = row.node;
    return push(std::move(out), needs, [ia, ir](Tape& t, const Matrix& g) {
        t.add_grad(ia, g);
        if (t.node(ir).requires_grad) t.add_grad(ir, col_sums(g));
    });
}

Var Tape::sub_row(Var a, Var row) {
    check_owned(a, "sub_row");
    check_owned(row, "sub_row");
    if (val(row).rows() != 1 || val(row).cols() != val(a).cols()) {
        throw ShapeError("sub_row: " + shape_string(val(a)) + " - row " + shape_string(val(row)));
    }
    Matrix out = val(a);
    for (std::size_t i = 0; i < out.rows(); ++i) {
        double* dst = out.row(i);
        const double* r = val(row).row(0);
        for (std::size_t j = 0; j < out.cols(); ++j) dst[j] -= r[j];
    }
    const bool needs = needs_grad(a) || needs_grad(row);
    const std::int32_t ia = a.node, ir = row.node;
    return push(std::move(out), needs, [ia, ir](Tape& t, const Matrix& g) {
        t.add_grad(ia, g);
        if (t.node(ir).requires_grad) {
            Matrix dr = col_sums(g);
            for (std::size_t i = 0; i < dr.size(); ++i) dr.data()[i] = -dr.data()[i];
            t.add_grad(ir, dr);
        }
    });
}

Var Tape::add_col(Var a, Var col) {
    check_owned(a, "add_col");
    check_owned(col, "add_col");
    if (val(col).cols() != 1 || val(col).rows() != val(a).rows()) {
        throw ShapeError("add_col: " + shape_string(val(a)) + " + col " + shape_string(val(col)));
    }
    Matrix out = val(a);
    for (std::size_t i = 0; i < out.rows(); ++i) {
        double* dst = out.row(i);
        const double c = val(col)(i, 0);
        for (std::size_t j = 0; j < out.cols(); ++j) dst[j] += c;
    }
    const bool needs = needs_grad(a) || needs_grad(col);
    const std::int32_t ia = a.node, ic = col.node;
    return push(std::move(out), needs, [ia, ic](Tape& t, const Matrix& g) {
        t.add_grad(ia, g);
        if (t.node(ic).requires_grad) {
            Matrix dc(g.rows(), 1);
            for (std::size_t i = 0; i < g.rows(); ++i) {
                const double* gr = g.row(i);
                double acc = 0.0;
                for (std::size_t j = 0; j < g.cols(); ++j) acc += gr[j];
                dc(i, 0) = acc;
            }
            t.add_grad(ic, dc);
        }
    });
}

Var Tape::add_scalar(Var a, Var s) {
    check_owned(a, "add_scalar");
    check_owned(s, "add_scalar");
    if (val(s).rows() != 1 || val(s).cols() != 1) {
        throw ShapeError("add_scalar: scalar operand has shape " + shape_string(val(s)));
    }
    Matrix out = val(a);
    const double sv = val(s)(0, 0);
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += sv;
    const bool needs = needs_grad(a) || needs_grad(s);
    const std::int32_t ia = a.node, is = s.node;
    return push(std::move(out), needs, [ia, is](Tape& t, const Matrix& g) {
        t.add_grad(ia, g);
        if (t.node(is).requires_grad) {
            t.add_grad(is, Matrix(1, 1, {sum_all(g)}));
        }
    });
}

Var Tape::scale_by(Var a, Var s) {
    check_owned(a, "scale_by");
    check_owned(s, "scale_by");
    if (val(s).rows() != 1 || val(s).cols() != 1) {
        throw ShapeError("scale_by: scalar operand has shape " + shape_string(val(s)));
    }
    Matrix out = val(a);
    const double sv = val(s)(0, 0);
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= sv;
    const bool needs = needs_grad(a) || needs_grad(s);
    const std::int32_t ia = a.node, is = s.node;
    return push(std::move(out), needs, [ia, is](Tape& t, const Matrix& g) {
        if (t.node(ia).requires_grad) {
            Matrix da = g;
            const double svv = t.node(is).value(0, 0);
            for (std::size_t i = 0; i < da.size(); ++i) da.data()[i] *= svv;
            t.add_grad(ia, da);
        }
        if (t.node(is).requires_grad) {
            const Matrix& av = t.node(ia).value;
            double acc = 0.0;
            for (std::size_t i = 0; i < av.size(); ++i) acc += av.data()[i] * g.data()[i];
            t.add_grad(is, Matrix(1, 1, {acc}));
        }
    });
}

Var Tape::rows_scaled(Var a, Var w) {
    check_owned(a, "rows_scaled");
    check_owned(w, "rows_scaled");
    if (val(w).cols() != 1 || val(w).rows() != val(a).rows()) {
        throw ShapeError("rows_scaled: " + shape_string(val(a)) + " with weights " +
                         shape_string(val(w)));
    }
    Matrix out = val(a);
    for (std::size_t i = 0; i < out.rows(); ++i) {
        double* dst = out.row(i);
        const double wi = val(w)(i, 0);
        for (std::size_t j = 0; j < out.cols(); ++j) dst[j] *= wi;
    }
    const bool needs = needs_grad(a) || needs_grad(w);
    const std::int32_t ia = a.node, iw = w.node;
    return push(std::move(out), needs, [ia, iw](Tape& t, const Matrix& g) {
        if (t.node(ia).requires_grad) {
            Matrix da = g;
            const Matrix& wv = t.node(iw).value;
            for (std::size_t i = 0; i < da.rows(); ++i) {
                double* dst = da.row(i);
                const double wi = wv(i, 0);
                for (std::size_t j = 0; j < da.cols(); ++j) dst[j] *= wi;
            }
            t.add_grad(ia, da);
        }
        if (t.node(iw).requires_grad) {
            const Matrix& av = t.node(ia).value;
            Matrix dw(g.rows(), 1);
            for (std::size_t i = 0; i < g.rows(); ++i) {
                const double* gr = g.row(i);
                const double* ar = av.row(i);
                double acc = 0.0;
                for (std::size_t j = 0; j < g.cols(); ++j) acc += gr[j] * ar[j];
                dw(i, 0) = acc;
            }
            t.add_grad(iw, dw);
        }
    });
}

Var Tape::tanh(Var a) {
    check_owned(a, "tanh");
    Matrix out = tanh_elem(val(a));
    const bool needs = needs_grad(a);
    const std::int32_t ia = a.node;
    Var r = push(std::move(out), needs, nullptr);
    if (needs) {
        const std::int32_t iy = r.node;
        node(iy).backprop = [ia, iy](Tape& t, const Matrix& g) {
            const Matrix& y = t.node(iy).value;
            Matrix da = g;
            for (std::size_t i = 0; i < da.size(); ++i) {
                const double yi = y.data()[i];
                da.data()[i] *= 1.0 - yi * yi;
            }
            t.add_grad(ia, da);
        };
    }
    return r;
}

Var Tape::log(Var a) {
    check_owned(a, "log");
    Matrix out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = std::log(out.data()[i]);
    const bool needs = needs_grad(a);
    const std::int32_t ia = a.node;
    return push(std::move(out), needs, [ia](Tape& t, const Matrix& g) {
        Matrix da = g;
        const Matrix& av = t.node(ia).value;
        for (std::size_t i = 0; i < da.size(); ++i) da.data()[i] /= av.data()[i];
        t.add_grad(ia, da);
    });
}

Var Tape::reciprocal(Var a) {
    check_owned(a, "reciprocal");
    Matrix out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = 1.0 / out.data()[i];
    const bool needs = needs_grad(a);
    const std::int32_t ia = a.node;
    Var r = push(std::move(out), needs, nullptr);
    if (needs) {
        const std::int32_t iy = r.node;
        node(iy).backprop = [ia, iy](Tape& t, const Matrix& g) {
            const Matrix& y = t.node(iy).value;
            Matrix da = g;
            for (std::size_t i = 0; i < da.size(); ++i) {
                const double yi = y.data()[i];
                da.data()[i] *= -yi * yi;
            }
            t.add_grad(ia, da);
        };
    }
    return r;
}

Var Tape::row_softmax(Var a) {
    check_owned(a, "row_softmax");
    Matrix out = cadgmm::row_softmax(val(a));
    const bool needs = needs_grad(a);
    const std::int32_t ia = a.node;
    Var r = push(std::move(out), needs, nullptr);
    if (needs) {
        const std::int32_t iy = r.node;
        node(iy).backprop = [ia, iy](Tape& t, const Matrix& g) {
            const Matrix& y = t.node(iy).value;
            Matrix da(g.rows(), g.cols());
            for (std::size_t i = 0; i < g.rows(); ++i) {
                const double* gr = g.row(i);
                const double* yr = y.row(i);
                double dot = 0.0;
                for (std::size_t j = 0; j < g.cols(); ++j) dot += gr[j] * yr[j];
                double* dst = da.row(i);
                for (std::size_t j = 0; j < g.cols(); ++j) dst[j] = yr[j] * (gr[j] - dot);
            }
            t.add_grad(ia, da);
        };
    }
    return r;
}

Var Tape::row_logsumexp(Var a) {
    check_owned(a, "row_logsumexp");
    const Matrix& av = val(a);
    Matrix out(av.rows(), 1);
    for (std::size_t i = 0; i < av.rows(); ++i) {
        const double* src = av.row(i);
        double mx = src[0];
        for (std::size_t j = 1; j < av.cols(); ++j) mx = std::max(mx, src[j]);
        double total = 0.0;
        for (std::size_t j = 0; j < av.cols(); ++j) total += std::exp(src[j] - mx);
        out(i, 0) = mx + std::log(total);
    }
    const bool needs = needs_grad(a);
    const std::int32_t ia = a.node;
    Var r = push(std::move(out), needs, nullptr);
    if (needs) {
        const std::int32_t iy = r.node;
        node(iy).backprop = [ia, iy](Tape& t, const Matrix& g) {
            const Matrix& av2 = t.node(ia).value;
            const Matrix& lse = t.node(iy).value;
            Matrix da(av2.rows(), av2.cols());
            for (std::size_t i = 0; i < av2.rows(); ++i) {
                const double* src = av2.row(i);
                double* dst = da.row(i);
                const double gi = g(i, 0);
                for (std::size_t j = 0; j < av2.cols(); ++j) {
                    dst[j] = gi * std::exp(src[j] - lse(i, 0));
                }
            }
            t.add_grad(ia, da);
        };
    }
    return r;
}

Var Tape::sum(Var a) {
    check_owned(a, "sum");
    Matrix out(1, 1, {sum_all(val(a))});
    const bool needs = needs_grad(a);
    const std::int32_t ia = a.node;
    return push(std::move(out), needs, [ia](Tape& t, const Matrix& g) {
        const Matrix& av = t.node(ia).value;
        t.add_grad(ia, Matrix(av.rows(), av.cols(), g(0, 0)));
    });
}

Var Tape::col_sum(Var a) {
    check_owned(a, "col_sum");
    Matrix out = col_sums(val(a));
    const bool needs = needs_grad(a);
    const std::int32_t ia = a.node;
    return push(std::move(out), needs, [ia](Tape& t, const Matrix& g) {
        const Matrix& av = t.node(ia).value;
        Matrix da(av.rows(), av.cols());
        for (std::size_t i = 0; i < da.rows(); ++i) {
            double* dst = da.row(i);
            for (std::size_t j = 0; j < da.cols(); ++j) dst[j] = g(0, j);
        }
        t.add_grad(ia, da);
    });
}

Var Tape::diag(Var a) {
    check_owned(a, "diag");
    const Matrix& av = val(a);
    if (av.rows() != av.cols()) {
        throw ShapeError("diag: matrix not square, " + shape_string(av));
    }
    Matrix out(1, av.rows());
    for (std::size_t i = 0; i < av.rows(); ++i) out(0, i) = av(i, i);
    const bool needs = needs_grad(a);
    const std::int32_t ia = a.node;
    return push(std::move(out), needs, [ia](Tape& t, const Matrix& g) {
        const Matrix& av2 = t.node(ia).value;
        Matrix da(av2.rows(), av2.cols());
        for (std::size_t i = 0; i < da.rows(); ++i) da(i, i) = g(0, i);
        t.add_grad(ia, da);
    });
}

Var Tape::add_diag(Var a, double eps) {
    check_owned(a, "add_diag");
    const Matrix& av = val(a);
    if (av.rows() != av.cols()) {
        throw ShapeError("add_diag: matrix not square, " + shape_string(av));
    }
    Matrix out = av;
    for (std::size_t i = 0; i < out.rows(); ++i) out(i, i) += eps;
    const bool needs = needs_grad(a);
    const std::int32_t ia = a.node;
    return push(std::move(out), needs, [ia](Tape& t, const Matrix& g) {
        t.add_grad(ia, g);
    });
}

Var Tape::hcat(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("hcat: no operands");
    std::size_t total_cols = 0;
    const std::size_t rows = val(parts[0]).rows();
    bool needs = false;
    for (const Var& p : parts) {
        check_owned(p, "hcat");
        if (val(p).rows() != rows) {
            throw ShapeError("hcat: row mismatch " + shape_string(val(parts[0])) + " vs " +
                             shape_string(val(p)));
        }
        total_cols += val(p).cols();
        needs = needs || needs_grad(p);
    }
    Matrix out(rows, total_cols);
    std::vector<std::int32_t> idx;
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const Var& p : parts) {
        const Matrix& pv = val(p);
        for (std::size_t i = 0; i < rows; ++i) {
            const double* src = pv.row(i);
            double* dst = out.row(i) + off;
            for (std::size_t j = 0; j < pv.cols(); ++j) dst[j] = src[j];
        }
        idx.push_back(p.node);
        offsets.push_back(off);
        off += pv.cols();
    }
    return push(std::move(out), needs,
                [idx, offsets](Tape& t, const Matrix& g) {
                             for (std::size_t p = 0; p < idx.size(); ++p) {
                                 if (!t.node(idx[p]).requires_grad) continue;
                                 const Matrix& pv = t.node(idx[p]).value;
                                 Matrix dp(pv.rows(), pv.cols());
                                 for (std::size_t i = 0; i < pv.rows(); ++i) {
                                     const double* src = g.row(i) + offsets[p];
                                     double* dst = dp.row(i);
                                     for (std::size_t j = 0; j < pv.cols(); ++j) dst[j] = src[j];
                                 }
                                 t.add_grad(idx[p], dp);
                             }
                         });
}

Var Tape::slice(Var a, std::size_t r0, std::size_t r1, std::size_t c0, std::size_t c1) {
    check_owned(a, "slice");
    const Matrix& av = val(a);
    if (r1 > av.rows() || c1 > av.cols() || r0 >= r1 || c0 >= c1) {
        throw ShapeError("slice: block [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ")x[" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") invalid for " + shape_string(av));
    }
    Matrix out(r1 - r0, c1 - c0);
    for (std::size_t i = r0; i < r1; ++i) {
        const double* src = av.row(i) + c0;
        double* dst = out.row(i - r0);
        for (std::size_t j = 0; j < c1 - c0; ++j) dst[j] = src[j];
    }
    const bool needs = needs_grad(a);
    const std::int32_t ia = a.node;
    return push(std::move(out), needs,
                [ia, r0, c0](Tape& t, const Matrix& g) {
                    const Matrix& av2 = t.node(ia).value;
                    Matrix da(av2.rows(), av2.cols());
                    for (std::size_t i = 0; i < g.rows(); ++i) {
                        const double* src = g.row(i);
                        double* dst = da.row(i + r0) + c0;
                        for (std::size_t j = 0; j < g.cols(); ++j) dst[j] = src[j];
                    }
                    t.add_grad(ia, da);
                });
}

Var Tape::gather_hood(Var col, const NeighborGraph& g) {
    check_owned(col, "gather_hood");
    const Matrix& cv = val(col);
    if (cv.cols() != 1 || cv.rows() != g.n_nodes()) {
        throw ShapeError("gather_hood: column is " + shape_string(cv) + ", graph has " +
                         std::to_string(g.n_nodes()) + " nodes");
    }
    const std::size_t n = g.n_nodes(), h = g.hood_size();
    Matrix out(n, h);
    std::vector<std::uint32_t> hood(n * h);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < h; ++j) {
            const std::uint32_t nb = g.hood(i, j);
            hood[i * h + j] = nb;
            out(i, j) = cv(nb, 0);
        }
    }
    const bool needs = needs_grad(col);
    const std::int32_t ic = col.node;
    return push(std::move(out), needs,
                [ic, hood, n, h](Tape& t, const Matrix& grad) {
                    Matrix dc(n, 1);
                    for (std::size_t i = 0; i < n; ++i) {
                        const double* gr = grad.row(i);
                        for (std::size_t j = 0; j < h; ++j) dc(hood[i * h + j], 0) += gr[j];
                    }
                    t.add_grad(ic, dc);
                });
}

Var Tape::hood_weighted_sum(Var alpha, Var h_rows, const NeighborGraph& g) {
    check_owned(alpha, "hood_weighted_sum");
    check_owned(h_rows, "hood_weighted_sum");
    const Matrix& av = val(alpha);
    const Matrix& hv = val(h_rows);
    const std::size_t n = g.n_nodes(), hs = g.hood_size(), d = hv.cols();
    if (av.rows() != n || av.cols() != hs || hv.rows() != n) {
        throw ShapeError("hood_weighted_sum: alpha " + shape_string(av) + ", features " +
                         shape_string(hv) + ", graph " + std::to_string(n) + " nodes, hood " +
                         std::to_string(hs));
    }
    Matrix out(n, d);
    std::vector<std::uint32_t> hood(n * hs);
    for (std::size_t i = 0; i < n; ++i) {
        double* dst = out.row(i);
        const double* ar = av.row(i);
        for (std::size_t j = 0; j < hs; ++j) {
            const std::uint32_t nb = g.hood(i, j);
            hood[i * hs + j] = nb;
            const double* src = hv.row(nb);
            const double w = ar[j];
            for (std::size_t c = 0; c < d; ++c) dst[c] += w * src[c];
        }
    }
    const bool needs = needs_grad(alpha) || needs_grad(h_rows);
    const std::int32_t ialpha = alpha.node, ih = h_rows.node;
    return push(std::move(out), needs,
                [ialpha, ih, hood, n, hs, d](Tape& t, const Matrix& grad) {
                    const Matrix& av2 = t.node(ialpha).value;
                    const Matrix& hv2 = t.node(ih).value;
                    const bool need_alpha = t.node(ialpha).requires_grad;
                    const bool need_h = t.node(ih).requires_grad;
                    Matrix da(need_alpha ? n : 0, need_alpha ? hs : 0);
                    Matrix dh(need_h ? n : 0, need_h ? d : 0);
                    for (std::size_t i = 0; i < n; ++i) {
                        const double* gr = grad.row(i);
                        const double* ar = av2.row(i);
                        for (std::size_t j = 0; j < hs; ++j) {
                            const std::uint32_t nb = hood[i * hs + j];
                            const double* src = hv2.row(nb);
                            if (need_alpha) {
                                double acc = 0.0;
                                for (std::size_t c = 0; c < d; ++c) acc += gr[c] * src[c];
                                da(i, j) = acc;
                            }
                            if (need_h) {
                                double* dst = dh.row(nb);
                                const double w = ar[j];
                                for (std::size_t c = 0; c < d; ++c) dst[c] += w * gr[c];
                            }
                        }
                    }
                    if (need_alpha) t.add_grad(ialpha, da);
                    if (need_h) t.add_grad(ih, dh);
                });
}

Var Tape::recon_features(Var x, Var xhat) {
    check_owned(x, "recon_features");
    check_owned(xhat, "recon_features");
    if (needs_grad(x)) {
        throw NumericError("recon_features: gradient w.r.t. the reference input not supported");
    }
    const Matrix& xv = val(x);
    const Matrix& hv = val(xhat);
    require_same_shape(xv, hv, "recon_features");
    constexpr double kGuard = 1e-12;
    const std::size_t n = xv.rows(), f = xv.cols();
    Matrix out(n, 2);
    // Per-row stats cached for the backward pass: ||x-xhat||, ||x||, ||xhat||, <x,xhat>.
    std::vector<double> err_norm(n), x_norm(n), h_norm(n), dot_xh(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* xr = xv.row(i);
        const double* hr = hv.row(i);
        double e2 = 0.0, x2 = 0.0, h2 = 0.0, dd = 0.0;
        for (std::size_t j = 0; j < f; ++j) {
            const double diff = xr[j] - hr[j];
            e2 += diff * diff;
            x2 += xr[j] * xr[j];
            h2 += hr[j] * hr[j];
            dd += xr[j] * hr[j];
        }
        err_norm[i] = std::sqrt(e2);
        x_norm[i] = std::sqrt(x2);
        h_norm[i] = std::sqrt(h2);
        dot_xh[i] = dd;
        out(i, 0) = err_norm[i] / (x_norm[i] + kGuard);
        out(i, 1) = dd / (x_norm[i] * h_norm[i] + kGuard);
    }
    const bool needs = needs_grad(xhat);
    const std::int32_t ix = x.node, ih = xhat.node;
    return push(std::move(out), needs,
                [ix, ih, err_norm, x_norm, h_norm, dot_xh, n, f, kGuard](Tape& t,
                                                                         const Matrix& g) {
                             const Matrix& xv2 = t.node(ix).value;
                             const Matrix& hv2 = t.node(ih).value;
                             Matrix dh(n, f);
                             for (std::size_t i = 0; i < n; ++i) {
                                 const double g0 = g(i, 0), g1 = g(i, 1);
                                 const double* xr = xv2.row(i);
                                 const double* hr = hv2.row(i);
                                 double* dst = dh.row(i);
                                 const double e = std::max(err_norm[i], kGuard);
                                 const double rel_den = x_norm[i] + kGuard;
                                 const double q = x_norm[i] * h_norm[i] + kGuard;
                                 const double hn = std::max(h_norm[i], kGuard);
                                 const double cos_h_coef = dot_xh[i] * x_norm[i] / (hn * q * q);
                                 for (std::size_t j = 0; j < f; ++j) {
                                     const double r = xr[j] - hr[j];
                                     double acc = g0 * (-r / (e * rel_den));
                                     acc += g1 * (xr[j] / q - cos_h_coef * hr[j]);
                                     dst[j] = acc;
                                 }
                             }
                             t.add_grad(ih, dh);
                         });
}

Var Tape::quad_form(Var centered, Var spd, double jitter_eps) {
    check_owned(centered, "quad_form");
    check_owned(spd, "quad_form");
    const Matrix& cv = val(centered);
    const Matrix& sv = val(spd);
    if (sv.rows() != sv.cols() || sv.rows() != cv.cols()) {
        throw ShapeError("quad_form: centered " + shape_string(cv) + " vs matrix " +
                         shape_string(sv));
    }
    const CholeskyFactor factor = cholesky_factor_jittered(sv, jitter_eps);
    // V row i = S^{-1} c_i.
    const Matrix v_rows = factor.solve(cv.transposed()).transposed();
    const std::size_t n = cv.rows(), d = cv.cols();
    Matrix out(n, 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double* cr = cv.row(i);
        const double* vr = v_rows.row(i);
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += cr[j] * vr[j];
        out(i, 0) = acc;
    }
    const bool needs = needs_grad(centered) || needs_grad(spd);
    const std::int32_t ic = centered.node, is = spd.node;
    return push(std::move(out), needs,
                [ic, is, v_rows, n, d](Tape& t, const Matrix& g) {
                    if (t.node(ic).requires_grad) {
                        Matrix dc(n, d);
                        for (std::size_t i = 0; i < n; ++i) {
                            const double* vr = v_rows.row(i);
                            double* dst = dc.row(i);
                            const double gi = 2.0 * g(i, 0);
                            for (std::size_t j = 0; j < d; ++j) dst[j] = gi * vr[j];
                        }
                        t.add_grad(ic, dc);
                    }
                    if (t.node(is).requires_grad) {
                        // dS = -sum_i g_i v_i v_i^T
                        Matrix ds(d, d);
                        for (std::size_t i = 0; i < n; ++i) {
                            const double* vr = v_rows.row(i);
                            const double gi = g(i, 0);
                            for (std::size_t a = 0; a < d; ++a) {
                                const double va = -gi * vr[a];
                                double* dst = ds.row(a);
                                for (std::size_t b = 0; b < d; ++b) dst[b] += va * vr[b];
                            }
                        }
                        t.add_grad(is, ds);
                    }
                });
}

Var Tape::logdet_spd(Var spd, double jitter_eps) {
    check_owned(spd, "logdet_spd");
    const Matrix& sv = val(spd);
    if (sv.rows() != sv.cols()) {
        throw ShapeError("logdet_spd: matrix not square, " + shape_string(sv));
    }
    const CholeskyFactor factor = cholesky_factor_jittered(sv, jitter_eps);
    Matrix out(1, 1, {factor.log_det});
    const bool needs = needs_grad(spd);
    const std::int32_t is = spd.node;
    return push(std::move(out), needs,
                [is, factor](Tape& t, const Matrix& g) {
                    Matrix inv = factor.inverse();
                    for (std::size_t i = 0; i < inv.size(); ++i) inv.data()[i] *= g(0, 0);
                    t.add_grad(is, inv);
                });
}

void Tape::backward(Var loss) {
    check_owned(loss, "backward");
    if (backward_done_) {
        throw NumericError("backward: called twice on one tape; rebuild the forward pass first");
    }
    const Matrix& lv = val(loss);
    if (lv.rows() != 1 || lv.cols() != 1) {
        throw ShapeError("backward: loss must be 1x1, got " + shape_string(lv));
    }
    backward_done_ = true;
    if (!node(loss.node).requires_grad) return;
    add_grad(loss.node, Matrix(1, 1, {1.0}));
    for (std::int32_t i = loss.node; i >= 0; --i) {
        Node& n = node(i);
        if (n.grad.empty() || !n.backprop) continue;
        n.backprop(*this, n.grad);
    }
}

}  // namespace cadgmm
