#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <utility>

#include "cadgmm/matrix.hpp"

namespace cadgmm {

/// Row provider for training and scoring loops. Implementations materialize
/// requested rows as a dense batch; indices are positions within the source
/// (0..size), not raw dataset row ids.
class BatchSource {
public:
    virtual ~BatchSource() = default;
    virtual std::size_t size() const = 0;
    virtual std::size_t dim() const = 0;
    virtual Matrix gather(std::span<const std::uint32_t> rows) const = 0;
};

/// Walks `source` in natural order in batches of `batch_size`, invoking
/// fn(batch, context_rows) per batch. A final batch shorter than k+1 rows
/// borrows its leading `context_rows` from the previous batch so a k-NN
/// graph still fits; callers must ignore those rows in their outputs.
/// Rejects sources smaller than k+1 rows.
void for_each_padded_batch(
    const BatchSource& source, std::size_t batch_size, std::size_t k,
    const std::function<void(const Matrix& batch, std::size_t context_rows)>& fn);

/// In-memory source over a plain matrix; rows are served verbatim.
class MatrixSource final : public BatchSource {
public:
    explicit MatrixSource(Matrix data) : data_(std::move(data)) {}

    std::size_t size() const override { return data_.rows(); }
    std::size_t dim() const override { return data_.cols(); }
    Matrix gather(std::span<const std::uint32_t> rows) const override {
        Matrix out(rows.size(), data_.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i] >= data_.rows()) {
                throw ShapeError("MatrixSource: row " + std::to_string(rows[i]) +
                                 " out of range " + std::to_string(data_.rows()));
            }
            const double* src = data_.row(rows[i]);
            double* dst = out.row(i);
            for (std::size_t j = 0; j < data_.cols(); ++j) dst[j] = src[j];
        }
        return out;
    }

    const Matrix& data() const noexcept { return data_; }

private:
    Matrix data_;
};

}  // namespace cadgmm
