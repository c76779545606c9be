#include "cadgmm/batch_source.hpp"

#include <algorithm>
#include <vector>

namespace cadgmm {

void for_each_padded_batch(
    const BatchSource& source, std::size_t batch_size, std::size_t k,
    const std::function<void(const Matrix& batch, std::size_t context_rows)>& fn) {
    const std::size_t n = source.size();
    if (batch_size < k + 1) {
        throw ShapeError("for_each_padded_batch: batch size " + std::to_string(batch_size) +
                         " must exceed k=" + std::to_string(k));
    }
    if (n < k + 1) {
        throw NumericError("for_each_padded_batch: " + std::to_string(n) +
                           " rows cannot host a " + std::to_string(k) + "-NN graph");
    }
    const std::size_t b_max = std::min(batch_size, n);
    std::vector<std::uint32_t> rows;
    std::size_t pos = 0;
    while (pos < n) {
        const std::size_t b = std::min(b_max, n - pos);
        const std::size_t context = (b < k + 1) ? (k + 1 - b) : 0;
        // context <= k < b_max <= pos here, so the borrow never underflows.
        rows.clear();
        for (std::size_t i = pos - context; i < pos + b; ++i) {
            rows.push_back(static_cast<std::uint32_t>(i));
        }
        fn(source.gather(rows), context);
        pos += b;
    }
}

}  // namespace cadgmm
