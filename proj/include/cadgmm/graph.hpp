#pragma once

#include <cstdint>
#include <iosfwd>
#include <utility>
#include <vector>

#include "cadgmm/matrix.hpp"

namespace cadgmm {

/// Per-node neighbor lists for one batch: for each node, its k nearest
/// neighbors ordered by (distance, index), self excluded. When self-loops are
/// enabled the attention neighborhood of node i is its k neighbors plus i
/// itself (appended last); the undirected edge set never contains self-loops.
class NeighborGraph {
public:
    NeighborGraph() = default;
    NeighborGraph(std::size_t n_nodes, std::size_t k, std::vector<std::uint32_t> neighbors,
                  bool self_loops);

    std::size_t n_nodes() const noexcept { return n_nodes_; }
    std::size_t k() const noexcept { return k_; }
    bool self_loops() const noexcept { return self_loops_; }

    /// j-th nearest neighbor of node i, j in [0, k).
    std::uint32_t neighbor(std::size_t i, std::size_t j) const noexcept {
        return neighbors_[i * k_ + j];
    }

    /// Attention neighborhood size: k, plus one for the self entry.
    std::size_t hood_size() const noexcept { return k_ + (self_loops_ ? 1 : 0); }

    /// h-th member of node i's attention neighborhood (self last if enabled).
    std::uint32_t hood(std::size_t i, std::size_t h) const noexcept {
        return h < k_ ? neighbors_[i * k_ + h] : static_cast<std::uint32_t>(i);
    }

    const std::vector<std::uint32_t>& flat_neighbors() const noexcept { return neighbors_; }

private:
    std::size_t n_nodes_ = 0;
    std::size_t k_ = 0;
    bool self_loops_ = true;
    std::vector<std::uint32_t> neighbors_;  // n_nodes * k
};

/// Builds the k-NN graph of the batch under Euclidean distance. Neighbors are
/// the k smallest distances from each node (self excluded), ties broken by
/// ascending node index. Rejects k >= N.
NeighborGraph build_knn_graph(const Matrix& x, std::size_t k, bool self_loops = true);

/// Deduplicated undirected edges (i < j): present iff j in neighbors(i) or
/// i in neighbors(j). Self entries never appear.
std::vector<std::pair<std::uint32_t, std::uint32_t>> undirected_edge_set(const NeighborGraph& g);

/// Debug dump of the undirected edge set as "i,j" rows.
void dump_edges_csv(const NeighborGraph& g, std::ostream& out);

}  // namespace cadgmm
