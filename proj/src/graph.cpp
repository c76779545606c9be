#include "cadgmm/graph.hpp"

#include <algorithm>
#include <ostream>

namespace cadgmm {

NeighborGraph::NeighborGraph(std::size_t n_nodes, std::size_t k,
                             std::vector<std::uint32_t> neighbors, bool self_loops)
    : n_nodes_(n_nodes), k_(k), self_loops_(self_loops), neighbors_(std::move(neighbors)) {
    if (neighbors_.size() != n_nodes_ * k_) {
        throw ShapeError("neighbor list size " + std::to_string(neighbors_.size()) +
                         " does not match " + std::to_string(n_nodes_) + " nodes * k=" +
                         std::to_string(k_));
    }
    for (std::size_t i = 0; i < n_nodes_; ++i) {
        for (std::size_t j = 0; j < k_; ++j) {
            const std::uint32_t nb = neighbor(i, j);
            if (nb >= n_nodes_ || nb == i) {
                throw ShapeError("invalid neighbor " + std::to_string(nb) + " for node " +
                                 std::to_string(i));
            }
        }
    }
}

NeighborGraph build_knn_graph(const Matrix& x, std::size_t k, bool self_loops) {
    const std::size_t n = x.rows();
    if (k < 1 || k >= n) {
        throw ShapeError("build_knn_graph: need 1 <= k < N, got k=" + std::to_string(k) +
                         " with N=" + std::to_string(n));
    }
    const std::size_t f = x.cols();

    std::vector<std::uint32_t> flat(n * k);
    std::vector<double> dist(n);
    std::vector<std::uint32_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double* xi = x.row(i);
        for (std::size_t j = 0; j < n; ++j) {
            const double* xj = x.row(j);
            double acc = 0.0;
            for (std::size_t d = 0; d < f; ++d) {
                const double diff = xi[d] - xj[d];
                acc += diff * diff;
            }
            dist[j] = acc;
            order[j] = static_cast<std::uint32_t>(j);
        }
        dist[i] = -1.0;  // sentinel so self sorts first and is dropped below
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k + 1),
                          order.end(), [&dist](std::uint32_t a, std::uint32_t b) {
                              if (dist[a] != dist[b]) return dist[a] < dist[b];
                              return a < b;
                          });
        // order[0] is the self sentinel; the next k entries are the neighbors.
        for (std::size_t j = 0; j < k; ++j) flat[i * k + j] = order[j + 1];
    }
    return NeighborGraph(n, k, std::move(flat), self_loops);
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> undirected_edge_set(const NeighborGraph& g) {
    std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
    edges.reserve(g.n_nodes() * g.k());
    for (std::size_t i = 0; i < g.n_nodes(); ++i) {
        for (std::size_t j = 0; j < g.k(); ++j) {
            const std::uint32_t a = static_cast<std::uint32_t>(i);
            const std::uint32_t b = g.neighbor(i, j);
            edges.emplace_back(std::min(a, b), std::max(a, b));
        }
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    return edges;
}

void dump_edges_csv(const NeighborGraph& g, std::ostream& out) {
    out << "i,j\n";
    for (const auto& [i, j] : undirected_edge_set(g)) {
        out << i << ',' << j << '\n';
    }
}

}  // namespace cadgmm
