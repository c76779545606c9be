#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cadgmm/graph.hpp"
#include "cadgmm/rng.hpp"
#include "oracles.hpp"

using namespace cadgmm;

TEST_CASE("nearest neighbors on a line") {
    const Matrix x = Matrix::from_rows({{0.0}, {1.0}, {10.0}});
    const NeighborGraph g = build_knn_graph(x, 1);
    CHECK(g.neighbor(0, 0) == 1);
    CHECK(g.neighbor(1, 0) == 0);
    CHECK(g.neighbor(2, 0) == 1);
}

TEST_CASE("ties break toward lower index") {
    const Matrix x(4, 2, 0.5);  // all points identical
    const NeighborGraph g = build_knn_graph(x, 2);
    CHECK(g.neighbor(0, 0) == 1);
    CHECK(g.neighbor(0, 1) == 2);
    CHECK(g.neighbor(3, 0) == 0);
    CHECK(g.neighbor(3, 1) == 1);
}

TEST_CASE("k = N-1 yields the complete graph") {
    SeededRng rng(2);
    const Matrix x = oracles::random_matrix(rng, 6, 3);
    const NeighborGraph g = build_knn_graph(x, 5);
    for (std::size_t i = 0; i < 6; ++i) {
        std::set<std::uint32_t> seen;
        for (std::size_t j = 0; j < 5; ++j) {
            const std::uint32_t nb = g.neighbor(i, j);
            CHECK(nb != i);
            seen.insert(nb);
        }
        CHECK(seen.size() == 5);
    }
}

TEST_CASE("k >= N is rejected naming both") {
    const Matrix x(4, 2, 0.0);
    try {
        build_knn_graph(x, 4);
        FAIL("expected rejection");
    } catch (const std::exception& e) {
        const std::string msg = e.what();
        CHECK(msg.find('4') != std::string::npos);
    }
    CHECK_THROWS(build_knn_graph(x, 9));
}

TEST_CASE("matches the brute-force oracle on random instances") {
    SeededRng rng(99);
    for (int trial = 0; trial < 12; ++trial) {
        const std::size_t n = 3 + rng.index(62);  // up to 64
        const std::size_t k = 1 + rng.index(n - 1);
        const Matrix x = oracles::random_matrix(rng, n, 1 + rng.index(5));
        const NeighborGraph g = build_knn_graph(x, k);
        const auto want = oracles::brute_force_knn(x, k);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < k; ++j) CHECK(g.neighbor(i, j) == want[i][j]);
    }
}

TEST_CASE("attention neighborhood appends self last") {
    const Matrix x = Matrix::from_rows({{0.0}, {1.0}, {10.0}});
    const NeighborGraph g = build_knn_graph(x, 1);
    CHECK(g.hood_size() == 2);
    CHECK(g.hood(0, 0) == 1);
    CHECK(g.hood(0, 1) == 0);
    CHECK(g.hood(2, 0) == 1);
    CHECK(g.hood(2, 1) == 2);
    const NeighborGraph no_self = build_knn_graph(x, 1, false);
    CHECK(no_self.hood_size() == 1);
}

TEST_CASE("undirected edge set symmetrizes and deduplicates") {
    // 0 -> {1}, 1 -> {0}: one mutual edge.
    NeighborGraph mutual(2, 1, {1, 0}, true);
    auto edges = undirected_edge_set(mutual);
    REQUIRE(edges.size() == 1);
    CHECK(edges[0] == std::make_pair(std::uint32_t{0}, std::uint32_t{1}));

    // 0 -> {1}, 1 -> {2}, 2 -> {1}: edges (0,1) and (1,2).
    NeighborGraph chain(3, 1, {1, 2, 1}, true);
    edges = undirected_edge_set(chain);
    REQUIRE(edges.size() == 2);
    CHECK(edges[0] == std::make_pair(std::uint32_t{0}, std::uint32_t{1}));
    CHECK(edges[1] == std::make_pair(std::uint32_t{1}, std::uint32_t{2}));

    // Line example: brute-force-derived chain of 3.
    const Matrix x = Matrix::from_rows({{0.0}, {1.0}, {10.0}});
    edges = undirected_edge_set(build_knn_graph(x, 1));
    REQUIRE(edges.size() == 2);
    CHECK(edges[0] == std::make_pair(std::uint32_t{0}, std::uint32_t{1}));
    CHECK(edges[1] == std::make_pair(std::uint32_t{1}, std::uint32_t{2}));
}

TEST_CASE("permuting rows permutes the edge set consistently") {
    SeededRng rng(4);
    const std::size_t n = 12;
    const Matrix x = oracles::random_matrix(rng, n, 3);  // distinct distances a.s.
    const NeighborGraph g = build_knn_graph(x, 3);
    std::set<std::pair<std::uint32_t, std::uint32_t>> base;
    for (auto e : undirected_edge_set(g)) base.insert(e);

    std::vector<std::uint32_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<std::uint32_t>(i);
    rng.shuffle(perm);
    Matrix shuffled(n, 3);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < 3; ++c) shuffled(perm[i], c) = x(i, c);

    const NeighborGraph g2 = build_knn_graph(shuffled, 3);
    std::set<std::pair<std::uint32_t, std::uint32_t>> mapped;
    for (auto [a, b] : undirected_edge_set(g2)) {
        // Map shuffled indices back to original ones.
        std::uint32_t oa = 0, ob = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (perm[i] == a) oa = static_cast<std::uint32_t>(i);
            if (perm[i] == b) ob = static_cast<std::uint32_t>(i);
        }
        mapped.insert({std::min(oa, ob), std::max(oa, ob)});
    }
    CHECK(mapped == base);
}

TEST_CASE("deterministic across repeated builds") {
    SeededRng rng(8);
    const Matrix x = oracles::random_matrix(rng, 20, 4);
    const NeighborGraph a = build_knn_graph(x, 5);
    const NeighborGraph b = build_knn_graph(x, 5);
    CHECK(a.flat_neighbors() == b.flat_neighbors());
}

TEST_CASE("edge dump is a header plus one i,j pair per line") {
    const Matrix x = Matrix::from_rows({{0.0}, {1.0}, {10.0}});
    std::ostringstream out;
    dump_edges_csv(build_knn_graph(x, 1), out);
    CHECK(out.str() == "i,j\n0,1\n1,2\n");
}
