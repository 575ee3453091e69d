#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gpia/graph.hpp"
#include "gpia/rng.hpp"

namespace gpia::testing {

// Small deterministic graph: 8 nodes, node 7 isolated, property col 0 holds
// group codes, col 1..2 pseudo-random features, 3 classes.
inline Graph tiny_graph() {
    Graph g;
    g.n = 8;
    g.edges = {{0, 1}, {0, 2}, {1, 2}, {1, 4}, {2, 3}, {3, 4}, {4, 5}, {5, 6}};
    g.features.resize(8, 3);
    Rng rng(42);
    std::vector<int> groups = {0, 0, 1, 0, 1, 1, 0, 1};
    for (int i = 0; i < 8; ++i) {
        g.features(i, 0) = groups[static_cast<std::size_t>(i)];
        g.features(i, 1) = rng.normal();
        g.features(i, 2) = rng.normal();
    }
    g.labels = {0, 1, 2, 0, 1, 2, 0, 1};
    g.property_col = 0;
    g.property_values = {0, 1};
    g.validate();
    return g;
}

// Larger random graph for sampling tests. Half the nodes in group 0.
inline Graph medium_graph(int n = 40, std::uint64_t seed = 7) {
    Graph g;
    g.n = n;
    g.features.resize(n, 3);
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        g.features(i, 0) = i % 2;
        g.features(i, 1) = rng.normal();
        g.features(i, 2) = rng.normal();
    }
    g.labels.assign(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n; ++i) g.labels[static_cast<std::size_t>(i)] = i % 2;
    for (int u = 0; u < n; ++u)
        for (int v = u + 1; v < n; ++v)
            if (rng.uniform() < 0.18) g.edges.emplace_back(u, v);
    g.property_col = 0;
    g.property_values = {0, 1};
    g.validate();
    return g;
}

inline std::string temp_dir(const std::string& tag) {
    auto dir = std::filesystem::temp_directory_path() / ("gpia_test_" + tag);
    std::filesystem::create_directories(dir);
    return dir.string();
}

}  // namespace gpia::testing
