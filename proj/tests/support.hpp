#pragma once

// Helpers shared by the unit tests and the acceptance binary.

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "fedagg/harness.hpp"
#include "fedagg/topology.hpp"

namespace fedagg::testing {

// Random strictly layered tree with `tiers` tiers and at most `max_nodes`
// nodes; every non-leaf tier node gets at least one child.
inline topo::TreeLayout random_layered_layout(std::mt19937_64& rng, int tiers, std::size_t max_nodes) {
    std::vector<std::size_t> counts{1};
    std::size_t total = 1;
    for (int t = 2; t <= tiers; ++t) {
        std::size_t remaining_tiers = static_cast<std::size_t>(tiers - t);
        std::size_t lo = counts.back();
        // Leave room for the tiers below, each at least as wide as this one.
        std::size_t hi = std::max(lo, (max_nodes - total) / (remaining_tiers + 1));
        std::uniform_int_distribution<std::size_t> pick(lo, std::max(lo, std::min(hi, lo * 3)));
        counts.push_back(pick(rng));
        total += counts.back();
    }
    topo::TreeLayout layout;
    std::vector<std::uint32_t> prev;
    std::uint32_t next = 0;
    nn::ModelSpec spec{{4, 3}, nn::Activation::relu};
    for (std::size_t t = 0; t < counts.size(); ++t) {
        std::vector<std::uint32_t> ids;
        for (std::size_t j = 0; j < counts[t]; ++j) ids.push_back(next++);
        std::vector<std::uint32_t> parents;
        if (t > 0) {
            // Cover every parent once, then attach the rest at random.
            parents = prev;
            std::uniform_int_distribution<std::size_t> any(0, prev.size() - 1);
            while (parents.size() < ids.size()) parents.push_back(prev[any(rng)]);
            std::shuffle(parents.begin(), parents.end(), rng);
        }
        for (std::size_t j = 0; j < ids.size(); ++j) {
            topo::NodeLayout n{topo::NodeId{ids[j]}, static_cast<int>(t + 1), std::nullopt, spec};
            if (t > 0) n.parent = topo::NodeId{parents[j]};
            layout.nodes.push_back(n);
        }
        prev = ids;
    }
    return layout;
}

// The end-to-end reference scenario: 4 classes in 8 dimensions, 800 train
// and 200 test samples, 8 devices under 2 edges, widths growing by tier.
inline harness::ExperimentConfig reference_config(std::uint64_t seed) {
    harness::ExperimentConfig cfg;
    cfg.dataset.classes = 4;
    cfg.dataset.input_dim = 8;
    cfg.dataset.samples = 1000;
    cfg.dataset.test_fraction = 0.2;
    cfg.dataset.spread = 0.5;
    cfg.topology.tiers = {{1, "cloud"}, {2, "edge"}, {8, "device"}};
    cfg.topology.models["device"] = {{8, 8, 4}, nn::Activation::relu};
    cfg.topology.models["edge"] = {{8, 16, 4}, nn::Activation::relu};
    cfg.topology.models["cloud"] = {{8, 32, 16, 4}, nn::Activation::relu};
    cfg.partition.alpha = 1.0;
    cfg.epochs = 30;
    cfg.seed = seed;
    return cfg;
}

}  // namespace fedagg::testing
