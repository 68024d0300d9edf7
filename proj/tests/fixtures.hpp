#pragma once

// The canonical SBM fixture shared by the training-level tests and the
// acceptance suite: hard enough that feature precision matters (all-2-bit
// cold training degrades), easy enough that an FP 2-layer GCN solves it.

#include "mixq/graph.hpp"
#include "mixq/layers.hpp"

namespace fixtures {

inline mixq::SyntheticSpec canonical_sbm_spec(uint64_t seed = 11) {
    mixq::SyntheticSpec spec;
    spec.kind = mixq::SyntheticKind::two_block_sbm;
    spec.n = 200;
    spec.f = 8;
    spec.p_in = 0.2;
    spec.p_out = 0.02;
    spec.mean_separation = 0.2;
    spec.noise = 1.5;
    spec.seed = seed;
    return spec;
}

inline mixq::GraphDataset canonical_sbm(uint64_t seed = 11) {
    return mixq::generate_synthetic(canonical_sbm_spec(seed));
}

inline mixq::ModelConfig two_layer_gcn(const mixq::GraphDataset& ds, int64_t hidden = 16) {
    mixq::ModelConfig mc;
    mc.layers.push_back({mixq::LayerKind::gcn, ds.feature_dim(), hidden, true, {}, true});
    mc.layers.push_back({mixq::LayerKind::gcn, hidden, ds.num_classes, false, {}, true});
    return mc;
}

}  // namespace fixtures
