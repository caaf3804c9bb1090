#pragma once

#include <cstdint>
#include <vector>

#include "hierenv/graph.hpp"

namespace hierenv {

// Binary-label motif benchmark with a controllable spurious correlation.
// Every graph is one label motif (y=0: 5-cycle, y=1: house) joined to one
// variant motif from an 8-entry catalog: ids 0-3 are paths with 3..6 edges
// (family 0), ids 4-7 are cliques on 3..6 nodes (family 1). The variant
// family matches the label with probability rho, so family is predictive in
// training (rho_train) but misleading under the test split (rho_test).
struct SyntheticConfig {
    int n_train = 1000;
    int n_val = 200;
    int n_test = 500;
    double rho_train = 0.9;
    double rho_test = 0.1;
    double label_flip_prob = 0.05;
    uint64_t seed = 1;

    void validate() const;
};

struct SyntheticDataset {
    std::vector<Graph> train, val, test;
};

constexpr int kSyntheticNumEnvs = 8;
constexpr int kSyntheticNumFamilies = 2;
constexpr int kSyntheticFeatureDim = 11;  // one-hot degree capped at 10
constexpr int kSyntheticNumClasses = 2;

SyntheticDataset generate_synthetic(const SyntheticConfig& config);

}  // namespace hierenv
