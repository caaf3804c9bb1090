#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "hierenv/tensor.hpp"

namespace hierenv {

// One labeled graph. Edges are undirected, stored once with i < j, no
// self-loops, no duplicates; the implied adjacency is symmetric, binary and
// zero on the diagonal.
struct Graph {
    std::string id;
    int num_nodes = 0;
    EdgeList edges;
    std::vector<std::vector<double>> node_features;  // num_nodes x feature_dim
    int label = 0;
    std::optional<int> true_env;
    std::optional<int> true_family;

    int feature_dim() const {
        return node_features.empty() ? 0 : static_cast<int>(node_features[0].size());
    }
    std::vector<std::vector<double>> dense_adjacency() const;
    void validate() const;  // throws ParseError on an invariant violation
};

// Block-diagonal composition of a list of graphs. Node ids are offset per
// graph; edges keep the undirected single-entry convention.
struct Batch {
    std::vector<Graph> graphs;
    int total_nodes = 0;
    int feature_dim = 0;
    std::vector<int> node_offset;    // per graph
    std::vector<int> node_to_graph;  // length total_nodes
    EdgeList edges;                  // global node indices
    std::vector<int> edge_to_graph;
    std::vector<int> labels;
    Tensor features;  // [total_nodes, feature_dim], constant

    int num_graphs() const { return static_cast<int>(graphs.size()); }
    Tensor dense_adjacency() const;  // [N, N], constant; for diagnostics/tests
    std::vector<Graph> unbatch() const { return graphs; }
};

Batch batch_graphs(const std::vector<Graph>& graphs);

// JSONL, one graph object per line. Loading validates every graph and names
// the offending line on failure; saving canonicalizes edge order so that a
// save -> load round trip is byte-stable.
std::vector<Graph> load_graphs(const std::string& path);
void save_graphs(const std::vector<Graph>& graphs, const std::string& path);

// Seed-deterministic disjoint partition; fractions must sum to 1.
std::vector<std::vector<Graph>> split_dataset(const std::vector<Graph>& graphs,
                                              const std::vector<double>& fractions, uint64_t seed);

struct DatasetManifest {
    std::string train, val, test;
    int num_classes = 2;
    int feature_dim = 0;
};

void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

}  // namespace hierenv
