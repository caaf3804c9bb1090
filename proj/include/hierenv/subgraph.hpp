#pragma once

#include <vector>

#include "hierenv/gnn.hpp"
#include "hierenv/graph.hpp"
#include "hierenv/rng.hpp"
#include "hierenv/tensor.hpp"

namespace hierenv {

// Per-level knobs of the nested environment structure plus the loss weights
// shared by both training stages.
struct HierarchyConfig {
    int levels = 3;                         // K
    std::vector<int> env_counts = {8, 4, 2};  // strictly decreasing across levels
    double threshold = 0.6;                 // edge-selection threshold T
    double tau_gumbel = 0.05;
    double tau_contrastive = 0.5;
    double alpha = 1.0;   // environment-consistency weight
    double beta = 1.0;    // label-consistency weight
    double lambda_irm = 0.01;
    double entropy_bonus = 0.0;  // optional assignment-entropy term, off by default

    void validate() const;
};

// Complementary per-edge weights over a batch edge list: variant + invariant
// equals the full adjacency exactly, edge by edge.
struct SubgraphPair {
    Tensor variant_weights;    // [E]
    Tensor invariant_weights;  // [E]

    Tensor variant_dense(const Batch& batch) const;
    Tensor invariant_dense(const Batch& batch) const;
};

// How edge selection behaves in a forward pass.
//   Train:     Gumbel noise, hard mask forward, straight-through backward.
//   GradCheck: Gumbel noise (frozen by the caller), soft mask values so the
//              whole composition is differentiable for finite-difference
//              verification.
//   Inference: no noise; the deterministic score itself is thresholded.
enum class SelectionMode { Train, GradCheck, Inference };

// s_ij = sigmoid(MLP([h_i + h_j, |h_i - h_j|])), one score per undirected
// edge; the symmetrized pairing makes s_ij == s_ji exact by construction.
Tensor score_edges(const Tensor& node_embeddings, const EdgeList& edges, const Mlp& scorer);

// Relaxed binary Gumbel-Softmax selection probability per edge. Scores are
// clamped to [1e-6, 1 - 1e-6] before the log-odds; differentiable in s.
Tensor gumbel_select(const Tensor& scores, double tau, RngStream& gumbel);

// N^k = N^{k-1} + 1{N^{k-1} = 0 and p_hat > T}: cumulative, monotone, binary.
std::vector<double> update_mask(const std::vector<double>& prev, const std::vector<double>& p_hat,
                                double threshold);

// Splits per-edge adjacency weights into variant (mask) and invariant
// (complement) parts; variant + invariant == 1 per existing edge.
SubgraphPair split_adjacency(const Tensor& mask);

struct LevelOutput {
    Tensor node_embeddings;  // h^k over the full adjacency
    Tensor scores;           // s per edge
    Tensor p_hat;            // selection probability per edge
    Tensor mask;             // cumulative selection mask (tensor view, [E])
    std::vector<double> hard_mask;  // binary N^k values
    SubgraphPair subgraphs;
};

// Runs all K levels: encode with the full adjacency, score, select, extend
// the cumulative mask, split. h^0 is the node feature matrix, and level k
// encodes from h^{k-1}. gumbel may be null only outside Train/GradCheck mode.
std::vector<LevelOutput> generate_hierarchy(const Batch& batch,
                                            const std::vector<GinEncoder>& encoders,
                                            const std::vector<Mlp>& scorers,
                                            const HierarchyConfig& config, SelectionMode mode,
                                            RngStream* gumbel);

}  // namespace hierenv
