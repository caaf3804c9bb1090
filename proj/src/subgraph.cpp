#include "hierenv/subgraph.hpp"

#include <cmath>

namespace hierenv {

void HierarchyConfig::validate() const {
    if (levels < 1) throw ContractError("HierarchyConfig: need at least one level");
    if (static_cast<int>(env_counts.size()) != levels)
        throw ContractError("HierarchyConfig: env_counts length must equal the level count");
    for (size_t k = 0; k < env_counts.size(); ++k) {
        if (env_counts[k] < 1) throw ContractError("HierarchyConfig: env counts must be positive");
        if (k > 0 && env_counts[k] >= env_counts[k - 1])
            throw ContractError("HierarchyConfig: env counts must strictly decrease across levels");
    }
    if (tau_gumbel <= 0 || tau_contrastive <= 0)
        throw ContractError("HierarchyConfig: temperatures must be positive");
    if (threshold <= 0 || threshold >= 1)
        throw ContractError("HierarchyConfig: threshold must lie in (0, 1)");
    if (alpha < 0 || beta < 0 || lambda_irm < 0 || entropy_bonus < 0)
        throw ContractError("HierarchyConfig: loss weights must be non-negative");
}

Tensor SubgraphPair::variant_dense(const Batch& batch) const {
    return scatter_edges_dense(variant_weights, batch.edges, batch.total_nodes);
}

Tensor SubgraphPair::invariant_dense(const Batch& batch) const {
    return scatter_edges_dense(invariant_weights, batch.edges, batch.total_nodes);
}

Tensor score_edges(const Tensor& node_embeddings, const EdgeList& edges, const Mlp& scorer) {
    const int E = static_cast<int>(edges.size());
    const int N = node_embeddings.size(0);
    std::vector<int> idx_i(edges.size()), idx_j(edges.size());
    for (size_t e = 0; e < edges.size(); ++e) {
        if (edges[e][0] < 0 || edges[e][0] >= N || edges[e][1] < 0 || edges[e][1] >= N)
            throw ContractError("score_edges: edge endpoint outside the embedding rows");
        idx_i[e] = edges[e][0];
        idx_j[e] = edges[e][1];
    }
    Tensor hi = gather_rows(node_embeddings, idx_i);
    Tensor hj = gather_rows(node_embeddings, idx_j);
    Tensor feat = concat({add(hi, hj), abs(sub(hi, hj))}, 1);
    Tensor logits = scorer.forward(feat);  // [E, 1]
    return sigmoid(reshape(logits, {E}));
}

Tensor gumbel_select(const Tensor& scores, double tau, RngStream& gumbel) {
    if (tau <= 0) throw ContractError("gumbel_select: tau must be positive");
    Tensor s = clamp(scores, 1e-6, 1.0 - 1e-6);
    Tensor log_odds = sub(log(s), log(sub(Tensor::full(s.shape(), 1.0), s)));
    std::vector<double> noise(static_cast<size_t>(s.numel()));
    for (double& g : noise) {
        const double g1 = gumbel.gumbel();
        const double g0 = gumbel.gumbel();
        g = g1 - g0;
    }
    Tensor noisy = add(log_odds, Tensor::from_values(s.shape(), std::move(noise)));
    // The sigmoid saturates to exactly 0/1 in double precision once
    // |argument| passes ~37; keep the result inside the open interval.
    return clamp(sigmoid(scale(noisy, 1.0 / tau)), 1e-15, 1.0 - 1e-15);
}

std::vector<double> update_mask(const std::vector<double>& prev, const std::vector<double>& p_hat,
                                double threshold) {
    if (prev.size() != p_hat.size())
        throw ContractError("update_mask: mask and probability lengths differ");
    std::vector<double> next(prev.size());
    for (size_t e = 0; e < prev.size(); ++e)
        next[e] = (prev[e] != 0.0 || p_hat[e] > threshold) ? 1.0 : 0.0;
    return next;
}

SubgraphPair split_adjacency(const Tensor& mask) {
    SubgraphPair pair;
    pair.variant_weights = mask;
    pair.invariant_weights = sub(Tensor::full(mask.shape(), 1.0), mask);
    return pair;
}

std::vector<LevelOutput> generate_hierarchy(const Batch& batch,
                                            const std::vector<GinEncoder>& encoders,
                                            const std::vector<Mlp>& scorers,
                                            const HierarchyConfig& config, SelectionMode mode,
                                            RngStream* gumbel) {
    config.validate();
    if (static_cast<int>(encoders.size()) != config.levels ||
        static_cast<int>(scorers.size()) != config.levels)
        throw ContractError("generate_hierarchy: need one encoder and scorer per level");
    if (mode != SelectionMode::Inference && gumbel == nullptr)
        throw ContractError("generate_hierarchy: training modes need a Gumbel stream");

    std::vector<LevelOutput> levels;
    levels.reserve(static_cast<size_t>(config.levels));
    std::vector<double> prev_mask(batch.edges.size(), 0.0);  // N^0 = 0
    Tensor h = batch.features;

    for (int k = 0; k < config.levels; ++k) {
        LevelOutput out;
        for (const auto& layer : encoders[k].layers) h = layer.forward(h, batch.edges, Tensor());
        out.node_embeddings = h;
        out.scores = score_edges(h, batch.edges, scorers[k]);
        out.p_hat = (mode == SelectionMode::Inference)
                        ? out.scores
                        : gumbel_select(out.scores, config.tau_gumbel, *gumbel);
        out.mask = (mode == SelectionMode::GradCheck)
                       ? select_mask_soft(out.p_hat, prev_mask, config.threshold)
                       : select_mask_hard(out.p_hat, prev_mask, config.threshold);
        out.hard_mask = update_mask(prev_mask, out.p_hat.values(), config.threshold);
        out.subgraphs = split_adjacency(out.mask);
        prev_mask = out.hard_mask;
        levels.push_back(std::move(out));
    }
    return levels;
}

}  // namespace hierenv
