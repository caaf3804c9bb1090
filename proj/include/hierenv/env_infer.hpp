#pragma once

#include <string>
#include <vector>

#include "hierenv/gnn.hpp"
#include "hierenv/graph.hpp"
#include "hierenv/optim.hpp"
#include "hierenv/rng.hpp"
#include "hierenv/subgraph.hpp"

namespace hierenv {

// Per-anchor positive index sets within a batch; anchors are row indices.
using IndexSets = std::vector<std::vector<int>>;

struct EnvPosterior {
    Tensor logits;     // [B, E]
    Tensor log_probs;  // log-softmax of logits
    std::vector<int> hard;  // argmax per row, lowest index wins ties
};

// Posterior over environments from the projected variant embedding
// concatenated with the one-hot label.
EnvPosterior env_posterior(const Tensor& z_variant, const std::vector<int>& labels,
                           int num_classes, const Mlp& classifier, int env_count);

// Environment diversification loss: negated batch mean of the max
// log-posterior. Zero iff every posterior row is one-hot; at most log E.
Tensor env_diversification_loss(const EnvPosterior& posterior);

// Positive sets sharing the level's inferred environment, accumulated with
// the previous level's sets so neighborhoods only grow across levels.
IndexSets build_env_neighborhood(const std::vector<int>& env_ids, const IndexSets& prev);

// Positive sets sharing the ground-truth label.
IndexSets build_label_neighborhood(const std::vector<int>& labels);

// Multi-positive InfoNCE for one anchor row: mean over positives of
// -log(exp(z.p/tau) / sum over candidates of exp(z.n/tau)). An empty positive
// set contributes exactly zero.
Tensor info_nce(const Tensor& embeddings, int anchor, const std::vector<int>& positives,
                const std::vector<int>& candidates, double tau);

// Batch InfoNCE with candidates = everyone but the anchor; the mean runs over
// anchors with non-empty positive sets only.
Tensor batch_info_nce(const Tensor& embeddings, const IndexSets& positives, double tau);

struct Stage1Model {
    HierarchyConfig config;
    int feature_dim = 0;
    int num_classes = 2;
    ParamStore params;
    std::vector<GinEncoder> encoders;
    std::vector<Mlp> scorers;
    std::vector<ProjectionHead> variant_heads;
    std::vector<ProjectionHead> invariant_heads;
    std::vector<Mlp> env_classifiers;

    Stage1Model() = default;
    Stage1Model(const Stage1Model&) = delete;
    Stage1Model& operator=(const Stage1Model&) = delete;
    Stage1Model(Stage1Model&&) = default;
    Stage1Model& operator=(Stage1Model&&) = default;

    static Stage1Model create(const HierarchyConfig& config, int feature_dim, int num_classes,
                              int hidden_dim, int proj_dim, int gin_layers, RngStream& init);
};

struct LevelLosses {
    Tensor diversification;
    Tensor env_consistency;
    Tensor label_consistency;
    Tensor combined;  // diversification + alpha * env + beta * label
    std::vector<int> env_assignment;
    std::vector<double> hard_mask;
    // Distances to the nearest discrete decision boundary in this forward
    // pass; finite-difference probes need both comfortably positive.
    double min_threshold_margin = 0.0;  // min over edges of |p_hat - T|
    double min_argmax_margin = 0.0;     // min over rows of top-2 logit gap
};

struct Stage1BatchLoss {
    Tensor total;  // sum of per-level combined losses
    std::vector<LevelLosses> levels;
};

Stage1BatchLoss stage1_batch_loss(const Stage1Model& model, const Batch& batch,
                                  SelectionMode mode, RngStream* gumbel);

struct Stage1TrainOptions {
    int epochs = 100;
    int batch_size = 32;
    int patience = 20;
    double lr = 1e-3;
};

struct Stage1TrainResult {
    int epochs_run = 0;
    int best_epoch = 0;
    double best_val_loss = 0.0;
    std::vector<double> train_loss;
    std::vector<double> val_loss;
};

// Joint Adam training of generators and environment classifiers on the
// summed per-level loss. Early-stops on deterministic validation loss and
// restores the best checkpoint.
Stage1TrainResult train_stage1(Stage1Model& model, const std::vector<Graph>& train,
                               const std::vector<Graph>& val, const Stage1TrainOptions& options,
                               RngPack& rng);

struct EnvAssignmentRecord {
    std::string id;
    int env = 0;
    std::vector<double> posterior;
    int hierarchy = 0;  // 1-based level the assignment was read from
};

// Deterministic hard assignment at the last level for every graph: Gumbel
// sampling is replaced by thresholding the raw score.
std::vector<EnvAssignmentRecord> assign_environments(const Stage1Model& model,
                                                     const std::vector<Graph>& graphs,
                                                     int batch_size);

void save_assignments(const std::vector<EnvAssignmentRecord>& records, const std::string& path);
std::vector<EnvAssignmentRecord> load_assignments(const std::string& path);

}  // namespace hierenv
