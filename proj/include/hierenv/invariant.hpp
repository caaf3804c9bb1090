#pragma once

#include <string>
#include <vector>

#include "hierenv/env_infer.hpp"
#include "hierenv/gnn.hpp"
#include "hierenv/graph.hpp"
#include "hierenv/optim.hpp"
#include "hierenv/rng.hpp"

namespace hierenv {

// Stage-2 classifier: GIN encoder over the full adjacency plus a linear
// head. Binary tasks use a single logit; multi-class tasks use one per class.
struct InvariantClassifier {
    int num_classes = 2;
    double dropout_rate = 0.5;
    ParamStore params;
    GinEncoder encoder;
    Tensor head_w, head_b;

    InvariantClassifier() = default;
    InvariantClassifier(const InvariantClassifier&) = delete;
    InvariantClassifier& operator=(const InvariantClassifier&) = delete;
    InvariantClassifier(InvariantClassifier&&) = default;
    InvariantClassifier& operator=(InvariantClassifier&&) = default;

    static InvariantClassifier create(int feature_dim, int num_classes, int hidden_dim,
                                      int gin_layers, double dropout_rate, RngStream& init);

    int logit_width() const { return num_classes == 2 ? 1 : num_classes; }

    // [B, logit_width] logits; dropout applies to the pooled embedding and
    // only when a stream is supplied (training mode).
    Tensor logits(const Batch& batch, RngStream* dropout_stream = nullptr) const;
};

// Per-environment risks and squared dummy-classifier gradients.
struct RiskReport {
    std::vector<int> env_ids;
    std::vector<int> counts;
    std::vector<double> risks;      // mean loss per environment
    std::vector<double> penalties;  // squared gradient per environment
};

// IRM penalty: per environment, the squared derivative at w = 1 of that
// environment's mean loss of the dummy-scaled logits w * z. For a single
// binary logit this derivative is mean((sigmoid(z) - y) * z); for C-way
// softmax it is mean(sum_c p_c z_c - z_y). Built from forward ops so the
// penalty itself is differentiable in the logits. Environments present in
// env_ids but with no samples are skipped.
Tensor irm_penalty(const Tensor& logits, const std::vector<int>& labels,
                   const std::vector<int>& env_ids, RiskReport* report = nullptr);

// Classification loss plus lambda times the IRM penalty.
Tensor invariant_loss(const Tensor& logits, const std::vector<int>& labels,
                      const std::vector<int>& env_ids, double lambda, RiskReport* report = nullptr);

struct Stage2TrainOptions {
    int epochs = 100;
    int batch_size = 32;
    int patience = 20;
    double lr = 1e-3;
    double lambda = 0.01;
};

struct Stage2TrainResult {
    int epochs_run = 0;
    int best_epoch = 0;
    double best_val_accuracy = 0.0;
    std::vector<double> train_loss;
    std::vector<double> val_accuracy;
};

// Adam training on the environment-penalized loss with early stopping on
// validation accuracy; the best-validation checkpoint is restored. env_by_id
// must cover every training graph. lambda = 0 reproduces plain ERM.
Stage2TrainResult train_stage2(InvariantClassifier& model, const std::vector<Graph>& train,
                               const std::vector<Graph>& val,
                               const std::vector<EnvAssignmentRecord>& train_envs,
                               const Stage2TrainOptions& options, RngPack& rng);

// Deterministic class probabilities (dropout off). Binary heads emit
// [1 - sigmoid(z), sigmoid(z)].
std::vector<std::vector<double>> predict(const InvariantClassifier& model,
                                         const std::vector<Graph>& graphs, int batch_size);

void save_predictions(const std::vector<Graph>& graphs,
                      const std::vector<std::vector<double>>& probs, const std::string& path);

}  // namespace hierenv
