#include "hierenv/invariant.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <unordered_map>

#include <json.hpp>

namespace hierenv {

InvariantClassifier InvariantClassifier::create(int feature_dim, int num_classes, int hidden_dim,
                                                int gin_layers, double dropout_rate,
                                                RngStream& init) {
    if (num_classes < 2) throw ContractError("InvariantClassifier: need at least two classes");
    InvariantClassifier m;
    m.num_classes = num_classes;
    m.dropout_rate = dropout_rate;
    m.encoder = GinEncoder::create(m.params, "cls.gin", feature_dim, hidden_dim, gin_layers, init);
    const int out = m.logit_width();
    m.head_w = m.params.add("cls.head_w", init_weight(hidden_dim, out, init));
    m.head_b = m.params.add("cls.head_b", Tensor::zeros({out}));
    return m;
}

Tensor InvariantClassifier::logits(const Batch& batch, RngStream* dropout_stream) const {
    Tensor pooled = encoder.encode(batch).graph_embeddings;
    if (dropout_stream != nullptr && dropout_rate > 0.0)
        pooled = dropout(pooled, 1.0 - dropout_rate, *dropout_stream);
    return add(matmul(pooled, head_w), head_b);
}

namespace {

// Indices per distinct environment id, ordered by id.
std::map<int, std::vector<int>> group_by_env(const std::vector<int>& env_ids) {
    std::map<int, std::vector<int>> groups;
    for (size_t i = 0; i < env_ids.size(); ++i)
        groups[env_ids[i]].push_back(static_cast<int>(i));
    return groups;
}

// mean over the rows of (sigmoid(z) - y) * z for a single-logit head.
Tensor dummy_grad_binary(const Tensor& logits_col, const std::vector<double>& targets) {
    Tensor z = reshape(logits_col, {static_cast<int>(targets.size())});
    Tensor residual = sub(sigmoid(z), Tensor::from_values(z.shape(), targets));
    return mean(mul(residual, z));
}

// mean over rows of sum_c softmax(z)_c z_c - z_y for a C-way head.
Tensor dummy_grad_multiclass(const Tensor& logits, const std::vector<int>& labels) {
    const int B = logits.size(0), C = logits.size(1);
    Tensor expected = scale(sum(mul(softmax(logits), logits)), 1.0 / B);
    std::vector<double> pick(static_cast<size_t>(B) * C, 0.0);
    for (int i = 0; i < B; ++i) pick[static_cast<size_t>(i) * C + labels[i]] = 1.0 / B;
    Tensor picked = sum(mul(logits, Tensor::from_values(logits.shape(), std::move(pick))));
    return sub(expected, picked);
}

}  // namespace

Tensor irm_penalty(const Tensor& logits, const std::vector<int>& labels,
                   const std::vector<int>& env_ids, RiskReport* report) {
    if (static_cast<size_t>(logits.size(0)) != labels.size() || labels.size() != env_ids.size())
        throw ContractError("irm_penalty: logits, labels and env ids must align");
    const bool binary = (logits.size(1) == 1);

    Tensor total = Tensor::scalar(0.0);
    for (const auto& [env, idx] : group_by_env(env_ids)) {
        Tensor env_logits = gather_rows(logits, idx);
        std::vector<int> env_labels;
        for (int i : idx) env_labels.push_back(labels[i]);

        Tensor grad_w;
        Tensor risk;
        if (binary) {
            std::vector<double> targets(env_labels.begin(), env_labels.end());
            grad_w = dummy_grad_binary(env_logits, targets);
            risk = bce_with_logits(env_logits, targets);
        } else {
            grad_w = dummy_grad_multiclass(env_logits, env_labels);
            risk = ce_with_logits(env_logits, env_labels);
        }
        Tensor penalty = mul(grad_w, grad_w);
        total = add(total, penalty);
        if (report != nullptr) {
            report->env_ids.push_back(env);
            report->counts.push_back(static_cast<int>(idx.size()));
            report->risks.push_back(risk.item());
            report->penalties.push_back(penalty.item());
        }
    }
    return total;
}

Tensor invariant_loss(const Tensor& logits, const std::vector<int>& labels,
                      const std::vector<int>& env_ids, double lambda, RiskReport* report) {
    if (lambda < 0) throw ContractError("invariant_loss: lambda must be non-negative");
    Tensor cls;
    if (logits.size(1) == 1) {
        std::vector<double> targets(labels.begin(), labels.end());
        cls = bce_with_logits(logits, targets);
    } else {
        cls = ce_with_logits(logits, labels);
    }
    if (lambda == 0.0 && report == nullptr) return cls;
    Tensor penalty = irm_penalty(logits, labels, env_ids, report);
    return lambda == 0.0 ? cls : add(cls, scale(penalty, lambda));
}

namespace {

std::vector<Batch> make_batches(const std::vector<Graph>& graphs, const std::vector<int>& order,
                                int batch_size) {
    std::vector<Batch> batches;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
        std::vector<Graph> chunk;
        for (size_t i = start; i < std::min(order.size(), start + static_cast<size_t>(batch_size));
             ++i)
            chunk.push_back(graphs[order[i]]);
        batches.push_back(batch_graphs(chunk));
    }
    return batches;
}

}  // namespace

Stage2TrainResult train_stage2(InvariantClassifier& model, const std::vector<Graph>& train,
                               const std::vector<Graph>& val,
                               const std::vector<EnvAssignmentRecord>& train_envs,
                               const Stage2TrainOptions& options, RngPack& rng) {
    if (options.epochs <= 0) throw ContractError("train_stage2: epochs must be positive");
    if (train.empty()) throw ContractError("train_stage2: empty training set");

    std::unordered_map<std::string, int> env_by_id;
    for (const auto& r : train_envs) env_by_id[r.id] = r.env;
    for (const auto& g : train)
        if (!env_by_id.count(g.id))
            throw ContractError("train_stage2: no environment assignment for graph '" + g.id + "'");

    Adam adam(model.params, AdamConfig{options.lr, 0.9, 0.999, 1e-8});
    model.params.zero_grad();

    auto val_accuracy = [&]() {
        if (val.empty()) return 0.0;
        int correct = 0;
        for (const auto& batch : make_batches(val, [&] {
                 std::vector<int> o(val.size());
                 for (size_t i = 0; i < o.size(); ++i) o[i] = static_cast<int>(i);
                 return o;
             }(), options.batch_size)) {
            Tensor z = model.logits(batch);
            for (int i = 0; i < batch.num_graphs(); ++i) {
                int pred;
                if (model.logit_width() == 1) {
                    pred = z(i, 0) > 0 ? 1 : 0;
                } else {
                    pred = 0;
                    for (int c = 1; c < model.num_classes; ++c)
                        if (z(i, c) > z(i, pred)) pred = c;
                }
                if (pred == batch.labels[i]) ++correct;
            }
        }
        return static_cast<double>(correct) / val.size();
    };

    Stage2TrainResult result;
    double best_acc = -1.0;
    int since_best = 0;
    std::vector<std::vector<double>> best_snapshot = model.params.snapshot();

    std::vector<int> order(train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
            std::swap(order[i], order[rng.data.uniform_int(i + 1)]);
        double epoch_loss = 0.0;
        int nb = 0;
        for (const auto& batch : make_batches(train, order, options.batch_size)) {
            std::vector<int> envs;
            envs.reserve(static_cast<size_t>(batch.num_graphs()));
            for (const auto& g : batch.graphs) envs.push_back(env_by_id.at(g.id));
            Tensor loss;
            try {
                Tensor z = model.logits(batch, &rng.dropout);
                loss = invariant_loss(z, batch.labels, envs, options.lambda);
            } catch (const DomainError& e) {
                throw DomainError("stage-2 training diverged at epoch " + std::to_string(epoch) +
                                  ", batch " + std::to_string(nb) + ": " + e.what());
            }
            epoch_loss += loss.item();
            ++nb;
            backward(loss);
            adam.step();
        }
        result.train_loss.push_back(epoch_loss / nb);

        const double acc = val_accuracy();
        result.val_accuracy.push_back(acc);
        result.epochs_run = epoch + 1;
        if (acc > best_acc + 1e-12) {
            best_acc = acc;
            result.best_epoch = epoch + 1;
            since_best = 0;
            best_snapshot = model.params.snapshot();
        } else if (++since_best >= options.patience) {
            break;
        }
    }
    model.params.restore(best_snapshot);
    result.best_val_accuracy = best_acc;
    return result;
}

std::vector<std::vector<double>> predict(const InvariantClassifier& model,
                                         const std::vector<Graph>& graphs, int batch_size) {
    std::vector<std::vector<double>> probs;
    probs.reserve(graphs.size());
    std::vector<int> order(graphs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (const auto& batch : make_batches(graphs, order, batch_size)) {
        if (batch.feature_dim != model.encoder.layers[0].mlp.in_dim())
            throw ContractError("predict: feature width differs from the trained model");
        Tensor z = model.logits(batch);
        for (int i = 0; i < batch.num_graphs(); ++i) {
            if (model.logit_width() == 1) {
                const double x = z(i, 0);
                const double p = x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                                        : std::exp(x) / (1.0 + std::exp(x));
                probs.push_back({1.0 - p, p});
            } else {
                std::vector<double> row(static_cast<size_t>(model.num_classes));
                double mx = -std::numeric_limits<double>::infinity();
                for (int c = 0; c < model.num_classes; ++c) mx = std::max(mx, z(i, c));
                double s = 0.0;
                for (int c = 0; c < model.num_classes; ++c) {
                    row[c] = std::exp(z(i, c) - mx);
                    s += row[c];
                }
                for (double& v : row) v /= s;
                probs.push_back(std::move(row));
            }
        }
    }
    return probs;
}

void save_predictions(const std::vector<Graph>& graphs,
                      const std::vector<std::vector<double>>& probs, const std::string& path) {
    if (graphs.size() != probs.size())
        throw ContractError("save_predictions: graph and probability counts differ");
    std::ofstream out(path);
    if (!out) throw DependencyError("cannot write predictions: " + path);
    for (size_t i = 0; i < graphs.size(); ++i) {
        nlohmann::ordered_json j;
        j["id"] = graphs[i].id;
        j["probs"] = probs[i];
        out << j.dump() << "\n";
    }
}

}  // namespace hierenv
