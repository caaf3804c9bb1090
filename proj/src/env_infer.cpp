#include "hierenv/env_infer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include <json.hpp>

namespace hierenv {

EnvPosterior env_posterior(const Tensor& z_variant, const std::vector<int>& labels,
                           int num_classes, const Mlp& classifier, int env_count) {
    if (env_count < 2) throw ContractError("env_posterior: need at least two environments");
    if (static_cast<size_t>(z_variant.size(0)) != labels.size())
        throw ContractError("env_posterior: batch size differs from label count");
    Tensor input = concat({z_variant, onehot(labels, num_classes)}, 1);
    EnvPosterior post;
    post.logits = classifier.forward(input);
    if (post.logits.size(1) != env_count)
        throw ContractError("env_posterior: classifier output width differs from env count");
    post.log_probs = log_softmax(post.logits);
    const int B = post.logits.size(0), E = env_count;
    post.hard.resize(static_cast<size_t>(B));
    for (int i = 0; i < B; ++i) {
        const double* row = post.logits.values().data() + static_cast<size_t>(i) * E;
        int best = 0;
        for (int e = 1; e < E; ++e)
            if (row[e] > row[best]) best = e;
        post.hard[i] = best;
    }
    return post;
}

Tensor env_diversification_loss(const EnvPosterior& posterior) {
    return neg(mean(max_rows(posterior.log_probs)));
}

IndexSets build_env_neighborhood(const std::vector<int>& env_ids, const IndexSets& prev) {
    const size_t B = env_ids.size();
    if (!prev.empty() && prev.size() != B)
        throw ContractError("build_env_neighborhood: previous sets sized for a different batch");
    IndexSets sets(B);
    for (size_t z = 0; z < B; ++z) {
        std::set<int> members(prev.empty() ? std::set<int>()
                                           : std::set<int>(prev[z].begin(), prev[z].end()));
        for (size_t i = 0; i < B; ++i)
            if (i != z && env_ids[i] == env_ids[z]) members.insert(static_cast<int>(i));
        sets[z].assign(members.begin(), members.end());
    }
    return sets;
}

IndexSets build_label_neighborhood(const std::vector<int>& labels) {
    const size_t B = labels.size();
    IndexSets sets(B);
    for (size_t z = 0; z < B; ++z)
        for (size_t i = 0; i < B; ++i)
            if (i != z && labels[i] == labels[z]) sets[z].push_back(static_cast<int>(i));
    return sets;
}

Tensor info_nce(const Tensor& embeddings, int anchor, const std::vector<int>& positives,
                const std::vector<int>& candidates, double tau) {
    if (tau <= 0) throw ContractError("info_nce: tau must be positive");
    if (positives.empty()) return Tensor::scalar(0.0);
    if (candidates.empty()) throw ContractError("info_nce: empty candidate set");
    const int B = embeddings.size(0);
    std::set<int> cand(candidates.begin(), candidates.end());
    if (cand.count(anchor)) throw ContractError("info_nce: anchor may not be its own candidate");
    for (int p : positives)
        if (!cand.count(p)) throw ContractError("info_nce: positives must be candidates");

    std::vector<double> cand_mask(static_cast<size_t>(B), 0.0);
    for (int c : candidates) cand_mask[static_cast<size_t>(c)] = 1.0;
    std::vector<double> weights(static_cast<size_t>(B), 0.0);
    for (int p : positives) weights[static_cast<size_t>(p)] = 1.0 / positives.size();

    Tensor zrow = gather_rows(embeddings, {anchor});                     // [1, P]
    Tensor sims = scale(matmul(zrow, transpose(embeddings)), 1.0 / tau);  // [1, B]
    Tensor logp = masked_log_softmax(sims, Tensor::from_values({1, B}, std::move(cand_mask)));
    return neg(sum(mul(logp, Tensor::from_values({1, B}, std::move(weights)))));
}

Tensor batch_info_nce(const Tensor& embeddings, const IndexSets& positives, double tau) {
    if (tau <= 0) throw ContractError("batch_info_nce: tau must be positive");
    const int B = embeddings.size(0);
    if (static_cast<size_t>(B) != positives.size())
        throw ContractError("batch_info_nce: one positive set per row required");
    int active = 0;
    for (const auto& p : positives)
        if (!p.empty()) ++active;
    if (active == 0) return Tensor::scalar(0.0);

    std::vector<double> cand_mask(static_cast<size_t>(B) * B, 1.0);
    for (int i = 0; i < B; ++i) cand_mask[static_cast<size_t>(i) * B + i] = 0.0;
    std::vector<double> weights(static_cast<size_t>(B) * B, 0.0);
    for (int i = 0; i < B; ++i) {
        if (positives[i].empty()) continue;
        const double w = 1.0 / (static_cast<double>(positives[i].size()) * active);
        for (int p : positives[i]) {
            if (p == i || p < 0 || p >= B)
                throw ContractError("batch_info_nce: invalid positive index");
            weights[static_cast<size_t>(i) * B + p] = w;
        }
    }
    Tensor sims = scale(matmul(embeddings, transpose(embeddings)), 1.0 / tau);
    Tensor logp = masked_log_softmax(sims, Tensor::from_values({B, B}, std::move(cand_mask)));
    return neg(sum(mul(logp, Tensor::from_values({B, B}, std::move(weights)))));
}

Stage1Model Stage1Model::create(const HierarchyConfig& config, int feature_dim, int num_classes,
                                int hidden_dim, int proj_dim, int gin_layers, RngStream& init) {
    config.validate();
    if (num_classes < 2) throw ContractError("Stage1Model: need at least two classes");
    Stage1Model m;
    m.config = config;
    m.feature_dim = feature_dim;
    m.num_classes = num_classes;
    for (int k = 0; k < config.levels; ++k) {
        const std::string lv = "level" + std::to_string(k);
        const int in_dim = (k == 0) ? feature_dim : hidden_dim;
        m.encoders.push_back(
            GinEncoder::create(m.params, lv + ".gin", in_dim, hidden_dim, gin_layers, init));
        m.scorers.push_back(
            Mlp::create(m.params, lv + ".scorer", 2 * hidden_dim, hidden_dim, 1, init));
        m.variant_heads.push_back(ProjectionHead::create(m.params, lv + ".variant_proj",
                                                         hidden_dim, hidden_dim, proj_dim, init));
        m.invariant_heads.push_back(ProjectionHead::create(
            m.params, lv + ".invariant_proj", hidden_dim, hidden_dim, proj_dim, init));
        m.env_classifiers.push_back(Mlp::create(m.params, lv + ".env_cls",
                                                proj_dim + num_classes, hidden_dim,
                                                config.env_counts[k], init));
    }
    return m;
}

Stage1BatchLoss stage1_batch_loss(const Stage1Model& model, const Batch& batch,
                                  SelectionMode mode, RngStream* gumbel) {
    const auto levels =
        generate_hierarchy(batch, model.encoders, model.scorers, model.config, mode, gumbel);

    Stage1BatchLoss result;
    IndexSets prev_env_sets;
    Tensor h_prev = batch.features;
    for (int k = 0; k < model.config.levels; ++k) {
        const LevelOutput& lv = levels[k];
        LevelLosses ll;
        ll.hard_mask = lv.hard_mask;
        ll.min_threshold_margin = std::numeric_limits<double>::infinity();
        for (double p : lv.p_hat.values())
            ll.min_threshold_margin =
                std::min(ll.min_threshold_margin, std::fabs(p - model.config.threshold));

        Tensor z_v = model.variant_heads[k].project(
            model.encoders[k].encode_from(h_prev, batch, lv.subgraphs.variant_weights)
                .graph_embeddings);
        Tensor z_inv = model.invariant_heads[k].project(
            model.encoders[k].encode_from(h_prev, batch, lv.subgraphs.invariant_weights)
                .graph_embeddings);

        EnvPosterior post = env_posterior(z_v, batch.labels, model.num_classes,
                                          model.env_classifiers[k], model.config.env_counts[k]);
        ll.env_assignment = post.hard;
        ll.min_argmax_margin = std::numeric_limits<double>::infinity();
        const int E = model.config.env_counts[k];
        for (int i = 0; i < post.logits.size(0); ++i) {
            const double* row = post.logits.values().data() + static_cast<size_t>(i) * E;
            double top1 = -std::numeric_limits<double>::infinity(), top2 = top1;
            for (int e = 0; e < E; ++e) {
                if (row[e] > top1) {
                    top2 = top1;
                    top1 = row[e];
                } else if (row[e] > top2) {
                    top2 = row[e];
                }
            }
            ll.min_argmax_margin = std::min(ll.min_argmax_margin, top1 - top2);
        }
        ll.diversification = env_diversification_loss(post);
        if (model.config.entropy_bonus > 0.0) {
            // Optional collapse guard: reward entropy of the batch-mean posterior.
            Tensor mean_post = pool_mean_rows(
                softmax(post.logits), std::vector<int>(static_cast<size_t>(post.logits.size(0)), 0),
                1);
            Tensor entropy = neg(sum(mul(mean_post, log(mean_post))));
            ll.diversification = sub(ll.diversification, scale(entropy, model.config.entropy_bonus));
        }

        IndexSets env_sets = build_env_neighborhood(post.hard, prev_env_sets);
        ll.env_consistency = batch_info_nce(z_v, env_sets, model.config.tau_contrastive);
        ll.label_consistency = batch_info_nce(z_inv, build_label_neighborhood(batch.labels),
                                              model.config.tau_contrastive);

        ll.combined = add(ll.diversification,
                          add(scale(ll.env_consistency, model.config.alpha),
                              scale(ll.label_consistency, model.config.beta)));
        result.total = (k == 0) ? ll.combined : add(result.total, ll.combined);
        prev_env_sets = std::move(env_sets);
        h_prev = lv.node_embeddings;
        result.levels.push_back(std::move(ll));
    }
    return result;
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

std::vector<int> identity_order(size_t n) {
    std::vector<int> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i);
    return order;
}

}  // namespace

Stage1TrainResult train_stage1(Stage1Model& model, const std::vector<Graph>& train,
                               const std::vector<Graph>& val, const Stage1TrainOptions& options,
                               RngPack& rng) {
    if (options.epochs <= 0) throw ContractError("train_stage1: epochs must be positive");
    if (train.empty()) throw ContractError("train_stage1: empty training set");

    Adam adam(model.params, AdamConfig{options.lr, 0.9, 0.999, 1e-8});
    model.params.zero_grad();

    const std::vector<Batch> val_batches =
        val.empty() ? std::vector<Batch>{}
                    : make_batches(val, identity_order(val.size()), options.batch_size);

    auto eval_val = [&]() {
        if (val_batches.empty()) return 0.0;
        double total = 0.0;
        int count = 0;
        for (const auto& b : val_batches) {
            total += stage1_batch_loss(model, b, SelectionMode::Inference, nullptr).total.item();
            ++count;
        }
        return total / count;
    };

    Stage1TrainResult result;
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;
    std::vector<std::vector<double>> best_snapshot = model.params.snapshot();

    std::vector<int> order = identity_order(train.size());
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
            std::swap(order[i], order[rng.data.uniform_int(i + 1)]);
        double epoch_loss = 0.0;
        int nb = 0;
        for (const auto& batch : make_batches(train, order, options.batch_size)) {
            Tensor loss;
            try {
                loss = stage1_batch_loss(model, batch, SelectionMode::Train, &rng.gumbel).total;
            } catch (const DomainError& e) {
                throw DomainError("stage-1 training diverged at epoch " + std::to_string(epoch) +
                                  ", batch " + std::to_string(nb) + ": " + e.what());
            }
            epoch_loss += loss.item();
            ++nb;
            backward(loss);
            adam.step();
        }
        result.train_loss.push_back(epoch_loss / nb);

        const double vloss = eval_val();
        result.val_loss.push_back(vloss);
        result.epochs_run = epoch + 1;
        if (vloss < best_val - 1e-12) {
            best_val = vloss;
            result.best_epoch = epoch + 1;
            since_best = 0;
            best_snapshot = model.params.snapshot();
        } else if (++since_best >= options.patience) {
            break;
        }
    }
    model.params.restore(best_snapshot);
    result.best_val_loss = best_val;
    return result;
}

std::vector<EnvAssignmentRecord> assign_environments(const Stage1Model& model,
                                                     const std::vector<Graph>& graphs,
                                                     int batch_size) {
    std::vector<EnvAssignmentRecord> records;
    records.reserve(graphs.size());
    const int K = model.config.levels;
    const int E = model.config.env_counts[K - 1];
    for (const auto& batch :
         make_batches(graphs, identity_order(graphs.size()), batch_size)) {
        const auto levels = generate_hierarchy(batch, model.encoders, model.scorers, model.config,
                                               SelectionMode::Inference, nullptr);
        Tensor h_prev = (K == 1) ? batch.features : levels[K - 2].node_embeddings;
        Tensor z_v = model.variant_heads[K - 1].project(
            model.encoders[K - 1]
                .encode_from(h_prev, batch, levels[K - 1].subgraphs.variant_weights)
                .graph_embeddings);
        EnvPosterior post = env_posterior(z_v, batch.labels, model.num_classes,
                                          model.env_classifiers[K - 1],
                                          model.config.env_counts[K - 1]);
        Tensor probs = softmax(post.logits);
        for (int i = 0; i < batch.num_graphs(); ++i) {
            EnvAssignmentRecord rec;
            rec.id = batch.graphs[i].id;
            rec.env = post.hard[i];
            rec.hierarchy = K;
            rec.posterior.assign(probs.values().begin() + static_cast<size_t>(i) * E,
                                 probs.values().begin() + static_cast<size_t>(i + 1) * E);
            records.push_back(std::move(rec));
        }
    }
    return records;
}

void save_assignments(const std::vector<EnvAssignmentRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DependencyError("cannot write assignments: " + path);
    for (const auto& r : records) {
        nlohmann::ordered_json j;
        j["id"] = r.id;
        j["env"] = r.env;
        j["posterior"] = r.posterior;
        j["hierarchy"] = r.hierarchy;
        out << j.dump() << "\n";
    }
}

std::vector<EnvAssignmentRecord> load_assignments(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DependencyError("cannot open assignments: " + path);
    std::vector<EnvAssignmentRecord> records;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::ordered_json j = nlohmann::ordered_json::parse(line, nullptr, false);
        if (j.is_discarded())
            throw ParseError("assignments line " + std::to_string(line_no) + ": invalid JSON");
        EnvAssignmentRecord r;
        try {
            r.id = j.at("id").get<std::string>();
            r.env = j.at("env").get<int>();
            r.posterior = j.at("posterior").get<std::vector<double>>();
            r.hierarchy = j.at("hierarchy").get<int>();
        } catch (const nlohmann::ordered_json::exception& e) {
            throw ParseError("assignments line " + std::to_string(line_no) + ": " + e.what());
        }
        records.push_back(std::move(r));
    }
    return records;
}

}  // namespace hierenv
