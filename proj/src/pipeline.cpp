#include "hierenv/pipeline.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace hierenv {

std::string Strategy::name() const {
    switch (kind) {
        case Kind::Erm: return "erm";
        case Kind::Random: return "rand#" + std::to_string(k);
        case Kind::Real: return "real";
        case Kind::InferFlat: return "infer-flat#" + std::to_string(k);
        case Kind::Hier: return "hier";
    }
    return "hier";
}

Strategy Strategy::parse(const std::string& name) {
    Strategy s;
    auto with_k = [&](const std::string& prefix, Strategy::Kind kind) -> bool {
        if (name.rfind(prefix, 0) != 0) return false;
        s.kind = kind;
        s.k = std::stoi(name.substr(prefix.size()));
        if (s.k < 2) throw ContractError("strategy '" + name + "': need at least 2 environments");
        return true;
    };
    if (name == "erm") s.kind = Kind::Erm;
    else if (name == "real") s.kind = Kind::Real;
    else if (name == "hier") s.kind = Kind::Hier;
    else if (with_k("rand#", Kind::Random) || with_k("infer-flat#", Kind::InferFlat)) {}
    else throw ContractError("unknown strategy '" + name + "'");
    return s;
}

RunPaths RunPaths::under(const std::string& out_dir) {
    RunPaths p;
    auto join = [&](const char* leaf) { return (fs::path(out_dir) / leaf).string(); };
    p.config_txt = join("config.txt");
    p.run_manifest = join("run_manifest.json");
    p.data_dir = (fs::path(out_dir) / "data").string();
    p.data_manifest = (fs::path(out_dir) / "data" / "manifest.json").string();
    p.stage1_ckpt = join("stage1_checkpoint.json");
    p.stage1_history = join("stage1_history.json");
    p.assignments = join("assignments_train.jsonl");
    p.subgraph_dump = join("subgraphs_train.jsonl");
    p.stage2_ckpt = join("stage2_checkpoint.json");
    p.stage2_history = join("stage2_history.json");
    p.predictions = join("predictions_test.jsonl");
    p.metrics_json = join("metrics.json");
    p.metrics_csv = join("metrics.csv");
    p.diversity_json = join("diversity.json");
    p.histograms_csv = join("env_histograms.csv");
    return p;
}

std::string file_hash(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DependencyError("cannot hash missing file: " + path);
    uint64_t h = 0xCBF29CE484222325ull;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001B3ull;
        }
    }
    std::ostringstream ss;
    ss << std::hex << h;
    return ss.str();
}

namespace {

void ensure_dir(const std::string& dir) { fs::create_directories(dir); }

void require_file(const std::string& path, const std::string& produced_by) {
    if (!fs::exists(path))
        throw DependencyError("missing artifact '" + path + "' (run " + produced_by + " first)");
}

// Keeps run_manifest.json up to date as commands add artifacts.
void record_artifacts(const RunConfig& cfg, const std::vector<std::string>& paths) {
    const RunPaths rp = RunPaths::under(cfg.out_dir);
    ordered_json manifest;
    if (fs::exists(rp.run_manifest)) {
        std::ifstream in(rp.run_manifest);
        in >> manifest;
    } else {
        manifest["seed"] = cfg.seed;
        manifest["strategy"] = cfg.strategy;
        manifest["artifacts"] = ordered_json::object();
    }
    {
        std::ofstream cfg_out(rp.config_txt);
        cfg_out << cfg.to_text();
    }
    manifest["config"] = rp.config_txt;
    manifest["config_hash"] = file_hash(rp.config_txt);
    for (const auto& p : paths)
        manifest["artifacts"][fs::path(p).filename().string()] =
            ordered_json{{"path", p}, {"hash", file_hash(p)}};
    std::ofstream out(rp.run_manifest);
    out << manifest.dump(2) << "\n";
}

std::string resolved_manifest(const RunConfig& cfg) {
    if (!cfg.manifest.empty()) return cfg.manifest;
    return RunPaths::under(cfg.out_dir).data_manifest;
}

struct LoadedData {
    DatasetManifest manifest;
    std::vector<Graph> train, val, test;
};

LoadedData load_data(const RunConfig& cfg) {
    const std::string mpath = resolved_manifest(cfg);
    require_file(mpath, "generate-data");
    LoadedData d;
    d.manifest = load_manifest(mpath);
    const fs::path base = fs::path(mpath).parent_path();
    auto resolve = [&](const std::string& p) {
        return fs::path(p).is_absolute() ? p : (base / p).string();
    };
    d.train = load_graphs(resolve(d.manifest.train));
    d.val = load_graphs(resolve(d.manifest.val));
    d.test = load_graphs(resolve(d.manifest.test));
    return d;
}

Stage1Model build_stage1_model(const RunConfig& cfg, const Strategy& strat,
                               const DatasetManifest& data, uint64_t seed) {
    HierarchyConfig h = cfg.hierarchy();
    if (strat.kind == Strategy::Kind::InferFlat) {
        h.levels = 1;
        h.env_counts = {strat.k};
    }
    RngStream init = derive_stream(seed, "stage1-init");
    return Stage1Model::create(h, data.feature_dim, data.num_classes, cfg.hidden_dim,
                               cfg.proj_dim, cfg.layers_stage1, init);
}

std::vector<EnvAssignmentRecord> direct_assignments(const Strategy& strat,
                                                    const std::vector<Graph>& train,
                                                    uint64_t seed) {
    std::vector<EnvAssignmentRecord> records;
    records.reserve(train.size());
    RngStream rand_env = derive_stream(seed, "rand-env");
    for (const auto& g : train) {
        EnvAssignmentRecord r;
        r.id = g.id;
        r.hierarchy = 0;
        switch (strat.kind) {
            case Strategy::Kind::Erm:
                r.env = 0;
                break;
            case Strategy::Kind::Random:
                r.env = rand_env.uniform_int(strat.k);
                break;
            case Strategy::Kind::Real:
                if (!g.true_env)
                    throw ContractError("strategy 'real' needs ground-truth environments, graph '" +
                                        g.id + "' has none");
                r.env = *g.true_env;
                break;
            default:
                throw ContractError("direct_assignments: strategy requires stage-1 inference");
        }
        records.push_back(std::move(r));
    }
    return records;
}

void dump_variant_subgraphs(const Stage1Model& model, const std::vector<Graph>& graphs,
                            int batch_size, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DependencyError("cannot write subgraph dump: " + path);
    for (size_t start = 0; start < graphs.size(); start += static_cast<size_t>(batch_size)) {
        std::vector<Graph> chunk(graphs.begin() + start,
                                 graphs.begin() +
                                     std::min(graphs.size(), start + static_cast<size_t>(batch_size)));
        Batch batch = batch_graphs(chunk);
        const auto levels = generate_hierarchy(batch, model.encoders, model.scorers, model.config,
                                               SelectionMode::Inference, nullptr);
        for (int k = 0; k < model.config.levels; ++k) {
            for (int gi = 0; gi < batch.num_graphs(); ++gi) {
                ordered_json rec;
                rec["id"] = batch.graphs[gi].id;
                rec["k"] = k + 1;
                ordered_json edges = ordered_json::array();
                for (size_t e = 0; e < batch.edges.size(); ++e) {
                    if (batch.edge_to_graph[e] != gi) continue;
                    if (levels[k].hard_mask[e] == 0.0) continue;
                    const int off = batch.node_offset[gi];
                    edges.push_back({batch.edges[e][0] - off, batch.edges[e][1] - off});
                }
                rec["variant_edges"] = std::move(edges);
                out << rec.dump() << "\n";
            }
        }
    }
}

std::string format_metric(double v) {
    if (std::isnan(v)) return "nan";
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
}

}  // namespace

void cmd_generate_data(const RunConfig& cfg) {
    cfg.validate();
    const RunPaths rp = RunPaths::under(cfg.out_dir);
    ensure_dir(rp.data_dir);
    SyntheticDataset ds = generate_synthetic(cfg.synthetic());
    const fs::path dir(rp.data_dir);
    save_graphs(ds.train, (dir / "train.jsonl").string());
    save_graphs(ds.val, (dir / "val.jsonl").string());
    save_graphs(ds.test, (dir / "test.jsonl").string());
    DatasetManifest m;
    m.train = "train.jsonl";
    m.val = "val.jsonl";
    m.test = "test.jsonl";
    m.num_classes = kSyntheticNumClasses;
    m.feature_dim = kSyntheticFeatureDim;
    save_manifest(m, rp.data_manifest);
    record_artifacts(cfg, {rp.data_manifest, (dir / "train.jsonl").string(),
                           (dir / "val.jsonl").string(), (dir / "test.jsonl").string()});
}

void cmd_train_env(const RunConfig& cfg) {
    cfg.validate();
    const Strategy strat = Strategy::parse(cfg.strategy);
    if (strat.kind != Strategy::Kind::Hier && strat.kind != Strategy::Kind::InferFlat)
        throw ContractError("train-env: strategy '" + cfg.strategy +
                            "' does not use inferred environments");
    const RunPaths rp = RunPaths::under(cfg.out_dir);
    ensure_dir(cfg.out_dir);
    LoadedData data = load_data(cfg);

    Stage1Model model = build_stage1_model(cfg, strat, data.manifest, cfg.seed);
    RngPack rng(cfg.seed);
    rng.data = derive_stream(cfg.seed, "stage1-data");
    Stage1TrainOptions opt;
    opt.epochs = cfg.epochs_stage1;
    opt.batch_size = cfg.batch_size;
    opt.patience = cfg.patience;
    opt.lr = cfg.lr;
    Stage1TrainResult result = train_stage1(model, data.train, data.val, opt, rng);

    save_checkpoint(model.params, rp.stage1_ckpt);
    ordered_json hist;
    hist["epochs_run"] = result.epochs_run;
    hist["best_epoch"] = result.best_epoch;
    hist["best_val_loss"] = result.best_val_loss;
    hist["train_loss"] = result.train_loss;
    hist["val_loss"] = result.val_loss;
    std::ofstream(rp.stage1_history) << hist.dump(2) << "\n";
    record_artifacts(cfg, {rp.stage1_ckpt, rp.stage1_history});
}

void cmd_assign_env(const RunConfig& cfg, bool dump_subgraphs) {
    cfg.validate();
    const Strategy strat = Strategy::parse(cfg.strategy);
    const RunPaths rp = RunPaths::under(cfg.out_dir);
    ensure_dir(cfg.out_dir);
    LoadedData data = load_data(cfg);

    std::vector<EnvAssignmentRecord> records;
    std::vector<std::string> artifacts;
    if (strat.kind == Strategy::Kind::Hier || strat.kind == Strategy::Kind::InferFlat) {
        require_file(rp.stage1_ckpt, "train-env");
        Stage1Model model = build_stage1_model(cfg, strat, data.manifest, cfg.seed);
        load_checkpoint(model.params, rp.stage1_ckpt);
        records = assign_environments(model, data.train, cfg.batch_size);
        if (dump_subgraphs) {
            dump_variant_subgraphs(model, data.train, cfg.batch_size, rp.subgraph_dump);
            artifacts.push_back(rp.subgraph_dump);
        }
    } else {
        records = direct_assignments(strat, data.train, cfg.seed);
    }
    save_assignments(records, rp.assignments);
    artifacts.push_back(rp.assignments);
    record_artifacts(cfg, artifacts);
}

void cmd_train_inv(const RunConfig& cfg) {
    cfg.validate();
    const Strategy strat = Strategy::parse(cfg.strategy);
    const RunPaths rp = RunPaths::under(cfg.out_dir);
    ensure_dir(cfg.out_dir);
    LoadedData data = load_data(cfg);
    require_file(rp.assignments, "assign-env");
    std::vector<EnvAssignmentRecord> envs = load_assignments(rp.assignments);

    RngStream init = derive_stream(cfg.seed, "stage2-init");
    InvariantClassifier model =
        InvariantClassifier::create(data.manifest.feature_dim, data.manifest.num_classes,
                                    cfg.hidden_dim, cfg.layers_stage2, cfg.dropout, init);
    RngPack rng(cfg.seed);
    rng.data = derive_stream(cfg.seed, "stage2-data");
    Stage2TrainOptions opt;
    opt.epochs = cfg.epochs_stage2;
    opt.batch_size = cfg.batch_size;
    opt.patience = cfg.patience;
    opt.lr = cfg.lr;
    opt.lambda = (strat.kind == Strategy::Kind::Erm) ? 0.0 : cfg.lambda;
    Stage2TrainResult result = train_stage2(model, data.train, data.val, envs, opt, rng);

    save_checkpoint(model.params, rp.stage2_ckpt);
    ordered_json hist;
    hist["epochs_run"] = result.epochs_run;
    hist["best_epoch"] = result.best_epoch;
    hist["best_val_accuracy"] = result.best_val_accuracy;
    hist["train_loss"] = result.train_loss;
    hist["val_accuracy"] = result.val_accuracy;
    std::ofstream(rp.stage2_history) << hist.dump(2) << "\n";
    record_artifacts(cfg, {rp.stage2_ckpt, rp.stage2_history});
}

RunMetrics cmd_evaluate(const RunConfig& cfg) {
    cfg.validate();
    const RunPaths rp = RunPaths::under(cfg.out_dir);
    LoadedData data = load_data(cfg);
    require_file(rp.stage2_ckpt, "train-inv");

    RngStream init = derive_stream(cfg.seed, "stage2-init");
    InvariantClassifier model =
        InvariantClassifier::create(data.manifest.feature_dim, data.manifest.num_classes,
                                    cfg.hidden_dim, cfg.layers_stage2, cfg.dropout, init);
    load_checkpoint(model.params, rp.stage2_ckpt);

    const auto probs = predict(model, data.test, cfg.batch_size);
    save_predictions(data.test, probs, rp.predictions);

    RunMetrics m;
    m.strategy = cfg.strategy;
    m.seed = static_cast<int>(cfg.seed);
    std::vector<int> labels, preds;
    std::vector<double> scores;
    for (size_t i = 0; i < data.test.size(); ++i) {
        labels.push_back(data.test[i].label);
        int best = 0;
        for (size_t c = 1; c < probs[i].size(); ++c)
            if (probs[i][c] > probs[i][best]) best = static_cast<int>(c);
        preds.push_back(best);
        scores.push_back(probs[i].back());
    }
    m.accuracy = accuracy(preds, labels);
    m.auc = (data.manifest.num_classes == 2) ? roc_auc(scores, labels)
                                             : std::numeric_limits<double>::quiet_NaN();

    // Environment quality metrics from the training-set assignment.
    m.inter_env_distance = std::numeric_limits<double>::quiet_NaN();
    m.recovery = std::numeric_limits<double>::quiet_NaN();
    m.dependency = std::numeric_limits<double>::quiet_NaN();
    if (fs::exists(rp.assignments)) {
        std::vector<EnvAssignmentRecord> envs = load_assignments(rp.assignments);
        std::unordered_map<std::string, int> env_by_id;
        for (const auto& r : envs) env_by_id[r.id] = r.env;
        std::vector<int> assignment, families, train_labels;
        std::vector<double> env_feature;
        bool have_truth = true;
        for (const auto& g : data.train) {
            auto it = env_by_id.find(g.id);
            if (it == env_by_id.end()) continue;
            assignment.push_back(it->second);
            train_labels.push_back(g.label);
            if (g.true_env && g.true_family) {
                env_feature.push_back(static_cast<double>(*g.true_env));
                families.push_back(*g.true_family);
            } else {
                have_truth = false;
            }
        }
        std::set<int> distinct(assignment.begin(), assignment.end());
        if (distinct.size() >= 2) {
            if (have_truth) {
                m.inter_env_distance =
                    diversity_report(assignment, env_feature, cfg.strategy).inter_env_distance;
                m.recovery = env_recovery_score(assignment, families);
            }
            m.dependency = env_label_dependency(assignment, train_labels);
        }
    }

    ordered_json j;
    j["strategy"] = m.strategy;
    j["seed"] = m.seed;
    j["accuracy"] = m.accuracy;
    j["auc"] = m.auc;
    j["inter_env_distance"] = m.inter_env_distance;
    j["recovery"] = m.recovery;
    j["dependency"] = m.dependency;
    std::ofstream(rp.metrics_json) << j.dump(2) << "\n";

    std::ofstream csv(rp.metrics_csv);
    csv << "strategy,seed,accuracy,auc,inter_env_distance,recovery,dependency\n";
    csv << m.strategy << "," << m.seed << "," << format_metric(m.accuracy) << ","
        << format_metric(m.auc) << "," << format_metric(m.inter_env_distance) << ","
        << format_metric(m.recovery) << "," << format_metric(m.dependency) << "\n";
    csv.close();
    record_artifacts(cfg, {rp.predictions, rp.metrics_json, rp.metrics_csv});
    return m;
}

DiversityReport cmd_diversity(const RunConfig& cfg) {
    cfg.validate();
    const RunPaths rp = RunPaths::under(cfg.out_dir);
    LoadedData data = load_data(cfg);
    require_file(rp.assignments, "assign-env");
    std::vector<EnvAssignmentRecord> envs = load_assignments(rp.assignments);
    std::unordered_map<std::string, int> env_by_id;
    for (const auto& r : envs) env_by_id[r.id] = r.env;

    std::vector<int> assignment;
    std::vector<double> feature;
    for (const auto& g : data.train) {
        auto it = env_by_id.find(g.id);
        if (it == env_by_id.end() || !g.true_env) continue;
        assignment.push_back(it->second);
        feature.push_back(static_cast<double>(*g.true_env));
    }
    if (assignment.empty())
        throw ContractError("diversity: no assigned training graphs with ground-truth ids");
    DiversityReport rep = diversity_report(assignment, feature, cfg.strategy);

    ordered_json j;
    j["strategy"] = rep.strategy;
    j["env_ids"] = rep.env_ids;
    j["d_matrix"] = rep.d_matrix;
    j["p_matrix"] = rep.p_matrix;
    j["inter_env_distance"] = rep.inter_env_distance;
    j["skipped_pairs"] = rep.skipped_pairs;
    std::ofstream(rp.diversity_json) << j.dump(2) << "\n";

    // Per-environment feature histograms for offline plotting.
    std::ofstream csv(rp.histograms_csv);
    csv << "env,feature,count\n";
    for (size_t e = 0; e < rep.env_ids.size(); ++e) {
        std::map<double, int> counts;
        for (double f : rep.env_features[e]) counts[f] += 1;
        for (const auto& [f, c] : counts)
            csv << rep.env_ids[e] << "," << format_metric(f) << "," << c << "\n";
    }
    csv.close();
    record_artifacts(cfg, {rp.diversity_json, rp.histograms_csv});
    return rep;
}

RunMetrics cmd_pipeline(const RunConfig& cfg) {
    cfg.validate();
    const Strategy strat = Strategy::parse(cfg.strategy);
    ensure_dir(cfg.out_dir);
    RunConfig local = cfg;
    if (cfg.manifest.empty()) {
        cmd_generate_data(local);
        local.manifest = RunPaths::under(cfg.out_dir).data_manifest;
    }
    if (strat.kind == Strategy::Kind::Hier || strat.kind == Strategy::Kind::InferFlat)
        cmd_train_env(local);
    cmd_assign_env(local);
    cmd_train_inv(local);
    RunMetrics metrics = cmd_evaluate(local);
    if (strat.kind != Strategy::Kind::Erm) cmd_diversity(local);
    return metrics;
}

}  // namespace hierenv
