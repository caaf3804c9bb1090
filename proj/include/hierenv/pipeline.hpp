#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "hierenv/config.hpp"
#include "hierenv/env_infer.hpp"
#include "hierenv/invariant.hpp"
#include "hierenv/metrics.hpp"

namespace hierenv {

// Environment-assignment strategies for the ablation grid.
//   erm        : no environments, lambda forced to 0
//   rand#k     : uniform random split into k environments
//   real       : ground-truth fine environment ids from the data
//   infer-flat#k : single-level inference with k environments
//   hier       : full multi-level inference (the configured hierarchy)
struct Strategy {
    enum class Kind { Erm, Random, Real, InferFlat, Hier } kind = Kind::Hier;
    int k = 2;  // environment count for rand#k / infer-flat#k

    std::string name() const;
    static Strategy parse(const std::string& name);
};

struct RunMetrics {
    std::string strategy;
    int seed = 0;
    double accuracy = 0.0;
    double auc = 0.0;
    double inter_env_distance = 0.0;  // NaN when the strategy has no environments
    double recovery = 0.0;            // vs true_family
    double dependency = 0.0;          // H(Y) - H(Y|E)
    int stage1_epochs = 0;
    int stage2_epochs = 0;
};

// Individual pipeline steps; each writes its artifacts under cfg.out_dir and
// records them in run_manifest.json. Downstream steps fail with a
// DependencyError naming the missing artifact.
void cmd_generate_data(const RunConfig& cfg);
void cmd_train_env(const RunConfig& cfg);
void cmd_assign_env(const RunConfig& cfg, bool dump_subgraphs = false);
void cmd_train_inv(const RunConfig& cfg);
RunMetrics cmd_evaluate(const RunConfig& cfg);
DiversityReport cmd_diversity(const RunConfig& cfg);

// generate (when no manifest is configured) -> train_env -> assign_env ->
// train_inv -> evaluate -> diversity, honoring the configured strategy.
RunMetrics cmd_pipeline(const RunConfig& cfg);

// Finite-difference verification of every training loss on a seeded 4-graph
// batch; returns the number of failed checks (0 = all gradients correct).
int cmd_gradcheck(const RunConfig& cfg, double tolerance = 1e-4, std::ostream* log = nullptr);

// Paths of the artifacts a run produces.
struct RunPaths {
    std::string config_txt, run_manifest, data_dir, data_manifest;
    std::string stage1_ckpt, stage1_history, assignments, subgraph_dump;
    std::string stage2_ckpt, stage2_history, predictions;
    std::string metrics_json, metrics_csv, diversity_json, histograms_csv;

    static RunPaths under(const std::string& out_dir);
};

// 64-bit FNV-1a of a file's bytes, hex-encoded; used in run manifests.
std::string file_hash(const std::string& path);

}  // namespace hierenv
