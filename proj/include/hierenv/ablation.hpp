#pragma once

#include <string>
#include <vector>

#include "hierenv/config.hpp"
#include "hierenv/pipeline.hpp"

namespace hierenv {

struct AblationRow {
    std::string strategy;
    std::vector<int> seeds;
    double mean_accuracy = 0.0, std_accuracy = 0.0;
    double mean_auc = 0.0, std_auc = 0.0;
    double mean_diversity = 0.0, std_diversity = 0.0;
    double mean_recovery = 0.0;
    double mean_dependency = 0.0;
};

struct AblationResult {
    std::vector<RunMetrics> runs;  // ordered by (strategy, seed)
    std::vector<AblationRow> rows;
};

// Full pipeline per (strategy, seed) on one shared dataset. The dataset comes
// from cfg.manifest, or is generated once from cfg.seed when no manifest is
// configured. Runs execute in parallel worker threads (cfg.jobs, 0 = one per
// hardware thread); each run is single-threaded and seed-deterministic, so
// the grid's results do not depend on scheduling.
AblationResult run_ablation(const RunConfig& cfg, const std::vector<std::string>& strategies,
                            const std::vector<int>& seeds);

// strategy,seed,accuracy,auc,inter_env_distance,recovery,dependency rows plus
// a JSON summary with per-strategy means and standard deviations.
void write_ablation_csv(const AblationResult& result, const std::string& path);
void write_ablation_json(const AblationResult& result, const std::string& path);

}  // namespace hierenv
