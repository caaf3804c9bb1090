#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hierenv/ablation.hpp"
#include "hierenv/pipeline.hpp"

namespace fs = std::filesystem;
using hierenv::RunConfig;

namespace {

struct CliState {
    std::string config_path;
    std::vector<std::string> sets;  // key=value overrides
    std::string seed, out_dir, manifest, strategy, seeds;
    bool dump_subgraphs = false;
    std::vector<std::string> strategies;  // ablation
};

void add_common(CLI::App* cmd, CliState& st) {
    cmd->add_option("--config", st.config_path, "flat key = value config file");
    cmd->add_option("--seed", st.seed, "master seed");
    cmd->add_option("--out", st.out_dir, "output directory");
    cmd->add_option("--manifest", st.manifest, "dataset manifest path");
    cmd->add_option("--strategy", st.strategy,
                    "environment strategy: erm | rand#k | real | infer-flat#k | hier");
    cmd->add_option("--seeds", st.seeds, "seed list, e.g. 1,2,3 or 1..5");
    cmd->add_option("--set", st.sets, "extra key=value override (repeatable)")
        ->type_name("KEY=VALUE");
}

RunConfig resolve_config(const CliState& st) {
    RunConfig cfg = st.config_path.empty() ? RunConfig::defaults()
                                           : RunConfig::from_file(st.config_path);
    cfg.apply_env_overrides();
    std::map<std::string, std::string> overrides;
    for (const auto& kv : st.sets) {
        const size_t eq = kv.find('=');
        if (eq == std::string::npos)
            throw hierenv::ParseError("--set expects key=value, got '" + kv + "'");
        overrides[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    if (!st.seed.empty()) overrides["seed"] = st.seed;
    if (!st.out_dir.empty()) overrides["out_dir"] = st.out_dir;
    if (!st.manifest.empty()) overrides["manifest"] = st.manifest;
    if (!st.strategy.empty()) overrides["strategy"] = st.strategy;
    if (!st.seeds.empty()) overrides["seeds"] = st.seeds;
    cfg.apply_overrides(overrides);
    return cfg;
}

int fail_with_record(const RunConfig* cfg, const std::string& kind, const std::string& message) {
    nlohmann::ordered_json err;
    err["error"] = kind;
    err["message"] = message;
    std::cerr << err.dump() << std::endl;
    if (cfg != nullptr && !cfg->out_dir.empty()) {
        std::error_code ec;
        fs::create_directories(cfg->out_dir, ec);
        if (!ec) std::ofstream((fs::path(cfg->out_dir) / "error.json").string()) << err.dump(2) << "\n";
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hierarchical environment inference and invariant graph learning"};
    app.require_subcommand(1);

    CliState st;
    auto* gen = app.add_subcommand("generate-data", "write the synthetic dataset and manifest");
    auto* tenv = app.add_subcommand("train-env", "stage 1: train subgraph generators and environment classifiers");
    auto* aenv = app.add_subcommand("assign-env", "write per-graph environment assignments");
    aenv->add_flag("--dump-subgraphs", st.dump_subgraphs,
                   "also dump per-level selected variant edges");
    auto* tinv = app.add_subcommand("train-inv", "stage 2: train the invariant classifier");
    auto* eval = app.add_subcommand("evaluate", "test metrics and predictions");
    auto* divr = app.add_subcommand("diversity", "environment diversity report");
    auto* pipe = app.add_subcommand("pipeline", "run every stage end to end");
    auto* grad = app.add_subcommand("gradcheck", "finite-difference verification of all losses");
    auto* abl = app.add_subcommand("ablation", "strategy grid over seeds");
    abl->add_option("--strategies", st.strategies, "strategies to run")
        ->delimiter(',');
    for (CLI::App* cmd : {gen, tenv, aenv, tinv, eval, divr, pipe, grad, abl})
        add_common(cmd, st);

    CLI11_PARSE(app, argc, argv);

    RunConfig cfg;
    try {
        cfg = resolve_config(st);
    } catch (const std::exception& e) {
        return fail_with_record(nullptr, "config", e.what());
    }

    try {
        if (gen->parsed()) {
            hierenv::cmd_generate_data(cfg);
        } else if (tenv->parsed()) {
            hierenv::cmd_train_env(cfg);
        } else if (aenv->parsed()) {
            hierenv::cmd_assign_env(cfg, st.dump_subgraphs);
        } else if (tinv->parsed()) {
            hierenv::cmd_train_inv(cfg);
        } else if (eval->parsed()) {
            hierenv::RunMetrics m = hierenv::cmd_evaluate(cfg);
            std::cout << "accuracy=" << m.accuracy << " auc=" << m.auc << "\n";
        } else if (divr->parsed()) {
            hierenv::DiversityReport rep = hierenv::cmd_diversity(cfg);
            std::cout << "inter_env_distance=" << rep.inter_env_distance << "\n";
        } else if (pipe->parsed()) {
            hierenv::RunMetrics m = hierenv::cmd_pipeline(cfg);
            std::cout << "strategy=" << m.strategy << " seed=" << m.seed
                      << " accuracy=" << m.accuracy << " auc=" << m.auc << "\n";
        } else if (grad->parsed()) {
            const int failures = hierenv::cmd_gradcheck(cfg);
            return failures == 0 ? 0 : 1;
        } else if (abl->parsed()) {
            std::vector<std::string> strategies = st.strategies;
            if (strategies.empty()) strategies = {"erm", "rand#2", "infer-flat#2", "hier"};
            hierenv::AblationResult result = hierenv::run_ablation(cfg, strategies, cfg.seeds);
            const fs::path out(cfg.out_dir);
            hierenv::write_ablation_csv(result, (out / "ablation.csv").string());
            hierenv::write_ablation_json(result, (out / "ablation_summary.json").string());
            for (const auto& row : result.rows)
                std::cout << row.strategy << ": accuracy " << row.mean_accuracy << " +- "
                          << row.std_accuracy << ", diversity " << row.mean_diversity << "\n";
        }
    } catch (const hierenv::DependencyError& e) {
        return fail_with_record(&cfg, "dependency", e.what());
    } catch (const hierenv::ParseError& e) {
        return fail_with_record(&cfg, "parse", e.what());
    } catch (const hierenv::DomainError& e) {
        return fail_with_record(&cfg, "numeric", e.what());
    } catch (const std::exception& e) {
        return fail_with_record(&cfg, "error", e.what());
    }
    return 0;
}
