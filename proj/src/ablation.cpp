#include "hierenv/ablation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace hierenv {

namespace {

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    int n = 0;
    for (double x : v)
        if (!std::isnan(x)) {
            s += x;
            ++n;
        }
    return n ? s / n : std::numeric_limits<double>::quiet_NaN();
}

double std_of(const std::vector<double>& v) {
    const double m = mean_of(v);
    double s = 0.0;
    int n = 0;
    for (double x : v)
        if (!std::isnan(x)) {
            s += (x - m) * (x - m);
            ++n;
        }
    if (n < 2) return 0.0;
    return std::sqrt(s / (n - 1));
}

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
}

}  // namespace

AblationResult run_ablation(const RunConfig& cfg, const std::vector<std::string>& strategies,
                            const std::vector<int>& seeds) {
    if (strategies.empty() || seeds.empty())
        throw ContractError("run_ablation: need at least one strategy and one seed");
    for (const auto& s : strategies) Strategy::parse(s);  // validate names early

    RunConfig base = cfg;
    fs::create_directories(base.out_dir);
    if (base.manifest.empty()) {
        cmd_generate_data(base);
        base.manifest = RunPaths::under(base.out_dir).data_manifest;
    }

    struct Job {
        std::string strategy;
        int seed;
    };
    std::vector<Job> jobs;
    for (const auto& s : strategies)
        for (int seed : seeds) jobs.push_back({s, seed});

    const unsigned workers =
        cfg.jobs > 0 ? static_cast<unsigned>(cfg.jobs)
                     : std::max(1u, std::thread::hardware_concurrency());

    std::vector<RunMetrics> runs(jobs.size());
    std::atomic<size_t> next{0};
    auto worker = [&]() {
        for (size_t j = next.fetch_add(1); j < jobs.size(); j = next.fetch_add(1)) {
            RunConfig rc = base;
            rc.strategy = jobs[j].strategy;
            rc.seed = static_cast<uint64_t>(jobs[j].seed);
            std::string dir_name = jobs[j].strategy + "-seed" + std::to_string(jobs[j].seed);
            std::replace(dir_name.begin(), dir_name.end(), '#', '_');
            rc.out_dir = (fs::path(base.out_dir) / "runs" / dir_name).string();
            runs[j] = cmd_pipeline(rc);
        }
    };
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < std::min<size_t>(workers, jobs.size()); ++w)
        pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    AblationResult result;
    result.runs = std::move(runs);
    for (const auto& s : strategies) {
        AblationRow row;
        row.strategy = s;
        std::vector<double> acc, auc, div, rec, dep;
        for (const auto& r : result.runs) {
            if (r.strategy != s) continue;
            row.seeds.push_back(r.seed);
            acc.push_back(r.accuracy);
            auc.push_back(r.auc);
            div.push_back(r.inter_env_distance);
            rec.push_back(r.recovery);
            dep.push_back(r.dependency);
        }
        row.mean_accuracy = mean_of(acc);
        row.std_accuracy = std_of(acc);
        row.mean_auc = mean_of(auc);
        row.std_auc = std_of(auc);
        row.mean_diversity = mean_of(div);
        row.std_diversity = std_of(div);
        row.mean_recovery = mean_of(rec);
        row.mean_dependency = mean_of(dep);
        result.rows.push_back(std::move(row));
    }
    return result;
}

void write_ablation_csv(const AblationResult& result, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DependencyError("cannot write ablation csv: " + path);
    out << "strategy,seed,accuracy,auc,inter_env_distance,recovery,dependency\n";
    for (const auto& r : result.runs)
        out << r.strategy << "," << r.seed << "," << fmt(r.accuracy) << "," << fmt(r.auc) << ","
            << fmt(r.inter_env_distance) << "," << fmt(r.recovery) << "," << fmt(r.dependency)
            << "\n";
}

void write_ablation_json(const AblationResult& result, const std::string& path) {
    ordered_json rows = ordered_json::array();
    for (const auto& row : result.rows) {
        ordered_json j;
        j["strategy"] = row.strategy;
        j["seeds"] = row.seeds;
        j["mean_accuracy"] = row.mean_accuracy;
        j["std_accuracy"] = row.std_accuracy;
        j["mean_auc"] = row.mean_auc;
        j["std_auc"] = row.std_auc;
        j["mean_inter_env_distance"] = row.mean_diversity;
        j["std_inter_env_distance"] = row.std_diversity;
        j["mean_recovery"] = row.mean_recovery;
        j["mean_dependency"] = row.mean_dependency;
        rows.push_back(std::move(j));
    }
    std::ofstream out(path);
    if (!out) throw DependencyError("cannot write ablation summary: " + path);
    out << rows.dump(2) << "\n";
}

}  // namespace hierenv
