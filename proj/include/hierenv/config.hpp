#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hierenv/subgraph.hpp"
#include "hierenv/synthetic.hpp"

namespace hierenv {

// One run's knobs. Sources, lowest to highest precedence: built-in defaults,
// config file (flat key = value lines, # comments), HIERENV_<KEY> environment
// variables, command-line overrides.
struct RunConfig {
    uint64_t seed = 1;
    std::string manifest;  // dataset manifest path
    std::string out_dir = "out";

    // hierarchy
    int levels = 3;
    std::vector<int> env_counts = {8, 4, 2};
    double threshold = 0.6;
    double tau_gumbel = 0.05;
    double tau_contrastive = 0.5;
    double alpha = 1.0;
    double beta = 1.0;
    double lambda = 0.01;
    double entropy_bonus = 0.0;

    // encoder sizes
    int hidden_dim = 32;
    int proj_dim = 16;
    int layers_stage1 = 1;
    int layers_stage2 = 3;

    // optimizer
    double lr = 1e-3;
    int batch_size = 32;
    int epochs_stage1 = 100;
    int epochs_stage2 = 100;
    int patience = 20;
    double dropout = 0.5;

    // synthetic generator
    int n_train = 1000;
    int n_val = 200;
    int n_test = 500;
    double rho_train = 0.9;
    double rho_test = 0.1;
    double label_flip_prob = 0.05;

    // evaluation drivers
    std::string strategy = "hier";
    std::vector<int> seeds = {1, 2, 3, 4, 5};
    int jobs = 0;  // 0 = one per hardware thread

    HierarchyConfig hierarchy() const;
    SyntheticConfig synthetic() const;
    void validate() const;

    // Serializes every key back to the flat file format.
    std::string to_text() const;

    static RunConfig defaults() { return RunConfig{}; }
    static RunConfig from_file(const std::string& path);

    // Applies "key=value" entries on top of the current values.
    void apply_overrides(const std::map<std::string, std::string>& overrides);
    void apply_env_overrides();  // HIERENV_<UPPERCASE KEY>
    void set_key(const std::string& key, const std::string& value);
};

// "1,2,3" or "1..5" into a list of seeds.
std::vector<int> parse_seed_list(const std::string& text);

}  // namespace hierenv
