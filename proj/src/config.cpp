#include "hierenv/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "hierenv/errors.hpp"

namespace hierenv {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(std::stoi(item));
    }
    return out;
}

std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

std::string format_double(double v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
}

}  // namespace

HierarchyConfig RunConfig::hierarchy() const {
    HierarchyConfig h;
    h.levels = levels;
    h.env_counts = env_counts;
    h.threshold = threshold;
    h.tau_gumbel = tau_gumbel;
    h.tau_contrastive = tau_contrastive;
    h.alpha = alpha;
    h.beta = beta;
    h.lambda_irm = lambda;
    h.entropy_bonus = entropy_bonus;
    return h;
}

SyntheticConfig RunConfig::synthetic() const {
    SyntheticConfig s;
    s.n_train = n_train;
    s.n_val = n_val;
    s.n_test = n_test;
    s.rho_train = rho_train;
    s.rho_test = rho_test;
    s.label_flip_prob = label_flip_prob;
    s.seed = seed;
    return s;
}

void RunConfig::validate() const {
    hierarchy().validate();
    synthetic().validate();
    if (hidden_dim < 1 || proj_dim < 1 || layers_stage1 < 1 || layers_stage2 < 1)
        throw ContractError("RunConfig: model sizes must be positive");
    if (lr <= 0 || batch_size < 1 || epochs_stage1 < 1 || epochs_stage2 < 1 || patience < 1)
        throw ContractError("RunConfig: optimizer settings out of range");
    if (dropout < 0 || dropout >= 1) throw ContractError("RunConfig: dropout must lie in [0, 1)");
    if (seeds.empty()) throw ContractError("RunConfig: seed list is empty");
}

void RunConfig::set_key(const std::string& key, const std::string& value) {
    if (key == "seed") seed = static_cast<uint64_t>(std::stoull(value));
    else if (key == "manifest") manifest = value;
    else if (key == "out_dir") out_dir = value;
    else if (key == "levels") levels = std::stoi(value);
    else if (key == "env_counts") env_counts = parse_int_list(value);
    else if (key == "threshold") threshold = std::stod(value);
    else if (key == "tau_gumbel") tau_gumbel = std::stod(value);
    else if (key == "tau_contrastive") tau_contrastive = std::stod(value);
    else if (key == "alpha") alpha = std::stod(value);
    else if (key == "beta") beta = std::stod(value);
    else if (key == "lambda") lambda = std::stod(value);
    else if (key == "entropy_bonus") entropy_bonus = std::stod(value);
    else if (key == "hidden_dim") hidden_dim = std::stoi(value);
    else if (key == "proj_dim") proj_dim = std::stoi(value);
    else if (key == "layers_stage1") layers_stage1 = std::stoi(value);
    else if (key == "layers_stage2") layers_stage2 = std::stoi(value);
    else if (key == "lr") lr = std::stod(value);
    else if (key == "batch_size") batch_size = std::stoi(value);
    else if (key == "epochs_stage1") epochs_stage1 = std::stoi(value);
    else if (key == "epochs_stage2") epochs_stage2 = std::stoi(value);
    else if (key == "patience") patience = std::stoi(value);
    else if (key == "dropout") dropout = std::stod(value);
    else if (key == "n_train") n_train = std::stoi(value);
    else if (key == "n_val") n_val = std::stoi(value);
    else if (key == "n_test") n_test = std::stoi(value);
    else if (key == "rho_train") rho_train = std::stod(value);
    else if (key == "rho_test") rho_test = std::stod(value);
    else if (key == "label_flip_prob") label_flip_prob = std::stod(value);
    else if (key == "strategy") strategy = value;
    else if (key == "seeds") seeds = parse_seed_list(value);
    else if (key == "jobs") jobs = std::stoi(value);
    else throw ParseError("unknown config key '" + key + "'");
}

namespace {

const char* kAllKeys[] = {
    "seed", "manifest", "out_dir", "levels", "env_counts", "threshold", "tau_gumbel",
    "tau_contrastive", "alpha", "beta", "lambda", "entropy_bonus", "hidden_dim", "proj_dim",
    "layers_stage1", "layers_stage2", "lr", "batch_size", "epochs_stage1", "epochs_stage2",
    "patience", "dropout", "n_train", "n_val", "n_test", "rho_train", "rho_test",
    "label_flip_prob", "strategy", "seeds", "jobs"};

}  // namespace

std::string RunConfig::to_text() const {
    std::ostringstream out;
    out << "seed = " << seed << "\n";
    out << "manifest = " << manifest << "\n";
    out << "out_dir = " << out_dir << "\n";
    out << "levels = " << levels << "\n";
    out << "env_counts = " << join_ints(env_counts) << "\n";
    out << "threshold = " << format_double(threshold) << "\n";
    out << "tau_gumbel = " << format_double(tau_gumbel) << "\n";
    out << "tau_contrastive = " << format_double(tau_contrastive) << "\n";
    out << "alpha = " << format_double(alpha) << "\n";
    out << "beta = " << format_double(beta) << "\n";
    out << "lambda = " << format_double(lambda) << "\n";
    out << "entropy_bonus = " << format_double(entropy_bonus) << "\n";
    out << "hidden_dim = " << hidden_dim << "\n";
    out << "proj_dim = " << proj_dim << "\n";
    out << "layers_stage1 = " << layers_stage1 << "\n";
    out << "layers_stage2 = " << layers_stage2 << "\n";
    out << "lr = " << format_double(lr) << "\n";
    out << "batch_size = " << batch_size << "\n";
    out << "epochs_stage1 = " << epochs_stage1 << "\n";
    out << "epochs_stage2 = " << epochs_stage2 << "\n";
    out << "patience = " << patience << "\n";
    out << "dropout = " << format_double(dropout) << "\n";
    out << "n_train = " << n_train << "\n";
    out << "n_val = " << n_val << "\n";
    out << "n_test = " << n_test << "\n";
    out << "rho_train = " << format_double(rho_train) << "\n";
    out << "rho_test = " << format_double(rho_test) << "\n";
    out << "label_flip_prob = " << format_double(label_flip_prob) << "\n";
    out << "strategy = " << strategy << "\n";
    out << "seeds = " << join_ints(seeds) << "\n";
    out << "jobs = " << jobs << "\n";
    return out.str();
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DependencyError("cannot open config file: " + path);
    RunConfig cfg;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError(path + " line " + std::to_string(line_no) + ": expected key = value");
        try {
            cfg.set_key(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const std::invalid_argument&) {
            throw ParseError(path + " line " + std::to_string(line_no) + ": bad value");
        } catch (const ParseError& e) {
            throw ParseError(path + " line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return cfg;
}

void RunConfig::apply_overrides(const std::map<std::string, std::string>& overrides) {
    for (const auto& [k, v] : overrides) set_key(k, v);
}

void RunConfig::apply_env_overrides() {
    for (const char* key : kAllKeys) {
        std::string env_name = "HIERENV_";
        for (const char* c = key; *c; ++c)
            env_name += static_cast<char>(std::toupper(static_cast<unsigned char>(*c)));
        if (const char* value = std::getenv(env_name.c_str())) set_key(key, value);
    }
}

std::vector<int> parse_seed_list(const std::string& text) {
    const std::string t = trim(text);
    const size_t dots = t.find("..");
    if (dots != std::string::npos) {
        const int lo = std::stoi(trim(t.substr(0, dots)));
        const int hi = std::stoi(trim(t.substr(dots + 2)));
        if (hi < lo) throw ContractError("seed range is empty: " + text);
        std::vector<int> out;
        for (int s = lo; s <= hi; ++s) out.push_back(s);
        return out;
    }
    std::vector<int> out = parse_int_list(t);
    if (out.empty()) throw ContractError("empty seed list: " + text);
    return out;
}

}  // namespace hierenv
