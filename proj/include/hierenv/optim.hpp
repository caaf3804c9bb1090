#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "hierenv/tensor.hpp"

namespace hierenv {

// Named learnable parameters with stable (insertion-order) iteration.
class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor t);
    Tensor& get(const std::string& name);
    const Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) > 0; }

    size_t size() const { return items_.size(); }
    long total_values() const;

    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

    void zero_grad();

    std::vector<std::vector<double>> snapshot() const;
    void restore(const std::vector<std::vector<double>>& snap);

private:
    // deque: references returned by add() stay valid as parameters append
    std::deque<std::pair<std::string, Tensor>> items_;
    std::unordered_map<std::string, size_t> index_;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Bias-corrected Adam over a ParamStore. step() consumes (clears) gradients.
class Adam {
public:
    Adam(ParamStore& params, AdamConfig cfg);

    void step();
    long step_count() const { return step_count_; }

private:
    ParamStore* params_;
    AdamConfig cfg_;
    long step_count_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

struct FdReport {
    double max_rel_err = 0.0;
    std::map<std::string, double> per_param;
};

// Verifies analytic gradients of a deterministic scalar loss against central
// finite differences. loss_fn must rebuild the forward pass from scratch and
// replay identical random draws on every call (capture an RngPack by value);
// non-determinism is detected and reported as a contract error. For each
// parameter up to max_coords_per_tensor coordinates are sampled. The reported
// error is max over coordinates of |analytic - fd| / max(1, |fd|).
FdReport finite_difference_check(const std::function<Tensor()>& loss_fn, ParamStore& params,
                                 double eps, int max_coords_per_tensor = 12,
                                 uint64_t coord_seed = 7);

}  // namespace hierenv
