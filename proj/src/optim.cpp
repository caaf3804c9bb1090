#include "hierenv/optim.hpp"

#include <algorithm>
#include <cmath>

#include "hierenv/rng.hpp"

namespace hierenv {

Tensor& ParamStore::add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw ContractError("ParamStore: duplicate parameter '" + name + "'");
    if (!t.defined()) throw ContractError("ParamStore: undefined tensor for '" + name + "'");
    t.node->requires_grad = true;
    index_[name] = items_.size();
    items_.emplace_back(name, std::move(t));
    return items_.back().second;
}

Tensor& ParamStore::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("ParamStore: unknown parameter '" + name + "'");
    return items_[it->second].second;
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("ParamStore: unknown parameter '" + name + "'");
    return items_[it->second].second;
}

long ParamStore::total_values() const {
    long n = 0;
    for (const auto& [name, t] : items_) n += t.numel();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& [name, t] : items_) t.zero_grad();
}

std::vector<std::vector<double>> ParamStore::snapshot() const {
    std::vector<std::vector<double>> snap;
    snap.reserve(items_.size());
    for (const auto& [name, t] : items_) snap.push_back(t.values());
    return snap;
}

void ParamStore::restore(const std::vector<std::vector<double>>& snap) {
    if (snap.size() != items_.size())
        throw ContractError("ParamStore::restore: snapshot size mismatch");
    for (size_t i = 0; i < snap.size(); ++i) {
        if (snap[i].size() != items_[i].second.values().size())
            throw ContractError("ParamStore::restore: parameter size mismatch");
        items_[i].second.mutable_values() = snap[i];
    }
}

Adam::Adam(ParamStore& params, AdamConfig cfg) : params_(&params), cfg_(cfg) {
    if (cfg_.lr <= 0) throw ContractError("Adam: learning rate must be positive");
    for (const auto& [name, t] : params) {
        m_.emplace_back(t.values().size(), 0.0);
        v_.emplace_back(t.values().size(), 0.0);
    }
}

void Adam::step() {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
    size_t pi = 0;
    for (auto& [name, t] : *params_) {
        if (!t.has_grad())
            throw ContractError("Adam: missing gradient for parameter '" + name + "'");
        auto& vals = t.mutable_values();
        const auto& g = t.node->grad;
        auto& m = m_[pi];
        auto& v = v_[pi];
        for (size_t i = 0; i < vals.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            vals[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
        }
        ++pi;
    }
    params_->zero_grad();
}

FdReport finite_difference_check(const std::function<Tensor()>& loss_fn, ParamStore& params,
                                 double eps, int max_coords_per_tensor, uint64_t coord_seed) {
    if (eps <= 0) throw ContractError("finite_difference_check: eps must be positive");

    const double l0 = loss_fn().item();
    const double l0_again = loss_fn().item();
    if (l0 != l0_again)
        throw ContractError(
            "finite_difference_check: loss_fn is not deterministic under fixed streams");

    params.zero_grad();
    Tensor loss = loss_fn();
    backward(loss);
    std::vector<std::vector<double>> analytic;
    for (const auto& [name, t] : params) analytic.push_back(t.grad());
    params.zero_grad();

    FdReport report;
    RngStream coords = derive_stream(coord_seed, "fd-coords");
    size_t pi = 0;
    for (auto& [name, t] : params) {
        std::vector<int> picks;
        const int n = t.numel();
        if (n <= max_coords_per_tensor) {
            picks.resize(static_cast<size_t>(n));
            for (int i = 0; i < n; ++i) picks[i] = i;
        } else {
            for (int k = 0; k < max_coords_per_tensor; ++k) picks.push_back(coords.uniform_int(n));
            std::sort(picks.begin(), picks.end());
            picks.erase(std::unique(picks.begin(), picks.end()), picks.end());
        }
        double worst = 0.0;
        auto& vals = t.mutable_values();
        for (int i : picks) {
            const double keep = vals[i];
            vals[i] = keep + eps;
            const double lp = loss_fn().item();
            vals[i] = keep - eps;
            const double lm = loss_fn().item();
            vals[i] = keep;
            const double fd = (lp - lm) / (2.0 * eps);
            const double rel = std::fabs(analytic[pi][static_cast<size_t>(i)] - fd) /
                               std::max(1.0, std::fabs(fd));
            worst = std::max(worst, rel);
        }
        report.per_param[name] = worst;
        report.max_rel_err = std::max(report.max_rel_err, worst);
        ++pi;
    }
    return report;
}

}  // namespace hierenv
