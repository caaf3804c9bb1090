#include "hierenv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "hierenv/errors.hpp"

namespace hierenv {

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels) {
    if (predictions.size() != labels.size() || predictions.empty())
        throw ContractError("accuracy: prediction and label counts must match and be non-empty");
    int correct = 0;
    for (size_t i = 0; i < predictions.size(); ++i)
        if (predictions[i] == labels[i]) ++correct;
    return static_cast<double>(correct) / predictions.size();
}

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw ContractError("roc_auc: score and label counts must match and be non-empty");
    long n_pos = 0, n_neg = 0;
    for (int y : labels) (y == 1 ? n_pos : n_neg) += 1;
    if (n_pos == 0 || n_neg == 0)
        throw MetricError("roc_auc: undefined with a single class present");

    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return scores[a] < scores[b]; });

    // Average ranks across ties, then the Mann-Whitney identity.
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (size_t k = i; k <= j; ++k)
            if (labels[order[k]] == 1) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    return (rank_sum_pos - static_cast<double>(n_pos) * (n_pos + 1) / 2.0) /
           (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

namespace {

// Q(lambda) = 2 * sum_{j>=1} (-1)^{j-1} exp(-2 j^2 lambda^2), truncated once
// terms drop below 1e-12; returns 1 when the series fails to converge fast
// (tiny lambda), matching the usual practice.
double ks_p_value(double d, size_t m, size_t n) {
    if (d <= 0.0) return 1.0;
    const double ne = static_cast<double>(m) * static_cast<double>(n) /
                      (static_cast<double>(m) + static_cast<double>(n));
    const double sqrt_ne = std::sqrt(ne);
    const double lambda = (sqrt_ne + 0.12 + 0.11 / sqrt_ne) * d;
    double sum = 0.0;
    double sign = 1.0;
    for (int j = 1; j <= 100; ++j) {
        const double term = std::exp(-2.0 * j * j * lambda * lambda);
        sum += sign * term;
        if (term < 1e-12) {
            const double p = 2.0 * sum;
            return std::min(1.0, std::max(p, 1e-300));
        }
        sign = -sign;
    }
    return 1.0;
}

}  // namespace

KsResult ks_two_sample(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.empty() || b.empty()) throw ContractError("ks_two_sample: empty sample");
    std::vector<double> sa = a, sb = b;
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    double d = 0.0;
    size_t ia = 0, ib = 0;
    const double na = static_cast<double>(sa.size()), nb = static_cast<double>(sb.size());
    while (ia < sa.size() && ib < sb.size()) {
        const double x = std::min(sa[ia], sb[ib]);
        while (ia < sa.size() && sa[ia] <= x) ++ia;
        while (ib < sb.size() && sb[ib] <= x) ++ib;
        d = std::max(d, std::fabs(ia / na - ib / nb));
    }
    KsResult r;
    r.d = d;
    r.p = ks_p_value(d, sa.size(), sb.size());
    return r;
}

DiversityReport diversity_report(const std::vector<int>& env_assignment,
                                 const std::vector<double>& features,
                                 const std::string& strategy) {
    if (env_assignment.size() != features.size() || env_assignment.empty())
        throw ContractError("diversity_report: assignment and feature counts must match");

    std::map<int, std::vector<double>> by_env;
    for (size_t i = 0; i < env_assignment.size(); ++i)
        by_env[env_assignment[i]].push_back(features[i]);
    if (by_env.size() < 2)
        throw ContractError("diversity_report: need at least two environments");

    DiversityReport rep;
    rep.strategy = strategy;
    for (auto& [env, vals] : by_env) {
        rep.env_ids.push_back(env);
        rep.env_features.push_back(vals);
    }
    const size_t E = rep.env_ids.size();
    rep.d_matrix.assign(E, std::vector<double>(E, 0.0));
    rep.p_matrix.assign(E, std::vector<double>(E, 1.0));

    double total_d = 0.0;
    int pairs = 0;
    for (size_t i = 0; i < E; ++i) {
        for (size_t j = i + 1; j < E; ++j) {
            if (rep.env_features[i].size() < 2 || rep.env_features[j].size() < 2) {
                ++rep.skipped_pairs;
                continue;
            }
            KsResult ks = ks_two_sample(rep.env_features[i], rep.env_features[j]);
            rep.d_matrix[i][j] = rep.d_matrix[j][i] = ks.d;
            rep.p_matrix[i][j] = rep.p_matrix[j][i] = ks.p;
            total_d += ks.d;
            ++pairs;
        }
    }
    if (pairs == 0)
        throw ContractError("diversity_report: no environment pair has two samples each");
    rep.inter_env_distance = total_d / pairs;
    return rep;
}

double env_recovery_score(const std::vector<int>& assignment, const std::vector<int>& truth) {
    if (assignment.size() != truth.size() || assignment.empty())
        throw ContractError("env_recovery_score: assignment and truth sizes must match");

    std::vector<int> a_ids(assignment.begin(), assignment.end());
    std::sort(a_ids.begin(), a_ids.end());
    a_ids.erase(std::unique(a_ids.begin(), a_ids.end()), a_ids.end());
    std::vector<int> t_ids(truth.begin(), truth.end());
    std::sort(t_ids.begin(), t_ids.end());
    t_ids.erase(std::unique(t_ids.begin(), t_ids.end()), t_ids.end());
    if (a_ids.size() > 8 || t_ids.size() > 8)
        throw ContractError("env_recovery_score: exhaustive matching limited to 8 ids");

    // Pad the smaller side with dummy ids so every relabeling is a bijection
    // between equal-sized sets; dummies never match anything.
    int dummy = -1;
    while (a_ids.size() < t_ids.size()) a_ids.push_back(dummy--);
    while (t_ids.size() < a_ids.size()) t_ids.push_back(dummy--);

    // Count agreements per (assignment id, truth id) once.
    std::map<std::pair<int, int>, int> joint;
    for (size_t i = 0; i < assignment.size(); ++i)
        joint[{assignment[i], truth[i]}] += 1;

    std::vector<size_t> perm(t_ids.size());
    std::iota(perm.begin(), perm.end(), 0);
    int best = 0;
    do {
        int agree = 0;
        for (size_t k = 0; k < a_ids.size(); ++k) {
            auto it = joint.find({a_ids[k], t_ids[perm[k]]});
            if (it != joint.end()) agree += it->second;
        }
        best = std::max(best, agree);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return static_cast<double>(best) / assignment.size();
}

double env_label_dependency(const std::vector<int>& assignment, const std::vector<int>& labels) {
    if (assignment.size() != labels.size() || assignment.empty())
        throw ContractError("env_label_dependency: assignment and label sizes must match");
    const double n = static_cast<double>(labels.size());

    std::map<int, int> label_counts;
    for (int y : labels) label_counts[y] += 1;
    double h_y = 0.0;
    for (const auto& [y, c] : label_counts) {
        const double p = c / n;
        h_y -= p * std::log(p);
    }

    std::map<int, std::map<int, int>> env_label;
    std::map<int, int> env_counts;
    for (size_t i = 0; i < labels.size(); ++i) {
        env_label[assignment[i]][labels[i]] += 1;
        env_counts[assignment[i]] += 1;
    }
    double h_y_given_e = 0.0;
    for (const auto& [e, table] : env_label) {
        const double pe = env_counts[e] / n;
        double h = 0.0;
        for (const auto& [y, c] : table) {
            const double p = static_cast<double>(c) / env_counts[e];
            h -= p * std::log(p);
        }
        h_y_given_e += pe * h;
    }
    return h_y - h_y_given_e;
}

}  // namespace hierenv
