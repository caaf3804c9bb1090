#pragma once

#include <string>
#include <vector>

namespace hierenv {

double accuracy(const std::vector<int>& predictions, const std::vector<int>& labels);

// Rank-based (Mann-Whitney) ROC-AUC with half credit for tied scores.
// Throws MetricError unless both classes are present.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct KsResult {
    double d = 0.0;  // sup over x of |ECDF_a(x) - ECDF_b(x)|
    double p = 1.0;  // asymptotic two-sample p-value with the small-sample correction
};

KsResult ks_two_sample(const std::vector<double>& a, const std::vector<double>& b);

// Pairwise two-sample K-S statistics between per-environment distributions of
// a scalar feature. inter_env_distance is the mean off-diagonal D over pairs
// where both environments have at least two samples.
struct DiversityReport {
    std::string strategy;
    std::vector<int> env_ids;
    std::vector<std::vector<double>> env_features;  // per environment
    std::vector<std::vector<double>> d_matrix;      // symmetric, zero diagonal
    std::vector<std::vector<double>> p_matrix;
    double inter_env_distance = 0.0;
    int skipped_pairs = 0;
};

DiversityReport diversity_report(const std::vector<int>& env_assignment,
                                 const std::vector<double>& features,
                                 const std::string& strategy = "");

// Best agreement fraction between an inferred assignment and ground-truth ids
// over injective relabelings; invariant to relabeling either argument.
double env_recovery_score(const std::vector<int>& assignment, const std::vector<int>& truth);

// Plug-in estimate of H(Y) - H(Y | E), natural log.
double env_label_dependency(const std::vector<int>& assignment, const std::vector<int>& labels);

}  // namespace hierenv
