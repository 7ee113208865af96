#pragma once

#include <map>
#include <string>
#include <vector>

#include "bench/core.hpp"

namespace bench {

struct PredictionSet {
    Matrix probs;             // m × n_classes, rows sum to 1
    std::vector<int> labels;  // length m
};

// Fraction of (negative, positive) pairs ordered correctly, ties counted 1/2.
// Computed via midranks in O(n log n). Throws MetricError when only one class
// is present.
double roc_auc_binary(const std::vector<double>& scores, const std::vector<int>& labels);

// Macro one-vs-rest average over the classes present in labels.
double roc_auc_multiclass(const PredictionSet& pred);

// Argmax misclassification rate; argmax ties break toward the lowest index.
double error_rate(const PredictionSet& pred);

// One HPO objective trajectory together with its group's normalization range.
struct AdtmInput {
    std::vector<double> trajectory;
    double dataset_min = 0.0;
    double dataset_max = 0.0;
};

// Normalized incumbent curve for one trajectory: best-so-far objective mapped
// through (max - value) / (max - min), right-extended to n_trials. A
// degenerate group (max == min) contributes 0 everywhere.
std::vector<double> adtm_normalize(const AdtmInput& input, std::size_t n_trials);

// Trajectories for one (dataset, fold) group, keyed by method. The min/max
// normalization range is computed across all methods' trials in the group.
struct AdtmGroup {
    std::map<std::string, std::vector<double>> by_method;
};

// Mean normalized incumbent curve per method across all groups.
std::map<std::string, std::vector<double>> adtm_curves(const std::vector<AdtmGroup>& groups,
                                                       std::size_t n_trials);

}  // namespace bench
