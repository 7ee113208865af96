#include "bench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bench {

double roc_auc_binary(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw MetricError("roc_auc_binary: size mismatch");
    const std::size_t n = scores.size();
    std::size_t n_pos = 0;
    for (int y : labels) n_pos += y != 0;
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0)
        throw MetricError("roc_auc_binary: both classes must be present");

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // midranks over tie groups; sum ranks of positives
    double rank_sum_pos = 0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t t = i; t <= j; ++t)
            if (labels[order[t]] != 0) rank_sum_pos += midrank;
        i = j + 1;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

double roc_auc_multiclass(const PredictionSet& pred) {
    const std::size_t m = pred.probs.rows, c = pred.probs.cols;
    if (pred.labels.size() != m) throw MetricError("roc_auc_multiclass: size mismatch");
    std::vector<std::size_t> counts(c, 0);
    for (int y : pred.labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= c)
            throw MetricError("roc_auc_multiclass: label out of range");
        ++counts[static_cast<std::size_t>(y)];
    }
    std::size_t present = 0;
    for (std::size_t k = 0; k < c; ++k) present += counts[k] > 0;
    if (present < 2)
        throw MetricError("roc_auc_multiclass: fewer than two classes present");

    double sum = 0;
    std::size_t used = 0;
    std::vector<double> col(m);
    std::vector<int> ovr(m);
    for (std::size_t k = 0; k < c; ++k) {
        if (counts[k] == 0 || counts[k] == m) {
            if (counts[k] == m) continue;  // no negatives either way
            continue;                      // absent class skipped
        }
        for (std::size_t i = 0; i < m; ++i) {
            col[i] = pred.probs(i, k);
            ovr[i] = pred.labels[i] == static_cast<int>(k) ? 1 : 0;
        }
        sum += roc_auc_binary(col, ovr);
        ++used;
    }
    if (used == 0) throw MetricError("roc_auc_multiclass: no scorable class");
    return sum / static_cast<double>(used);
}

double error_rate(const PredictionSet& pred) {
    const std::size_t m = pred.probs.rows;
    if (m == 0) throw MetricError("error_rate: empty prediction set");
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < m; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < pred.probs.cols; ++j)
            if (pred.probs(i, j) > pred.probs(i, best)) best = j;
        wrong += static_cast<int>(best) != pred.labels[i];
    }
    return static_cast<double>(wrong) / static_cast<double>(m);
}

std::vector<double> adtm_normalize(const AdtmInput& input, std::size_t n_trials) {
    if (input.trajectory.empty()) throw MetricError("adtm: empty trajectory");
    const double span = input.dataset_max - input.dataset_min;
    std::vector<double> curve(n_trials, 0.0);
    double incumbent = -1e300;
    for (std::size_t t = 0; t < n_trials; ++t) {
        if (t < input.trajectory.size())
            incumbent = std::max(incumbent, input.trajectory[t]);
        curve[t] = span <= 0.0 ? 0.0 : (input.dataset_max - incumbent) / span;
    }
    return curve;
}

std::map<std::string, std::vector<double>> adtm_curves(const std::vector<AdtmGroup>& groups,
                                                       std::size_t n_trials) {
    std::map<std::string, std::vector<double>> sums;
    std::map<std::string, std::size_t> counts;
    for (const auto& g : groups) {
        double lo = 1e300, hi = -1e300;
        for (const auto& [method, traj] : g.by_method)
            for (double v : traj) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        for (const auto& [method, traj] : g.by_method) {
            if (traj.empty()) continue;
            auto curve = adtm_normalize({traj, lo, hi}, n_trials);
            auto& acc = sums[method];
            if (acc.empty()) acc.assign(n_trials, 0.0);
            for (std::size_t t = 0; t < n_trials; ++t) acc[t] += curve[t];
            ++counts[method];
        }
    }
    for (auto& [method, acc] : sums)
        for (double& v : acc) v /= static_cast<double>(counts[method]);
    return sums;
}

}  // namespace bench
