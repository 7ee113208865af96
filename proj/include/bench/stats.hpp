#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bench/core.hpp"

namespace bench {

// datasets × methods grid of mean test AUC; a missing cell marks a failed run.
struct ResultMatrix {
    std::vector<std::string> methods;
    std::vector<std::string> datasets;
    std::vector<std::vector<std::optional<double>>> values;  // [dataset][method]

    std::size_t n_methods() const { return methods.size(); }
    std::size_t n_datasets() const { return datasets.size(); }
};

struct RankResult {
    std::vector<double> avg_ranks;  // rank 1 = best (highest AUC), ties averaged
    std::size_t rows_used = 0;
    std::size_t rows_dropped = 0;  // rows with any missing cell
};

// Per-method mean rank over the complete rows. Throws InsufficientDataError
// with fewer than 2 complete rows.
RankResult average_ranks(const ResultMatrix& m);

struct FriedmanResult {
    double chi2 = 0.0;
    double p_value = 1.0;
    std::size_t rows_used = 0;
};

// Friedman chi-square rank test over the complete rows (k >= 3 methods).
FriedmanResult friedman(const ResultMatrix& m);

// Critical difference q_alpha * sqrt(k(k+1)/(6N)) with embedded q_0.05
// studentized-range constants for 2 <= k <= 20.
double nemenyi_cd(std::size_t k, std::size_t n, double alpha = 0.05);

// Maximal intervals of the rank-sorted methods whose extreme ranks differ by
// at most cd; each group lists method indices, best rank first.
std::vector<std::vector<std::size_t>> significance_groups(const std::vector<double>& ranks,
                                                          double cd);

// Per-dataset, every method attaining the row maximum gains a point.
std::vector<int> wins(const ResultMatrix& m);

struct MethodSummary {
    std::string method;
    double mean_rank = 0.0;
    double mean_auc = 0.0;
    double median_auc = 0.0;
    double mad = 0.0;       // median absolute deviation
    double ci_low = 0.0;    // 95% percentile bootstrap of the median
    double ci_high = 0.0;
    double mean_wall_h = 0.0;
    double median_wall_h = 0.0;
};

// wall_times_hours: per method, one entry per completed cell (may be empty).
std::vector<MethodSummary> summary_stats(const ResultMatrix& m,
                                         const std::vector<std::vector<double>>& wall_times_hours,
                                         std::uint64_t seed = 0);

struct RankSummary {
    std::vector<double> avg_ranks;
    bool friedman_valid = false;  // false with only two methods
    double chi2 = 0.0;
    double p_value = 1.0;
    double cd = 0.0;
    double alpha = 0.05;
    std::size_t k = 0;
    std::size_t rows_used = 0;
    std::size_t rows_dropped = 0;
    std::vector<std::vector<std::size_t>> groups;
    std::vector<int> win_counts;
};

RankSummary rank_summary(const ResultMatrix& m, double alpha = 0.05);

// Upper-tail probability of a chi-square variate (regularized incomplete
// gamma Q(df/2, x/2)); exposed for direct verification.
double chi_square_upper_tail(double x, double df);

}  // namespace bench
