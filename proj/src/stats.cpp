#include "bench/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace bench {

namespace {

// Rows usable for rank statistics: no missing cell.
std::vector<std::size_t> complete_rows(const ResultMatrix& m) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < m.n_datasets(); ++i) {
        bool complete = true;
        for (const auto& v : m.values[i]) complete = complete && v.has_value();
        if (complete) rows.push_back(i);
    }
    return rows;
}

// Tie-averaged ranks of one row, rank 1 for the highest value.
std::vector<double> row_ranks(const std::vector<std::optional<double>>& row) {
    const std::size_t k = row.size();
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return *row[a] > *row[b]; });
    std::vector<double> ranks(k);
    std::size_t i = 0;
    while (i < k) {
        std::size_t j = i;
        while (j + 1 < k && *row[order[j + 1]] == *row[order[i]]) ++j;
        const double shared = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = shared;
        i = j + 1;
    }
    return ranks;
}

double median_of(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Regularized lower incomplete gamma P(a, x) by series; Q by continued
// fraction for large x (both standard formulations).
double gamma_p_series(double a, double x) {
    double sum = 1.0 / a, term = sum, ap = a;
    for (int i = 0; i < 500; ++i) {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if (std::abs(term) < std::abs(sum) * 1e-15) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

double gamma_q_contfrac(double a, double x) {
    double b = x + 1.0 - a, c = 1e300, d = 1.0 / b, h = d;
    for (int i = 1; i <= 500; ++i) {
        const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < 1e-300) d = 1e-300;
        c = b + an / c;
        if (std::abs(c) < 1e-300) c = 1e-300;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-15) break;
    }
    return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

}  // namespace

double chi_square_upper_tail(double x, double df) {
    if (x <= 0) return 1.0;
    const double a = df / 2.0, half = x / 2.0;
    if (half < a + 1.0) return 1.0 - gamma_p_series(a, half);
    return gamma_q_contfrac(a, half);
}

RankResult average_ranks(const ResultMatrix& m) {
    if (m.n_methods() < 2) throw InsufficientDataError("rank analysis needs >= 2 methods");
    const auto rows = complete_rows(m);
    if (rows.size() < 2)
        throw InsufficientDataError("rank analysis needs >= 2 complete dataset rows");
    RankResult out;
    out.rows_used = rows.size();
    out.rows_dropped = m.n_datasets() - rows.size();
    out.avg_ranks.assign(m.n_methods(), 0.0);
    for (std::size_t i : rows) {
        const auto ranks = row_ranks(m.values[i]);
        for (std::size_t j = 0; j < ranks.size(); ++j) out.avg_ranks[j] += ranks[j];
    }
    for (auto& r : out.avg_ranks) r /= static_cast<double>(rows.size());
    return out;
}

FriedmanResult friedman(const ResultMatrix& m) {
    const std::size_t k = m.n_methods();
    if (k < 3) throw InsufficientDataError("friedman test needs >= 3 methods");
    const auto rows = complete_rows(m);
    const double n = static_cast<double>(rows.size());
    if (rows.size() < 2)
        throw InsufficientDataError("friedman test needs >= 2 complete dataset rows");

    std::vector<double> rank_sums(k, 0.0);
    for (std::size_t i : rows) {
        const auto ranks = row_ranks(m.values[i]);
        for (std::size_t j = 0; j < k; ++j) rank_sums[j] += ranks[j];
    }
    const double kk = static_cast<double>(k);
    double sum_sq = 0.0;
    for (double s : rank_sums) sum_sq += s * s;
    FriedmanResult out;
    out.rows_used = rows.size();
    out.chi2 = 12.0 / (n * kk * (kk + 1.0)) * sum_sq - 3.0 * n * (kk + 1.0);
    out.chi2 = std::max(out.chi2, 0.0);  // guard tiny negative rounding
    out.p_value = chi_square_upper_tail(out.chi2, kk - 1.0);
    return out;
}

double nemenyi_cd(std::size_t k, std::size_t n, double alpha) {
    // Two-tailed q_0.05 studentized-range constants divided by sqrt(2), as
    // tabulated for the Nemenyi test in the comparative-classifier literature
    // (Demsar 2006, Table 5a), k = 2..20.
    static const double q_05[] = {1.960, 2.343, 2.569, 2.728, 2.850, 2.949, 3.031,
                                  3.102, 3.164, 3.219, 3.268, 3.313, 3.354, 3.391,
                                  3.426, 3.458, 3.489, 3.517, 3.544};
    if (std::abs(alpha - 0.05) > 1e-12)
        throw ConfigError("only alpha = 0.05 is supported by the embedded q table");
    if (k < 2 || k > 20) throw ConfigError("nemenyi q table covers 2 <= k <= 20");
    if (n < 2) throw InsufficientDataError("nemenyi cd needs >= 2 datasets");
    const double kk = static_cast<double>(k);
    return q_05[k - 2] * std::sqrt(kk * (kk + 1.0) / (6.0 * static_cast<double>(n)));
}

std::vector<std::vector<std::size_t>> significance_groups(const std::vector<double>& ranks,
                                                          double cd) {
    const std::size_t k = ranks.size();
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return ranks[a] < ranks[b]; });
    std::vector<std::vector<std::size_t>> groups;
    std::size_t last_end = 0;  // one past the end of the previous bar
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t j = i;
        while (j + 1 < k && ranks[order[j + 1]] - ranks[order[i]] <= cd) ++j;
        if (j + 1 > last_end) {  // maximal: not contained in the previous bar
            groups.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                                order.begin() + static_cast<std::ptrdiff_t>(j) + 1);
            last_end = j + 1;
        }
    }
    return groups;
}

std::vector<int> wins(const ResultMatrix& m) {
    std::vector<int> counts(m.n_methods(), 0);
    for (const auto& row : m.values) {
        double best = -1.0;
        for (const auto& v : row)
            if (v && *v > best) best = *v;
        if (best < 0) continue;  // all-missing row
        for (std::size_t j = 0; j < row.size(); ++j)
            if (row[j] && *row[j] == best) ++counts[j];
    }
    return counts;
}

std::vector<MethodSummary> summary_stats(const ResultMatrix& m,
                                         const std::vector<std::vector<double>>& wall_times_hours,
                                         std::uint64_t seed) {
    std::vector<double> mean_ranks(m.n_methods(),
                                   std::numeric_limits<double>::quiet_NaN());
    try {
        mean_ranks = average_ranks(m).avg_ranks;
    } catch (const InsufficientDataError&) {
        // ranks stay NaN when too few complete rows exist
    }

    Rng rng(seed);
    std::vector<MethodSummary> out;
    for (std::size_t j = 0; j < m.n_methods(); ++j) {
        std::vector<double> col;
        for (const auto& row : m.values)
            if (row[j]) col.push_back(*row[j]);
        if (col.empty())
            throw InsufficientDataError("summary needs >= 1 value per method");

        MethodSummary s;
        s.method = m.methods[j];
        s.mean_rank = mean_ranks[j];
        s.mean_auc = std::accumulate(col.begin(), col.end(), 0.0) /
                     static_cast<double>(col.size());
        s.median_auc = median_of(col);
        std::vector<double> dev;
        for (double v : col) dev.push_back(std::abs(v - s.median_auc));
        s.mad = median_of(dev);

        // 95% percentile bootstrap of the median, 1000 resamples
        std::vector<double> boot;
        std::uniform_int_distribution<std::size_t> pick(0, col.size() - 1);
        for (int b = 0; b < 1000; ++b) {
            std::vector<double> sample(col.size());
            for (auto& v : sample) v = col[pick(rng)];
            boot.push_back(median_of(sample));
        }
        std::sort(boot.begin(), boot.end());
        s.ci_low = boot[24];    // 2.5th percentile of 1000
        s.ci_high = boot[974];  // 97.5th percentile
        s.ci_low = std::min(s.ci_low, s.median_auc);
        s.ci_high = std::max(s.ci_high, s.median_auc);

        if (j < wall_times_hours.size() && !wall_times_hours[j].empty()) {
            const auto& w = wall_times_hours[j];
            s.mean_wall_h =
                std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
            s.median_wall_h = median_of(w);
        }
        out.push_back(std::move(s));
    }
    return out;
}

RankSummary rank_summary(const ResultMatrix& m, double alpha) {
    RankSummary out;
    const auto ranks = average_ranks(m);
    out.avg_ranks = ranks.avg_ranks;
    out.rows_used = ranks.rows_used;
    out.rows_dropped = ranks.rows_dropped;
    out.k = m.n_methods();
    out.alpha = alpha;
    if (out.k >= 3) {
        const auto fr = friedman(m);
        out.chi2 = fr.chi2;
        out.p_value = fr.p_value;
        out.friedman_valid = true;
    }
    out.cd = nemenyi_cd(out.k, out.rows_used, alpha);
    out.groups = significance_groups(out.avg_ranks, out.cd);
    out.win_counts = wins(m);
    return out;
}

}  // namespace bench
