#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "bench/stats.hpp"

using namespace bench;

namespace {

constexpr double kMissing = -1.0;

ResultMatrix matrix(const std::vector<std::vector<double>>& rows) {
    ResultMatrix m;
    const std::size_t k = rows.empty() ? 0 : rows[0].size();
    for (std::size_t j = 0; j < k; ++j) m.methods.push_back("m" + std::to_string(j));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        m.datasets.push_back("d" + std::to_string(i));
        std::vector<std::optional<double>> row;
        for (double v : rows[i])
            row.push_back(v == kMissing ? std::nullopt : std::optional<double>(v));
        m.values.push_back(std::move(row));
    }
    return m;
}

// Quadratic-time midrank oracle: rank = 1 + #greater + #equal-others/2.
std::vector<double> oracle_row_ranks(const std::vector<double>& row) {
    std::vector<double> ranks(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) {
        double greater = 0, equal = 0;
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (j == i) continue;
            if (row[j] > row[i]) greater += 1;
            if (row[j] == row[i]) equal += 1;
        }
        ranks[i] = 1.0 + greater + equal / 2.0;
    }
    return ranks;
}

}  // namespace

TEST_CASE("average ranks on hand-built matrices") {
    auto two_copies = matrix({{0.9, 0.8, 0.7}, {0.9, 0.8, 0.7}});
    auto r = average_ranks(two_copies);
    CHECK(r.avg_ranks == std::vector<double>{1.0, 2.0, 3.0});

    auto tied = matrix({{0.9, 0.9, 0.7}, {0.9, 0.9, 0.7}});
    CHECK(average_ranks(tied).avg_ranks == std::vector<double>{1.5, 1.5, 3.0});

    auto opposite = matrix({{0.9, 0.8}, {0.7, 0.8}});
    CHECK(average_ranks(opposite).avg_ranks == std::vector<double>{1.5, 1.5});

    auto with_hole = matrix({{0.9, 0.8}, {0.5, 0.6}, {kMissing, 0.7}});
    auto rh = average_ranks(with_hole);
    CHECK(rh.rows_used == 2);
    CHECK(rh.rows_dropped == 1);

    CHECK_THROWS_AS(average_ranks(matrix({{0.9, 0.8}, {kMissing, 0.7}})),
                    InsufficientDataError);
    CHECK_THROWS_AS(average_ranks(matrix({{0.9}, {0.8}})), InsufficientDataError);
}

TEST_CASE("per-dataset rank sums equal k(k+1)/2") {
    Rng rng(4);
    std::uniform_real_distribution<double> u(0, 1);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t n = 2 + rep % 9, k = 2 + rep % 7;
        std::vector<std::vector<double>> rows(n, std::vector<double>(k));
        for (auto& row : rows)
            for (auto& v : row) v = (rep % 3 == 0) ? std::round(u(rng) * 4) / 4 : u(rng);
        auto m = matrix(rows);
        auto r = average_ranks(m);
        double total = 0;
        for (double v : r.avg_ranks) total += v;
        CHECK(total == doctest::Approx(static_cast<double>(k * (k + 1)) / 2.0).epsilon(1e-12));

        // against the quadratic oracle
        std::vector<double> expect(k, 0.0);
        for (const auto& row : rows) {
            auto rr = oracle_row_ranks(row);
            for (std::size_t j = 0; j < k; ++j) expect[j] += rr[j];
        }
        for (std::size_t j = 0; j < k; ++j)
            CHECK(r.avg_ranks[j] ==
                  doctest::Approx(expect[j] / static_cast<double>(n)).epsilon(1e-9));
    }
}

TEST_CASE("friedman statistic") {
    auto identical = matrix({{0.8, 0.8, 0.8}, {0.6, 0.6, 0.6}, {0.7, 0.7, 0.7}});
    auto fi = friedman(identical);
    CHECK(fi.chi2 == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(fi.p_value == doctest::Approx(1.0).epsilon(1e-12));

    // perfectly ordered 4x3: rank sums (4, 8, 12) -> chi2 = 8, p = exp(-4)
    auto ordered = matrix({{0.9, 0.8, 0.7},
                           {0.95, 0.85, 0.75},
                           {0.99, 0.89, 0.79},
                           {0.91, 0.81, 0.71}});
    auto fo = friedman(ordered);
    CHECK(fo.chi2 == doctest::Approx(8.0).epsilon(1e-12));
    CHECK(fo.p_value == doctest::Approx(std::exp(-4.0)).epsilon(1e-9));

    CHECK_THROWS_AS(friedman(matrix({{0.9, 0.8}, {0.7, 0.6}})), InsufficientDataError);
    CHECK_THROWS_AS(friedman(matrix({{0.9, 0.8, 0.7}})), InsufficientDataError);
}

TEST_CASE("rank statistics are invariant under monotone transforms") {
    Rng rng(9);
    std::uniform_real_distribution<double> u(0.01, 0.94);
    std::vector<std::vector<double>> rows(6, std::vector<double>(4));
    for (auto& row : rows)
        for (auto& v : row) v = u(rng);

    auto base = matrix(rows);
    auto cubed = rows;
    for (auto& row : cubed)
        for (auto& v : row) v = v * v * v;
    auto shifted = rows;
    for (auto& row : shifted)
        for (auto& v : row) v += 0.05;

    for (const auto& variant : {matrix(cubed), matrix(shifted)}) {
        CHECK(average_ranks(variant).avg_ranks == average_ranks(base).avg_ranks);
        CHECK(friedman(variant).chi2 == doctest::Approx(friedman(base).chi2).epsilon(1e-12));
        CHECK(wins(variant) == wins(base));
    }
}

TEST_CASE("friedman agrees with a brute-force recomputation") {
    Rng rng(21);
    std::uniform_real_distribution<double> u(0, 1);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t n = 3 + rep % 8, k = 3 + rep % 6;
        std::vector<std::vector<double>> rows(n, std::vector<double>(k));
        for (auto& row : rows)
            for (auto& v : row) v = std::round(u(rng) * 6) / 6;  // force ties
        auto f = friedman(matrix(rows));

        std::vector<double> sums(k, 0.0);
        for (const auto& row : rows) {
            auto rr = oracle_row_ranks(row);
            for (std::size_t j = 0; j < k; ++j) sums[j] += rr[j];
        }
        double sum_sq = 0;
        for (double s : sums) sum_sq += s * s;
        const double nn = static_cast<double>(n), kk = static_cast<double>(k);
        const double expect =
            std::max(0.0, 12.0 / (nn * kk * (kk + 1.0)) * sum_sq - 3.0 * nn * (kk + 1.0));
        CHECK(f.chi2 == doctest::Approx(expect).epsilon(1e-9));
    }
}

TEST_CASE("chi-square upper tail") {
    CHECK(chi_square_upper_tail(0.0, 3) == 1.0);
    CHECK(chi_square_upper_tail(5.0, 2) == doctest::Approx(std::exp(-2.5)).epsilon(1e-12));
    CHECK(chi_square_upper_tail(3.841, 1) == doctest::Approx(0.05).epsilon(2e-3));
    CHECK(chi_square_upper_tail(7.815, 3) == doctest::Approx(0.05).epsilon(2e-3));
    CHECK(chi_square_upper_tail(50.0, 2) < 2e-11);
}

TEST_CASE("nemenyi critical difference") {
    CHECK(nemenyi_cd(2, 10) == doctest::Approx(1.960 * std::sqrt(6.0 / 60.0)).epsilon(1e-12));
    CHECK(nemenyi_cd(2, 10) == doctest::Approx(0.6198).epsilon(1e-3));
    CHECK(nemenyi_cd(7, 68) == doctest::Approx(1.0926).epsilon(1e-3));
    for (std::size_t n = 2; n < 40; ++n)
        CHECK(nemenyi_cd(5, n + 1) < nemenyi_cd(5, n));
    CHECK_THROWS_AS(nemenyi_cd(1, 10), ConfigError);
    CHECK_THROWS_AS(nemenyi_cd(21, 10), ConfigError);
    CHECK_THROWS_AS(nemenyi_cd(5, 1), InsufficientDataError);
    CHECK_THROWS_AS(nemenyi_cd(5, 10, 0.01), ConfigError);
}

TEST_CASE("significance groups are maximal bars") {
    auto single = significance_groups({1.0, 1.4, 1.9}, 1.0);
    REQUIRE(single.size() == 1);
    CHECK(single[0].size() == 3);

    auto split = significance_groups({1.0, 5.0}, 1.0);
    REQUIRE(split.size() == 2);
    CHECK(split[0] == std::vector<std::size_t>{0});
    CHECK(split[1] == std::vector<std::size_t>{1});

    auto mixed = significance_groups({1.0, 1.5, 3.0}, 1.0);
    REQUIRE(mixed.size() == 2);
    CHECK(mixed[0] == std::vector<std::size_t>{0, 1});
    CHECK(mixed[1] == std::vector<std::size_t>{2});

    // no bar ever spans a pair separated by more than the critical difference
    Rng rng(2);
    std::uniform_real_distribution<double> u(1.0, 8.0);
    for (int rep = 0; rep < 200; ++rep) {
        std::vector<double> ranks(5);
        for (auto& r : ranks) r = u(rng);
        const double cd = u(rng) / 4.0;
        auto groups = significance_groups(ranks, cd);
        std::set<std::size_t> covered;
        for (const auto& g : groups) {
            for (std::size_t a : g)
                for (std::size_t b : g)
                    CHECK(std::abs(ranks[a] - ranks[b]) <= cd + 1e-12);
            covered.insert(g.begin(), g.end());
        }
        CHECK(covered.size() == ranks.size());  // groups cover every method
    }
}

TEST_CASE("win counts award ties and skip missing cells") {
    auto m = matrix({{0.9, 0.9, 0.7},
                     {0.6, 0.8, 0.7},
                     {kMissing, 0.5, 0.5},
                     {kMissing, kMissing, kMissing}});
    CHECK(wins(m) == std::vector<int>{1, 3, 1});
}

TEST_CASE("summary statistics") {
    auto m = matrix({{0.9, 0.8}, {0.9, 0.9}, {0.9, 1.0}});
    auto s = summary_stats(m, {{1.0, 2.0, 3.0}, {2.0}}, 7);
    REQUIRE(s.size() == 2);
    CHECK(s[0].median_auc == 0.9);
    CHECK(s[0].mad == 0.0);
    CHECK(s[1].median_auc == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(s[1].mad == doctest::Approx(0.1).epsilon(1e-12));
    for (const auto& method : s) {
        CHECK(method.ci_low <= method.median_auc);
        CHECK(method.ci_high >= method.median_auc);
    }
    CHECK(s[0].mean_wall_h == doctest::Approx(2.0));
    CHECK(s[0].median_wall_h == doctest::Approx(2.0));
    CHECK(s[1].mean_wall_h == doctest::Approx(2.0));

    // deterministic in the seed
    auto again = summary_stats(m, {}, 7);
    CHECK(again[0].ci_low == s[0].ci_low);
    CHECK(again[1].ci_high == s[1].ci_high);
}

TEST_CASE("combined rank summary") {
    auto m = matrix({{0.9, 0.8, 0.7},
                     {0.95, 0.85, 0.75},
                     {0.99, 0.89, 0.79},
                     {0.91, 0.81, 0.71}});
    auto s = rank_summary(m);
    CHECK(s.k == 3);
    CHECK(s.rows_used == 4);
    CHECK(s.chi2 == doctest::Approx(8.0).epsilon(1e-12));
    CHECK(s.avg_ranks == std::vector<double>{1.0, 2.0, 3.0});
    CHECK(s.cd == doctest::Approx(nemenyi_cd(3, 4)).epsilon(1e-12));
    CHECK(s.win_counts == std::vector<int>{4, 0, 0});
    std::size_t covered = 0;
    for (const auto& g : s.groups) covered += g.size();
    CHECK(covered >= 3);
}
