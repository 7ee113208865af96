#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "bench/metrics.hpp"

using namespace bench;

namespace {

// O(n^2) oracle: fraction of (negative, positive) pairs with the positive
// scored higher, ties counted 1/2. Independent of the sort-based path.
double auc_pairwise(const std::vector<double>& scores, const std::vector<int>& labels) {
    double num = 0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] == 0) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j])
                num += 1.0;
            else if (scores[i] == scores[j])
                num += 0.5;
        }
    }
    return num / static_cast<double>(pairs);
}

PredictionSet binary_preds(const std::vector<double>& p1, const std::vector<int>& labels) {
    PredictionSet ps;
    ps.probs = Matrix(p1.size(), 2);
    for (std::size_t i = 0; i < p1.size(); ++i) {
        ps.probs(i, 0) = 1.0 - p1[i];
        ps.probs(i, 1) = p1[i];
    }
    ps.labels = labels;
    return ps;
}

}  // namespace

TEST_CASE("binary AUC hand instances") {
    CHECK(roc_auc_binary({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) == doctest::Approx(0.75));
    CHECK(roc_auc_binary({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == doctest::Approx(1.0));
    CHECK(roc_auc_binary({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}) == doctest::Approx(0.5));
    CHECK_THROWS_AS(roc_auc_binary({0.1, 0.2}, {1, 1}), MetricError);
}

TEST_CASE("sort-based AUC equals pairwise oracle on 1000 random instances") {
    std::mt19937_64 rng(0);
    for (int rep = 0; rep < 1000; ++rep) {
        std::uniform_int_distribution<std::size_t> nd(2, 200);
        const std::size_t n = nd(rng);
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        // quantized scores force heavy ties in roughly a third of instances
        const int levels = rep % 3 == 0 ? 4 : 1000;
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = std::uniform_int_distribution<int>(0, levels)(rng) /
                        static_cast<double>(levels);
            labels[i] = std::uniform_int_distribution<int>(0, 1)(rng);
        }
        labels[0] = 0;
        labels[1] = 1;  // both classes present
        CHECK(std::abs(roc_auc_binary(scores, labels) - auc_pairwise(scores, labels)) <
              1e-12);
    }
}

TEST_CASE("AUC invariances") {
    std::mt19937_64 rng(1);
    std::vector<double> scores(50);
    std::vector<int> labels(50);
    for (std::size_t i = 0; i < 50; ++i) {
        scores[i] = std::uniform_real_distribution<double>(0, 1)(rng);
        labels[i] = i % 3 == 0;
    }
    const double base = roc_auc_binary(scores, labels);

    SUBCASE("rank invariance under strictly increasing transforms") {
        auto t1 = scores, t2 = scores;
        for (auto& v : t1) v = std::exp(3.0 * v);
        for (auto& v : t2) v = std::atan(v) + 5.0;
        CHECK(roc_auc_binary(t1, labels) == doctest::Approx(base).epsilon(1e-12));
        CHECK(roc_auc_binary(t2, labels) == doctest::Approx(base).epsilon(1e-12));
    }
    SUBCASE("complement symmetry") {
        auto flipped = labels;
        for (auto& y : flipped) y = 1 - y;
        CHECK(base + roc_auc_binary(scores, flipped) == doctest::Approx(1.0));
    }
}

TEST_CASE("multiclass AUC") {
    SUBCASE("two classes reduce to binary on column 1") {
        std::vector<double> p1{0.2, 0.9, 0.4, 0.7};
        std::vector<int> labels{0, 1, 0, 1};
        CHECK(roc_auc_multiclass(binary_preds(p1, labels)) ==
              doctest::Approx(roc_auc_binary(p1, labels)));
    }
    SUBCASE("perfect one-hot predictions give 1.0") {
        PredictionSet ps;
        ps.probs = Matrix(6, 3);
        ps.labels = {0, 1, 2, 0, 1, 1};
        for (std::size_t i = 0; i < 6; ++i) ps.probs(i, ps.labels[i]) = 1.0;
        CHECK(roc_auc_multiclass(ps) == doctest::Approx(1.0));
    }
    SUBCASE("uniform probabilities give 0.5") {
        PredictionSet ps;
        ps.probs = Matrix(9, 3, 1.0 / 3.0);
        ps.labels = {0, 1, 2, 0, 1, 2, 0, 1, 2};
        CHECK(roc_auc_multiclass(ps) == doctest::Approx(0.5));
    }
    SUBCASE("absent class skipped, single class errors") {
        PredictionSet ps;
        ps.probs = Matrix(4, 3);
        ps.labels = {0, 1, 0, 1};  // class 2 absent
        ps.probs(0, 0) = 1;
        ps.probs(1, 1) = 1;
        ps.probs(2, 0) = 1;
        ps.probs(3, 1) = 1;
        CHECK(roc_auc_multiclass(ps) == doctest::Approx(1.0));
        ps.labels = {1, 1, 1, 1};
        CHECK_THROWS_AS(roc_auc_multiclass(ps), MetricError);
    }
}

TEST_CASE("error rate") {
    PredictionSet ps = binary_preds({0.9, 0.1, 0.8, 0.3}, {1, 0, 1, 1});
    CHECK(error_rate(ps) == doctest::Approx(0.25));
    ps.labels = {1, 0, 1, 0};
    CHECK(error_rate(ps) == doctest::Approx(0.0));
    ps.labels = {0, 1, 0, 1};
    CHECK(error_rate(ps) == doctest::Approx(1.0));
}

TEST_CASE("ADTM normalization") {
    SUBCASE("trajectory at the maximum is 0 everywhere") {
        auto c = adtm_normalize({{0.9}, 0.4, 0.9}, 4);
        for (double v : c) CHECK(v == doctest::Approx(0.0));
    }
    SUBCASE("[min, max] maps to [1, 0]") {
        auto c = adtm_normalize({{0.4, 0.9}, 0.4, 0.9}, 2);
        CHECK(c[0] == doctest::Approx(1.0));
        CHECK(c[1] == doctest::Approx(0.0));
    }
    SUBCASE("incumbent curve hand example") {
        auto c = adtm_normalize({{0.5, 0.4, 0.9}, 0.4, 0.9}, 3);
        CHECK(c[0] == doctest::Approx(0.8));
        CHECK(c[1] == doctest::Approx(0.8));
        CHECK(c[2] == doctest::Approx(0.0));
    }
    SUBCASE("degenerate min == max contributes 0") {
        auto c = adtm_normalize({{0.7, 0.7}, 0.7, 0.7}, 3);
        for (double v : c) CHECK(v == 0.0);
    }
    SUBCASE("short trajectories extend with final incumbent") {
        auto c = adtm_normalize({{0.5}, 0.0, 1.0}, 3);
        CHECK(c[2] == doctest::Approx(0.5));
    }
}

TEST_CASE("ADTM curves are non-increasing and in [0,1]") {
    std::mt19937_64 rng(2);
    std::vector<AdtmGroup> groups;
    for (int g = 0; g < 6; ++g) {
        AdtmGroup grp;
        for (const char* m : {"a", "b"}) {
            std::vector<double> traj(10);
            for (auto& v : traj) v = std::uniform_real_distribution<double>(0.5, 1.0)(rng);
            grp.by_method[m] = traj;
        }
        groups.push_back(grp);
    }
    auto curves = adtm_curves(groups, 10);
    for (const auto& [m, c] : curves) {
        for (std::size_t t = 0; t < c.size(); ++t) {
            CHECK(c[t] >= 0.0);
            CHECK(c[t] <= 1.0);
            if (t) CHECK(c[t] <= c[t - 1] + 1e-12);
        }
    }
}
