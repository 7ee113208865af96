#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "bench/metrics.hpp"
#include "bench/models.hpp"
#include "bench/train.hpp"

using namespace bench;

namespace {

// Two well-separated Gaussian classes over n_num numeric features.
PreparedRows gaussian_rows(std::size_t n, std::size_t n_num, double sep, Rng& rng) {
    PreparedRows rows;
    rows.numeric = Matrix(n, n_num);
    rows.labels.resize(n);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        const int y = static_cast<int>(i % 2);
        rows.labels[i] = y;
        for (std::size_t j = 0; j < n_num; ++j)
            rows.numeric(i, j) = (y == 0 ? -sep : sep) + noise(rng);
    }
    return rows;
}

std::unique_ptr<Model> small_resnet(const SchemaSnapshot& schema, std::uint64_t seed) {
    ResNetConfig cfg;
    cfg.n_layers = 1;
    cfg.layer_size = 16;
    cfg.d_hidden_factor = 2.0;
    cfg.residual_dropout = 0.0;
    cfg.hidden_dropout = 0.0;
    Rng rng(seed);
    return build_resnet(cfg, schema, 2, rng);
}

}  // namespace

TEST_CASE("adamw first step matches the closed form") {
    ParameterSet params;
    auto theta = params.add("theta", {1}, false);
    theta->values[0] = 0.0;
    theta->ensure_grad();
    theta->grad[0] = 1.0;
    OptimizerState opt;
    adamw_step(params, opt, 0.1, 0.0);
    CHECK(theta->values[0] == doctest::Approx(-0.1 / (1.0 + 1e-8)).epsilon(1e-12));
    CHECK(theta->values[0] == doctest::Approx(-0.1).epsilon(1e-6));
    CHECK(theta->grad[0] == 0.0);  // grads zeroed by the step
    CHECK(opt.step == 1);
}

TEST_CASE("zero gradient leaves parameters unchanged; decay shrinks them") {
    ParameterSet params;
    auto w = params.add("w", {2}, false);
    auto b = params.add("b", {2}, true);  // decay-exempt
    w->values = {1.0, -2.0};
    b->values = {3.0, 4.0};
    w->ensure_grad();
    b->ensure_grad();
    OptimizerState opt;

    adamw_step(params, opt, 0.1, 0.0);
    CHECK(w->values == std::vector<double>{1.0, -2.0});
    CHECK(b->values == std::vector<double>{3.0, 4.0});

    w->ensure_grad();
    b->ensure_grad();
    adamw_step(params, opt, 0.1, 0.5);  // shrink factor 1 - 0.1*0.5 = 0.95
    CHECK(w->values[0] == doctest::Approx(0.95).epsilon(1e-12));
    CHECK(w->values[1] == doctest::Approx(-1.9).epsilon(1e-12));
    CHECK(b->values == std::vector<double>{3.0, 4.0});  // exempt
}

TEST_CASE("unpopulated gradients are rejected") {
    ParameterSet params;
    params.add("w", {3}, false);
    OptimizerState opt;
    CHECK_THROWS_AS(adamw_step(params, opt, 0.1, 0.0), StateError);
}

TEST_CASE("quadratic objective decreases by 10x over 500 steps") {
    ParameterSet params;
    auto theta = params.add("theta", {2}, false);
    theta->values = {5.0, -4.0};
    const double target[2] = {3.0, -1.0};
    auto loss = [&] {
        double l = 0;
        for (int j = 0; j < 2; ++j)
            l += (theta->values[j] - target[j]) * (theta->values[j] - target[j]);
        return l;
    };
    const double initial = loss();
    OptimizerState opt;
    for (int step = 0; step < 500; ++step) {
        theta->ensure_grad();
        for (int j = 0; j < 2; ++j)
            theta->grad[j] = 2.0 * (theta->values[j] - target[j]);
        adamw_step(params, opt, 0.05, 0.0);
    }
    CHECK(loss() < initial / 10.0);
}

TEST_CASE("separable gaussian data trains to high validation auc") {
    Rng data_rng(7);
    SchemaSnapshot schema{4, {}};
    auto train = gaussian_rows(256, 4, 1.5, data_rng);
    auto valid = gaussian_rows(64, 4, 1.5, data_rng);
    auto model = small_resnet(schema, 11);

    TrainConfig cfg;
    cfg.learning_rate = 1e-2;
    cfg.batch_size = 32;
    cfg.max_epochs = 30;
    cfg.patience = 16;
    cfg.seed = 3;
    auto report = train_model(*model, train, valid, cfg);

    CHECK(report.best_val_auc >= 0.95);
    CHECK(report.val_auc_curve.size() >= static_cast<std::size_t>(report.best_epoch));
    // the returned model really holds the best snapshot
    const double replay = roc_auc_multiclass({predict_proba(*model, valid), valid.labels});
    CHECK(replay == report.best_val_auc);
    // best_epoch is the first argmax of the curve
    for (std::size_t e = 0; e < report.val_auc_curve.size(); ++e) {
        CHECK(report.val_auc_curve[e] <= report.best_val_auc);
        if (report.val_auc_curve[e] == report.best_val_auc) {
            CHECK(static_cast<int>(e) + 1 == report.best_epoch);
            break;
        }
    }
}

TEST_CASE("training is bitwise deterministic in the seeds") {
    Rng data_rng(5);
    SchemaSnapshot schema{3, {}};
    auto train = gaussian_rows(96, 3, 1.0, data_rng);
    auto valid = gaussian_rows(32, 3, 1.0, data_rng);

    TrainConfig cfg;
    cfg.learning_rate = 3e-3;
    cfg.batch_size = 16;
    cfg.max_epochs = 8;
    cfg.patience = 8;
    cfg.seed = 42;

    auto a = small_resnet(schema, 9);
    auto b = small_resnet(schema, 9);
    auto ra = train_model(*a, train, valid, cfg);
    auto rb = train_model(*b, train, valid, cfg);
    CHECK(ra.val_auc_curve == rb.val_auc_curve);
    CHECK(ra.best_epoch == rb.best_epoch);
    CHECK(a->save_state() == b->save_state());
}

TEST_CASE("patience stops training right after improvement ceases") {
    Rng data_rng(13);
    SchemaSnapshot schema{3, {}};
    auto train = gaussian_rows(64, 3, 1.0, data_rng);
    auto valid = gaussian_rows(32, 3, 1.0, data_rng);
    // layer-norm-only model with zero dropout: at a vanishing learning rate its
    // eval predictions are constant across epochs, so the curve never improves
    Rng model_rng(2);
    auto model = build_model("ft",
                             {{"d_token", 64},
                              {"n_layers", 1},
                              {"attn_dropout", 0.0},
                              {"ffn_dropout", 0.0},
                              {"residual_dropout", 0.0}},
                             schema, 2, model_rng);

    TrainConfig cfg;
    cfg.learning_rate = 1e-12;
    cfg.batch_size = 32;
    cfg.max_epochs = 50;
    cfg.patience = 1;
    cfg.seed = 0;
    auto report = train_model(*model, train, valid, cfg);
    CHECK(report.best_epoch == 1);
    CHECK(report.val_auc_curve.size() == 2);  // epoch 2 fails to improve, then stop
}

TEST_CASE("train config and split validation") {
    Rng data_rng(1);
    SchemaSnapshot schema{2, {}};
    auto train = gaussian_rows(16, 2, 1.0, data_rng);
    PreparedRows empty;
    empty.numeric = Matrix(0, 2);
    auto model = small_resnet(schema, 1);

    TrainConfig cfg;
    CHECK_THROWS_AS(train_model(*model, train, empty, cfg), ConfigError);
    CHECK_THROWS_AS(train_model(*model, empty, train, cfg), ConfigError);
    TrainConfig bad = cfg;
    bad.patience = bad.max_epochs + 1;
    CHECK_THROWS_AS(train_model(*model, train, train, bad), ConfigError);
    bad = cfg;
    bad.learning_rate = 0.0;
    CHECK_THROWS_AS(train_model(*model, train, train, bad), ConfigError);
    CHECK_THROWS_AS(train_fixed_epochs(*model, train, 0, cfg), ConfigError);
}

TEST_CASE("predict_proba rows are probabilities") {
    Rng data_rng(3);
    SchemaSnapshot schema{3, {2}};
    PreparedRows rows;
    rows.numeric = Matrix(9, 3);
    std::uniform_real_distribution<double> u(-1, 1);
    for (auto& v : rows.numeric.data) v = u(data_rng);
    rows.categorical = {std::vector<int>(9, 1)};
    rows.labels.assign(9, 0);
    Rng model_rng(4);
    auto model = build_model("ft", {{"d_token", 64}, {"n_layers", 1}}, schema, 3, model_rng);

    auto probs = predict_proba(*model, rows);
    REQUIRE(probs.rows == 9);
    REQUIRE(probs.cols == 3);
    for (std::size_t i = 0; i < probs.rows; ++i) {
        double sum = 0;
        for (std::size_t c = 0; c < probs.cols; ++c) {
            CHECK(probs(i, c) >= 0.0);
            sum += probs(i, c);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("softmax conventions") {
    Matrix logits(2, 2);
    logits(0, 0) = 0.0;
    logits(0, 1) = 0.0;
    logits(1, 0) = 2.0;  // raising a logit raises its probability
    logits(1, 1) = 0.0;
    auto p = softmax_rows(logits);
    CHECK(p(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(p(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(p(1, 0) > p(0, 0));
}
