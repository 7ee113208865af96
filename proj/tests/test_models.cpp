#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "bench/models.hpp"
#include "bench/tensor.hpp"

using namespace bench;

namespace {

Batch random_batch(const SchemaSnapshot& schema, std::size_t m, int n_classes, Rng& rng) {
    Batch b;
    b.numeric = Matrix(m, schema.n_num);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (auto& v : b.numeric.data) v = u(rng);
    for (int card : schema.cat_cardinalities) {
        std::vector<int> col(m);
        for (auto& v : col) v = std::uniform_int_distribution<int>(0, card)(rng);
        b.categorical.push_back(std::move(col));
    }
    b.labels.resize(m);
    for (auto& y : b.labels)
        y = std::uniform_int_distribution<int>(0, n_classes - 1)(rng);
    return b;
}

void zero_second_linears(Model& model) {
    for (const auto& p : model.params().all())
        if (p.name.find(".w2") != std::string::npos ||
            p.name.find("out_bias") != std::string::npos)
            std::fill(p.tensor->values.begin(), p.tensor->values.end(), 0.0);
}

std::size_t count_matching(const Model& model, const std::string& needle) {
    std::size_t n = 0;
    for (const auto& p : model.params().all())
        if (p.name.find(needle) != std::string::npos) n += p.tensor->size();
    return n;
}

}  // namespace

TEST_CASE("concat width bookkeeping") {
    Rng rng(0);
    SchemaSnapshot schema{3, {4, 7}};
    ResNeXtConfig cfg;
    cfg.d_embedding = 16;
    cfg.layer_size = 64;
    cfg.n_layers = 1;
    auto model = build_resnext(cfg, schema, 2, rng);
    auto stem = model->params().find("stem.w");
    REQUIRE(stem);
    CHECK(stem->shape == Shape{3 + 2 * 16, 64});  // width 35
}

TEST_CASE("resnext path weight count at d=64, factor 2, C=4") {
    Rng rng(1);
    SchemaSnapshot schema{4, {}};
    ResNeXtConfig cfg;
    cfg.layer_size = 64;
    cfg.d_hidden_factor = 2.0;
    cfg.cardinality = 4;
    cfg.n_layers = 1;
    auto model = build_resnext(cfg, schema, 2, rng);
    CHECK(count_matching(*model, ".w1") == 4 * 64 * 32);
    CHECK(count_matching(*model, ".w2") == 4 * 32 * 64);
    CHECK(count_matching(*model, ".w1") + count_matching(*model, ".w2") == 16384);
}

TEST_CASE("resnext and resnet parameter parity when cardinality divides h") {
    Rng rng(2);
    SchemaSnapshot schema{5, {3}};
    for (int c : {2, 4, 8}) {
        ResNeXtConfig xcfg;
        xcfg.layer_size = 128;
        xcfg.d_hidden_factor = 2.0;  // h = 256, divisible by all three
        xcfg.cardinality = c;
        xcfg.n_layers = 3;
        ResNetConfig rcfg;
        rcfg.layer_size = xcfg.layer_size;
        rcfg.d_hidden_factor = xcfg.d_hidden_factor;
        rcfg.n_layers = xcfg.n_layers;
        auto a = build_resnext(xcfg, schema, 2, rng);
        auto b = build_resnet(rcfg, schema, 2, rng);
        auto [aw, at] = a->param_count();
        auto [bw, bt] = b->param_count();
        CHECK(aw == bw);
        CHECK(std::abs(static_cast<double>(at) - static_cast<double>(bt)) <
              0.01 * static_cast<double>(bt));
    }
}

TEST_CASE("resnet equals resnext with cardinality 1 in parameter shapes") {
    Rng rng1(3), rng2(3);
    SchemaSnapshot schema{2, {4}};
    ResNeXtConfig xcfg;
    xcfg.cardinality = 1;
    xcfg.layer_size = 96;
    xcfg.n_layers = 2;
    ResNetConfig rcfg;
    rcfg.layer_size = 96;
    rcfg.n_layers = 2;
    auto a = build_resnext(xcfg, schema, 3, rng1);
    auto b = build_resnet(rcfg, schema, 3, rng2);
    REQUIRE(a->params().all().size() == b->params().all().size());
    for (std::size_t i = 0; i < a->params().all().size(); ++i)
        CHECK(a->params().all()[i].tensor->shape == b->params().all()[i].tensor->shape);
}

TEST_CASE("residual identity when second linears are zeroed") {
    Rng rng(4);
    SchemaSnapshot schema{4, {}};
    for (bool resnext : {true, false}) {
        ResNeXtConfig cfg;
        cfg.layer_size = 32;
        cfg.n_layers = 3;
        cfg.cardinality = resnext ? 4 : 1;
        cfg.residual_dropout = 0.0;
        cfg.hidden_dropout = 0.0;
        ResidualNet model(cfg, schema, 2, rng, resnext);
        zero_second_linears(model);

        Tape tape;
        Rng fwd(0);
        auto x = make_tensor({6, 32});
        std::uniform_real_distribution<double> u(-2.0, 2.0);
        for (auto& v : x->values) v = u(fwd);
        // eval mode so the only state is the running stats
        for (std::size_t blk = 0; blk < model.n_blocks(); ++blk) {
            auto y = model.apply_block(tape, blk, x, false, fwd);
            CHECK(y->values == x->values);  // bitwise
        }
    }
}

TEST_CASE("hidden path width clamps to 1 with a warning") {
    Rng rng(5);
    SchemaSnapshot schema{2, {}};
    ResNeXtConfig cfg;
    cfg.layer_size = 64;
    cfg.d_hidden_factor = 1.0;
    cfg.cardinality = 16;  // floor(64/16) = 4, fine
    auto ok = build_resnext(cfg, schema, 2, rng);
    CHECK(ok->warnings().empty());

    cfg.layer_size = 8;
    cfg.cardinality = 16;  // floor(8/16) = 0 -> clamp
    auto clamped = build_resnext(cfg, schema, 2, rng);
    CHECK(clamped->warnings().size() == 1);
    CHECK(dynamic_cast<ResidualNet&>(*clamped).hidden_per_path() == 1);
}

TEST_CASE("eval forward determinism and single-row eval batches") {
    Rng rng(6);
    SchemaSnapshot schema{3, {4}};
    for (const char* method : {"resnext", "resnet", "ft"}) {
        ConfigMap cfg = default_config(method);
        cfg["n_layers"] = 2;
        if (cfg.count("layer_size")) cfg["layer_size"] = 48;
        if (cfg.count("d_token")) cfg["d_token"] = 64;
        auto model = build_model(method, cfg, schema, 2, rng);
        auto batch = random_batch(schema, 5, 2, rng);

        // one train pass to move the running stats off their init values
        {
            Tape tape;
            Rng r(1);
            model->forward(tape, batch, true, r);
        }
        Tape t1, t2;
        Rng r1(9), r2(10);
        auto a = model->forward(t1, batch, false, r1);
        auto b = model->forward(t2, batch, false, r2);
        CHECK(a->values == b->values);  // bitwise

        Batch single;
        single.numeric = Matrix(1, 3);
        single.categorical = {{1}};
        single.labels = {0};
        Tape t3;
        Rng r3(0);
        auto out = model->forward(t3, single, false, r3);
        CHECK(out->shape == Shape{1, 2});
    }
}

TEST_CASE("schema mismatch raises shape error") {
    Rng rng(7);
    SchemaSnapshot schema{2, {3}};
    auto model = build_model("resnet", default_config("resnet"), schema, 2, rng);
    Batch bad;
    bad.numeric = Matrix(4, 3);  // wrong numeric width
    bad.categorical = {{0, 0, 0, 0}};
    bad.labels = {0, 0, 0, 0};
    Tape tape;
    Rng r(0);
    CHECK_THROWS_AS(model->forward(tape, bad, false, r), ShapeError);
}

TEST_CASE("param_count examples") {
    Rng rng(8);
    SchemaSnapshot schema{64, {}};
    ResNeXtConfig cfg;
    cfg.layer_size = 64;
    cfg.n_layers = 0;  // stem + final norm + head only
    auto model = build_resnext(cfg, schema, 2, rng);
    auto [weights, total] = model->param_count();
    // stem 64x64 + head 64x2 weights; biases 64 + 2; final norm affine 128
    CHECK(weights == 64 * 64 + 128);
    CHECK(total == weights + 64 + 2 + 128);

    SchemaSnapshot cat_schema{0, {10}};
    cfg.d_embedding = 64;
    auto embed_model = build_resnext(cfg, cat_schema, 2, rng);
    auto table = embed_model->params().find("embed.0");
    REQUIRE(table);
    CHECK(table->size() == 11 * 64);  // 704 embedding parameters per 64-wide row block
    CHECK(table->shape == Shape{11, 64});
}

TEST_CASE("ft transformer structure") {
    Rng rng(9);
    SchemaSnapshot schema{1, {}};
    FTConfig cfg;
    cfg.d_token = 64;
    cfg.n_layers = 1;
    FTTransformer model(cfg, schema, 2, rng);
    CHECK(model.seq_len() == 2);  // one feature + CLS

    auto batch = random_batch(schema, 3, 2, rng);
    Tape tape;
    Rng r(0);
    std::vector<double> attn;
    auto logits = model.forward_with_attention(tape, batch, false, r, &attn);
    CHECK(logits->shape == Shape{3, 2});
    // every attention row sums to 1
    const std::size_t s = model.seq_len();
    REQUIRE(attn.size() % s == 0);
    for (std::size_t row = 0; row < attn.size() / s; ++row) {
        double sum = 0;
        for (std::size_t c = 0; c < s; ++c) sum += attn[row * s + c];
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }

    CHECK_THROWS_AS(
        [&] {
            FTConfig bad;
            bad.d_token = 4;  // below n_heads = 8
            Rng rr(0);
            FTTransformer m(bad, schema, 2, rr);
        }(),
        ConfigError);
}

TEST_CASE("ft transformer is equivariant to feature permutation with permuted tokenizer") {
    Rng rng(10);
    SchemaSnapshot schema{2, {}};
    FTConfig cfg;
    cfg.d_token = 64;
    cfg.n_layers = 2;
    FTTransformer model(cfg, schema, 2, rng);

    auto batch = random_batch(schema, 4, 2, rng);
    Tape t1;
    Rng r1(0);
    auto base = model.forward(t1, batch, false, r1);

    // swap the two numeric features' tokenizer parameters and input columns
    auto state = model.save_state();
    const auto& params = model.params().all();
    std::map<std::string, std::size_t> idx;
    for (std::size_t i = 0; i < params.size(); ++i) idx[params[i].name] = i;
    std::swap(state[idx["tok.num0.w"]], state[idx["tok.num1.w"]]);
    std::swap(state[idx["tok.num0.b"]], state[idx["tok.num1.b"]]);
    model.load_state(state);

    Batch swapped = batch;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        swapped.numeric(i, 0) = batch.numeric(i, 1);
        swapped.numeric(i, 1) = batch.numeric(i, 0);
    }
    Tape t2;
    Rng r2(0);
    auto permuted = model.forward(t2, swapped, false, r2);
    for (std::size_t i = 0; i < base->size(); ++i)
        CHECK(permuted->values[i] == doctest::Approx(base->values[i]).epsilon(1e-9));
}

TEST_CASE("gradient reaches every parameter at default configs") {
    Rng rng(11);
    SchemaSnapshot schema{3, {4}};
    for (const char* method : {"resnext", "resnet", "ft"}) {
        auto model = build_model(method, default_config(method), schema, 3, rng);
        auto batch = random_batch(schema, 8, 3, rng);
        // every category appears so all embedding rows take gradient
        for (std::size_t i = 0; i < 5; ++i) batch.categorical[0][i] = static_cast<int>(i);
        Tape tape;
        Rng r(1);
        auto logits = model->forward(tape, batch, true, r);
        auto loss = ops::softmax_cross_entropy(tape, logits, batch.labels);
        tape.backward(loss);
        for (const auto& p : model->params().all()) {
            double norm = 0;
            p.tensor->ensure_grad();
            for (double g : p.tensor->grad) norm += std::abs(g);
            INFO(method << " parameter " << p.name);
            CHECK(norm > 0.0);
        }
    }
}

TEST_CASE("train forward with zero dropout matches eval up to normalization stats") {
    Rng rng(12);
    SchemaSnapshot schema{4, {}};
    FTConfig cfg;  // layer-norm only: no running stats, so exact match
    cfg.d_token = 64;
    cfg.n_layers = 1;
    cfg.attn_dropout = 0.0;
    cfg.ffn_dropout = 0.0;
    cfg.residual_dropout = 0.0;
    FTTransformer model(cfg, schema, 2, rng);
    auto batch = random_batch(schema, 5, 2, rng);
    Tape t1, t2;
    Rng r1(0), r2(0);
    auto train_out = model.forward(t1, batch, true, r1);
    auto eval_out = model.forward(t2, batch, false, r2);
    CHECK(train_out->values == eval_out->values);
}
