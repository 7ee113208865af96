#include "bench/models.hpp"

#include <algorithm>
#include <cmath>

namespace bench {

namespace {

double map_get(const ConfigMap& m, const std::string& key, double fallback) {
    auto it = m.find(key);
    return it == m.end() ? fallback : it->second;
}

void fill_uniform(const TensorPtr& t, Rng& rng, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& v : t->values) v = u(rng);
}

// Kaiming-uniform for linears feeding a ReLU.
void init_kaiming(const TensorPtr& w, Rng& rng, std::size_t fan_in) {
    fill_uniform(w, rng, std::sqrt(6.0 / static_cast<double>(fan_in)));
}

void init_default(const TensorPtr& w, Rng& rng, std::size_t fan_in) {
    fill_uniform(w, rng, 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

void init_ones(const TensorPtr& t) { std::fill(t->values.begin(), t->values.end(), 1.0); }

TensorPtr linear(Tape& tape, const TensorPtr& x, const TensorPtr& w, const TensorPtr& b) {
    auto y = ops::matmul(tape, x, w);
    return b ? ops::add_broadcast(tape, y, b) : y;
}

}  // namespace

ResNeXtConfig ResNeXtConfig::from_map(const ConfigMap& m) {
    ResNeXtConfig c;
    c.n_layers = static_cast<int>(std::lround(map_get(m, "n_layers", c.n_layers)));
    c.layer_size = static_cast<int>(std::lround(map_get(m, "layer_size", c.layer_size)));
    c.learning_rate = map_get(m, "learning_rate", c.learning_rate);
    c.weight_decay = map_get(m, "weight_decay", c.weight_decay);
    c.residual_dropout = map_get(m, "residual_dropout", c.residual_dropout);
    c.hidden_dropout = map_get(m, "hidden_dropout", c.hidden_dropout);
    c.d_embedding = static_cast<int>(std::lround(map_get(m, "d_embedding", c.d_embedding)));
    c.d_hidden_factor = map_get(m, "d_hidden_factor", c.d_hidden_factor);
    c.cardinality = static_cast<int>(std::lround(map_get(m, "cardinality", c.cardinality)));
    return c;
}

ConfigMap ResNeXtConfig::to_map() const {
    return {{"n_layers", static_cast<double>(n_layers)},
            {"layer_size", static_cast<double>(layer_size)},
            {"learning_rate", learning_rate},
            {"weight_decay", weight_decay},
            {"residual_dropout", residual_dropout},
            {"hidden_dropout", hidden_dropout},
            {"d_embedding", static_cast<double>(d_embedding)},
            {"d_hidden_factor", d_hidden_factor},
            {"cardinality", static_cast<double>(cardinality)}};
}

ResNetConfig ResNetConfig::from_map(const ConfigMap& m) {
    ResNetConfig c;
    ResNeXtConfig base;
    base.cardinality = 1;
    auto x = ResNeXtConfig::from_map(m);
    c.n_layers = x.n_layers;
    c.layer_size = x.layer_size;
    c.learning_rate = x.learning_rate;
    c.weight_decay = x.weight_decay;
    c.residual_dropout = x.residual_dropout;
    c.hidden_dropout = x.hidden_dropout;
    c.d_embedding = x.d_embedding;
    c.d_hidden_factor = x.d_hidden_factor;
    return c;
}

ConfigMap ResNetConfig::to_map() const {
    return {{"n_layers", static_cast<double>(n_layers)},
            {"layer_size", static_cast<double>(layer_size)},
            {"learning_rate", learning_rate},
            {"weight_decay", weight_decay},
            {"residual_dropout", residual_dropout},
            {"hidden_dropout", hidden_dropout},
            {"d_embedding", static_cast<double>(d_embedding)},
            {"d_hidden_factor", d_hidden_factor}};
}

FTConfig FTConfig::from_map(const ConfigMap& m) {
    FTConfig c;
    c.n_layers = static_cast<int>(std::lround(map_get(m, "n_layers", c.n_layers)));
    c.d_token = static_cast<int>(std::lround(map_get(m, "d_token", c.d_token)));
    c.residual_dropout = map_get(m, "residual_dropout", c.residual_dropout);
    c.attn_dropout = map_get(m, "attn_dropout", c.attn_dropout);
    c.ffn_dropout = map_get(m, "ffn_dropout", c.ffn_dropout);
    c.d_ffn_factor = map_get(m, "d_ffn_factor", c.d_ffn_factor);
    c.learning_rate = map_get(m, "learning_rate", c.learning_rate);
    c.weight_decay = map_get(m, "weight_decay", c.weight_decay);
    return c;
}

ConfigMap FTConfig::to_map() const {
    return {{"n_layers", static_cast<double>(n_layers)},
            {"d_token", static_cast<double>(d_token)},
            {"residual_dropout", residual_dropout},
            {"attn_dropout", attn_dropout},
            {"ffn_dropout", ffn_dropout},
            {"d_ffn_factor", d_ffn_factor},
            {"learning_rate", learning_rate},
            {"weight_decay", weight_decay}};
}

std::pair<std::size_t, std::size_t> Model::param_count() const {
    std::size_t weights = 0, total = 0;
    for (const auto& p : params_.all()) {
        total += p.tensor->size();
        if (p.tensor->shape.size() >= 2) weights += p.tensor->size();
    }
    return {weights, total};
}

std::vector<std::vector<double>> Model::save_state() const {
    std::vector<std::vector<double>> out;
    for (const auto& p : params_.all()) out.push_back(p.tensor->values);
    for (const auto& bn : bn_states_) {
        out.push_back(bn.running_mean);
        out.push_back(bn.running_var);
    }
    return out;
}

void Model::load_state(const std::vector<std::vector<double>>& state) {
    if (state.size() != params_.all().size() + 2 * bn_states_.size())
        throw StateError("load_state: entry count mismatch");
    std::size_t i = 0;
    for (const auto& p : params_.all()) {
        if (state[i].size() != p.tensor->size())
            throw StateError("load_state: size mismatch at " + p.name);
        p.tensor->values = state[i++];
    }
    for (auto& bn : bn_states_) {
        bn.running_mean = state[i++];
        bn.running_var = state[i++];
    }
}

void Model::check_batch(const Batch& batch) const {
    if (batch.numeric.cols != schema_.n_num)
        throw ShapeError("batch numeric width does not match model schema");
    if (batch.categorical.size() != schema_.cat_cardinalities.size())
        throw ShapeError("batch categorical column count does not match model schema");
    if (batch.numeric.rows != batch.size())
        throw ShapeError("batch row count mismatch");
    for (std::size_t c = 0; c < batch.categorical.size(); ++c) {
        if (batch.categorical[c].size() != batch.size())
            throw ShapeError("batch categorical column length mismatch");
        for (int v : batch.categorical[c])
            if (v < 0 || v > schema_.cat_cardinalities[c])
                throw ShapeError("categorical index out of range for model schema");
    }
}

std::vector<TensorPtr> Model::embed_columns(Tape& tape, const Batch& batch,
                                            const std::vector<TensorPtr>& tables) const {
    std::vector<TensorPtr> out;
    for (std::size_t c = 0; c < tables.size(); ++c)
        out.push_back(ops::embedding_lookup(tape, tables[c], batch.categorical[c]));
    return out;
}

// ---------------------------------------------------------------------------
// Residual MLP family
// ---------------------------------------------------------------------------

ResidualNet::ResidualNet(const ResNeXtConfig& cfg, const SchemaSnapshot& schema,
                         int n_classes, Rng& rng, bool is_resnext)
    : cfg_(cfg) {
    architecture_ = is_resnext ? "resnext" : "resnet";
    schema_ = schema;
    n_classes_ = n_classes;
    if (schema.n_features() == 0) throw ConfigError("model schema has no features");
    if (cfg.cardinality < 1) throw ConfigError("cardinality must be positive");

    const std::size_t d = static_cast<std::size_t>(cfg.layer_size);
    const std::size_t c_paths = static_cast<std::size_t>(cfg.cardinality);
    std::size_t h = static_cast<std::size_t>(
        std::floor(static_cast<double>(d) * cfg.d_hidden_factor /
                   static_cast<double>(c_paths)));
    if (h == 0) {
        h = 1;
        warnings_.push_back("hidden width per path clamped to 1");
    }
    h_path_ = h;

    for (std::size_t c = 0; c < schema.cat_cardinalities.size(); ++c) {
        auto table = params_.add("embed." + std::to_string(c),
                                 {static_cast<std::size_t>(schema.cat_cardinalities[c]) + 1,
                                  static_cast<std::size_t>(cfg.d_embedding)},
                                 true);
        init_default(table, rng, static_cast<std::size_t>(cfg.d_embedding));
        embeddings_.push_back(table);
    }
    const std::size_t in_width =
        schema.n_num + schema.cat_cardinalities.size() *
                           static_cast<std::size_t>(cfg.d_embedding);
    stem_w_ = params_.add("stem.w", {in_width, d}, false);
    init_default(stem_w_, rng, in_width);
    stem_b_ = params_.add("stem.b", {d}, true);

    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string prefix = "block" + std::to_string(l) + ".";
        Block blk;
        blk.bn_gamma = params_.add(prefix + "bn.gamma", {d}, true);
        init_ones(blk.bn_gamma);
        blk.bn_beta = params_.add(prefix + "bn.beta", {d}, true);
        for (std::size_t p = 0; p < c_paths; ++p) {
            const std::string pp = prefix + "path" + std::to_string(p) + ".";
            auto w1 = params_.add(pp + "w1", {d, h}, false);
            init_kaiming(w1, rng, d);
            auto b1 = params_.add(pp + "b1", {h}, true);
            auto w2 = params_.add(pp + "w2", {h, d}, false);
            init_default(w2, rng, h);
            blk.w1.push_back(w1);
            blk.b1.push_back(b1);
            blk.w2.push_back(w2);
        }
        blk.out_bias = params_.add(prefix + "out_bias", {d}, true);
        blocks_.push_back(std::move(blk));
        bn_states_.emplace_back(d);
    }
    final_gamma_ = params_.add("final_bn.gamma", {d}, true);
    init_ones(final_gamma_);
    final_beta_ = params_.add("final_bn.beta", {d}, true);
    head_w_ = params_.add("head.w", {d, static_cast<std::size_t>(n_classes)}, false);
    init_default(head_w_, rng, d);
    head_b_ = params_.add("head.b", {static_cast<std::size_t>(n_classes)}, true);
    bn_states_.emplace_back(d);  // final norm state, last entry
}

TensorPtr ResidualNet::apply_block(Tape& tape, std::size_t block, const TensorPtr& x,
                                   bool train, Rng& rng) {
    auto& blk = blocks_[block];
    auto normed = ops::batch_norm(tape, x, blk.bn_gamma, blk.bn_beta, bn_states_[block],
                                  train);
    TensorPtr branch;
    for (std::size_t p = 0; p < blk.w1.size(); ++p) {
        auto hidden = ops::relu(tape, linear(tape, normed, blk.w1[p], blk.b1[p]));
        hidden = ops::dropout(tape, hidden, cfg_.hidden_dropout, train, rng);
        auto path_out = ops::matmul(tape, hidden, blk.w2[p]);  // bias-free
        branch = branch ? ops::add(tape, branch, path_out) : path_out;
    }
    branch = ops::add_broadcast(tape, branch, blk.out_bias);
    branch = ops::dropout(tape, branch, cfg_.residual_dropout, train, rng);
    return ops::add(tape, x, branch);
}

TensorPtr ResidualNet::forward(Tape& tape, const Batch& batch, bool train, Rng& rng) {
    check_batch(batch);
    const std::size_t m = batch.size();
    std::vector<TensorPtr> parts;
    if (schema_.n_num > 0) {
        auto num = make_tensor({m, schema_.n_num});
        num->values = batch.numeric.data;
        parts.push_back(num);
    }
    for (auto& e : embed_columns(tape, batch, embeddings_)) parts.push_back(e);
    auto x = parts.size() == 1 ? parts[0] : ops::concat_cols(tape, parts);
    x = linear(tape, x, stem_w_, stem_b_);
    for (std::size_t l = 0; l < blocks_.size(); ++l)
        x = apply_block(tape, l, x, train, rng);
    x = ops::batch_norm(tape, x, final_gamma_, final_beta_, bn_states_.back(), train);
    return linear(tape, x, head_w_, head_b_);
}

// ---------------------------------------------------------------------------
// FT-Transformer
// ---------------------------------------------------------------------------

FTTransformer::FTTransformer(const FTConfig& cfg, const SchemaSnapshot& schema,
                             int n_classes, Rng& rng)
    : cfg_(cfg) {
    architecture_ = "ft";
    schema_ = schema;
    n_classes_ = n_classes;
    if (schema.n_features() == 0) throw ConfigError("model schema has no features");
    if (cfg.d_token < cfg.n_heads)
        throw ConfigError("d_token must be at least n_heads");

    // round down to a multiple of n_heads
    d_ = static_cast<std::size_t>(cfg.d_token - cfg.d_token % cfg.n_heads);
    d_ffn_ = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::floor(static_cast<double>(d_) * cfg.d_ffn_factor)));

    for (std::size_t j = 0; j < schema.n_num; ++j) {
        auto w = params_.add("tok.num" + std::to_string(j) + ".w", {1, d_}, true);
        init_default(w, rng, d_);
        num_weight_.push_back(w);
        num_bias_.push_back(params_.add("tok.num" + std::to_string(j) + ".b", {d_}, true));
    }
    for (std::size_t c = 0; c < schema.cat_cardinalities.size(); ++c) {
        auto table = params_.add("tok.cat" + std::to_string(c) + ".table",
                                 {static_cast<std::size_t>(schema.cat_cardinalities[c]) + 1,
                                  d_},
                                 true);
        init_default(table, rng, d_);
        cat_tables_.push_back(table);
        cat_bias_.push_back(params_.add("tok.cat" + std::to_string(c) + ".b", {d_}, true));
    }
    cls_ = params_.add("cls", {1, d_}, true);
    init_default(cls_, rng, d_);

    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string prefix = "layer" + std::to_string(l) + ".";
        Layer layer;
        auto norm = [&](const char* tag, TensorPtr& gamma, TensorPtr& beta) {
            gamma = params_.add(prefix + tag + std::string(".gamma"), {d_}, true);
            init_ones(gamma);
            beta = params_.add(prefix + tag + std::string(".beta"), {d_}, true);
        };
        norm("ln1", layer.ln1_gamma, layer.ln1_beta);
        auto proj = [&](const char* tag, TensorPtr& w, TensorPtr& b) {
            w = params_.add(prefix + tag + std::string(".w"), {d_, d_}, false);
            init_default(w, rng, d_);
            b = params_.add(prefix + tag + std::string(".b"), {d_}, true);
        };
        proj("q", layer.wq, layer.bq);
        proj("k", layer.wk, layer.bk);
        proj("v", layer.wv, layer.bv);
        proj("out", layer.wo, layer.bo);
        norm("ln2", layer.ln2_gamma, layer.ln2_beta);
        layer.w1 = params_.add(prefix + "ffn.w1", {d_, 2 * d_ffn_}, false);
        init_kaiming(layer.w1, rng, d_);
        layer.b1 = params_.add(prefix + "ffn.b1", {2 * d_ffn_}, true);
        layer.w2 = params_.add(prefix + "ffn.w2", {d_ffn_, d_}, false);
        init_default(layer.w2, rng, d_ffn_);
        layer.b2 = params_.add(prefix + "ffn.b2", {d_}, true);
        layers_.push_back(std::move(layer));
    }
    head_gamma_ = params_.add("head.ln.gamma", {d_}, true);
    init_ones(head_gamma_);
    head_beta_ = params_.add("head.ln.beta", {d_}, true);
    head_w_ = params_.add("head.w", {d_, static_cast<std::size_t>(n_classes)}, false);
    init_default(head_w_, rng, d_);
    head_b_ = params_.add("head.b", {static_cast<std::size_t>(n_classes)}, true);
}

TensorPtr FTTransformer::forward(Tape& tape, const Batch& batch, bool train, Rng& rng) {
    return forward_with_attention(tape, batch, train, rng, nullptr);
}

TensorPtr FTTransformer::forward_with_attention(Tape& tape, const Batch& batch, bool train,
                                                Rng& rng, std::vector<double>* attn) {
    check_batch(batch);
    const std::size_t m = batch.size();
    const std::size_t s = seq_len();
    const std::size_t heads = static_cast<std::size_t>(cfg_.n_heads);

    std::vector<TensorPtr> tokens;
    tokens.push_back(ops::repeat_rows(tape, cls_, m));  // CLS at offset 0
    for (std::size_t j = 0; j < schema_.n_num; ++j) {
        auto col = make_tensor({m, 1});
        for (std::size_t i = 0; i < m; ++i) col->values[i] = batch.numeric(i, j);
        tokens.push_back(ops::add_broadcast(
            tape, ops::matmul(tape, col, num_weight_[j]), num_bias_[j]));
    }
    auto embeds = embed_columns(tape, batch, cat_tables_);
    for (std::size_t c = 0; c < embeds.size(); ++c)
        tokens.push_back(ops::add_broadcast(tape, embeds[c], cat_bias_[c]));
    auto x = ops::interleave_rows(tape, tokens);

    for (auto& layer : layers_) {
        auto a = ops::layer_norm(tape, x, layer.ln1_gamma, layer.ln1_beta);
        auto q = linear(tape, a, layer.wq, layer.bq);
        auto k = linear(tape, a, layer.wk, layer.bk);
        auto v = linear(tape, a, layer.wv, layer.bv);
        auto att = ops::multihead_attention(tape, q, k, v, m, s, heads,
                                            cfg_.attn_dropout, train, rng, attn);
        auto o = linear(tape, att, layer.wo, layer.bo);
        o = ops::dropout(tape, o, cfg_.residual_dropout, train, rng);
        x = ops::add(tape, x, o);

        auto b = ops::layer_norm(tape, x, layer.ln2_gamma, layer.ln2_beta);
        auto h = linear(tape, b, layer.w1, layer.b1);
        auto value = ops::slice_cols(tape, h, 0, d_ffn_);
        auto gate = ops::relu(tape, ops::slice_cols(tape, h, d_ffn_, d_ffn_));
        auto r = ops::mul(tape, value, gate);  // ReGLU
        r = ops::dropout(tape, r, cfg_.ffn_dropout, train, rng);
        r = linear(tape, r, layer.w2, layer.b2);
        r = ops::dropout(tape, r, cfg_.residual_dropout, train, rng);
        x = ops::add(tape, x, r);
    }

    auto cls_out = ops::take_stride_rows(tape, x, s, 0);
    cls_out = ops::layer_norm(tape, cls_out, head_gamma_, head_beta_);
    cls_out = ops::relu(tape, cls_out);
    return linear(tape, cls_out, head_w_, head_b_);
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

std::unique_ptr<Model> build_resnext(const ResNeXtConfig& cfg, const SchemaSnapshot& schema,
                                     int n_classes, Rng& rng) {
    return std::make_unique<ResidualNet>(cfg, schema, n_classes, rng, true);
}

std::unique_ptr<Model> build_resnet(const ResNetConfig& cfg, const SchemaSnapshot& schema,
                                    int n_classes, Rng& rng) {
    ResNeXtConfig x;
    x.n_layers = cfg.n_layers;
    x.layer_size = cfg.layer_size;
    x.learning_rate = cfg.learning_rate;
    x.weight_decay = cfg.weight_decay;
    x.residual_dropout = cfg.residual_dropout;
    x.hidden_dropout = cfg.hidden_dropout;
    x.d_embedding = cfg.d_embedding;
    x.d_hidden_factor = cfg.d_hidden_factor;
    x.cardinality = 1;
    return std::make_unique<ResidualNet>(x, schema, n_classes, rng, false);
}

std::unique_ptr<Model> build_ft_transformer(const FTConfig& cfg, const SchemaSnapshot& schema,
                                            int n_classes, Rng& rng) {
    return std::make_unique<FTTransformer>(cfg, schema, n_classes, rng);
}

std::unique_ptr<Model> build_model(const std::string& method, const ConfigMap& config,
                                   const SchemaSnapshot& schema, int n_classes, Rng& rng) {
    if (method == "resnext")
        return build_resnext(ResNeXtConfig::from_map(config), schema, n_classes, rng);
    if (method == "resnet")
        return build_resnet(ResNetConfig::from_map(config), schema, n_classes, rng);
    if (method == "ft")
        return build_ft_transformer(FTConfig::from_map(config), schema, n_classes, rng);
    throw ConfigError("unknown method tag: " + method);
}

ConfigMap default_config(const std::string& method) {
    if (method == "resnext") return ResNeXtConfig{}.to_map();
    if (method == "resnet") return ResNetConfig{}.to_map();
    if (method == "ft") return FTConfig{}.to_map();
    throw ConfigError("unknown method tag: " + method);
}

}  // namespace bench
