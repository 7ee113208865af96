#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "bench/core.hpp"
#include "bench/tensor.hpp"

namespace bench {

// Flat config representation matching the search-space parameter names.
using ConfigMap = std::map<std::string, double>;

struct ResNeXtConfig {
    int n_layers = 4;
    int layer_size = 544;
    double learning_rate = 3.1622776601683794e-4;  // 10^-3.5
    double weight_decay = 3.1622776601683795e-5;   // 10^-4.5
    double residual_dropout = 0.25;
    double hidden_dropout = 0.25;
    int d_embedding = 288;
    double d_hidden_factor = 2.5;
    int cardinality = 8;

    static ResNeXtConfig from_map(const ConfigMap& m);
    ConfigMap to_map() const;
};

struct ResNetConfig {
    int n_layers = 4;
    int layer_size = 544;
    double learning_rate = 3.1622776601683794e-4;
    double weight_decay = 3.1622776601683795e-5;
    double residual_dropout = 0.25;
    double hidden_dropout = 0.25;
    int d_embedding = 288;
    double d_hidden_factor = 2.5;

    static ResNetConfig from_map(const ConfigMap& m);
    ConfigMap to_map() const;
};

struct FTConfig {
    int n_layers = 3;
    int d_token = 192;
    double residual_dropout = 0.0;
    double attn_dropout = 0.2;
    double ffn_dropout = 0.1;
    double d_ffn_factor = 4.0 / 3.0;
    double learning_rate = 1e-4;
    double weight_decay = 1e-5;
    int n_heads = 8;

    static FTConfig from_map(const ConfigMap& m);
    ConfigMap to_map() const;
};

// What a built model accepts: numeric width plus the per-column number of
// categories seen at preprocessing time (embedding tables get one extra row
// for unknown/missing index 0).
struct SchemaSnapshot {
    std::size_t n_num = 0;
    std::vector<int> cat_cardinalities;

    std::size_t n_features() const { return n_num + cat_cardinalities.size(); }
};

struct Batch {
    Matrix numeric;                             // m × n_num
    std::vector<std::vector<int>> categorical;  // per column, length m
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
};

class Model {
  public:
    virtual ~Model() = default;
    virtual TensorPtr forward(Tape& tape, const Batch& batch, bool train, Rng& rng) = 0;

    const std::string& architecture() const { return architecture_; }
    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }
    const SchemaSnapshot& schema() const { return schema_; }
    int n_classes() const { return n_classes_; }
    const std::vector<std::string>& warnings() const { return warnings_; }

    // weights = parameters of rank >= 2 (matrices, embedding tables);
    // total additionally counts biases and normalization affine parameters.
    std::pair<std::size_t, std::size_t> param_count() const;

    // Full mutable state: parameter values plus batch-norm running stats.
    std::vector<std::vector<double>> save_state() const;
    void load_state(const std::vector<std::vector<double>>& state);

  protected:
    std::string architecture_;
    ParameterSet params_;
    SchemaSnapshot schema_;
    int n_classes_ = 0;
    std::vector<std::string> warnings_;
    std::vector<BatchNormState> bn_states_;

    void check_batch(const Batch& batch) const;
    // Embedding tokens for the categorical columns, one m×d tensor per column.
    std::vector<TensorPtr> embed_columns(Tape& tape, const Batch& batch,
                                         const std::vector<TensorPtr>& tables) const;
};

// Shared implementation of the residual MLP family; cardinality 1 is the
// plain residual net, cardinality C splits the hidden units across C paths.
class ResidualNet : public Model {
  public:
    ResidualNet(const ResNeXtConfig& cfg, const SchemaSnapshot& schema, int n_classes,
                Rng& rng, bool is_resnext);

    TensorPtr forward(Tape& tape, const Batch& batch, bool train, Rng& rng) override;
    // Exposed so the residual-identity property can be probed per block.
    TensorPtr apply_block(Tape& tape, std::size_t block, const TensorPtr& x, bool train,
                          Rng& rng);
    std::size_t n_blocks() const { return static_cast<std::size_t>(cfg_.n_layers); }
    std::size_t hidden_per_path() const { return h_path_; }

  private:
    ResNeXtConfig cfg_;
    std::size_t h_path_ = 0;
    std::vector<TensorPtr> embeddings_;
    TensorPtr stem_w_, stem_b_, head_w_, head_b_;
    struct Block {
        TensorPtr bn_gamma, bn_beta;
        std::vector<TensorPtr> w1, b1, w2;  // one entry per path
        TensorPtr out_bias;
    };
    std::vector<Block> blocks_;
    TensorPtr final_gamma_, final_beta_;
};

class FTTransformer : public Model {
  public:
    FTTransformer(const FTConfig& cfg, const SchemaSnapshot& schema, int n_classes,
                  Rng& rng);

    TensorPtr forward(Tape& tape, const Batch& batch, bool train, Rng& rng) override;
    // Same forward pass, optionally capturing the attention weights of every
    // layer (m·heads·seq rows of seq entries per layer, concatenated).
    TensorPtr forward_with_attention(Tape& tape, const Batch& batch, bool train,
                                     Rng& rng, std::vector<double>* attn);
    std::size_t d_token() const { return d_; }
    std::size_t seq_len() const { return schema_.n_features() + 1; }

  private:
    FTConfig cfg_;
    std::size_t d_ = 0, d_ffn_ = 0;
    std::vector<TensorPtr> num_weight_, num_bias_;  // per numeric feature
    std::vector<TensorPtr> cat_tables_, cat_bias_;  // per categorical feature
    TensorPtr cls_;
    struct Layer {
        TensorPtr ln1_gamma, ln1_beta, wq, bq, wk, bk, wv, bv, wo, bo;
        TensorPtr ln2_gamma, ln2_beta, w1, b1, w2, b2;
    };
    std::vector<Layer> layers_;
    TensorPtr head_gamma_, head_beta_, head_w_, head_b_;
};

std::unique_ptr<Model> build_resnext(const ResNeXtConfig& cfg, const SchemaSnapshot& schema,
                                     int n_classes, Rng& rng);
std::unique_ptr<Model> build_resnet(const ResNetConfig& cfg, const SchemaSnapshot& schema,
                                    int n_classes, Rng& rng);
std::unique_ptr<Model> build_ft_transformer(const FTConfig& cfg, const SchemaSnapshot& schema,
                                            int n_classes, Rng& rng);

// Dispatch on method tag ("resnext" | "resnet" | "ft").
std::unique_ptr<Model> build_model(const std::string& method, const ConfigMap& config,
                                   const SchemaSnapshot& schema, int n_classes, Rng& rng);
ConfigMap default_config(const std::string& method);

}  // namespace bench
