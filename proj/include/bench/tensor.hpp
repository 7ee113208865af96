#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "bench/core.hpp"

namespace bench {

// Reverse-mode autodiff over dense 64-bit tensors. Forward ops record a
// backward closure on the Tape whenever an input requires grad; Tape::backward
// replays the closures in reverse order, accumulating gradients additively.

using Shape = std::vector<std::size_t>;

struct Tensor {
    Shape shape;
    std::vector<double> values;
    bool requires_grad = false;
    std::vector<double> grad;  // empty until first accumulation

    std::size_t size() const { return values.size(); }
    std::size_t rows() const { return shape.empty() ? 1 : shape[0]; }
    std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    }
    void zero_grad() {
        if (!grad.empty()) grad.assign(grad.size(), 0.0);
    }
};

using TensorPtr = std::shared_ptr<Tensor>;

TensorPtr make_tensor(Shape shape, bool requires_grad = false);
TensorPtr make_tensor(Shape shape, std::vector<double> values, bool requires_grad = false);
TensorPtr scalar_tensor(double v, bool requires_grad = false);

class Tape {
  public:
    void record(TensorPtr out, std::function<void()> backward_rule) {
        nodes_.push_back({std::move(out), std::move(backward_rule)});
    }
    // Zeroes the grads of all op outputs on the tape, seeds loss->grad with 1,
    // and sweeps in reverse. Leaf (parameter) gradients accumulate across
    // calls; callers zero them between steps.
    void backward(const TensorPtr& loss);
    void clear() { nodes_.clear(); }
    std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        TensorPtr out;
        std::function<void()> backward;
    };
    std::vector<Node> nodes_;
};

struct Param {
    std::string name;
    TensorPtr tensor;
    bool decay_exempt = false;
};

class ParameterSet {
  public:
    TensorPtr add(const std::string& name, Shape shape, bool decay_exempt);
    void add_existing(const std::string& name, TensorPtr t, bool decay_exempt);
    const std::vector<Param>& all() const { return params_; }
    TensorPtr find(const std::string& name) const;
    void zero_grad();
    std::size_t size() const { return params_.size(); }

  private:
    std::vector<Param> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Running statistics owned by the model, updated by batch_norm in train mode.
struct BatchNormState {
    std::vector<double> running_mean;
    std::vector<double> running_var;

    explicit BatchNormState(std::size_t d = 0)
        : running_mean(d, 0.0), running_var(d, 1.0) {}
};

namespace ops {

TensorPtr matmul(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b);
// b is a length-n (or 1×n) bias added to every row of a (m×n).
TensorPtr add_broadcast(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(Tape& tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr scale(Tape& tape, const TensorPtr& a, double c);
TensorPtr relu(Tape& tape, const TensorPtr& x);
TensorPtr concat_cols(Tape& tape, const std::vector<TensorPtr>& parts);
TensorPtr slice_cols(Tape& tape, const TensorPtr& x, std::size_t start, std::size_t len);
// axis 0: column means (1×n); axis 1: row means (m×1).
TensorPtr reduce_mean(Tape& tape, const TensorPtr& x, int axis);
TensorPtr embedding_lookup(Tape& tape, const TensorPtr& table, const std::vector<int>& idx);
TensorPtr batch_norm(Tape& tape, const TensorPtr& x, const TensorPtr& gamma,
                     const TensorPtr& beta, BatchNormState& state, bool train);
TensorPtr layer_norm(Tape& tape, const TensorPtr& x, const TensorPtr& gamma,
                     const TensorPtr& beta);
TensorPtr dropout(Tape& tape, const TensorPtr& x, double p, bool train, Rng& rng);
TensorPtr softmax_cross_entropy(Tape& tape, const TensorPtr& logits,
                                const std::vector<int>& labels);

// Replicates a 1×d tensor to m×d (backward sums over rows).
TensorPtr repeat_rows(Tape& tape, const TensorPtr& x, std::size_t m);
// Builds a (m·s)×d sequence layout from s per-feature m×d tensors:
// output row i·s + f is row i of feats[f].
TensorPtr interleave_rows(Tape& tape, const std::vector<TensorPtr>& feats);
// Inverse selection: rows offset, offset+stride, ... of x.
TensorPtr take_stride_rows(Tape& tape, const TensorPtr& x, std::size_t stride,
                           std::size_t offset);

// Fused multi-head self-attention over a flattened (m·s)×d sequence batch.
// q/k/v are already projected; attn dropout is applied to the softmax weights.
// When attn_out is non-null the post-softmax (pre-dropout) weights are copied
// out as m·h rows of s×s blocks, for inspection.
TensorPtr multihead_attention(Tape& tape, const TensorPtr& q, const TensorPtr& k,
                              const TensorPtr& v, std::size_t n_samples,
                              std::size_t seq, std::size_t n_heads, double attn_p,
                              bool train, Rng& rng,
                              std::vector<double>* attn_out = nullptr);

}  // namespace ops

// Plain (non-differentiated) row softmax, used for predictions.
Matrix softmax_rows(const Matrix& logits);

}  // namespace bench
