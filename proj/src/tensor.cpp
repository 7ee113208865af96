#include "bench/tensor.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bench {

namespace {

std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

void gemm(bool ta, bool tb, std::size_t m, std::size_t n, std::size_t k, double alpha,
          const double* a, std::size_t lda, const double* b, std::size_t ldb,
          double beta, double* c, std::size_t ldc) {
    cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
                tb ? CblasTrans : CblasNoTrans, static_cast<int>(m),
                static_cast<int>(n), static_cast<int>(k), alpha, a,
                static_cast<int>(lda), b, static_cast<int>(ldb), beta, c,
                static_cast<int>(ldc));
}

void require_2d(const TensorPtr& t, const char* op) {
    if (t->shape.size() != 2) throw ShapeError(std::string(op) + ": expected 2-D tensor");
}

}  // namespace

TensorPtr make_tensor(Shape shape, bool requires_grad) {
    auto t = std::make_shared<Tensor>();
    t->values.assign(shape_size(shape), 0.0);
    t->shape = std::move(shape);
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr make_tensor(Shape shape, std::vector<double> values, bool requires_grad) {
    if (values.size() != shape_size(shape))
        throw ShapeError("make_tensor: value count does not match shape");
    auto t = std::make_shared<Tensor>();
    t->shape = std::move(shape);
    t->values = std::move(values);
    t->requires_grad = requires_grad;
    return t;
}

TensorPtr scalar_tensor(double v, bool requires_grad) {
    return make_tensor({1}, {v}, requires_grad);
}

void Tape::backward(const TensorPtr& loss) {
    if (loss->size() != 1) throw ShapeError("backward: loss must be scalar");
    for (auto& node : nodes_) node.out->zero_grad();
    loss->ensure_grad();
    loss->grad[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
}

TensorPtr ParameterSet::add(const std::string& name, Shape shape, bool decay_exempt) {
    auto t = make_tensor(std::move(shape), true);
    add_existing(name, t, decay_exempt);
    return t;
}

void ParameterSet::add_existing(const std::string& name, TensorPtr t, bool decay_exempt) {
    if (index_.count(name)) throw StateError("parameter registered twice: " + name);
    index_[name] = params_.size();
    params_.push_back({name, std::move(t), decay_exempt});
}

TensorPtr ParameterSet::find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : params_[it->second].tensor;
}

void ParameterSet::zero_grad() {
    for (auto& p : params_) p.tensor->zero_grad();
}

namespace ops {

namespace {

bool wants_grad(std::initializer_list<const TensorPtr*> ins) {
    for (auto* t : ins)
        if ((*t)->requires_grad) return true;
    return false;
}

bool has_out_grad(const TensorPtr& out) { return !out->grad.empty(); }

}  // namespace

TensorPtr matmul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const std::size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
    if (b->shape[0] != k) throw ShapeError("matmul: inner dimensions disagree");
    auto out = make_tensor({m, n});
    if (m && n && k)
        gemm(false, false, m, n, k, 1.0, a->values.data(), k, b->values.data(), n, 0.0,
             out->values.data(), n);
    if (wants_grad({&a, &b})) {
        out->requires_grad = true;
        tape.record(out, [a, b, out, m, n, k] {
            if (!has_out_grad(out)) return;
            if (a->requires_grad) {
                a->ensure_grad();
                gemm(false, true, m, k, n, 1.0, out->grad.data(), n, b->values.data(), n,
                     1.0, a->grad.data(), k);
            }
            if (b->requires_grad) {
                b->ensure_grad();
                gemm(true, false, k, n, m, 1.0, a->values.data(), k, out->grad.data(), n,
                     1.0, b->grad.data(), n);
            }
        });
    }
    return out;
}

TensorPtr add(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) throw ShapeError("add: shape mismatch");
    auto out = make_tensor(a->shape);
    for (std::size_t i = 0; i < out->size(); ++i)
        out->values[i] = a->values[i] + b->values[i];
    if (wants_grad({&a, &b})) {
        out->requires_grad = true;
        tape.record(out, [a, b, out] {
            if (!has_out_grad(out)) return;
            for (auto* t : {&a, &b}) {
                if (!(*t)->requires_grad) continue;
                (*t)->ensure_grad();
                for (std::size_t i = 0; i < out->size(); ++i)
                    (*t)->grad[i] += out->grad[i];
            }
        });
    }
    return out;
}

TensorPtr add_broadcast(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    if (a->shape == b->shape) return add(tape, a, b);
    require_2d(a, "add_broadcast");
    const std::size_t m = a->shape[0], n = a->shape[1];
    if (b->size() != n) throw ShapeError("add_broadcast: bias length mismatch");
    auto out = make_tensor(a->shape);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
            out->values[i * n + j] = a->values[i * n + j] + b->values[j];
    if (wants_grad({&a, &b})) {
        out->requires_grad = true;
        tape.record(out, [a, b, out, m, n] {
            if (!has_out_grad(out)) return;
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < m * n; ++i) a->grad[i] += out->grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) b->grad[j] += out->grad[i * n + j];
            }
        });
    }
    return out;
}

TensorPtr mul(Tape& tape, const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) throw ShapeError("mul: shape mismatch");
    auto out = make_tensor(a->shape);
    for (std::size_t i = 0; i < out->size(); ++i)
        out->values[i] = a->values[i] * b->values[i];
    if (wants_grad({&a, &b})) {
        out->requires_grad = true;
        tape.record(out, [a, b, out] {
            if (!has_out_grad(out)) return;
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < out->size(); ++i)
                    a->grad[i] += out->grad[i] * b->values[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < out->size(); ++i)
                    b->grad[i] += out->grad[i] * a->values[i];
            }
        });
    }
    return out;
}

TensorPtr scale(Tape& tape, const TensorPtr& a, double c) {
    auto out = make_tensor(a->shape);
    for (std::size_t i = 0; i < out->size(); ++i) out->values[i] = c * a->values[i];
    if (a->requires_grad) {
        out->requires_grad = true;
        tape.record(out, [a, out, c] {
            if (!has_out_grad(out)) return;
            a->ensure_grad();
            for (std::size_t i = 0; i < out->size(); ++i) a->grad[i] += c * out->grad[i];
        });
    }
    return out;
}

TensorPtr relu(Tape& tape, const TensorPtr& x) {
    auto out = make_tensor(x->shape);
    for (std::size_t i = 0; i < out->size(); ++i)
        out->values[i] = x->values[i] > 0.0 ? x->values[i] : 0.0;
    if (x->requires_grad) {
        out->requires_grad = true;
        tape.record(out, [x, out] {
            if (!has_out_grad(out)) return;
            x->ensure_grad();
            // Subgradient at exactly 0 is taken as 0.
            for (std::size_t i = 0; i < out->size(); ++i)
                if (x->values[i] > 0.0) x->grad[i] += out->grad[i];
        });
    }
    return out;
}

TensorPtr concat_cols(Tape& tape, const std::vector<TensorPtr>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    const std::size_t m = parts[0]->rows();
    std::size_t n = 0;
    bool rg = false;
    for (const auto& p : parts) {
        require_2d(p, "concat_cols");
        if (p->shape[0] != m) throw ShapeError("concat_cols: row count mismatch");
        n += p->shape[1];
        rg = rg || p->requires_grad;
    }
    auto out = make_tensor({m, n});
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t c = p->shape[1];
        for (std::size_t i = 0; i < m; ++i)
            std::copy_n(p->values.data() + i * c, c, out->values.data() + i * n + off);
        off += c;
    }
    if (rg) {
        out->requires_grad = true;
        tape.record(out, [parts, out, m, n] {
            if (!has_out_grad(out)) return;
            std::size_t off = 0;
            for (const auto& p : parts) {
                const std::size_t c = p->shape[1];
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < c; ++j)
                            p->grad[i * c + j] += out->grad[i * n + off + j];
                }
                off += c;
            }
        });
    }
    return out;
}

TensorPtr slice_cols(Tape& tape, const TensorPtr& x, std::size_t start, std::size_t len) {
    require_2d(x, "slice_cols");
    const std::size_t m = x->shape[0], n = x->shape[1];
    if (start + len > n) throw ShapeError("slice_cols: out of range");
    auto out = make_tensor({m, len});
    for (std::size_t i = 0; i < m; ++i)
        std::copy_n(x->values.data() + i * n + start, len, out->values.data() + i * len);
    if (x->requires_grad) {
        out->requires_grad = true;
        tape.record(out, [x, out, start, len, m, n] {
            if (!has_out_grad(out)) return;
            x->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < len; ++j)
                    x->grad[i * n + start + j] += out->grad[i * len + j];
        });
    }
    return out;
}

TensorPtr reduce_mean(Tape& tape, const TensorPtr& x, int axis) {
    require_2d(x, "reduce_mean");
    const std::size_t m = x->shape[0], n = x->shape[1];
    if (axis != 0 && axis != 1) throw ShapeError("reduce_mean: axis must be 0 or 1");
    const std::size_t len = axis == 0 ? m : n;
    if (len == 0) throw ShapeError("reduce_mean: empty axis");
    auto out = axis == 0 ? make_tensor({1, n}) : make_tensor({m, 1});
    if (axis == 0) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0;
            for (std::size_t i = 0; i < m; ++i) s += x->values[i * n + j];
            out->values[j] = s / static_cast<double>(m);
        }
    } else {
        for (std::size_t i = 0; i < m; ++i) {
            double s = 0;
            for (std::size_t j = 0; j < n; ++j) s += x->values[i * n + j];
            out->values[i] = s / static_cast<double>(n);
        }
    }
    if (x->requires_grad) {
        out->requires_grad = true;
        tape.record(out, [x, out, axis, m, n] {
            if (!has_out_grad(out)) return;
            x->ensure_grad();
            const double inv = 1.0 / static_cast<double>(axis == 0 ? m : n);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    x->grad[i * n + j] += inv * out->grad[axis == 0 ? j : i];
        });
    }
    return out;
}

TensorPtr embedding_lookup(Tape& tape, const TensorPtr& table, const std::vector<int>& idx) {
    require_2d(table, "embedding_lookup");
    const std::size_t v = table->shape[0], d = table->shape[1];
    for (int i : idx)
        if (i < 0 || static_cast<std::size_t>(i) >= v)
            throw ShapeError("embedding_lookup: index out of range");
    auto out = make_tensor({idx.size(), d});
    for (std::size_t r = 0; r < idx.size(); ++r)
        std::copy_n(table->values.data() + static_cast<std::size_t>(idx[r]) * d, d,
                    out->values.data() + r * d);
    if (table->requires_grad) {
        out->requires_grad = true;
        tape.record(out, [table, out, idx, d] {
            if (!has_out_grad(out)) return;
            table->ensure_grad();
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (std::size_t j = 0; j < d; ++j)
                    table->grad[static_cast<std::size_t>(idx[r]) * d + j] +=
                        out->grad[r * d + j];
        });
    }
    return out;
}

TensorPtr batch_norm(Tape& tape, const TensorPtr& x, const TensorPtr& gamma,
                     const TensorPtr& beta, BatchNormState& state, bool train) {
    require_2d(x, "batch_norm");
    const std::size_t m = x->shape[0], n = x->shape[1];
    constexpr double kEps = 1e-5;
    constexpr double kMomentum = 0.1;
    if (gamma->size() != n || beta->size() != n)
        throw ShapeError("batch_norm: affine parameter length mismatch");
    if (state.running_mean.size() != n)
        throw ShapeError("batch_norm: state dimension mismatch");
    if (train && m < 2) throw StateError("batch_norm: degenerate batch of size < 2");

    auto out = make_tensor({m, n});
    auto xhat = std::make_shared<std::vector<double>>(m * n);
    auto inv_std = std::make_shared<std::vector<double>>(n);

    std::vector<double> mean(n), var(n);
    if (train) {
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0;
            for (std::size_t i = 0; i < m; ++i) s += x->values[i * n + j];
            mean[j] = s / static_cast<double>(m);
            double sq = 0;
            for (std::size_t i = 0; i < m; ++i) {
                const double d = x->values[i * n + j] - mean[j];
                sq += d * d;
            }
            var[j] = sq / static_cast<double>(m);
            state.running_mean[j] = (1.0 - kMomentum) * state.running_mean[j] +
                                    kMomentum * mean[j];
            state.running_var[j] = (1.0 - kMomentum) * state.running_var[j] +
                                   kMomentum * var[j];
        }
    } else {
        mean = state.running_mean;
        var = state.running_var;
    }
    for (std::size_t j = 0; j < n; ++j) (*inv_std)[j] = 1.0 / std::sqrt(var[j] + kEps);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double xh = (x->values[i * n + j] - mean[j]) * (*inv_std)[j];
            (*xhat)[i * n + j] = xh;
            out->values[i * n + j] = gamma->values[j] * xh + beta->values[j];
        }

    if (wants_grad({&x, &gamma, &beta})) {
        out->requires_grad = true;
        tape.record(out, [x, gamma, beta, out, xhat, inv_std, m, n, train] {
            if (!has_out_grad(out)) return;
            for (std::size_t j = 0; j < n; ++j) {
                double dbeta = 0, dgamma = 0;
                for (std::size_t i = 0; i < m; ++i) {
                    const double g = out->grad[i * n + j];
                    dbeta += g;
                    dgamma += g * (*xhat)[i * n + j];
                }
                if (gamma->requires_grad) {
                    gamma->ensure_grad();
                    gamma->grad[j] += dgamma;
                }
                if (beta->requires_grad) {
                    beta->ensure_grad();
                    beta->grad[j] += dbeta;
                }
                if (x->requires_grad) {
                    x->ensure_grad();
                    const double gj = gamma->values[j] * (*inv_std)[j];
                    if (train) {
                        // Full coupling through the batch mean and variance.
                        const double md = dbeta / static_cast<double>(m);
                        const double mdx = dgamma / static_cast<double>(m);
                        for (std::size_t i = 0; i < m; ++i)
                            x->grad[i * n + j] +=
                                gj * (out->grad[i * n + j] - md -
                                      (*xhat)[i * n + j] * mdx);
                    } else {
                        for (std::size_t i = 0; i < m; ++i)
                            x->grad[i * n + j] += gj * out->grad[i * n + j];
                    }
                }
            }
        });
    }
    return out;
}

TensorPtr layer_norm(Tape& tape, const TensorPtr& x, const TensorPtr& gamma,
                     const TensorPtr& beta) {
    require_2d(x, "layer_norm");
    const std::size_t m = x->shape[0], n = x->shape[1];
    constexpr double kEps = 1e-5;
    if (gamma->size() != n || beta->size() != n)
        throw ShapeError("layer_norm: affine parameter length mismatch");
    auto out = make_tensor({m, n});
    auto xhat = std::make_shared<std::vector<double>>(m * n);
    auto inv_std = std::make_shared<std::vector<double>>(m);
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < n; ++j) s += x->values[i * n + j];
        const double mean = s / static_cast<double>(n);
        double sq = 0;
        for (std::size_t j = 0; j < n; ++j) {
            const double d = x->values[i * n + j] - mean;
            sq += d * d;
        }
        const double is = 1.0 / std::sqrt(sq / static_cast<double>(n) + kEps);
        (*inv_std)[i] = is;
        for (std::size_t j = 0; j < n; ++j) {
            const double xh = (x->values[i * n + j] - mean) * is;
            (*xhat)[i * n + j] = xh;
            out->values[i * n + j] = gamma->values[j] * xh + beta->values[j];
        }
    }
    if (wants_grad({&x, &gamma, &beta})) {
        out->requires_grad = true;
        tape.record(out, [x, gamma, beta, out, xhat, inv_std, m, n] {
            if (!has_out_grad(out)) return;
            if (gamma->requires_grad) gamma->ensure_grad();
            if (beta->requires_grad) beta->ensure_grad();
            if (x->requires_grad) x->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                double sum_g = 0, sum_gx = 0;
                for (std::size_t j = 0; j < n; ++j) {
                    const double g = out->grad[i * n + j] * gamma->values[j];
                    sum_g += g;
                    sum_gx += g * (*xhat)[i * n + j];
                }
                for (std::size_t j = 0; j < n; ++j) {
                    const double go = out->grad[i * n + j];
                    if (gamma->requires_grad) gamma->grad[j] += go * (*xhat)[i * n + j];
                    if (beta->requires_grad) beta->grad[j] += go;
                    if (x->requires_grad) {
                        const double g = go * gamma->values[j];
                        x->grad[i * n + j] +=
                            (*inv_std)[i] *
                            (g - (sum_g + (*xhat)[i * n + j] * sum_gx) /
                                     static_cast<double>(n));
                    }
                }
            }
        });
    }
    return out;
}

TensorPtr dropout(Tape& tape, const TensorPtr& x, double p, bool train, Rng& rng) {
    if (p < 0.0 || p >= 1.0) {
        if (p != 0.0) throw ConfigError("dropout: p must lie in [0, 1)");
    }
    if (!train || p == 0.0) return x;  // exact identity
    const double scale = 1.0 / (1.0 - p);
    auto mask = std::make_shared<std::vector<double>>(x->size());
    auto out = make_tensor(x->shape);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < x->size(); ++i) {
        (*mask)[i] = u(rng) < p ? 0.0 : scale;
        out->values[i] = x->values[i] * (*mask)[i];
    }
    if (x->requires_grad) {
        out->requires_grad = true;
        tape.record(out, [x, out, mask] {
            if (!has_out_grad(out)) return;
            x->ensure_grad();
            for (std::size_t i = 0; i < out->size(); ++i)
                x->grad[i] += out->grad[i] * (*mask)[i];
        });
    }
    return out;
}

TensorPtr softmax_cross_entropy(Tape& tape, const TensorPtr& logits,
                                const std::vector<int>& labels) {
    require_2d(logits, "softmax_cross_entropy");
    const std::size_t m = logits->shape[0], c = logits->shape[1];
    if (labels.size() != m) throw ShapeError("softmax_cross_entropy: label count mismatch");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= c)
            throw ShapeError("softmax_cross_entropy: label out of range");
    auto probs = std::make_shared<std::vector<double>>(m * c);
    double loss = 0;
    for (std::size_t i = 0; i < m; ++i) {
        double mx = logits->values[i * c];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, logits->values[i * c + j]);
        double z = 0;
        for (std::size_t j = 0; j < c; ++j) {
            const double e = std::exp(logits->values[i * c + j] - mx);
            (*probs)[i * c + j] = e;
            z += e;
        }
        for (std::size_t j = 0; j < c; ++j) (*probs)[i * c + j] /= z;
        loss -= std::log((*probs)[i * c + static_cast<std::size_t>(labels[i])]);
    }
    auto out = scalar_tensor(loss / static_cast<double>(m));
    if (logits->requires_grad) {
        out->requires_grad = true;
        tape.record(out, [logits, out, probs, labels, m, c] {
            if (!has_out_grad(out)) return;
            logits->ensure_grad();
            const double g = out->grad[0] / static_cast<double>(m);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < c; ++j)
                    logits->grad[i * c + j] +=
                        g * ((*probs)[i * c + j] -
                             (static_cast<std::size_t>(labels[i]) == j ? 1.0 : 0.0));
        });
    }
    return out;
}

TensorPtr repeat_rows(Tape& tape, const TensorPtr& x, std::size_t m) {
    const std::size_t d = x->size();
    auto out = make_tensor({m, d});
    for (std::size_t i = 0; i < m; ++i)
        std::copy_n(x->values.data(), d, out->values.data() + i * d);
    if (x->requires_grad) {
        out->requires_grad = true;
        tape.record(out, [x, out, m, d] {
            if (!has_out_grad(out)) return;
            x->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < d; ++j) x->grad[j] += out->grad[i * d + j];
        });
    }
    return out;
}

TensorPtr interleave_rows(Tape& tape, const std::vector<TensorPtr>& feats) {
    if (feats.empty()) throw ShapeError("interleave_rows: no inputs");
    const std::size_t m = feats[0]->rows(), d = feats[0]->cols(), s = feats.size();
    bool rg = false;
    for (const auto& f : feats) {
        if (f->shape != feats[0]->shape)
            throw ShapeError("interleave_rows: shape mismatch");
        rg = rg || f->requires_grad;
    }
    auto out = make_tensor({m * s, d});
    for (std::size_t f = 0; f < s; ++f)
        for (std::size_t i = 0; i < m; ++i)
            std::copy_n(feats[f]->values.data() + i * d, d,
                        out->values.data() + (i * s + f) * d);
    if (rg) {
        out->requires_grad = true;
        tape.record(out, [feats, out, m, d, s] {
            if (!has_out_grad(out)) return;
            for (std::size_t f = 0; f < s; ++f) {
                if (!feats[f]->requires_grad) continue;
                feats[f]->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < d; ++j)
                        feats[f]->grad[i * d + j] += out->grad[(i * s + f) * d + j];
            }
        });
    }
    return out;
}

TensorPtr take_stride_rows(Tape& tape, const TensorPtr& x, std::size_t stride,
                           std::size_t offset) {
    require_2d(x, "take_stride_rows");
    const std::size_t rows = x->shape[0], d = x->shape[1];
    if (stride == 0 || offset >= stride || rows % stride != 0)
        throw ShapeError("take_stride_rows: invalid stride/offset");
    const std::size_t m = rows / stride;
    auto out = make_tensor({m, d});
    for (std::size_t i = 0; i < m; ++i)
        std::copy_n(x->values.data() + (i * stride + offset) * d, d,
                    out->values.data() + i * d);
    if (x->requires_grad) {
        out->requires_grad = true;
        tape.record(out, [x, out, stride, offset, m, d] {
            if (!has_out_grad(out)) return;
            x->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < d; ++j)
                    x->grad[(i * stride + offset) * d + j] += out->grad[i * d + j];
        });
    }
    return out;
}

TensorPtr multihead_attention(Tape& tape, const TensorPtr& q, const TensorPtr& k,
                              const TensorPtr& v, std::size_t n_samples,
                              std::size_t seq, std::size_t n_heads, double attn_p,
                              bool train, Rng& rng, std::vector<double>* attn_out) {
    require_2d(q, "multihead_attention");
    if (q->shape != k->shape || q->shape != v->shape)
        throw ShapeError("multihead_attention: q/k/v shape mismatch");
    const std::size_t d = q->shape[1];
    if (q->shape[0] != n_samples * seq)
        throw ShapeError("multihead_attention: row count != n_samples * seq");
    if (n_heads == 0 || d % n_heads != 0)
        throw ConfigError("multihead_attention: n_heads must divide d");
    if (attn_p < 0.0 || attn_p >= 1.0) {
        if (attn_p != 0.0) throw ConfigError("multihead_attention: attn_p in [0,1)");
    }
    const std::size_t dh = d / n_heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    const bool drop = train && attn_p > 0.0;
    const double keep_scale = drop ? 1.0 / (1.0 - attn_p) : 1.0;

    auto out = make_tensor({n_samples * seq, d});
    // Post-softmax weights and dropout masks, kept for the backward pass.
    auto attn = std::make_shared<std::vector<double>>(n_samples * n_heads * seq * seq);
    auto mask = drop
                    ? std::make_shared<std::vector<double>>(n_samples * n_heads * seq * seq)
                    : nullptr;
    std::uniform_real_distribution<double> u(0.0, 1.0);

    for (std::size_t i = 0; i < n_samples; ++i) {
        for (std::size_t h = 0; h < n_heads; ++h) {
            double* a = attn->data() + (i * n_heads + h) * seq * seq;
            const std::size_t row0 = i * seq, col0 = h * dh;
            for (std::size_t r = 0; r < seq; ++r) {
                const double* qr = q->values.data() + (row0 + r) * d + col0;
                double mx = -1e300;
                for (std::size_t c = 0; c < seq; ++c) {
                    const double* kc = k->values.data() + (row0 + c) * d + col0;
                    double s = 0;
                    for (std::size_t t = 0; t < dh; ++t) s += qr[t] * kc[t];
                    a[r * seq + c] = s * inv_sqrt;
                    mx = std::max(mx, a[r * seq + c]);
                }
                double z = 0;
                for (std::size_t c = 0; c < seq; ++c) {
                    a[r * seq + c] = std::exp(a[r * seq + c] - mx);
                    z += a[r * seq + c];
                }
                for (std::size_t c = 0; c < seq; ++c) a[r * seq + c] /= z;
            }
            if (attn_out)
                attn_out->insert(attn_out->end(), a, a + seq * seq);
            const double* w = a;
            std::vector<double> wd;
            if (drop) {
                double* mk = mask->data() + (i * n_heads + h) * seq * seq;
                wd.resize(seq * seq);
                for (std::size_t t = 0; t < seq * seq; ++t) {
                    mk[t] = u(rng) < attn_p ? 0.0 : keep_scale;
                    wd[t] = a[t] * mk[t];
                }
                w = wd.data();
            }
            for (std::size_t r = 0; r < seq; ++r) {
                double* orow = out->values.data() + (row0 + r) * d + col0;
                for (std::size_t c = 0; c < seq; ++c) {
                    const double wv = w[r * seq + c];
                    if (wv == 0.0) continue;
                    const double* vc = v->values.data() + (row0 + c) * d + col0;
                    for (std::size_t t = 0; t < dh; ++t) orow[t] += wv * vc[t];
                }
            }
        }
    }

    if (wants_grad({&q, &k, &v})) {
        out->requires_grad = true;
        tape.record(out, [q, k, v, out, attn, mask, n_samples, seq, n_heads, dh, d,
                          inv_sqrt] {
            if (!has_out_grad(out)) return;
            if (q->requires_grad) q->ensure_grad();
            if (k->requires_grad) k->ensure_grad();
            if (v->requires_grad) v->ensure_grad();
            std::vector<double> da(seq * seq), ds(seq * seq);
            for (std::size_t i = 0; i < n_samples; ++i) {
                for (std::size_t h = 0; h < n_heads; ++h) {
                    const double* a = attn->data() + (i * n_heads + h) * seq * seq;
                    const double* mk =
                        mask ? mask->data() + (i * n_heads + h) * seq * seq : nullptr;
                    const std::size_t row0 = i * seq, col0 = h * dh;
                    // dA = dO · Vᵀ (through the dropout mask); dV = Wᵀ · dO.
                    for (std::size_t r = 0; r < seq; ++r) {
                        const double* go = out->grad.data() + (row0 + r) * d + col0;
                        for (std::size_t c = 0; c < seq; ++c) {
                            const double w = mk ? a[r * seq + c] * mk[r * seq + c]
                                                : a[r * seq + c];
                            const double* vc = v->values.data() + (row0 + c) * d + col0;
                            double s = 0;
                            for (std::size_t t = 0; t < dh; ++t) s += go[t] * vc[t];
                            da[r * seq + c] = mk ? s * mk[r * seq + c] : s;
                            if (v->requires_grad && w != 0.0) {
                                double* gv = v->grad.data() + (row0 + c) * d + col0;
                                for (std::size_t t = 0; t < dh; ++t) gv[t] += w * go[t];
                            }
                        }
                    }
                    // Softmax backward per row, then dQ/dK through the scaled dot.
                    for (std::size_t r = 0; r < seq; ++r) {
                        double dot = 0;
                        for (std::size_t c = 0; c < seq; ++c)
                            dot += da[r * seq + c] * a[r * seq + c];
                        for (std::size_t c = 0; c < seq; ++c)
                            ds[r * seq + c] =
                                a[r * seq + c] * (da[r * seq + c] - dot) * inv_sqrt;
                    }
                    for (std::size_t r = 0; r < seq; ++r) {
                        for (std::size_t c = 0; c < seq; ++c) {
                            const double g = ds[r * seq + c];
                            if (g == 0.0) continue;
                            const double* qr = q->values.data() + (row0 + r) * d + col0;
                            const double* kc = k->values.data() + (row0 + c) * d + col0;
                            if (q->requires_grad) {
                                double* gq = q->grad.data() + (row0 + r) * d + col0;
                                for (std::size_t t = 0; t < dh; ++t) gq[t] += g * kc[t];
                            }
                            if (k->requires_grad) {
                                double* gk = k->grad.data() + (row0 + c) * d + col0;
                                for (std::size_t t = 0; t < dh; ++t) gk[t] += g * qr[t];
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

}  // namespace ops

Matrix softmax_rows(const Matrix& logits) {
    Matrix p(logits.rows, logits.cols);
    for (std::size_t i = 0; i < logits.rows; ++i) {
        double mx = logits(i, 0);
        for (std::size_t j = 1; j < logits.cols; ++j) mx = std::max(mx, logits(i, j));
        double z = 0;
        for (std::size_t j = 0; j < logits.cols; ++j) {
            p(i, j) = std::exp(logits(i, j) - mx);
            z += p(i, j);
        }
        for (std::size_t j = 0; j < logits.cols; ++j) p(i, j) /= z;
    }
    return p;
}

}  // namespace bench
