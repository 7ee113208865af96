#include "bench/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "bench/metrics.hpp"

namespace bench {

namespace {

void validate(const TrainConfig& cfg) {
    if (cfg.learning_rate <= 0) throw ConfigError("learning_rate must be positive");
    if (cfg.weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
    if (cfg.batch_size < 1) throw ConfigError("batch_size must be positive");
    if (cfg.max_epochs < 1) throw ConfigError("max_epochs must be positive");
    if (cfg.patience < 1 || cfg.patience > cfg.max_epochs)
        throw ConfigError("patience must be in [1, max_epochs]");
}

Batch gather_batch(const PreparedRows& rows, const std::vector<std::size_t>& order,
                   std::size_t begin, std::size_t end) {
    Batch b;
    const std::size_t m = end - begin;
    b.numeric = Matrix(m, rows.numeric.cols);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < rows.numeric.cols; ++j)
            b.numeric(i, j) = rows.numeric(order[begin + i], j);
    for (const auto& col : rows.categorical) {
        std::vector<int> out(m);
        for (std::size_t i = 0; i < m; ++i) out[i] = col[order[begin + i]];
        b.categorical.push_back(std::move(out));
    }
    b.labels.resize(m);
    for (std::size_t i = 0; i < m; ++i) b.labels[i] = rows.labels[order[begin + i]];
    return b;
}

// Batch boundaries over n rows. A trailing singleton is folded into the
// previous batch so batch-norm never sees a train batch of one row.
std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n,
                                                              std::size_t batch_size) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t begin = 0; begin < n; begin += batch_size)
        out.emplace_back(begin, std::min(n, begin + batch_size));
    if (out.size() > 1 && out.back().second - out.back().first == 1) {
        out.pop_back();
        out.back().second = n;
    }
    return out;
}

void run_epoch(Model& model, const PreparedRows& train, const TrainConfig& cfg,
               OptimizerState& opt, Rng& rng) {
    std::vector<std::size_t> order(train.labels.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (auto [begin, end] : batch_ranges(order.size(), static_cast<std::size_t>(cfg.batch_size))) {
        Batch batch = gather_batch(train, order, begin, end);
        Tape tape;
        auto logits = model.forward(tape, batch, true, rng);
        auto loss = ops::softmax_cross_entropy(tape, logits, batch.labels);
        tape.backward(loss);
        adamw_step(model.params(), opt, cfg.learning_rate, cfg.weight_decay);
    }
}

}  // namespace

void adamw_step(ParameterSet& params, OptimizerState& opt, double lr, double wd) {
    const auto& all = params.all();
    if (opt.moments.empty()) {
        opt.moments.resize(all.size());
        for (std::size_t i = 0; i < all.size(); ++i) {
            opt.moments[i].m.assign(all[i].tensor->size(), 0.0);
            opt.moments[i].v.assign(all[i].tensor->size(), 0.0);
        }
    }
    if (opt.moments.size() != all.size())
        throw StateError("optimizer state does not match parameter set");
    for (const auto& p : all)
        if (p.tensor->grad.size() != p.tensor->size())
            throw StateError("gradients not populated for " + p.name);

    opt.step += 1;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step));
    for (std::size_t i = 0; i < all.size(); ++i) {
        auto& t = *all[i].tensor;
        auto& mom = opt.moments[i];
        const double decay = all[i].decay_exempt ? 0.0 : wd;
        for (std::size_t j = 0; j < t.size(); ++j) {
            const double g = t.grad[j];
            mom.m[j] = opt.beta1 * mom.m[j] + (1.0 - opt.beta1) * g;
            mom.v[j] = opt.beta2 * mom.v[j] + (1.0 - opt.beta2) * g * g;
            const double m_hat = mom.m[j] / bc1;
            const double v_hat = mom.v[j] / bc2;
            t.values[j] -= lr * (m_hat / (std::sqrt(v_hat) + opt.eps) + decay * t.values[j]);
        }
        t.zero_grad();
    }
}

Matrix predict_proba(Model& model, const PreparedRows& rows) {
    const std::size_t n = rows.labels.size();
    const std::size_t chunk = 512;
    Matrix logits(n, static_cast<std::size_t>(model.n_classes()));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(0);  // unused in eval mode
    for (std::size_t begin = 0; begin < n; begin += chunk) {
        const std::size_t end = std::min(n, begin + chunk);
        Batch batch = gather_batch(rows, order, begin, end);
        Tape tape;
        auto out = model.forward(tape, batch, false, rng);
        for (std::size_t i = begin; i < end; ++i)
            for (std::size_t c = 0; c < logits.cols; ++c)
                logits(i, c) = out->values[(i - begin) * logits.cols + c];
    }
    return softmax_rows(logits);
}

TrainReport train_model(Model& model, const PreparedRows& train, const PreparedRows& valid,
                        const TrainConfig& cfg) {
    validate(cfg);
    if (train.labels.empty()) throw ConfigError("training split is empty");
    if (valid.labels.empty())
        throw ConfigError("validation split is empty; early stopping needs one");

    const auto t0 = std::chrono::steady_clock::now();
    OptimizerState opt;
    Rng rng(cfg.seed);
    TrainReport report;
    std::vector<std::vector<double>> best_state = model.save_state();
    int epochs_since_best = 0;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        run_epoch(model, train, cfg, opt, rng);

        double auc;
        try {
            auc = roc_auc_multiclass({predict_proba(model, valid), valid.labels});
        } catch (const MetricError&) {
            auc = 0.5;  // undefined AUC (single-class validation split)
        }
        report.val_auc_curve.push_back(auc);
        if (report.best_epoch == 0 || auc > report.best_val_auc) {
            report.best_val_auc = auc;
            report.best_epoch = epoch;
            best_state = model.save_state();
            epochs_since_best = 0;
        } else if (++epochs_since_best >= cfg.patience) {
            break;
        }
    }

    model.load_state(best_state);
    report.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

void train_fixed_epochs(Model& model, const PreparedRows& train, int epochs,
                        const TrainConfig& cfg) {
    validate(cfg);
    if (train.labels.empty()) throw ConfigError("training split is empty");
    if (epochs < 1) throw ConfigError("epoch count must be positive");
    OptimizerState opt;
    Rng rng(cfg.seed);
    for (int epoch = 0; epoch < epochs; ++epoch) run_epoch(model, train, cfg, opt, rng);
}

}  // namespace bench
