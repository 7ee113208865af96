#pragma once

#include <cstdint>
#include <vector>

#include "bench/data.hpp"
#include "bench/models.hpp"

namespace bench {

struct TrainConfig {
    double learning_rate = 1e-3;
    double weight_decay = 0.0;
    int batch_size = 128;
    int max_epochs = 200;
    int patience = 16;
    std::uint64_t seed = 0;
};

// Decoupled-weight-decay Adam state; moment buffers mirror the parameter set.
struct OptimizerState {
    struct Moments {
        std::vector<double> m, v;
    };
    std::vector<Moments> moments;
    std::size_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// One update: m/v moment tracking with bias correction, decay applied only to
// tensors not marked decay_exempt. Gradients must be populated; they are
// zeroed after the step.
void adamw_step(ParameterSet& params, OptimizerState& opt, double lr, double wd);

struct TrainReport {
    std::vector<double> val_auc_curve;  // one entry per completed epoch
    int best_epoch = 0;                 // 1-based first argmax of the curve
    double best_val_auc = 0.0;
    double wall_time = 0.0;  // seconds
};

// Mini-batch training with early stopping on validation ROC-AUC. Batch order
// and dropout masks are driven by cfg.seed; the model is left holding the
// best-validation snapshot (parameters and normalization statistics).
TrainReport train_model(Model& model, const PreparedRows& train, const PreparedRows& valid,
                        const TrainConfig& cfg);

// Same loop without validation or early stopping, for refitting on combined
// data once the epoch budget is known.
void train_fixed_epochs(Model& model, const PreparedRows& train, int epochs,
                        const TrainConfig& cfg);

// Softmax of eval-mode logits, computed in batches.
Matrix predict_proba(Model& model, const PreparedRows& rows);

}  // namespace bench
