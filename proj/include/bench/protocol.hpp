#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "bench/data.hpp"
#include "bench/hpo.hpp"
#include "bench/stats.hpp"
#include "bench/train.hpp"

namespace bench {

struct DatasetSpec {
    std::string name;
    std::string csv;
    std::string schema;
};

struct RunManifest {
    std::vector<DatasetSpec> datasets;
    std::vector<std::string> methods;  // subset of {resnext, resnet, ft}
    std::string mode = "tuned";        // "tuned" | "default"
    Budget budget;
    std::uint64_t master_seed = 0;
    int parallelism = 1;
    std::string out_dir;
    // Training-regime knobs shared by every cell; learning_rate/weight_decay
    // always come from the per-trial config instead.
    TrainConfig train;
};

RunManifest load_manifest(const std::string& path);

// One evaluated configuration with its per-inner-fold bookkeeping.
struct TrialRecord {
    ConfigMap config;
    bool failed = false;
    std::string failure_reason;
    double objective = 0.0;  // mean of inner_aucs
    double duration_s = 0.0;
    std::vector<double> inner_aucs;
    std::vector<int> inner_best_epochs;
};

struct OuterFoldResult {
    std::string dataset;
    std::string method;
    std::string mode;
    int fold_index = 0;
    bool failed = false;
    std::string failure_reason;
    ConfigMap best_config;
    int best_trial_index = -1;  // tuned mode only
    int retrain_epochs = 0;
    double test_auc = 0.0;
    double test_error_rate = 0.0;
    double wall_time = 0.0;  // seconds
    std::vector<TrialRecord> trials;
};

struct BenchmarkTask {
    std::string dataset_name;
    std::string method;
    std::string mode = "tuned";
    Budget budget;
    std::uint64_t master_seed = 0;
    TrainConfig train;
};

// Budgeted HPO over 9 stratified inner folds of the outer-train rows, then a
// refit of the winning config on all outer-train rows and scoring of the
// held-out outer fold.
OuterFoldResult run_outer_fold(const BenchmarkTask& task, const Dataset& ds,
                               const FoldPlan& outer, int fold_index);

// No HPO: the default config trained once with one inner fold as the early
// stopping validation split.
OuterFoldResult run_default_fold(const BenchmarkTask& task, const Dataset& ds,
                                 const FoldPlan& outer, int fold_index);

struct DatasetResult {
    std::string dataset;
    std::string method;
    std::string mode;
    bool failed = false;  // no fold succeeded
    double mean_test_auc = 0.0;
    int n_failed_folds = 0;
    std::vector<OuterFoldResult> folds;
};

DatasetResult aggregate(const std::vector<OuterFoldResult>& folds);

// Per-cell persistence: <out_dir>/<dataset>/<method>/<mode>/fold<k>.json,
// written atomically. Serialized timing fields (duration_s, wall_time) are the
// only run-to-run varying content.
std::string fold_result_path(const std::string& out_dir, const OuterFoldResult& r);
void save_fold_result(const std::string& out_dir, const OuterFoldResult& r);
OuterFoldResult load_fold_result(const std::string& path);

using ProgressFn = std::function<void(const OuterFoldResult&, bool resumed)>;

// Runs every (dataset, method, fold) cell, up to manifest.parallelism at a
// time, skipping cells already persisted under out_dir. Returns the
// datasets × methods matrix of mean test AUC (missing = failed dataset cell).
ResultMatrix execute(const RunManifest& manifest, const ProgressFn& progress = nullptr);

void write_matrix_csv(const ResultMatrix& m, const std::string& path);

// Everything found under a results directory for one mode.
struct ResultsStore {
    std::string mode;
    std::vector<std::string> datasets;  // sorted
    std::vector<std::string> methods;   // sorted
    std::map<std::pair<std::string, std::string>, std::vector<OuterFoldResult>> cells;
};

// Scans <dir>/<dataset>/<method>/<mode>/fold*.json. With an empty mode,
// prefers "tuned" results and falls back to "default".
ResultsStore load_results(const std::string& dir, const std::string& mode = "");

ResultMatrix to_matrix(const ResultsStore& store);

// Wall-clock hours per completed cell, aligned with store.methods.
std::vector<std::vector<double>> wall_time_hours(const ResultsStore& store);

}  // namespace bench
