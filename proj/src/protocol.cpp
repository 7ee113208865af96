#include "bench/protocol.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include "bench/metrics.hpp"

namespace bench {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double elapsed_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<std::size_t> rows_except_fold(const FoldPlan& plan, std::size_t skip) {
    std::vector<std::size_t> rows;
    for (std::size_t f = 0; f < plan.folds.size(); ++f)
        if (f != skip) rows.insert(rows.end(), plan.folds[f].begin(), plan.folds[f].end());
    std::sort(rows.begin(), rows.end());
    return rows;
}

std::vector<int> labels_at(const Dataset& ds, const std::vector<std::size_t>& rows) {
    std::vector<int> out;
    out.reserve(rows.size());
    for (std::size_t r : rows) out.push_back(ds.labels[r]);
    return out;
}

SchemaSnapshot snapshot_of(const Dataset& ds, const PreprocessorState& state) {
    SchemaSnapshot s;
    s.n_num = ds.n_num();
    s.cat_cardinalities = state.cat_seen;
    return s;
}

TrainConfig trial_train_config(const BenchmarkTask& task, const ConfigMap& cfg,
                               std::uint64_t seed) {
    TrainConfig tc = task.train;
    tc.learning_rate = cfg.at("learning_rate");
    tc.weight_decay = cfg.at("weight_decay");
    tc.seed = seed;
    return tc;
}

int median_epochs(std::vector<int> epochs) {
    std::sort(epochs.begin(), epochs.end());
    const std::size_t n = epochs.size();
    const double med = n % 2 ? epochs[n / 2]
                             : 0.5 * (epochs[n / 2 - 1] + epochs[n / 2]);
    return std::max(1, static_cast<int>(std::lround(med)));
}

// Trains the candidate config on each of the 9 inner splits; the objective is
// the plain mean of the validation AUCs.
TrialRecord evaluate_trial(const BenchmarkTask& task, const Dataset& ds,
                           const std::vector<std::size_t>& outer_train,
                           const FoldPlan& inner, const ConfigMap& cfg,
                           std::uint64_t cell_seed, std::size_t trial_index) {
    TrialRecord rec;
    rec.config = cfg;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        for (std::size_t j = 0; j < inner.folds.size(); ++j) {
            std::vector<std::size_t> valid_rows, train_rows;
            for (std::size_t f = 0; f < inner.folds.size(); ++f)
                for (std::size_t pos : inner.folds[f])
                    (f == j ? valid_rows : train_rows).push_back(outer_train[pos]);
            std::sort(train_rows.begin(), train_rows.end());
            std::sort(valid_rows.begin(), valid_rows.end());

            auto prep = fit_preprocessor(ds, train_rows);
            auto train = apply_preprocessor(prep, ds, train_rows);
            auto valid = apply_preprocessor(prep, ds, valid_rows);

            const std::uint64_t run_seed =
                fnv1a_mix(fnv1a_mix(cell_seed, trial_index + 1), j + 1);
            Rng model_rng(run_seed);
            auto model =
                build_model(task.method, cfg, snapshot_of(ds, prep), ds.n_classes, model_rng);
            auto report = train_model(*model, train, valid,
                                      trial_train_config(task, cfg, fnv1a_mix(run_seed, 7)));
            rec.inner_aucs.push_back(report.best_val_auc);
            rec.inner_best_epochs.push_back(report.best_epoch);
        }
        rec.objective = std::accumulate(rec.inner_aucs.begin(), rec.inner_aucs.end(), 0.0) /
                        static_cast<double>(rec.inner_aucs.size());
    } catch (const std::exception& e) {
        rec.failed = true;
        rec.failure_reason = e.what();
        rec.inner_aucs.clear();
        rec.inner_best_epochs.clear();
    }
    rec.duration_s = elapsed_since(t0);
    return rec;
}

void score_test_fold(Model& model, const Dataset& ds, const PreprocessorState& prep,
                     const std::vector<std::size_t>& test_rows, OuterFoldResult& out) {
    auto test = apply_preprocessor(prep, ds, test_rows);
    PredictionSet pred{predict_proba(model, test), test.labels};
    out.test_auc = roc_auc_multiclass(pred);
    out.test_error_rate = error_rate(pred);
}

OuterFoldResult fold_result_stub(const BenchmarkTask& task, int fold_index) {
    OuterFoldResult r;
    r.dataset = task.dataset_name;
    r.method = task.method;
    r.mode = task.mode;
    r.fold_index = fold_index;
    return r;
}

}  // namespace

OuterFoldResult run_outer_fold(const BenchmarkTask& task, const Dataset& ds,
                               const FoldPlan& outer, int fold_index) {
    auto result = fold_result_stub(task, fold_index);
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t cell_seed =
        derive_seed(task.master_seed, task.dataset_name, task.method, task.mode,
                    static_cast<std::uint64_t>(fold_index));

    const auto outer_train = rows_except_fold(outer, static_cast<std::size_t>(fold_index));
    const auto& test_rows = outer.folds[static_cast<std::size_t>(fold_index)];
    const std::uint64_t inner_seed =
        fnv1a_mix(fnv1a(task.dataset_name, fnv1a_mix(0xcbf29ce484222325ULL, task.master_seed)),
                  static_cast<std::uint64_t>(fold_index));
    const auto inner = make_folds(labels_at(ds, outer_train), 9, inner_seed);

    StudyState study(space_for(task.method), fnv1a_mix(cell_seed, 1));
    while (!study.budget_exhausted(task.budget, elapsed_since(t0))) {
        const std::size_t trial_index = study.history().size();
        auto cfg = study.suggest();
        auto rec = evaluate_trial(task, ds, outer_train, inner, cfg, cell_seed, trial_index);
        Trial trial;
        trial.config = cfg;
        trial.objective = rec.objective;
        trial.status = rec.failed ? TrialStatus::failed : TrialStatus::complete;
        trial.duration_s = rec.duration_s;
        study.record(trial);
        result.trials.push_back(std::move(rec));
    }

    // earliest trial attaining the maximum objective wins
    int best = -1;
    for (std::size_t t = 0; t < result.trials.size(); ++t) {
        const auto& rec = result.trials[t];
        if (rec.failed) continue;
        if (best < 0 || rec.objective > result.trials[static_cast<std::size_t>(best)].objective)
            best = static_cast<int>(t);
    }
    if (best < 0) {
        result.failed = true;
        result.failure_reason = result.trials.empty()
                                    ? "budget allowed no trials"
                                    : "all trials failed: " + result.trials[0].failure_reason;
        result.wall_time = elapsed_since(t0);
        return result;
    }
    result.best_trial_index = best;
    const auto& winner = result.trials[static_cast<std::size_t>(best)];
    result.best_config = winner.config;
    result.retrain_epochs = median_epochs(winner.inner_best_epochs);

    try {
        auto prep = fit_preprocessor(ds, outer_train);
        auto train = apply_preprocessor(prep, ds, outer_train);
        const std::uint64_t retrain_seed = fnv1a_mix(cell_seed, 0x5245);
        Rng model_rng(retrain_seed);
        auto model = build_model(task.method, result.best_config, snapshot_of(ds, prep),
                                 ds.n_classes, model_rng);
        train_fixed_epochs(*model, train, result.retrain_epochs,
                           trial_train_config(task, result.best_config,
                                              fnv1a_mix(retrain_seed, 7)));
        score_test_fold(*model, ds, prep, test_rows, result);
    } catch (const std::exception& e) {
        result.failed = true;
        result.failure_reason = std::string("refit failed: ") + e.what();
    }
    result.wall_time = elapsed_since(t0);
    return result;
}

OuterFoldResult run_default_fold(const BenchmarkTask& task, const Dataset& ds,
                                 const FoldPlan& outer, int fold_index) {
    auto result = fold_result_stub(task, fold_index);
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t cell_seed =
        derive_seed(task.master_seed, task.dataset_name, task.method, task.mode,
                    static_cast<std::uint64_t>(fold_index));

    const auto outer_train = rows_except_fold(outer, static_cast<std::size_t>(fold_index));
    const auto& test_rows = outer.folds[static_cast<std::size_t>(fold_index)];
    const std::uint64_t inner_seed =
        fnv1a_mix(fnv1a(task.dataset_name, fnv1a_mix(0xcbf29ce484222325ULL, task.master_seed)),
                  static_cast<std::uint64_t>(fold_index));
    const auto inner = make_folds(labels_at(ds, outer_train), 9, inner_seed);

    // inner fold 0 is the early-stopping validation split; the other 8 train
    std::vector<std::size_t> valid_rows, train_rows;
    for (std::size_t f = 0; f < inner.folds.size(); ++f)
        for (std::size_t pos : inner.folds[f])
            (f == 0 ? valid_rows : train_rows).push_back(outer_train[pos]);
    std::sort(train_rows.begin(), train_rows.end());
    std::sort(valid_rows.begin(), valid_rows.end());

    result.best_config = default_config(task.method);
    try {
        auto prep = fit_preprocessor(ds, train_rows);
        auto train = apply_preprocessor(prep, ds, train_rows);
        auto valid = apply_preprocessor(prep, ds, valid_rows);
        Rng model_rng(fnv1a_mix(cell_seed, 2));
        auto model = build_model(task.method, result.best_config, snapshot_of(ds, prep),
                                 ds.n_classes, model_rng);
        auto report =
            train_model(*model, train, valid,
                        trial_train_config(task, result.best_config, fnv1a_mix(cell_seed, 7)));
        result.retrain_epochs = report.best_epoch;
        score_test_fold(*model, ds, prep, test_rows, result);
    } catch (const std::exception& e) {
        result.failed = true;
        result.failure_reason = e.what();
    }
    result.wall_time = elapsed_since(t0);
    return result;
}

DatasetResult aggregate(const std::vector<OuterFoldResult>& folds) {
    if (folds.empty()) throw InsufficientDataError("no fold results to aggregate");
    DatasetResult out;
    out.dataset = folds.front().dataset;
    out.method = folds.front().method;
    out.mode = folds.front().mode;
    out.folds = folds;
    std::sort(out.folds.begin(), out.folds.end(),
              [](const OuterFoldResult& a, const OuterFoldResult& b) {
                  return a.fold_index < b.fold_index;
              });
    double sum = 0.0;
    int successes = 0;
    for (const auto& f : out.folds) {
        if (f.failed) {
            ++out.n_failed_folds;
        } else {
            sum += f.test_auc;
            ++successes;
        }
    }
    if (successes == 0) {
        out.failed = true;
    } else {
        out.mean_test_auc = sum / static_cast<double>(successes);
    }
    return out;
}

// --------------------------------------------------------------------------
// Persistence
// --------------------------------------------------------------------------

namespace {

json trial_to_json(const TrialRecord& t) {
    return {{"config", t.config},
            {"failed", t.failed},
            {"failure_reason", t.failure_reason},
            {"objective", t.objective},
            {"duration_s", t.duration_s},
            {"inner_aucs", t.inner_aucs},
            {"inner_best_epochs", t.inner_best_epochs}};
}

TrialRecord trial_from_json(const json& j) {
    TrialRecord t;
    t.config = j.at("config").get<ConfigMap>();
    t.failed = j.at("failed").get<bool>();
    t.failure_reason = j.at("failure_reason").get<std::string>();
    t.objective = j.at("objective").get<double>();
    t.duration_s = j.at("duration_s").get<double>();
    t.inner_aucs = j.at("inner_aucs").get<std::vector<double>>();
    t.inner_best_epochs = j.at("inner_best_epochs").get<std::vector<int>>();
    return t;
}

}  // namespace

std::string fold_result_path(const std::string& out_dir, const OuterFoldResult& r) {
    return (fs::path(out_dir) / r.dataset / r.method / r.mode /
            ("fold" + std::to_string(r.fold_index) + ".json"))
        .string();
}

void save_fold_result(const std::string& out_dir, const OuterFoldResult& r) {
    json trials = json::array();
    for (const auto& t : r.trials) trials.push_back(trial_to_json(t));
    const json j = {{"dataset", r.dataset},
                    {"method", r.method},
                    {"mode", r.mode},
                    {"fold_index", r.fold_index},
                    {"failed", r.failed},
                    {"failure_reason", r.failure_reason},
                    {"best_config", r.best_config},
                    {"best_trial_index", r.best_trial_index},
                    {"retrain_epochs", r.retrain_epochs},
                    {"test_auc", r.test_auc},
                    {"test_error_rate", r.test_error_rate},
                    {"wall_time", r.wall_time},
                    {"trials", trials}};
    const fs::path path = fold_result_path(out_dir, r);
    fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        out << j.dump(2) << "\n";
        if (!out) throw StateError("failed to write " + tmp.string());
    }
    fs::rename(tmp, path);
}

OuterFoldResult load_fold_result(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw StateError("cannot open result file " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    OuterFoldResult r;
    r.dataset = j.at("dataset").get<std::string>();
    r.method = j.at("method").get<std::string>();
    r.mode = j.at("mode").get<std::string>();
    r.fold_index = j.at("fold_index").get<int>();
    r.failed = j.at("failed").get<bool>();
    r.failure_reason = j.at("failure_reason").get<std::string>();
    r.best_config = j.at("best_config").get<ConfigMap>();
    r.best_trial_index = j.at("best_trial_index").get<int>();
    r.retrain_epochs = j.at("retrain_epochs").get<int>();
    r.test_auc = j.at("test_auc").get<double>();
    r.test_error_rate = j.at("test_error_rate").get<double>();
    r.wall_time = j.at("wall_time").get<double>();
    for (const auto& t : j.at("trials")) r.trials.push_back(trial_from_json(t));
    return r;
}

// --------------------------------------------------------------------------
// Manifest execution
// --------------------------------------------------------------------------

RunManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open manifest " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    RunManifest m;
    try {
        for (const auto& d : j.at("datasets"))
            m.datasets.push_back({d.at("name").get<std::string>(),
                                  d.at("csv").get<std::string>(),
                                  d.at("schema").get<std::string>()});
        m.methods = j.at("methods").get<std::vector<std::string>>();
        m.mode = j.value("mode", std::string("tuned"));
        if (j.contains("budget")) {
            const auto& b = j.at("budget");
            m.budget.max_trials = b.value("max_trials", m.budget.max_trials);
            if (b.contains("max_hours"))
                m.budget.max_wall_clock = b.at("max_hours").get<double>() * 3600.0;
        }
        m.master_seed = j.value("master_seed", std::uint64_t{0});
        m.parallelism = j.value("parallelism", 1);
        m.out_dir = j.at("out_dir").get<std::string>();
        if (j.contains("train")) {
            const auto& t = j.at("train");
            m.train.batch_size = t.value("batch_size", m.train.batch_size);
            m.train.max_epochs = t.value("max_epochs", m.train.max_epochs);
            m.train.patience = t.value("patience", m.train.patience);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("manifest: ") + e.what());
    }
    if (m.datasets.empty()) throw ConfigError("manifest lists no datasets");
    if (m.methods.empty()) throw ConfigError("manifest lists no methods");
    for (const auto& method : m.methods)
        if (method != "resnext" && method != "resnet" && method != "ft")
            throw ConfigError("manifest: unknown method " + method);
    if (m.mode != "tuned" && m.mode != "default")
        throw ConfigError("manifest: mode must be tuned or default");
    if (m.parallelism < 1) throw ConfigError("manifest: parallelism must be positive");
    if (m.out_dir.empty()) throw ConfigError("manifest: out_dir required");
    return m;
}

ResultMatrix execute(const RunManifest& manifest, const ProgressFn& progress) {
    // resolve every dataset before scheduling anything
    std::vector<Dataset> datasets;
    std::vector<FoldPlan> plans;
    for (const auto& spec : manifest.datasets) {
        auto schema = load_schema(spec.schema);
        datasets.push_back(load_csv(spec.csv, schema, spec.name));
        plans.push_back(make_folds(datasets.back().labels, 10, manifest.master_seed));
    }

    struct Cell {
        std::size_t dataset;
        std::size_t method;
        int fold;
    };
    std::vector<Cell> cells;
    for (std::size_t d = 0; d < datasets.size(); ++d)
        for (std::size_t m = 0; m < manifest.methods.size(); ++m)
            for (int f = 0; f < 10; ++f) cells.push_back({d, m, f});

    std::vector<OuterFoldResult> results(cells.size());
    std::atomic<std::size_t> next{0};
    std::mutex progress_mutex;
    std::exception_ptr first_error;
    std::mutex error_mutex;

    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            const auto& cell = cells[i];
            try {
                BenchmarkTask task;
                task.dataset_name = manifest.datasets[cell.dataset].name;
                task.method = manifest.methods[cell.method];
                task.mode = manifest.mode;
                task.budget = manifest.budget;
                task.master_seed = manifest.master_seed;
                task.train = manifest.train;

                OuterFoldResult stub;
                stub.dataset = task.dataset_name;
                stub.method = task.method;
                stub.mode = task.mode;
                stub.fold_index = cell.fold;
                const std::string path = fold_result_path(manifest.out_dir, stub);

                bool resumed = false;
                OuterFoldResult r;
                if (fs::exists(path)) {
                    r = load_fold_result(path);
                    resumed = true;
                } else {
                    r = (task.mode == "tuned")
                            ? run_outer_fold(task, datasets[cell.dataset],
                                             plans[cell.dataset], cell.fold)
                            : run_default_fold(task, datasets[cell.dataset],
                                               plans[cell.dataset], cell.fold);
                    save_fold_result(manifest.out_dir, r);
                }
                if (progress) {
                    std::lock_guard<std::mutex> lock(progress_mutex);
                    progress(r, resumed);
                }
                results[i] = std::move(r);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };

    const int width = std::max(1, std::min<int>(manifest.parallelism,
                                                static_cast<int>(cells.size())));
    std::vector<std::thread> threads;
    for (int t = 0; t < width - 1; ++t) threads.emplace_back(worker);
    worker();
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);

    ResultMatrix matrix;
    matrix.methods = manifest.methods;
    for (const auto& spec : manifest.datasets) matrix.datasets.push_back(spec.name);
    matrix.values.assign(matrix.n_datasets(),
                         std::vector<std::optional<double>>(matrix.n_methods()));
    for (std::size_t d = 0; d < datasets.size(); ++d) {
        for (std::size_t m = 0; m < manifest.methods.size(); ++m) {
            std::vector<OuterFoldResult> folds;
            for (std::size_t i = 0; i < cells.size(); ++i)
                if (cells[i].dataset == d && cells[i].method == m)
                    folds.push_back(results[i]);
            auto agg = aggregate(folds);
            if (!agg.failed) matrix.values[d][m] = agg.mean_test_auc;
        }
    }
    return matrix;
}

void write_matrix_csv(const ResultMatrix& m, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw StateError("cannot write " + path);
    out << "dataset";
    for (const auto& method : m.methods) out << "," << method;
    out << "\n";
    for (std::size_t d = 0; d < m.n_datasets(); ++d) {
        out << m.datasets[d];
        for (const auto& v : m.values[d]) {
            out << ",";
            if (v) {
                char buf[32];
                std::snprintf(buf, sizeof buf, "%.6f", *v);
                out << buf;
            }
        }
        out << "\n";
    }
}

// --------------------------------------------------------------------------
// Results directory scanning
// --------------------------------------------------------------------------

ResultsStore load_results(const std::string& dir, const std::string& mode) {
    if (!fs::is_directory(dir)) throw ConfigError("results directory not found: " + dir);
    std::string use_mode = mode;
    if (use_mode.empty()) {
        // prefer tuned results when both modes are present
        use_mode = "default";
        for (const auto& d : fs::directory_iterator(dir)) {
            if (!d.is_directory()) continue;
            for (const auto& m : fs::directory_iterator(d.path()))
                if (m.is_directory() && fs::is_directory(m.path() / "tuned"))
                    use_mode = "tuned";
        }
    }

    ResultsStore store;
    store.mode = use_mode;
    std::set<std::string> datasets, methods;
    for (const auto& d : fs::directory_iterator(dir)) {
        if (!d.is_directory()) continue;
        const std::string dataset = d.path().filename().string();
        for (const auto& m : fs::directory_iterator(d.path())) {
            if (!m.is_directory()) continue;
            const std::string method = m.path().filename().string();
            const fs::path mode_dir = m.path() / use_mode;
            if (!fs::is_directory(mode_dir)) continue;
            std::vector<std::string> files;
            for (const auto& f : fs::directory_iterator(mode_dir))
                if (f.path().extension() == ".json") files.push_back(f.path().string());
            if (files.empty()) continue;
            std::sort(files.begin(), files.end());
            auto& cell = store.cells[{dataset, method}];
            for (const auto& f : files) cell.push_back(load_fold_result(f));
            datasets.insert(dataset);
            methods.insert(method);
        }
    }
    store.datasets.assign(datasets.begin(), datasets.end());
    store.methods.assign(methods.begin(), methods.end());
    if (store.cells.empty())
        throw InsufficientDataError("no results found under " + dir);
    return store;
}

ResultMatrix to_matrix(const ResultsStore& store) {
    ResultMatrix m;
    m.datasets = store.datasets;
    m.methods = store.methods;
    m.values.assign(m.n_datasets(), std::vector<std::optional<double>>(m.n_methods()));
    for (std::size_t d = 0; d < m.n_datasets(); ++d) {
        for (std::size_t j = 0; j < m.n_methods(); ++j) {
            auto it = store.cells.find({m.datasets[d], m.methods[j]});
            if (it == store.cells.end()) continue;
            auto agg = aggregate(it->second);
            if (!agg.failed) m.values[d][j] = agg.mean_test_auc;
        }
    }
    return m;
}

std::vector<std::vector<double>> wall_time_hours(const ResultsStore& store) {
    std::vector<std::vector<double>> out(store.methods.size());
    for (std::size_t j = 0; j < store.methods.size(); ++j) {
        for (const auto& dataset : store.datasets) {
            auto it = store.cells.find({dataset, store.methods[j]});
            if (it == store.cells.end()) continue;
            double total = 0.0;
            for (const auto& fold : it->second) total += fold.wall_time;
            out[j].push_back(total / 3600.0);
        }
    }
    return out;
}

}  // namespace bench
