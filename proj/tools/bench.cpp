#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#ifdef __GLIBC__
#include <malloc.h>
#endif
#include <fstream>
#include <iostream>

#include "bench/data.hpp"
#include "bench/metrics.hpp"
#include "bench/protocol.hpp"
#include "bench/stats.hpp"

extern "C" void openblas_set_num_threads(int);

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;    // configuration / usage error
constexpr int kExitPartial = 2;  // benchmark ran but some cells failed

std::string default_cache_dir() {
    if (const char* env = std::getenv("BENCH_CACHE_DIR")) return env;
    if (const char* home = std::getenv("HOME"))
        return (fs::path(home) / ".cache" / "bench").string();
    return ".bench_cache";
}

int cmd_run(const std::string& manifest_path, int max_trials, double max_hours,
            int parallelism, long long seed, const std::string& out_dir) {
    auto manifest = bench::load_manifest(manifest_path);
    if (max_trials > 0) manifest.budget.max_trials = max_trials;
    if (max_hours > 0) manifest.budget.max_wall_clock = max_hours * 3600.0;
    if (parallelism > 0) manifest.parallelism = parallelism;
    if (seed >= 0) manifest.master_seed = static_cast<std::uint64_t>(seed);
    if (!out_dir.empty()) manifest.out_dir = out_dir;

    bool any_failed = false;
    auto matrix = bench::execute(manifest, [&](const bench::OuterFoldResult& r, bool resumed) {
        any_failed = any_failed || r.failed;
        std::cerr << r.dataset << " " << r.method << " fold" << r.fold_index;
        if (r.failed)
            std::cerr << " FAILED (" << r.failure_reason << ")";
        else
            std::cerr << " auc=" << r.test_auc;
        std::cerr << " " << r.wall_time << "s" << (resumed ? " (resumed)" : "") << "\n";
    });
    for (const auto& row : matrix.values)
        for (const auto& v : row) any_failed = any_failed || !v.has_value();

    const std::string csv = (fs::path(manifest.out_dir) / "matrix.csv").string();
    bench::write_matrix_csv(matrix, csv);
    std::cerr << "matrix written to " << csv << "\n";
    return any_failed ? kExitPartial : kExitOk;
}

int cmd_rank(const std::string& results_dir, double alpha) {
    auto store = bench::load_results(results_dir);
    auto matrix = bench::to_matrix(store);
    auto summary = bench::rank_summary(matrix, alpha);
    auto stats = bench::summary_stats(matrix, bench::wall_time_hours(store));

    json report = {{"alpha", summary.alpha},
                   {"k", summary.k},
                   {"datasets_used", summary.rows_used},
                   {"datasets_dropped", summary.rows_dropped},
                   {"cd", summary.cd}};
    if (summary.friedman_valid) {
        report["chi2"] = summary.chi2;
        report["p"] = summary.p_value;
    }
    json ranks = json::object(), wins = json::object();
    for (std::size_t j = 0; j < store.methods.size(); ++j) {
        ranks[store.methods[j]] = summary.avg_ranks[j];
        wins[store.methods[j]] = summary.win_counts[j];
    }
    report["ranks"] = ranks;
    report["wins"] = wins;
    json groups = json::array();
    for (const auto& g : summary.groups) {
        json names = json::array();
        for (std::size_t j : g) names.push_back(store.methods[j]);
        groups.push_back(names);
    }
    report["groups"] = groups;
    const std::string report_path = (fs::path(results_dir) / "rank_report.json").string();
    std::ofstream(report_path) << report.dump(2) << "\n";

    // CD-diagram bar data: method, average rank, index of its first group
    const std::string cd_path = (fs::path(results_dir) / "cd_diagram.csv").string();
    {
        std::ofstream out(cd_path);
        out << "method,rank,group_id\n";
        for (std::size_t j = 0; j < store.methods.size(); ++j) {
            std::size_t group_id = 0;
            for (std::size_t g = 0; g < summary.groups.size(); ++g)
                if (std::find(summary.groups[g].begin(), summary.groups[g].end(), j) !=
                    summary.groups[g].end()) {
                    group_id = g;
                    break;
                }
            out << store.methods[j] << "," << summary.avg_ranks[j] << "," << group_id << "\n";
        }
    }

    const std::string summary_path = (fs::path(results_dir) / "summary.csv").string();
    {
        std::ofstream out(summary_path);
        out << "method,mean_rank,mean_auc,median_auc,mad,ci_low,ci_high,"
               "mean_wall_h,median_wall_h\n";
        for (const auto& s : stats)
            out << s.method << "," << s.mean_rank << "," << s.mean_auc << "," << s.median_auc
                << "," << s.mad << "," << s.ci_low << "," << s.ci_high << "," << s.mean_wall_h
                << "," << s.median_wall_h << "\n";
    }

    if (summary.friedman_valid)
        std::cout << "friedman chi2=" << summary.chi2 << " p=" << summary.p_value << " ";
    std::cout << "cd=" << summary.cd << " (k=" << summary.k << ", N=" << summary.rows_used
              << ")\n";
    std::cout << "method          rank    mean_auc  median_auc  mad       wins\n";
    for (std::size_t j = 0; j < store.methods.size(); ++j) {
        char line[160];
        std::snprintf(line, sizeof line, "%-15s %-7.3f %-9.4f %-11.4f %-9.4f %d",
                      stats[j].method.c_str(), stats[j].mean_rank, stats[j].mean_auc,
                      stats[j].median_auc, stats[j].mad, summary.win_counts[j]);
        std::cout << line << "\n";
    }
    std::cerr << "wrote " << report_path << ", " << cd_path << ", " << summary_path << "\n";
    return kExitOk;
}

int cmd_adtm(const std::string& results_dir, int n_trials) {
    auto store = bench::load_results(results_dir);
    std::vector<bench::AdtmGroup> groups;
    std::map<std::pair<std::string, int>, bench::AdtmGroup> by_cell;
    for (const auto& [key, folds] : store.cells)
        for (const auto& fold : folds) {
            std::vector<double> trajectory;
            for (const auto& t : fold.trials)
                if (!t.failed) trajectory.push_back(t.objective);
            if (!trajectory.empty())
                by_cell[{key.first, fold.fold_index}].by_method[key.second] =
                    std::move(trajectory);
        }
    for (auto& [cell, group] : by_cell) groups.push_back(std::move(group));
    if (groups.empty()) {
        std::cerr << "no trial histories found under " << results_dir << "\n";
        return kExitUsage;
    }

    auto curves = bench::adtm_curves(groups, static_cast<std::size_t>(n_trials));
    const std::string path = (fs::path(results_dir) / "adtm.csv").string();
    std::ofstream out(path);
    out << "trial";
    for (const auto& [method, curve] : curves) out << "," << method;
    out << "\n";
    for (int t = 0; t < n_trials; ++t) {
        out << (t + 1);
        for (const auto& [method, curve] : curves) out << "," << curve[static_cast<std::size_t>(t)];
        out << "\n";
    }
    std::cerr << "wrote " << path << "\n";
    return kExitOk;
}

int cmd_compare(const std::string& results_dir, const std::string& a, const std::string& b) {
    auto store = bench::load_results(results_dir);
    for (const auto& m : {a, b})
        if (std::find(store.methods.begin(), store.methods.end(), m) == store.methods.end()) {
            std::cerr << "method " << m << " not present in results\n";
            return kExitUsage;
        }

    const std::string path =
        (fs::path(results_dir) / ("compare_" + a + "_vs_" + b + ".csv")).string();
    std::ofstream out(path);
    out << "dataset,error_rate_" << a << ",error_rate_" << b << ",auc_" << a << ",auc_" << b
        << "\n";
    for (const auto& dataset : store.datasets) {
        auto mean_of = [&](const std::string& method, auto field) -> std::optional<double> {
            auto it = store.cells.find({dataset, method});
            if (it == store.cells.end()) return std::nullopt;
            double sum = 0;
            int n = 0;
            for (const auto& fold : it->second)
                if (!fold.failed) {
                    sum += field(fold);
                    ++n;
                }
            if (n == 0) return std::nullopt;
            return sum / n;
        };
        auto err = [](const bench::OuterFoldResult& f) { return f.test_error_rate; };
        auto auc = [](const bench::OuterFoldResult& f) { return f.test_auc; };
        auto ea = mean_of(a, err), eb = mean_of(b, err);
        auto aa = mean_of(a, auc), ab = mean_of(b, auc);
        if (!ea || !eb || !aa || !ab) continue;
        out << dataset << "," << *ea << "," << *eb << "," << *aa << "," << *ab << "\n";
    }
    std::cerr << "wrote " << path << "\n";
    return kExitOk;
}

int cmd_fetch(const std::string& url, const std::string& cache) {
    const std::string dir = cache.empty() ? default_cache_dir() : cache;
    std::cout << bench::fetch_dataset(url, dir) << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    openblas_set_num_threads(1);  // keep numeric results independent of core count
#ifdef __GLIBC__
    // Pin the mmap threshold so freed weight matrices are returned to the OS;
    // with the dynamic default, long runs accumulate gigabytes of retained heap.
    mallopt(M_MMAP_THRESHOLD, 1 << 18);
    mallopt(M_ARENA_MAX, 2);
#endif
    CLI::App app{"tabular deep-learning benchmark harness"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "execute a benchmark manifest");
    std::string manifest_path, out_dir;
    int max_trials = 0, parallelism = 0, adtm_trials = 100;
    double max_hours = 0, alpha = 0.05;
    long long seed = -1;
    run->add_option("--manifest", manifest_path, "manifest JSON path")->required();
    run->add_option("--max-trials", max_trials, "override trial budget");
    run->add_option("--max-hours", max_hours, "override wall-clock budget (hours)");
    run->add_option("--parallelism", parallelism, "concurrent cells");
    run->add_option("--seed", seed, "override master seed");
    run->add_option("--out", out_dir, "override output directory");

    std::string results_dir, url, cache, method_a, method_b;
    auto* rank = app.add_subcommand("rank", "rank methods across datasets");
    rank->add_option("--results", results_dir, "results directory")->required();
    rank->add_option("--alpha", alpha, "significance level");

    auto* adtm = app.add_subcommand("adtm", "export tuning trajectories");
    adtm->add_option("--results", results_dir, "results directory")->required();
    adtm->add_option("--trials", adtm_trials, "trajectory length");

    auto* compare = app.add_subcommand("compare", "one-vs-one dataset scatter data");
    compare->add_option("--results", results_dir, "results directory")->required();
    compare->add_option("--a", method_a, "first method")->required();
    compare->add_option("--b", method_b, "second method")->required();

    auto* fetch = app.add_subcommand("fetch", "download a dataset into the cache");
    fetch->add_option("--url", url, "dataset URL")->required();
    fetch->add_option("--cache", cache, "cache directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (run->parsed())
            return cmd_run(manifest_path, max_trials, max_hours, parallelism, seed, out_dir);
        if (rank->parsed()) return cmd_rank(results_dir, alpha);
        if (adtm->parsed()) return cmd_adtm(results_dir, adtm_trials);
        if (compare->parsed()) return cmd_compare(results_dir, method_a, method_b);
        if (fetch->parsed()) return cmd_fetch(url, cache);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
