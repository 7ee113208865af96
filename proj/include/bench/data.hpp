#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bench/core.hpp"

namespace bench {

enum class ColumnKind { numeric, categorical, target };

struct ColumnSchema {
    std::string name;
    ColumnKind kind = ColumnKind::numeric;
    // Fixed label order for categorical/target columns; empty means labels
    // are collected from the file in sorted order.
    std::vector<std::string> categories;
};

// Column-typed tabular data. Missing numeric cells are stored as NaN;
// categorical cells hold 1-based global label indices with 0 reserved for
// missing/unknown.
struct Dataset {
    std::string name;
    Matrix numeric;                          // rows × n_num, NaN = missing
    std::vector<std::vector<int>> categorical;  // n_cat columns of length rows
    std::vector<int> labels;
    int n_classes = 0;
    std::vector<int> cat_cardinalities;      // distinct labels per column (excl. 0)
    std::vector<std::string> target_labels;

    std::size_t rows() const { return labels.size(); }
    std::size_t n_num() const { return numeric.cols; }
    std::size_t n_cat() const { return categorical.size(); }
};

struct FoldPlan {
    std::vector<std::vector<std::size_t>> folds;
    std::uint64_t seed = 0;
    bool stratified = true;
};

struct PreprocessorState {
    std::vector<double> mean;
    std::vector<double> sd;      // clamped at 1e-8
    std::vector<double> median;  // imputation value per numeric column
    // Per categorical column: global label index -> train-local embedding
    // index (1-based); anything unmapped falls to 0.
    std::vector<std::vector<int>> cat_map;
    std::vector<int> cat_seen;   // distinct categories observed at fit time
};

std::vector<ColumnSchema> load_schema(const std::string& path);
Dataset load_csv(const std::string& path, const std::vector<ColumnSchema>& schema,
                 const std::string& dataset_name = "");

// Stratified k-fold partition, deterministic in (labels, k, seed). Per class,
// fold sizes differ by at most one.
FoldPlan make_folds(const std::vector<int>& labels, std::size_t k, std::uint64_t seed);

PreprocessorState fit_preprocessor(const Dataset& ds,
                                   const std::vector<std::size_t>& train_rows);

struct PreparedRows {
    Matrix numeric;                          // standardized, imputed
    std::vector<std::vector<int>> categorical;  // train-local indices
    std::vector<int> labels;
};

PreparedRows apply_preprocessor(const PreprocessorState& state, const Dataset& ds,
                                const std::vector<std::size_t>& rows);

// Downloads url into <cache_dir>/<sha256(url)>/data.csv once; later calls
// return the cached path. A corrupted cache entry (content hash mismatch) is
// re-downloaded.
std::string fetch_dataset(const std::string& url, const std::string& cache_dir);

std::string sha256_hex(const std::string& bytes);

}  // namespace bench
