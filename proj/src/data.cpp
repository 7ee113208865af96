#include "bench/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace bench {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

}  // namespace

std::vector<ColumnSchema> load_schema(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("schema file not readable: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("schema JSON parse failure in " + path + ": " + e.what());
    }
    if (!j.is_array()) throw SchemaError("schema must be a JSON array of columns");
    std::vector<ColumnSchema> schema;
    for (const auto& col : j) {
        ColumnSchema c;
        c.name = col.at("name").get<std::string>();
        const auto kind = col.at("kind").get<std::string>();
        if (kind == "numeric")
            c.kind = ColumnKind::numeric;
        else if (kind == "categorical")
            c.kind = ColumnKind::categorical;
        else if (kind == "target")
            c.kind = ColumnKind::target;
        else
            throw SchemaError("unknown column kind: " + kind);
        if (col.contains("categories"))
            c.categories = col["categories"].get<std::vector<std::string>>();
        schema.push_back(std::move(c));
    }
    return schema;
}

Dataset load_csv(const std::string& path, const std::vector<ColumnSchema>& schema,
                 const std::string& dataset_name) {
    std::size_t n_target = 0, n_feature = 0;
    for (const auto& c : schema) {
        n_target += c.kind == ColumnKind::target;
        n_feature += c.kind != ColumnKind::target;
        if (c.kind == ColumnKind::categorical) {
            std::vector<std::string> sorted = c.categories;
            std::sort(sorted.begin(), sorted.end());
            if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
                throw SchemaError("duplicate category label in column " + c.name);
        }
    }
    if (n_target != 1) throw SchemaError("schema must declare exactly one target column");
    if (n_feature == 0) throw SchemaError("schema must declare at least one feature");

    std::ifstream in(path);
    if (!in) throw ParseError("CSV file not readable: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty CSV file: " + path);
    auto header = split_csv_line(line);
    if (header.size() != schema.size())
        throw SchemaError("header column count does not match schema");
    for (std::size_t i = 0; i < schema.size(); ++i)
        if (header[i] != schema[i].name)
            throw SchemaError("header column '" + header[i] + "' does not match schema '" +
                              schema[i].name + "'");

    std::vector<std::vector<double>> num_cols;
    std::vector<std::vector<std::string>> cat_cols;
    std::vector<const ColumnSchema*> cat_schema;
    std::vector<std::string> target_raw;
    std::size_t target_idx = 0;
    std::vector<int> col_slot(schema.size());  // index into num_cols/cat_cols
    for (std::size_t i = 0; i < schema.size(); ++i) {
        switch (schema[i].kind) {
            case ColumnKind::numeric:
                col_slot[i] = static_cast<int>(num_cols.size());
                num_cols.emplace_back();
                break;
            case ColumnKind::categorical:
                col_slot[i] = static_cast<int>(cat_cols.size());
                cat_cols.emplace_back();
                cat_schema.push_back(&schema[i]);
                break;
            case ColumnKind::target:
                target_idx = i;
                break;
        }
    }

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != schema.size())
            throw ParseError(path + ":" + std::to_string(line_no) +
                             ": expected " + std::to_string(schema.size()) +
                             " fields, found " + std::to_string(fields.size()));
        for (std::size_t i = 0; i < schema.size(); ++i) {
            const auto& cell = fields[i];
            switch (schema[i].kind) {
                case ColumnKind::numeric: {
                    if (cell.empty() || cell == "?") {
                        num_cols[col_slot[i]].push_back(
                            std::numeric_limits<double>::quiet_NaN());
                    } else {
                        try {
                            std::size_t pos = 0;
                            const double v = std::stod(cell, &pos);
                            if (pos != cell.size()) throw std::invalid_argument(cell);
                            num_cols[col_slot[i]].push_back(v);
                        } catch (const std::exception&) {
                            throw ParseError(path + ":" + std::to_string(line_no) +
                                             ": bad numeric value '" + cell + "'");
                        }
                    }
                    break;
                }
                case ColumnKind::categorical:
                    cat_cols[col_slot[i]].push_back(cell);
                    break;
                case ColumnKind::target:
                    if (cell.empty())
                        throw SchemaError(path + ":" + std::to_string(line_no) +
                                          ": missing target label");
                    target_raw.push_back(cell);
                    break;
            }
        }
    }
    const std::size_t rows = target_raw.size();

    Dataset ds;
    ds.name = dataset_name.empty() ? path : dataset_name;

    // target labels: declared order wins, otherwise sorted observed labels
    std::vector<std::string> tlabels = schema[target_idx].categories;
    if (tlabels.empty()) {
        tlabels.assign(target_raw.begin(), target_raw.end());
        std::sort(tlabels.begin(), tlabels.end());
        tlabels.erase(std::unique(tlabels.begin(), tlabels.end()), tlabels.end());
    }
    std::map<std::string, int> tmap;
    for (std::size_t i = 0; i < tlabels.size(); ++i)
        tmap[tlabels[i]] = static_cast<int>(i);
    ds.labels.reserve(rows);
    for (const auto& s : target_raw) {
        auto it = tmap.find(s);
        if (it == tmap.end()) throw SchemaError("unknown target label '" + s + "'");
        ds.labels.push_back(it->second);
    }
    ds.n_classes = static_cast<int>(tlabels.size());
    ds.target_labels = std::move(tlabels);
    if (ds.n_classes < 2) throw SchemaError("target must have at least 2 classes");

    ds.numeric = Matrix(rows, num_cols.size());
    for (std::size_t j = 0; j < num_cols.size(); ++j)
        for (std::size_t i = 0; i < rows; ++i) ds.numeric(i, j) = num_cols[j][i];

    for (std::size_t j = 0; j < cat_cols.size(); ++j) {
        std::vector<std::string> cats = cat_schema[j]->categories;
        if (cats.empty()) {
            for (const auto& s : cat_cols[j])
                if (!s.empty() && s != "?") cats.push_back(s);
            std::sort(cats.begin(), cats.end());
            cats.erase(std::unique(cats.begin(), cats.end()), cats.end());
        }
        std::map<std::string, int> cmap;
        for (std::size_t c = 0; c < cats.size(); ++c)
            cmap[cats[c]] = static_cast<int>(c) + 1;  // 0 = missing/unknown
        std::vector<int> col(rows);
        for (std::size_t i = 0; i < rows; ++i) {
            auto it = cmap.find(cat_cols[j][i]);
            col[i] = it == cmap.end() ? 0 : it->second;
        }
        ds.categorical.push_back(std::move(col));
        ds.cat_cardinalities.push_back(static_cast<int>(cats.size()));
    }
    return ds;
}

FoldPlan make_folds(const std::vector<int>& labels, std::size_t k, std::uint64_t seed) {
    if (k < 2) throw ConfigError("make_folds: k must be at least 2");
    if (k > labels.size()) throw ConfigError("make_folds: k exceeds row count");

    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

    FoldPlan plan;
    plan.seed = seed;
    plan.stratified = true;
    plan.folds.assign(k, {});
    Rng rng(seed);
    std::size_t next = 0;
    for (auto& [cls, idx] : by_class) {
        (void)cls;
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t i : idx) plan.folds[next++ % k].push_back(i);
    }
    for (auto& f : plan.folds) std::sort(f.begin(), f.end());
    return plan;
}

PreprocessorState fit_preprocessor(const Dataset& ds,
                                   const std::vector<std::size_t>& train_rows) {
    if (train_rows.empty()) throw ConfigError("fit_preprocessor: no training rows");
    PreprocessorState st;
    const std::size_t n_num = ds.n_num();
    st.mean.resize(n_num);
    st.sd.resize(n_num);
    st.median.resize(n_num);
    for (std::size_t j = 0; j < n_num; ++j) {
        std::vector<double> vals;
        vals.reserve(train_rows.size());
        for (std::size_t r : train_rows) {
            const double v = ds.numeric(r, j);
            if (!std::isnan(v)) vals.push_back(v);
        }
        if (vals.empty()) {
            st.mean[j] = 0.0;
            st.sd[j] = 1e-8;
            st.median[j] = 0.0;
            continue;
        }
        double mean = std::accumulate(vals.begin(), vals.end(), 0.0) /
                      static_cast<double>(vals.size());
        double sq = 0;
        for (double v : vals) sq += (v - mean) * (v - mean);
        const double sd = std::sqrt(sq / static_cast<double>(vals.size()));
        std::sort(vals.begin(), vals.end());
        const std::size_t n = vals.size();
        st.mean[j] = mean;
        st.sd[j] = std::max(sd, 1e-8);
        st.median[j] = n % 2 ? vals[n / 2] : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
    }
    for (std::size_t c = 0; c < ds.n_cat(); ++c) {
        std::vector<int> seen;
        for (std::size_t r : train_rows) {
            const int g = ds.categorical[c][r];
            if (g != 0) seen.push_back(g);
        }
        std::sort(seen.begin(), seen.end());
        seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
        std::vector<int> map(static_cast<std::size_t>(ds.cat_cardinalities[c]) + 1, 0);
        for (std::size_t i = 0; i < seen.size(); ++i)
            map[static_cast<std::size_t>(seen[i])] = static_cast<int>(i) + 1;
        st.cat_map.push_back(std::move(map));
        st.cat_seen.push_back(static_cast<int>(seen.size()));
    }
    return st;
}

PreparedRows apply_preprocessor(const PreprocessorState& state, const Dataset& ds,
                                const std::vector<std::size_t>& rows) {
    PreparedRows out;
    const std::size_t n_num = ds.n_num();
    out.numeric = Matrix(rows.size(), n_num);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < n_num; ++j) {
            double v = ds.numeric(rows[i], j);
            if (std::isnan(v)) v = state.median[j];
            out.numeric(i, j) = (v - state.mean[j]) / state.sd[j];
        }
    out.categorical.resize(ds.n_cat());
    for (std::size_t c = 0; c < ds.n_cat(); ++c) {
        out.categorical[c].resize(rows.size());
        for (std::size_t i = 0; i < rows.size(); ++i)
            out.categorical[c][i] =
                state.cat_map[c][static_cast<std::size_t>(ds.categorical[c][rows[i]])];
    }
    out.labels.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) out.labels[i] = ds.labels[rows[i]];
    return out;
}

}  // namespace bench
