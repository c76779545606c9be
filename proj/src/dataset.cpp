#include "cadgmm/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "cadgmm/container.hpp"
#include "cadgmm/rng.hpp"

namespace cadgmm {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    return s.substr(b, e - b);
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            out.push_back(trim(line.substr(start)));
            break;
        }
        out.push_back(trim(line.substr(start, comma - start)));
        start = comma + 1;
    }
    return out;
}

std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    if (trim(value).empty()) return out;
    for (const std::string& tok : split_csv_line(value)) out.push_back(tok);
    return out;
}

std::string join_list(const std::vector<std::string>& items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += ',';
        out += items[i];
    }
    return out;
}

std::uint64_t parse_u64(const std::string& value, const std::string& what) {
    std::uint64_t v = 0;
    const std::string t = trim(value);
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size()) {
        throw ParseError(what + ": \"" + value + "\" is not a nonnegative integer");
    }
    return v;
}

long parse_long(const std::string& value, const std::string& what) {
    long v = 0;
    const std::string t = trim(value);
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size()) {
        throw ParseError(what + ": \"" + value + "\" is not an integer");
    }
    return v;
}

bool parse_bool(const std::string& value, const std::string& what) {
    const std::string t = trim(value);
    if (t == "true" || t == "1") return true;
    if (t == "false" || t == "0") return false;
    throw ParseError(what + ": \"" + value + "\" is not a boolean");
}

double parse_number(const std::string& token, std::size_t line_no, std::size_t column) {
    std::string t = token;
    if (!t.empty() && t[0] == '+') t = t.substr(1);
    double v = 0.0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size() || !std::isfinite(v)) {
        throw ParseError("line " + std::to_string(line_no) + ", column " +
                         std::to_string(column) + ": cannot parse \"" + token +
                         "\" as a finite number");
    }
    return v;
}

/// Streams data rows of a CSV file: skips blank lines and the header, hands
/// (line_no, tokens) to the callback, enforces consistent arity.
template <typename Fn>
std::size_t scan_csv(const DatasetRecipe& recipe, std::size_t& arity, Fn&& fn) {
    std::ifstream file(recipe.source_path);
    if (!file) throw ParseError("cannot open " + recipe.source_path);
    std::string line;
    std::size_t line_no = 0, rows = 0;
    bool header_pending = recipe.has_header;
    while (std::getline(file, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        if (header_pending) {
            header_pending = false;
            continue;
        }
        std::vector<std::string> tokens = split_csv_line(line);
        if (arity == 0) {
            arity = tokens.size();
        } else if (tokens.size() != arity) {
            throw ParseError(recipe.source_path + ", line " + std::to_string(line_no) + ": " +
                             std::to_string(tokens.size()) + " fields, expected " +
                             std::to_string(arity));
        }
        fn(line_no, tokens);
        ++rows;
    }
    return rows;
}

}  // namespace

DatasetRecipe DatasetRecipe::parse(const std::string& text, const std::string& origin) {
    DatasetRecipe r;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    bool saw_source = false;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw ParseError(origin + ", line " + std::to_string(line_no) +
                             ": expected key = value");
        }
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        const std::string where = origin + ", line " + std::to_string(line_no);
        if (key == "source") {
            r.source_path = value;
            saw_source = true;
        } else if (key == "has_header") {
            r.has_header = parse_bool(value, where);
        } else if (key == "label_column") {
            r.label_column = parse_long(value, where);
        } else if (key == "anomaly_values") {
            r.anomaly_values = split_list(value);
        } else if (key == "categorical_columns") {
            r.categorical_columns.clear();
            for (const std::string& tok : split_list(value)) {
                r.categorical_columns.push_back(parse_u64(tok, where));
            }
        } else if (key == "missing_token") {
            r.missing_token = value;
        } else if (key == "expected_features") {
            r.expected_features = parse_u64(value, where);
        } else if (key.rfind("vocab.", 0) == 0) {
            const std::size_t col = parse_u64(key.substr(6), where);
            r.vocab[col] = split_list(value);
        } else {
            throw ParseError(where + ": unknown recipe key \"" + key + "\"");
        }
    }
    if (!saw_source) throw ParseError(origin + ": recipe has no source entry");
    if (r.anomaly_values.empty()) {
        throw ParseError(origin + ": recipe has no anomaly_values entry");
    }
    return r;
}

DatasetRecipe DatasetRecipe::load(const std::string& path) {
    std::ifstream file(path);
    if (!file) throw ParseError("cannot open recipe " + path);
    std::ostringstream buf;
    buf << file.rdbuf();
    return parse(buf.str(), path);
}

std::string DatasetRecipe::to_text() const {
    std::ostringstream out;
    out << "source = " << source_path << '\n';
    out << "has_header = " << (has_header ? "true" : "false") << '\n';
    out << "label_column = " << label_column << '\n';
    out << "anomaly_values = " << join_list(anomaly_values) << '\n';
    std::string cats;
    for (std::size_t i = 0; i < categorical_columns.size(); ++i) {
        if (i) cats += ',';
        cats += std::to_string(categorical_columns[i]);
    }
    out << "categorical_columns = " << cats << '\n';
    out << "missing_token = " << missing_token << '\n';
    out << "expected_features = " << expected_features << '\n';
    for (const auto& [col, values] : vocab) {
        out << "vocab." << col << " = " << join_list(values) << '\n';
    }
    return out.str();
}

void DatasetRecipe::save(const std::string& path) const {
    std::ofstream file(path, std::ios::trunc);
    if (!file) throw ParseError("cannot write recipe " + path);
    file << to_text();
    if (!file) throw ParseError("write failed for recipe " + path);
}

double LabeledDataset::anomaly_ratio() const {
    if (labels.empty()) return 0.0;
    std::size_t anomalies = 0;
    for (std::uint8_t l : labels) anomalies += l;
    return static_cast<double>(anomalies) / static_cast<double>(labels.size());
}

std::uint64_t LabeledDataset::fingerprint() const {
    std::uint64_t h = fnv1a(&n_rows, sizeof(n_rows));
    h = fnv1a(&n_features, sizeof(n_features), h);
    h = fnv1a(features.data(), features.size() * sizeof(double), h);
    h = fnv1a(labels.data(), labels.size(), h);
    return h;
}

LabeledDataset load_and_encode(const DatasetRecipe& recipe) {
    const bool learn_vocab = recipe.vocab.empty();
    std::map<std::size_t, std::vector<std::string>> vocab = recipe.vocab;
    std::map<std::size_t, std::unordered_map<std::string, std::size_t>> vocab_index;
    for (const auto& [col, values] : vocab) {
        auto& idx = vocab_index[col];
        for (std::size_t i = 0; i < values.size(); ++i) idx.emplace(values[i], i);
    }
    auto is_categorical = [&](std::size_t col) {
        return std::find(recipe.categorical_columns.begin(), recipe.categorical_columns.end(),
                         col) != recipe.categorical_columns.end();
    };

    // First scan: arity, row count, and (when not preset) the vocabularies
    // in first-appearance order.
    std::size_t arity = 0;
    std::size_t label_idx = 0;
    bool label_checked = false;
    const std::size_t rows = scan_csv(recipe, arity, [&](std::size_t line_no,
                                                         const std::vector<std::string>& tok) {
        if (!label_checked) {
            label_checked = true;
            const long lc = recipe.label_column;
            if (lc >= 0 && static_cast<std::size_t>(lc) >= arity) {
                throw ParseError(recipe.source_path + ": label_column " + std::to_string(lc) +
                                 " out of range for " + std::to_string(arity) + " fields");
            }
            label_idx = lc < 0 ? arity - 1 : static_cast<std::size_t>(lc);
            for (std::size_t c : recipe.categorical_columns) {
                if (c >= arity) {
                    throw ParseError(recipe.source_path + ": categorical column " +
                                     std::to_string(c) + " out of range for " +
                                     std::to_string(arity) + " fields");
                }
                if (c == label_idx) {
                    throw ParseError(recipe.source_path + ": categorical column " +
                                     std::to_string(c) + " is the label column");
                }
            }
        }
        if (!learn_vocab) return;
        for (std::size_t c : recipe.categorical_columns) {
            const std::string& t = tok[c];
            if (t == recipe.missing_token) continue;
            auto& idx = vocab_index[c];
            if (idx.emplace(t, idx.size()).second) vocab[c].push_back(t);
        }
        (void)line_no;
    });
    if (rows == 0) throw ParseError(recipe.source_path + ": no data rows");
    for (std::size_t c : recipe.categorical_columns) {
        vocab.try_emplace(c);  // all-missing categorical column: zero-width block
        vocab_index.try_emplace(c);
    }

    // Encoded layout: raw column order, continuous = 1 slot, categorical =
    // one slot per vocabulary entry.
    std::vector<std::size_t> offset(arity, 0);
    std::size_t f = 0;
    for (std::size_t c = 0; c < arity; ++c) {
        if (c == label_idx) continue;
        offset[c] = f;
        f += is_categorical(c) ? vocab[c].size() : 1;
    }
    if (recipe.expected_features != 0 && f != recipe.expected_features) {
        throw ParseError(recipe.source_path + ": encoded to " + std::to_string(f) +
                         " features, recipe expects " +
                         std::to_string(recipe.expected_features));
    }

    LabeledDataset ds;
    ds.n_rows = rows;
    ds.n_features = f;
    ds.features.assign(rows * f, 0.0);
    ds.labels.assign(rows, 0);
    ds.recipe = recipe;
    ds.recipe.vocab = vocab;

    std::map<std::size_t, std::size_t> unknown_counts;
    std::size_t arity2 = arity;
    std::size_t row = 0;
    scan_csv(recipe, arity2, [&](std::size_t line_no, const std::vector<std::string>& tok) {
        double* dst = ds.features.data() + row * f;
        for (std::size_t c = 0; c < arity; ++c) {
            const std::string& t = tok[c];
            if (c == label_idx) {
                ds.labels[row] = std::find(recipe.anomaly_values.begin(),
                                           recipe.anomaly_values.end(),
                                           t) != recipe.anomaly_values.end()
                                     ? 1
                                     : 0;
            } else if (is_categorical(c)) {
                if (t == recipe.missing_token) continue;  // zero block
                const auto& idx = vocab_index[c];
                auto it = idx.find(t);
                if (it == idx.end()) {
                    ++unknown_counts[c];  // zero block for out-of-vocabulary value
                } else {
                    dst[offset[c] + it->second] = 1.0;
                }
            } else {
                dst[offset[c]] = t == recipe.missing_token
                                     ? std::numeric_limits<double>::quiet_NaN()
                                     : parse_number(t, line_no, c);
            }
        }
        ++row;
    });
    for (const auto& [col, count] : unknown_counts) {
        std::cerr << "warning: " << recipe.source_path << ": column " << col << ": " << count
                  << " value(s) outside the recipe vocabulary encoded as zero blocks\n";
    }
    return ds;
}

SplitInfo split_train_test(const LabeledDataset& ds, std::uint64_t seed) {
    std::vector<std::uint32_t> order(ds.n_rows);
    for (std::size_t i = 0; i < ds.n_rows; ++i) order[i] = static_cast<std::uint32_t>(i);
    SeededRng rng = SeededRng(seed).substream("split");
    rng.shuffle(order);
    const std::size_t train_count = ds.n_rows / 2;
    SplitInfo split;
    for (std::size_t i = 0; i < ds.n_rows; ++i) {
        if (i < train_count) {
            (ds.labels[order[i]] ? split.held_anomalies : split.train_rows).push_back(order[i]);
        } else {
            split.test_rows.push_back(order[i]);
        }
    }
    return split;
}

FeatureStats compute_stats(const LabeledDataset& ds, std::span<const std::uint32_t> rows) {
    const std::size_t f = ds.n_features;
    FeatureStats stats;
    stats.col_min.assign(f, 0.0);
    stats.col_max.assign(f, 0.0);
    stats.col_mean.assign(f, 0.0);
    std::vector<double> sum(f, 0.0);
    std::vector<std::size_t> count(f, 0);
    std::vector<bool> seen(f, false);
    for (std::uint32_t r : rows) {
        if (r >= ds.n_rows) {
            throw ShapeError("compute_stats: row " + std::to_string(r) + " out of range");
        }
        const double* src = ds.features.data() + static_cast<std::size_t>(r) * f;
        for (std::size_t c = 0; c < f; ++c) {
            const double v = src[c];
            if (std::isnan(v)) continue;
            if (!seen[c]) {
                seen[c] = true;
                stats.col_min[c] = v;
                stats.col_max[c] = v;
            } else {
                stats.col_min[c] = std::min(stats.col_min[c], v);
                stats.col_max[c] = std::max(stats.col_max[c], v);
            }
            sum[c] += v;
            ++count[c];
        }
    }
    for (std::size_t c = 0; c < f; ++c) {
        stats.col_mean[c] = count[c] ? sum[c] / static_cast<double>(count[c]) : 0.0;
    }
    return stats;
}

NormalizedView::NormalizedView(const LabeledDataset& ds, const FeatureStats& stats,
                               std::vector<std::uint32_t> rows)
    : ds_(&ds), stats_(stats), rows_(std::move(rows)) {
    if (stats_.dim() != ds.n_features) {
        throw ShapeError("NormalizedView: stats dim " + std::to_string(stats_.dim()) +
                         " vs dataset features " + std::to_string(ds.n_features));
    }
    for (std::uint32_t r : rows_) {
        if (r >= ds.n_rows) {
            throw ShapeError("NormalizedView: row " + std::to_string(r) + " out of range");
        }
    }
}

Matrix NormalizedView::gather(std::span<const std::uint32_t> view_rows) const {
    const std::size_t f = ds_->n_features;
    Matrix out(view_rows.size(), f);
    for (std::size_t i = 0; i < view_rows.size(); ++i) {
        if (view_rows[i] >= rows_.size()) {
            throw ShapeError("NormalizedView: view row " + std::to_string(view_rows[i]) +
                             " out of range " + std::to_string(rows_.size()));
        }
        const double* src =
            ds_->features.data() + static_cast<std::size_t>(rows_[view_rows[i]]) * f;
        double* dst = out.row(i);
        for (std::size_t c = 0; c < f; ++c) {
            double v = src[c];
            if (std::isnan(v)) v = stats_.col_mean[c];
            const double range = stats_.col_max[c] - stats_.col_min[c];
            v = range > 0.0 ? (v - stats_.col_min[c]) / range : 0.0;
            dst[c] = std::clamp(v, 0.0, 1.0);
        }
    }
    return out;
}

std::vector<std::uint32_t> noise_injected_rows(const SplitInfo& split, double ratio,
                                               std::uint64_t seed) {
    if (ratio < 0.0 || ratio >= 1.0) {
        throw NumericError("noise_injected_rows: ratio " + std::to_string(ratio) +
                           " outside [0,1)");
    }
    std::vector<std::uint32_t> stream = split.train_rows;
    if (ratio == 0.0) return stream;
    const double n_n = static_cast<double>(split.train_rows.size());
    const auto n_a = static_cast<std::size_t>(std::llround(ratio * n_n / (1.0 - ratio)));
    if (n_a > split.held_anomalies.size()) {
        throw NumericError("noise_injected_rows: need " + std::to_string(n_a) +
                           " anomalies for ratio " + std::to_string(ratio) + ", pool has " +
                           std::to_string(split.held_anomalies.size()));
    }
    std::vector<std::uint32_t> pool = split.held_anomalies;
    SeededRng rng = SeededRng(seed).substream("inject");
    rng.shuffle(pool);
    stream.insert(stream.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_a));
    return stream;
}

void save_dataset_cache(const std::string& path, const DatasetCache& cache) {
    ContainerWriter w(path);
    w.put_string("kind", "dataset_cache");
    w.put_u64("seed", cache.seed);
    w.put_u64("rows", cache.ds.n_rows);
    w.put_u64("features", cache.ds.n_features);
    w.put_f64_array("data", cache.ds.features);
    w.put_u8_array("labels", cache.ds.labels);
    w.put_string("recipe", cache.ds.recipe.to_text());
    w.put_u32_array("split.train", cache.split.train_rows);
    w.put_u32_array("split.held", cache.split.held_anomalies);
    w.put_u32_array("split.test", cache.split.test_rows);
    w.put_f64_array("stats.min", cache.stats.col_min);
    w.put_f64_array("stats.max", cache.stats.col_max);
    w.put_f64_array("stats.mean", cache.stats.col_mean);
    w.put_u64("fingerprint", cache.ds.fingerprint());
    w.finish();
}

DatasetCache load_dataset_cache(const std::string& path) {
    ContainerReader r(path);
    if (r.get_string("kind") != "dataset_cache") {
        throw ContainerError(path + " is not a dataset cache");
    }
    DatasetCache cache;
    cache.seed = r.get_u64("seed");
    cache.ds.n_rows = r.get_u64("rows");
    cache.ds.n_features = r.get_u64("features");
    cache.ds.features = r.get_f64_array("data");
    cache.ds.labels = r.get_u8_array("labels");
    if (cache.ds.features.size() != cache.ds.n_rows * cache.ds.n_features ||
        cache.ds.labels.size() != cache.ds.n_rows) {
        throw ContainerError(path + ": cache entry sizes disagree with row/feature counts");
    }
    cache.ds.recipe = DatasetRecipe::parse(r.get_string("recipe"), path + ":recipe");
    cache.split.train_rows = r.get_u32_array("split.train");
    cache.split.held_anomalies = r.get_u32_array("split.held");
    cache.split.test_rows = r.get_u32_array("split.test");
    cache.stats.col_min = r.get_f64_array("stats.min");
    cache.stats.col_max = r.get_f64_array("stats.max");
    cache.stats.col_mean = r.get_f64_array("stats.mean");
    const std::uint64_t stored = r.get_u64("fingerprint");
    if (stored != cache.ds.fingerprint()) {
        throw ContainerError(path + ": stored fingerprint disagrees with cache contents");
    }
    return cache;
}

}  // namespace cadgmm
