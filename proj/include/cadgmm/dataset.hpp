#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cadgmm/batch_source.hpp"
#include "cadgmm/matrix.hpp"

namespace cadgmm {

/// Thrown on malformed recipes or CSV rows; messages carry line numbers.
class ParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Plain-text key = value description of how to turn a CSV file into an
/// encoded dataset. After load_and_encode the learned one-hot vocabularies
/// are filled in, and saving the recipe persists them so later runs encode
/// identically (unknown categories then map to all-zero blocks).
struct DatasetRecipe {
    std::string source_path;
    bool has_header = false;
    long label_column = -1;  // raw CSV column index; -1 = last column
    std::vector<std::string> anomaly_values;        // label tokens counted as anomalies
    std::vector<std::size_t> categorical_columns;   // raw CSV column indices
    std::string missing_token = "?";
    std::size_t expected_features = 0;              // 0 = not enforced
    std::map<std::size_t, std::vector<std::string>> vocab;  // first-appearance order

    static DatasetRecipe parse(const std::string& text, const std::string& origin);
    static DatasetRecipe load(const std::string& path);
    std::string to_text() const;
    void save(const std::string& path) const;
};

/// Encoded dataset: continuous columns verbatim, categorical columns one-hot
/// expanded, labels 1 = anomaly. Missing continuous entries are stored as
/// NaN and resolved against training-split means when batches materialize.
struct LabeledDataset {
    std::size_t n_rows = 0;
    std::size_t n_features = 0;
    std::vector<double> features;  // row-major n_rows x n_features
    std::vector<std::uint8_t> labels;
    DatasetRecipe recipe;  // echo with learned vocab

    double feature(std::size_t r, std::size_t c) const {
        return features[r * n_features + c];
    }
    double anomaly_ratio() const;
    std::uint64_t fingerprint() const;
};

LabeledDataset load_and_encode(const DatasetRecipe& recipe);

/// Row partition for one seed: a uniform half/half shuffle, with the
/// training half further separated into normals (the training stream) and
/// anomalies (held back as the contamination pool for noise experiments).
struct SplitInfo {
    std::vector<std::uint32_t> train_rows;       // normals on the training side
    std::vector<std::uint32_t> held_anomalies;   // anomalies on the training side
    std::vector<std::uint32_t> test_rows;
};

SplitInfo split_train_test(const LabeledDataset& ds, std::uint64_t seed);

/// Per-column min/max/mean over a row subset (NaN entries skipped; columns
/// with no finite values get 0/0/0). Mean doubles as the imputation value.
struct FeatureStats {
    std::vector<double> col_min;
    std::vector<double> col_max;
    std::vector<double> col_mean;
    std::size_t dim() const noexcept { return col_min.size(); }
};

FeatureStats compute_stats(const LabeledDataset& ds, std::span<const std::uint32_t> rows);

/// BatchSource over a row subset that imputes missing values with the
/// training mean and min-max scales every column into [0,1] (constant
/// columns to 0, out-of-range values clipped). Scaling happens at batch
/// materialization, so no normalized copy of the dataset is ever held.
class NormalizedView final : public BatchSource {
public:
    NormalizedView(const LabeledDataset& ds, const FeatureStats& stats,
                   std::vector<std::uint32_t> rows);

    std::size_t size() const override { return rows_.size(); }
    std::size_t dim() const override { return ds_->n_features; }
    Matrix gather(std::span<const std::uint32_t> view_rows) const override;

    std::uint8_t label_at(std::size_t view_row) const {
        return ds_->labels[rows_[view_row]];
    }
    const std::vector<std::uint32_t>& rows() const noexcept { return rows_; }

private:
    const LabeledDataset* ds_;
    FeatureStats stats_;
    std::vector<std::uint32_t> rows_;
};

/// Training stream for a contamination run: the split's normal rows plus
/// anomalies sampled without replacement from the held pool so that
/// anomalies make up `ratio` of the stream. Rejects ratios the pool cannot
/// cover, reporting the counts.
std::vector<std::uint32_t> noise_injected_rows(const SplitInfo& split, double ratio,
                                               std::uint64_t seed);

/// Dataset cache files bundle the encoded dataset, one split, and that
/// split's training statistics in the binary container format.
struct DatasetCache {
    LabeledDataset ds;
    SplitInfo split;
    FeatureStats stats;
    std::uint64_t seed = 0;
};

void save_dataset_cache(const std::string& path, const DatasetCache& cache);
DatasetCache load_dataset_cache(const std::string& path);

}  // namespace cadgmm
