#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cadgmm/dataset.hpp"
#include "cadgmm/gmm.hpp"
#include "cadgmm/model.hpp"
#include "cadgmm/trainer.hpp"

namespace cadgmm {

/// Precision/recall/F1 with the anomaly class as positive. A zero
/// denominator yields 0 for that metric with its `*_defined` flag cleared.
struct Prf1 {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    bool precision_defined = true;
    bool recall_defined = true;
    bool f1_defined = true;
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

Prf1 prf1(std::span<const std::uint8_t> labels, std::span<const std::uint8_t> predictions);

struct ThresholdResult {
    double threshold = 0.0;  // energy of the lowest-energy flagged sample
    std::size_t flag_count = 0;
    std::vector<std::uint8_t> predictions;
};

/// Flags the ceil(ratio*N) highest-energy samples; boundary ties resolved
/// by ascending sample index. Requires 0 < ratio < 1.
ThresholdResult threshold_by_ratio(std::span<const double> energies, double ratio);

/// Flags samples with energy >= threshold (deployment-style fixed cutoff).
ThresholdResult threshold_by_energy(std::span<const double> energies, double threshold);

/// Scores every source row once with a frozen model: batches in natural
/// order, k-NN graph per batch, energies against the frozen mixture. Short
/// final batches reuse previous rows as graph context without re-scoring
/// them.
std::vector<double> score_dataset(const BatchSource& test, const ModelConfig& mcfg,
                                  const ParamStore& params, const GmmState& gmm,
                                  std::size_t batch_size, bool ablate_graph = false);

struct EvalOptions {
    double threshold_ratio = -1.0;           // < 0: use the dataset's anomaly ratio
    std::optional<double> threshold_energy;  // overrides the ratio rule when set
    std::size_t batch_size = 0;              // 0: the training batch size
};

struct SeedRun {
    std::uint64_t seed = 0;
    bool failed = false;
    std::string error;
    Prf1 metrics;
    double threshold = 0.0;
    std::size_t train_rows = 0;
    std::size_t test_rows = 0;
    std::size_t steps_skipped = 0;
};

struct ExperimentReport {
    std::vector<SeedRun> runs;
    double mean_precision = 0.0;  // over runs that completed
    double mean_recall = 0.0;
    double mean_f1 = 0.0;
    std::size_t failed_runs = 0;
    double threshold_ratio_used = 0.0;
    double noise_ratio = 0.0;
    bool ablate_graph = false;
};

/// One full cycle per seed: split, optional contamination of the training
/// stream, training-stream statistics, train, score the test half, ratio
/// threshold, metrics. A failing seed is recorded and the remaining seeds
/// still run.
ExperimentReport run_experiment(const LabeledDataset& ds, const ModelConfig& mcfg,
                                const TrainConfig& tcfg, const EvalOptions& opts,
                                std::span<const std::uint64_t> seeds, double noise_ratio = 0.0);

std::vector<std::pair<std::size_t, ExperimentReport>> k_sweep(
    const LabeledDataset& ds, ModelConfig mcfg, const TrainConfig& tcfg,
    const EvalOptions& opts, std::span<const std::size_t> k_values,
    std::span<const std::uint64_t> seeds);

std::vector<std::pair<double, ExperimentReport>> noise_experiment(
    const LabeledDataset& ds, const ModelConfig& mcfg, const TrainConfig& tcfg,
    const EvalOptions& opts, std::span<const double> ratios,
    std::span<const std::uint64_t> seeds);

/// One CSV row per test sample: the D+2 embedding columns, the energy, and
/// the true label.
void export_embeddings(const NormalizedView& test, const ModelConfig& mcfg,
                       const ParamStore& params, const GmmState& gmm, std::size_t batch_size,
                       bool ablate_graph, std::ostream& out);

/// JSON-shaped report with per-seed and mean metrics.
std::string experiment_report_json(const ExperimentReport& report, std::uint64_t fingerprint);

}  // namespace cadgmm
