#include "cadgmm/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>

#include <json.hpp>

namespace cadgmm {

Prf1 prf1(std::span<const std::uint8_t> labels, std::span<const std::uint8_t> predictions) {
    if (labels.size() != predictions.size()) {
        throw ShapeError("prf1: " + std::to_string(labels.size()) + " labels vs " +
                         std::to_string(predictions.size()) + " predictions");
    }
    Prf1 m;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool truth = labels[i] != 0;
        const bool flagged = predictions[i] != 0;
        if (truth && flagged) ++m.tp;
        else if (!truth && flagged) ++m.fp;
        else if (truth) ++m.fn;
        else ++m.tn;
    }
    if (m.tp + m.fp == 0) {
        m.precision_defined = false;
    } else {
        m.precision = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp);
    }
    if (m.tp + m.fn == 0) {
        m.recall_defined = false;
    } else {
        m.recall = static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn);
    }
    if (m.precision + m.recall == 0.0 || !m.precision_defined || !m.recall_defined) {
        m.f1_defined = m.precision_defined && m.recall_defined;
        m.f1 = 0.0;
    } else {
        m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    }
    return m;
}

ThresholdResult threshold_by_ratio(std::span<const double> energies, double ratio) {
    if (!(ratio > 0.0 && ratio < 1.0)) {
        throw NumericError("threshold_by_ratio: ratio " + std::to_string(ratio) +
                           " outside (0,1)");
    }
    if (energies.empty()) throw ShapeError("threshold_by_ratio: no energies");
    const std::size_t n = energies.size();
    const auto count = static_cast<std::size_t>(
        std::ceil(ratio * static_cast<double>(n)) + 0.5);
    std::vector<std::uint32_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    // Highest energy first; equal energies keep ascending index order.
    std::stable_sort(idx.begin(), idx.end(), [&](std::uint32_t a, std::uint32_t b) {
        return energies[a] > energies[b];
    });
    ThresholdResult res;
    res.flag_count = std::min(count, n);
    res.predictions.assign(n, 0);
    for (std::size_t i = 0; i < res.flag_count; ++i) res.predictions[idx[i]] = 1;
    res.threshold = energies[idx[res.flag_count - 1]];
    return res;
}

ThresholdResult threshold_by_energy(std::span<const double> energies, double threshold) {
    ThresholdResult res;
    res.threshold = threshold;
    res.predictions.assign(energies.size(), 0);
    for (std::size_t i = 0; i < energies.size(); ++i) {
        if (energies[i] >= threshold) {
            res.predictions[i] = 1;
            ++res.flag_count;
        }
    }
    return res;
}

std::vector<double> score_dataset(const BatchSource& test, const ModelConfig& mcfg,
                                  const ParamStore& params, const GmmState& gmm,
                                  std::size_t batch_size, bool ablate_graph) {
    std::vector<double> energies;
    energies.reserve(test.size());
    for_each_padded_batch(
        test, batch_size, mcfg.knn_k, [&](const Matrix& x, std::size_t context) {
            const NeighborGraph graph = build_knn_graph(x, mcfg.knn_k);
            const ForwardOutputs out = forward_outputs(x, graph, params, mcfg, ablate_graph);
            const Matrix e = energy(out.z, gmm);
            for (std::size_t i = context; i < e.rows(); ++i) energies.push_back(e(i, 0));
        });
    return energies;
}

ExperimentReport run_experiment(const LabeledDataset& ds, const ModelConfig& mcfg,
                                const TrainConfig& tcfg, const EvalOptions& opts,
                                std::span<const std::uint64_t> seeds, double noise_ratio) {
    if (seeds.empty()) throw NumericError("run_experiment: no seeds");
    ExperimentReport report;
    report.noise_ratio = noise_ratio;
    report.ablate_graph = tcfg.ablate_graph;
    report.threshold_ratio_used =
        opts.threshold_ratio < 0.0 ? ds.anomaly_ratio() : opts.threshold_ratio;
    const std::size_t eval_batch = opts.batch_size ? opts.batch_size : tcfg.batch_size;

    double sum_p = 0.0, sum_r = 0.0, sum_f = 0.0;
    for (std::uint64_t seed : seeds) {
        SeedRun run;
        run.seed = seed;
        try {
            const SplitInfo split = split_train_test(ds, seed);
            const std::vector<std::uint32_t> stream =
                noise_injected_rows(split, noise_ratio, seed);
            if (stream.empty()) throw NumericError("empty training stream");
            if (split.test_rows.empty()) throw NumericError("empty test split");
            const FeatureStats stats = compute_stats(ds, stream);
            const NormalizedView train_view(ds, stats, stream);
            TrainConfig seed_cfg = tcfg;
            seed_cfg.seed = seed;
            const TrainArtifacts art = train(train_view, mcfg, seed_cfg);
            run.steps_skipped = art.steps_skipped;
            run.train_rows = stream.size();
            run.test_rows = split.test_rows.size();

            const NormalizedView test_view(ds, stats, split.test_rows);
            const std::vector<double> energies =
                score_dataset(test_view, mcfg, art.params, art.gmm, eval_batch,
                              seed_cfg.ablate_graph);
            const ThresholdResult th =
                opts.threshold_energy
                    ? threshold_by_energy(energies, *opts.threshold_energy)
                    : threshold_by_ratio(energies, report.threshold_ratio_used);
            std::vector<std::uint8_t> labels(split.test_rows.size());
            for (std::size_t i = 0; i < labels.size(); ++i) {
                labels[i] = ds.labels[split.test_rows[i]];
            }
            run.metrics = prf1(labels, th.predictions);
            run.threshold = th.threshold;
        } catch (const std::exception& e) {
            run.failed = true;
            run.error = e.what();
        }
        if (run.failed) {
            ++report.failed_runs;
        } else {
            sum_p += run.metrics.precision;
            sum_r += run.metrics.recall;
            sum_f += run.metrics.f1;
        }
        report.runs.push_back(std::move(run));
    }
    const std::size_t ok = report.runs.size() - report.failed_runs;
    if (ok > 0) {
        report.mean_precision = sum_p / static_cast<double>(ok);
        report.mean_recall = sum_r / static_cast<double>(ok);
        report.mean_f1 = sum_f / static_cast<double>(ok);
    }
    return report;
}

std::vector<std::pair<std::size_t, ExperimentReport>> k_sweep(
    const LabeledDataset& ds, ModelConfig mcfg, const TrainConfig& tcfg,
    const EvalOptions& opts, std::span<const std::size_t> k_values,
    std::span<const std::uint64_t> seeds) {
    if (k_values.empty()) throw NumericError("k_sweep: no K values");
    std::vector<std::pair<std::size_t, ExperimentReport>> out;
    out.reserve(k_values.size());
    for (std::size_t k : k_values) {
        mcfg.knn_k = k;
        out.emplace_back(k, run_experiment(ds, mcfg, tcfg, opts, seeds));
    }
    return out;
}

std::vector<std::pair<double, ExperimentReport>> noise_experiment(
    const LabeledDataset& ds, const ModelConfig& mcfg, const TrainConfig& tcfg,
    const EvalOptions& opts, std::span<const double> ratios,
    std::span<const std::uint64_t> seeds) {
    if (ratios.empty()) throw NumericError("noise_experiment: no ratios");
    std::vector<std::pair<double, ExperimentReport>> out;
    out.reserve(ratios.size());
    for (double ratio : ratios) {
        out.emplace_back(ratio, run_experiment(ds, mcfg, tcfg, opts, seeds, ratio));
    }
    return out;
}

void export_embeddings(const NormalizedView& test, const ModelConfig& mcfg,
                       const ParamStore& params, const GmmState& gmm, std::size_t batch_size,
                       bool ablate_graph, std::ostream& out) {
    const std::size_t d = mcfg.energy_dim();
    for (std::size_t j = 0; j < d; ++j) out << 'z' << j << ',';
    out << "energy,label\n";
    out << std::setprecision(17);
    std::size_t row = 0;
    for_each_padded_batch(
        test, batch_size, mcfg.knn_k, [&](const Matrix& x, std::size_t context) {
            const NeighborGraph graph = build_knn_graph(x, mcfg.knn_k);
            const ForwardOutputs f = forward_outputs(x, graph, params, mcfg, ablate_graph);
            const Matrix e = energy(f.z, gmm);
            for (std::size_t i = context; i < f.z.rows(); ++i) {
                for (std::size_t j = 0; j < d; ++j) out << f.z(i, j) << ',';
                out << e(i, 0) << ',' << static_cast<int>(test.label_at(row)) << '\n';
                ++row;
            }
        });
}

std::string experiment_report_json(const ExperimentReport& report, std::uint64_t fingerprint) {
    nlohmann::json j;
    j["dataset_fingerprint"] = fingerprint;
    j["threshold_ratio"] = report.threshold_ratio_used;
    j["noise_ratio"] = report.noise_ratio;
    j["ablate_graph"] = report.ablate_graph;
    j["failed_runs"] = report.failed_runs;
    j["mean"] = {{"precision", report.mean_precision},
                 {"recall", report.mean_recall},
                 {"f1", report.mean_f1}};
    nlohmann::json runs = nlohmann::json::array();
    for (const SeedRun& run : report.runs) {
        nlohmann::json r;
        r["seed"] = run.seed;
        r["failed"] = run.failed;
        if (run.failed) {
            r["error"] = run.error;
        } else {
            r["precision"] = run.metrics.precision;
            r["recall"] = run.metrics.recall;
            r["f1"] = run.metrics.f1;
            r["threshold"] = run.threshold;
            r["tp"] = run.metrics.tp;
            r["fp"] = run.metrics.fp;
            r["tn"] = run.metrics.tn;
            r["fn"] = run.metrics.fn;
            r["train_rows"] = run.train_rows;
            r["test_rows"] = run.test_rows;
            r["steps_skipped"] = run.steps_skipped;
        }
        runs.push_back(std::move(r));
    }
    j["runs"] = std::move(runs);
    return j.dump(2);
}

}  // namespace cadgmm
