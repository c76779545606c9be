#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cadgmm/checkpoint.hpp"
#include "cadgmm/config.hpp"
#include "cadgmm/dataset.hpp"
#include "cadgmm/evaluator.hpp"
#include "cadgmm/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using namespace cadgmm;

/// Flag beats config file, config beats the CADGMM_OUT_ROOT env var,
/// and everything falls back to the working directory.
std::string resolve_out_dir(const std::string& flag_value, const std::string& cfg_value) {
    if (!flag_value.empty()) return flag_value;
    if (!cfg_value.empty()) return cfg_value;
    if (const char* env = std::getenv("CADGMM_OUT_ROOT"); env && *env) return env;
    return ".";
}

fs::path prepare_out_dir(const std::string& dir) {
    fs::path p(dir);
    fs::create_directories(p);
    return p;
}

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::uint64_t parse_u64(const std::string& v, const std::string& what) {
    try {
        std::size_t used = 0;
        const std::uint64_t out = std::stoull(v, &used);
        if (used == v.size()) return out;
    } catch (const std::exception&) {
    }
    throw std::runtime_error(what + ": \"" + v + "\" is not a nonnegative integer");
}

std::vector<std::string> split_commas(const std::string& text) {
    std::vector<std::string> out;
    std::string token;
    std::istringstream in(text);
    while (std::getline(in, token, ',')) {
        while (!token.empty() && (token.front() == ' ' || token.front() == '\t')) token.erase(0, 1);
        while (!token.empty() && (token.back() == ' ' || token.back() == '\t')) token.pop_back();
        if (!token.empty()) out.push_back(token);
    }
    return out;
}

/// Either "lo..hi:step" (step optional, default 1) or a comma list.
std::vector<std::size_t> parse_k_list(const std::string& text) {
    std::vector<std::size_t> out;
    if (const auto dots = text.find(".."); dots != std::string::npos) {
        const auto colon = text.find(':', dots + 2);
        const std::size_t lo = parse_u64(text.substr(0, dots), "--k-list start");
        const std::size_t hi = parse_u64(
            text.substr(dots + 2, colon == std::string::npos ? std::string::npos : colon - dots - 2),
            "--k-list end");
        const std::size_t step =
            colon == std::string::npos ? 1 : parse_u64(text.substr(colon + 1), "--k-list step");
        if (step == 0) throw std::runtime_error("--k-list step must be positive");
        for (std::size_t k = lo; k <= hi; k += step) out.push_back(k);
    } else {
        for (const auto& tok : split_commas(text)) out.push_back(parse_u64(tok, "--k-list"));
    }
    if (out.empty()) throw std::runtime_error("--k-list produced no settings");
    return out;
}

std::vector<double> parse_noise_list(const std::string& text) {
    std::vector<double> out;
    for (const auto& tok : split_commas(text)) {
        const double pct = std::stod(tok);
        if (!(pct > 0.0 && pct < 100.0)) {
            throw std::runtime_error("--noise-list entries are percentages in (0, 100)");
        }
        out.push_back(pct / 100.0);
    }
    if (out.empty()) throw std::runtime_error("--noise-list produced no settings");
    return out;
}

void apply_set_overrides(RunConfig& cfg, const std::vector<std::string>& sets) {
    for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("--set expects section.key=value, got \"" + kv + "\"");
        }
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1), "--set " + kv);
    }
}

struct PrepareArgs {
    std::string recipe;
    std::string out;
    std::uint64_t seed = 1;
};

int cmd_prepare(const PrepareArgs& a) {
    const DatasetRecipe recipe = DatasetRecipe::load(a.recipe);
    DatasetCache cache;
    cache.ds = load_and_encode(recipe);
    cache.split = split_train_test(cache.ds, a.seed);
    cache.stats = compute_stats(cache.ds, cache.split.train_rows);
    cache.seed = a.seed;
    save_dataset_cache(a.out, cache);
    cache.ds.recipe.save(a.out + ".recipe");

    json summary;
    summary["cache"] = a.out;
    summary["rows"] = cache.ds.n_rows;
    summary["features"] = cache.ds.n_features;
    summary["anomaly_ratio"] = cache.ds.anomaly_ratio();
    summary["fingerprint"] = cache.ds.fingerprint();
    summary["split_seed"] = a.seed;
    summary["train_rows"] = cache.split.train_rows.size();
    summary["held_anomalies"] = cache.split.held_anomalies.size();
    summary["test_rows"] = cache.split.test_rows.size();
    std::cout << summary.dump(2) << '\n';
    return 0;
}

struct TrainArgs {
    std::string config;
    std::string cache;
    std::string out;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> iterations;
    std::optional<std::size_t> batch_size;
    bool ablate_graph = false;
    double noise_ratio = 0.0;
};

int cmd_train(const TrainArgs& a) {
    RunConfig cfg = RunConfig::from_file(a.config);
    apply_set_overrides(cfg, a.sets);
    if (!a.cache.empty()) cfg.cache_path = a.cache;
    if (a.seed) cfg.train.seed = *a.seed;
    if (a.iterations) cfg.train.iterations = *a.iterations;
    if (a.batch_size) cfg.train.batch_size = *a.batch_size;
    if (a.ablate_graph) cfg.train.ablate_graph = true;
    if (!(a.noise_ratio >= 0.0 && a.noise_ratio < 1.0)) {
        throw std::runtime_error("--noise-ratio must lie in [0, 1)");
    }
    cfg.model.validate();
    cfg.train.validate(cfg.model);
    if (cfg.cache_path.empty()) {
        throw std::runtime_error("no dataset cache configured; run prepare and set dataset.cache");
    }

    const fs::path out_dir = prepare_out_dir(resolve_out_dir(a.out, cfg.out_dir));
    const DatasetCache cache = load_dataset_cache(cfg.cache_path);

    const SplitInfo split = split_train_test(cache.ds, cfg.train.seed);
    std::vector<std::uint32_t> stream_rows =
        a.noise_ratio > 0.0 ? noise_injected_rows(split, a.noise_ratio, cfg.train.seed)
                            : split.train_rows;
    const FeatureStats stats = compute_stats(cache.ds, stream_rows);
    const NormalizedView train_view(cache.ds, stats, std::move(stream_rows));

    std::cout << "training: " << train_view.size() << " rows, "
              << cfg.train.iterations << " iterations, seed " << cfg.train.seed
              << (cfg.train.ablate_graph ? ", graph branch ablated" : "") << '\n';
    const TrainArtifacts art = train(train_view, cfg.model, cfg.train);

    Checkpoint cp;
    cp.model = cfg.model;
    cp.params = art.params;
    cp.gmm = art.gmm;
    cp.stats = stats;
    cp.dataset_fingerprint = cache.ds.fingerprint();
    cp.seed = cfg.train.seed;
    cp.ablate_graph = cfg.train.ablate_graph;
    cp.config_echo = cfg.echo();

    const fs::path cp_path = out_dir / "checkpoint.bin";
    save_checkpoint(cp_path.string(), cp);
    {
        std::ofstream log(out_dir / "training_log.csv");
        if (!log) throw std::runtime_error("cannot write training_log.csv");
        write_training_log_csv(art.log, log);
    }
    write_text_file(out_dir / "effective_config.cfg", cfg.echo());

    std::cout << "trained " << art.log.size() << " iterations (" << art.steps_skipped
              << " skipped); checkpoint: " << cp_path.string() << '\n';
    return 0;
}

struct EvalArgs {
    std::string checkpoint;
    std::string cache;
    std::optional<double> threshold_ratio;
    std::optional<double> threshold_energy;
    std::size_t batch_size = 0;
    std::string scores_csv;
    std::string embeddings_csv;
    std::string report_path;
};

std::size_t checkpoint_batch_size(const Checkpoint& cp) {
    if (!cp.config_echo.empty()) {
        try {
            const RunConfig echoed = RunConfig::parse(cp.config_echo, "checkpoint config");
            if (echoed.train.batch_size > 0) return echoed.train.batch_size;
        } catch (const std::exception&) {
        }
    }
    return std::max<std::size_t>(cp.model.knn_k + 2, 512);
}

int cmd_eval(const EvalArgs& a) {
    const Checkpoint cp = load_checkpoint(a.checkpoint);
    const DatasetCache cache = load_dataset_cache(a.cache);
    if (cp.dataset_fingerprint != cache.ds.fingerprint()) {
        throw std::runtime_error("checkpoint/dataset mismatch: checkpoint was trained on a "
                                 "different dataset (fingerprints differ)");
    }

    const SplitInfo split = split_train_test(cache.ds, cp.seed);
    const NormalizedView test_view(cache.ds, cp.stats, split.test_rows);
    const std::size_t batch = a.batch_size > 0 ? a.batch_size : checkpoint_batch_size(cp);

    const std::vector<double> energies =
        score_dataset(test_view, cp.model, cp.params, cp.gmm, batch, cp.ablate_graph);

    ThresholdResult th;
    if (a.threshold_energy) {
        th = threshold_by_energy(energies, *a.threshold_energy);
    } else {
        const double ratio = a.threshold_ratio ? *a.threshold_ratio : cache.ds.anomaly_ratio();
        th = threshold_by_ratio(energies, ratio);
    }

    std::vector<std::uint8_t> labels(test_view.size());
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = test_view.label_at(i);
    const Prf1 m = prf1(labels, th.predictions);

    json report;
    report["checkpoint"] = a.checkpoint;
    report["dataset_fingerprint"] = cp.dataset_fingerprint;
    report["seed"] = cp.seed;
    report["ablate_graph"] = cp.ablate_graph;
    report["test_rows"] = test_view.size();
    report["threshold"] = th.threshold;
    report["flag_count"] = th.flag_count;
    report["precision"] = m.precision;
    report["recall"] = m.recall;
    report["f1"] = m.f1;
    report["tp"] = m.tp;
    report["fp"] = m.fp;
    report["tn"] = m.tn;
    report["fn"] = m.fn;
    const std::string rendered = report.dump(2);
    std::cout << rendered << '\n';
    if (!a.report_path.empty()) write_text_file(a.report_path, rendered + "\n");

    if (!a.scores_csv.empty()) {
        std::ofstream out(a.scores_csv);
        if (!out) throw std::runtime_error("cannot write " + a.scores_csv);
        out << "row,energy,label,predicted\n";
        out << std::setprecision(17);
        for (std::size_t i = 0; i < energies.size(); ++i) {
            out << test_view.rows()[i] << ',' << energies[i] << ',' << int(labels[i]) << ','
                << int(th.predictions[i]) << '\n';
        }
    }
    if (!a.embeddings_csv.empty()) {
        std::ofstream out(a.embeddings_csv);
        if (!out) throw std::runtime_error("cannot write " + a.embeddings_csv);
        export_embeddings(test_view, cp.model, cp.params, cp.gmm, batch, cp.ablate_graph, out);
    }
    return 0;
}

struct SweepArgs {
    std::string config;
    std::string cache;
    std::string out;
    std::vector<std::string> sets;
    std::string k_list;
    std::string noise_list;
    std::size_t seeds = 10;
    std::string seed_list;
    std::size_t jobs = 1;
};

struct SweepSetting {
    std::string label;       // "k=5" or "noise=1%"
    double numeric = 0.0;    // k value or noise percent, for the CSV column
    std::size_t k = 0;
    double noise_ratio = 0.0;
};

int cmd_sweep(const SweepArgs& a) {
    RunConfig cfg = RunConfig::from_file(a.config);
    apply_set_overrides(cfg, a.sets);
    if (!a.cache.empty()) cfg.cache_path = a.cache;
    cfg.model.validate();
    cfg.train.validate(cfg.model);
    if (cfg.cache_path.empty()) {
        throw std::runtime_error("no dataset cache configured; run prepare and set dataset.cache");
    }
    if (a.k_list.empty() == a.noise_list.empty()) {
        throw std::runtime_error("exactly one of --k-list / --noise-list is required");
    }
    if (a.jobs == 0) throw std::runtime_error("--jobs must be positive");

    std::vector<std::uint64_t> seeds;
    if (!a.seed_list.empty()) {
        for (const auto& tok : split_commas(a.seed_list)) {
            seeds.push_back(parse_u64(tok, "--seed-list"));
        }
    } else {
        if (a.seeds == 0) throw std::runtime_error("--seeds must be positive");
        for (std::uint64_t s = 1; s <= a.seeds; ++s) seeds.push_back(s);
    }
    if (seeds.empty()) throw std::runtime_error("no seeds to run");

    std::vector<SweepSetting> settings;
    if (!a.k_list.empty()) {
        for (const std::size_t k : parse_k_list(a.k_list)) {
            settings.push_back({"k=" + std::to_string(k), double(k), k, 0.0});
        }
    } else {
        for (const double r : parse_noise_list(a.noise_list)) {
            std::ostringstream label;
            label << "noise=" << r * 100.0 << "%";
            settings.push_back({label.str(), r * 100.0, cfg.model.knn_k, r});
        }
    }

    const fs::path out_dir = prepare_out_dir(resolve_out_dir(a.out, cfg.out_dir));
    const DatasetCache cache = load_dataset_cache(cfg.cache_path);
    const EvalOptions opts{cfg.eval_threshold_ratio, std::nullopt,
                           cfg.eval_batch_size > 0 ? cfg.eval_batch_size : cfg.train.batch_size};

    std::vector<ExperimentReport> reports(settings.size());
    std::mutex io_mutex;
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= settings.size()) return;
            const SweepSetting& s = settings[i];
            ModelConfig mcfg = cfg.model;
            mcfg.knn_k = s.k;
            reports[i] = run_experiment(cache.ds, mcfg, cfg.train, opts, seeds, s.noise_ratio);
            std::lock_guard<std::mutex> lock(io_mutex);
            std::cout << s.label << ": mean F1 " << reports[i].mean_f1 << " over "
                      << (seeds.size() - reports[i].failed_runs) << '/' << seeds.size()
                      << " seeds\n";
        }
    };
    if (a.jobs <= 1 || settings.size() <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        const std::size_t n_threads = std::min(a.jobs, settings.size());
        pool.reserve(n_threads);
        for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    std::ostringstream runs_csv;
    runs_csv << "setting,seed,status,precision,recall,f1,threshold,error\n";
    runs_csv << std::setprecision(17);
    std::ostringstream summary_csv;
    summary_csv << "setting,mean_precision,mean_recall,mean_f1,failed_runs\n";
    summary_csv << std::setprecision(17);
    json all = json::array();
    std::size_t failed = 0;
    for (std::size_t i = 0; i < settings.size(); ++i) {
        const ExperimentReport& rep = reports[i];
        for (const SeedRun& run : rep.runs) {
            runs_csv << settings[i].numeric << ',' << run.seed << ','
                     << (run.failed ? "failed" : "ok") << ',';
            if (run.failed) {
                std::string msg = run.error;
                for (char& c : msg) {
                    if (c == ',' || c == '\n') c = ';';
                }
                runs_csv << ",,,," << msg << '\n';
            } else {
                runs_csv << run.metrics.precision << ',' << run.metrics.recall << ','
                         << run.metrics.f1 << ',' << run.threshold << ",\n";
            }
        }
        summary_csv << settings[i].numeric << ',' << rep.mean_precision << ',' << rep.mean_recall
                    << ',' << rep.mean_f1 << ',' << rep.failed_runs << '\n';
        failed += rep.failed_runs;
        json entry;
        entry["setting"] = settings[i].label;
        entry["report"] = json::parse(experiment_report_json(rep, cache.ds.fingerprint()));
        all.push_back(std::move(entry));
    }
    json top;
    top["mode"] = a.k_list.empty() ? "noise" : "k";
    top["seeds"] = seeds;
    top["settings"] = std::move(all);
    top["failed_runs"] = failed;

    write_text_file(out_dir / "sweep_runs.csv", runs_csv.str());
    write_text_file(out_dir / "sweep_summary.csv", summary_csv.str());
    write_text_file(out_dir / "report.json", top.dump(2) + "\n");
    std::cout << "sweep complete: " << settings.size() << " settings, " << failed
              << " failed runs; results in " << out_dir.string() << '\n';
    return failed == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Correlation-aware deep anomaly detector for tabular data"};
    app.require_subcommand(1);

    PrepareArgs prep;
    auto* prepare = app.add_subcommand("prepare", "Encode a CSV dataset into a binary cache");
    prepare->add_option("--recipe", prep.recipe, "dataset recipe file")->required();
    prepare->add_option("--out", prep.out, "cache file to write")->required();
    prepare->add_option("--seed", prep.seed, "seed for the cached train/test split");

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "Train a model from a config file");
    train_cmd->add_option("--config", tr.config, "run configuration file")->required();
    train_cmd->add_option("--cache", tr.cache, "dataset cache (overrides dataset.cache)");
    train_cmd->add_option("--seed", tr.seed, "training seed (overrides train.seed)");
    train_cmd->add_option("--iterations", tr.iterations, "override train.iterations");
    train_cmd->add_option("--batch-size", tr.batch_size, "override train.batch_size");
    train_cmd->add_flag("--ablate-graph", tr.ablate_graph,
                        "train with the graph branch zeroed out");
    train_cmd->add_option("--noise-ratio", tr.noise_ratio,
                          "anomaly fraction injected into the training stream, e.g. 0.05");
    train_cmd->add_option("--out", tr.out, "output directory");
    train_cmd->add_option("--set", tr.sets,
                          "generic section.key=value override (applied before other flags)");

    EvalArgs ev;
    auto* eval_cmd = app.add_subcommand("eval", "Score a test split with a trained checkpoint");
    eval_cmd->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required();
    eval_cmd->add_option("--cache", ev.cache, "dataset cache the checkpoint was trained on")
        ->required();
    eval_cmd->add_option("--threshold-ratio", ev.threshold_ratio,
                         "flag this fraction of highest energies (default: anomaly ratio)");
    eval_cmd->add_option("--threshold-energy", ev.threshold_energy,
                         "fixed energy cutoff instead of the ratio rule");
    eval_cmd->add_option("--batch-size", ev.batch_size, "scoring batch size");
    eval_cmd->add_option("--scores-csv", ev.scores_csv, "write per-row energies here");
    eval_cmd->add_option("--export-embeddings", ev.embeddings_csv,
                         "write per-row embeddings + energy + label here");
    eval_cmd->add_option("--report", ev.report_path, "write the JSON report here");

    SweepArgs sw;
    auto* sweep_cmd = app.add_subcommand("sweep", "Run a k or noise sweep over several seeds");
    sweep_cmd->add_option("--config", sw.config, "run configuration file")->required();
    sweep_cmd->add_option("--cache", sw.cache, "dataset cache (overrides dataset.cache)");
    sweep_cmd->add_option("--k-list", sw.k_list, "k settings: \"5..19:2\" or \"5,7,9\"");
    sweep_cmd->add_option("--noise-list", sw.noise_list,
                          "training contamination percentages, e.g. \"1,2,3,4,5\"");
    sweep_cmd->add_option("--seeds", sw.seeds, "run seeds 1..N (default 10)");
    sweep_cmd->add_option("--seed-list", sw.seed_list, "explicit comma-separated seeds");
    sweep_cmd->add_option("--jobs", sw.jobs, "settings to run in parallel (default 1)");
    sweep_cmd->add_option("--out", sw.out, "output directory");
    sweep_cmd->add_option("--set", sw.sets, "generic section.key=value override");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(prepare)) return cmd_prepare(prep);
        if (app.got_subcommand(train_cmd)) return cmd_train(tr);
        if (app.got_subcommand(eval_cmd)) return cmd_eval(ev);
        if (app.got_subcommand(sweep_cmd)) return cmd_sweep(sw);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
