// Acceptance gate: one criterion per command-line argument, one terminal
// [PASS]/[FAIL] line each, exit 0/1. Criteria that need a benchmark CSV that
// is not on disk print [SKIP] and exit 77 (the ctest skip code); the README
// lists where to fetch the files.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cadgmm/batch_source.hpp"
#include "cadgmm/config.hpp"
#include "cadgmm/dataset.hpp"
#include "cadgmm/evaluator.hpp"
#include "cadgmm/gmm.hpp"
#include "cadgmm/graph.hpp"
#include "cadgmm/model.hpp"
#include "cadgmm/rng.hpp"
#include "cadgmm/tape.hpp"
#include "cadgmm/trainer.hpp"
#include "oracles.hpp"

using namespace cadgmm;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances. Targets are percentage points.
constexpr double kKddF1Target = 96.71, kKddF1Tol = 3.0;
constexpr double kKddPrecTarget = 96.01, kKddPrecTol = 3.5;
constexpr double kKddRecTarget = 97.53, kKddRecTol = 3.5;
constexpr double kSatF1Target = 82.37, kSatF1Tol = 5.0;
constexpr double kArrF1Target = 57.14, kArrF1Tol = 8.0, kArrF1Floor = 50.0;
constexpr double kNoiseF1Floor = 90.0, kNoiseMaxDrop = 5.0;
constexpr double kSweepMaxSpread = 10.0;
constexpr double kAblationMinMargin = 0.0;
constexpr double kGradTol = 1e-4;
constexpr double kEnergyOracleTol = 1e-8;
constexpr double kRowSumTol = 1e-6;
constexpr double kBatchGmmTol = 1e-8;

std::vector<std::uint64_t> ten_seeds() {
    std::vector<std::uint64_t> s(10);
    for (std::size_t i = 0; i < 10; ++i) s[i] = i + 1;
    return s;
}

int emit(const std::string& criterion, bool pass, const std::string& detail) {
    std::cout << (pass ? "[PASS] " : "[FAIL] ") << criterion << ": " << detail << std::endl;
    return pass ? 0 : 1;
}

int skip(const std::string& criterion, const std::string& why) {
    std::cout << "[SKIP] " << criterion << ": " << why << std::endl;
    return 77;
}

struct Loaded {
    RunConfig cfg;
    LabeledDataset ds;
};

/// Resolves a preset to an encoded dataset. Uses the preset's binary cache
/// when it exists, otherwise encodes the raw CSV and tries to write the
/// cache for the next criterion. Returns nothing if the raw file is absent.
std::optional<Loaded> load_preset(const std::string& criterion, const std::string& preset) {
    Loaded out;
    out.cfg = RunConfig::from_file(preset);
    if (fs::exists(out.cfg.cache_path)) {
        DatasetCache cache = load_dataset_cache(out.cfg.cache_path);
        out.ds = std::move(cache.ds);
        return out;
    }
    const DatasetRecipe recipe = DatasetRecipe::load(out.cfg.recipe_path);
    if (!fs::exists(recipe.source_path)) {
        skip(criterion, "dataset file " + recipe.source_path +
                            " is not present; see README for download steps");
        return std::nullopt;
    }
    out.ds = load_and_encode(recipe);
    try {
        DatasetCache cache;
        cache.ds = out.ds;
        cache.seed = 1;
        cache.split = split_train_test(cache.ds, cache.seed);
        cache.stats = compute_stats(cache.ds, cache.split.train_rows);
        if (!out.cfg.cache_path.empty()) {
            fs::create_directories(fs::path(out.cfg.cache_path).parent_path());
            save_dataset_cache(out.cfg.cache_path, cache);
        }
    } catch (const std::exception& e) {
        std::cerr << "note: could not write " << out.cfg.cache_path << ": " << e.what() << '\n';
    }
    return out;
}

EvalOptions options_of(const RunConfig& cfg) {
    EvalOptions opts;
    opts.threshold_ratio = cfg.eval_threshold_ratio;
    opts.batch_size = cfg.eval_batch_size > 0 ? cfg.eval_batch_size : cfg.train.batch_size;
    return opts;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::string fmt_sci(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

// ---------------------------------------------------------------- criteria

int crit_kdd99() {
    const auto loaded = load_preset("kdd99", "presets/kdd99.cfg");
    if (!loaded) return 77;
    const auto seeds = ten_seeds();
    const ExperimentReport rep = run_experiment(loaded->ds, loaded->cfg.model,
                                                loaded->cfg.train, options_of(loaded->cfg), seeds);
    const double f1 = 100.0 * rep.mean_f1;
    const double p = 100.0 * rep.mean_precision;
    const double r = 100.0 * rep.mean_recall;
    const bool pass = rep.failed_runs == 0 && std::abs(f1 - kKddF1Target) <= kKddF1Tol &&
                      std::abs(p - kKddPrecTarget) <= kKddPrecTol &&
                      std::abs(r - kKddRecTarget) <= kKddRecTol;
    return emit("kdd99 reproduction",
                pass,
                "10-seed mean F1 " + fmt(f1) + " (target " + fmt(kKddF1Target) + "+-" +
                    fmt(kKddF1Tol) + "), precision " + fmt(p) + " (target " +
                    fmt(kKddPrecTarget) + "+-" + fmt(kKddPrecTol) + "), recall " + fmt(r) +
                    " (target " + fmt(kKddRecTarget) + "+-" + fmt(kKddRecTol) + "), " +
                    std::to_string(rep.failed_runs) + " failed runs");
}

int crit_satellite() {
    const auto loaded = load_preset("satellite", "presets/satellite.cfg");
    if (!loaded) return 77;
    const ExperimentReport rep =
        run_experiment(loaded->ds, loaded->cfg.model, loaded->cfg.train,
                       options_of(loaded->cfg), ten_seeds());
    const double f1 = 100.0 * rep.mean_f1;
    const bool pass = rep.failed_runs == 0 && std::abs(f1 - kSatF1Target) <= kSatF1Tol;
    return emit("satellite reproduction", pass,
                "10-seed mean F1 " + fmt(f1) + " (target " + fmt(kSatF1Target) + "+-" +
                    fmt(kSatF1Tol) + "), " + std::to_string(rep.failed_runs) + " failed runs");
}

int crit_arrhythmia() {
    const auto loaded = load_preset("arrhythmia", "presets/arrhythmia.cfg");
    if (!loaded) return 77;
    const ExperimentReport rep =
        run_experiment(loaded->ds, loaded->cfg.model, loaded->cfg.train,
                       options_of(loaded->cfg), ten_seeds());
    const double f1 = 100.0 * rep.mean_f1;
    const bool pass = rep.failed_runs == 0 && std::abs(f1 - kArrF1Target) <= kArrF1Tol &&
                      f1 > kArrF1Floor;
    return emit("arrhythmia reproduction", pass,
                "10-seed mean F1 " + fmt(f1) + " (target " + fmt(kArrF1Target) + "+-" +
                    fmt(kArrF1Tol) + ", floor " + fmt(kArrF1Floor) + "), " +
                    std::to_string(rep.failed_runs) + " failed runs");
}

int crit_noise() {
    const auto loaded = load_preset("noise robustness", "presets/kdd99.cfg");
    if (!loaded) return 77;
    const std::vector<double> ratios = {0.01, 0.05};
    const auto results = noise_experiment(loaded->ds, loaded->cfg.model, loaded->cfg.train,
                                          options_of(loaded->cfg), ratios, ten_seeds());
    const double f1_1 = 100.0 * results[0].second.mean_f1;
    const double f1_5 = 100.0 * results[1].second.mean_f1;
    const std::size_t failed =
        results[0].second.failed_runs + results[1].second.failed_runs;
    const bool pass = failed == 0 && f1_5 >= kNoiseF1Floor && (f1_1 - f1_5) <= kNoiseMaxDrop;
    return emit("noise robustness", pass,
                "mean F1 " + fmt(f1_1) + " at 1% and " + fmt(f1_5) + " at 5% contamination " +
                    "(floor " + fmt(kNoiseF1Floor) + " at 5%, max drop " + fmt(kNoiseMaxDrop) +
                    "), " + std::to_string(failed) + " failed runs");
}

int crit_ksweep() {
    const auto loaded = load_preset("k sensitivity", "presets/satellite.cfg");
    if (!loaded) return 77;
    std::vector<std::size_t> ks;
    for (std::size_t k = 5; k <= 19; k += 2) ks.push_back(k);
    const auto sweep = k_sweep(loaded->ds, loaded->cfg.model, loaded->cfg.train,
                               options_of(loaded->cfg), ks, ten_seeds());
    double lo = 1e18, hi = -1e18;
    std::size_t failed = 0;
    std::ostringstream per_k;
    for (const auto& [k, rep] : sweep) {
        const double f1 = 100.0 * rep.mean_f1;
        lo = std::min(lo, f1);
        hi = std::max(hi, f1);
        failed += rep.failed_runs;
        per_k << " K=" << k << ":" << fmt(f1);
    }
    const double spread = hi - lo;
    const bool pass = failed == 0 && spread <= kSweepMaxSpread;
    return emit("k sensitivity", pass,
                "mean F1 spread " + fmt(spread) + " over K in {5..19} (max " +
                    fmt(kSweepMaxSpread) + ");" + per_k.str() + "; " +
                    std::to_string(failed) + " failed runs");
}

int crit_ablation() {
    const auto loaded = load_preset("graph ablation", "presets/satellite.cfg");
    if (!loaded) return 77;
    const auto seeds = ten_seeds();
    TrainConfig with = loaded->cfg.train;
    with.ablate_graph = false;
    TrainConfig without = loaded->cfg.train;
    without.ablate_graph = true;
    const ExperimentReport full = run_experiment(loaded->ds, loaded->cfg.model, with,
                                                 options_of(loaded->cfg), seeds);
    const ExperimentReport cut = run_experiment(loaded->ds, loaded->cfg.model, without,
                                                options_of(loaded->cfg), seeds);
    const double margin = 100.0 * (full.mean_f1 - cut.mean_f1);
    const std::size_t failed = full.failed_runs + cut.failed_runs;
    const bool pass = failed == 0 && margin >= kAblationMinMargin;
    return emit("graph ablation", pass,
                "10-seed mean F1 " + fmt(100.0 * full.mean_f1) + " with the graph branch vs " +
                    fmt(100.0 * cut.mean_f1) + " without; margin " + fmt(margin) +
                    " (required >= " + fmt(kAblationMinMargin) + "), " +
                    std::to_string(failed) + " failed runs");
}

int crit_embeddings() {
    const auto loaded = load_preset("embedding export", "presets/kdd99.cfg");
    if (!loaded) return 77;
    const RunConfig& cfg = loaded->cfg;
    const std::uint64_t seed = 1;
    const SplitInfo split = split_train_test(loaded->ds, seed);
    const FeatureStats stats = compute_stats(loaded->ds, split.train_rows);
    const NormalizedView train_view(loaded->ds, stats, split.train_rows);
    TrainConfig tcfg = cfg.train;
    tcfg.seed = seed;
    const TrainArtifacts art = train(train_view, cfg.model, tcfg);

    const NormalizedView test_view(loaded->ds, stats, split.test_rows);
    std::ostringstream out;
    export_embeddings(test_view, cfg.model, art.params, art.gmm, tcfg.batch_size, false, out);

    std::istringstream in(out.str());
    std::string header;
    std::getline(in, header);
    std::size_t header_fields = header.empty() ? 0 : 1;
    for (char c : header) header_fields += c == ',';
    const std::size_t embed_cols = header_fields - 2;  // energy and label trail

    std::size_t rows = 0;
    bool widths_ok = true;
    std::string line;
    while (std::getline(in, line)) {
        std::size_t fields = line.empty() ? 0 : 1;
        for (char c : line) fields += c == ',';
        widths_ok = widths_ok && fields == header_fields;
        ++rows;
    }
    const bool pass = embed_cols == cfg.model.latent_dim + 2 && embed_cols == 10 &&
                      rows == split.test_rows.size() && widths_ok;
    return emit("embedding export", pass,
                std::to_string(embed_cols) + " embedding columns (want 10), " +
                    std::to_string(rows) + " rows for " +
                    std::to_string(split.test_rows.size()) + " test samples");
}

// ------------------------------------------------------------- properties

Matrix two_blobs(SeededRng& rng, std::size_t n, std::size_t f) {
    Matrix x(n, f);
    for (std::size_t i = 0; i < n; ++i) {
        const double center = (i % 2 == 0) ? -0.5 : 0.5;
        for (std::size_t c = 0; c < f; ++c) x(i, c) = center + rng.uniform(-0.05, 0.05);
    }
    return x;
}

bool prop_gradcheck(std::string& detail) {
    SeededRng rng(7);
    ModelConfig mcfg;
    mcfg.input_dim = 5;
    mcfg.feature_layers = {3};
    mcfg.latent_dim = 3;
    mcfg.decoder_layers = {4};
    mcfg.estimation_layers = {4};
    mcfg.mixture_count = 2;
    mcfg.knn_k = 2;
    mcfg.sigma_eps = 1e-2;
    const Matrix x = oracles::random_matrix(rng, 8, mcfg.input_dim, -0.9, 0.9);
    const NeighborGraph graph = build_knn_graph(x, mcfg.knn_k);
    ParamStore params = ParamStore::init_model(mcfg, rng);
    std::vector<Matrix> inits;
    for (std::size_t i = 0; i < params.size(); ++i) inits.push_back(params.value_at(i));
    const double err = oracles::gradcheck(
        [&](Tape& t, std::vector<Var>& leaves) {
            BoundParams p;
            for (std::size_t i = 0; i < leaves.size(); ++i)
                p.items.emplace_back(params.name_at(i), leaves[i]);
            Var xv = t.constant(x);
            const ForwardVars f = model_forward(t, xv, graph, p, mcfg);
            const GmmVars g = gmm_fit_taped(t, f.z, f.membership, mcfg.sigma_eps);
            return assemble_loss(t, xv, f, g, LossWeights{}, 1e-9).total;
        },
        inits);
    detail = "worst relative error " + fmt_sci(err) + " (limit 1e-4)";
    return err < kGradTol;
}

bool prop_energy_oracle(std::string& detail) {
    SeededRng rng(11);
    double worst = 0.0;
    for (int trial = 0; trial < 6; ++trial) {
        const std::size_t n = 4 + rng.index(24);
        const std::size_t m = 1 + rng.index(4);
        const std::size_t d = 1 + rng.index(5);
        GmmState g;
        g.phi = Matrix(1, m);
        double total = 0.0;
        for (std::size_t k = 0; k < m; ++k) {
            g.phi(0, k) = 0.2 + rng.uniform();
            total += g.phi(0, k);
        }
        for (std::size_t k = 0; k < m; ++k) g.phi(0, k) /= total;
        g.mu = oracles::random_matrix(rng, m, d, -1.0, 1.0);
        std::vector<double> phis(m);
        for (std::size_t k = 0; k < m; ++k) {
            g.sigma.push_back(oracles::random_spd(rng, d));
            phis[k] = g.phi(0, k);
        }
        g.degenerate.assign(m, 0);
        const Matrix z = oracles::random_matrix(rng, n, d, -2.0, 2.0);
        const Matrix got = energy(z, g);
        const std::vector<double> want = oracles::naive_mixture_energy(z, phis, g.mu, g.sigma);
        for (std::size_t i = 0; i < n; ++i)
            worst = std::max(worst, std::abs(got(i, 0) - want[i]));
    }
    detail = "worst energy deviation " + fmt_sci(worst) + " (limit 1e-8)";
    return worst < kEnergyOracleTol;
}

bool prop_knn_exact(std::string& detail) {
    SeededRng rng(13);
    std::size_t mismatches = 0, trials = 0;
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 3 + rng.index(62);
        const std::size_t dims = 1 + rng.index(5);
        const std::size_t k = 1 + rng.index(n - 1);
        const Matrix x = oracles::random_matrix(rng, n, dims, -3.0, 3.0);
        const NeighborGraph g = build_knn_graph(x, k);
        const auto want = oracles::brute_force_knn(x, k);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t h = 0; h < k; ++h) {
                ++trials;
                if (g.neighbor(i, h) != want[i][h]) ++mismatches;
            }
    }
    detail = std::to_string(mismatches) + " mismatches over " + std::to_string(trials) +
             " neighbor slots (must be 0)";
    return mismatches == 0;
}

bool prop_row_sums(std::string& detail) {
    SeededRng rng(17);
    ModelConfig cfg;
    cfg.input_dim = 6;
    cfg.feature_layers = {5, 4};
    cfg.latent_dim = 3;
    cfg.decoder_layers = {5};
    cfg.estimation_layers = {4};
    cfg.mixture_count = 3;
    cfg.knn_k = 3;
    double worst = 0.0;
    for (int trial = 0; trial < 4; ++trial) {
        const std::size_t n = 8 + rng.index(12);
        const Matrix x = oracles::random_matrix(rng, n, cfg.input_dim, -1.0, 1.0);
        const NeighborGraph graph = build_knn_graph(x, cfg.knn_k);
        ParamStore params = ParamStore::init_model(cfg, rng);

        Tape t;
        BoundParams p = bind_params(t, params, false);
        Var proj = project_graph_features(t, t.constant(x), p);
        Var alpha = attention_coefficients(t, proj, graph, p);
        for (std::size_t i = 0; i < n; ++i) {
            double row = 0.0;
            for (std::size_t h = 0; h < graph.hood_size(); ++h) row += alpha.value()(i, h);
            worst = std::max(worst, std::abs(row - 1.0));
        }
        const ForwardOutputs out = forward_outputs(x, graph, params, cfg);
        for (std::size_t i = 0; i < n; ++i) {
            double row = 0.0;
            for (std::size_t m = 0; m < cfg.mixture_count; ++m) row += out.membership(i, m);
            worst = std::max(worst, std::abs(row - 1.0));
        }
    }
    detail = "worst |row sum - 1| " + fmt_sci(worst) + " (limit 1e-6)";
    return worst < kRowSumTol;
}

bool prop_flag_count(std::string& detail) {
    SeededRng rng(19);
    std::size_t bad = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + rng.index(300);
        std::vector<double> e(n);
        for (double& v : e) v = rng.uniform(-4.0, 4.0);
        const double ratio = 0.005 + 0.99 * rng.uniform();
        const ThresholdResult r = threshold_by_ratio(e, ratio);
        const auto want = std::min(
            static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n))), n);
        std::size_t flagged = 0;
        for (std::uint8_t p : r.predictions) flagged += p;
        if (r.flag_count != want || flagged != want) ++bad;
    }
    detail = std::to_string(bad) + " of 200 draws broke the ceil(ratio*N) law (must be 0)";
    return bad == 0;
}

bool prop_batch_gmm(std::string& detail) {
    SeededRng rng(23);
    double worst = 0.0;
    for (int trial = 0; trial < 4; ++trial) {
        const std::size_t n = 30 + rng.index(30), d = 2 + rng.index(4), m = 2 + rng.index(3);
        const Matrix z = oracles::random_matrix(rng, n, d);
        Matrix gamma(n, m);
        for (std::size_t i = 0; i < n; ++i) {
            double row = 0.0;
            for (std::size_t k = 0; k < m; ++k) {
                gamma(i, k) = 0.05 + rng.uniform();
                row += gamma(i, k);
            }
            for (std::size_t k = 0; k < m; ++k) gamma(i, k) /= row;
        }
        const GmmState whole = gmm_fit(z, gamma, 1e-6);
        GmmAccumulator acc(m, d);
        std::size_t pos = 0;
        while (pos < n) {
            const std::size_t b = std::min<std::size_t>(7 + rng.index(6), n - pos);
            Matrix zb(b, d), gb(b, m);
            for (std::size_t i = 0; i < b; ++i) {
                for (std::size_t c = 0; c < d; ++c) zb(i, c) = z(pos + i, c);
                for (std::size_t k = 0; k < m; ++k) gb(i, k) = gamma(pos + i, k);
            }
            acc.add_batch(zb, gb);
            pos += b;
        }
        const GmmState split = acc.finalize(1e-6);
        for (std::size_t k = 0; k < m; ++k) {
            worst = std::max(worst, std::abs(split.phi(0, k) - whole.phi(0, k)));
            for (std::size_t c = 0; c < d; ++c)
                worst = std::max(worst, std::abs(split.mu(k, c) - whole.mu(k, c)));
            for (std::size_t r = 0; r < d; ++r)
                for (std::size_t c = 0; c < d; ++c)
                    worst = std::max(worst,
                                     std::abs(split.sigma[k](r, c) - whole.sigma[k](r, c)));
        }
    }
    detail = "worst batched-vs-whole deviation " + fmt_sci(worst) + " (limit 1e-8)";
    return worst < kBatchGmmTol;
}

bool prop_bitwise_repro(std::string& detail) {
    ModelConfig mcfg;
    mcfg.input_dim = 4;
    mcfg.feature_layers = {5, 3};
    mcfg.latent_dim = 2;
    mcfg.decoder_layers = {5};
    mcfg.estimation_layers = {4};
    mcfg.mixture_count = 2;
    mcfg.knn_k = 2;
    TrainConfig tcfg;
    tcfg.iterations = 12;
    tcfg.batch_size = 8;
    tcfg.adam.learning_rate = 1e-2;
    tcfg.seed = 31;

    SeededRng rng(29);
    MatrixSource source(two_blobs(rng, 24, mcfg.input_dim));
    const TrainArtifacts a = train(source, mcfg, tcfg);
    const TrainArtifacts b = train(source, mcfg, tcfg);

    bool same = a.gmm.phi == b.gmm.phi && a.gmm.mu == b.gmm.mu;
    for (std::size_t i = 0; same && i < a.params.size(); ++i)
        same = a.params.value_at(i) == b.params.value_at(i);
    const std::vector<double> ea = score_dataset(source, mcfg, a.params, a.gmm, 8);
    const std::vector<double> eb = score_dataset(source, mcfg, b.params, b.gmm, 8);
    same = same && ea == eb;
    detail = same ? "two seeded train+score cycles agreed on every bit"
                  : "seeded train+score cycles diverged";
    return same;
}

int crit_properties() {
    struct Prop {
        const char* name;
        bool (*fn)(std::string&);
    };
    const Prop props[] = {
        {"end-to-end gradient check", prop_gradcheck},
        {"mixture energy oracle", prop_energy_oracle},
        {"k-NN brute-force oracle", prop_knn_exact},
        {"attention/membership row sums", prop_row_sums},
        {"flag-count law", prop_flag_count},
        {"batched mixture statistics", prop_batch_gmm},
        {"bitwise reproducibility", prop_bitwise_repro},
    };
    bool all = true;
    std::ostringstream summary;
    for (const Prop& prop : props) {
        std::string detail;
        const bool ok = prop.fn(detail);
        std::cout << (ok ? "  [ok]   " : "  [BAD]  ") << prop.name << ": " << detail << '\n';
        if (!ok) {
            all = false;
            summary << (summary.tellp() > 0 ? ", " : "") << prop.name;
        }
    }
    return emit("property suite", all,
                all ? "all 7 invariants held" : "failed: " + summary.str());
}

}  // namespace

int main(int argc, char** argv) {
    if (argc != 2) {
        std::cerr << "usage: acceptance "
                     "{properties|kdd99|satellite|arrhythmia|noise|ksweep|ablation|embeddings}\n";
        return 2;
    }
    const std::string which = argv[1];
    try {
        if (which == "properties") return crit_properties();
        if (which == "kdd99") return crit_kdd99();
        if (which == "satellite") return crit_satellite();
        if (which == "arrhythmia") return crit_arrhythmia();
        if (which == "noise") return crit_noise();
        if (which == "ksweep") return crit_ksweep();
        if (which == "ablation") return crit_ablation();
        if (which == "embeddings") return crit_embeddings();
    } catch (const std::exception& e) {
        std::cout << "[FAIL] " << which << ": unexpected error: " << e.what() << std::endl;
        return 1;
    }
    std::cerr << "unknown criterion \"" << which << "\"\n";
    return 2;
}
