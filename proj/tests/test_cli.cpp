#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include <json.hpp>

#include "cadgmm/rng.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path& work() {
    static const fs::path dir = [] {
        fs::path p(CLI_WORK_DIR);
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return dir;
}

std::string path_of(const std::string& name) { return (work() / name).string(); }

int run_cli(const std::string& args, const std::string& log_name) {
    const std::string cmd = std::string(CADGMM_BIN) + " " + args + " > " +
                            path_of(log_name + ".out") + " 2> " + path_of(log_name + ".err");
    const int status = std::system(cmd.c_str());
    if (status == -1) return -1;
    return WIFEXITED(status) ? WEXITSTATUS(status) : -2;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::size_t line_count(const std::string& text) {
    std::size_t n = 0;
    for (char c : text) n += c == '\n';
    return n;
}

/// Two separated clusters with a categorical color column; label in the
/// last CSV column, 25% anomalies.
void write_corpus(const std::string& csv_name, std::uint64_t seed) {
    cadgmm::SeededRng rng(seed);
    std::ofstream out(path_of(csv_name));
    const char* colors[] = {"red", "blue", "green"};
    for (int i = 0; i < 300; ++i) {
        const bool anomaly = rng.uniform() < 0.25;
        const double c = anomaly ? 10.0 : 0.0;
        out << c + rng.uniform(-0.5, 0.5) << ',' << c + rng.uniform(-0.5, 0.5) << ','
            << colors[rng.index(3)] << ',' << (anomaly ? "bad" : "ok") << '\n';
    }
}

void write_setup_files() {
    write_corpus("data.csv", 1234);
    {
        std::ofstream r(path_of("test.recipe"));
        r << "source = " << path_of("data.csv") << "\n"
          << "anomaly_values = bad\n"
          << "categorical_columns = 2\n"
          << "expected_features = 5\n";
    }
    std::ofstream c(path_of("test.cfg"));
    c << "[dataset]\n"
      << "recipe = " << path_of("test.recipe") << "\n"
      << "cache = " << path_of("cache.bin") << "\n"
      << "[model]\n"
      << "input_dim = 5\n"
      << "feature_layers = 5,3\n"
      << "latent_dim = 2\n"
      << "decoder_layers = 5\n"
      << "estimation_layers = 4\n"
      << "mixture_count = 2\n"
      << "knn_k = 2\n"
      << "[train]\n"
      << "iterations = 10\n"
      << "batch_size = 16\n"
      << "learning_rate = 0.01\n"
      << "seed = 1\n"
      << "[eval]\n"
      << "threshold_ratio = 0.25\n";
}

int ensure_setup() {
    static const int rc = [] {
        write_setup_files();
        return run_cli("prepare --recipe " + path_of("test.recipe") + " --out " +
                           path_of("cache.bin") + " --seed 5",
                       "prepare");
    }();
    return rc;
}

int ensure_trained() {
    static const int rc = [] {
        if (ensure_setup() != 0) return -3;
        return run_cli("train --config " + path_of("test.cfg") + " --out " + path_of("run1"),
                       "train1");
    }();
    return rc;
}

}  // namespace

TEST_CASE("prepare encodes a CSV into a cache plus a vocabulary-bearing recipe echo") {
    REQUIRE(ensure_setup() == 0);
    CHECK(fs::exists(path_of("cache.bin")));
    CHECK(fs::exists(path_of("cache.bin.recipe")));

    const nlohmann::json j = nlohmann::json::parse(read_file(path_of("prepare.out")));
    CHECK(j["rows"].get<std::size_t>() == 300);
    CHECK(j["features"].get<std::size_t>() == 5);  // 2 numeric + 3 colors
    CHECK(j["train_rows"].get<std::size_t>() + j["held_anomalies"].get<std::size_t>() == 150);
    CHECK(j["test_rows"].get<std::size_t>() == 150);
    CHECK(j["anomaly_ratio"].get<double>() > 0.1);
    CHECK(j.contains("fingerprint"));

    const std::string echo = read_file(path_of("cache.bin.recipe"));
    CHECK(echo.find("vocab.2") != std::string::npos);
}

TEST_CASE("prepare is byte-reproducible for a fixed seed") {
    REQUIRE(ensure_setup() == 0);
    REQUIRE(run_cli("prepare --recipe " + path_of("test.recipe") + " --out " +
                        path_of("cache_again.bin") + " --seed 5",
                    "prepare2") == 0);
    CHECK(read_file(path_of("cache_again.bin")) == read_file(path_of("cache.bin")));

    REQUIRE(run_cli("prepare --recipe " + path_of("test.recipe") + " --out " +
                        path_of("cache_seed9.bin") + " --seed 9",
                    "prepare3") == 0);
    CHECK(read_file(path_of("cache_seed9.bin")) != read_file(path_of("cache.bin")));
}

TEST_CASE("train writes a checkpoint, a log, and the effective config") {
    REQUIRE(ensure_trained() == 0);
    CHECK(fs::exists(path_of("run1/checkpoint.bin")));
    const std::string log = read_file(path_of("run1/training_log.csv"));
    CHECK(line_count(log) == 11);  // header + one row per iteration
    CHECK(log.rfind("iteration,recon,energy,cov_penalty,embed_penalty,total\n", 0) == 0);
    const std::string echo = read_file(path_of("run1/effective_config.cfg"));
    CHECK(echo.find("iterations = 10") != std::string::npos);
    CHECK(echo.find("knn_k = 2") != std::string::npos);
}

TEST_CASE("training twice with one seed produces byte-identical checkpoints") {
    REQUIRE(ensure_setup() == 0);
    REQUIRE(run_cli("train --config " + path_of("test.cfg") + " --seed 7 --iterations 6 --out " +
                        path_of("runA"),
                    "trainA") == 0);
    REQUIRE(run_cli("train --config " + path_of("test.cfg") + " --seed 7 --iterations 6 --out " +
                        path_of("runB"),
                    "trainB") == 0);
    CHECK(read_file(path_of("runA/checkpoint.bin")) == read_file(path_of("runB/checkpoint.bin")));
    CHECK(read_file(path_of("runA/training_log.csv")) ==
          read_file(path_of("runB/training_log.csv")));

    REQUIRE(run_cli("train --config " + path_of("test.cfg") + " --seed 8 --iterations 6 --out " +
                        path_of("runC"),
                    "trainC") == 0);
    CHECK(read_file(path_of("runC/checkpoint.bin")) != read_file(path_of("runA/checkpoint.bin")));
}

TEST_CASE("eval reports metrics and writes scores and embeddings") {
    REQUIRE(ensure_trained() == 0);
    REQUIRE(run_cli("eval --checkpoint " + path_of("run1/checkpoint.bin") + " --cache " +
                        path_of("cache.bin") + " --threshold-ratio 0.25 --report " +
                        path_of("report.json") + " --scores-csv " + path_of("scores.csv") +
                        " --export-embeddings " + path_of("emb.csv"),
                    "eval1") == 0);

    const nlohmann::json j = nlohmann::json::parse(read_file(path_of("report.json")));
    CHECK(j["test_rows"].get<std::size_t>() == 150);
    CHECK(j.contains("precision"));
    CHECK(j.contains("recall"));
    CHECK(j.contains("f1"));
    CHECK(j.contains("threshold"));
    CHECK(j["flag_count"].get<std::size_t>() == 38);  // ceil(0.25 * 150)

    const std::string scores = read_file(path_of("scores.csv"));
    CHECK(line_count(scores) == 151);
    CHECK(scores.rfind("row,energy,label,predicted\n", 0) == 0);

    const std::string emb = read_file(path_of("emb.csv"));
    CHECK(line_count(emb) == 151);
    CHECK(emb.rfind("z0,z1,z2,z3,energy,label\n", 0) == 0);
}

TEST_CASE("eval refuses a cache whose fingerprint disagrees with the checkpoint") {
    REQUIRE(ensure_trained() == 0);
    write_corpus("data2.csv", 777);
    {
        std::ofstream r(path_of("other.recipe"));
        r << "source = " << path_of("data2.csv") << "\n"
          << "anomaly_values = bad\n"
          << "categorical_columns = 2\n";
    }
    REQUIRE(run_cli("prepare --recipe " + path_of("other.recipe") + " --out " +
                        path_of("other.cache") + " --seed 5",
                    "prepare_other") == 0);
    const int rc = run_cli("eval --checkpoint " + path_of("run1/checkpoint.bin") + " --cache " +
                               path_of("other.cache"),
                           "eval_mismatch");
    CHECK(rc != 0);
    const std::string err = read_file(path_of("eval_mismatch.err"));
    CHECK(err.find("fingerprint") != std::string::npos);
}

TEST_CASE("the graph branch can be ablated from the command line") {
    REQUIRE(ensure_setup() == 0);
    REQUIRE(run_cli("train --config " + path_of("test.cfg") +
                        " --ablate-graph --iterations 4 --out " + path_of("run_ablate"),
                    "train_ablate") == 0);
    REQUIRE(run_cli("eval --checkpoint " + path_of("run_ablate/checkpoint.bin") + " --cache " +
                        path_of("cache.bin"),
                    "eval_ablate") == 0);
    const std::string echo = read_file(path_of("run_ablate/effective_config.cfg"));
    CHECK(echo.find("ablate_graph = true") != std::string::npos);
}

TEST_CASE("config overrides via --set flow into the effective config") {
    REQUIRE(ensure_setup() == 0);
    REQUIRE(run_cli("train --config " + path_of("test.cfg") +
                        " --set train.iterations=3 --set model.knn_k=3 --out " +
                        path_of("run_set"),
                    "train_set") == 0);
    const std::string echo = read_file(path_of("run_set/effective_config.cfg"));
    CHECK(echo.find("iterations = 3") != std::string::npos);
    CHECK(echo.find("knn_k = 3") != std::string::npos);
    const std::string log = read_file(path_of("run_set/training_log.csv"));
    CHECK(line_count(log) == 4);
}

TEST_CASE("a k sweep fans out over settings and seeds into summary files") {
    REQUIRE(ensure_setup() == 0);
    REQUIRE(run_cli("sweep --config " + path_of("test.cfg") + " --k-list 2..4:2" +
                        " --seed-list 1,2 --set train.iterations=4 --out " + path_of("sweep1"),
                    "sweep1") == 0);
    const std::string runs = read_file(path_of("sweep1/sweep_runs.csv"));
    CHECK(line_count(runs) == 5);  // header + 2 settings x 2 seeds
    const std::string summary = read_file(path_of("sweep1/sweep_summary.csv"));
    CHECK(line_count(summary) == 3);  // header + 2 settings
    const nlohmann::json j = nlohmann::json::parse(read_file(path_of("sweep1/report.json")));
    CHECK(j["mode"].get<std::string>() == "k");
    REQUIRE(j["settings"].size() == 2);
    CHECK(j["settings"][0]["setting"].get<std::string>() == "k=2");
    CHECK(j["settings"][1]["setting"].get<std::string>() == "k=4");
    CHECK(j["settings"][0]["report"]["runs"].size() == 2);
}

TEST_CASE("a parallel noise sweep matches its own summary arithmetic") {
    REQUIRE(ensure_setup() == 0);
    REQUIRE(run_cli("sweep --config " + path_of("test.cfg") + " --noise-list 5" +
                        " --seed-list 3 --jobs 2 --set train.iterations=4 --out " +
                        path_of("sweep_noise"),
                    "sweep_noise") == 0);
    const nlohmann::json j = nlohmann::json::parse(read_file(path_of("sweep_noise/report.json")));
    CHECK(j["mode"].get<std::string>() == "noise");
    REQUIRE(j["settings"].size() == 1);
    CHECK(j["settings"][0]["setting"].get<std::string>() == "noise=5%");
    CHECK(j["settings"][0]["report"]["noise_ratio"].get<double>() == doctest::Approx(0.05));
}

TEST_CASE("usage errors exit nonzero") {
    REQUIRE(ensure_setup() == 0);
    CHECK(run_cli("", "err_nocmd") != 0);
    CHECK(run_cli("prepare --recipe " + path_of("nope.recipe") + " --out " + path_of("x.bin"),
                  "err_norecipe") != 0);
    CHECK(run_cli("train --config " + path_of("test.cfg") + " --set model.bogus=1 --out " +
                      path_of("run_err"),
                  "err_badset") != 0);
    CHECK(run_cli("train --config " + path_of("nope.cfg") + " --out " + path_of("run_err2"),
                  "err_nocfg") != 0);
    CHECK(run_cli("sweep --config " + path_of("test.cfg") + " --k-list 2 --noise-list 1 --out " +
                      path_of("sweep_err"),
                  "err_bothlists") != 0);
    CHECK(run_cli("sweep --config " + path_of("test.cfg") + " --out " + path_of("sweep_err2"),
                  "err_nolists") != 0);
    CHECK(run_cli("eval --checkpoint " + path_of("absent.bin") + " --cache " +
                      path_of("cache.bin"),
                  "err_nockpt") != 0);
}
