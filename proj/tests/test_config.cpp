#include <doctest.h>

#include <string>
#include <vector>

#include "cadgmm/config.hpp"

using namespace cadgmm;

namespace {

const std::string kFullText = R"(# sample configuration
[dataset]
recipe = presets/sample.recipe
cache = data/sample.cache

[model]
input_dim = 120
feature_layers = 64,32
latent_dim = 8
decoder_layers = 32,64
estimation_layers = 20,8
mixture_count = 4
knn_k = 15
decoder_output_tanh = true
sigma_eps = 1e-6

[train]
iterations = 300
batch_size = 1024
learning_rate = 1e-4
seed = 1
lambda_energy = 0.1
lambda_cov = 0.005
lambda_embed = 10
ablate_graph = false

[eval]
threshold_ratio = 0.2
batch_size = 0

[output]
dir = runs/sample
)";

}  // namespace

TEST_CASE("a full configuration file parses into every field") {
    const RunConfig cfg = RunConfig::parse(kFullText, "sample.cfg");
    CHECK(cfg.recipe_path == "presets/sample.recipe");
    CHECK(cfg.cache_path == "data/sample.cache");
    CHECK(cfg.model.input_dim == 120);
    CHECK(cfg.model.feature_layers == std::vector<std::size_t>{64, 32});
    CHECK(cfg.model.latent_dim == 8);
    CHECK(cfg.model.decoder_layers == std::vector<std::size_t>{32, 64});
    CHECK(cfg.model.estimation_layers == std::vector<std::size_t>{20, 8});
    CHECK(cfg.model.mixture_count == 4);
    CHECK(cfg.model.knn_k == 15);
    CHECK(cfg.model.decoder_output_tanh);
    CHECK(cfg.model.sigma_eps == 1e-6);
    CHECK(cfg.train.iterations == 300);
    CHECK(cfg.train.batch_size == 1024);
    CHECK(cfg.train.adam.learning_rate == 1e-4);
    CHECK(cfg.train.seed == 1);
    CHECK(cfg.train.weights.lambda_energy == 0.1);
    CHECK(cfg.train.weights.lambda_cov == 0.005);
    CHECK(cfg.train.weights.lambda_embed == 10.0);
    CHECK_FALSE(cfg.train.ablate_graph);
    CHECK(cfg.eval_threshold_ratio == 0.2);
    CHECK(cfg.eval_batch_size == 0);
    CHECK(cfg.out_dir == "runs/sample");
    cfg.model.validate();
    cfg.train.validate(cfg.model);
}

TEST_CASE("echo is stable: parsing the echo reproduces the echo") {
    const RunConfig cfg = RunConfig::parse(kFullText, "sample.cfg");
    const std::string echoed = cfg.echo();
    const RunConfig back = RunConfig::parse(echoed, "echo");
    CHECK(back.echo() == echoed);
    CHECK(back.model.feature_layers == cfg.model.feature_layers);
    CHECK(back.train.adam.learning_rate == cfg.train.adam.learning_rate);
    CHECK(back.eval_threshold_ratio == cfg.eval_threshold_ratio);
}

TEST_CASE("unknown keys are rejected with origin and line number") {
    const std::string text = "[model]\ninput_dim = 4\nwidget_count = 9\n";
    try {
        RunConfig::parse(text, "broken.cfg");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("broken.cfg") != std::string::npos);
        CHECK(msg.find("line 3") != std::string::npos);
        CHECK(msg.find("widget_count") != std::string::npos);
    }
}

TEST_CASE("keys before any section header are rejected") {
    CHECK_THROWS_AS(RunConfig::parse("input_dim = 4\n", "t"), ParseError);
}

TEST_CASE("bad values are rejected with their key") {
    CHECK_THROWS_AS(RunConfig::parse("[model]\ninput_dim = banana\n", "t"), ParseError);
    CHECK_THROWS_AS(RunConfig::parse("[train]\nlearning_rate = fast\n", "t"), ParseError);
    CHECK_THROWS_AS(RunConfig::parse("[model]\ndecoder_output_tanh = maybe\n", "t"), ParseError);
    CHECK_THROWS_AS(RunConfig::parse("[model]\nfeature_layers = 8,,4\n", "t"), ParseError);
    CHECK_THROWS_AS(RunConfig::parse("[nonsense]\nx = 1\n", "t"), ParseError);
}

TEST_CASE("comments and blank lines are ignored") {
    const std::string text =
        "# top comment\n\n[model]\n; alt comment\ninput_dim = 7\n\n[train]\nseed = 3\n";
    const RunConfig cfg = RunConfig::parse(text, "t");
    CHECK(cfg.model.input_dim == 7);
    CHECK(cfg.train.seed == 3);
}

TEST_CASE("dotted-key overrides update the parsed config in place") {
    RunConfig cfg = RunConfig::parse(kFullText, "sample.cfg");
    cfg.set("train.seed", "99", "cli");
    cfg.set("model.knn_k", "7", "cli");
    cfg.set("eval.threshold_ratio", "0.31", "cli");
    cfg.set("train.lambda_embed", "0.001", "cli");
    CHECK(cfg.train.seed == 99);
    CHECK(cfg.model.knn_k == 7);
    CHECK(cfg.eval_threshold_ratio == 0.31);
    CHECK(cfg.train.weights.lambda_embed == 0.001);
    CHECK_THROWS_AS(cfg.set("train.warp_speed", "9", "cli"), ParseError);
    CHECK_THROWS_AS(cfg.set("no_dot_here", "9", "cli"), ParseError);
}

TEST_CASE("the shipped preset files parse and encode the published settings") {
    struct Expect {
        const char* path;
        std::size_t iterations, batch, k, mixtures;
        double lambda_embed, threshold;
    };
    const Expect presets[] = {
        {"presets/kdd99.cfg", 300, 1024, 15, 4, 10.0, 0.2},
        {"presets/arrhythmia.cfg", 20000, 128, 5, 2, 0.001, 0.15},
        {"presets/satellite.cfg", 3000, 512, 13, 4, 0.005, 0.32},
    };
    for (const Expect& e : presets) {
        CAPTURE(e.path);
        const RunConfig cfg = RunConfig::from_file(std::string(CADGMM_SOURCE_DIR) + "/" + e.path);
        CHECK(cfg.train.iterations == e.iterations);
        CHECK(cfg.train.batch_size == e.batch);
        CHECK(cfg.model.knn_k == e.k);
        CHECK(cfg.model.mixture_count == e.mixtures);
        CHECK(cfg.train.weights.lambda_energy == 0.1);
        CHECK(cfg.train.weights.lambda_cov == 0.005);
        CHECK(cfg.train.weights.lambda_embed == e.lambda_embed);
        CHECK(cfg.train.adam.learning_rate == 1e-4);
        CHECK(cfg.eval_threshold_ratio == e.threshold);
        cfg.model.validate();
        cfg.train.validate(cfg.model);
    }
}
