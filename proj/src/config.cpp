#include "cadgmm/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace cadgmm {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
    while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
    return s.substr(b, e - b);
}

std::size_t to_count(const std::string& v, const std::string& where) {
    std::size_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
        throw ParseError(where + ": \"" + v + "\" is not a nonnegative integer");
    }
    return out;
}

std::uint64_t to_u64(const std::string& v, const std::string& where) {
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
        throw ParseError(where + ": \"" + v + "\" is not a nonnegative integer");
    }
    return out;
}

double to_real(const std::string& v, const std::string& where) {
    double out = 0.0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) {
        throw ParseError(where + ": \"" + v + "\" is not a finite number");
    }
    return out;
}

bool to_bool(const std::string& v, const std::string& where) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ParseError(where + ": \"" + v + "\" is not a boolean");
}

std::vector<std::size_t> to_count_list(const std::string& v, const std::string& where) {
    std::vector<std::size_t> out;
    std::string token;
    std::istringstream in(v);
    while (std::getline(in, token, ',')) {
        const std::string t = trim(token);
        if (t.empty()) throw ParseError(where + ": empty item in list \"" + v + "\"");
        out.push_back(to_count(t, where));
    }
    return out;
}

std::string render_count_list(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
    return out;
}

std::string render_real(double v) {
    std::ostringstream out;
    out << std::setprecision(17) << v;
    return out.str();
}

}  // namespace

void RunConfig::set(const std::string& dotted_key, const std::string& raw_value,
                    const std::string& origin) {
    const std::string value = trim(raw_value);
    const std::string where = origin + ": " + dotted_key;
    if (dotted_key == "dataset.recipe") recipe_path = value;
    else if (dotted_key == "dataset.cache") cache_path = value;
    else if (dotted_key == "model.input_dim") model.input_dim = to_count(value, where);
    else if (dotted_key == "model.feature_layers") model.feature_layers = to_count_list(value, where);
    else if (dotted_key == "model.latent_dim") model.latent_dim = to_count(value, where);
    else if (dotted_key == "model.decoder_layers") model.decoder_layers = to_count_list(value, where);
    else if (dotted_key == "model.estimation_layers") model.estimation_layers = to_count_list(value, where);
    else if (dotted_key == "model.mixture_count") model.mixture_count = to_count(value, where);
    else if (dotted_key == "model.knn_k") model.knn_k = to_count(value, where);
    else if (dotted_key == "model.decoder_output_tanh") model.decoder_output_tanh = to_bool(value, where);
    else if (dotted_key == "model.sigma_eps") model.sigma_eps = to_real(value, where);
    else if (dotted_key == "train.iterations") train.iterations = to_count(value, where);
    else if (dotted_key == "train.batch_size") train.batch_size = to_count(value, where);
    else if (dotted_key == "train.learning_rate") train.adam.learning_rate = to_real(value, where);
    else if (dotted_key == "train.seed") train.seed = to_u64(value, where);
    else if (dotted_key == "train.lambda_energy") train.weights.lambda_energy = to_real(value, where);
    else if (dotted_key == "train.lambda_cov") train.weights.lambda_cov = to_real(value, where);
    else if (dotted_key == "train.lambda_embed") train.weights.lambda_embed = to_real(value, where);
    else if (dotted_key == "train.ablate_graph") train.ablate_graph = to_bool(value, where);
    else if (dotted_key == "eval.threshold_ratio") eval_threshold_ratio = to_real(value, where);
    else if (dotted_key == "eval.batch_size") eval_batch_size = to_count(value, where);
    else if (dotted_key == "output.dir") out_dir = value;
    else throw ParseError(origin + ": unknown configuration key \"" + dotted_key + "\"");
}

RunConfig RunConfig::parse(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        const std::string where = origin + ", line " + std::to_string(line_no);
        if (t.front() == '[') {
            if (t.back() != ']') throw ParseError(where + ": unterminated section header");
            section = trim(t.substr(1, t.size() - 2));
            if (section.empty()) throw ParseError(where + ": empty section name");
            continue;
        }
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos) throw ParseError(where + ": expected key = value");
        const std::string key = trim(t.substr(0, eq));
        if (section.empty()) throw ParseError(where + ": key \"" + key + "\" outside a section");
        cfg.set(section + "." + key, t.substr(eq + 1), where);
    }
    return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream file(path);
    if (!file) throw ParseError("cannot open config " + path);
    std::ostringstream buf;
    buf << file.rdbuf();
    return parse(buf.str(), path);
}

std::string RunConfig::echo() const {
    std::ostringstream out;
    out << "[dataset]\n";
    out << "recipe = " << recipe_path << '\n';
    out << "cache = " << cache_path << '\n';
    out << "\n[model]\n";
    out << "input_dim = " << model.input_dim << '\n';
    out << "feature_layers = " << render_count_list(model.feature_layers) << '\n';
    out << "latent_dim = " << model.latent_dim << '\n';
    out << "decoder_layers = " << render_count_list(model.decoder_layers) << '\n';
    out << "estimation_layers = " << render_count_list(model.estimation_layers) << '\n';
    out << "mixture_count = " << model.mixture_count << '\n';
    out << "knn_k = " << model.knn_k << '\n';
    out << "decoder_output_tanh = " << (model.decoder_output_tanh ? "true" : "false") << '\n';
    out << "sigma_eps = " << render_real(model.sigma_eps) << '\n';
    out << "\n[train]\n";
    out << "iterations = " << train.iterations << '\n';
    out << "batch_size = " << train.batch_size << '\n';
    out << "learning_rate = " << render_real(train.adam.learning_rate) << '\n';
    out << "seed = " << train.seed << '\n';
    out << "lambda_energy = " << render_real(train.weights.lambda_energy) << '\n';
    out << "lambda_cov = " << render_real(train.weights.lambda_cov) << '\n';
    out << "lambda_embed = " << render_real(train.weights.lambda_embed) << '\n';
    out << "ablate_graph = " << (train.ablate_graph ? "true" : "false") << '\n';
    out << "\n[eval]\n";
    out << "threshold_ratio = " << render_real(eval_threshold_ratio) << '\n';
    out << "batch_size = " << eval_batch_size << '\n';
    out << "\n[output]\n";
    out << "dir = " << out_dir << '\n';
    return out.str();
}

}  // namespace cadgmm
