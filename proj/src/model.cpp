#include "cadgmm/model.hpp"

#include <cmath>
#include <numbers>

namespace cadgmm {

namespace {

constexpr double kPhiFloor = 1e-30;  // keeps log phi finite for empty components

Matrix xavier_uniform(std::size_t fan_in, std::size_t fan_out, std::size_t rows,
                      std::size_t cols, SeededRng& rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Matrix w(rows, cols);
    for (std::size_t i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
    return w;
}

void add_linear(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                SeededRng& rng) {
    store.add(prefix + ".w", xavier_uniform(in, out, in, out, rng));
    store.add(prefix + ".b", Matrix(1, out));
}

/// tanh(h W + b) chains; `final_linear` leaves the last layer unactivated.
Var mlp_chain(Tape& tape, Var h, const BoundParams& p, const std::string& prefix,
              std::size_t layer_count, bool final_tanh) {
    for (std::size_t l = 0; l < layer_count; ++l) {
        const std::string name = prefix + std::to_string(l);
        h = tape.add_row(tape.matmul(h, p.at(name + ".w")), p.at(name + ".b"));
        if (l + 1 < layer_count || final_tanh) h = tape.tanh(h);
    }
    return h;
}

}  // namespace

void ModelConfig::validate() const {
    if (input_dim == 0) throw ShapeError("ModelConfig: input_dim is zero");
    if (feature_layers.empty()) throw ShapeError("ModelConfig: feature encoder has no layers");
    for (std::size_t w : feature_layers) {
        if (w == 0) throw ShapeError("ModelConfig: zero-width feature layer");
    }
    for (std::size_t w : decoder_layers) {
        if (w == 0) throw ShapeError("ModelConfig: zero-width decoder layer");
    }
    for (std::size_t w : estimation_layers) {
        if (w == 0) throw ShapeError("ModelConfig: zero-width estimation layer");
    }
    if (latent_dim == 0) throw ShapeError("ModelConfig: latent_dim is zero");
    if (mixture_count == 0) throw ShapeError("ModelConfig: mixture_count is zero");
    if (knn_k == 0) throw ShapeError("ModelConfig: knn_k is zero");
    if (!(sigma_eps > 0.0)) throw NumericError("ModelConfig: sigma_eps must be positive");
}

ModelConfig ModelConfig::kdd99() {
    ModelConfig cfg;
    cfg.input_dim = 120;
    cfg.feature_layers = {64, 32};
    cfg.latent_dim = 8;
    cfg.decoder_layers = {32, 64};
    cfg.estimation_layers = {20, 8};
    cfg.mixture_count = 4;
    cfg.knn_k = 15;
    return cfg;
}

ModelConfig ModelConfig::arrhythmia() {
    ModelConfig cfg;
    cfg.input_dim = 274;
    cfg.feature_layers = {32};
    cfg.latent_dim = 2;
    cfg.decoder_layers = {10};
    cfg.estimation_layers = {10};
    cfg.mixture_count = 2;
    cfg.knn_k = 5;
    return cfg;
}

ModelConfig ModelConfig::satellite() {
    ModelConfig cfg;
    cfg.input_dim = 36;
    cfg.feature_layers = {16};
    cfg.latent_dim = 2;
    cfg.decoder_layers = {16};
    cfg.estimation_layers = {10};
    cfg.mixture_count = 4;
    cfg.knn_k = 13;
    return cfg;
}

std::size_t ParamStore::find(const std::string& name) const {
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].first == name) return i;
    }
    return entries_.size();
}

Matrix& ParamStore::add(const std::string& name, Matrix value) {
    if (find(name) != entries_.size()) {
        throw ShapeError("ParamStore: duplicate parameter \"" + name + "\"");
    }
    entries_.emplace_back(name, std::move(value));
    return entries_.back().second;
}

bool ParamStore::contains(const std::string& name) const { return find(name) != entries_.size(); }

Matrix& ParamStore::get(const std::string& name) {
    const std::size_t i = find(name);
    if (i == entries_.size()) throw ShapeError("ParamStore: no parameter \"" + name + "\"");
    return entries_[i].second;
}

const Matrix& ParamStore::get(const std::string& name) const {
    const std::size_t i = find(name);
    if (i == entries_.size()) throw ShapeError("ParamStore: no parameter \"" + name + "\"");
    return entries_[i].second;
}

std::size_t ParamStore::total_scalars() const {
    std::size_t total = 0;
    for (const auto& [name, value] : entries_) total += value.size();
    return total;
}

ParamStore ParamStore::init_model(const ModelConfig& cfg, SeededRng& rng) {
    cfg.validate();
    ParamStore store;
    std::size_t in = cfg.input_dim;
    for (std::size_t l = 0; l < cfg.feature_layers.size(); ++l) {
        add_linear(store, "enc.f" + std::to_string(l), in, cfg.feature_layers[l], rng);
        in = cfg.feature_layers[l];
    }
    const std::size_t d = cfg.embed_dim();
    store.add("enc.g.proj.w", xavier_uniform(cfg.input_dim, d, cfg.input_dim, d, rng));
    // Attention vector over [proj_i || proj_j]; stored whole, split when used.
    store.add("enc.g.attn.a", xavier_uniform(2 * d, 1, 2 * d, 1, rng));
    add_linear(store, "fuse", d, cfg.latent_dim, rng);
    in = cfg.latent_dim;
    for (std::size_t l = 0; l < cfg.decoder_layers.size(); ++l) {
        add_linear(store, "dec." + std::to_string(l), in, cfg.decoder_layers[l], rng);
        in = cfg.decoder_layers[l];
    }
    add_linear(store, "dec." + std::to_string(cfg.decoder_layers.size()), in, cfg.input_dim, rng);
    in = cfg.energy_dim();
    for (std::size_t l = 0; l < cfg.estimation_layers.size(); ++l) {
        add_linear(store, "est." + std::to_string(l), in, cfg.estimation_layers[l], rng);
        in = cfg.estimation_layers[l];
    }
    add_linear(store, "est." + std::to_string(cfg.estimation_layers.size()), in,
               cfg.mixture_count, rng);
    return store;
}

Var BoundParams::at(const std::string& name) const {
    for (const auto& [n, v] : items) {
        if (n == name) return v;
    }
    throw ShapeError("BoundParams: no parameter \"" + name + "\"");
}

BoundParams bind_params(Tape& tape, const ParamStore& params, bool trainable) {
    BoundParams bound;
    bound.items.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Matrix& value = params.value_at(i);
        bound.items.emplace_back(params.name_at(i),
                                 trainable ? tape.leaf(value) : tape.constant(value));
    }
    return bound;
}

Var feature_encode(Tape& tape, Var x, const BoundParams& p, const ModelConfig& cfg) {
    return mlp_chain(tape, x, p, "enc.f", cfg.feature_layers.size(), /*final_tanh=*/true);
}

Var project_graph_features(Tape& tape, Var x, const BoundParams& p) {
    return tape.matmul(x, p.at("enc.g.proj.w"));
}

Var attention_coefficients(Tape& tape, Var proj, const NeighborGraph& graph,
                           const BoundParams& p) {
    if (proj.rows() != graph.n_nodes()) {
        throw ShapeError("attention_coefficients: " + std::to_string(proj.rows()) +
                         " projected rows vs " + std::to_string(graph.n_nodes()) +
                         " graph nodes");
    }
    const std::size_t d = proj.cols();
    Var a = p.at("enc.g.attn.a");
    Var a_self = tape.slice(a, 0, d, 0, 1);
    Var a_peer = tape.slice(a, d, 2 * d, 0, 1);
    // a^T [p_i || p_j] splits into s_self(i) + s_peer(j); gather the peer
    // term over each neighborhood and broadcast the self term down the row.
    Var s_self = tape.matmul(proj, a_self);
    Var s_peer = tape.matmul(proj, a_peer);
    Var scores = tape.tanh(tape.add_col(tape.gather_hood(s_peer, graph), s_self));
    return tape.row_softmax(scores);
}

Var graph_encode(Tape& tape, Var x, const NeighborGraph& graph, const BoundParams& p) {
    Var proj = project_graph_features(tape, x, p);
    Var alpha = attention_coefficients(tape, proj, graph, p);
    return tape.tanh(tape.hood_weighted_sum(alpha, proj, graph));
}

Var fuse(Tape& tape, Var z_feat, Var z_graph, const BoundParams& p) {
    Var summed = tape.add(z_feat, z_graph);
    return tape.add_row(tape.matmul(summed, p.at("fuse.w")), p.at("fuse.b"));
}

Var decode(Tape& tape, Var z_latent, const BoundParams& p, const ModelConfig& cfg) {
    return mlp_chain(tape, z_latent, p, "dec.", cfg.decoder_layers.size() + 1,
                     cfg.decoder_output_tanh);
}

Var estimate_membership(Tape& tape, Var z, const BoundParams& p, const ModelConfig& cfg) {
    Var logits = mlp_chain(tape, z, p, "est.", cfg.estimation_layers.size() + 1,
                           /*final_tanh=*/false);
    return tape.row_softmax(logits);
}

ForwardVars model_forward(Tape& tape, Var x, const NeighborGraph& graph, const BoundParams& p,
                          const ModelConfig& cfg, bool ablate_graph) {
    if (x.cols() != cfg.input_dim) {
        throw ShapeError("model_forward: input has " + std::to_string(x.cols()) +
                         " columns, config expects " + std::to_string(cfg.input_dim));
    }
    ForwardVars out;
    out.z_feat = feature_encode(tape, x, p, cfg);
    out.z_graph = ablate_graph ? tape.constant(Matrix(x.rows(), cfg.embed_dim()))
                               : graph_encode(tape, x, graph, p);
    out.z_latent = fuse(tape, out.z_feat, out.z_graph, p);
    out.x_hat = decode(tape, out.z_latent, p, cfg);
    out.z_recon = tape.recon_features(x, out.x_hat);
    const Var parts[] = {out.z_latent, out.z_recon};
    out.z = tape.hcat(parts);
    out.membership = estimate_membership(tape, out.z, p, cfg);
    return out;
}

ForwardOutputs forward_outputs(const Matrix& x, const NeighborGraph& graph,
                               const ParamStore& params, const ModelConfig& cfg,
                               bool ablate_graph) {
    Tape tape;
    Var xv = tape.constant(x);
    BoundParams bound = bind_params(tape, params, /*trainable=*/false);
    ForwardVars f = model_forward(tape, xv, graph, bound, cfg, ablate_graph);
    ForwardOutputs out;
    out.z_feat = f.z_feat.value();
    out.z_graph = f.z_graph.value();
    out.z_latent = f.z_latent.value();
    out.x_hat = f.x_hat.value();
    out.z_recon = f.z_recon.value();
    out.z = f.z.value();
    out.membership = f.membership.value();
    return out;
}

GmmVars gmm_fit_taped(Tape& tape, Var z, Var membership, double eps, double denom_floor) {
    const std::size_t n = z.rows(), m = membership.cols();
    if (membership.rows() != n) {
        throw ShapeError("gmm_fit_taped: membership rows " + std::to_string(membership.rows()) +
                         " vs z rows " + std::to_string(n));
    }
    GmmVars g;
    Var totals = tape.col_sum(membership);  // 1 x M
    g.phi = tape.scale(totals, 1.0 / static_cast<double>(n));
    g.mu.reserve(m);
    g.sigma.reserve(m);
    g.centered.reserve(m);
    for (std::size_t k = 0; k < m; ++k) {
        Var gamma_k = tape.slice(membership, 0, n, k, k + 1);          // N x 1
        Var inv = tape.reciprocal(tape.add_const(tape.slice(totals, 0, 1, k, k + 1), denom_floor));
        Var mu_k = tape.scale_by(tape.col_sum(tape.rows_scaled(z, gamma_k)), inv);  // 1 x D
        Var centered = tape.sub_row(z, mu_k);                                       // N x D
        Var weighted = tape.rows_scaled(centered, gamma_k);
        Var raw = tape.scale_by(tape.matmul(tape.transpose(weighted), centered), inv);
        Var sym = tape.scale(tape.add(raw, tape.transpose(raw)), 0.5);
        g.mu.push_back(mu_k);
        g.centered.push_back(centered);
        g.sigma.push_back(tape.add_diag(sym, eps));
    }
    return g;
}

Var energy_taped(Tape& tape, const GmmVars& g, double jitter_eps) {
    const std::size_t m = g.sigma.size();
    if (m == 0) throw ShapeError("energy_taped: no components");
    const std::size_t d = g.centered[0].cols();
    const double norm_const = -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi);
    std::vector<Var> cols;
    cols.reserve(m);
    for (std::size_t k = 0; k < m; ++k) {
        Var q = tape.quad_form(g.centered[k], g.sigma[k], jitter_eps);  // N x 1
        Var log_phi = tape.log(tape.add_const(tape.slice(g.phi, 0, 1, k, k + 1), kPhiFloor));
        Var scalar = tape.add_const(
            tape.sub(log_phi, tape.scale(tape.logdet_spd(g.sigma[k], jitter_eps), 0.5)),
            norm_const);
        cols.push_back(tape.add_scalar(tape.scale(q, -0.5), scalar));
    }
    return tape.scale(tape.row_logsumexp(tape.hcat(cols)), -1.0);
}

Var covariance_penalty_taped(Tape& tape, const GmmVars& g) {
    Var total{};
    for (std::size_t k = 0; k < g.sigma.size(); ++k) {
        Var term = tape.sum(tape.reciprocal(tape.diag(g.sigma[k])));
        total = (k == 0) ? term : tape.add(total, term);
    }
    return total;
}

Matrix densify_attention(const Matrix& alpha, const NeighborGraph& graph) {
    if (alpha.rows() != graph.n_nodes() || alpha.cols() != graph.hood_size()) {
        throw ShapeError("densify_attention: alpha " + shape_string(alpha) + " vs graph " +
                         std::to_string(graph.n_nodes()) + " nodes, hood " +
                         std::to_string(graph.hood_size()));
    }
    Matrix dense(graph.n_nodes(), graph.n_nodes());
    for (std::size_t i = 0; i < graph.n_nodes(); ++i) {
        for (std::size_t h = 0; h < graph.hood_size(); ++h) {
            dense(i, graph.hood(i, h)) = alpha(i, h);
        }
    }
    return dense;
}

}  // namespace cadgmm
