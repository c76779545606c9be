#include "cadgmm/checkpoint.hpp"

#include "cadgmm/container.hpp"

namespace cadgmm {

namespace {

std::vector<std::uint32_t> to_u32(const std::vector<std::size_t>& v) {
    std::vector<std::uint32_t> out;
    out.reserve(v.size());
    for (std::size_t x : v) out.push_back(static_cast<std::uint32_t>(x));
    return out;
}

std::vector<std::size_t> from_u32(const std::vector<std::uint32_t>& v) {
    return std::vector<std::size_t>(v.begin(), v.end());
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& cp) {
    ContainerWriter w(path);
    w.put_string("kind", "checkpoint");
    w.put_u64("seed", cp.seed);
    w.put_u64("fingerprint", cp.dataset_fingerprint);
    w.put_u64("ablate_graph", cp.ablate_graph ? 1 : 0);
    w.put_string("config", cp.config_echo);

    w.put_u64("model.input_dim", cp.model.input_dim);
    w.put_u32_array("model.feature_layers", to_u32(cp.model.feature_layers));
    w.put_u64("model.latent_dim", cp.model.latent_dim);
    w.put_u32_array("model.decoder_layers", to_u32(cp.model.decoder_layers));
    w.put_u32_array("model.estimation_layers", to_u32(cp.model.estimation_layers));
    w.put_u64("model.mixture_count", cp.model.mixture_count);
    w.put_u64("model.knn_k", cp.model.knn_k);
    w.put_u64("model.decoder_output_tanh", cp.model.decoder_output_tanh ? 1 : 0);
    w.put_f64("model.sigma_eps", cp.model.sigma_eps);

    w.put_u64("param.count", cp.params.size());
    for (std::size_t i = 0; i < cp.params.size(); ++i) {
        const std::string key = "param." + std::to_string(i);
        w.put_string(key + ".name", cp.params.name_at(i));
        w.put_matrix(key + ".value", cp.params.value_at(i));
    }

    w.put_matrix("gmm.phi", cp.gmm.phi);
    w.put_matrix("gmm.mu", cp.gmm.mu);
    w.put_f64("gmm.eps", cp.gmm.eps);
    w.put_u8_array("gmm.degenerate", cp.gmm.degenerate);
    for (std::size_t k = 0; k < cp.gmm.sigma.size(); ++k) {
        w.put_matrix("gmm.sigma." + std::to_string(k), cp.gmm.sigma[k]);
    }

    w.put_f64_array("stats.min", cp.stats.col_min);
    w.put_f64_array("stats.max", cp.stats.col_max);
    w.put_f64_array("stats.mean", cp.stats.col_mean);
    w.finish();
}

Checkpoint load_checkpoint(const std::string& path) {
    ContainerReader r(path);
    if (r.get_string("kind") != "checkpoint") {
        throw ContainerError(path + " is not a checkpoint");
    }
    Checkpoint cp;
    cp.seed = r.get_u64("seed");
    cp.dataset_fingerprint = r.get_u64("fingerprint");
    cp.ablate_graph = r.get_u64("ablate_graph") != 0;
    cp.config_echo = r.get_string("config");

    cp.model.input_dim = r.get_u64("model.input_dim");
    cp.model.feature_layers = from_u32(r.get_u32_array("model.feature_layers"));
    cp.model.latent_dim = r.get_u64("model.latent_dim");
    cp.model.decoder_layers = from_u32(r.get_u32_array("model.decoder_layers"));
    cp.model.estimation_layers = from_u32(r.get_u32_array("model.estimation_layers"));
    cp.model.mixture_count = r.get_u64("model.mixture_count");
    cp.model.knn_k = r.get_u64("model.knn_k");
    cp.model.decoder_output_tanh = r.get_u64("model.decoder_output_tanh") != 0;
    cp.model.sigma_eps = r.get_f64("model.sigma_eps");
    cp.model.validate();

    const std::uint64_t count = r.get_u64("param.count");
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::string key = "param." + std::to_string(i);
        cp.params.add(r.get_string(key + ".name"), r.get_matrix(key + ".value"));
    }

    cp.gmm.phi = r.get_matrix("gmm.phi");
    cp.gmm.mu = r.get_matrix("gmm.mu");
    cp.gmm.eps = r.get_f64("gmm.eps");
    cp.gmm.degenerate = r.get_u8_array("gmm.degenerate");
    for (std::size_t k = 0; k < cp.gmm.mixture_count(); ++k) {
        cp.gmm.sigma.push_back(r.get_matrix("gmm.sigma." + std::to_string(k)));
    }
    cp.gmm.validate();

    cp.stats.col_min = r.get_f64_array("stats.min");
    cp.stats.col_max = r.get_f64_array("stats.max");
    cp.stats.col_mean = r.get_f64_array("stats.mean");
    if (cp.stats.dim() != cp.model.input_dim || cp.stats.col_max.size() != cp.stats.dim() ||
        cp.stats.col_mean.size() != cp.stats.dim()) {
        throw ContainerError(path + ": normalization statistics disagree with the model width");
    }
    return cp;
}

}  // namespace cadgmm
