#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cadgmm/gmm.hpp"
#include "cadgmm/graph.hpp"
#include "cadgmm/matrix.hpp"
#include "cadgmm/rng.hpp"
#include "cadgmm/tape.hpp"

namespace cadgmm {

/// Layer widths and structural constants for one dataset configuration.
/// The graph encoder projects input_dim -> embed dim, which must equal the
/// feature encoder's final width so the two embeddings can be summed.
struct ModelConfig {
    std::size_t input_dim = 0;                   // F
    std::vector<std::size_t> feature_layers;     // widths of the feature MLP; last is the embed dim d
    std::size_t latent_dim = 0;                  // D, output of the fusion layer
    std::vector<std::size_t> decoder_layers;     // hidden widths; the final F layer is implicit
    std::vector<std::size_t> estimation_layers;  // hidden widths; the final M layer is implicit
    std::size_t mixture_count = 0;               // M
    std::size_t knn_k = 0;                       // K
    bool decoder_output_tanh = true;
    double sigma_eps = 1e-6;  // diagonal regularizer on fitted covariances

    std::size_t embed_dim() const { return feature_layers.back(); }
    std::size_t energy_dim() const { return latent_dim + 2; }

    void validate() const;

    static ModelConfig kdd99();
    static ModelConfig arrhythmia();
    static ModelConfig satellite();
};

/// Named parameter matrices in a fixed creation order. The order defines
/// both the initialization draw order and the optimizer update order, so a
/// (seed, config) pair determines every parameter bit-for-bit.
class ParamStore {
public:
    Matrix& add(const std::string& name, Matrix value);
    bool contains(const std::string& name) const;
    Matrix& get(const std::string& name);
    const Matrix& get(const std::string& name) const;

    std::size_t size() const noexcept { return entries_.size(); }
    const std::string& name_at(std::size_t i) const { return entries_[i].first; }
    const Matrix& value_at(std::size_t i) const { return entries_[i].second; }
    Matrix& value_at(std::size_t i) { return entries_[i].second; }
    std::size_t total_scalars() const;

    /// Weights drawn uniform in +-sqrt(6/(fan_in+fan_out)), biases zero.
    static ParamStore init_model(const ModelConfig& cfg, SeededRng& rng);

private:
    std::vector<std::pair<std::string, Matrix>> entries_;
    std::size_t find(const std::string& name) const;  // size() if absent
};

/// Parameters bound onto a tape, as leaves (trainable) or constants.
struct BoundParams {
    std::vector<std::pair<std::string, Var>> items;
    Var at(const std::string& name) const;
};

BoundParams bind_params(Tape& tape, const ParamStore& params, bool trainable);

/// Feature-branch MLP: tanh(x W + b) per layer.
Var feature_encode(Tape& tape, Var x, const BoundParams& p, const ModelConfig& cfg);

/// Input rows projected by the graph encoder's shared weight: x W^c.
Var project_graph_features(Tape& tape, Var x, const BoundParams& p);

/// Attention over each node's neighborhood (k neighbors + self):
/// scores tanh(a^T [proj_i || proj_j]), normalized row-wise by softmax.
/// Returned as N x hood_size aligned with graph.hood() slots.
Var attention_coefficients(Tape& tape, Var proj, const NeighborGraph& graph,
                           const BoundParams& p);

/// Full graph branch: project, attend, aggregate projected neighbors, tanh.
Var graph_encode(Tape& tape, Var x, const NeighborGraph& graph, const BoundParams& p);

/// Fusion: elementwise sum of the two embeddings, then a linear layer.
Var fuse(Tape& tape, Var z_feat, Var z_graph, const BoundParams& p);

/// Decoder MLP back to input width; final tanh controlled by the config.
Var decode(Tape& tape, Var z_latent, const BoundParams& p, const ModelConfig& cfg);

/// Estimation MLP with tanh hidden layers and a final row-softmax.
Var estimate_membership(Tape& tape, Var z, const BoundParams& p, const ModelConfig& cfg);

struct ForwardVars {
    Var z_feat;      // N x d
    Var z_graph;     // N x d (zero constant when the graph branch is ablated)
    Var z_latent;    // N x D
    Var x_hat;       // N x F
    Var z_recon;     // N x 2
    Var z;           // N x (D+2)
    Var membership;  // N x M
};

/// Composes the whole network on the tape. `ablate_graph` forces the graph
/// embedding to zero, leaving only the feature branch through the fusion.
ForwardVars model_forward(Tape& tape, Var x, const NeighborGraph& graph, const BoundParams& p,
                          const ModelConfig& cfg, bool ablate_graph = false);

/// Plain-matrix snapshot of one forward pass (no gradients retained).
struct ForwardOutputs {
    Matrix z_feat, z_graph, z_latent, x_hat, z_recon, z, membership;
};

ForwardOutputs forward_outputs(const Matrix& x, const NeighborGraph& graph,
                               const ParamStore& params, const ModelConfig& cfg,
                               bool ablate_graph = false);

/// Mixture statistics built on the tape from embeddings and memberships so
/// gradients flow from the energy back into the network. Denominators carry
/// a small additive floor instead of the frozen path's hard degeneracy rule,
/// keeping every branch differentiable.
struct GmmVars {
    Var phi;                    // 1 x M
    std::vector<Var> mu;        // 1 x D per component
    std::vector<Var> sigma;     // D x D per component, symmetrized + eps diag
    std::vector<Var> centered;  // N x D per component
};

GmmVars gmm_fit_taped(Tape& tape, Var z, Var membership, double eps,
                      double denom_floor = 1e-12);

/// Per-sample energies (N x 1) from taped mixture statistics.
Var energy_taped(Tape& tape, const GmmVars& g, double jitter_eps);

/// sum_m sum_d 1/(sigma_m)_dd as a 1x1 tape node.
Var covariance_penalty_taped(Tape& tape, const GmmVars& g);

/// Expands hood-aligned attention rows into a dense N x N matrix (zeros off
/// the neighborhoods). Test and debugging aid.
Matrix densify_attention(const Matrix& alpha, const NeighborGraph& graph);

}  // namespace cadgmm
