#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cadgmm/batch_source.hpp"
#include "cadgmm/gmm.hpp"
#include "cadgmm/model.hpp"

namespace cadgmm {

/// Weights of the three regularizers next to the reconstruction term.
struct LossWeights {
    double lambda_energy = 0.1;    // mean sample energy
    double lambda_cov = 0.005;     // sum of inverse covariance diagonals
    double lambda_embed = 10.0;    // mean squared norm of the full embedding

    void validate() const;
};

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second-moment optimizer with bias correction. Moment buffers are
/// keyed by parameter position, so the same ParamStore layout must be used
/// for every step.
class AdamOptimizer {
public:
    explicit AdamOptimizer(AdamConfig cfg) : cfg_(cfg) {}

    /// One update; `grads` aligned with the store's parameter order.
    void step(ParamStore& params, const std::vector<Matrix>& grads);

    std::size_t steps_taken() const noexcept { return t_; }
    const AdamConfig& config() const noexcept { return cfg_; }

private:
    AdamConfig cfg_;
    std::size_t t_ = 0;
    std::vector<Matrix> m_;
    std::vector<Matrix> v_;
};

struct TrainConfig {
    std::size_t iterations = 1;
    std::size_t batch_size = 0;
    AdamConfig adam;
    LossWeights weights;
    std::uint64_t seed = 1;
    bool ablate_graph = false;

    void validate(const ModelConfig& model) const;  // batch_size > K, iterations >= 1
};

/// The four loss terms plus their weighted total, as plain numbers.
struct LossTerms {
    double recon = 0.0;
    double energy_mean = 0.0;
    double cov_penalty = 0.0;
    double embed_penalty = 0.0;
    double total = 0.0;
};

/// Same terms as live tape nodes, for callers that need gradients.
struct LossVars {
    Var recon, energy_mean, cov_penalty, embed_penalty, total;
    LossTerms values() const;
};

/// L = recon/N + l1 * mean(E) + l2 * sum_m sum_d 1/sigma_dd + l3 * |Z|^2/N,
/// assembled on the tape from a forward pass and taped mixture statistics.
LossVars assemble_loss(Tape& tape, Var x, const ForwardVars& f, const GmmVars& g,
                       const LossWeights& w, double jitter_eps);

struct StepResult {
    LossTerms terms;
    bool skipped = false;       // non-finite loss or gradients; no update applied
    std::string skip_reason;
};

/// One optimization step on a materialized batch: k-NN graph, forward, loss,
/// backward, optimizer update. Batches smaller than K+1 rows are rejected.
StepResult train_step(const Matrix& batch, const ModelConfig& mcfg, const TrainConfig& tcfg,
                      ParamStore& params, AdamOptimizer& opt);

struct TrainLogRow {
    std::size_t iteration = 0;  // 1-based
    LossTerms terms;
    bool skipped = false;
};

struct TrainArtifacts {
    ParamStore params;
    GmmState gmm;
    std::vector<TrainLogRow> log;  // one row per iteration
    std::size_t steps_skipped = 0;
};

/// Full run: seeded init (unless `initial` is given), `iterations` steps over
/// per-epoch reshuffled sequential batches (final batch dropped when shorter
/// than K+1 rows), then the frozen GmmState streamed over the whole source.
TrainArtifacts train(const BatchSource& source, const ModelConfig& mcfg,
                     const TrainConfig& tcfg,
                     const std::optional<ParamStore>& initial = std::nullopt);

/// Streams `source` through a frozen model in batches and aggregates mixture
/// statistics. Short final batches borrow leading context rows from the
/// previous batch for the graph; context rows are not accumulated.
GmmState freeze_gmm(const BatchSource& source, const ModelConfig& mcfg, const ParamStore& params,
                    std::size_t batch_size, bool ablate_graph);

void write_training_log_csv(const std::vector<TrainLogRow>& log, std::ostream& out);

}  // namespace cadgmm
