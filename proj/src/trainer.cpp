#include "cadgmm/trainer.hpp"

#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace cadgmm {

namespace {

bool finite(double v) { return std::isfinite(v); }

Matrix drop_top_rows(const Matrix& m, std::size_t count) {
    Matrix out(m.rows() - count, m.cols());
    for (std::size_t i = 0; i < out.rows(); ++i) {
        const double* src = m.row(i + count);
        double* dst = out.row(i);
        for (std::size_t j = 0; j < m.cols(); ++j) dst[j] = src[j];
    }
    return out;
}

}  // namespace

void LossWeights::validate() const {
    if (lambda_energy < 0.0 || lambda_cov < 0.0 || lambda_embed < 0.0) {
        throw NumericError("LossWeights: negative weight");
    }
}

void AdamOptimizer::step(ParamStore& params, const std::vector<Matrix>& grads) {
    if (grads.size() != params.size()) {
        throw ShapeError("AdamOptimizer: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
    }
    if (m_.empty()) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_.emplace_back(params.value_at(i).rows(), params.value_at(i).cols());
            v_.emplace_back(params.value_at(i).rows(), params.value_at(i).cols());
        }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix& p = params.value_at(i);
        const Matrix& g = grads[i];
        require_same_shape(p, g, "AdamOptimizer");
        double* mp = m_[i].data();
        double* vp = v_[i].data();
        double* pp = p.data();
        const double* gp = g.data();
        for (std::size_t j = 0; j < p.size(); ++j) {
            mp[j] = cfg_.beta1 * mp[j] + (1.0 - cfg_.beta1) * gp[j];
            vp[j] = cfg_.beta2 * vp[j] + (1.0 - cfg_.beta2) * gp[j] * gp[j];
            const double mhat = mp[j] / bc1;
            const double vhat = vp[j] / bc2;
            pp[j] -= cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

void TrainConfig::validate(const ModelConfig& model) const {
    model.validate();
    weights.validate();
    if (iterations == 0) throw NumericError("TrainConfig: iterations must be >= 1");
    if (batch_size <= model.knn_k) {
        throw NumericError("TrainConfig: batch_size " + std::to_string(batch_size) +
                           " must exceed K=" + std::to_string(model.knn_k));
    }
    if (adam.learning_rate < 0.0) throw NumericError("TrainConfig: negative learning rate");
}

LossTerms LossVars::values() const {
    LossTerms t;
    t.recon = recon.value()(0, 0);
    t.energy_mean = energy_mean.value()(0, 0);
    t.cov_penalty = cov_penalty.value()(0, 0);
    t.embed_penalty = embed_penalty.value()(0, 0);
    t.total = total.value()(0, 0);
    return t;
}

LossVars assemble_loss(Tape& tape, Var x, const ForwardVars& f, const GmmVars& g,
                       const LossWeights& w, double jitter_eps) {
    const double inv_n = 1.0 / static_cast<double>(x.rows());
    LossVars out;
    Var diff = tape.sub(x, f.x_hat);
    out.recon = tape.scale(tape.sum(tape.mul(diff, diff)), inv_n);
    out.energy_mean = tape.scale(tape.sum(energy_taped(tape, g, jitter_eps)), inv_n);
    out.cov_penalty = covariance_penalty_taped(tape, g);
    out.embed_penalty = tape.scale(tape.sum(tape.mul(f.z, f.z)), inv_n);
    out.total = tape.add(
        tape.add(out.recon, tape.scale(out.energy_mean, w.lambda_energy)),
        tape.add(tape.scale(out.cov_penalty, w.lambda_cov),
                 tape.scale(out.embed_penalty, w.lambda_embed)));
    return out;
}

StepResult train_step(const Matrix& batch, const ModelConfig& mcfg, const TrainConfig& tcfg,
                      ParamStore& params, AdamOptimizer& opt) {
    if (batch.rows() < mcfg.knn_k + 1) {
        throw ShapeError("train_step: batch of " + std::to_string(batch.rows()) +
                         " rows cannot host a " + std::to_string(mcfg.knn_k) + "-NN graph");
    }
    batch.require_finite("train_step: batch");
    StepResult res;
    try {
        const NeighborGraph graph = build_knn_graph(batch, mcfg.knn_k);
        Tape tape;
        Var x = tape.constant(batch);
        BoundParams bound = bind_params(tape, params, /*trainable=*/true);
        ForwardVars fwd = model_forward(tape, x, graph, bound, mcfg, tcfg.ablate_graph);
        GmmVars gmm = gmm_fit_taped(tape, fwd.z, fwd.membership, mcfg.sigma_eps);
        LossVars loss = assemble_loss(tape, x, fwd, gmm, tcfg.weights, mcfg.sigma_eps);
        res.terms = loss.values();
        if (!finite(res.terms.total)) {
            std::ostringstream why;
            why << "non-finite loss: recon=" << res.terms.recon
                << " energy=" << res.terms.energy_mean << " cov=" << res.terms.cov_penalty
                << " embed=" << res.terms.embed_penalty;
            res.skipped = true;
            res.skip_reason = why.str();
            return res;
        }
        tape.backward(loss.total);
        std::vector<Matrix> grads;
        grads.reserve(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            Matrix g = tape.grad_of(bound.items[i].second);
            if (!g.all_finite()) {
                res.skipped = true;
                res.skip_reason = "non-finite gradient for " + bound.items[i].first;
                return res;
            }
            grads.push_back(std::move(g));
        }
        opt.step(params, grads);
    } catch (const NumericError& e) {
        res.skipped = true;
        res.skip_reason = e.what();
    }
    return res;
}

GmmState freeze_gmm(const BatchSource& source, const ModelConfig& mcfg, const ParamStore& params,
                    std::size_t batch_size, bool ablate_graph) {
    GmmAccumulator acc(mcfg.mixture_count, mcfg.energy_dim());
    for_each_padded_batch(
        source, batch_size, mcfg.knn_k, [&](const Matrix& x, std::size_t context) {
            const NeighborGraph graph = build_knn_graph(x, mcfg.knn_k);
            const ForwardOutputs out = forward_outputs(x, graph, params, mcfg, ablate_graph);
            if (context == 0) {
                acc.add_batch(out.z, out.membership);
            } else {
                acc.add_batch(drop_top_rows(out.z, context),
                              drop_top_rows(out.membership, context));
            }
        });
    return acc.finalize(mcfg.sigma_eps);
}

TrainArtifacts train(const BatchSource& source, const ModelConfig& mcfg, const TrainConfig& tcfg,
                     const std::optional<ParamStore>& initial) {
    tcfg.validate(mcfg);
    const std::size_t n = source.size();
    if (n == 0) throw NumericError("train: empty training set");
    if (source.dim() != mcfg.input_dim) {
        throw ShapeError("train: source dim " + std::to_string(source.dim()) +
                         " vs config input_dim " + std::to_string(mcfg.input_dim));
    }
    if (n < mcfg.knn_k + 1) {
        throw NumericError("train: " + std::to_string(n) + " training rows cannot host a " +
                           std::to_string(mcfg.knn_k) + "-NN graph");
    }
    SeededRng root(tcfg.seed);
    TrainArtifacts art;
    if (initial.has_value()) {
        art.params = *initial;
    } else {
        SeededRng init_rng = root.substream("init");
        art.params = ParamStore::init_model(mcfg, init_rng);
    }
    AdamOptimizer opt(tcfg.adam);
    SeededRng shuffle_rng = root.substream("shuffle");

    const std::size_t b_max = std::min(tcfg.batch_size, n);
    std::vector<std::uint32_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<std::uint32_t>(i);
    std::size_t pos = n;  // forces a shuffle before the first batch

    art.log.reserve(tcfg.iterations);
    for (std::size_t it = 1; it <= tcfg.iterations; ++it) {
        if (n - pos < mcfg.knn_k + 1) {  // also drops a final too-short batch
            shuffle_rng.shuffle(order);
            pos = 0;
        }
        const std::size_t b = std::min(b_max, n - pos);
        const Matrix batch =
            source.gather(std::span<const std::uint32_t>(order.data() + pos, b));
        pos += b;
        StepResult res = train_step(batch, mcfg, tcfg, art.params, opt);
        if (res.skipped) ++art.steps_skipped;
        art.log.push_back(TrainLogRow{it, res.terms, res.skipped});
    }
    art.gmm = freeze_gmm(source, mcfg, art.params, b_max, tcfg.ablate_graph);
    return art;
}

void write_training_log_csv(const std::vector<TrainLogRow>& log, std::ostream& out) {
    out << "iteration,recon,energy,cov_penalty,embed_penalty,total\n";
    out << std::setprecision(12);
    for (const TrainLogRow& row : log) {
        out << row.iteration << ',' << row.terms.recon << ',' << row.terms.energy_mean << ','
            << row.terms.cov_penalty << ',' << row.terms.embed_penalty << ','
            << row.terms.total << '\n';
    }
}

}  // namespace cadgmm
