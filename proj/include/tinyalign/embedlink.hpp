#pragma once

// Embedding-layer supervision: a frozen vocabulary embedding table stands
// in for the LLM embedding layer, the projector output is pulled toward
// the table's rows for the cast transcript with a combined MSE + cosine
// loss, optimized by AdamW under a linear learning-rate decay.

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tinyalign/bridgeformer.hpp"
#include "tinyalign/tape.hpp"

namespace tinyalign {

// ------------------------------------------------------------- embedding

// Frozen [V, D_l] lookup. Weights never change during any training run;
// byte_hash() is the freeze check.
struct EmbeddingTable {
    int vocab_size = 0;
    int d_l = 0;
    int pad_id = 0;
    core::Tensor<float> weights;  // [V, D_l]

    static EmbeddingTable random_normalized(int vocab_size, int d_l, uint64_t seed,
                                            int pad_id = 0) {
        if (vocab_size < 1 || d_l < 1) throw ConfigError("embedding table: dims must be >= 1");
        if (pad_id < 0 || pad_id >= vocab_size)
            throw ConfigError("embedding table: pad_id out of range");
        EmbeddingTable t;
        t.vocab_size = vocab_size;
        t.d_l = d_l;
        t.pad_id = pad_id;
        t.weights = core::Tensor<float>::zeros({vocab_size, d_l});
        SeededRng rng(seed);
        for (int v = 0; v < vocab_size; ++v) {
            float* row = t.weights.ptr() + static_cast<size_t>(v) * d_l;
            double norm2 = 0.0;
            for (int i = 0; i < d_l; ++i) {
                row[i] = static_cast<float>(rng.normal());
                norm2 += static_cast<double>(row[i]) * row[i];
            }
            const float inv = static_cast<float>(1.0 / std::sqrt(norm2));
            for (int i = 0; i < d_l; ++i) row[i] *= inv;
        }
        return t;
    }

    uint64_t byte_hash() const { return weights.byte_hash(); }
};

// Truncate to the first T ids or pad the tail with pad_id.
inline std::vector<int> cast_tokens(const std::vector<int>& ids, int t, int pad_id) {
    if (t < 1) throw ConfigError("cast_tokens: T must be >= 1");
    std::vector<int> out;
    out.reserve(static_cast<size_t>(t));
    for (size_t i = 0; i < ids.size() && static_cast<int>(i) < t; ++i) out.push_back(ids[i]);
    while (static_cast<int>(out.size()) < t) out.push_back(pad_id);
    return out;
}

// Pure lookup; no gradient ever flows into the table.
template <class R>
core::Tensor<R> embed_text(const EmbeddingTable& table, const std::vector<int>& ids) {
    auto out = core::Tensor<R>::zeros({1, static_cast<int>(ids.size()), table.d_l});
    for (size_t i = 0; i < ids.size(); ++i) {
        const int id = ids[i];
        if (id < 0 || id >= table.vocab_size)
            throw ValueError("embed_text: token id " + std::to_string(id) + " out of vocab [0," +
                             std::to_string(table.vocab_size) + ")");
        const float* row = table.weights.ptr() + static_cast<size_t>(id) * table.d_l;
        R* dst = out.ptr() + i * static_cast<size_t>(table.d_l);
        for (int j = 0; j < table.d_l; ++j) dst[j] = static_cast<R>(row[j]);
    }
    return out;
}

// ----------------------------------------------------------------- loss

struct LossWeights {
    double alpha = 0.5;
    double beta = 0.5;

    void validate() const {
        if (alpha < 0 || beta < 0 || alpha + beta <= 0)
            throw ConfigError("loss weights: need alpha, beta >= 0 and alpha + beta > 0");
    }
};

// alpha * MSE(e_audio, e_text) + beta * (1 - mean per-position cosine).
template <class R>
core::Tensor<R> combined_loss(core::Tape<R>& tape, const core::Tensor<R>& e_audio,
                              const core::Tensor<R>& e_text, const LossWeights& w) {
    w.validate();
    core::detail::check_same_shape(e_audio.shape, e_text.shape, "combined_loss");
    auto mse_term = core::scale(tape, core::mse(tape, e_audio, e_text), static_cast<R>(w.alpha));
    auto cos_term = core::scale(
        tape,
        core::add_const(tape, core::scale(tape, core::row_cosine_mean(tape, e_audio, e_text), R(-1)),
                        R(1)),
        static_cast<R>(w.beta));
    return core::add(tape, mse_term, cos_term);
}

// ------------------------------------------------------------- schedule

// Linear decay from lr0 to zero over total_steps, floored at zero.
inline double lr_at(int64_t step, int64_t total_steps, double lr0) {
    if (total_steps <= 0) return 0.0;
    double f = 1.0 - static_cast<double>(step) / static_cast<double>(total_steps);
    return f > 0.0 ? lr0 * f : 0.0;
}

// --------------------------------------------------------------- adamw

template <class R>
class AdamW {
public:
    struct Hyper {
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.01;
    };

    AdamW() = default;
    explicit AdamW(Hyper h) : h_(h) {}

    // One decoupled-weight-decay update over every parameter in the set.
    void step(core::ParamSet<R>& params, const core::GradMap<R>& grads, double lr) {
        if (m_.size() != params.size()) {
            m_.assign(params.size(), {});
            v_.assign(params.size(), {});
            for (size_t i = 0; i < params.size(); ++i) {
                m_[i].assign(static_cast<size_t>(params[i].numel()), R(0));
                v_[i].assign(static_cast<size_t>(params[i].numel()), R(0));
            }
            t_ = 0;
        }
        ++t_;
        const R beta1 = static_cast<R>(h_.beta1), beta2 = static_cast<R>(h_.beta2);
        const R bc1 = R(1) - static_cast<R>(std::pow(h_.beta1, static_cast<double>(t_)));
        const R bc2 = R(1) - static_cast<R>(std::pow(h_.beta2, static_cast<double>(t_)));
        const R eps = static_cast<R>(h_.eps);
        const R lr_r = static_cast<R>(lr);
        const R decay = static_cast<R>(h_.weight_decay);
        for (size_t i = 0; i < params.size(); ++i) {
            auto& p = params[i];
            auto g = grads.of(p);
            R* m = m_[i].data();
            R* v = v_[i].data();
            R* w = p.ptr();
            const R* gp = g.ptr();
            const int64_t n = p.numel();
            for (int64_t j = 0; j < n; ++j) {
                const R gj = gp[j];
                m[j] = beta1 * m[j] + (R(1) - beta1) * gj;
                v[j] = beta2 * v[j] + (R(1) - beta2) * gj * gj;
                const R update = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps);
                w[j] = w[j] - lr_r * (update + decay * w[j]);
            }
        }
    }

    int64_t step_index() const { return t_; }

private:
    Hyper h_;
    // Moments in the parameter precision, like the parameters they track.
    std::vector<std::vector<R>> m_, v_;
    int64_t t_ = 0;
};

// ------------------------------------------------------------- training

struct TrainConfig {
    double lr0 = 1e-3;
    int max_epochs = 400;
    double epsilon = 1e-3;  // delta-loss convergence threshold
    int window = 10;        // epochs per delta-loss window
    std::optional<double> target_loss = 0.05;
    LossWeights weights;
    uint64_t seed = 0;

    void validate() const {
        if (lr0 <= 0) throw ConfigError("train: lr0 must be > 0");
        if (epsilon <= 0) throw ConfigError("train: epsilon must be > 0");
        if (window < 2) throw ConfigError("train: window must be >= 2");
        if (max_epochs < 0) throw ConfigError("train: max_epochs must be >= 0");
        weights.validate();
    }
};

struct TrainReport {
    std::vector<double> loss_history;       // per-epoch mean loss
    std::optional<int> converged_epoch;     // 1-based; set when the delta rule fired
    std::string stop_reason;                // "delta" | "target" | "budget"
    double wall_clock_seconds = 0.0;
    int epochs_run = 0;
};

template <class R>
struct TrainPair {
    core::Tensor<R> features;  // [1, N, d_a]
    std::vector<int> cast_ids; // length T
};

// One per-pair AdamW step; returns the pre-update loss. The table is
// lookup-only, so it cannot change.
template <class R>
double train_step(BridgeFormer<R>& model, const TrainPair<R>& pair, const EmbeddingTable& table,
                  const LossWeights& w, AdamW<R>& opt, double lr) {
    core::Tape<R> tape;
    auto e_audio = model.forward(tape, pair.features);
    auto e_text = embed_text<R>(table, pair.cast_ids);
    auto loss = combined_loss(tape, e_audio, e_text, w);
    const double loss_value = static_cast<double>((*loss.data)[0]);
    if (!std::isfinite(loss_value))
        throw ValueError("train_step: non-finite loss " + std::to_string(loss_value) +
                         " at optimizer step " + std::to_string(opt.step_index() + 1));
    auto grads = tape.backward(loss);
    opt.step(model.params, grads, lr);
    return loss_value;
}

// Full EmbedLink loop: epochs in a seed-fixed order until the loss
// stabilizes (|mean over last window - mean over previous window| <
// epsilon), the target loss is reached, or the epoch budget runs out.
template <class R>
TrainReport train_until_converged(BridgeFormer<R>& model, const std::vector<TrainPair<R>>& dataset,
                                  const EmbeddingTable& table, const TrainConfig& cfg) {
    cfg.validate();
    if (dataset.empty()) throw ValueError("train: empty dataset");

    TrainReport report;
    AdamW<R> opt;
    const int64_t total_steps =
        static_cast<int64_t>(cfg.max_epochs) * static_cast<int64_t>(dataset.size());

    std::vector<size_t> order(dataset.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    const auto t0 = std::chrono::steady_clock::now();
    int64_t step = 0;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        SeededRng shuffle_rng(mix_seed(cfg.seed, static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        double sum = 0.0;
        for (size_t idx : order) {
            sum += train_step(model, dataset[idx], table, cfg.weights, opt,
                              lr_at(step, total_steps, cfg.lr0));
            ++step;
        }
        const double mean = sum / static_cast<double>(dataset.size());
        report.loss_history.push_back(mean);
        report.epochs_run = epoch;

        if (cfg.target_loss && mean <= *cfg.target_loss) {
            report.stop_reason = "target";
            break;
        }
        if (epoch >= 2 * cfg.window) {
            double recent = 0.0, previous = 0.0;
            for (int i = 0; i < cfg.window; ++i) {
                recent += report.loss_history[static_cast<size_t>(epoch - 1 - i)];
                previous += report.loss_history[static_cast<size_t>(epoch - 1 - cfg.window - i)];
            }
            recent /= cfg.window;
            previous /= cfg.window;
            if (std::abs(recent - previous) < cfg.epsilon) {
                report.converged_epoch = epoch;
                report.stop_reason = "delta";
                break;
            }
        }
    }
    if (report.stop_reason.empty()) report.stop_reason = "budget";
    report.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace tinyalign
