#pragma once

// Toy-scale reimplementations of the three alignment strategies compared
// against EmbedLink training, under budget parity: identical data, seeds,
// epoch limit and optimizer; only the trainable parameter sets differ.
//   A1  frozen LM, frozen encoder, train the projector on LM cross entropy
//   A2  as A1 but the LM decoder trains too
//   A3  train only the encoder; projector and LM frozen
//   tiny_align  embedding-layer supervision, projector only

#include <algorithm>
#include <chrono>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tinyalign/embedlink.hpp"
#include "tinyalign/evalmetrics.hpp"
#include "tinyalign/toylm.hpp"

namespace tinyalign {

// ------------------------------------------------------------ toy encoder

// Frame-wise affine + GELU from raw samples to the feature space; the
// trainable stand-in for an ASR encoder.
struct ToyEncoderConfig {
    int in_dim = 16;  // raw samples per frame
    int d_a = 768;
    uint64_t seed = 0;

    void validate() const {
        if (in_dim < 1 || d_a < 1) throw ConfigError("toy encoder: dims must be >= 1");
    }
};

template <class R>
struct ToyEncoder {
    ToyEncoderConfig cfg;
    core::ParamSet<R> params;

    static ToyEncoder init(const ToyEncoderConfig& cfg) {
        cfg.validate();
        ToyEncoder e;
        e.cfg = cfg;
        SeededRng rng(cfg.seed);
        const double lim = std::sqrt(6.0 / (cfg.in_dim + cfg.d_a));
        auto w = core::Tensor<R>::zeros({cfg.in_dim, cfg.d_a});
        for (auto& v : *w.data) v = static_cast<R>(rng.uniform(-lim, lim));
        e.params.add("weight", std::move(w));
        e.params.add("bias", core::Tensor<R>::zeros({cfg.d_a}));
        return e;
    }

    // raw [1, N, in_dim] -> features [1, N, d_a]
    core::Tensor<R> forward(core::Tape<R>& tape, const core::Tensor<R>& raw) const {
        if (raw.rank() != 3 || raw.dim(0) != 1 || raw.dim(2) != cfg.in_dim)
            throw ShapeError("toy encoder: expected raw [1, N, " + std::to_string(cfg.in_dim) +
                             "], got " + core::shape_str(raw.shape));
        return core::gelu(tape, core::add_bias(tape, core::matmul(tape, raw, params.get("weight")),
                                               params.get("bias")));
    }

    uint64_t param_hash() const { return params.byte_hash(); }
};

// ----------------------------------------------------------- mlp projector

// The preliminary-study projector: two affine layers around the adaptive
// pool, no encoder stack. Selectable instead of the transformer projector.
template <class R>
struct MlpProjector {
    BridgeFormerConfig cfg;  // layers/heads ignored
    core::ParamSet<R> params;

    static MlpProjector init(const BridgeFormerConfig& cfg) {
        MlpProjector m;
        m.cfg = cfg;
        SeededRng rng(cfg.seed);
        auto weight = [&](const std::string& name, int fi, int fo) {
            const double lim = std::sqrt(6.0 / (fi + fo));
            auto t = core::Tensor<R>::zeros({fi, fo});
            for (auto& v : *t.data) v = static_cast<R>(rng.uniform(-lim, lim));
            m.params.add(name, std::move(t));
        };
        weight("l1.weight", cfg.d_a, cfg.hidden);
        m.params.add("l1.bias", core::Tensor<R>::zeros({cfg.hidden}));
        weight("l2.weight", cfg.hidden, cfg.d_l);
        m.params.add("l2.bias", core::Tensor<R>::zeros({cfg.d_l}));
        return m;
    }

    core::Tensor<R> forward(core::Tape<R>& tape, const core::Tensor<R>& features) const {
        using namespace core;
        auto h = gelu(tape, add_bias(tape, matmul(tape, features, params.get("l1.weight")),
                                     params.get("l1.bias")));
        auto pooled = pool_rows_mean(tape, h, cfg.token_cast);
        return add_bias(tape, matmul(tape, pooled, params.get("l2.weight")),
                        params.get("l2.bias"));
    }

    uint64_t param_hash() const { return params.byte_hash(); }
};

// A projector behind a uniform surface so the runners can train either
// the transformer or the MLP variant.
template <class R>
struct ProjectorHandle {
    core::ParamSet<R>* params = nullptr;
    std::function<core::Tensor<R>(core::Tape<R>&, const core::Tensor<R>&)> forward;
    std::function<uint64_t()> hash;
};

template <class R>
ProjectorHandle<R> handle_of(BridgeFormer<R>& m) {
    return {&m.params,
            [&m](core::Tape<R>& t, const core::Tensor<R>& x) { return m.forward(t, x); },
            [&m] { return m.param_hash(); }};
}

template <class R>
ProjectorHandle<R> handle_of(MlpProjector<R>& m) {
    return {&m.params,
            [&m](core::Tape<R>& t, const core::Tensor<R>& x) { return m.forward(t, x); },
            [&m] { return m.param_hash(); }};
}

// -------------------------------------------------------------- approaches

enum class Approach { a1, a2, a3, tiny_align };

inline std::string approach_name(Approach a) {
    switch (a) {
        case Approach::a1: return "A1";
        case Approach::a2: return "A2";
        case Approach::a3: return "A3";
        case Approach::tiny_align: return "tiny_align";
    }
    throw ConfigError("unknown approach");
}

inline Approach approach_from_name(const std::string& s) {
    if (s == "A1" || s == "a1") return Approach::a1;
    if (s == "A2" || s == "a2") return Approach::a2;
    if (s == "A3" || s == "a3") return Approach::a3;
    if (s == "tiny_align" || s == "tiny-align" || s == "ours") return Approach::tiny_align;
    throw ConfigError("unknown approach '" + s + "'");
}

struct BaselineEntry {
    core::Tensor<float> features;  // [1, N, d_a]
    core::Tensor<float> raw;       // [1, N, in_dim]
    std::vector<int> cast_ids;     // length T
};

struct BaselineRun {
    Approach approach = Approach::tiny_align;
    TrainReport report;
    std::vector<std::string> trainable_sets;
    double final_loss = 0.0;
    std::optional<std::pair<int, double>> time_to_target;  // (epoch, seconds)
    RougeScore rouge1_mean, rougeL_mean;  // filled by the comparison harness
    uint64_t projector_hash_before = 0, projector_hash_after = 0;
    uint64_t lm_hash_before = 0, lm_hash_after = 0;
    uint64_t encoder_hash_before = 0, encoder_hash_after = 0;
};

struct BaselineSetup {
    BridgeFormerConfig projector_cfg;
    ToyLmConfig lm_cfg;
    ToyEncoderConfig encoder_cfg;
    TrainConfig train;
    bool mlp_projector = false;
};

// The models as they stand after a run; used for post-run evaluation.
struct TrainedComponents {
    bool mlp = false;
    BridgeFormer<float> transformer;
    MlpProjector<float> mlp_projector;
    ToyLm<float> lm;
    ToyEncoder<float> encoder;
};

// Teacher-forced next-token cross entropy through the toy LM: the audio
// rows are the prefix, the cast transcript supplies inputs and targets.
template <class R>
core::Tensor<R> lm_alignment_loss(core::Tape<R>& tape, const ToyLm<R>& lm,
                                  const core::Tensor<R>& e_audio, const std::vector<int>& cast_ids,
                                  const EmbeddingTable& table) {
    const int t = static_cast<int>(cast_ids.size());
    std::vector<int> teacher_ids(cast_ids.begin(), cast_ids.end() - 1);
    auto teacher = embed_text<R>(table, teacher_ids);  // [1, T-1, D]
    auto rows = core::concat_rows(tape, e_audio, teacher);
    auto logits = lm.decode(tape, rows);
    auto predictions = core::slice_rows(tape, logits, t - 1, 2 * t - 1);
    return core::cross_entropy_mean(tape, predictions, cast_ids);
}

namespace detail {

struct EpochLoop {
    // Shared stopping logic so every approach runs under the same rules
    // as train_until_converged.
    static TrainReport run(const TrainConfig& cfg, size_t dataset_size,
                           const std::function<double(size_t)>& step_fn) {
        TrainReport report;
        std::vector<size_t> order(dataset_size);
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        const auto t0 = std::chrono::steady_clock::now();
        for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
            SeededRng shuffle_rng(mix_seed(cfg.seed, static_cast<uint64_t>(epoch)));
            shuffle_rng.shuffle(order);
            double sum = 0.0;
            for (size_t idx : order) sum += step_fn(idx);
            const double mean = sum / static_cast<double>(dataset_size);
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
                    previous +=
                        report.loss_history[static_cast<size_t>(epoch - 1 - cfg.window - i)];
                }
                if (std::abs(recent - previous) / cfg.window < cfg.epsilon) {
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
};

}  // namespace detail

// Runs one approach from fresh seeded components. Returned hashes let the
// caller verify freeze discipline.
inline BaselineRun run_approach(Approach approach, const std::vector<BaselineEntry>& dataset,
                                const EmbeddingTable& table, const BaselineSetup& setup,
                                TrainedComponents* trained_out = nullptr) {
    if (dataset.empty()) throw ValueError("baseline: empty dataset");
    setup.train.validate();

    BridgeFormer<float> transformer_proj;
    MlpProjector<float> mlp_proj;
    ProjectorHandle<float> projector;
    if (setup.mlp_projector) {
        mlp_proj = MlpProjector<float>::init(setup.projector_cfg);
        projector = handle_of(mlp_proj);
    } else {
        transformer_proj = BridgeFormer<float>::init(setup.projector_cfg);
        projector = handle_of(transformer_proj);
    }
    ToyLm<float> lm = ToyLm<float>::init(setup.lm_cfg, table);
    ToyEncoder<float> encoder = ToyEncoder<float>::init(setup.encoder_cfg);
    lm.frozen = approach != Approach::a2;

    BaselineRun run;
    run.approach = approach;
    run.projector_hash_before = projector.hash();
    run.lm_hash_before = lm.param_hash();
    run.encoder_hash_before = encoder.param_hash();

    AdamW<float> opt_proj, opt_lm, opt_enc;
    const TrainConfig& tc = setup.train;
    const int64_t total_steps =
        static_cast<int64_t>(tc.max_epochs) * static_cast<int64_t>(dataset.size());
    int64_t step = 0;

    auto step_fn = [&](size_t idx) {
        const BaselineEntry& entry = dataset[idx];
        const double lr = lr_at(step, total_steps, tc.lr0);
        ++step;
        core::Tape<float> tape;
        core::Tensor<float> loss;
        switch (approach) {
            case Approach::tiny_align: {
                auto e_audio = projector.forward(tape, entry.features);
                auto e_text = embed_text<float>(table, entry.cast_ids);
                loss = combined_loss(tape, e_audio, e_text, tc.weights);
                break;
            }
            case Approach::a1:
            case Approach::a2: {
                auto e_audio = projector.forward(tape, entry.features);
                loss = lm_alignment_loss(tape, lm, e_audio, entry.cast_ids, table);
                break;
            }
            case Approach::a3: {
                auto features = encoder.forward(tape, entry.raw);
                auto e_audio = projector.forward(tape, features);
                loss = lm_alignment_loss(tape, lm, e_audio, entry.cast_ids, table);
                break;
            }
        }
        const double value = static_cast<double>((*loss.data)[0]);
        if (!std::isfinite(value))
            throw ValueError("baseline " + approach_name(approach) + ": non-finite loss");
        auto grads = tape.backward(loss);
        switch (approach) {
            case Approach::tiny_align:
            case Approach::a1:
                opt_proj.step(*projector.params, grads, lr);
                break;
            case Approach::a2:
                opt_proj.step(*projector.params, grads, lr);
                opt_lm.step(lm.params, grads, lr);
                break;
            case Approach::a3:
                opt_enc.step(encoder.params, grads, lr);
                break;
        }
        return value;
    };

    run.report = detail::EpochLoop::run(tc, dataset.size(), step_fn);
    run.final_loss = run.report.loss_history.empty() ? 0.0 : run.report.loss_history.back();
    if (tc.target_loss) run.time_to_target = convergence_time(run.report, *tc.target_loss);

    switch (approach) {
        case Approach::tiny_align:
        case Approach::a1: run.trainable_sets = {"projector"}; break;
        case Approach::a2: run.trainable_sets = {"projector", "toylm"}; break;
        case Approach::a3: run.trainable_sets = {"encoder"}; break;
    }
    run.projector_hash_after = projector.hash();
    run.lm_hash_after = lm.param_hash();
    run.encoder_hash_after = encoder.param_hash();
    if (trained_out) {
        trained_out->mlp = setup.mlp_projector;
        trained_out->transformer = std::move(transformer_proj);
        trained_out->mlp_projector = std::move(mlp_proj);
        trained_out->lm = std::move(lm);
        trained_out->encoder = std::move(encoder);
    }
    return run;
}

// Freeze discipline: exactly the declared parameter sets changed.
inline bool freeze_discipline_ok(const BaselineRun& run) {
    auto trained = [&](const std::string& name) {
        return std::find(run.trainable_sets.begin(), run.trainable_sets.end(), name) !=
               run.trainable_sets.end();
    };
    const bool proj_changed = run.projector_hash_before != run.projector_hash_after;
    const bool lm_changed = run.lm_hash_before != run.lm_hash_after;
    const bool enc_changed = run.encoder_hash_before != run.encoder_hash_after;
    return proj_changed == trained("projector") && lm_changed == trained("toylm") &&
           enc_changed == trained("encoder");
}

// ------------------------------------------------------------- comparison

struct ComparisonRow {
    std::string approach;
    bool reached_target = false;
    int epochs_to_target = -1;
    double secs_to_target = -1.0;  // wall clock; kept out of deterministic outputs
    double total_secs = 0.0;
    int epochs_run = 0;
    double final_loss = 0.0;
    double rouge1_f1 = 0.0;
    double rougeL_f1 = 0.0;
};

// Sorted: target reachers first by epochs-to-target, then by name.
inline std::vector<ComparisonRow> compare_runs(const std::vector<BaselineRun>& runs) {
    std::vector<ComparisonRow> rows;
    for (const auto& run : runs) {
        ComparisonRow row;
        row.approach = approach_name(run.approach);
        if (run.time_to_target) {
            row.reached_target = true;
            row.epochs_to_target = run.time_to_target->first;
            row.secs_to_target = run.time_to_target->second;
        }
        row.total_secs = run.report.wall_clock_seconds;
        row.epochs_run = run.report.epochs_run;
        row.final_loss = run.final_loss;
        row.rouge1_f1 = run.rouge1_mean.f1;
        row.rougeL_f1 = run.rougeL_mean.f1;
        rows.push_back(std::move(row));
    }
    std::sort(rows.begin(), rows.end(), [](const ComparisonRow& a, const ComparisonRow& b) {
        if (a.reached_target != b.reached_target) return a.reached_target;
        if (a.reached_target && a.epochs_to_target != b.epochs_to_target)
            return a.epochs_to_target < b.epochs_to_target;
        return a.approach < b.approach;
    });
    return rows;
}

}  // namespace tinyalign
