#pragma once

// The projector: input MLP -> positional-encoding-free transformer encoder
// -> adaptive mean pooling to the casted token size -> affine output MLP.
// The parameter set is flat and ordered; there is deliberately no
// position-indexed parameter or buffer anywhere in the model.

#include <cmath>
#include <cstdint>
#include <string>

#include "tinyalign/tape.hpp"

namespace tinyalign {

struct BridgeFormerConfig {
    int d_a = 768;       // ASR feature dimension
    int hidden = 256;    // H
    int heads = 4;       // M
    int layers = 4;      // E
    int token_cast = 30; // T
    int d_l = 2048;      // LLM embedding dimension
    uint64_t seed = 0;

    void validate() const {
        if (d_a < 1 || hidden < 1 || heads < 1 || layers < 1 || token_cast < 1 || d_l < 1)
            throw ConfigError("bridgeformer: all dimensions must be >= 1");
        if (hidden % heads != 0)
            throw ConfigError("bridgeformer: hidden " + std::to_string(hidden) +
                              " not divisible by heads " + std::to_string(heads));
    }

    int ffn_dim() const { return 4 * hidden; }

    bool operator==(const BridgeFormerConfig&) const = default;
};

// Closed-form trainable parameter total; cross-checked against the
// enumerated tensors in the tests.
inline int64_t bridgeformer_param_count(const BridgeFormerConfig& cfg) {
    const int64_t h = cfg.hidden;
    const int64_t per_layer = 12 * h * h + 13 * h;
    return (cfg.d_a * h + h) + cfg.layers * per_layer + (h * cfg.d_l + cfg.d_l);
}

template <class R>
struct ActivationTrace {
    core::Tensor<R> e_in;     // [1, N, H]
    core::Tensor<R> e_trans;  // [1, N, H]
    core::Tensor<R> e_pool;   // [1, T, H]
    core::Tensor<R> e_out;    // [1, T, D_l]
};

template <class R>
struct BridgeFormer {
    BridgeFormerConfig cfg;
    core::ParamSet<R> params;

    static BridgeFormer init(const BridgeFormerConfig& cfg) {
        cfg.validate();
        BridgeFormer m;
        m.cfg = cfg;
        SeededRng rng(cfg.seed);
        auto weight = [&](const std::string& name, int fan_in, int fan_out) {
            const double lim = std::sqrt(6.0 / (fan_in + fan_out));
            auto t = core::Tensor<R>::zeros({fan_in, fan_out});
            for (auto& v : *t.data) v = static_cast<R>(rng.uniform(-lim, lim));
            m.params.add(name, std::move(t));
        };
        auto bias = [&](const std::string& name, int d) {
            m.params.add(name, core::Tensor<R>::zeros({d}));
        };
        auto norm = [&](const std::string& name, int d) {
            m.params.add(name + ".gain", core::Tensor<R>::full({d}, R(1)));
            m.params.add(name + ".bias", core::Tensor<R>::zeros({d}));
        };

        const int h = cfg.hidden, f = cfg.ffn_dim();
        weight("input.weight", cfg.d_a, h);
        bias("input.bias", h);
        for (int l = 0; l < cfg.layers; ++l) {
            const std::string p = "layers." + std::to_string(l) + ".";
            for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
                weight(p + w, h, h);
            for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"}) bias(p + b, h);
            norm(p + "ln1", h);
            weight(p + "ffn.w1", h, f);
            bias(p + "ffn.b1", f);
            weight(p + "ffn.w2", f, h);
            bias(p + "ffn.b2", h);
            norm(p + "ln2", h);
        }
        weight("output.weight", h, cfg.d_l);
        bias("output.bias", cfg.d_l);
        return m;
    }

    // features [1, N, d_a] -> [1, T, d_l] for any N >= 1.
    core::Tensor<R> forward(core::Tape<R>& tape, const core::Tensor<R>& features,
                            ActivationTrace<R>* trace = nullptr) const {
        using namespace core;
        if (features.rank() != 3 || features.dim(0) != 1)
            throw ShapeError("bridgeformer: expected features [1, N, d_a], got " +
                             shape_str(features.shape));
        if (features.dim(2) != cfg.d_a)
            throw ShapeError("bridgeformer: feature dim " + std::to_string(features.dim(2)) +
                             " does not match configured d_a " + std::to_string(cfg.d_a));
        if (features.dim(1) < 1) throw ValueError("bridgeformer: empty feature sequence (N = 0)");

        const R eps = R(1e-5);
        const int dh = cfg.hidden / cfg.heads;
        const R inv_sqrt_dh = R(1) / static_cast<R>(std::sqrt(static_cast<double>(dh)));

        auto affine = [&](const Tensor<R>& x, const std::string& name) {
            return add_bias(tape, matmul(tape, x, params.get(name + ".weight")),
                            params.get(name + ".bias"));
        };

        Tensor<R> x = gelu(tape, affine(features, "input"));
        if (trace) trace->e_in = x;

        for (int l = 0; l < cfg.layers; ++l) {
            const std::string p = "layers." + std::to_string(l) + ".";
            auto proj = [&](const char* w, const char* b) {
                return add_bias(tape, matmul(tape, x, params.get(p + w)), params.get(p + b));
            };
            auto q = split_heads(tape, proj("attn.wq", "attn.bq"), cfg.heads);
            auto k = split_heads(tape, proj("attn.wk", "attn.bk"), cfg.heads);
            auto v = split_heads(tape, proj("attn.wv", "attn.bv"), cfg.heads);
            auto scores = scale(tape, matmul(tape, q, transpose_last2(tape, k)), inv_sqrt_dh);
            auto ctx = merge_heads(tape, matmul(tape, softmax_lastdim(tape, scores), v));
            auto attn = add_bias(tape, matmul(tape, ctx, params.get(p + "attn.wo")),
                                 params.get(p + "attn.bo"));
            x = layer_norm(tape, add(tape, x, attn), params.get(p + "ln1.gain"),
                           params.get(p + "ln1.bias"), eps);

            auto ff = add_bias(
                tape,
                matmul(tape, gelu(tape, add_bias(tape, matmul(tape, x, params.get(p + "ffn.w1")),
                                                 params.get(p + "ffn.b1"))),
                       params.get(p + "ffn.w2")),
                params.get(p + "ffn.b2"));
            x = layer_norm(tape, add(tape, x, ff), params.get(p + "ln2.gain"),
                           params.get(p + "ln2.bias"), eps);
        }
        if (trace) trace->e_trans = x;

        Tensor<R> pooled = pool_rows_mean(tape, x, cfg.token_cast);
        if (trace) trace->e_pool = pooled;

        Tensor<R> out = affine(pooled, "output");
        if (trace) trace->e_out = out;
        return out;
    }

    int64_t param_count() const { return params.total_count(); }
    uint64_t param_hash() const { return params.byte_hash(); }
};

// The spec-facing pooling entry point; forward uses the same tape op.
template <class R>
core::Tensor<R> adaptive_pool(const core::Tensor<R>& seq, int target) {
    core::Tape<R> tape(false);
    return core::pool_rows_mean(tape, seq, target);
}

}  // namespace tinyalign
