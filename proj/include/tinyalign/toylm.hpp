#pragma once

// A small frozen decoder over the toy vocabulary: causal transformer
// blocks over D_l with the output head weight-tied to the embedding
// table. Inference utilities: instruction injection, embedding-to-token
// decoding, and seeded greedy / top-k generation.

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "tinyalign/datakit.hpp"
#include "tinyalign/embedlink.hpp"

namespace tinyalign {

struct ToyLmConfig {
    int d_l = 64;
    int heads = 4;
    int layers = 2;
    uint64_t seed = 0;

    void validate() const {
        if (d_l < 1 || heads < 1 || layers < 1) throw ConfigError("toylm: dims must be >= 1");
        if (d_l % heads != 0) throw ConfigError("toylm: d_l not divisible by heads");
    }

    int ffn_dim() const { return 4 * d_l; }
};

struct GenerationSettings {
    double temperature = 0.1;  // 0 means greedy
    int top_k = 50;
    int max_len = 16;
    uint64_t seed = 0;

    void validate() const {
        if (temperature < 0) throw ConfigError("generation: temperature must be >= 0");
        if (top_k < 1) throw ConfigError("generation: top_k must be >= 1");
        if (max_len < 0) throw ConfigError("generation: max_len must be >= 0");
    }
};

template <class R>
struct ToyLm {
    ToyLmConfig cfg;
    EmbeddingTable table;       // frozen, shared with the alignment target
    core::ParamSet<R> params;   // decoder weights only
    core::Tensor<R> tied_head;  // [d_l, V], transpose of the table; constant
    bool frozen = true;

    static ToyLm init(const ToyLmConfig& cfg, EmbeddingTable table) {
        cfg.validate();
        if (table.d_l != cfg.d_l) throw ConfigError("toylm: table dimension does not match d_l");
        ToyLm m;
        m.cfg = cfg;
        m.table = std::move(table);
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
        const int h = cfg.d_l, f = cfg.ffn_dim();
        for (int l = 0; l < cfg.layers; ++l) {
            const std::string p = "blocks." + std::to_string(l) + ".";
            for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) weight(p + w, h, h);
            for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"}) bias(p + b, h);
            norm(p + "ln1", h);
            weight(p + "ffn.w1", h, f);
            bias(p + "ffn.b1", f);
            weight(p + "ffn.w2", f, h);
            bias(p + "ffn.b2", h);
            norm(p + "ln2", h);
        }
        m.rebuild_tied_head();
        return m;
    }

    void rebuild_tied_head() {
        const int v = table.vocab_size, d = table.d_l;
        tied_head = core::Tensor<R>::zeros({d, v});
        for (int i = 0; i < v; ++i)
            for (int j = 0; j < d; ++j)
                (*tied_head.data)[static_cast<size_t>(j) * v + i] =
                    static_cast<R>(table.weights[static_cast<size_t>(i) * d + j]);
    }

    // rows [1, L, d_l] -> logits [1, L, V].
    core::Tensor<R> decode(core::Tape<R>& tape, const core::Tensor<R>& rows) const {
        using namespace core;
        if (rows.rank() != 3 || rows.dim(0) != 1 || rows.dim(2) != cfg.d_l)
            throw ShapeError("toylm: expected rows [1, L, " + std::to_string(cfg.d_l) + "], got " +
                             shape_str(rows.shape));
        if (rows.dim(1) < 1) throw ValueError("toylm: empty input sequence");

        const R eps = R(1e-5);
        const int dh = cfg.d_l / cfg.heads;
        const R inv_sqrt_dh = R(1) / static_cast<R>(std::sqrt(static_cast<double>(dh)));

        Tensor<R> x = rows;
        for (int l = 0; l < cfg.layers; ++l) {
            const std::string p = "blocks." + std::to_string(l) + ".";
            auto proj = [&](const char* w, const char* b) {
                return add_bias(tape, matmul(tape, x, params.get(p + w)), params.get(p + b));
            };
            auto q = split_heads(tape, proj("attn.wq", "attn.bq"), cfg.heads);
            auto k = split_heads(tape, proj("attn.wk", "attn.bk"), cfg.heads);
            auto v = split_heads(tape, proj("attn.wv", "attn.bv"), cfg.heads);
            auto scores =
                causal_mask(tape, scale(tape, matmul(tape, q, transpose_last2(tape, k)), inv_sqrt_dh));
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
        return matmul(tape, x, tied_head);
    }

    uint64_t param_hash() const { return params.byte_hash(); }
};

// --------------------------------------------------------- inference utils

// Instruction rows first, audio rows after; values untouched.
template <class R>
core::Tensor<R> inject_instruction(const core::Tensor<R>& e_inst, const core::Tensor<R>& e_audio) {
    core::Tape<R> tape(false);
    return core::concat_rows(tape, e_inst, e_audio);
}

// Tokenize then embed at natural length; no cast to the token size.
template <class R>
core::Tensor<R> embed_instruction(const EmbeddingTable& table, const std::string& instruction,
                                  const ToyVocab& vocab) {
    return embed_text<R>(table, tokenize(instruction, vocab));
}

// Per position, the vocab row nearest in Euclidean distance; ties break
// to the smallest id.
template <class R>
std::vector<int> nearest_token_decode(const core::Tensor<R>& e, const EmbeddingTable& table) {
    if (e.rank() != 3 || e.dim(0) != 1 || e.dim(2) != table.d_l)
        throw ShapeError("nearest_token_decode: expected [1, L, " + std::to_string(table.d_l) + "]");
    const int l = e.dim(1), d = table.d_l;
    std::vector<int> out(static_cast<size_t>(l));
    for (int t = 0; t < l; ++t) {
        const R* row = e.ptr() + static_cast<size_t>(t) * d;
        double best = std::numeric_limits<double>::infinity();
        int best_id = 0;
        for (int v = 0; v < table.vocab_size; ++v) {
            const float* w = table.weights.ptr() + static_cast<size_t>(v) * d;
            double dist = 0.0;
            for (int j = 0; j < d; ++j) {
                const double diff = static_cast<double>(row[j]) - static_cast<double>(w[j]);
                dist += diff * diff;
            }
            if (dist < best) {
                best = dist;
                best_id = v;
            }
        }
        out[static_cast<size_t>(t)] = best_id;
    }
    return out;
}

// Autoregressive decoding from an embedding prefix. temperature 0 is
// strict argmax (ties to the smallest id); otherwise top-k sampling with
// a seed-fixed stream.
template <class R>
std::vector<int> generate(const ToyLm<R>& lm, const core::Tensor<R>& prefix,
                          const GenerationSettings& settings) {
    settings.validate();
    if (settings.max_len == 0) return {};
    if (prefix.rank() != 3 || prefix.dim(0) != 1 || prefix.dim(2) != lm.cfg.d_l)
        throw ShapeError("generate: expected prefix [1, L, " + std::to_string(lm.cfg.d_l) + "]");
    if (prefix.dim(1) < 1) throw ValueError("generate: empty prefix");

    const int v = lm.table.vocab_size;
    const int k = std::min(settings.top_k, v);
    SeededRng rng(settings.seed);

    std::vector<R> rows(prefix.data->begin(), prefix.data->end());
    int len = prefix.dim(1);
    std::vector<int> out;
    out.reserve(static_cast<size_t>(settings.max_len));

    for (int step = 0; step < settings.max_len; ++step) {
        core::Tape<R> tape(false);
        auto x = core::Tensor<R>::from({1, len, lm.cfg.d_l}, rows);
        auto logits = lm.decode(tape, x);
        const R* last = logits.ptr() + static_cast<size_t>(len - 1) * v;

        int chosen;
        if (settings.temperature == 0.0) {
            chosen = 0;
            for (int i = 1; i < v; ++i)
                if (last[i] > last[chosen]) chosen = i;
        } else {
            // order by (logit desc, id asc) for a deterministic cut
            std::vector<int> idx(static_cast<size_t>(v));
            for (int i = 0; i < v; ++i) idx[static_cast<size_t>(i)] = i;
            std::sort(idx.begin(), idx.end(), [&](int a, int b) {
                if (last[a] != last[b]) return last[a] > last[b];
                return a < b;
            });
            std::vector<double> probs(static_cast<size_t>(k));
            const double inv_t = 1.0 / settings.temperature;
            double mx = static_cast<double>(last[idx[0]]) * inv_t;
            double sum = 0.0;
            for (int i = 0; i < k; ++i) {
                probs[static_cast<size_t>(i)] =
                    std::exp(static_cast<double>(last[idx[static_cast<size_t>(i)]]) * inv_t - mx);
                sum += probs[static_cast<size_t>(i)];
            }
            double r = rng.uniform01() * sum;
            double acc = 0.0;
            chosen = idx[static_cast<size_t>(k - 1)];
            for (int i = 0; i < k; ++i) {
                acc += probs[static_cast<size_t>(i)];
                if (r < acc) {
                    chosen = idx[static_cast<size_t>(i)];
                    break;
                }
            }
        }
        out.push_back(chosen);

        const float* emb = lm.table.weights.ptr() + static_cast<size_t>(chosen) * lm.cfg.d_l;
        for (int j = 0; j < lm.cfg.d_l; ++j) rows.push_back(static_cast<R>(emb[j]));
        ++len;
    }
    return out;
}

}  // namespace tinyalign
