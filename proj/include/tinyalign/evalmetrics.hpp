#pragma once

// ROUGE-1 / ROUGE-L scoring and the dual-path evaluation protocol:
// generation from projector embeddings is scored against generation from
// ground-truth-text embeddings through the same frozen toy LM.

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tinyalign/datakit.hpp"
#include "tinyalign/toylm.hpp"

namespace tinyalign {

struct RougeScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Clipped unigram counts; empty-side convention: both empty scores 1,
// one empty scores 0.
RougeScore rouge1(const std::vector<int>& reference, const std::vector<int>& hypothesis);

// Longest-common-subsequence F1 with the same empty-side convention.
RougeScore rougeL(const std::vector<int>& reference, const std::vector<int>& hypothesis);

// Building blocks, exposed for the oracle-equivalence tests.
int clipped_unigram_overlap(const std::vector<int>& reference,
                            const std::vector<int>& hypothesis);
int lcs_length(const std::vector<int>& a, const std::vector<int>& b);

// ---------------------------------------------------------- dual-path eval

// One manifest entry as seen by a projector under evaluation.
struct EvalItem {
    const ManifestEntry* entry = nullptr;
    std::string base_dir;
    FeatureSequence features;
    core::Tensor<float> e_text;  // embed_text of the cast transcript
};

// Maps an item to audio embeddings [1, T, D_l].
using ProjectorFn = std::function<core::Tensor<float>(const EvalItem&)>;

ProjectorFn projector_fn(const BridgeFormer<float>& model);
// Emits embed_text exactly; the fixed point of the protocol.
ProjectorFn oracle_projector();

struct DualPathEntry {
    int index = 0;
    RougeScore r1, rl;
    int ref_len = 0;
    int hyp_len = 0;
    bool skipped = false;
};

struct DualPathResult {
    std::vector<DualPathEntry> entries;
    RougeScore rouge1_mean, rougeL_mean;  // arithmetic means over scored entries
    int n_entries = 0;
    int n_skipped = 0;
};

DualPathResult dual_path_eval(const ProjectorFn& projector, const ToyLm<float>& lm,
                              const EmbeddingTable& table, const DatasetManifest& manifest,
                              const std::string& base_dir, const ToyVocab& vocab,
                              const std::string& instruction, const GenerationSettings& settings,
                              int token_cast, const std::string& split_filter = "");

// First epoch whose loss reached the target, with wall clock interpolated
// from the report's total; absent when never reached.
std::optional<std::pair<int, double>> convergence_time(const TrainReport& report,
                                                       double target_loss);

}  // namespace tinyalign
