#include "tinyalign/evalmetrics.hpp"

#include <filesystem>
#include <iostream>
#include <unordered_map>

namespace fs = std::filesystem;

namespace tinyalign {

namespace {

RougeScore from_counts(int matched, int ref_len, int hyp_len) {
    RougeScore s;
    if (ref_len == 0 && hyp_len == 0) {
        s.precision = s.recall = s.f1 = 1.0;
        return s;
    }
    if (ref_len == 0 || hyp_len == 0) return s;
    s.precision = static_cast<double>(matched) / hyp_len;
    s.recall = static_cast<double>(matched) / ref_len;
    if (s.precision + s.recall > 0)
        s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
    return s;
}

}  // namespace

int clipped_unigram_overlap(const std::vector<int>& reference,
                            const std::vector<int>& hypothesis) {
    std::unordered_map<int, int> ref_counts;
    for (int tok : reference) ++ref_counts[tok];
    int overlap = 0;
    for (int tok : hypothesis) {
        auto it = ref_counts.find(tok);
        if (it != ref_counts.end() && it->second > 0) {
            ++overlap;
            --it->second;
        }
    }
    return overlap;
}

int lcs_length(const std::vector<int>& a, const std::vector<int>& b) {
    if (a.empty() || b.empty()) return 0;
    // Two-row DP over the shorter side.
    const std::vector<int>& cols = b.size() <= a.size() ? b : a;
    const std::vector<int>& rows = b.size() <= a.size() ? a : b;
    std::vector<int> prev(cols.size() + 1, 0), curr(cols.size() + 1, 0);
    for (size_t i = 1; i <= rows.size(); ++i) {
        for (size_t j = 1; j <= cols.size(); ++j) {
            if (rows[i - 1] == cols[j - 1])
                curr[j] = prev[j - 1] + 1;
            else
                curr[j] = std::max(prev[j], curr[j - 1]);
        }
        std::swap(prev, curr);
    }
    return prev[cols.size()];
}

RougeScore rouge1(const std::vector<int>& reference, const std::vector<int>& hypothesis) {
    return from_counts(clipped_unigram_overlap(reference, hypothesis),
                       static_cast<int>(reference.size()), static_cast<int>(hypothesis.size()));
}

RougeScore rougeL(const std::vector<int>& reference, const std::vector<int>& hypothesis) {
    return from_counts(lcs_length(reference, hypothesis), static_cast<int>(reference.size()),
                       static_cast<int>(hypothesis.size()));
}

// ---------------------------------------------------------- dual-path eval

ProjectorFn projector_fn(const BridgeFormer<float>& model) {
    return [&model](const EvalItem& item) {
        core::Tape<float> tape(false);
        return model.forward(tape, item.features.data);
    };
}

ProjectorFn oracle_projector() {
    return [](const EvalItem& item) { return item.e_text; };
}

DualPathResult dual_path_eval(const ProjectorFn& projector, const ToyLm<float>& lm,
                              const EmbeddingTable& table, const DatasetManifest& manifest,
                              const std::string& base_dir, const ToyVocab& vocab,
                              const std::string& instruction, const GenerationSettings& settings,
                              int token_cast, const std::string& split_filter) {
    if (!lm.frozen) throw ContractError("dual_path_eval: toy LM must be frozen");
    DualPathResult result;
    const auto e_inst = embed_instruction<float>(table, instruction, vocab);

    double p1 = 0, r1 = 0, f1 = 0, pl = 0, rl = 0, fl = 0;
    int scored = 0;
    for (size_t i = 0; i < manifest.size(); ++i) {
        const auto& entry = manifest[i];
        if (!split_filter.empty() && entry.split != split_filter) continue;

        DualPathEntry de;
        de.index = static_cast<int>(i);
        EvalItem item;
        item.entry = &entry;
        item.base_dir = base_dir;
        try {
            item.features = read_features((fs::path(base_dir) / entry.features).string());
        } catch (const ParseError& e) {
            std::cerr << "dual_path_eval: skipping entry " << i << ": " << e.what() << "\n";
            de.skipped = true;
            result.entries.push_back(de);
            ++result.n_skipped;
            continue;
        }
        const auto cast = cast_tokens(tokenize(entry.text, vocab), token_cast, table.pad_id);
        item.e_text = embed_text<float>(table, cast);

        const auto e_audio = projector(item);
        const auto path_a = generate(lm, inject_instruction(e_inst, e_audio), settings);
        const auto path_l = generate(lm, inject_instruction(e_inst, item.e_text), settings);

        de.r1 = rouge1(path_l, path_a);
        de.rl = rougeL(path_l, path_a);
        de.ref_len = static_cast<int>(path_l.size());
        de.hyp_len = static_cast<int>(path_a.size());
        result.entries.push_back(de);

        p1 += de.r1.precision;
        r1 += de.r1.recall;
        f1 += de.r1.f1;
        pl += de.rl.precision;
        rl += de.rl.recall;
        fl += de.rl.f1;
        ++scored;
    }
    result.n_entries = scored;
    if (scored > 0) {
        result.rouge1_mean = {p1 / scored, r1 / scored, f1 / scored};
        result.rougeL_mean = {pl / scored, rl / scored, fl / scored};
    }
    return result;
}

std::optional<std::pair<int, double>> convergence_time(const TrainReport& report,
                                                       double target_loss) {
    for (size_t i = 0; i < report.loss_history.size(); ++i) {
        if (report.loss_history[i] <= target_loss) {
            const int epoch = static_cast<int>(i) + 1;
            const double secs = report.epochs_run > 0
                                    ? report.wall_clock_seconds * epoch / report.epochs_run
                                    : 0.0;
            return std::make_pair(epoch, secs);
        }
    }
    return std::nullopt;
}

}  // namespace tinyalign
