#pragma once

// Data layer: the TAF1 feature-file format, dataset manifests, a toy
// whitespace tokenizer, and seeded synthetic generators for the three
// ASR feature regimes (proportional-length fixed-dim, fixed-length
// fixed-dim, variable-dim).

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tinyalign/embedlink.hpp"
#include "tinyalign/tensor.hpp"

namespace tinyalign {

// ---------------------------------------------------------------- regimes

enum class Regime { feature_based, transformer_based, generative };

std::string regime_name(Regime r);
Regime regime_from_name(const std::string& name);

struct FeatureRegime {
    Regime kind = Regime::feature_based;
    int d_f = 768;                    // feature-based dim
    double frames_per_second = 50.0;  // rate for length-proportional regimes
    int fixed_len = 1500;             // transformer-based L
    int d_t = 512;                    // transformer-based dim
    int d_g_min = 512;                // generative dim range
    int d_g_max = 1024;

    void validate() const {
        if (d_f < 1 || fixed_len < 1 || d_t < 1 || d_g_min < 1)
            throw ConfigError("feature regime: dims must be >= 1");
        if (d_g_min > d_g_max) throw ConfigError("feature regime: d_g range inverted");
        if (frames_per_second <= 0) throw ConfigError("feature regime: frame rate must be > 0");
    }
};

struct FeatureSequence {
    int n_frames = 0;
    int d_a = 0;
    Regime regime = Regime::feature_based;
    std::string source_id;
    core::Tensor<float> data;  // [1, n_frames, d_a]
};

// ------------------------------------------------------------ TAF1 format

// magic "TAF1", version byte, length-prefixed canonical JSON header
// (d_a, n_frames, regime, source_id), then row-major little-endian f32
// payload. Round trips bit-exactly.
std::string encode_features(const FeatureSequence& fs);
FeatureSequence decode_features(const std::string& bytes);
void write_features(const FeatureSequence& fs, const std::string& path);
FeatureSequence read_features(const std::string& path);

// ---------------------------------------------------------------- vocab

struct ToyVocab {
    static constexpr int pad_id = 0;
    static constexpr int unknown_id = 1;

    std::vector<std::string> id_to_token;
    std::map<std::string, int> token_to_id;

    int size() const { return static_cast<int>(id_to_token.size()); }
    const std::string& token(int id) const;
    int id_of(const std::string& token) const;  // unknown_id when absent

    // <pad>, <unk>, content words w00.., then the fixed instruction words.
    static ToyVocab synthetic(int vocab_size);
    static int content_words(int vocab_size);
};

// Lowercase, split on whitespace and punctuation; unseen words map to
// unknown_id; empty text gives an empty sequence.
std::vector<int> tokenize(const std::string& text, const ToyVocab& vocab);
std::string detokenize(const std::vector<int>& ids, const ToyVocab& vocab);

void save_vocab(const ToyVocab& vocab, const std::string& path);
ToyVocab load_vocab(const std::string& path);

// --------------------------------------------------------------- manifest

struct ManifestEntry {
    std::string features;  // path relative to the manifest directory
    std::string text;
    std::string split = "train";
    std::string raw;  // optional sibling raw-signal file
};

using DatasetManifest = std::vector<ManifestEntry>;

void save_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest load_manifest(const std::string& path);
// Strict check: every referenced file exists and parses.
void verify_manifest(const DatasetManifest& manifest, const std::string& base_dir);

// --------------------------------------------------------------- synthesis

// Synthetic audio is laid out on a fixed grid of token slots: each spoken
// token occupies one slot of the duration and trailing slots are silence.
// Slot patterns are drawn from a fixed family of smooth sinusoid
// signatures, which is what gives the projector a learnable
// audio-to-token correspondence. Durations must keep N >= token_slots,
// or some slots carry no frames and their tokens cannot be learned.
struct SynthOptions {
    FeatureRegime regime;
    int token_slots = 30;
    double duration_min = 0.62;
    double duration_max = 0.9;
    int min_tokens = 12;
    int max_tokens = 24;
    double noise = 0.01;
    int raw_samples_per_frame = 16;
    int pattern_count = 30;

    void validate() const;
};

// The per-seed content of one synthetic utterance.
struct SynthDraw {
    int n_tokens = 0;
    std::vector<int> patterns;  // slot -> pattern id, -1 for silence
    double duration = 0.0;
};

SynthDraw synth_draw(const SynthOptions& opt, double duration, uint64_t seed);

FeatureSequence synth_features(const FeatureRegime& regime, double duration_seconds,
                               uint64_t seed);
FeatureSequence synth_features_opt(const SynthOptions& opt, double duration, uint64_t seed,
                                   FeatureSequence* raw_out = nullptr);

// ----------------------------------------------------------- dataset build

struct DatasetBuildOptions {
    SynthOptions synth;
    int d_l = 64;        // embedding dimension of the frozen table
    int eval_pairs = 0;  // extra entries appended with split "eval"
};

struct SyntheticDataset {
    DatasetManifest manifest;
    ToyVocab vocab;
    EmbeddingTable table;
};

// Writes features/, raw/, manifest.jsonl and vocab.json under out_dir.
// Transcript tokens are derived from the same per-entry seed that drives
// the feature generator, so the audio-to-text mapping is exact.
SyntheticDataset build_synthetic_dataset(int n_pairs, const FeatureRegime& regime, int vocab_size,
                                         uint64_t seed, const std::string& out_dir,
                                         const DatasetBuildOptions& opt = {});

// Loads the features referenced by a manifest into training pairs,
// casting each transcript to token_cast ids.
std::vector<TrainPair<float>> load_train_pairs(const DatasetManifest& manifest,
                                               const std::string& base_dir, const ToyVocab& vocab,
                                               const EmbeddingTable& table, int token_cast,
                                               const std::string& split_filter = "");

}  // namespace tinyalign
