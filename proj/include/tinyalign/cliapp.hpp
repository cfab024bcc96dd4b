#pragma once

// The command-line surface: synth, train, baseline, eval, infer, scaling,
// report. A run is reproducible from its config file and seed alone; every
// deterministic artifact a subcommand writes is listed in artifacts.json.

#include <optional>
#include <string>
#include <vector>

#include "tinyalign/datakit.hpp"
#include "tinyalign/embedlink.hpp"
#include "tinyalign/toylm.hpp"

namespace tinyalign {

struct SynthParams {
    int pairs = 100;
    int eval_pairs = 0;
    std::string regime = "feature";
    int vocab_size = 40;
    int d_l = 64;
    int lm_heads = 0;  // 0: largest of {4, 2, 1} dividing d_l
    double duration_min = 0.62;
    double duration_max = 0.9;
    int token_slots = 30;
    double fps = 50.0;
    int d_f = 768;
    int fixed_len = 1500;
    int d_t = 512;
    int d_g_min = 512;
    int d_g_max = 1024;
    int min_tokens = 12;
    int max_tokens = 24;
    double noise = 0.01;
    int raw_samples_per_frame = 16;
    int pattern_count = 30;
};

struct ModelParams {
    int hidden = 256;
    int heads = 4;
    int layers = 4;
    int token_cast = 30;
    bool mlp_projector = false;
};

struct TrainParams {
    double lr0 = 1e-3;
    int max_epochs = 400;
    double epsilon = 1e-3;
    int window = 10;
    double target_loss = 0.05;  // < 0 disables the target rule
    double alpha = 0.5;
    double beta = 0.5;
};

struct GenerationParams {
    double temperature = 0.1;
    int top_k = 50;
    int max_len = 16;
};

// Everything a run needs; serializes to canonical JSON.
struct ExperimentConfig {
    uint64_t seed = 42;
    std::string out;
    std::string data;  // dataset directory; when empty, synth params apply
    SynthParams synth;
    ModelParams model;
    TrainParams train;
    GenerationParams generation;
    std::string instruction = "transcribe the audio";

    std::string to_json() const;
    static ExperimentConfig from_json(const std::string& text);
};

// Dataset directory contents as the subcommands consume them.
struct LoadedDataset {
    std::string dir;
    DatasetManifest manifest;
    ToyVocab vocab;
    ToyLm<float> lm;  // carries the frozen embedding table
};

LoadedDataset load_dataset(const std::string& dir);

FeatureRegime regime_from_params(const SynthParams& p);
SynthOptions synth_options_from_params(const SynthParams& p);
TrainConfig train_config_from_params(const TrainParams& p, uint64_t seed);
GenerationSettings generation_settings(const GenerationParams& p, uint64_t seed);
int pick_lm_heads(int d_l, int requested);

// Builds a dataset directory (features, raw, manifest, vocab, toy LM).
void synthesize_dataset_dir(const ExperimentConfig& cfg, const std::string& dir,
                            std::vector<std::string>* artifacts = nullptr);

// Entry point used by main(); returns the process exit code
// (0 success, 1 usage error, 2 data/parse error).
int run_command(int argc, const char* const* argv);

}  // namespace tinyalign
