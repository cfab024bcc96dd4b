#pragma once

// TABF checkpoint container: magic "TABF", version byte, length-prefixed
// canonical JSON config (carrying a model-kind field), then each named
// parameter as a length-prefixed name, shape, and row-major little-endian
// f32 payload. Byte-stable: write -> read -> write reproduces the file.

#include <string>

#include "tinyalign/bridgeformer.hpp"
#include "tinyalign/tensor.hpp"
#include "tinyalign/toylm.hpp"

namespace tinyalign {

std::string tabf_encode(const std::string& config_json, const core::ParamSet<float>& params);

struct TabfFile {
    std::string config_json;
    core::ParamSet<float> params;
};

TabfFile tabf_decode(const std::string& bytes);

void tabf_save(const std::string& path, const std::string& config_json,
               const core::ParamSet<float>& params);
TabfFile tabf_load(const std::string& path);

// BridgeFormer checkpoints (kind "bridgeformer").
void save_bridgeformer(const std::string& path, const BridgeFormer<float>& model);
BridgeFormer<float> load_bridgeformer(const std::string& path);

// ToyLm checkpoints (kind "toylm"); the embedding table travels inside.
void save_toylm(const std::string& path, const ToyLm<float>& lm);
ToyLm<float> load_toylm(const std::string& path);

}  // namespace tinyalign
