#pragma once

#include <map>
#include <string>

#include "fairvit/model.hpp"

namespace fairvit {

// Binary checkpoint: magic "FVGAN", u16 format version, canonical key-sorted
// config text block, then one record per tensor (u64 name length, name bytes,
// u64 rank, u64 dims, raw little-endian f64 data). Round-trips bit-exactly.
// Trainer state rides along as extra tensors under reserved "opt."/"train."
// name prefixes.
struct Checkpoint {
    ModelConfig config;
    ParameterSet params;
    std::map<std::string, Tensor> extras;  // optimizer moments, epoch counter, ...
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

std::string model_config_text(const ModelConfig& cfg);                 // canonical key=value block
ModelConfig model_config_from_text(const std::string& text);

}  // namespace fairvit
