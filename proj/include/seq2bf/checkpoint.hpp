#pragma once

#include <cstdint>
#include <string>

#include "seq2bf/model.hpp"
#include "seq2bf/training.hpp"

namespace seq2bf {

// One JSON header line (version, model config, training mode, vocab hash and
// the tensor manifest), then raw float32 tensor data, row major, in manifest
// order.
struct CheckpointMeta {
    int format_version = 1;
    ModelConfig config;
    TrainingMode mode = TrainingMode::SeqB;
    std::uint64_t vocab_hash = 0;
};

struct LoadedCheckpoint {
    ModelParams<float> params;
    CheckpointMeta meta;
};

void save_checkpoint(const std::string& path, const ModelParams<float>& params,
                     TrainingMode mode, std::uint64_t vocab_hash);
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace seq2bf
