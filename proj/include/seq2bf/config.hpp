#pragma once

#include <map>
#include <string>

#include "seq2bf/model.hpp"
#include "seq2bf/synth.hpp"
#include "seq2bf/training.hpp"

namespace seq2bf {

// Every tunable in one place, addressed by flat dotted keys. Precedence is
// defaults < config file < command-line overrides.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    std::string mode = "seq-b";

    int bpe_merges = 300;
    int bpe_max_vocab = 0;  // 0: no cap

    int phrase_min_tokens = 1;  // sampling range when the corpus gives no phrase
    int phrase_max_tokens = 4;
    double split_train = 0.98;
    double split_val = 0.01;
    double split_test = 0.01;

    int beam_size = 3;
    double alpha = 0.0;
    int eval_bins = 10;
};

enum class FieldKind { Int, Real, Str, Seed };

struct FieldRef {
    FieldKind kind;
    void* target;
};

// Key -> storage for one RunConfig instance; iteration order is the
// serialization order.
std::map<std::string, FieldRef> config_fields(RunConfig& config);

// Set one field from its text form (flag values, "key=value" pairs).
void apply_override(RunConfig& config, const std::string& key, const std::string& value);

// Merge a flat json object file; unknown keys are errors.
void apply_config_file(RunConfig& config, const std::string& path);

std::string dump_config(RunConfig& config);  // flat json, one key per field
void write_config(RunConfig& config, const std::string& path);

}  // namespace seq2bf
