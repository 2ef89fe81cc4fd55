#include "seq2bf/config.hpp"

#include <fstream>

#include "json.hpp"
#include "seq2bf/errors.hpp"

namespace seq2bf {

using nlohmann::json;

std::map<std::string, FieldRef> config_fields(RunConfig& c) {
    return {
        {"model.d_model", {FieldKind::Int, &c.model.d_model}},
        {"model.n_heads", {FieldKind::Int, &c.model.n_heads}},
        {"model.enc_layers", {FieldKind::Int, &c.model.n_enc_layers}},
        {"model.dec_layers", {FieldKind::Int, &c.model.n_dec_layers}},
        {"model.d_ff", {FieldKind::Int, &c.model.d_ff}},
        {"model.dropout", {FieldKind::Real, &c.model.dropout_rate}},
        {"model.max_article_len", {FieldKind::Int, &c.model.max_article_len}},
        {"model.max_side_len", {FieldKind::Int, &c.model.max_side_len}},
        {"train.mode", {FieldKind::Str, &c.mode}},
        {"train.batch_size", {FieldKind::Int, &c.train.batch_size}},
        {"train.max_epochs", {FieldKind::Int, &c.train.max_epochs}},
        {"train.patience", {FieldKind::Int, &c.train.patience}},
        {"train.lr_scale", {FieldKind::Real, &c.train.lr_scale}},
        {"train.warmup", {FieldKind::Int, &c.train.warmup_steps}},
        {"train.beta1", {FieldKind::Real, &c.train.beta1}},
        {"train.beta2", {FieldKind::Real, &c.train.beta2}},
        {"train.adam_eps", {FieldKind::Real, &c.train.adam_eps}},
        {"train.drop_prob", {FieldKind::Real, &c.train.drop_prob}},
        {"train.label_smoothing", {FieldKind::Real, &c.train.label_smoothing}},
        {"train.target_loss", {FieldKind::Real, &c.train.target_train_loss}},
        {"train.seed", {FieldKind::Seed, &c.train.seed}},
        {"bpe.merges", {FieldKind::Int, &c.bpe_merges}},
        {"bpe.max_vocab", {FieldKind::Int, &c.bpe_max_vocab}},
        {"phrase.min_tokens", {FieldKind::Int, &c.phrase_min_tokens}},
        {"phrase.max_tokens", {FieldKind::Int, &c.phrase_max_tokens}},
        {"split.train", {FieldKind::Real, &c.split_train}},
        {"split.val", {FieldKind::Real, &c.split_val}},
        {"split.test", {FieldKind::Real, &c.split_test}},
        {"decode.beam", {FieldKind::Int, &c.beam_size}},
        {"decode.alpha", {FieldKind::Real, &c.alpha}},
        {"eval.bins", {FieldKind::Int, &c.eval_bins}},
    };
}

void apply_override(RunConfig& config, const std::string& key, const std::string& value) {
    auto fields = config_fields(config);
    auto it = fields.find(key);
    if (it == fields.end()) throw ConfigError("unknown config key: " + key);
    try {
        switch (it->second.kind) {
            case FieldKind::Int:
                *static_cast<int*>(it->second.target) = std::stoi(value);
                break;
            case FieldKind::Real:
                *static_cast<double*>(it->second.target) = std::stod(value);
                break;
            case FieldKind::Str:
                *static_cast<std::string*>(it->second.target) = value;
                break;
            case FieldKind::Seed:
                *static_cast<std::uint64_t*>(it->second.target) = std::stoull(value);
                break;
        }
    } catch (const std::exception&) {
        throw ConfigError("bad value for " + key + ": " + value);
    }
}

void apply_config_file(RunConfig& config, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config file is not valid json: " + std::string(e.what()));
    }
    if (!j.is_object()) throw ConfigError("config file must hold one flat object");
    auto fields = config_fields(config);
    for (const auto& [key, value] : j.items()) {
        auto it = fields.find(key);
        if (it == fields.end()) throw ConfigError("unknown config key: " + key);
        try {
            switch (it->second.kind) {
                case FieldKind::Int:
                    *static_cast<int*>(it->second.target) = value.get<int>();
                    break;
                case FieldKind::Real:
                    *static_cast<double*>(it->second.target) = value.get<double>();
                    break;
                case FieldKind::Str:
                    *static_cast<std::string*>(it->second.target) = value.get<std::string>();
                    break;
                case FieldKind::Seed:
                    *static_cast<std::uint64_t*>(it->second.target) =
                        value.get<std::uint64_t>();
                    break;
            }
        } catch (const json::exception&) {
            throw ConfigError("bad value for config key: " + key);
        }
    }
}

std::string dump_config(RunConfig& config) {
    json j = json::object();
    for (const auto& [key, field] : config_fields(config)) {
        switch (field.kind) {
            case FieldKind::Int: j[key] = *static_cast<int*>(field.target); break;
            case FieldKind::Real: j[key] = *static_cast<double*>(field.target); break;
            case FieldKind::Str: j[key] = *static_cast<std::string*>(field.target); break;
            case FieldKind::Seed: j[key] = *static_cast<std::uint64_t*>(field.target); break;
        }
    }
    return j.dump(2) + "\n";
}

void write_config(RunConfig& config, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write config file: " + path);
    out << dump_config(config);
}

}  // namespace seq2bf
