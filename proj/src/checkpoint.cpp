#include "seq2bf/checkpoint.hpp"

#include <fstream>

#include "json.hpp"
#include "seq2bf/errors.hpp"

namespace seq2bf {

using nlohmann::json;

namespace {

json config_to_json(const ModelConfig& c) {
    return json{{"d_model", c.d_model},
                {"n_heads", c.n_heads},
                {"n_enc_layers", c.n_enc_layers},
                {"n_dec_layers", c.n_dec_layers},
                {"d_ff", c.d_ff},
                {"vocab_size", c.vocab_size},
                {"dropout_rate", c.dropout_rate},
                {"max_article_len", c.max_article_len},
                {"max_side_len", c.max_side_len}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.d_model = j.at("d_model").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.n_enc_layers = j.at("n_enc_layers").get<int>();
    c.n_dec_layers = j.at("n_dec_layers").get<int>();
    c.d_ff = j.at("d_ff").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.dropout_rate = j.at("dropout_rate").get<double>();
    c.max_article_len = j.at("max_article_len").get<int>();
    c.max_side_len = j.at("max_side_len").get<int>();
    return c;
}

char hex_digit(std::uint64_t v) { return "0123456789abcdef"[v & 0xF]; }

std::string hash_to_hex(std::uint64_t h) {
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, h >>= 4) s[i] = hex_digit(h);
    return s;
}

std::uint64_t hash_from_hex(const std::string& s) {
    std::uint64_t h = 0;
    for (char c : s) {
        h <<= 4;
        if (c >= '0' && c <= '9') h |= static_cast<std::uint64_t>(c - '0');
        else if (c >= 'a' && c <= 'f') h |= static_cast<std::uint64_t>(c - 'a' + 10);
        else throw DataError("checkpoint: bad vocab hash");
    }
    return h;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams<float>& params,
                     TrainingMode mode, std::uint64_t vocab_hash) {
    json manifest = json::array();
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
        manifest.push_back(json{{"name", params.names[i]},
                                {"rows", params.tensors[i].rows()},
                                {"cols", params.tensors[i].cols()}});
    }
    json header{{"format_version", 1},
                {"config", config_to_json(params.config)},
                {"mode", training_mode_name(mode)},
                {"vocab_hash", hash_to_hex(vocab_hash)},
                {"tensors", manifest}};

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out << header.dump() << '\n';
    for (const auto& t : params.tensors) {
        for (Eigen::Index r = 0; r < t.rows(); ++r) {
            for (Eigen::Index c = 0; c < t.cols(); ++c) {
                const float v = t(r, c);
                out.write(reinterpret_cast<const char*>(&v), sizeof(v));
            }
        }
    }
    if (!out) throw DataError("failed writing checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read checkpoint: " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("checkpoint has no header: " + path);

    json header;
    try {
        header = json::parse(line);
    } catch (const json::exception& e) {
        throw DataError("checkpoint header is not valid json: " + std::string(e.what()));
    }

    LoadedCheckpoint out;
    try {
        out.meta.format_version = header.at("format_version").get<int>();
        if (out.meta.format_version != 1) {
            throw DataError("unsupported checkpoint format version");
        }
        out.meta.config = config_from_json(header.at("config"));
        out.meta.mode = training_mode_from_name(header.at("mode").get<std::string>());
        out.meta.vocab_hash = hash_from_hex(header.at("vocab_hash").get<std::string>());

        out.params = ModelParams<float>::zeros(out.meta.config);
        const json& manifest = header.at("tensors");
        if (manifest.size() != out.params.tensors.size()) {
            throw DataError("checkpoint manifest does not match the model layout");
        }
        for (std::size_t i = 0; i < manifest.size(); ++i) {
            const json& m = manifest[i];
            if (m.at("name").get<std::string>() != out.params.names[i] ||
                m.at("rows").get<Eigen::Index>() != out.params.tensors[i].rows() ||
                m.at("cols").get<Eigen::Index>() != out.params.tensors[i].cols()) {
                throw DataError("checkpoint manifest does not match the model layout");
            }
        }
    } catch (const json::exception& e) {
        throw DataError("checkpoint header is incomplete: " + std::string(e.what()));
    }

    for (auto& t : out.params.tensors) {
        for (Eigen::Index r = 0; r < t.rows(); ++r) {
            for (Eigen::Index c = 0; c < t.cols(); ++c) {
                float v = 0.0f;
                in.read(reinterpret_cast<char*>(&v), sizeof(v));
                if (!in) throw DataError("checkpoint is truncated: " + path);
                t(r, c) = v;
            }
        }
    }
    char extra = 0;
    if (in.read(&extra, 1)) throw DataError("checkpoint has trailing data: " + path);
    return out;
}

}  // namespace seq2bf
