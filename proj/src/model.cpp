#include "seq2bf/model.hpp"

#include <cmath>

#include "seq2bf/errors.hpp"

namespace seq2bf {

void ModelConfig::validate() const {
    if (d_model < 1 || n_heads < 1 || n_enc_layers < 1 || n_dec_layers < 1 || d_ff < 1 ||
        vocab_size < 1 || max_article_len < 1 || max_side_len < 1) {
        throw ConfigError("model config: all sizes must be >= 1 (and vocab_size set)");
    }
    if (d_model % n_heads != 0) {
        throw ConfigError("model config: d_model must be divisible by n_heads");
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
        throw ConfigError("model config: dropout_rate must lie in [0,1)");
    }
}

template <typename S>
Mat<S>& ModelParams<S>::at(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw ConstraintError("unknown parameter tensor: " + name);
    return tensors[it->second];
}

template <typename S>
const Mat<S>& ModelParams<S>::at(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw ConstraintError("unknown parameter tensor: " + name);
    return tensors[it->second];
}

template <typename S>
void ModelParams<S>::add(const std::string& name, int rows, int cols) {
    index[name] = static_cast<int>(tensors.size());
    names.push_back(name);
    tensors.push_back(Mat<S>::Zero(rows, cols));
}

namespace {

const char* kAttnWeights[] = {".wq", ".wk", ".wv", ".wo"};
const char* kAttnBiases[] = {".bq", ".bk", ".bv", ".bo"};

template <typename S>
void add_attention(ModelParams<S>& p, const std::string& prefix, int d) {
    for (const char* w : kAttnWeights) p.add(prefix + w, d, d);
    for (const char* b : kAttnBiases) p.add(prefix + b, 1, d);
}

template <typename S>
void add_ffn(ModelParams<S>& p, const std::string& prefix, int d, int d_ff) {
    p.add(prefix + ".w1", d, d_ff);
    p.add(prefix + ".b1", 1, d_ff);
    p.add(prefix + ".w2", d_ff, d);
    p.add(prefix + ".b2", 1, d);
}

template <typename S>
void add_layer_norm(ModelParams<S>& p, const std::string& prefix, int d) {
    p.add(prefix + ".g", 1, d);
    p.add(prefix + ".b", 1, d);
}

bool is_norm_gain(const std::string& name) {
    return name.size() > 2 && name.compare(name.size() - 2, 2, ".g") == 0 &&
           name.find(".ln") != std::string::npos;
}

}  // namespace

template <typename S>
ModelParams<S> ModelParams<S>::zeros(const ModelConfig& config) {
    config.validate();
    ModelParams<S> p;
    p.config = config;
    const int d = config.d_model;
    p.add("embed", config.vocab_size, d);
    for (int i = 0; i < config.n_enc_layers; ++i) {
        const std::string pre = "enc" + std::to_string(i);
        add_attention(p, pre + ".attn", d);
        add_layer_norm(p, pre + ".ln1", d);
        add_ffn(p, pre + ".ffn", d, config.d_ff);
        add_layer_norm(p, pre + ".ln2", d);
    }
    for (int i = 0; i < config.n_dec_layers; ++i) {
        const std::string pre = "dec" + std::to_string(i);
        add_attention(p, pre + ".self", d);
        add_layer_norm(p, pre + ".ln1", d);
        add_attention(p, pre + ".cross", d);
        add_layer_norm(p, pre + ".ln2", d);
        add_ffn(p, pre + ".ffn", d, config.d_ff);
        add_layer_norm(p, pre + ".ln3", d);
    }
    p.add("head.b.w", d, config.vocab_size);
    p.add("head.b.b", 1, config.vocab_size);
    p.add("head.f.w", d, config.vocab_size);
    p.add("head.f.b", 1, config.vocab_size);
    return p;
}

template <typename S>
ModelParams<S> ModelParams<S>::init(const ModelConfig& config, std::uint64_t seed) {
    ModelParams<S> p = zeros(config);
    Rng rng = make_rng(seed, /*stream=*/0x9a9aU);
    for (std::size_t i = 0; i < p.tensors.size(); ++i) {
        Mat<S>& t = p.tensors[i];
        if (is_norm_gain(p.names[i])) {
            t.setOnes();
        } else if (t.rows() > 1) {
            // Glorot-style scaled uniform
            const double limit = std::sqrt(6.0 / static_cast<double>(t.rows() + t.cols()));
            std::uniform_real_distribution<double> u(-limit, limit);
            for (Eigen::Index r = 0; r < t.rows(); ++r) {
                for (Eigen::Index c = 0; c < t.cols(); ++c) t(r, c) = static_cast<S>(u(rng));
            }
        }  // biases and norm shifts stay zero
    }
    return p;
}

template <typename S>
Eigen::Matrix<S, 1, Eigen::Dynamic> positional_encoding(int position, int d_model) {
    Eigen::Matrix<S, 1, Eigen::Dynamic> v(d_model);
    for (int i = 0; 2 * i < d_model; ++i) {
        const double div = std::pow(10000.0, 2.0 * i / d_model);
        const double arg = static_cast<double>(position) / div;
        v(2 * i) = static_cast<S>(std::sin(arg));
        if (2 * i + 1 < d_model) v(2 * i + 1) = static_cast<S>(std::cos(arg));
    }
    return v;
}

// ---- graph ----

template <typename S>
ModelGraph<S>::ModelGraph(Tape<S>& tape, const ModelParams<S>& params, double dropout_rate,
                          Rng* dropout_rng)
    : tape_(tape), params_(params), dropout_rate_(dropout_rate), rng_(dropout_rng) {
    if (dropout_rate_ > 0.0 && rng_ == nullptr) {
        throw ConfigError("dropout requires a random source");
    }
    leaves_.reserve(params_.tensors.size());
    for (const auto& t : params_.tensors) leaves_.push_back(tape_.leaf(t));
}

template <typename S>
Var ModelGraph<S>::param(const std::string& name) const {
    auto it = params_.index.find(name);
    if (it == params_.index.end()) throw ConstraintError("unknown parameter tensor: " + name);
    return leaves_[it->second];
}

template <typename S>
Var ModelGraph<S>::sublayer_dropout(Var x) {
    if (dropout_rate_ <= 0.0) return x;
    return tape_.dropout(x, static_cast<S>(dropout_rate_), *rng_);
}

template <typename S>
Var ModelGraph<S>::embed(const std::vector<int>& ids, const std::vector<int>& positions) {
    const int d = params_.config.d_model;
    Var x = tape_.rows(param("embed"), ids);
    x = tape_.scale(x, static_cast<S>(std::sqrt(static_cast<double>(d))));
    Mat<S> pe(ids.size(), d);
    for (std::size_t i = 0; i < positions.size(); ++i) {
        pe.row(i) = positional_encoding<S>(positions[i], d);
    }
    x = tape_.add_const(x, pe);
    return sublayer_dropout(x);
}

template <typename S>
Var ModelGraph<S>::attention(Var queries_in, Var keys_in, const Mat<S>& additive_mask,
                             const std::string& prefix) {
    const int dk = params_.config.head_dim();
    Var q = tape_.add_rowvec(tape_.matmul(queries_in, param(prefix + ".wq")),
                             param(prefix + ".bq"));
    Var k = tape_.add_rowvec(tape_.matmul(keys_in, param(prefix + ".wk")), param(prefix + ".bk"));
    Var v = tape_.add_rowvec(tape_.matmul(keys_in, param(prefix + ".wv")), param(prefix + ".bv"));

    std::vector<Var> heads;
    heads.reserve(params_.config.n_heads);
    const S inv_sqrt_dk = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dk)));
    for (int h = 0; h < params_.config.n_heads; ++h) {
        Var qh = tape_.slice_cols(q, h * dk, dk);
        Var kh = tape_.slice_cols(k, h * dk, dk);
        Var vh = tape_.slice_cols(v, h * dk, dk);
        Var scores = tape_.scale(tape_.matmul_nt(qh, kh), inv_sqrt_dk);
        Var probs = tape_.masked_softmax_rows(scores, additive_mask);
        heads.push_back(tape_.matmul(probs, vh));
    }
    Var concat = params_.config.n_heads == 1 ? heads[0] : tape_.concat_cols(heads);
    return tape_.add_rowvec(tape_.matmul(concat, param(prefix + ".wo")), param(prefix + ".bo"));
}

template <typename S>
Var ModelGraph<S>::ffn(Var x, const std::string& prefix) {
    Var h = tape_.relu(
        tape_.add_rowvec(tape_.matmul(x, param(prefix + ".w1")), param(prefix + ".b1")));
    return tape_.add_rowvec(tape_.matmul(h, param(prefix + ".w2")), param(prefix + ".b2"));
}

namespace {

template <typename S>
Mat<S> pad_key_mask(std::size_t n_queries, const std::vector<std::uint8_t>& key_pad) {
    Mat<S> m = Mat<S>::Zero(n_queries, key_pad.size());
    const S neg_inf = -std::numeric_limits<S>::infinity();
    for (std::size_t j = 0; j < key_pad.size(); ++j) {
        if (key_pad[j]) m.col(j).setConstant(neg_inf);
    }
    return m;
}

template <typename S>
Mat<S> attn_mask_additive(const AttnMask& mask) {
    Mat<S> m = Mat<S>::Zero(mask.size, mask.size);
    const S neg_inf = -std::numeric_limits<S>::infinity();
    for (int p = 0; p < mask.size; ++p) {
        for (int q = 0; q < mask.size; ++q) {
            if (!mask.allowed(p, q)) m(p, q) = neg_inf;
        }
    }
    return m;
}

}  // namespace

template <typename S>
Var ModelGraph<S>::encoder(const std::vector<int>& ids, const std::vector<std::uint8_t>& pad) {
    if (ids.empty()) throw ConstraintError("encoder: empty input");
    if (pad.size() != ids.size()) throw ConstraintError("encoder: pad mask size mismatch");
    std::vector<int> use_ids = ids;
    std::vector<std::uint8_t> use_pad = pad;
    const std::size_t cap = static_cast<std::size_t>(params_.config.max_article_len);
    if (use_ids.size() > cap) {
        use_ids.resize(cap);
        use_pad.resize(cap);
    }
    std::vector<int> positions(use_ids.size());
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);

    Var x = embed(use_ids, positions);
    const Mat<S> mask = pad_key_mask<S>(use_ids.size(), use_pad);
    for (int i = 0; i < params_.config.n_enc_layers; ++i) {
        const std::string pre = "enc" + std::to_string(i);
        Var a = sublayer_dropout(attention(x, x, mask, pre + ".attn"));
        x = tape_.layer_norm(tape_.add(x, a), param(pre + ".ln1.g"), param(pre + ".ln1.b"),
                             static_cast<S>(1e-5));
        Var f = sublayer_dropout(ffn(x, pre + ".ffn"));
        x = tape_.layer_norm(tape_.add(x, f), param(pre + ".ln2.g"), param(pre + ".ln2.b"),
                             static_cast<S>(1e-5));
    }
    return x;
}

template <typename S>
Var ModelGraph<S>::decoder(const std::vector<int>& slot_ids, const std::vector<int>& positions,
                           const AttnMask& mask, Var memory,
                           const std::vector<std::uint8_t>& memory_pad) {
    if (slot_ids.empty()) throw ConstraintError("decoder: empty input");
    if (mask.size != static_cast<int>(slot_ids.size()) || positions.size() != slot_ids.size()) {
        throw ConstraintError("decoder: mask/slot size mismatch");
    }
    if (static_cast<Eigen::Index>(memory_pad.size()) != tape_.value(memory).rows()) {
        throw ConstraintError("decoder: memory pad size mismatch");
    }

    Var x = embed(slot_ids, positions);
    const Mat<S> self_mask = attn_mask_additive<S>(mask);
    const Mat<S> cross_mask = pad_key_mask<S>(slot_ids.size(), memory_pad);
    for (int i = 0; i < params_.config.n_dec_layers; ++i) {
        const std::string pre = "dec" + std::to_string(i);
        Var a = sublayer_dropout(attention(x, x, self_mask, pre + ".self"));
        x = tape_.layer_norm(tape_.add(x, a), param(pre + ".ln1.g"), param(pre + ".ln1.b"),
                             static_cast<S>(1e-5));
        Var c = sublayer_dropout(attention(x, memory, cross_mask, pre + ".cross"));
        x = tape_.layer_norm(tape_.add(x, c), param(pre + ".ln2.g"), param(pre + ".ln2.b"),
                             static_cast<S>(1e-5));
        Var f = sublayer_dropout(ffn(x, pre + ".ffn"));
        x = tape_.layer_norm(tape_.add(x, f), param(pre + ".ln3.g"), param(pre + ".ln3.b"),
                             static_cast<S>(1e-5));
    }
    return x;
}

template <typename S>
Var ModelGraph<S>::head(Direction direction, Var hidden) {
    const std::string pre = direction == Direction::Backward ? "head.b" : "head.f";
    return tape_.add_rowvec(tape_.matmul(hidden, param(pre + ".w")), param(pre + ".b"));
}

// ---- loss / grad ----

namespace {

template <typename S>
struct BuiltLoss {
    Var mean_loss;       // invalid when the batch has no events
    S sum = S(0);
    std::size_t events = 0;
};

template <typename S>
BuiltLoss<S> build_loss(ModelGraph<S>& graph, const Batch& batch, double smoothing) {
    Tape<S>& tape = graph.tape();
    std::vector<Var> sums;
    std::size_t total_events = 0;
    for (const auto& ex : batch.examples) {
        if (ex.events.empty()) continue;
        Var memory = graph.encoder(ex.article_ids, ex.article_pad);
        const auto mem_rows = static_cast<std::size_t>(tape.value(memory).rows());
        std::vector<std::uint8_t> mem_pad(ex.article_pad.begin(),
                                          ex.article_pad.begin() + mem_rows);
        Var hidden = graph.decoder(ex.slot_ids, ex.positions, ex.mask, memory, mem_pad);

        std::vector<int> rows_by_dir[2];
        std::vector<int> targets_by_dir[2];
        for (const auto& ev : ex.events) {
            const int d = ev.head == Direction::Backward ? 0 : 1;
            rows_by_dir[d].push_back(ev.anchor_slot);
            targets_by_dir[d].push_back(ev.target_id);
        }
        for (int d = 0; d < 2; ++d) {
            if (rows_by_dir[d].empty()) continue;
            Var anchors = tape.rows(hidden, rows_by_dir[d]);
            Var logits = graph.head(d == 0 ? Direction::Backward : Direction::Forward, anchors);
            sums.push_back(tape.cross_entropy_sum(logits, targets_by_dir[d],
                                                  static_cast<S>(smoothing)));
        }
        total_events += ex.events.size();
    }
    BuiltLoss<S> out;
    out.events = total_events;
    if (total_events == 0) return out;
    Var total = tape.add_scalars(sums);
    out.sum = tape.value(total)(0, 0);
    out.mean_loss = tape.scale(total, S(1) / static_cast<S>(total_events));
    return out;
}

}  // namespace

template <typename S>
LossStats<S> loss_stats(const ModelParams<S>& params, const Batch& batch,
                        const LossOptions& opts) {
    Tape<S> tape;
    ModelGraph<S> graph(tape, params, opts.dropout_rate, opts.dropout_rng);
    auto built = build_loss(graph, batch, opts.label_smoothing);
    return {built.sum, built.events};
}

template <typename S>
S loss(const ModelParams<S>& params, const Batch& batch, const LossOptions& opts) {
    return loss_stats(params, batch, opts).mean();
}

template <typename S>
GradResult<S> grad(const ModelParams<S>& params, const Batch& batch, const LossOptions& opts) {
    GradResult<S> result;
    Tape<S> tape;
    ModelGraph<S> graph(tape, params, opts.dropout_rate, opts.dropout_rng);
    auto built = build_loss(graph, batch, opts.label_smoothing);
    result.events = built.events;
    if (built.events == 0) {
        result.loss = S(0);
        for (const auto& t : params.tensors) result.grads.push_back(Mat<S>::Zero(t.rows(), t.cols()));
        return result;
    }
    result.loss = built.sum / static_cast<S>(built.events);
    tape.backward(built.mean_loss);
    result.grads.reserve(params.tensors.size());
    for (Var leaf : graph.leaves()) result.grads.push_back(tape.grad(leaf));
    return result;
}

// ---- single-pass wrappers ----

template <typename S>
Mat<S> encoder_forward(const ModelParams<S>& params, const std::vector<int>& ids,
                       const std::vector<std::uint8_t>& pad) {
    Tape<S> tape;
    ModelGraph<S> graph(tape, params);
    return tape.value(graph.encoder(ids, pad));
}

template <typename S>
Mat<S> decoder_forward(const ModelParams<S>& params, const std::vector<int>& slot_ids,
                       const std::vector<int>& positions, const AttnMask& mask,
                       const Mat<S>& memory, const std::vector<std::uint8_t>& memory_pad) {
    Tape<S> tape;
    ModelGraph<S> graph(tape, params);
    Var mem = tape.constant(memory);
    return tape.value(graph.decoder(slot_ids, positions, mask, mem, memory_pad));
}

template <typename S>
Eigen::Matrix<S, 1, Eigen::Dynamic> head_logits(
    const ModelParams<S>& params, Direction direction,
    const Eigen::Matrix<S, 1, Eigen::Dynamic>& hidden) {
    Tape<S> tape;
    ModelGraph<S> graph(tape, params);
    Var h = tape.constant(hidden);
    return tape.value(graph.head(direction, h)).row(0);
}

// ---- instantiations ----

template struct ModelParams<float>;
template struct ModelParams<double>;
template class ModelGraph<float>;
template class ModelGraph<double>;

template Eigen::Matrix<float, 1, Eigen::Dynamic> positional_encoding<float>(int, int);
template Eigen::Matrix<double, 1, Eigen::Dynamic> positional_encoding<double>(int, int);

template float loss<float>(const ModelParams<float>&, const Batch&, const LossOptions&);
template double loss<double>(const ModelParams<double>&, const Batch&, const LossOptions&);
template LossStats<float> loss_stats<float>(const ModelParams<float>&, const Batch&,
                                            const LossOptions&);
template LossStats<double> loss_stats<double>(const ModelParams<double>&, const Batch&,
                                              const LossOptions&);
template GradResult<float> grad<float>(const ModelParams<float>&, const Batch&,
                                       const LossOptions&);
template GradResult<double> grad<double>(const ModelParams<double>&, const Batch&,
                                         const LossOptions&);
template Mat<float> encoder_forward<float>(const ModelParams<float>&, const std::vector<int>&,
                                           const std::vector<std::uint8_t>&);
template Mat<double> encoder_forward<double>(const ModelParams<double>&, const std::vector<int>&,
                                             const std::vector<std::uint8_t>&);
template Mat<float> decoder_forward<float>(const ModelParams<float>&, const std::vector<int>&,
                                           const std::vector<int>&, const AttnMask&,
                                           const Mat<float>&, const std::vector<std::uint8_t>&);
template Mat<double> decoder_forward<double>(const ModelParams<double>&, const std::vector<int>&,
                                             const std::vector<int>&, const AttnMask&,
                                             const Mat<double>&,
                                             const std::vector<std::uint8_t>&);
template Eigen::Matrix<float, 1, Eigen::Dynamic> head_logits<float>(
    const ModelParams<float>&, Direction, const Eigen::Matrix<float, 1, Eigen::Dynamic>&);
template Eigen::Matrix<double, 1, Eigen::Dynamic> head_logits<double>(
    const ModelParams<double>&, Direction, const Eigen::Matrix<double, 1, Eigen::Dynamic>&);

}  // namespace seq2bf
