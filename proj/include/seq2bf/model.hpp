#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "seq2bf/autodiff.hpp"
#include "seq2bf/schedule.hpp"

namespace seq2bf {

struct ModelConfig {
    int d_model = 64;
    int n_heads = 4;
    int n_enc_layers = 2;
    int n_dec_layers = 2;
    int d_ff = 256;
    int vocab_size = 0;
    double dropout_rate = 0.1;
    int max_article_len = 64;
    int max_side_len = 16;

    int head_dim() const { return d_model / n_heads; }
    void validate() const;
};

// All trainable tensors, flat and name-addressable. The vector order is the
// checkpoint manifest order.
template <typename S>
struct ModelParams {
    ModelConfig config;
    std::vector<std::string> names;
    std::vector<Mat<S>> tensors;
    std::unordered_map<std::string, int> index;

    Mat<S>& at(const std::string& name);
    const Mat<S>& at(const std::string& name) const;
    void add(const std::string& name, int rows, int cols);

    static ModelParams<S> init(const ModelConfig& config, std::uint64_t seed);
    static ModelParams<S> zeros(const ModelConfig& config);

    template <typename T>
    ModelParams<T> cast() const {
        ModelParams<T> out;
        out.config = config;
        out.names = names;
        out.index = index;
        out.tensors.reserve(tensors.size());
        for (const auto& t : tensors) out.tensors.push_back(t.template cast<T>());
        return out;
    }
};

// Signed sinusoidal positional encoding; sin/cos take the raw signed index.
template <typename S>
Eigen::Matrix<S, 1, Eigen::Dynamic> positional_encoding(int position, int d_model);

// One prediction step of a teacher-forced example.
struct EventTarget {
    bool marker = false;
    Direction head = Direction::Backward;
    int anchor_slot = 0;
    int target_id = 0;
};

struct BatchExample {
    std::vector<int> article_ids;           // padded to the batch width
    std::vector<std::uint8_t> article_pad;  // 1 = padding
    std::vector<int> slot_ids;              // decoder inputs, layout order
    std::vector<int> positions;             // signed position per slot
    AttnMask mask;
    std::vector<EventTarget> events;
};

struct Batch {
    std::vector<BatchExample> examples;
    int skipped = 0;    // sides beyond max_side_len
    int truncated = 0;  // articles clipped to max_article_len

    std::size_t total_events() const {
        std::size_t n = 0;
        for (const auto& ex : examples) n += ex.events.size();
        return n;
    }
};

// Builds the forward graph for one set of params on one tape. Leaves are
// bound eagerly so gradients line up with ModelParams::tensors.
template <typename S>
class ModelGraph {
public:
    ModelGraph(Tape<S>& tape, const ModelParams<S>& params, double dropout_rate = 0.0,
               Rng* dropout_rng = nullptr);

    Var encoder(const std::vector<int>& ids, const std::vector<std::uint8_t>& pad);
    Var decoder(const std::vector<int>& slot_ids, const std::vector<int>& positions,
                const AttnMask& mask, Var memory, const std::vector<std::uint8_t>& memory_pad);
    Var head(Direction direction, Var hidden);

    Var param(const std::string& name) const;
    const std::vector<Var>& leaves() const { return leaves_; }
    Tape<S>& tape() { return tape_; }

private:
    Var embed(const std::vector<int>& ids, const std::vector<int>& positions);
    Var attention(Var queries_in, Var keys_in, const Mat<S>& additive_mask,
                  const std::string& prefix);
    Var ffn(Var x, const std::string& prefix);
    Var sublayer_dropout(Var x);

    Tape<S>& tape_;
    const ModelParams<S>& params_;
    double dropout_rate_;
    Rng* rng_;
    std::vector<Var> leaves_;
};

struct LossOptions {
    double label_smoothing = 0.0;
    double dropout_rate = 0.0;
    Rng* dropout_rng = nullptr;
};

template <typename S>
struct LossStats {
    S sum = S(0);
    std::size_t events = 0;
    S mean() const { return events ? sum / S(events) : S(0); }
};

template <typename S>
struct GradResult {
    std::vector<Mat<S>> grads;  // aligned with ModelParams::tensors
    S loss = S(0);
    std::size_t events = 0;
};

// Mean per-event cross entropy over the batch (markers included).
template <typename S>
S loss(const ModelParams<S>& params, const Batch& batch, const LossOptions& opts = {});

template <typename S>
LossStats<S> loss_stats(const ModelParams<S>& params, const Batch& batch,
                        const LossOptions& opts = {});

// Reverse-mode gradients of loss() for every parameter tensor.
template <typename S>
GradResult<S> grad(const ModelParams<S>& params, const Batch& batch,
                   const LossOptions& opts = {});

// Single-pass wrappers used by the tests and the oracles (no dropout).
template <typename S>
Mat<S> encoder_forward(const ModelParams<S>& params, const std::vector<int>& ids,
                       const std::vector<std::uint8_t>& pad);

template <typename S>
Mat<S> decoder_forward(const ModelParams<S>& params, const std::vector<int>& slot_ids,
                       const std::vector<int>& positions, const AttnMask& mask,
                       const Mat<S>& memory, const std::vector<std::uint8_t>& memory_pad);

template <typename S>
Eigen::Matrix<S, 1, Eigen::Dynamic> head_logits(const ModelParams<S>& params,
                                                Direction direction,
                                                const Eigen::Matrix<S, 1, Eigen::Dynamic>& hidden);

}  // namespace seq2bf
