#pragma once

#include <vector>

#include "seq2bf/model.hpp"
#include "seq2bf/schedule.hpp"

namespace seq2bf {

struct DecodeConfig {
    Strategy strategy = Strategy::SeqB;
    int beam_size = 3;
    double alpha = 0.0;  // length-normalization exponent
};

struct DecodeResult {
    std::vector<int> ids;  // final headline, left to right, phrase included
    double log_prob = 0.0;  // cumulative event log-likelihood (markers included)
    double score = 0.0;     // normalized beam score
    int real_tokens = 0;    // generated tokens, phrase and markers excluded
};

// Beam score used throughout: cumulative log prob over (real + 1)^alpha.
double hypothesis_score(double log_prob, int real_tokens, double alpha);

// Article pushed through the encoder once, with the per-layer cross-attention
// keys/values every decode step reuses.
template <typename S>
struct EncodedArticle {
    Mat<S> memory;
    std::vector<std::uint8_t> pad;
    std::vector<Mat<S>> cross_k;  // one per decoder layer
    std::vector<Mat<S>> cross_v;
};

template <typename S>
EncodedArticle<S> encode_article(const ModelParams<S>& params, const std::vector<int>& ids);

// Grows one decoder state a slot (or a phrase block) at a time, caching
// self-attention keys/values. Valid because a slot generated later may attend
// to everything generated earlier plus itself, and earlier slots never attend
// forward; the phrase block is added in one mutually-visible chunk. Copyable,
// so beam hypotheses fork cheaply.
template <typename S>
class IncrementalDecoder {
public:
    IncrementalDecoder(const ModelParams<S>& params, const EncodedArticle<S>& article);

    // Appends slots and returns their final hidden rows.
    Mat<S> add(const std::vector<int>& ids, const std::vector<int>& positions);
    Eigen::Matrix<S, 1, Eigen::Dynamic> add_token(int id, int position);

    int slots() const { return slots_; }

private:
    const ModelParams<S>* params_;
    const EncodedArticle<S>* article_;
    std::vector<Mat<S>> self_k_;  // one per decoder layer, rows in add order
    std::vector<Mat<S>> self_v_;
    int slots_ = 0;
};

// Beam search outward from the phrase under the configured strategy. The
// phrase is part of every hypothesis by construction. A side closes when its
// own end marker is predicted (its log prob counts, no token is emitted) or
// when it reaches max_side_len (no marker term).
template <typename S>
DecodeResult decode_seq2bf(const ModelParams<S>& params, const EncodedArticle<S>& article,
                           const std::vector<int>& phrase_ids, const DecodeConfig& config);

// Left-to-right baseline decode: starts from <boh> at position 0, forward
// head only, stops on <eoh> or at the event budget.
template <typename S>
DecodeResult decode_left_to_right(const ModelParams<S>& params, const EncodedArticle<S>& article,
                                  const DecodeConfig& config);

}  // namespace seq2bf
