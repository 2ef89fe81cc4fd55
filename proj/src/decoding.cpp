#include "seq2bf/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "seq2bf/corpus.hpp"
#include "seq2bf/errors.hpp"

namespace seq2bf {

double hypothesis_score(double log_prob, int real_tokens, double alpha) {
    return log_prob / std::pow(static_cast<double>(real_tokens + 1), alpha);
}

namespace {

template <typename S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

template <typename S>
Mat<S> linear(const Mat<S>& x, const Mat<S>& w, const Mat<S>& b) {
    Mat<S> out = x * w;
    out.rowwise() += b.row(0);
    return out;
}

// mirrors the training-graph layer norm (population variance, eps 1e-5)
template <typename S>
Mat<S> norm_rows(const Mat<S>& x, const Mat<S>& gain, const Mat<S>& bias) {
    const S eps = static_cast<S>(1e-5);
    const S cols = static_cast<S>(x.cols());
    Mat<S> out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const S mean = x.row(r).mean();
        RowVec<S> centered = x.row(r).array() - mean;
        const S istd = S(1) / std::sqrt(centered.squaredNorm() / cols + eps);
        out.row(r) =
            (centered.array() * istd * gain.row(0).array()) + bias.row(0).array();
    }
    return out;
}

template <typename S>
Mat<S> multihead(const Mat<S>& q, const Mat<S>& k, const Mat<S>& v, int n_heads,
                 const std::vector<std::uint8_t>* key_pad) {
    const int dk = static_cast<int>(q.cols()) / n_heads;
    const S scale = S(1) / std::sqrt(static_cast<S>(dk));
    const S neg_inf = -std::numeric_limits<S>::infinity();
    Mat<S> out(q.rows(), q.cols());
    for (int h = 0; h < n_heads; ++h) {
        Mat<S> scores = q.middleCols(h * dk, dk) * k.middleCols(h * dk, dk).transpose();
        scores *= scale;
        if (key_pad) {
            for (std::size_t j = 0; j < key_pad->size(); ++j) {
                if ((*key_pad)[j]) scores.col(j).setConstant(neg_inf);
            }
        }
        for (Eigen::Index r = 0; r < scores.rows(); ++r) {
            const S m = scores.row(r).maxCoeff();
            RowVec<S> e = (scores.row(r).array() - m).exp();
            scores.row(r) = e / e.sum();
        }
        out.middleCols(h * dk, dk) = scores * v.middleCols(h * dk, dk);
    }
    return out;
}

std::vector<double> log_softmax(const std::vector<double>& logits) {
    double m = -std::numeric_limits<double>::infinity();
    for (double x : logits) m = std::max(m, x);
    double sum = 0.0;
    for (double x : logits) sum += std::exp(x - m);
    const double lse = m + std::log(sum);
    std::vector<double> out(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
    return out;
}

template <typename S>
std::vector<double> head_log_probs(const ModelParams<S>& params, Direction dir,
                                   const RowVec<S>& hidden) {
    const std::string pre = dir == Direction::Backward ? "head.b" : "head.f";
    RowVec<S> logits = hidden * params.at(pre + ".w");
    logits += params.at(pre + ".b").row(0);
    std::vector<double> d(logits.size());
    for (Eigen::Index i = 0; i < logits.size(); ++i) d[i] = static_cast<double>(logits(i));
    return log_softmax(d);
}

}  // namespace

template <typename S>
EncodedArticle<S> encode_article(const ModelParams<S>& params, const std::vector<int>& ids) {
    EncodedArticle<S> out;
    out.memory = encoder_forward(params, ids, std::vector<std::uint8_t>(ids.size(), 0));
    out.pad.assign(static_cast<std::size_t>(out.memory.rows()), 0);
    out.cross_k.reserve(params.config.n_dec_layers);
    out.cross_v.reserve(params.config.n_dec_layers);
    for (int i = 0; i < params.config.n_dec_layers; ++i) {
        const std::string pre = "dec" + std::to_string(i) + ".cross";
        out.cross_k.push_back(linear(out.memory, params.at(pre + ".wk"), params.at(pre + ".bk")));
        out.cross_v.push_back(linear(out.memory, params.at(pre + ".wv"), params.at(pre + ".bv")));
    }
    return out;
}

template <typename S>
IncrementalDecoder<S>::IncrementalDecoder(const ModelParams<S>& params,
                                          const EncodedArticle<S>& article)
    : params_(&params), article_(&article) {
    self_k_.assign(params.config.n_dec_layers, Mat<S>(0, params.config.d_model));
    self_v_.assign(params.config.n_dec_layers, Mat<S>(0, params.config.d_model));
}

template <typename S>
Mat<S> IncrementalDecoder<S>::add(const std::vector<int>& ids,
                                  const std::vector<int>& positions) {
    if (ids.empty() || ids.size() != positions.size()) {
        throw ConstraintError("incremental decoder: bad slot block");
    }
    const ModelConfig& cfg = params_->config;
    const int d = cfg.d_model;
    const auto n = static_cast<Eigen::Index>(ids.size());
    const S sqrt_d = std::sqrt(static_cast<S>(d));

    Mat<S> x(n, d);
    const Mat<S>& embed = params_->at("embed");
    for (Eigen::Index i = 0; i < n; ++i) {
        x.row(i) = embed.row(ids[i]) * sqrt_d + positional_encoding<S>(positions[i], d);
    }
    for (int i = 0; i < cfg.n_dec_layers; ++i) {
        const std::string pre = "dec" + std::to_string(i);
        Mat<S> q = linear(x, params_->at(pre + ".self.wq"), params_->at(pre + ".self.bq"));
        Mat<S> k = linear(x, params_->at(pre + ".self.wk"), params_->at(pre + ".self.bk"));
        Mat<S> v = linear(x, params_->at(pre + ".self.wv"), params_->at(pre + ".self.bv"));
        const Eigen::Index old = self_k_[i].rows();
        self_k_[i].conservativeResize(old + n, d);
        self_v_[i].conservativeResize(old + n, d);
        self_k_[i].bottomRows(n) = k;
        self_v_[i].bottomRows(n) = v;
        Mat<S> attn = linear(multihead(q, self_k_[i], self_v_[i], cfg.n_heads, nullptr),
                             params_->at(pre + ".self.wo"), params_->at(pre + ".self.bo"));
        x = norm_rows<S>(x + attn, params_->at(pre + ".ln1.g"), params_->at(pre + ".ln1.b"));

        Mat<S> qc = linear(x, params_->at(pre + ".cross.wq"), params_->at(pre + ".cross.bq"));
        Mat<S> cross = linear(
            multihead(qc, article_->cross_k[i], article_->cross_v[i], cfg.n_heads,
                      &article_->pad),
            params_->at(pre + ".cross.wo"), params_->at(pre + ".cross.bo"));
        x = norm_rows<S>(x + cross, params_->at(pre + ".ln2.g"), params_->at(pre + ".ln2.b"));

        Mat<S> h = linear(x, params_->at(pre + ".ffn.w1"), params_->at(pre + ".ffn.b1"));
        h = h.cwiseMax(S(0));
        Mat<S> f = linear(h, params_->at(pre + ".ffn.w2"), params_->at(pre + ".ffn.b2"));
        x = norm_rows<S>(x + f, params_->at(pre + ".ln3.g"), params_->at(pre + ".ln3.b"));
    }
    slots_ += static_cast<int>(n);
    return x;
}

template <typename S>
Eigen::Matrix<S, 1, Eigen::Dynamic> IncrementalDecoder<S>::add_token(int id, int position) {
    return add({id}, {position}).row(0);
}

// ---- beam search ----

namespace {

template <typename S>
struct Hyp {
    IncrementalDecoder<S> dec;
    std::vector<int> back;  // generation order: nearest to the phrase first
    std::vector<int> fwd;
    bool b_done = false;
    bool f_done = false;
    int b_events = 0;  // events taken per side, markers included
    int f_events = 0;
    double logp = 0.0;
    int real = 0;
    bool has_real = false;
    RowVec<S> last_hidden;

    bool finished() const { return b_done && f_done; }
    double score(double alpha) const { return hypothesis_score(logp, real, alpha); }
};

template <typename S>
Direction next_direction(Strategy strategy, const Hyp<S>& h) {
    if (h.b_done) return Direction::Forward;
    if (h.f_done) return Direction::Backward;
    switch (strategy) {
        case Strategy::SeqB: return Direction::Backward;
        case Strategy::SeqF: return Direction::Forward;
        case Strategy::TokB:
            return h.b_events <= h.f_events ? Direction::Backward : Direction::Forward;
        case Strategy::TokF:
            return h.f_events <= h.b_events ? Direction::Forward : Direction::Backward;
        default: throw ConstraintError("decode: not a phrase-outward strategy");
    }
}

struct Candidate {
    int parent = 0;
    int token = -1;  // -1: carry a finished hypothesis unchanged
    bool marker = false;
    Direction dir = Direction::Backward;
    double logp = 0.0;
    int real_after = 0;
};

}  // namespace

template <typename S>
DecodeResult decode_seq2bf(const ModelParams<S>& params, const EncodedArticle<S>& article,
                           const std::vector<int>& phrase_ids, const DecodeConfig& config) {
    if (phrase_ids.empty()) throw ConstraintError("decode: phrase must be non-empty");
    if (config.beam_size < 1) throw ConfigError("decode: beam_size must be >= 1");
    const int cap = params.config.max_side_len;
    const int vocab = params.config.vocab_size;
    const auto phrase_len = static_cast<int>(phrase_ids.size());

    // prime the phrase as one mutually-visible block
    const Layout layout = assign_positions(0, phrase_len, 0);
    Hyp<S> root{IncrementalDecoder<S>(params, article)};
    const Mat<S> phrase_hidden = root.dec.add(phrase_ids, layout.positions);
    const RowVec<S> w_first = phrase_hidden.row(0);
    const RowVec<S> w_last = phrase_hidden.row(phrase_len - 1);

    std::vector<Hyp<S>> beam;
    beam.push_back(std::move(root));

    const int budget = 2 * cap + 2;
    for (int step = 0; step < budget; ++step) {
        bool all_done = true;
        for (auto& h : beam) {
            if (!h.b_done && static_cast<int>(h.back.size()) >= cap) h.b_done = true;
            if (!h.f_done && static_cast<int>(h.fwd.size()) >= cap) h.f_done = true;
            all_done = all_done && h.finished();
        }
        if (all_done) break;

        std::vector<Candidate> pool;
        for (std::size_t p = 0; p < beam.size(); ++p) {
            const Hyp<S>& h = beam[p];
            if (h.finished()) {
                pool.push_back({static_cast<int>(p), -1, false, Direction::Backward, h.logp,
                                h.real});
                continue;
            }
            const Direction dir = next_direction(config.strategy, h);
            const RowVec<S>& anchor =
                h.has_real ? h.last_hidden
                           : (dir == Direction::Backward ? w_first : w_last);
            const std::vector<double> logz = head_log_probs(params, dir, anchor);
            const int marker =
                dir == Direction::Backward ? SpecialIds::boh : SpecialIds::eoh;
            std::vector<Candidate> local;
            for (int v = 0; v < vocab; ++v) {
                if (SpecialIds::is_special(v) && v != marker) continue;
                local.push_back({static_cast<int>(p), v, v == marker, dir, h.logp + logz[v],
                                 h.real + (v == marker ? 0 : 1)});
            }
            const std::size_t keep = std::min<std::size_t>(local.size(), config.beam_size);
            std::partial_sort(local.begin(), local.begin() + keep, local.end(),
                              [](const Candidate& a, const Candidate& b) {
                                  if (a.logp != b.logp) return a.logp > b.logp;
                                  return a.token < b.token;
                              });
            local.resize(keep);
            pool.insert(pool.end(), local.begin(), local.end());
        }

        const std::size_t keep = std::min<std::size_t>(pool.size(), config.beam_size);
        std::partial_sort(pool.begin(), pool.begin() + keep, pool.end(),
                          [&](const Candidate& a, const Candidate& b) {
                              const double sa = hypothesis_score(a.logp, a.real_after,
                                                                 config.alpha);
                              const double sb = hypothesis_score(b.logp, b.real_after,
                                                                 config.alpha);
                              if (sa != sb) return sa > sb;
                              return a.token < b.token;
                          });
        pool.resize(keep);

        std::vector<Hyp<S>> next;
        next.reserve(pool.size());
        for (const Candidate& c : pool) {
            Hyp<S> h = beam[c.parent];
            if (c.token < 0) {
                next.push_back(std::move(h));
                continue;
            }
            h.logp = c.logp;
            auto& events = c.dir == Direction::Backward ? h.b_events : h.f_events;
            ++events;
            if (c.marker) {
                (c.dir == Direction::Backward ? h.b_done : h.f_done) = true;
            } else {
                auto& side = c.dir == Direction::Backward ? h.back : h.fwd;
                const int j = static_cast<int>(side.size()) + 1;
                h.last_hidden = h.dec.add_token(c.token, layout.outward_position(c.dir, j));
                side.push_back(c.token);
                h.has_real = true;
                ++h.real;
            }
            next.push_back(std::move(h));
        }
        beam = std::move(next);
    }

    const Hyp<S>* best = nullptr;
    for (const auto& h : beam) {
        if (!h.finished()) continue;
        if (!best || h.score(config.alpha) > best->score(config.alpha)) best = &h;
    }
    if (!best) throw ConstraintError("decode: no finished hypothesis within budget");

    DecodeResult out;
    out.ids.assign(best->back.rbegin(), best->back.rend());
    out.ids.insert(out.ids.end(), phrase_ids.begin(), phrase_ids.end());
    out.ids.insert(out.ids.end(), best->fwd.begin(), best->fwd.end());
    out.log_prob = best->logp;
    out.real_tokens = best->real;
    out.score = best->score(config.alpha);
    return out;
}

template <typename S>
DecodeResult decode_left_to_right(const ModelParams<S>& params,
                                  const EncodedArticle<S>& article,
                                  const DecodeConfig& config) {
    if (config.beam_size < 1) throw ConfigError("decode: beam_size must be >= 1");
    const int vocab = params.config.vocab_size;
    const int token_cap = 2 * params.config.max_side_len;

    struct L2RHyp {
        IncrementalDecoder<S> dec;
        std::vector<int> tokens;
        bool done = false;
        double logp = 0.0;
        RowVec<S> last_hidden;
        double score(double alpha) const {
            return hypothesis_score(logp, static_cast<int>(tokens.size()), alpha);
        }
    };

    L2RHyp root{IncrementalDecoder<S>(params, article)};
    root.last_hidden = root.dec.add_token(SpecialIds::boh, 0);
    std::vector<L2RHyp> beam;
    beam.push_back(std::move(root));

    const int budget = token_cap + 1;
    for (int step = 0; step < budget; ++step) {
        bool all_done = true;
        for (auto& h : beam) {
            if (!h.done && static_cast<int>(h.tokens.size()) >= token_cap) h.done = true;
            all_done = all_done && h.done;
        }
        if (all_done) break;

        std::vector<Candidate> pool;
        for (std::size_t p = 0; p < beam.size(); ++p) {
            const L2RHyp& h = beam[p];
            if (h.done) {
                pool.push_back({static_cast<int>(p), -1, false, Direction::Forward, h.logp,
                                static_cast<int>(h.tokens.size())});
                continue;
            }
            const std::vector<double> logz =
                head_log_probs(params, Direction::Forward, h.last_hidden);
            std::vector<Candidate> local;
            for (int v = 0; v < vocab; ++v) {
                if (SpecialIds::is_special(v) && v != SpecialIds::eoh) continue;
                const bool marker = v == SpecialIds::eoh;
                local.push_back({static_cast<int>(p), v, marker, Direction::Forward,
                                 h.logp + logz[v],
                                 static_cast<int>(h.tokens.size()) + (marker ? 0 : 1)});
            }
            const std::size_t keep = std::min<std::size_t>(local.size(), config.beam_size);
            std::partial_sort(local.begin(), local.begin() + keep, local.end(),
                              [](const Candidate& a, const Candidate& b) {
                                  if (a.logp != b.logp) return a.logp > b.logp;
                                  return a.token < b.token;
                              });
            local.resize(keep);
            pool.insert(pool.end(), local.begin(), local.end());
        }

        const std::size_t keep = std::min<std::size_t>(pool.size(), config.beam_size);
        std::partial_sort(pool.begin(), pool.begin() + keep, pool.end(),
                          [&](const Candidate& a, const Candidate& b) {
                              const double sa = hypothesis_score(a.logp, a.real_after,
                                                                 config.alpha);
                              const double sb = hypothesis_score(b.logp, b.real_after,
                                                                 config.alpha);
                              if (sa != sb) return sa > sb;
                              return a.token < b.token;
                          });
        pool.resize(keep);

        std::vector<L2RHyp> next;
        next.reserve(pool.size());
        for (const Candidate& c : pool) {
            L2RHyp h = beam[c.parent];
            if (c.token < 0) {
                next.push_back(std::move(h));
                continue;
            }
            h.logp = c.logp;
            if (c.marker) {
                h.done = true;
            } else {
                h.last_hidden =
                    h.dec.add_token(c.token, static_cast<int>(h.tokens.size()) + 1);
                h.tokens.push_back(c.token);
            }
            next.push_back(std::move(h));
        }
        beam = std::move(next);
    }

    const L2RHyp* best = nullptr;
    for (const auto& h : beam) {
        if (!h.done) continue;
        if (!best || h.score(config.alpha) > best->score(config.alpha)) best = &h;
    }
    if (!best) throw ConstraintError("decode: no finished hypothesis within budget");

    DecodeResult out;
    out.ids = best->tokens;
    out.log_prob = best->logp;
    out.real_tokens = static_cast<int>(best->tokens.size());
    out.score = best->score(config.alpha);
    return out;
}

template struct EncodedArticle<float>;
template struct EncodedArticle<double>;
template class IncrementalDecoder<float>;
template class IncrementalDecoder<double>;

template EncodedArticle<float> encode_article<float>(const ModelParams<float>&,
                                                     const std::vector<int>&);
template EncodedArticle<double> encode_article<double>(const ModelParams<double>&,
                                                       const std::vector<int>&);
template DecodeResult decode_seq2bf<float>(const ModelParams<float>&,
                                           const EncodedArticle<float>&,
                                           const std::vector<int>&, const DecodeConfig&);
template DecodeResult decode_seq2bf<double>(const ModelParams<double>&,
                                            const EncodedArticle<double>&,
                                            const std::vector<int>&, const DecodeConfig&);
template DecodeResult decode_left_to_right<float>(const ModelParams<float>&,
                                                  const EncodedArticle<float>&,
                                                  const DecodeConfig&);
template DecodeResult decode_left_to_right<double>(const ModelParams<double>&,
                                                   const EncodedArticle<double>&,
                                                   const DecodeConfig&);

}  // namespace seq2bf
