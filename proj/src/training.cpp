#include "seq2bf/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "seq2bf/errors.hpp"

namespace seq2bf {

const char* training_mode_name(TrainingMode mode) {
    switch (mode) {
        case TrainingMode::SeqB: return "seq-b";
        case TrainingMode::SeqF: return "seq-f";
        case TrainingMode::TokB: return "tok-b";
        case TrainingMode::TokF: return "tok-f";
        case TrainingMode::L2RVanilla: return "l2r";
        case TrainingMode::L2RControl: return "l2r-control";
    }
    return "?";
}

TrainingMode training_mode_from_name(const std::string& name) {
    for (TrainingMode m : {TrainingMode::SeqB, TrainingMode::SeqF, TrainingMode::TokB,
                           TrainingMode::TokF, TrainingMode::L2RVanilla,
                           TrainingMode::L2RControl}) {
        if (name == training_mode_name(m)) return m;
    }
    throw ConfigError("unknown training mode: " + name);
}

bool is_seq2bf(TrainingMode mode) {
    return mode == TrainingMode::SeqB || mode == TrainingMode::SeqF ||
           mode == TrainingMode::TokB || mode == TrainingMode::TokF;
}

Strategy strategy_of(TrainingMode mode) {
    switch (mode) {
        case TrainingMode::SeqB: return Strategy::SeqB;
        case TrainingMode::SeqF: return Strategy::SeqF;
        case TrainingMode::TokB: return Strategy::TokB;
        case TrainingMode::TokF: return Strategy::TokF;
        default: throw ConstraintError("mode has no phrase-outward strategy");
    }
}

void TrainConfig::validate() const {
    if (batch_size < 1 || max_epochs < 1 || patience < 1 || warmup_steps < 1) {
        throw ConfigError("train config: batch_size, max_epochs, patience and warmup "
                          "must be >= 1");
    }
    if (lr_scale <= 0.0) throw ConfigError("train config: lr_scale must be > 0");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0 || adam_eps <= 0.0) {
        throw ConfigError("train config: invalid adam parameters");
    }
    if (drop_prob < 0.0 || drop_prob > 1.0) {
        throw ConfigError("train config: drop_prob must lie in [0,1]");
    }
    if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
        throw ConfigError("train config: label_smoothing must lie in [0,1)");
    }
}

bool EarlyStopper::observe(double value) {
    ++epoch_;
    improved_last_ = value < best_;
    if (improved_last_) {
        best_ = value;
        best_epoch_ = epoch_;
        since_best_ = 0;
        return false;
    }
    ++since_best_;
    return since_best_ >= patience_;
}

AdamOptimizer::AdamOptimizer(const TrainConfig& config, const ModelConfig& model)
    : lr_scale_(config.lr_scale),
      beta1_(config.beta1),
      beta2_(config.beta2),
      eps_(config.adam_eps),
      dim_scale_(1.0 / std::sqrt(static_cast<double>(model.d_model))),
      warmup_(config.warmup_steps) {}

double AdamOptimizer::learning_rate(std::int64_t step) const {
    const double t = static_cast<double>(step < 1 ? 1 : step);
    return lr_scale_ * dim_scale_ *
           std::min(1.0 / std::sqrt(t), t * std::pow(static_cast<double>(warmup_), -1.5));
}

void AdamOptimizer::step(ModelParams<float>& params, const std::vector<Mat<float>>& grads) {
    if (grads.size() != params.tensors.size()) {
        throw ConstraintError("optimizer: gradient/parameter count mismatch");
    }
    if (m_.empty()) {
        m_.reserve(grads.size());
        v_.reserve(grads.size());
        for (const auto& g : grads) {
            m_.push_back(Mat<float>::Zero(g.rows(), g.cols()));
            v_.push_back(Mat<float>::Zero(g.rows(), g.cols()));
        }
    }
    ++t_;
    const auto lr = static_cast<float>(learning_rate(t_));
    const auto bc1 = static_cast<float>(1.0 - std::pow(beta1_, static_cast<double>(t_)));
    const auto bc2 = static_cast<float>(1.0 - std::pow(beta2_, static_cast<double>(t_)));
    const auto b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
    const auto eps = static_cast<float>(eps_);
    for (std::size_t i = 0; i < grads.size(); ++i) {
        m_[i] = b1 * m_[i] + (1.0f - b1) * grads[i];
        v_[i] = b2 * v_[i] + (1.0f - b2) * grads[i].cwiseProduct(grads[i]);
        params.tensors[i].array() -=
            lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps);
    }
}

// ---- batch construction ----

namespace {

void clip_article(BatchExample& ex, const ModelConfig& config, int& truncated) {
    if (static_cast<int>(ex.article_ids.size()) > config.max_article_len) {
        ex.article_ids.resize(config.max_article_len);
        ++truncated;
    }
    ex.article_pad.assign(ex.article_ids.size(), 0);
}

BatchExample l2r_example(std::vector<int> source, const std::vector<int>& headline,
                         const ModelConfig& config, int& truncated) {
    BatchExample ex;
    ex.article_ids = std::move(source);
    clip_article(ex, config, truncated);
    const int n = static_cast<int>(headline.size());
    ex.slot_ids.reserve(n + 1);
    ex.slot_ids.push_back(SpecialIds::boh);
    ex.slot_ids.insert(ex.slot_ids.end(), headline.begin(), headline.end());
    ex.positions.resize(n + 1);
    std::iota(ex.positions.begin(), ex.positions.end(), 0);
    ex.mask = causal_mask(n + 1);
    ex.events.reserve(n + 1);
    for (int i = 0; i < n; ++i) {
        ex.events.push_back({false, Direction::Forward, i, headline[i]});
    }
    ex.events.push_back({true, Direction::Forward, n, SpecialIds::eoh});
    return ex;
}

}  // namespace

std::vector<int> control_code_source(const Document& doc, double drop_prob, Rng* rng) {
    const std::vector<int> phrase = doc.phrase_ids();
    std::vector<int> src = phrase;
    src.push_back(SpecialIds::sep);
    std::bernoulli_distribution drop(drop_prob);
    const std::vector<int>& art = doc.article_ids;
    std::size_t i = 0;
    while (i < art.size()) {
        const bool match = !phrase.empty() && i + phrase.size() <= art.size() &&
                           std::equal(phrase.begin(), phrase.end(), art.begin() + i);
        if (match) {
            const bool dropped = drop_prob > 0.0 && rng != nullptr && drop(*rng);
            if (!dropped) src.insert(src.end(), phrase.begin(), phrase.end());
            i += phrase.size();
        } else {
            src.push_back(art[i]);
            ++i;
        }
    }
    return src;
}

Batch make_seq2bf_batch(const std::vector<const Document*>& docs, Strategy strategy,
                        const ModelConfig& config) {
    Batch batch;
    for (const Document* doc : docs) {
        if (doc->backward_len() > config.max_side_len ||
            doc->forward_len() > config.max_side_len) {
            ++batch.skipped;
            continue;
        }
        const Layout layout =
            assign_positions(doc->backward_len(), doc->phrase_len(), doc->forward_len());
        const ResolvedSchedule rs = resolve_schedule(strategy, layout);
        BatchExample ex;
        ex.article_ids = doc->article_ids;
        clip_article(ex, config, batch.truncated);
        ex.slot_ids = doc->headline_ids;
        ex.positions = layout.positions;
        ex.mask = rs.mask;
        ex.events.reserve(rs.events.size());
        for (std::size_t k = 0; k < rs.events.size(); ++k) {
            const Event& ev = rs.events[k];
            EventTarget t;
            t.marker = ev.marker;
            t.head = ev.direction;
            t.anchor_slot = rs.anchors[k];
            if (ev.marker) {
                t.target_id = ev.direction == Direction::Backward ? SpecialIds::boh
                                                                  : SpecialIds::eoh;
            } else {
                t.target_id = doc->headline_ids[layout.slot_of_side(ev.side)];
            }
            ex.events.push_back(t);
        }
        batch.examples.push_back(std::move(ex));
    }
    return batch;
}

Batch make_l2r_batch(const std::vector<const Document*>& docs, const ModelConfig& config) {
    Batch batch;
    for (const Document* doc : docs) {
        batch.examples.push_back(
            l2r_example(doc->article_ids, doc->headline_ids, config, batch.truncated));
    }
    return batch;
}

Batch make_control_code_batch(const std::vector<const Document*>& docs,
                              const ModelConfig& config, double drop_prob, Rng* rng) {
    Batch batch;
    for (const Document* doc : docs) {
        batch.examples.push_back(l2r_example(control_code_source(*doc, drop_prob, rng),
                                             doc->headline_ids, config, batch.truncated));
    }
    return batch;
}

Batch make_batch(const std::vector<const Document*>& docs, TrainingMode mode,
                 const ModelConfig& config, double drop_prob, Rng* rng) {
    switch (mode) {
        case TrainingMode::L2RVanilla: return make_l2r_batch(docs, config);
        case TrainingMode::L2RControl:
            return make_control_code_batch(docs, config, drop_prob, rng);
        default: return make_seq2bf_batch(docs, strategy_of(mode), config);
    }
}

// ---- the loop ----

namespace {

std::vector<const Document*> doc_chunk(const std::vector<Document>& docs,
                                       const std::vector<int>& order, std::size_t begin,
                                       std::size_t end) {
    std::vector<const Document*> out;
    out.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) out.push_back(&docs[order[i]]);
    return out;
}

}  // namespace

LossStats<float> corpus_loss(const ModelParams<float>& params, TrainingMode mode,
                             const std::vector<Document>& docs, int batch_size,
                             double label_smoothing) {
    LossStats<float> total;
    std::vector<int> order(docs.size());
    std::iota(order.begin(), order.end(), 0);
    LossOptions opts;
    opts.label_smoothing = label_smoothing;
    for (std::size_t start = 0; start < docs.size();
         start += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(docs.size(), start + batch_size);
        Batch batch = make_batch(doc_chunk(docs, order, start, end), mode, params.config,
                                 /*drop_prob=*/0.0, nullptr);
        if (batch.total_events() == 0) continue;
        LossStats<float> s = loss_stats(params, batch, opts);
        total.sum += s.sum;
        total.events += s.events;
    }
    return total;
}

double perplexity(const ModelParams<float>& params, TrainingMode mode,
                  const std::vector<Document>& docs, int batch_size) {
    return std::exp(static_cast<double>(corpus_loss(params, mode, docs, batch_size).mean()));
}

TrainResult train(const ModelConfig& model_config, const TrainConfig& train_config,
                  TrainingMode mode, const std::vector<Document>& train_docs,
                  const std::vector<Document>& val_docs, const EpochCallback& on_epoch) {
    model_config.validate();
    train_config.validate();
    if (train_docs.empty()) throw DataError("train: empty training set");
    if (val_docs.empty()) throw DataError("train: empty validation set");

    TrainResult result;
    ModelParams<float> params = ModelParams<float>::init(model_config, train_config.seed);
    result.params = params;  // fallback if nothing ever improves
    AdamOptimizer opt(train_config, model_config);
    EarlyStopper stopper(train_config.patience);

    std::vector<int> order(train_docs.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= train_config.max_epochs; ++epoch) {
        Rng rng = make_rng(train_config.seed, 0xE000u + static_cast<std::uint64_t>(epoch));
        std::shuffle(order.begin(), order.end(), rng);
        // bucket by decoder length; stable so the shuffle decides within a bucket
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return train_docs[a].headline_ids.size() < train_docs[b].headline_ids.size();
        });

        double epoch_sum = 0.0;
        std::size_t epoch_events = 0;
        bool diverged = false;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(train_config.batch_size)) {
            const std::size_t end = std::min(order.size(), start + train_config.batch_size);
            Batch batch = make_batch(doc_chunk(train_docs, order, start, end), mode,
                                     model_config, train_config.drop_prob, &rng);
            if (batch.total_events() == 0) continue;
            LossOptions opts;
            opts.label_smoothing = train_config.label_smoothing;
            opts.dropout_rate = model_config.dropout_rate;
            opts.dropout_rng = &rng;
            GradResult<float> g = grad(params, batch, opts);
            if (!std::isfinite(g.loss)) {
                diverged = true;
                break;
            }
            epoch_sum += static_cast<double>(g.loss) * static_cast<double>(g.events);
            epoch_events += g.events;
            opt.step(params, g.grads);
        }
        if (diverged) {
            result.diverged = true;  // result.params still holds the last good weights
            break;
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = epoch_events ? epoch_sum / static_cast<double>(epoch_events) : 0.0;
        const double val_loss = static_cast<double>(
            corpus_loss(params, mode, val_docs, train_config.batch_size).mean());
        stats.val_loss = val_loss;
        stats.val_perplexity = std::exp(val_loss);
        stats.learning_rate = opt.learning_rate(opt.steps_taken());
        const bool stop = std::isfinite(val_loss) ? stopper.observe(val_loss) : true;
        stats.new_best = stopper.improved_last();
        result.history.push_back(stats);
        result.epochs_run = epoch;
        if (stats.new_best) {
            result.params = params;
            result.best_epoch = epoch;
            result.best_val_loss = val_loss;
        }
        if (on_epoch) on_epoch(stats);
        if (train_config.target_train_loss > 0.0 &&
            stats.train_loss <= train_config.target_train_loss) {
            result.params = params;
            result.best_epoch = epoch;
            result.best_val_loss = val_loss;
            break;
        }
        if (stop) break;
    }
    return result;
}

}  // namespace seq2bf
