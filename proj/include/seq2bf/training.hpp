#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "seq2bf/corpus.hpp"
#include "seq2bf/model.hpp"

namespace seq2bf {

// Four phrase-outward decoders plus the two left-to-right baselines.
enum class TrainingMode { SeqB, SeqF, TokB, TokF, L2RVanilla, L2RControl };

const char* training_mode_name(TrainingMode mode);
TrainingMode training_mode_from_name(const std::string& name);
bool is_seq2bf(TrainingMode mode);
Strategy strategy_of(TrainingMode mode);  // seq2bf modes only

struct TrainConfig {
    int batch_size = 16;
    int max_epochs = 30;
    int patience = 3;
    double lr_scale = 1.0;
    int warmup_steps = 400;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double adam_eps = 1e-9;
    double drop_prob = 0.5;  // control-code source: chance to drop a phrase occurrence
    double label_smoothing = 0.0;
    double target_train_loss = 0.0;  // >0: stop once the epoch train loss falls below
    std::uint64_t seed = 1;

    void validate() const;
};

// Stops after `patience` consecutive epochs without a new validation minimum.
class EarlyStopper {
public:
    explicit EarlyStopper(int patience) : patience_(patience) {}

    // Feed one epoch's validation loss; returns true when training should stop.
    bool observe(double value);
    bool improved_last() const { return improved_last_; }
    int best_epoch() const { return best_epoch_; }
    double best_value() const { return best_; }

private:
    int patience_;
    int epoch_ = 0;
    int best_epoch_ = 0;
    int since_best_ = 0;
    bool improved_last_ = false;
    double best_ = std::numeric_limits<double>::infinity();
};

// Adam with the inverse-square-root warmup schedule.
class AdamOptimizer {
public:
    AdamOptimizer(const TrainConfig& config, const ModelConfig& model);

    void step(ModelParams<float>& params, const std::vector<Mat<float>>& grads);
    double learning_rate(std::int64_t step) const;
    std::int64_t steps_taken() const { return t_; }

private:
    double lr_scale_, beta1_, beta2_, eps_, dim_scale_;
    int warmup_;
    std::int64_t t_ = 0;
    std::vector<Mat<float>> m_, v_;
};

// ---- batch construction ----

// Teacher-forced phrase-outward example: every headline token is a decoder
// slot, events (incl. the two end markers) carry anchor slots and targets.
Batch make_seq2bf_batch(const std::vector<const Document*>& docs, Strategy strategy,
                        const ModelConfig& config);

// Left-to-right baseline: decoder is <boh> + headline, causal mask, forward
// head predicts the shifted headline and a closing <eoh>.
Batch make_l2r_batch(const std::vector<const Document*>& docs, const ModelConfig& config);

// Control-code source: phrase <sep> article, with each non-overlapping
// phrase occurrence inside the article dropped with probability drop_prob
// (deterministic copy when drop_prob is 0 or rng is null).
std::vector<int> control_code_source(const Document& doc, double drop_prob, Rng* rng);

// Same decoder as vanilla; only the source changes, per control_code_source.
Batch make_control_code_batch(const std::vector<const Document*>& docs,
                              const ModelConfig& config, double drop_prob, Rng* rng);

// Dispatch on mode (rng only consulted for the control-code source).
Batch make_batch(const std::vector<const Document*>& docs, TrainingMode mode,
                 const ModelConfig& config, double drop_prob, Rng* rng);

// ---- the loop ----

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_perplexity = 0.0;
    double learning_rate = 0.0;
    bool new_best = false;
};

using EpochCallback = std::function<void(const EpochStats&)>;

struct TrainResult {
    ModelParams<float> params;  // best validation checkpoint
    std::vector<EpochStats> history;
    int best_epoch = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    int epochs_run = 0;
    bool diverged = false;
};

TrainResult train(const ModelConfig& model_config, const TrainConfig& train_config,
                  TrainingMode mode, const std::vector<Document>& train_docs,
                  const std::vector<Document>& val_docs, const EpochCallback& on_epoch = {});

// Mean event cross entropy and its exp over a document set (no dropout, no
// stochastic source edits).
LossStats<float> corpus_loss(const ModelParams<float>& params, TrainingMode mode,
                             const std::vector<Document>& docs, int batch_size,
                             double label_smoothing = 0.0);
double perplexity(const ModelParams<float>& params, TrainingMode mode,
                  const std::vector<Document>& docs, int batch_size);

}  // namespace seq2bf
