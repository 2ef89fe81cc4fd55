#include "seq2bf/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <vector>

#include "doctest.h"
#include "seq2bf/checkpoint.hpp"
#include "seq2bf/errors.hpp"

using namespace seq2bf;

namespace {

ModelConfig tiny_config(int vocab = 20) {
    ModelConfig c;
    c.d_model = 16;
    c.n_heads = 2;
    c.n_enc_layers = 1;
    c.n_dec_layers = 1;
    c.d_ff = 32;
    c.vocab_size = vocab;
    c.dropout_rate = 0.0;
    c.max_article_len = 12;
    c.max_side_len = 8;
    return c;
}

Document make_doc(std::vector<int> article, std::vector<int> headline, int begin, int end) {
    Document doc;
    doc.article_ids = std::move(article);
    doc.headline_ids = std::move(headline);
    doc.phrase_span = {begin, end};
    return doc;
}

// a tiny deterministic corpus over ids 5..14
std::vector<Document> toy_docs(int n) {
    std::vector<Document> docs;
    for (int i = 0; i < n; ++i) {
        const int a = 5 + i % 5, b = 6 + i % 4, c = 7 + i % 3;
        docs.push_back(make_doc({a, b, c}, {b, c, a, b}, 1, 2));
    }
    return docs;
}

}  // namespace

TEST_CASE("training mode names and strategy mapping") {
    for (TrainingMode m : {TrainingMode::SeqB, TrainingMode::SeqF, TrainingMode::TokB,
                           TrainingMode::TokF, TrainingMode::L2RVanilla,
                           TrainingMode::L2RControl}) {
        CHECK(training_mode_from_name(training_mode_name(m)) == m);
    }
    CHECK(is_seq2bf(TrainingMode::TokF));
    CHECK_FALSE(is_seq2bf(TrainingMode::L2RVanilla));
    CHECK(strategy_of(TrainingMode::SeqF) == Strategy::SeqF);
    CHECK_THROWS_AS(strategy_of(TrainingMode::L2RControl), ConstraintError);
    CHECK_THROWS_AS(training_mode_from_name("greedy"), ConfigError);
}

TEST_CASE("train config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.patience = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.lr_scale = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.beta2 = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.drop_prob = 1.5;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig{};
    c.label_smoothing = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("early stopper: patience-3 minimum checkpoint behavior") {
    // worked trace: [10, 9, 9.5, 9.4, 9.6] stops after epoch 5, best is epoch 2
    EarlyStopper stop(3);
    CHECK_FALSE(stop.observe(10.0));
    CHECK(stop.improved_last());
    CHECK_FALSE(stop.observe(9.0));
    CHECK(stop.improved_last());
    CHECK_FALSE(stop.observe(9.5));
    CHECK_FALSE(stop.improved_last());
    CHECK_FALSE(stop.observe(9.4));  // better than 9.5, but not a new minimum
    CHECK_FALSE(stop.improved_last());
    CHECK(stop.observe(9.6));
    CHECK(stop.best_epoch() == 2);
    CHECK(stop.best_value() == 9.0);
}

TEST_CASE("early stopper: plateaus count against patience") {
    EarlyStopper stop(3);
    CHECK_FALSE(stop.observe(5.0));
    CHECK_FALSE(stop.observe(5.0));
    CHECK_FALSE(stop.observe(5.0));
    CHECK(stop.observe(5.0));  // three non-improving epochs in a row
    CHECK(stop.best_epoch() == 1);

    // a new minimum resets the counter
    EarlyStopper reset(2);
    CHECK_FALSE(reset.observe(5.0));
    CHECK_FALSE(reset.observe(5.0));
    CHECK_FALSE(reset.observe(4.0));
    CHECK_FALSE(reset.observe(4.5));
    CHECK(reset.observe(4.5));
    CHECK(reset.best_epoch() == 3);
}

TEST_CASE("adam learning rate follows inverse-sqrt warmup") {
    TrainConfig tc;
    tc.lr_scale = 2.0;
    tc.warmup_steps = 100;
    const auto mc = tiny_config();  // d_model 16
    AdamOptimizer opt(tc, mc);

    // linear ramp below warmup, inverse square root beyond
    CHECK(opt.learning_rate(50) == doctest::Approx(2.0 * 0.25 * 50.0 * std::pow(100.0, -1.5))
                                       .epsilon(1e-12));
    CHECK(opt.learning_rate(100) == doctest::Approx(2.0 * 0.25 / 10.0).epsilon(1e-12));
    CHECK(opt.learning_rate(400) == doctest::Approx(2.0 * 0.25 / 20.0).epsilon(1e-12));
    CHECK(opt.learning_rate(0) == opt.learning_rate(1));
    CHECK(opt.learning_rate(99) < opt.learning_rate(100));
    CHECK(opt.learning_rate(101) < opt.learning_rate(100));
}

TEST_CASE("adam first step moves parameters by roughly the learning rate") {
    TrainConfig tc;
    tc.lr_scale = 1.0;
    tc.warmup_steps = 10;
    const auto mc = tiny_config();
    auto params = ModelParams<float>::zeros(mc);
    AdamOptimizer opt(tc, mc);

    std::vector<Mat<float>> grads;
    for (const auto& t : params.tensors) grads.push_back(Mat<float>::Zero(t.rows(), t.cols()));
    grads[0](0, 0) = 0.5f;
    grads[0](0, 1) = -2.0f;

    opt.step(params, grads);
    CHECK(opt.steps_taken() == 1);
    // bias-corrected first step is -lr * g / (|g| + eps) = -lr * sign(g)
    const float lr = static_cast<float>(opt.learning_rate(1));
    CHECK(params.tensors[0](0, 0) == doctest::Approx(-lr).epsilon(1e-5));
    CHECK(params.tensors[0](0, 1) == doctest::Approx(lr).epsilon(1e-5));
    CHECK(params.tensors[0](1, 0) == 0.0f);  // zero gradient, zero movement

    std::vector<Mat<float>> short_grads(grads.begin(), grads.end() - 1);
    CHECK_THROWS_AS(opt.step(params, short_grads), ConstraintError);
}

TEST_CASE("seq2bf batches carry the schedule verbatim") {
    const auto config = tiny_config();
    Document doc = make_doc({5, 6, 7}, {7, 8, 9, 10, 11}, 2, 3);
    const Batch batch = make_seq2bf_batch({&doc}, Strategy::SeqB, config);
    REQUIRE(batch.examples.size() == 1);
    const auto& ex = batch.examples[0];

    CHECK(ex.slot_ids == doc.headline_ids);
    CHECK(ex.positions == std::vector<int>{-2, -1, 0, 1, 2});
    CHECK(ex.article_pad == std::vector<std::uint8_t>{0, 0, 0});
    REQUIRE(ex.events.size() == 6);

    // seq-b events: y-1, y-2, <boh>, y+1, y+2, <eoh>
    const std::vector<int> want_targets = {8, 7, SpecialIds::boh, 10, 11, SpecialIds::eoh};
    const std::vector<int> want_anchors = {2, 1, 0, 0, 3, 4};
    const std::vector<bool> want_marker = {false, false, true, false, false, true};
    for (size_t k = 0; k < ex.events.size(); ++k) {
        CHECK(ex.events[k].target_id == want_targets[k]);
        CHECK(ex.events[k].anchor_slot == want_anchors[k]);
        CHECK(ex.events[k].marker == want_marker[k]);
    }
    CHECK(ex.events[0].head == Direction::Backward);
    CHECK(ex.events[3].head == Direction::Forward);
    CHECK(batch.total_events() == 6);
    CHECK(batch.skipped == 0);
}

TEST_CASE("oversized sides are skipped, oversized articles clipped") {
    auto config = tiny_config();
    config.max_side_len = 3;
    config.max_article_len = 4;

    std::vector<int> long_headline(12, 6);
    Document wide = make_doc({5}, long_headline, 5, 6);  // backward side 5 > 3
    Document ok = make_doc({5, 6, 7, 8, 9, 10}, {6, 7, 8}, 1, 2);
    const Batch batch = make_seq2bf_batch({&wide, &ok}, Strategy::TokB, config);
    CHECK(batch.skipped == 1);
    CHECK(batch.truncated == 1);
    REQUIRE(batch.examples.size() == 1);
    CHECK(batch.examples[0].article_ids.size() == 4);
    CHECK(batch.examples[0].article_pad.size() == 4);
}

TEST_CASE("left-to-right batches: causal shift with the closing marker") {
    const auto config = tiny_config();
    Document doc = make_doc({5, 6}, {7, 8, 9}, 0, 1);
    const Batch batch = make_l2r_batch({&doc}, config);
    REQUIRE(batch.examples.size() == 1);
    const auto& ex = batch.examples[0];

    CHECK(ex.slot_ids == std::vector<int>{SpecialIds::boh, 7, 8, 9});
    CHECK(ex.positions == std::vector<int>{0, 1, 2, 3});
    CHECK(render_mask(ex.mask) == render_mask(causal_mask(4)));
    REQUIRE(ex.events.size() == 4);
    for (int i = 0; i < 3; ++i) {
        CHECK(ex.events[i].anchor_slot == i);
        CHECK(ex.events[i].target_id == doc.headline_ids[i]);
        CHECK(ex.events[i].head == Direction::Forward);
        CHECK_FALSE(ex.events[i].marker);
    }
    CHECK(ex.events[3].marker);
    CHECK(ex.events[3].target_id == SpecialIds::eoh);
    CHECK(ex.events[3].anchor_slot == 3);
}

TEST_CASE("control-code source is phrase, separator, article") {
    // phrase [6, 7] occurs twice in the article
    Document doc = make_doc({6, 7, 5, 6, 7, 8}, {6, 7, 9}, 0, 2);

    SUBCASE("no dropping without a random source") {
        const auto src = control_code_source(doc, 0.0, nullptr);
        CHECK(src == std::vector<int>{6, 7, SpecialIds::sep, 6, 7, 5, 6, 7, 8});
    }
    SUBCASE("probability one removes every occurrence") {
        Rng rng = make_rng(1);
        const auto src = control_code_source(doc, 1.0, &rng);
        CHECK(src == std::vector<int>{6, 7, SpecialIds::sep, 5, 8});
    }
    SUBCASE("occurrences are dropped atomically, never token by token") {
        Rng rng = make_rng(2);
        for (int trial = 0; trial < 20; ++trial) {
            const auto src = control_code_source(doc, 0.5, &rng);
            // whatever was kept, the phrase prefix and separator lead
            REQUIRE(src.size() >= 3);
            CHECK(src[0] == 6);
            CHECK(src[1] == 7);
            CHECK(src[2] == SpecialIds::sep);
            // the tail is one of the four subset outcomes
            const size_t tail = src.size() - 3;
            CHECK((tail == 2 || tail == 4 || tail == 6));
        }
    }
    SUBCASE("deterministic under a fixed seed") {
        Rng a = make_rng(9), b = make_rng(9);
        CHECK(control_code_source(doc, 0.5, &a) == control_code_source(doc, 0.5, &b));
    }
    SUBCASE("self-overlapping phrases consume matches left to right") {
        Document tricky = make_doc({6, 6, 6}, {6, 6, 9}, 0, 2);
        Rng rng = make_rng(3);
        const auto src = control_code_source(tricky, 1.0, &rng);
        // [6,6] at offset 0 is dropped; the lone trailing 6 stays
        CHECK(src == std::vector<int>{6, 6, SpecialIds::sep, 6});
    }
}

TEST_CASE("make_batch dispatches on mode") {
    const auto config = tiny_config();
    Document doc = make_doc({5, 6, 7}, {7, 8, 9, 10, 11}, 2, 3);
    const Batch via_dispatch = make_batch({&doc}, TrainingMode::TokF, config, 0.0, nullptr);
    const Batch direct = make_seq2bf_batch({&doc}, Strategy::TokF, config);
    REQUIRE(via_dispatch.examples.size() == 1);
    CHECK(via_dispatch.examples[0].positions == direct.examples[0].positions);
    CHECK(via_dispatch.examples[0].events.size() == direct.examples[0].events.size());

    const Batch l2r = make_batch({&doc}, TrainingMode::L2RVanilla, config, 0.0, nullptr);
    CHECK(l2r.examples[0].slot_ids.front() == SpecialIds::boh);
}

TEST_CASE("zero parameters give vocabulary-sized perplexity") {
    const auto config = tiny_config(20);
    const auto params = ModelParams<float>::zeros(config);
    const auto docs = toy_docs(6);
    CHECK(perplexity(params, TrainingMode::SeqB, docs, 4) ==
          doctest::Approx(20.0).epsilon(1e-4));
    CHECK(perplexity(params, TrainingMode::L2RVanilla, docs, 4) ==
          doctest::Approx(20.0).epsilon(1e-4));
}

TEST_CASE("corpus_loss matches a single whole-set batch") {
    const auto config = tiny_config();
    const auto params = ModelParams<float>::init(config, 5);
    const auto docs = toy_docs(5);

    std::vector<const Document*> all;
    for (const auto& d : docs) all.push_back(&d);
    const auto whole = loss_stats(params, make_batch(all, TrainingMode::TokB, config, 0.0,
                                                     nullptr));
    const auto batched = corpus_loss(params, TrainingMode::TokB, docs, 2);
    CHECK(batched.events == whole.events);
    CHECK(batched.sum == doctest::Approx(whole.sum).epsilon(1e-5));
}

TEST_CASE("train runs, improves and is reproducible") {
    const auto config = tiny_config();
    TrainConfig tc;
    tc.batch_size = 4;
    tc.max_epochs = 4;
    tc.patience = 4;
    tc.warmup_steps = 20;
    tc.lr_scale = 1.0;
    tc.seed = 42;

    const auto train_docs = toy_docs(12);
    const auto val_docs = toy_docs(3);

    int callbacks = 0;
    const auto r1 = train(config, tc, TrainingMode::TokB, train_docs, val_docs,
                          [&](const EpochStats&) { ++callbacks; });
    CHECK(callbacks == r1.epochs_run);
    CHECK(r1.epochs_run >= 1);
    CHECK(r1.epochs_run <= tc.max_epochs);
    CHECK(r1.history.size() == static_cast<size_t>(r1.epochs_run));
    CHECK(r1.best_epoch >= 1);
    CHECK(std::isfinite(r1.best_val_loss));
    CHECK_FALSE(r1.diverged);
    // the repeated toy corpus is easy: training loss falls epoch over epoch
    CHECK(r1.history.back().train_loss < r1.history.front().train_loss);

    SUBCASE("same seed, same run") {
        const auto r2 = train(config, tc, TrainingMode::TokB, train_docs, val_docs);
        REQUIRE(r2.history.size() == r1.history.size());
        for (size_t i = 0; i < r1.history.size(); ++i) {
            CHECK(r1.history[i].train_loss == r2.history[i].train_loss);
            CHECK(r1.history[i].val_loss == r2.history[i].val_loss);
        }
        for (size_t i = 0; i < r1.params.tensors.size(); ++i) {
            CHECK(r1.params.tensors[i] == r2.params.tensors[i]);
        }
    }
    SUBCASE("different seed, different trajectory") {
        TrainConfig other = tc;
        other.seed = 43;
        const auto r3 = train(config, other, TrainingMode::TokB, train_docs, val_docs);
        CHECK(r1.history[0].train_loss != r3.history[0].train_loss);
    }
    SUBCASE("empty sets are rejected") {
        CHECK_THROWS_AS(train(config, tc, TrainingMode::TokB, {}, val_docs), DataError);
        CHECK_THROWS_AS(train(config, tc, TrainingMode::TokB, train_docs, {}), DataError);
    }
}

TEST_CASE("a reachable loss target ends training early") {
    const auto config = tiny_config();
    TrainConfig tc;
    tc.batch_size = 4;
    tc.max_epochs = 10;
    tc.target_train_loss = 50.0;  // any first epoch clears this
    tc.seed = 1;
    const auto docs = toy_docs(8);
    const auto result = train(config, tc, TrainingMode::SeqB, docs, docs);
    CHECK(result.epochs_run == 1);
    CHECK(result.best_epoch == 1);
}

TEST_CASE("checkpoints round trip parameters and metadata") {
    const auto config = tiny_config(17);
    const auto params = ModelParams<float>::init(config, 77);
    const std::string path = "/tmp/seq2bf_test_ckpt.bin";

    save_checkpoint(path, params, TrainingMode::TokF, 0xdeadbeefcafef00dULL);
    const auto loaded = load_checkpoint(path);
    CHECK(loaded.meta.format_version == 1);
    CHECK(loaded.meta.mode == TrainingMode::TokF);
    CHECK(loaded.meta.vocab_hash == 0xdeadbeefcafef00dULL);
    CHECK(loaded.meta.config.d_model == config.d_model);
    CHECK(loaded.meta.config.vocab_size == 17);
    CHECK(loaded.meta.config.max_side_len == config.max_side_len);
    REQUIRE(loaded.params.tensors.size() == params.tensors.size());
    for (size_t i = 0; i < params.tensors.size(); ++i) {
        CHECK(loaded.params.names[i] == params.names[i]);
        CHECK(loaded.params.tensors[i] == params.tensors[i]);
    }
    std::remove(path.c_str());
}

TEST_CASE("corrupt checkpoints are refused") {
    const auto config = tiny_config();
    const auto params = ModelParams<float>::init(config, 7);
    const std::string path = "/tmp/seq2bf_test_ckpt_bad.bin";

    SUBCASE("missing file") { CHECK_THROWS_AS(load_checkpoint(path), DataError); }
    SUBCASE("truncated payload") {
        save_checkpoint(path, params, TrainingMode::SeqB, 1);
        std::ifstream in(path, std::ios::binary);
        std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        in.close();
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(all.data(), static_cast<std::streamsize>(all.size() - 64));
        out.close();
        CHECK_THROWS_AS(load_checkpoint(path), DataError);
    }
    SUBCASE("trailing data") {
        save_checkpoint(path, params, TrainingMode::SeqB, 1);
        std::ofstream out(path, std::ios::binary | std::ios::app);
        out << "x";
        out.close();
        CHECK_THROWS_AS(load_checkpoint(path), DataError);
    }
    SUBCASE("garbage header") {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << "not json\n";
        out.close();
        CHECK_THROWS_AS(load_checkpoint(path), DataError);
    }
    std::remove(path.c_str());
}
