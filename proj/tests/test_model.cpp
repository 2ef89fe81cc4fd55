#include "seq2bf/model.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "seq2bf/errors.hpp"
#include "seq2bf/training.hpp"

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

// one teacher-forced example: headline 7 8 [9] 10 11, article 5 6 7
Batch fixture_batch(const ModelConfig& config, Strategy strategy = Strategy::SeqB) {
    static Document doc = make_doc({5, 6, 7}, {7, 8, 9, 10, 11}, 2, 3);
    return make_seq2bf_batch({&doc}, strategy, config);
}

}  // namespace

TEST_CASE("model config validation") {
    ModelConfig c = tiny_config();
    CHECK_NOTHROW(c.validate());
    c.vocab_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.n_heads = 3;  // 16 % 3 != 0
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.dropout_rate = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.dropout_rate = -0.1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(tiny_config().head_dim() == 8);
}

TEST_CASE("positional encoding: signed sinusoid") {
    const int d = 8;
    const auto pe3 = positional_encoding<double>(3, d);
    REQUIRE(pe3.size() == d);
    for (int i = 0; 2 * i < d; ++i) {
        const double arg = 3.0 / std::pow(10000.0, 2.0 * i / d);
        CHECK(pe3(2 * i) == doctest::Approx(std::sin(arg)).epsilon(1e-12));
        CHECK(pe3(2 * i + 1) == doctest::Approx(std::cos(arg)).epsilon(1e-12));
    }

    SUBCASE("position zero") {
        const auto pe0 = positional_encoding<double>(0, d);
        for (int i = 0; i < d; i += 2) {
            CHECK(pe0(i) == 0.0);
            CHECK(pe0(i + 1) == 1.0);
        }
    }
    SUBCASE("negative positions flip sin and keep cos") {
        const auto neg = positional_encoding<double>(-3, d);
        for (int i = 0; i < d; i += 2) {
            CHECK(neg(i) == doctest::Approx(-pe3(i)).epsilon(1e-12));
            CHECK(neg(i + 1) == doctest::Approx(pe3(i + 1)).epsilon(1e-12));
        }
        // distinct positions get distinct encodings
        CHECK((positional_encoding<double>(-1, d) - positional_encoding<double>(1, d)).norm() >
              1e-3);
    }
    SUBCASE("odd width keeps the trailing sine") {
        const auto pe = positional_encoding<double>(2, 7);
        REQUIRE(pe.size() == 7);
        CHECK(pe(6) == doctest::Approx(std::sin(2.0 / std::pow(10000.0, 6.0 / 7.0))));
    }
}

TEST_CASE("parameter table: shapes, init and lookup") {
    const auto config = tiny_config();
    const auto p = ModelParams<float>::init(config, 99);

    // 1 embedding + 16 per encoder layer + 26 per decoder layer + 4 head tensors
    CHECK(p.names.size() == 1u + 16u + 26u + 4u);
    CHECK(p.names.front() == "embed");
    CHECK(p.at("embed").rows() == config.vocab_size);
    CHECK(p.at("embed").cols() == config.d_model);
    CHECK(p.at("head.b.w").rows() == config.d_model);
    CHECK(p.at("head.b.w").cols() == config.vocab_size);
    CHECK(p.at("dec0.cross.wq").rows() == config.d_model);
    CHECK(p.at("enc0.ffn.w1").cols() == config.d_ff);

    SUBCASE("norm gains start at one, biases at zero") {
        CHECK((p.at("enc0.ln1.g").array() == 1.0f).all());
        CHECK((p.at("dec0.ln3.g").array() == 1.0f).all());
        CHECK((p.at("enc0.ln1.b").array() == 0.0f).all());
        CHECK((p.at("enc0.attn.bq").array() == 0.0f).all());
        CHECK((p.at("head.f.b").array() == 0.0f).all());
    }
    SUBCASE("matrices stay inside the scaled uniform limit and vary") {
        const auto& w = p.at("enc0.attn.wq");
        const double limit = std::sqrt(6.0 / (w.rows() + w.cols()));
        CHECK(w.cwiseAbs().maxCoeff() <= limit);
        CHECK(w.cwiseAbs().maxCoeff() > 0.0f);
        CHECK((p.at("enc0.attn.wq") - p.at("enc0.attn.wk")).cwiseAbs().maxCoeff() > 0.0f);
    }
    SUBCASE("seeded init is reproducible, different seeds differ") {
        const auto q = ModelParams<float>::init(config, 99);
        const auto r = ModelParams<float>::init(config, 100);
        bool same = true, diff = false;
        for (size_t i = 0; i < p.tensors.size(); ++i) {
            same = same && p.tensors[i] == q.tensors[i];
            diff = diff || p.tensors[i] != r.tensors[i];
        }
        CHECK(same);
        CHECK(diff);
    }
    SUBCASE("unknown tensors are rejected") {
        CHECK_THROWS_AS(p.at("enc9.attn.wq"), ConstraintError);
    }
    SUBCASE("cast round trip is exact") {
        const auto d = p.cast<double>();
        const auto back = d.cast<float>();
        for (size_t i = 0; i < p.tensors.size(); ++i) {
            CHECK(p.tensors[i] == back.tensors[i]);
        }
    }
}

TEST_CASE("zero parameters cost exactly ln V per event") {
    const auto config = tiny_config(13);
    const auto params = ModelParams<double>::zeros(config);
    const auto batch = fixture_batch(config);
    REQUIRE(batch.examples.size() == 1);
    const auto stats = loss_stats(params, batch);
    CHECK(stats.events == batch.total_events());
    CHECK(stats.mean() == doctest::Approx(std::log(13.0)).epsilon(1e-12));
}

TEST_CASE("batch loss is the event-weighted mean of example losses") {
    const auto config = tiny_config();
    const auto params = ModelParams<double>::init(config, 3);

    Document a = make_doc({5, 6, 7}, {7, 8, 9, 10, 11}, 2, 3);
    Document b = make_doc({8, 9}, {12, 13, 14}, 0, 2);
    const Batch both = make_seq2bf_batch({&a, &b}, Strategy::TokB, config);
    const Batch only_a = make_seq2bf_batch({&a}, Strategy::TokB, config);
    const Batch only_b = make_seq2bf_batch({&b}, Strategy::TokB, config);

    const auto sa = loss_stats(params, only_a);
    const auto sb = loss_stats(params, only_b);
    const auto sab = loss_stats(params, both);
    CHECK(sab.events == sa.events + sb.events);
    CHECK(sab.sum == doctest::Approx(sa.sum + sb.sum).epsilon(1e-12));
    CHECK(loss(params, both) ==
          doctest::Approx((sa.sum + sb.sum) / double(sa.events + sb.events)).epsilon(1e-12));
}

TEST_CASE("an empty batch yields zero loss and zero gradients") {
    const auto config = tiny_config();
    const auto params = ModelParams<double>::init(config, 3);
    Batch batch;
    const auto g = grad(params, batch);
    CHECK(g.loss == 0.0);
    CHECK(g.events == 0);
    REQUIRE(g.grads.size() == params.tensors.size());
    for (const auto& m : g.grads) CHECK(m.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("perturbing a hidden slot leaves unsighted rows bit-identical") {
    const auto config = tiny_config();
    const auto params = ModelParams<double>::init(config, 17);
    for (Strategy s : {Strategy::SeqB, Strategy::TokF}) {
        Batch batch = fixture_batch(config, s);
        auto& ex = batch.examples[0];
        const auto layout = assign_positions(2, 1, 2);
        const auto rs = resolve_schedule(s, layout);
        const Mat<double> memory = encoder_forward(params, ex.article_ids, ex.article_pad);
        const Mat<double> base = decoder_forward(params, ex.slot_ids, ex.positions, ex.mask,
                                                 memory, ex.article_pad);
        for (int q = 0; q < layout.total(); ++q) {
            auto ids = ex.slot_ids;
            ids[q] = ids[q] == 5 ? 6 : 5;
            const Mat<double> bumped =
                decoder_forward(params, ids, ex.positions, ex.mask, memory, ex.article_pad);
            for (int p = 0; p < layout.total(); ++p) {
                if (rs.stamps[q] <= rs.stamps[p]) continue;  // p may legitimately see q
                INFO("strategy ", strategy_name(s), " slot ", p, " vs perturbed ", q);
                CHECK((bumped.row(p) - base.row(p)).cwiseAbs().maxCoeff() == 0.0);
            }
        }
    }
}

TEST_CASE("padded article ids never reach the decoder") {
    const auto config = tiny_config();
    const auto params = ModelParams<double>::init(config, 7);
    const Batch batch = fixture_batch(config);
    const auto& ex = batch.examples[0];

    std::vector<int> padded_ids = {5, 6, 7, 0, 0};
    std::vector<std::uint8_t> pad = {0, 0, 0, 1, 1};
    const Mat<double> mem1 = encoder_forward(params, padded_ids, pad);
    std::vector<int> junk_ids = {5, 6, 7, 9, 11};
    const Mat<double> mem2 = encoder_forward(params, junk_ids, pad);

    // non-pad encoder rows are untouched by what sits under the padding
    for (int r = 0; r < 3; ++r) {
        CHECK((mem1.row(r) - mem2.row(r)).cwiseAbs().maxCoeff() == 0.0);
    }
    const Mat<double> out1 =
        decoder_forward(params, ex.slot_ids, ex.positions, ex.mask, mem1, pad);
    const Mat<double> out2 =
        decoder_forward(params, ex.slot_ids, ex.positions, ex.mask, mem2, pad);
    CHECK((out1 - out2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("encoder truncates overlong articles") {
    auto config = tiny_config();
    config.max_article_len = 4;
    const auto params = ModelParams<double>::init(config, 7);
    std::vector<int> ids(9, 5);
    std::vector<std::uint8_t> pad(9, 0);
    const auto memory = encoder_forward(params, ids, pad);
    CHECK(memory.rows() == 4);
}

TEST_CASE("analytic gradients match central differences") {
    const auto config = tiny_config();
    auto params = ModelParams<double>::init(config, 23);
    Document a = make_doc({5, 6, 7, 8}, {7, 8, 9, 10, 11}, 2, 3);
    Document b = make_doc({9, 10}, {12, 13, 14, 15}, 1, 3);
    const Batch batch = make_seq2bf_batch({&a, &b}, Strategy::TokB, config);

    for (double smoothing : {0.0, 0.1}) {
        LossOptions opts;
        opts.label_smoothing = smoothing;
        const auto analytic = grad(params, batch, opts);
        REQUIRE(analytic.events > 0);

        Rng rng = make_rng(31, static_cast<std::uint64_t>(smoothing * 10));
        std::uniform_int_distribution<size_t> pick_tensor(0, params.tensors.size() - 1);
        const double h = 1e-6;
        const int coords = smoothing == 0.0 ? 40 : 12;
        for (int k = 0; k < coords; ++k) {
            const size_t ti = pick_tensor(rng);
            auto& t = params.tensors[ti];
            const int r = std::uniform_int_distribution<int>(0, t.rows() - 1)(rng);
            const int c = std::uniform_int_distribution<int>(0, t.cols() - 1)(rng);

            const double keep = t(r, c);
            t(r, c) = keep + h;
            const double up = loss(params, batch, opts);
            t(r, c) = keep - h;
            const double down = loss(params, batch, opts);
            t(r, c) = keep;

            const double fd = (up - down) / (2 * h);
            const double an = analytic.grads[ti](r, c);
            const double denom = std::max({std::abs(an), std::abs(fd), 0.01});
            INFO("tensor ", params.names[ti], " (", r, ",", c, "): analytic ", an, " fd ", fd);
            CHECK(std::abs(an - fd) / denom < 1e-4);
        }
    }
}

TEST_CASE("generation heads are separate affine maps") {
    const auto config = tiny_config();
    const auto params = ModelParams<double>::init(config, 5);
    Eigen::Matrix<double, 1, Eigen::Dynamic> hidden(config.d_model);
    for (int i = 0; i < config.d_model; ++i) hidden(i) = 0.1 * (i + 1);

    const auto back = head_logits(params, Direction::Backward, hidden);
    const auto fwd = head_logits(params, Direction::Forward, hidden);
    const Mat<double> manual =
        hidden * params.at("head.b.w") + params.at("head.b.b");
    CHECK((back - manual.row(0)).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((back - fwd).cwiseAbs().maxCoeff() > 1e-6);  // untied by initialization
}

TEST_CASE("graph input validation") {
    const auto config = tiny_config();
    const auto params = ModelParams<double>::init(config, 5);

    CHECK_THROWS_AS(encoder_forward(params, {}, {}), ConstraintError);
    CHECK_THROWS_AS(encoder_forward(params, {5, 6}, {0}), ConstraintError);

    const Mat<double> memory = encoder_forward(params, {5, 6}, {0, 0});
    const auto mask = causal_mask(2);
    CHECK_THROWS_AS(decoder_forward(params, {5, 6, 7}, {0, 1, 2}, mask, memory, {0, 0}),
                    ConstraintError);
    CHECK_THROWS_AS(decoder_forward(params, {5, 6}, {0, 1}, mask, memory, {0}),
                    ConstraintError);
    CHECK_NOTHROW(decoder_forward(params, {5, 6}, {0, 1}, mask, memory, {0, 0}));

    Tape<double> tape;
    CHECK_THROWS_AS(ModelGraph<double>(tape, params, 0.5, nullptr), ConfigError);
}
