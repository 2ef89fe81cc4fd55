#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "seq2bf/checkpoint.hpp"
#include "seq2bf/config.hpp"
#include "seq2bf/corpus.hpp"
#include "seq2bf/decoding.hpp"
#include "seq2bf/errors.hpp"
#include "seq2bf/eval.hpp"
#include "seq2bf/schedule.hpp"
#include "seq2bf/synth.hpp"
#include "seq2bf/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace seq2bf;

namespace {

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::istringstream in(text);
    std::string w;
    while (in >> w) words.push_back(w);
    return words;
}

// phrase span rendered as text; boundary space tokens are trimmed so the
// string re-encodes to a clean token run
std::string phrase_string(const BpeModel& bpe, const Document& doc) {
    int b = doc.phrase_span.begin, e = doc.phrase_span.end;
    const int space = bpe.id_of(" ");
    while (b < e && doc.headline_ids[b] == space) ++b;
    while (e > b && doc.headline_ids[e - 1] == space) --e;
    if (b >= e) {  // span was nothing but separators: take the first word token
        b = 0;
        e = static_cast<int>(doc.headline_ids.size());
        while (b < e && doc.headline_ids[b] == space) ++b;
        e = b + 1;
    }
    return bpe.decode({doc.headline_ids.begin() + b, doc.headline_ids.begin() + e});
}

struct TrainFlags {
    std::string data_path;
    std::string run_dir;
    std::string config_path;
    std::map<std::string, std::string> staged;
    std::map<std::string, CLI::Option*> staged_opts;
};

RunConfig resolve_config(const TrainFlags& flags) {
    RunConfig config;
    if (!flags.config_path.empty()) apply_config_file(config, flags.config_path);
    for (const auto& [key, opt] : flags.staged_opts) {
        if (opt->count() > 0) apply_override(config, key, flags.staged.at(key));
    }
    return config;
}

int run_synth(const std::string& out_path, const SynthConfig& config) {
    write_jsonl(out_path, synth_corpus(config));
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

int run_train(const TrainFlags& flags) {
    RunConfig config = resolve_config(flags);
    const TrainingMode mode = training_mode_from_name(config.mode);

    fs::create_directories(flags.run_dir);
    const fs::path dir(flags.run_dir);

    const std::vector<RawExample> examples = read_jsonl(flags.data_path);
    const CorpusSplit split =
        split_corpus(examples, {config.split_train, config.split_val, config.split_test},
                     config.train.seed);

    std::vector<std::string> bpe_corpus;
    bpe_corpus.reserve(split.train.size() * 2);
    for (const auto& ex : split.train) {
        bpe_corpus.push_back(ex.article);
        bpe_corpus.push_back(ex.headline);
    }
    const BpeModel bpe = train_bpe(bpe_corpus, config.bpe_merges, config.bpe_max_vocab);
    config.model.vocab_size = bpe.vocab_size();

    auto docs_of = [&](const std::vector<RawExample>& part, std::uint64_t stream) {
        Rng rng = make_rng(config.train.seed, stream);
        return make_documents(part, bpe, rng, config.phrase_min_tokens,
                              config.phrase_max_tokens);
    };
    const std::vector<Document> train_docs = docs_of(split.train, 0xD0C0U);
    const std::vector<Document> val_docs = docs_of(split.val, 0xD0C1U);
    const std::vector<Document> test_docs = docs_of(split.test, 0xD0C2U);

    std::ofstream metrics(dir / "metrics.csv");
    std::ofstream log(dir / "train.log");
    if (!metrics || !log) throw DataError("cannot write into run dir: " + flags.run_dir);
    metrics << "epoch,train_loss,val_loss,val_ppl,lr,new_best\n";

    char line[256];
    const EpochCallback on_epoch = [&](const EpochStats& s) {
        std::snprintf(line, sizeof(line), "%d,%.6f,%.6f,%.6f,%.8f,%d\n", s.epoch, s.train_loss,
                      s.val_loss, s.val_perplexity, s.learning_rate, s.new_best ? 1 : 0);
        metrics << line;
        std::snprintf(line, sizeof(line),
                      "epoch %-3d train %.6f  val %.6f  ppl %.3f  lr %.8f%s\n", s.epoch,
                      s.train_loss, s.val_loss, s.val_perplexity, s.learning_rate,
                      s.new_best ? "  *" : "");
        log << line;
        std::cout << line;
    };

    const TrainResult result =
        train(config.model, config.train, mode, train_docs, val_docs, on_epoch);

    if (result.diverged) {
        log << "training diverged; keeping the last improving checkpoint\n";
    }
    std::snprintf(line, sizeof(line), "best epoch %d  val %.6f  (ran %d epochs)\n",
                  result.best_epoch, result.best_val_loss, result.epochs_run);
    log << line;
    std::cout << line;

    write_config(config, (dir / "config.json").string());
    bpe.save((dir / "bpe.json").string());
    save_checkpoint((dir / "best.ckpt").string(), result.params, mode, bpe.vocab_hash());

    std::vector<RawExample> test_out;
    test_out.reserve(test_docs.size());
    for (const auto& doc : test_docs) {
        RawExample ex;
        ex.article = bpe.decode(doc.article_ids);
        ex.headline = bpe.decode(doc.headline_ids);
        ex.phrase = phrase_string(bpe, doc);
        test_out.push_back(std::move(ex));
    }
    write_jsonl((dir / "test.jsonl").string(), test_out);
    return 0;
}

struct GenFlags {
    std::string run_dir;
    std::string data_path;  // defaults to <run_dir>/test.jsonl
    std::string out_path;   // defaults to <run_dir>/generated.jsonl
    int beam = 0;           // 0: use the run config
    double alpha = -1.0;    // <0: use the run config
    int threads = 1;
};

int run_generate(const GenFlags& flags) {
    const fs::path dir(flags.run_dir);
    RunConfig config;
    apply_config_file(config, (dir / "config.json").string());
    const BpeModel bpe = BpeModel::load((dir / "bpe.json").string());
    const LoadedCheckpoint ckpt = load_checkpoint((dir / "best.ckpt").string());
    if (ckpt.meta.vocab_hash != bpe.vocab_hash()) {
        throw DataError("checkpoint was trained against a different vocabulary");
    }
    const TrainingMode mode = ckpt.meta.mode;
    const ModelParams<float>& params = ckpt.params;

    DecodeConfig dc;
    dc.beam_size = flags.beam > 0 ? flags.beam : config.beam_size;
    dc.alpha = flags.alpha >= 0.0 ? flags.alpha : config.alpha;
    if (is_seq2bf(mode)) dc.strategy = strategy_of(mode);

    const std::string data_path =
        flags.data_path.empty() ? (dir / "test.jsonl").string() : flags.data_path;
    const std::vector<RawExample> examples = read_jsonl(data_path);
    Rng rng = make_rng(config.train.seed, 0xD0C2U);
    const std::vector<Document> docs =
        make_documents(examples, bpe, rng, config.phrase_min_tokens, config.phrase_max_tokens);

    struct Record {
        std::string reference, generated, phrase;
        double log_prob = 0.0, score = 0.0;
    };
    std::vector<Record> records(docs.size());

    std::atomic<std::size_t> cursor{0};
    auto worker = [&]() {
        for (std::size_t i; (i = cursor.fetch_add(1)) < docs.size();) {
            const Document& doc = docs[i];
            DecodeResult res;
            if (is_seq2bf(mode)) {
                const auto article = encode_article(params, doc.article_ids);
                res = decode_seq2bf(params, article, doc.phrase_ids(), dc);
            } else if (mode == TrainingMode::L2RVanilla) {
                const auto article = encode_article(params, doc.article_ids);
                res = decode_left_to_right(params, article, dc);
            } else {
                const auto source = control_code_source(doc, 0.0, nullptr);
                const auto article = encode_article(params, source);
                res = decode_left_to_right(params, article, dc);
            }
            Record& r = records[i];
            r.reference = bpe.decode(doc.headline_ids);
            r.generated = bpe.decode(res.ids);
            r.phrase = phrase_string(bpe, doc);
            r.log_prob = res.log_prob;
            r.score = res.score;
        }
    };
    const int threads = std::max(1, flags.threads);
    std::vector<std::thread> pool;
    for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    const std::string out_path =
        flags.out_path.empty() ? (dir / "generated.jsonl").string() : flags.out_path;
    std::ofstream out(out_path);
    if (!out) throw DataError("cannot write: " + out_path);
    for (const auto& r : records) {
        json j{{"reference", r.reference},
               {"generated", r.generated},
               {"phrase", r.phrase},
               {"log_prob", r.log_prob},
               {"score", r.score}};
        out << j.dump() << "\n";
    }
    std::cout << "wrote " << out_path << " (" << records.size() << " headlines, mode "
              << training_mode_name(mode) << ")\n";
    return 0;
}

struct EvalFlags {
    std::string pairs_path;
    std::string out_path;
    std::string name = "system";
    int bins = 10;
};

int run_evaluate(const EvalFlags& flags) {
    std::ifstream in(flags.pairs_path);
    if (!in) throw DataError("cannot read: " + flags.pairs_path);
    std::vector<EvalPair> pairs;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(flags.pairs_path + ":" + std::to_string(line_no) +
                            ": bad json: " + e.what());
        }
        EvalPair p;
        p.reference = split_words(j.at("reference").get<std::string>());
        p.hypothesis = split_words(j.at("generated").get<std::string>());
        if (j.contains("phrase")) p.phrase = split_words(j.at("phrase").get<std::string>());
        pairs.push_back(std::move(p));
    }
    if (pairs.empty()) throw DataError("no pairs in " + flags.pairs_path);

    const EvalReport report = evaluate_pairs(pairs);
    int skipped = 0;
    const std::vector<int> hist = phrase_position_histogram(pairs, flags.bins, &skipped);

    std::cout << format_table({{flags.name, report}});
    std::cout << "phrase-stripped F1  R1 " << 100.0 * report.rouge1_stripped.f1 << "  R2 "
              << 100.0 * report.rouge2_stripped.f1 << "  RL "
              << 100.0 * report.rouge_lcs_stripped.f1 << "\n";
    std::cout << "phrase position histogram (" << flags.bins << " bins):";
    for (int b : hist) std::cout << " " << b;
    std::cout << "  (skipped " << skipped << ")\n";

    if (!flags.out_path.empty()) {
        auto rouge_json = [](const RougeScore& s) {
            return json{{"p", s.precision}, {"r", s.recall}, {"f", s.f1}};
        };
        json j{{"name", flags.name},
               {"pairs", report.pairs},
               {"success_rate", report.success},
               {"length_diff", report.length_diff},
               {"rouge1", rouge_json(report.rouge1)},
               {"rouge2", rouge_json(report.rouge2)},
               {"rougeL", rouge_json(report.rouge_lcs)},
               {"rouge1_stripped", rouge_json(report.rouge1_stripped)},
               {"rouge2_stripped", rouge_json(report.rouge2_stripped)},
               {"rougeL_stripped", rouge_json(report.rouge_lcs_stripped)},
               {"histogram", hist},
               {"histogram_skipped", skipped},
               {"bins", flags.bins}};
        std::ofstream out(flags.out_path);
        if (!out) throw DataError("cannot write: " + flags.out_path);
        out << j.dump(2) << "\n";
    }
    return 0;
}

struct MaskFlags {
    std::string strategy = "seq-b";
    int backward = 2;
    int phrase = 1;
    int forward = 2;
};

int run_inspect_mask(const MaskFlags& flags) {
    const Strategy strategy = strategy_from_name(flags.strategy);
    std::cout << "strategy " << strategy_name(strategy) << "  backward " << flags.backward
              << "  phrase " << flags.phrase << "  forward " << flags.forward << "\n";

    if (strategy == Strategy::LeftToRight) {
        const int n = flags.backward + flags.phrase + flags.forward;
        std::cout << "slots " << n << "  (causal)\n" << render_mask(causal_mask(n));
        return 0;
    }

    const Layout layout = assign_positions(flags.backward, flags.phrase, flags.forward);
    const ResolvedSchedule rs = resolve_schedule(strategy, layout);

    std::cout << "positions:";
    for (int p : layout.positions) std::cout << " " << p;
    std::cout << "\nevents:";
    for (const Event& e : rs.events) {
        if (e.marker) {
            std::cout << (e.direction == Direction::Backward ? " <boh>" : " <eoh>");
        } else {
            std::cout << " y" << (e.side > 0 ? "+" : "") << e.side;
        }
    }
    std::cout << "\nanchors (slots):";
    for (int a : rs.anchors) std::cout << " " << a;
    std::cout << "\nstamps:";
    for (int s : rs.stamps) std::cout << " " << s;
    std::cout << "\n" << render_mask(rs.mask);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"headline generation outward from a mandatory phrase"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "write a synthetic jsonl corpus");
    std::string synth_out;
    SynthConfig synth_config;
    synth->add_option("--out", synth_out, "output jsonl path")->required();
    synth->add_option("--examples", synth_config.examples, "article/headline pairs");
    synth->add_option("--seed", synth_config.seed, "rng seed");
    synth->add_option("--phrases-per-example", synth_config.phrases_per_example,
                      "phrase copies per pair (0: leave phrases unset)");
    synth->add_option("--decoration-prob", synth_config.decoration_prob,
                      "chance of headline-only words");
    synth->add_option("--min-phrase-words", synth_config.min_phrase_words, "");
    synth->add_option("--max-phrase-words", synth_config.max_phrase_words, "");

    // train
    auto* train_cmd = app.add_subcommand("train", "train one model into a run dir");
    TrainFlags train_flags;
    train_cmd->add_option("--data", train_flags.data_path, "jsonl corpus")->required();
    train_cmd->add_option("--run-dir", train_flags.run_dir, "artifact directory")->required();
    train_cmd->add_option("--config", train_flags.config_path, "flat json config file");
    {
        RunConfig probe;
        for (const auto& [key, ref] : config_fields(probe)) {
            train_flags.staged[key];
        }
        for (auto& [key, slot] : train_flags.staged) {
            train_flags.staged_opts[key] =
                train_cmd->add_option("--" + key, slot, "config override");
        }
    }

    // generate
    auto* gen_cmd = app.add_subcommand("generate", "decode headlines with a trained run");
    GenFlags gen_flags;
    gen_cmd->add_option("--run-dir", gen_flags.run_dir, "artifact directory")->required();
    gen_cmd->add_option("--data", gen_flags.data_path, "jsonl input (default: run test split)");
    gen_cmd->add_option("--out", gen_flags.out_path, "output jsonl path");
    gen_cmd->add_option("--beam", gen_flags.beam, "beam size override");
    gen_cmd->add_option("--alpha", gen_flags.alpha, "length normalization override");
    gen_cmd->add_option("--threads", gen_flags.threads, "decode worker threads");

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "score generated headlines");
    EvalFlags eval_flags;
    eval_cmd->add_option("--pairs", eval_flags.pairs_path, "generated jsonl")->required();
    eval_cmd->add_option("--out", eval_flags.out_path, "json report path");
    eval_cmd->add_option("--name", eval_flags.name, "row label");
    eval_cmd->add_option("--bins", eval_flags.bins, "histogram bins");

    // inspect-mask
    auto* mask_cmd = app.add_subcommand("inspect-mask", "print schedule, anchors and mask");
    MaskFlags mask_flags;
    mask_cmd->add_option("--strategy", mask_flags.strategy, "seq-b|seq-f|tok-b|tok-f|l2r");
    mask_cmd->add_option("--backward", mask_flags.backward, "backward length");
    mask_cmd->add_option("--phrase", mask_flags.phrase, "phrase length");
    mask_cmd->add_option("--forward", mask_flags.forward, "forward length");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (synth->parsed()) return run_synth(synth_out, synth_config);
        if (train_cmd->parsed()) return run_train(train_flags);
        if (gen_cmd->parsed()) return run_generate(gen_flags);
        if (eval_cmd->parsed()) return run_evaluate(eval_flags);
        if (mask_cmd->parsed()) return run_inspect_mask(mask_flags);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
