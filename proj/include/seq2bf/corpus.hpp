#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "seq2bf/rng.hpp"

namespace seq2bf {

// One corpus line before tokenization. If `phrase` is empty a span is
// sampled from the headline when documents are built.
struct RawExample {
    std::string article;
    std::string headline;
    std::optional<std::string> phrase;
};

struct SpecialIds {
    static constexpr int pad = 0;
    static constexpr int unk = 1;
    static constexpr int boh = 2;  // backward-end marker
    static constexpr int eoh = 3;  // forward-end marker
    static constexpr int sep = 4;  // control token separating phrase and article

    static constexpr int count = 5;
    static bool is_special(int id) { return id >= 0 && id < count; }
};

// Byte-pair model with a shared source/target vocabulary. Merge order is
// significant: encode replays merges exactly as learned.
class BpeModel {
public:
    BpeModel() = default;
    BpeModel(std::vector<std::pair<std::string, std::string>> merges,
             std::vector<std::string> vocab, SpecialIds specials);

    std::vector<int> encode(const std::string& text) const;
    std::string decode(const std::vector<int>& ids) const;

    int id_of(const std::string& token) const;  // -1 when absent
    const std::string& token_of(int id) const;  // throws DataError on bad id

    int vocab_size() const { return static_cast<int>(vocab_.size()); }
    const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }
    const std::vector<std::string>& vocab() const { return vocab_; }
    const SpecialIds& specials() const { return specials_; }

    // FNV-1a over the vocab; stored in checkpoints so `generate` can refuse
    // a checkpoint built against a different vocabulary.
    std::uint64_t vocab_hash() const;

    void save(const std::string& path) const;
    static BpeModel load(const std::string& path);

private:
    std::vector<std::pair<std::string, std::string>> merges_;
    std::vector<std::string> vocab_;
    std::unordered_map<std::string, int> token_to_id_;
    SpecialIds specials_;
};

// Learns up to `num_merges` merges from whitespace-delimited words.
// Stops early once no pair occurs at least twice; count ties break
// lexicographically so training is deterministic. `max_vocab`, when
// positive, truncates the merge list until the vocabulary fits.
BpeModel train_bpe(const std::vector<std::string>& corpus, int num_merges, int max_vocab = 0);

// Half-open token range [begin, end) into a headline.
struct PhraseSpan {
    int begin = 0;
    int end = 0;
    int length() const { return end - begin; }
};

// Tokenized article/headline pair with the mandatory phrase located
// inside the headline.
struct Document {
    std::vector<int> article_ids;
    std::vector<int> headline_ids;
    PhraseSpan phrase_span;

    int backward_len() const { return phrase_span.begin; }
    int phrase_len() const { return phrase_span.length(); }
    int forward_len() const { return static_cast<int>(headline_ids.size()) - phrase_span.end; }

    std::vector<int> phrase_ids() const {
        return {headline_ids.begin() + phrase_span.begin, headline_ids.begin() + phrase_span.end};
    }
};

// Uniform span length in [min_len, min(max_len, len)], then uniform start.
PhraseSpan sample_phrase(int headline_len, Rng& rng, int min_len = 1, int max_len = 4);

struct SplitRatios {
    double train = 0.98;
    double val = 0.01;
    double test = 0.01;
};

struct CorpusSplit {
    std::vector<RawExample> train;
    std::vector<RawExample> val;
    std::vector<RawExample> test;
};

// Deterministic shuffle + partition. Every partition receives at least one
// example; throws ConfigError when that is impossible.
CorpusSplit split_corpus(std::vector<RawExample> examples, SplitRatios ratios,
                         std::uint64_t seed);

// JSONL I/O: one {"article","headline"[,"phrase"]} object per line.
std::vector<RawExample> read_jsonl(const std::string& path);
void write_jsonl(const std::string& path, const std::vector<RawExample>& examples);

// Tokenizes examples. A supplied phrase string is located as a token span in
// the headline (DataError if it cannot be aligned); a missing phrase is
// sampled with `rng`.
std::vector<Document> make_documents(const std::vector<RawExample>& examples,
                                     const BpeModel& bpe, Rng& rng,
                                     int phrase_min_len = 1, int phrase_max_len = 4);

// Locates `needle` as a contiguous subsequence of `haystack`; -1 if absent.
int find_subsequence(const std::vector<int>& haystack, const std::vector<int>& needle);

}  // namespace seq2bf
