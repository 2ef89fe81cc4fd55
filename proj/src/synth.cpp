#include "seq2bf/synth.hpp"

#include <random>
#include <sstream>

#include "seq2bf/errors.hpp"
#include "seq2bf/rng.hpp"

namespace seq2bf {

namespace {

const char* kSubjects[] = {"mayor",  "council", "minister", "union",   "board",
                           "court",  "museum",  "startup",  "clinic",  "festival",
                           "league", "airline", "senate",   "village", "institute"};
const char* kVerbs[] = {"approves", "rejects", "delays",  "expands", "announces",
                        "opens",    "closes",  "reviews", "funds",   "halts",
                        "backs",    "probes",  "unveils", "defends", "scraps"};
const char* kObjects[] = {"budget", "strike",  "merger", "reform",   "exhibit",
                          "tunnel", "park",    "survey", "contract", "levy",
                          "bridge", "curfew",  "garden", "pipeline", "charter"};
const char* kTails[] = {"after vote",     "in spring",    "amid protest", "this week",
                        "despite doubts", "next year",    "at dawn",      "under review",
                        "for now",        "without delay"};
// headline-only words, never written into articles
const char* kDecorations[] = {"reportedly", "quietly", "finally", "suddenly",
                              "allegedly",  "again",   "soon",    "abruptly"};

template <typename T, std::size_t N>
const T& pick(const T (&pool)[N], Rng& rng) {
    return pool[std::uniform_int_distribution<std::size_t>(0, N - 1)(rng)];
}

std::vector<std::string> split_on_spaces(const std::string& text) {
    std::vector<std::string> words;
    std::istringstream in(text);
    std::string w;
    while (in >> w) words.push_back(w);
    return words;
}

std::string join(const std::vector<std::string>& words, std::size_t begin, std::size_t end) {
    std::string out;
    for (std::size_t i = begin; i < end; ++i) {
        if (i > begin) out += ' ';
        out += words[i];
    }
    return out;
}

}  // namespace

void SynthConfig::validate() const {
    if (examples < 1) throw ConfigError("synth: examples must be >= 1");
    if (phrases_per_example < 0) throw ConfigError("synth: phrases_per_example must be >= 0");
    if (decoration_prob < 0.0 || decoration_prob > 1.0) {
        throw ConfigError("synth: decoration_prob must lie in [0,1]");
    }
    if (min_phrase_words < 1 || max_phrase_words < min_phrase_words) {
        throw ConfigError("synth: bad phrase word range");
    }
}

std::vector<RawExample> synth_corpus(const SynthConfig& config) {
    config.validate();
    Rng rng = make_rng(config.seed, /*stream=*/0x5711U);
    std::bernoulli_distribution decorate(config.decoration_prob);
    std::bernoulli_distribution coin(0.5);

    std::vector<RawExample> out;
    out.reserve(static_cast<std::size_t>(config.examples) *
                std::max(1, config.phrases_per_example));
    for (int i = 0; i < config.examples; ++i) {
        const std::string subject = pick(kSubjects, rng);
        const std::string verb = pick(kVerbs, rng);
        const std::string object = pick(kObjects, rng);
        const std::string tail = pick(kTails, rng);

        std::string headline = subject + " " + verb + " " + object + " " + tail;
        if (decorate(rng)) {
            const std::string extra = pick(kDecorations, rng);
            // in front of the verb or appended, so grounded spans stay intact
            headline = coin(rng) ? subject + " " + extra + " " + verb + " " + object + " " + tail
                                 : headline + " " + extra;
        }

        std::string article = "the " + subject + " " + verb + " the " + object + " " + tail +
                              " . officials described the " + object + " plan in detail . " +
                              "residents discussed the " + subject + " decision " +
                              pick(kTails, rng) + " .";

        const std::vector<std::string> words = split_on_spaces(headline);
        const int copies = std::max(1, config.phrases_per_example);
        for (int k = 0; k < copies; ++k) {
            RawExample ex;
            ex.article = article;
            ex.headline = headline;
            if (config.phrases_per_example > 0) {
                std::uniform_int_distribution<int> len_dist(
                    config.min_phrase_words,
                    std::min<int>(config.max_phrase_words, static_cast<int>(words.size())));
                const int len = len_dist(rng);
                std::uniform_int_distribution<std::size_t> start_dist(0, words.size() - len);
                const std::size_t start = start_dist(rng);
                ex.phrase = join(words, start, start + len);
            }
            out.push_back(std::move(ex));
        }
    }
    return out;
}

}  // namespace seq2bf
