#pragma once

#include <cstdint>
#include <vector>

#include "seq2bf/corpus.hpp"

namespace seq2bf {

// Template-grammar corpus: every headline is grounded in its article, with a
// tunable share of headline-only decoration words so a plain left-to-right
// model cannot trivially reproduce every phrase.
struct SynthConfig {
    int examples = 200;
    std::uint64_t seed = 7;
    int phrases_per_example = 1;   // 0: leave the phrase unset (sampled later)
    double decoration_prob = 0.35;  // chance a headline picks up off-article words
    int min_phrase_words = 1;
    int max_phrase_words = 3;

    void validate() const;
};

std::vector<RawExample> synth_corpus(const SynthConfig& config);

}  // namespace seq2bf
