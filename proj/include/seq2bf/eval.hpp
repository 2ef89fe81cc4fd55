#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

namespace seq2bf {

using Tokens = std::vector<std::string>;

struct RougeScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Clipped n-gram overlap of one reference/hypothesis pair.
RougeScore rouge_n(const Tokens& reference, const Tokens& hypothesis, int n);
// Longest-common-subsequence variant.
RougeScore rouge_l(const Tokens& reference, const Tokens& hypothesis);

struct EvalPair {
    Tokens reference;
    Tokens hypothesis;
    Tokens phrase;
};

// Share of hypotheses containing the phrase as a contiguous run.
double success_rate(const std::vector<EvalPair>& pairs);
// Mean (hypothesis length - reference length).
double average_length_difference(const std::vector<EvalPair>& pairs);
// Relative position of the phrase inside each hypothesis, bucketed into
// n_bins. Pairs whose hypothesis misses the phrase are skipped (counted via
// `skipped` when given).
std::vector<int> phrase_position_histogram(const std::vector<EvalPair>& pairs, int n_bins,
                                           int* skipped = nullptr);

struct EvalReport {
    RougeScore rouge1, rouge2, rouge_lcs;
    // same metrics with the first phrase occurrence removed from both sides;
    // shows how much score the phrase alone contributes
    RougeScore rouge1_stripped, rouge2_stripped, rouge_lcs_stripped;
    double success = 0.0;
    double length_diff = 0.0;
    std::size_t pairs = 0;
};

// Macro average: per-pair scores first, then the mean.
EvalReport evaluate_pairs(const std::vector<EvalPair>& pairs);

// One row per system; ROUGE and success rate scaled by 100 with one decimal,
// length difference signed with one decimal.
std::string format_table(const std::vector<std::pair<std::string, EvalReport>>& rows);

}  // namespace seq2bf
