#include "seq2bf/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <map>

#include "seq2bf/errors.hpp"

namespace seq2bf {

namespace {

double f_measure(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

std::map<Tokens, int> ngram_counts(const Tokens& tokens, int n) {
    std::map<Tokens, int> counts;
    if (static_cast<int>(tokens.size()) >= n) {
        for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
            ++counts[Tokens(tokens.begin() + i, tokens.begin() + i + n)];
        }
    }
    return counts;
}

// first index of `needle` as a contiguous run inside `hay`, or -1
int find_run(const Tokens& hay, const Tokens& needle) {
    if (needle.empty() || needle.size() > hay.size()) return -1;
    for (std::size_t i = 0; i + needle.size() <= hay.size(); ++i) {
        if (std::equal(needle.begin(), needle.end(), hay.begin() + i)) {
            return static_cast<int>(i);
        }
    }
    return -1;
}

Tokens strip_first_run(const Tokens& tokens, const Tokens& run) {
    const int at = find_run(tokens, run);
    if (at < 0) return tokens;
    Tokens out(tokens.begin(), tokens.begin() + at);
    out.insert(out.end(), tokens.begin() + at + run.size(), tokens.end());
    return out;
}

}  // namespace

RougeScore rouge_n(const Tokens& reference, const Tokens& hypothesis, int n) {
    if (n < 1) throw ConfigError("rouge_n: n must be >= 1");
    const auto ref = ngram_counts(reference, n);
    const auto hyp = ngram_counts(hypothesis, n);
    long long ref_total = 0, hyp_total = 0, overlap = 0;
    for (const auto& [g, c] : ref) ref_total += c;
    for (const auto& [g, c] : hyp) {
        hyp_total += c;
        auto it = ref.find(g);
        if (it != ref.end()) overlap += std::min(c, it->second);
    }
    RougeScore s;
    s.precision = hyp_total ? static_cast<double>(overlap) / hyp_total : 0.0;
    s.recall = ref_total ? static_cast<double>(overlap) / ref_total : 0.0;
    s.f1 = f_measure(s.precision, s.recall);
    return s;
}

RougeScore rouge_l(const Tokens& reference, const Tokens& hypothesis) {
    const std::size_t nr = reference.size(), nh = hypothesis.size();
    std::vector<std::vector<int>> lcs(nr + 1, std::vector<int>(nh + 1, 0));
    for (std::size_t i = 1; i <= nr; ++i) {
        for (std::size_t j = 1; j <= nh; ++j) {
            lcs[i][j] = reference[i - 1] == hypothesis[j - 1]
                            ? lcs[i - 1][j - 1] + 1
                            : std::max(lcs[i - 1][j], lcs[i][j - 1]);
        }
    }
    const int common = lcs[nr][nh];
    RougeScore s;
    s.precision = nh ? static_cast<double>(common) / nh : 0.0;
    s.recall = nr ? static_cast<double>(common) / nr : 0.0;
    s.f1 = f_measure(s.precision, s.recall);
    return s;
}

double success_rate(const std::vector<EvalPair>& pairs) {
    if (pairs.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& p : pairs) {
        if (find_run(p.hypothesis, p.phrase) >= 0) ++hits;
    }
    return static_cast<double>(hits) / pairs.size();
}

double average_length_difference(const std::vector<EvalPair>& pairs) {
    if (pairs.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& p : pairs) {
        sum += static_cast<double>(p.hypothesis.size()) - static_cast<double>(p.reference.size());
    }
    return sum / pairs.size();
}

std::vector<int> phrase_position_histogram(const std::vector<EvalPair>& pairs, int n_bins,
                                           int* skipped) {
    if (n_bins < 1) throw ConfigError("histogram: n_bins must be >= 1");
    std::vector<int> bins(n_bins, 0);
    int missed = 0;
    for (const auto& p : pairs) {
        const int at = find_run(p.hypothesis, p.phrase);
        if (at < 0 || p.hypothesis.empty()) {
            ++missed;
            continue;
        }
        int b = static_cast<int>(static_cast<long long>(n_bins) * at /
                                 static_cast<long long>(p.hypothesis.size()));
        b = std::clamp(b, 0, n_bins - 1);
        ++bins[b];
    }
    if (skipped) *skipped = missed;
    return bins;
}

EvalReport evaluate_pairs(const std::vector<EvalPair>& pairs) {
    EvalReport r;
    r.pairs = pairs.size();
    if (pairs.empty()) return r;
    auto acc = [](RougeScore& into, const RougeScore& s) {
        into.precision += s.precision;
        into.recall += s.recall;
        into.f1 += s.f1;
    };
    for (const auto& p : pairs) {
        acc(r.rouge1, rouge_n(p.reference, p.hypothesis, 1));
        acc(r.rouge2, rouge_n(p.reference, p.hypothesis, 2));
        acc(r.rouge_lcs, rouge_l(p.reference, p.hypothesis));
        const Tokens sref = strip_first_run(p.reference, p.phrase);
        const Tokens shyp = strip_first_run(p.hypothesis, p.phrase);
        acc(r.rouge1_stripped, rouge_n(sref, shyp, 1));
        acc(r.rouge2_stripped, rouge_n(sref, shyp, 2));
        acc(r.rouge_lcs_stripped, rouge_l(sref, shyp));
    }
    const double n = static_cast<double>(pairs.size());
    for (RougeScore* s : {&r.rouge1, &r.rouge2, &r.rouge_lcs, &r.rouge1_stripped,
                          &r.rouge2_stripped, &r.rouge_lcs_stripped}) {
        s->precision /= n;
        s->recall /= n;
        s->f1 /= n;
    }
    r.success = success_rate(pairs);
    r.length_diff = average_length_difference(pairs);
    return r;
}

std::string format_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
    std::string out;
    char line[256];
    std::snprintf(line, sizeof(line), "%-14s %6s %6s %6s %6s %6s %6s %6s %6s %6s %6s %6s\n",
                  "system", "R1-P", "R1-R", "R1-F", "R2-P", "R2-R", "R2-F", "RL-P", "RL-R",
                  "RL-F", "SR", "ALD");
    out += line;
    for (const auto& [name, r] : rows) {
        std::snprintf(line, sizeof(line),
                      "%-14s %6.1f %6.1f %6.1f %6.1f %6.1f %6.1f %6.1f %6.1f %6.1f %6.1f %+6.1f\n",
                      name.c_str(), 100.0 * r.rouge1.precision, 100.0 * r.rouge1.recall,
                      100.0 * r.rouge1.f1, 100.0 * r.rouge2.precision, 100.0 * r.rouge2.recall,
                      100.0 * r.rouge2.f1, 100.0 * r.rouge_lcs.precision,
                      100.0 * r.rouge_lcs.recall, 100.0 * r.rouge_lcs.f1, 100.0 * r.success,
                      r.length_diff);
        out += line;
    }
    return out;
}

}  // namespace seq2bf
