#include "seq2bf/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "seq2bf/errors.hpp"

namespace seq2bf {

namespace {

using Json = nlohmann::json;

const char* kSpecialTokens[SpecialIds::count] = {"<pad>", "<unk>", "<boh>", "<eoh>", "<sep>"};
constexpr const char* kSpaceToken = " ";

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            if (!cur.empty()) words.push_back(std::move(cur)), cur.clear();
        } else {
            cur.push_back(static_cast<char>(c));
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

int utf8_len(unsigned char lead) {
    if (lead < 0x80) return 1;
    if ((lead >> 5) == 0x6) return 2;
    if ((lead >> 4) == 0xe) return 3;
    if ((lead >> 3) == 0x1e) return 4;
    return 1;  // stray continuation byte, keep as-is
}

std::vector<std::string> utf8_codepoints(const std::string& word) {
    std::vector<std::string> out;
    for (size_t i = 0; i < word.size();) {
        size_t n = std::min<size_t>(utf8_len(static_cast<unsigned char>(word[i])),
                                    word.size() - i);
        out.push_back(word.substr(i, n));
        i += n;
    }
    return out;
}

// Replaces every adjacent (first,second) left to right; a merged symbol may
// merge again with what follows.
void apply_merge(std::vector<std::string>& syms, const std::string& first,
                 const std::string& second) {
    size_t w = 0;
    for (size_t r = 0; r < syms.size();) {
        if (r + 1 < syms.size() && syms[r] == first && syms[r + 1] == second) {
            syms[w] = syms[r] + syms[r + 1];
            r += 2;
        } else {
            if (w != r) syms[w] = std::move(syms[r]);
            ++r;
        }
        ++w;
    }
    syms.resize(w);
}

}  // namespace

BpeModel::BpeModel(std::vector<std::pair<std::string, std::string>> merges,
                   std::vector<std::string> vocab, SpecialIds specials)
    : merges_(std::move(merges)), vocab_(std::move(vocab)), specials_(specials) {
    for (int i = 0; i < static_cast<int>(vocab_.size()); ++i) {
        token_to_id_[vocab_[i]] = i;  // later (learned) entries win on collision
    }
}

int BpeModel::id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? -1 : it->second;
}

const std::string& BpeModel::token_of(int id) const {
    if (id < 0 || id >= static_cast<int>(vocab_.size())) {
        throw DataError("token id out of range: " + std::to_string(id));
    }
    return vocab_[id];
}

std::vector<int> BpeModel::encode(const std::string& text) const {
    std::vector<int> ids;
    const auto words = split_words(text);
    for (size_t wi = 0; wi < words.size(); ++wi) {
        if (wi > 0) ids.push_back(id_of(kSpaceToken) >= 0 ? id_of(kSpaceToken) : specials_.unk);
        auto syms = utf8_codepoints(words[wi]);
        for (const auto& [a, b] : merges_) apply_merge(syms, a, b);
        for (const auto& s : syms) {
            int id = id_of(s);
            ids.push_back(id >= 0 ? id : specials_.unk);
        }
    }
    return ids;
}

std::string BpeModel::decode(const std::vector<int>& ids) const {
    std::string out;
    for (int id : ids) {
        if (specials_.is_special(id)) continue;
        out += token_of(id);
    }
    return out;
}

std::uint64_t BpeModel::vocab_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        h ^= 0xff;
        h *= 0x100000001b3ULL;
    };
    for (const auto& t : vocab_) feed(t);
    return h;
}

void BpeModel::save(const std::string& path) const {
    Json j;
    j["merges"] = Json::array();
    for (const auto& [a, b] : merges_) j["merges"].push_back({a, b});
    j["vocab"] = vocab_;
    j["specials"] = {{"pad", specials_.pad},
                     {"unk", specials_.unk},
                     {"boh", specials_.boh},
                     {"eoh", specials_.eoh},
                     {"sep", specials_.sep}};
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write bpe model: " + path);
    out << j.dump() << "\n";
}

BpeModel BpeModel::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read bpe model: " + path);
    Json j;
    try {
        in >> j;
    } catch (const Json::exception& e) {
        throw DataError("bad bpe model json: " + std::string(e.what()));
    }
    std::vector<std::pair<std::string, std::string>> merges;
    for (const auto& m : j.at("merges")) {
        merges.emplace_back(m.at(0).get<std::string>(), m.at(1).get<std::string>());
    }
    const auto& s = j.at("specials");
    if (s.at("pad") != SpecialIds::pad || s.at("unk") != SpecialIds::unk ||
        s.at("boh") != SpecialIds::boh || s.at("eoh") != SpecialIds::eoh ||
        s.at("sep") != SpecialIds::sep) {
        throw DataError("bpe model uses unsupported special token ids: " + path);
    }
    return BpeModel(std::move(merges), j.at("vocab").get<std::vector<std::string>>(),
                    SpecialIds{});
}

BpeModel train_bpe(const std::vector<std::string>& corpus, int num_merges, int max_vocab) {
    if (corpus.empty()) throw ConfigError("train_bpe: empty corpus");
    if (num_merges < 0) throw ConfigError("train_bpe: negative merge count");

    // word frequency table; merges never cross word boundaries
    std::map<std::string, long long> word_counts;
    for (const auto& line : corpus) {
        for (auto& w : split_words(line)) ++word_counts[w];
    }

    std::vector<std::vector<std::string>> symbol_seqs;
    std::vector<long long> counts;
    std::map<std::string, int> alphabet;  // sorted for deterministic ids
    for (const auto& [word, count] : word_counts) {
        symbol_seqs.push_back(utf8_codepoints(word));
        counts.push_back(count);
        for (const auto& cp : symbol_seqs.back()) alphabet.emplace(cp, 0);
    }

    std::vector<std::pair<std::string, std::string>> merges;
    for (int step = 0; step < num_merges; ++step) {
        std::map<std::pair<std::string, std::string>, long long> pair_counts;
        for (size_t i = 0; i < symbol_seqs.size(); ++i) {
            const auto& syms = symbol_seqs[i];
            for (size_t k = 0; k + 1 < syms.size(); ++k) {
                pair_counts[{syms[k], syms[k + 1]}] += counts[i];
            }
        }
        // ties: the lexicographically smallest pair wins (map iterates sorted)
        std::pair<std::string, std::string> best;
        long long best_count = 0;
        for (const auto& [pair, count] : pair_counts) {
            if (count > best_count) {
                best = pair;
                best_count = count;
            }
        }
        if (best_count < 2) break;
        merges.push_back(best);
        for (auto& syms : symbol_seqs) apply_merge(syms, best.first, best.second);
    }

    auto build_vocab = [&](const std::vector<std::pair<std::string, std::string>>& ms) {
        std::vector<std::string> vocab(kSpecialTokens, kSpecialTokens + SpecialIds::count);
        vocab.emplace_back(kSpaceToken);
        for (const auto& [cp, _] : alphabet) vocab.push_back(cp);
        std::unordered_map<std::string, bool> seen;
        for (const auto& t : vocab) seen[t] = true;
        for (const auto& [a, b] : ms) {
            std::string t = a + b;
            if (!seen[t]) {
                seen[t] = true;
                vocab.push_back(t);
            }
        }
        return vocab;
    };

    auto vocab = build_vocab(merges);
    if (max_vocab > 0) {
        while (static_cast<int>(vocab.size()) > max_vocab && !merges.empty()) {
            merges.pop_back();
            vocab = build_vocab(merges);
        }
    }
    return BpeModel(std::move(merges), std::move(vocab), SpecialIds{});
}

PhraseSpan sample_phrase(int headline_len, Rng& rng, int min_len, int max_len) {
    if (headline_len < 1) throw ConstraintError("sample_phrase: empty headline");
    if (min_len < 1 || min_len > max_len) {
        throw ConfigError("sample_phrase: need 1 <= min_len <= max_len");
    }
    const int lo = std::min(min_len, headline_len);
    const int hi = std::min(max_len, headline_len);
    const int len = std::uniform_int_distribution<int>(lo, hi)(rng);
    const int start = std::uniform_int_distribution<int>(0, headline_len - len)(rng);
    return {start, start + len};
}

CorpusSplit split_corpus(std::vector<RawExample> examples, SplitRatios ratios,
                         std::uint64_t seed) {
    if (ratios.train <= 0 || ratios.val <= 0 || ratios.test <= 0) {
        throw ConfigError("split_corpus: ratios must be positive");
    }
    const int n = static_cast<int>(examples.size());
    if (n < 3) throw ConfigError("split_corpus: fewer examples than partitions");

    Rng rng = make_rng(seed, /*stream=*/0x51u);
    std::shuffle(examples.begin(), examples.end(), rng);

    const double sum = ratios.train + ratios.val + ratios.test;
    const std::array<double, 3> r = {ratios.train / sum, ratios.val / sum, ratios.test / sum};
    std::array<int, 3> sizes{};
    std::array<double, 3> frac{};
    int assigned = 0;
    for (int i = 0; i < 3; ++i) {
        const double exact = r[i] * n;
        sizes[i] = static_cast<int>(exact);
        frac[i] = exact - sizes[i];
        assigned += sizes[i];
    }
    for (int left = n - assigned; left > 0; --left) {
        int pick = 0;
        for (int i = 1; i < 3; ++i) {
            if (frac[i] > frac[pick]) pick = i;
        }
        ++sizes[pick];
        frac[pick] = -1;
    }
    // no partition may come out empty
    for (int i = 0; i < 3; ++i) {
        while (sizes[i] == 0) {
            int donor = 0;
            for (int k = 1; k < 3; ++k) {
                if (sizes[k] > sizes[donor]) donor = k;
            }
            --sizes[donor];
            ++sizes[i];
        }
    }

    CorpusSplit split;
    auto it = examples.begin();
    split.train.assign(it, it + sizes[0]);
    it += sizes[0];
    split.val.assign(it, it + sizes[1]);
    it += sizes[1];
    split.test.assign(it, it + sizes[2]);
    return split;
}

std::vector<RawExample> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read corpus: " + path);
    std::vector<RawExample> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        Json j;
        try {
            j = Json::parse(line);
        } catch (const Json::exception& e) {
            throw DataError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        RawExample ex;
        ex.article = j.value("article", std::string());
        ex.headline = j.value("headline", std::string());
        if (ex.article.empty() || ex.headline.empty()) {
            throw DataError(path + ":" + std::to_string(line_no) +
                            ": article and headline must be non-empty");
        }
        if (j.contains("phrase")) {
            ex.phrase = j.at("phrase").get<std::string>();
            if (ex.headline.find(*ex.phrase) == std::string::npos) {
                throw DataError(path + ":" + std::to_string(line_no) +
                                ": phrase does not occur in headline");
            }
        }
        out.push_back(std::move(ex));
    }
    return out;
}

void write_jsonl(const std::string& path, const std::vector<RawExample>& examples) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write corpus: " + path);
    for (const auto& ex : examples) {
        Json j{{"article", ex.article}, {"headline", ex.headline}};
        if (ex.phrase) j["phrase"] = *ex.phrase;
        out << j.dump() << "\n";
    }
}

int find_subsequence(const std::vector<int>& haystack, const std::vector<int>& needle) {
    if (needle.empty() || needle.size() > haystack.size()) return -1;
    for (size_t i = 0; i + needle.size() <= haystack.size(); ++i) {
        if (std::equal(needle.begin(), needle.end(), haystack.begin() + i)) {
            return static_cast<int>(i);
        }
    }
    return -1;
}

std::vector<Document> make_documents(const std::vector<RawExample>& examples,
                                     const BpeModel& bpe, Rng& rng,
                                     int phrase_min_len, int phrase_max_len) {
    std::vector<Document> docs;
    docs.reserve(examples.size());
    for (const auto& ex : examples) {
        Document doc;
        doc.article_ids = bpe.encode(ex.article);
        doc.headline_ids = bpe.encode(ex.headline);
        if (doc.headline_ids.empty() || doc.article_ids.empty()) {
            throw DataError("example tokenizes to an empty sequence");
        }
        if (ex.phrase) {
            const auto phrase_ids = bpe.encode(*ex.phrase);
            const int at = find_subsequence(doc.headline_ids, phrase_ids);
            if (at < 0) {
                throw DataError("phrase is not token-aligned with its headline: " + *ex.phrase);
            }
            doc.phrase_span = {at, at + static_cast<int>(phrase_ids.size())};
        } else {
            doc.phrase_span = sample_phrase(static_cast<int>(doc.headline_ids.size()), rng,
                                            phrase_min_len, phrase_max_len);
        }
        docs.push_back(std::move(doc));
    }
    return docs;
}

}  // namespace seq2bf
