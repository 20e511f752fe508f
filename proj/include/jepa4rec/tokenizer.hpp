#pragma once

// Whitespace + punctuation tokenizer, frequency vocabulary, and encoding
// of item sentences / user histories into indexed model inputs.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "jepa4rec/corpus.hpp"

namespace jepa4rec {

struct TokenizerError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Reserved vocabulary slots.
inline constexpr int kClsId = 0;
inline constexpr int kMaskId = 1;
inline constexpr int kPadId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kNumReserved = 4;

// Sequence limits.
inline constexpr int kMaxTokensPerAttribute = 32;
inline constexpr int kMaxSequenceTokens = 1024;
inline constexpr int kMaxItemsPerSequence = 50;

enum class TokenType : std::uint8_t { Cls = 0, Attribute = 1, Value = 2 };

// Lowercase, split on whitespace, peel surrounding punctuation into
// separate tokens. Interior punctuation (usb-c) is kept.
inline std::vector<std::string> tokenize_text(const std::string& text) {
    std::vector<std::string> tokens;
    std::size_t i = 0;
    auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
    auto is_punct = [](unsigned char c) { return std::ispunct(c) != 0; };
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        std::size_t j = i;
        while (j < text.size() && !is_space(text[j])) ++j;
        if (j == i) break;
        std::string word = text.substr(i, j - i);
        for (auto& c : word)
            c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        std::size_t b = 0, e = word.size();
        std::vector<std::string> leading, trailing;
        while (b < e && is_punct(word[b])) leading.push_back(std::string(1, word[b++]));
        while (e > b && is_punct(word[e - 1])) trailing.insert(trailing.begin(), std::string(1, word[e - 1])), --e;
        for (auto& t : leading) tokens.push_back(std::move(t));
        if (e > b) tokens.push_back(word.substr(b, e - b));
        for (auto& t : trailing) tokens.push_back(std::move(t));
        i = j;
    }
    return tokens;
}

class Vocabulary {
public:
    Vocabulary() {
        id_to_token_ = {"[CLS]", "[MASK]", "[PAD]", "[UNK]"};
        for (int i = 0; i < kNumReserved; ++i)
            token_to_id_[id_to_token_[i]] = i;
    }

    int size() const { return static_cast<int>(id_to_token_.size()); }

    int lookup(const std::string& token) const {
        auto it = token_to_id_.find(token);
        return it == token_to_id_.end() ? kUnkId : it->second;
    }

    const std::string& token(int id) const { return id_to_token_.at(id); }

    int add(const std::string& token) {
        int id = static_cast<int>(id_to_token_.size());
        id_to_token_.push_back(token);
        token_to_id_[token] = id;
        return id;
    }

    int min_count = 1;
    std::uint64_t corpus_hash = 0;

    json to_json() const {
        json j;
        j["min_count"] = min_count;
        j["corpus_hash"] = corpus_hash;
        j["reserved"] = {{"[CLS]", kClsId},
                         {"[MASK]", kMaskId},
                         {"[PAD]", kPadId},
                         {"[UNK]", kUnkId}};
        json toks = json::array();
        for (int i = kNumReserved; i < size(); ++i)
            toks.push_back(id_to_token_[i]);
        j["tokens"] = toks;
        return j;
    }

    static Vocabulary from_json(const json& j) {
        Vocabulary v;
        v.min_count = j.at("min_count").get<int>();
        v.corpus_hash = j.at("corpus_hash").get<std::uint64_t>();
        for (const auto& t : j.at("tokens"))
            v.add(t.get<std::string>());
        return v;
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw TokenizerError("cannot write " + path);
        out << to_json().dump(2) << "\n";
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path);
        if (!in || std::filesystem::is_directory(path))
            throw TokenizerError("cannot open " + path);
        json j;
        try {
            j = json::parse(in);
        } catch (const json::exception& e) {
            throw TokenizerError("malformed vocabulary file " + path + ": " +
                                 e.what());
        }
        return from_json(j);
    }

    std::uint64_t fingerprint() const {
        Fnv1a h;
        for (const auto& t : id_to_token_) h.update_string(t);
        std::uint64_t mc = static_cast<std::uint64_t>(min_count);
        h.update(&mc, sizeof mc);
        return h.digest();
    }

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
};

// Deterministic vocabulary: tokens ordered by (descending count,
// lexicographic), counted once per catalog item sentence.
inline Vocabulary build_vocab(const Corpus& corpus, int min_count = 1) {
    if (corpus.items.empty()) throw TokenizerError("empty corpus");
    std::map<std::string, std::int64_t> counts;
    for (const auto& item : corpus.items)
        for (const auto& seg : flatten_item(item))
            for (const auto& tok : tokenize_text(seg.text)) counts[tok]++;

    std::vector<std::pair<std::string, std::int64_t>> sorted(counts.begin(),
                                                             counts.end());
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocabulary vocab;
    vocab.min_count = min_count;
    vocab.corpus_hash = corpus_fingerprint(corpus);
    for (const auto& [tok, count] : sorted)
        if (count >= min_count) vocab.add(tok);
    return vocab;
}

struct EncodedItem {
    std::vector<int> token_ids;
    std::vector<TokenType> token_types;
};

// Encode one item sentence. Each attribute's key+value tokens are capped
// at kMaxTokensPerAttribute, truncating value tokens from the right.
inline EncodedItem encode_item_tokens(const ItemRecord& item,
                                      const Vocabulary& vocab) {
    EncodedItem out;
    auto segments = flatten_item(item);
    for (std::size_t s = 0; s + 1 < segments.size(); s += 2) {
        auto key_toks = tokenize_text(segments[s].text);
        auto val_toks = tokenize_text(segments[s + 1].text);
        int budget = kMaxTokensPerAttribute;
        std::vector<std::string> kept;
        std::vector<TokenType> types;
        for (const auto& t : key_toks) {
            if (budget == 0) break;
            kept.push_back(t);
            types.push_back(TokenType::Attribute);
            --budget;
        }
        for (const auto& t : val_toks) {
            if (budget == 0) break;
            kept.push_back(t);
            types.push_back(TokenType::Value);
            --budget;
        }
        for (std::size_t i = 0; i < kept.size(); ++i) {
            out.token_ids.push_back(vocab.lookup(kept[i]));
            out.token_types.push_back(types[i]);
        }
    }
    if (out.token_ids.empty())
        throw TokenizerError("item '" + item.item_id +
                             "' has no tokens after truncation");
    return out;
}

struct EncodedInput {
    std::vector<int> token_ids;
    std::vector<int> token_positions;       // 0 .. len-1
    std::vector<TokenType> token_types;     // CLS / Attribute / Value
    std::vector<int> item_positions;        // 0 = CLS, 1 = most recent item
    std::vector<std::uint8_t> global_flags; // true only for CLS

    int length() const { return static_cast<int>(token_ids.size()); }
};

// Encode a user history as {[CLS], S_n, ..., S_1} (most recent first).
// Keeps at most kMaxItemsPerSequence most-recent items; if the total
// still exceeds kMaxSequenceTokens, whole oldest items are dropped and
// finally the oldest surviving item's tail is cut.
inline EncodedInput encode_sequence(const std::vector<EncodedItem>& history,
                                    int max_items = kMaxItemsPerSequence,
                                    int max_tokens = kMaxSequenceTokens) {
    if (history.empty())
        throw TokenizerError("cannot encode an empty history");

    // history is oldest-first; keep the most recent max_items.
    int n_keep = std::min<int>(static_cast<int>(history.size()), max_items);
    std::vector<const EncodedItem*> recent_first;
    for (int k = 0; k < n_keep; ++k)
        recent_first.push_back(&history[history.size() - 1 - k]);

    // Drop oldest items until the CLS + body fits, then trim the tail of
    // the oldest survivor.
    int total = 1;
    int used = 0;
    for (; used < n_keep; ++used) {
        int len = static_cast<int>(recent_first[used]->token_ids.size());
        if (total + len > max_tokens) break;
        total += len;
    }
    int tail_budget = 0;
    bool last_truncated = false;
    if (used < n_keep) {
        tail_budget = max_tokens - total;
        if (tail_budget > 0) {
            ++used; // oldest survivor enters with its tail cut
            last_truncated = true;
        }
    }

    EncodedInput out;
    out.token_ids.push_back(kClsId);
    out.token_types.push_back(TokenType::Cls);
    out.item_positions.push_back(0);
    for (int k = 0; k < used; ++k) {
        const auto& item = *recent_first[k];
        int len = static_cast<int>(item.token_ids.size());
        int keep = (last_truncated && k == used - 1)
                       ? std::min(len, tail_budget)
                       : len;
        for (int t = 0; t < keep; ++t) {
            out.token_ids.push_back(item.token_ids[t]);
            out.token_types.push_back(item.token_types[t]);
            out.item_positions.push_back(k + 1);
        }
    }
    out.token_positions.resize(out.token_ids.size());
    for (int i = 0; i < out.length(); ++i) out.token_positions[i] = i;
    out.global_flags.assign(out.token_ids.size(), 0);
    out.global_flags[0] = 1;
    return out;
}

// Single-item view {[CLS], S_i}, used for item encoding and as the
// masked/full next-item inputs.
inline EncodedInput encode_single_item(const EncodedItem& item) {
    std::vector<EncodedItem> one = {item};
    return encode_sequence(one);
}

} // namespace jepa4rec
