#pragma once

// Word/subtoken vocabulary and tokenizer.
//
// Splitting: whitespace and punctuation boundaries, then camelCase /
// snake_case / letter-digit splits inside identifiers.  Subtokens produced
// by splitting an identifier are lowercased so "getItemCount" and
// "get_item_count" share subtokens; unsplit code tokens keep their case,
// comment text is lowercased throughout.

#include <algorithm>
#include <cctype>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "codesum/common.hpp"
#include "codesum/corpus.hpp"

namespace codesum {

enum class TextKind { code, comment };

namespace detail {

inline bool is_word_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

inline void split_identifier(const std::string& word, TextKind kind, std::vector<std::string>& out) {
    // pass 1: underscore and character-class boundaries
    std::vector<std::string> pieces;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) pieces.push_back(cur);
        cur.clear();
    };
    for (std::size_t i = 0; i < word.size(); ++i) {
        const char c = word[i];
        if (c == '_') {
            flush();
            continue;
        }
        if (!cur.empty()) {
            const char prev = cur.back();
            const bool prev_lower = std::islower(static_cast<unsigned char>(prev));
            const bool prev_upper = std::isupper(static_cast<unsigned char>(prev));
            const bool prev_digit = std::isdigit(static_cast<unsigned char>(prev));
            const bool c_upper = std::isupper(static_cast<unsigned char>(c));
            const bool c_lower = std::islower(static_cast<unsigned char>(c));
            const bool c_digit = std::isdigit(static_cast<unsigned char>(c));
            const bool camel = prev_lower && c_upper;
            const bool digit_edge = (prev_digit && !c_digit) || (!prev_digit && c_digit);
            // acronym end: "HTTPServer" -> HTTP | Server
            const bool acronym_end =
                prev_upper && c_lower && cur.size() >= 2 &&
                std::isupper(static_cast<unsigned char>(cur[cur.size() - 2]));
            if (camel || digit_edge) {
                flush();
            } else if (acronym_end) {
                const char carry = cur.back();
                cur.pop_back();
                flush();
                cur.push_back(carry);
            }
        }
        cur.push_back(c);
    }
    flush();

    const bool was_split = pieces.size() > 1 || (pieces.size() == 1 && pieces[0].size() != word.size());
    for (auto& p : pieces) {
        if (was_split || kind == TextKind::comment) p = detail::to_lower(std::move(p));
        out.push_back(std::move(p));
    }
}

}  // namespace detail

// Splits text into subtokens; punctuation characters become single tokens.
inline std::vector<std::string> split_tokens(const std::string& text, TextKind kind) {
    std::vector<std::string> out;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) detail::split_identifier(word, kind, out);
        word.clear();
    };
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            flush();
        } else if (detail::is_word_char(c)) {
            word.push_back(c);
        } else {
            flush();
            out.emplace_back(1, c);
        }
    }
    flush();
    return out;
}

struct TokenSequence {
    std::vector<int> ids;

    std::size_t size() const { return ids.size(); }
    bool empty() const { return ids.empty(); }
};

class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kSep = 3;
    static constexpr int kUnk = 4;
    static constexpr std::size_t kReserved = 5;

    Vocabulary() { init_reserved(); }

    // Counts subtokens over the training pairs and keeps those with
    // count >= min_frequency; everything else maps to <unk>.
    static Vocabulary build(const std::vector<CodeCommentPair>& pairs, std::size_t min_frequency) {
        std::size_t train_pairs = 0;
        std::map<std::string, std::size_t> counts;  // ordered: deterministic iteration
        for (const auto& p : pairs) {
            if (p.split != Split::train) continue;
            ++train_pairs;
            for (auto& t : split_tokens(p.code, TextKind::code)) counts[t]++;
            for (auto& t : split_tokens(p.comment, TextKind::comment)) counts[t]++;
        }
        if (train_pairs == 0) throw data_error("build_vocab: empty training split");

        // ids assigned by descending count, then lexicographic
        std::vector<std::pair<std::string, std::size_t>> kept;
        for (auto& [tok, n] : counts)
            if (n >= min_frequency) kept.emplace_back(tok, n);
        std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });

        Vocabulary v;
        v.min_frequency_ = min_frequency;
        for (auto& [tok, n] : kept) v.add_token(tok);
        return v;
    }

    static Vocabulary from_tokens(const std::vector<std::string>& id_ordered_tokens,
                                  std::size_t min_frequency) {
        Vocabulary v;
        v.min_frequency_ = min_frequency;
        if (id_ordered_tokens.size() < kReserved)
            throw data_error("vocabulary: reserved tokens missing");
        for (std::size_t i = 0; i < kReserved; ++i)
            if (id_ordered_tokens[i] != v.tokens_[i])
                throw data_error("vocabulary: reserved token mismatch at id " + std::to_string(i));
        for (std::size_t i = kReserved; i < id_ordered_tokens.size(); ++i)
            v.add_token(id_ordered_tokens[i]);
        return v;
    }

    int id_of(const std::string& token) const {
        auto it = ids_.find(token);
        return it == ids_.end() ? kUnk : it->second;
    }

    bool contains(const std::string& token) const { return ids_.count(token) != 0; }

    const std::string& token_of(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
            throw contract_error("token_of: id out of range");
        return tokens_[static_cast<std::size_t>(id)];
    }

    std::size_t size() const { return tokens_.size(); }
    std::size_t min_frequency() const { return min_frequency_; }
    const std::vector<std::string>& tokens() const { return tokens_; }

private:
    void init_reserved() {
        tokens_ = {"<pad>", "<bos>", "<eos>", "<sep>", "<unk>"};
        for (std::size_t i = 0; i < tokens_.size(); ++i) ids_[tokens_[i]] = static_cast<int>(i);
    }

    void add_token(const std::string& tok) {
        if (ids_.count(tok)) throw data_error("vocabulary: duplicate token '" + tok + "'");
        ids_[tok] = static_cast<int>(tokens_.size());
        tokens_.push_back(tok);
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> ids_;
    std::size_t min_frequency_ = 1;
};

inline std::vector<int> tokens_to_ids(const std::vector<std::string>& tokens, const Vocabulary& vocab) {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(vocab.id_of(t));
    return ids;
}

// <bos> ... <eos>, truncated to max_len with <eos> kept in the last slot.
inline TokenSequence tokenize(const std::string& text, const Vocabulary& vocab, std::size_t max_len,
                              TextKind kind) {
    if (max_len < 2) throw contract_error("tokenize: max_len must be at least 2");
    TokenSequence seq;
    seq.ids.push_back(Vocabulary::kBos);
    for (const auto& t : split_tokens(text, kind)) seq.ids.push_back(vocab.id_of(t));
    seq.ids.push_back(Vocabulary::kEos);
    if (seq.ids.size() > max_len) {
        seq.ids.resize(max_len);
        seq.ids.back() = Vocabulary::kEos;
    }
    return seq;
}

// Surface tokens, skipping the reserved ids.
inline std::vector<std::string> detokenize(const TokenSequence& seq, const Vocabulary& vocab) {
    std::vector<std::string> out;
    for (int id : seq.ids) {
        if (id < static_cast<int>(Vocabulary::kReserved)) continue;
        out.push_back(vocab.token_of(id));
    }
    return out;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

}  // namespace codesum
