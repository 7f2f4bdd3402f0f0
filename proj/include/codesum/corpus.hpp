#pragma once

// Code-comment corpus loading.  One JSON record per line with fields
// {"id", "code", "comment", "split"}; field names can be remapped via a
// schema spec ("code=src,comment=docstring").  Files ending in .gz are
// transparently decompressed when zlib is available.

#include <algorithm>
#include <cctype>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "codesum/common.hpp"

#ifdef CODESUM_HAVE_ZLIB
#include <zlib.h>
#endif

namespace codesum {

enum class Split { train, valid, test };

inline const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::valid: return "valid";
        case Split::test: return "test";
    }
    return "?";
}

inline std::optional<Split> parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "valid" || s == "validation" || s == "dev") return Split::valid;
    if (s == "test") return Split::test;
    return std::nullopt;
}

struct CodeCommentPair {
    std::string id;
    std::string code;     // the query q
    std::string comment;  // the reference c
    Split split = Split::train;
};

// Published sizes of the common code-summarization benchmarks; kept as
// documentation since any corpus in the line format can be loaded.
struct ReferenceCorpusStats {
    const char* name;
    std::size_t train;
    std::size_t valid;
    std::size_t test;
};

inline constexpr ReferenceCorpusStats kReferenceCorpora[] = {
    {"JCSD", 69708, 8714, 6489},
    {"PCSD", 55538, 18505, 18142},
    {"CCSD", 84315, 4432, 4203},
};

struct CorpusSchema {
    std::string id = "id";
    std::string code = "code";
    std::string comment = "comment";
    std::string split = "split";

    // "code=src,comment=docstring" renames record fields
    static CorpusSchema parse(const std::string& spec) {
        CorpusSchema s;
        std::size_t pos = 0;
        while (pos < spec.size()) {
            std::size_t comma = spec.find(',', pos);
            if (comma == std::string::npos) comma = spec.size();
            const std::string item = spec.substr(pos, comma - pos);
            pos = comma + 1;
            if (item.empty()) continue;
            const std::size_t eq = item.find('=');
            if (eq == std::string::npos)
                throw config_error("schema: expected key=field, got '" + item + "'");
            const std::string key = item.substr(0, eq);
            const std::string field = item.substr(eq + 1);
            if (field.empty()) throw config_error("schema: empty field name for '" + key + "'");
            if (key == "id") s.id = field;
            else if (key == "code") s.code = field;
            else if (key == "comment") s.comment = field;
            else if (key == "split") s.split = field;
            else throw config_error("schema: unknown key '" + key + "'");
        }
        return s;
    }
};

struct CorpusLoadOptions {
    CorpusSchema schema;
    bool dedup = true;  // drop normalized (code, comment) duplicates within a split
};

struct CorpusLoadReport {
    std::size_t lines = 0;
    std::size_t loaded = 0;
    std::size_t duplicates_dropped = 0;
    std::size_t cross_split_dropped = 0;
    std::size_t counts[3] = {0, 0, 0};
    std::vector<std::string> record_errors;

    std::size_t count(Split s) const { return counts[static_cast<int>(s)]; }
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline std::string collapse_ws(const std::string& s) {
    std::string out;
    bool in_ws = true;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!in_ws) out.push_back(' ');
            in_ws = true;
        } else {
            out.push_back(c);
            in_ws = false;
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

inline std::string to_lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

// normalized key used for duplicate detection: whitespace-collapsed code,
// lowercased whitespace-collapsed comment
inline std::string dedup_key(const std::string& code, const std::string& comment) {
    return collapse_ws(code) + '\x1f' + to_lower(collapse_ws(comment));
}

inline std::string read_text_file(const std::string& path) {
    const bool gz = path.size() > 3 && path.substr(path.size() - 3) == ".gz";
    if (gz) {
#ifdef CODESUM_HAVE_ZLIB
        gzFile f = gzopen(path.c_str(), "rb");
        if (!f) throw data_error("cannot open file: " + path);
        std::string out;
        char buf[1 << 16];
        int n;
        while ((n = gzread(f, buf, sizeof(buf))) > 0) out.append(buf, static_cast<std::size_t>(n));
        const bool bad = n < 0;
        gzclose(f);
        if (bad) throw data_error("gzip read failed: " + path);
        return out;
#else
        throw data_error("gzip corpus support requires zlib: " + path);
#endif
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open file: " + path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace detail

class Corpus {
public:
    Corpus() = default;

    static Corpus load(const std::string& path, const CorpusLoadOptions& opts = {},
                       CorpusLoadReport* report = nullptr) {
        CorpusLoadReport local;
        CorpusLoadReport& rep = report ? *report : local;
        const std::string text = detail::read_text_file(path);

        std::vector<CodeCommentPair> pairs;
        std::unordered_map<std::string, std::size_t> ids_seen;
        std::unordered_map<std::string, Split> dedup_seen;

        std::size_t line_no = 0;
        std::size_t pos = 0;
        auto record_error = [&](const std::string& msg) {
            rep.record_errors.push_back("line " + std::to_string(line_no) + ": " + msg);
        };
        while (pos < text.size()) {
            std::size_t nl = text.find('\n', pos);
            if (nl == std::string::npos) nl = text.size();
            std::string line = text.substr(pos, nl - pos);
            pos = nl + 1;
            ++line_no;
            if (detail::trim(line).empty()) continue;
            ++rep.lines;

            nlohmann::json rec;
            try {
                rec = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception& e) {
                record_error(std::string("bad JSON: ") + e.what());
                continue;
            }
            if (!rec.is_object()) {
                record_error("record is not an object");
                continue;
            }
            if (rec.contains("provenance")) continue;  // metadata header line

            CodeCommentPair p;
            bool ok = true;
            auto fetch = [&](const std::string& field, std::string& out) {
                if (!rec.contains(field) || !rec[field].is_string()) {
                    record_error("missing or non-string field '" + field + "'");
                    ok = false;
                    return;
                }
                out = rec[field].get<std::string>();
            };
            std::string split_str;
            fetch(opts.schema.id, p.id);
            fetch(opts.schema.code, p.code);
            fetch(opts.schema.comment, p.comment);
            fetch(opts.schema.split, split_str);
            if (!ok) continue;

            if (detail::trim(p.id).empty()) {
                record_error("empty id");
                continue;
            }
            if (detail::trim(p.code).empty() || detail::trim(p.comment).empty()) {
                record_error("empty code or comment");
                continue;
            }
            auto split = parse_split(split_str);
            if (!split) {
                record_error("unknown split '" + split_str + "'");
                continue;
            }
            p.split = *split;

            if (ids_seen.count(p.id)) {
                record_error("duplicate id '" + p.id + "'");
                continue;
            }

            const std::string key = detail::dedup_key(p.code, p.comment);
            auto it = dedup_seen.find(key);
            if (it != dedup_seen.end()) {
                if (it->second != p.split) {
                    ++rep.cross_split_dropped;  // leakage guard, always on
                    continue;
                }
                if (opts.dedup) {
                    ++rep.duplicates_dropped;
                    continue;
                }
            } else {
                dedup_seen.emplace(key, p.split);
            }

            ids_seen.emplace(p.id, pairs.size());
            rep.counts[static_cast<int>(p.split)]++;
            pairs.push_back(std::move(p));
        }

        rep.loaded = pairs.size();
        if (pairs.empty()) throw data_error("empty corpus: " + path);
        return from_pairs(std::move(pairs));
    }

    static Corpus from_pairs(std::vector<CodeCommentPair> pairs) {
        Corpus c;
        c.pairs_ = std::move(pairs);
        for (std::size_t i = 0; i < c.pairs_.size(); ++i) {
            const auto& p = c.pairs_[i];
            if (p.id.empty() || p.code.empty() || p.comment.empty())
                throw data_error("corpus pair with empty field at position " + std::to_string(i));
            if (!c.by_id_.emplace(p.id, i).second)
                throw data_error("duplicate pair id '" + p.id + "'");
        }
        return c;
    }

    const std::vector<CodeCommentPair>& pairs() const { return pairs_; }
    std::size_t size() const { return pairs_.size(); }
    const CodeCommentPair& at(std::size_t i) const { return pairs_.at(i); }

    bool has_id(const std::string& id) const { return by_id_.count(id) != 0; }

    const CodeCommentPair& by_id(const std::string& id) const {
        auto it = by_id_.find(id);
        if (it == by_id_.end()) throw data_error("unknown pair id '" + id + "'");
        return pairs_[it->second];
    }

    std::vector<std::size_t> split_indices(Split s) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < pairs_.size(); ++i)
            if (pairs_[i].split == s) out.push_back(i);
        return out;
    }

private:
    std::vector<CodeCommentPair> pairs_;
    std::unordered_map<std::string, std::size_t> by_id_;
};

// Writes pairs in the corpus line format; an optional provenance JSON object
// is emitted as a first header line that the loader skips.
inline void write_corpus(const std::string& path, const std::vector<CodeCommentPair>& pairs,
                         const nlohmann::json& provenance = {}) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("cannot open file for writing: " + path);
    if (!provenance.is_null() && !provenance.empty()) {
        nlohmann::json header;
        header["provenance"] = provenance;
        out << header.dump() << "\n";
    }
    for (const auto& p : pairs) {
        nlohmann::json rec;
        rec["id"] = p.id;
        rec["code"] = p.code;
        rec["comment"] = p.comment;
        rec["split"] = split_name(p.split);
        out << rec.dump() << "\n";
    }
    if (!out) throw data_error("write failed: " + path);
}

// Deterministic per-epoch permutation used by every training loop.
inline std::vector<std::size_t> epoch_order(const std::vector<std::size_t>& indices,
                                            std::uint64_t seed, std::uint64_t epoch) {
    std::vector<std::size_t> out = indices;
    Rng rng(derive_seed(seed, "epoch-order", epoch));
    rng.shuffle(out);
    return out;
}

}  // namespace codesum
