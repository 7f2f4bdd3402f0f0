#pragma once

// Exact cosine nearest-neighbor index over unit-normalized code embeddings.
// Rows are stored in corpus order; queries are exhaustive dot products with
// deterministic (score desc, id asc) ordering.  The index records the
// fingerprint of the encoder that produced it and can be persisted:
//
//   magic "CSIX" | u32 version | u64 fingerprint | u64 N | u64 d
//   | N*d f64 rows | u64 N | (u64 len, bytes) per id

#include <algorithm>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "codesum/corpus.hpp"
#include "codesum/transformer.hpp"

namespace codesum {

inline constexpr std::uint32_t kIndexVersion = 1;
inline constexpr char kIndexMagic[5] = "CSIX";

struct RetrievalHit {
    std::string pair_id;
    double score = 0.0;   // cosine similarity, clamped to [-1, 1]
    std::size_t rank = 0; // 1-based
};

// Normalized pooled embedding of a code string; differentiable when
// gradients are enabled (the live query side of the retrieval weight).
inline Tensor embed_code_normalized(const Transformer& model, const Vocabulary& vocab,
                                    const std::string& code, bool train_mode = false,
                                    std::uint64_t dropout_seed = 0) {
    TokenSequence toks = tokenize(code, vocab, model.config().max_src_len, TextKind::code);
    return l2_normalize(model.encode(toks, train_mode, dropout_seed).pooled);
}

class EmbeddingIndex {
public:
    EmbeddingIndex() = default;

    static EmbeddingIndex build(const Transformer& model, const Vocabulary& vocab,
                                const Corpus& corpus, Split split = Split::train) {
        NoGradGuard ng;
        auto indices = corpus.split_indices(split);
        if (indices.empty())
            throw data_error(std::string("build_index: empty ") + split_name(split) + " split");
        EmbeddingIndex idx;
        idx.dim_ = model.config().d_model;
        idx.fingerprint_ = model.encoder_fingerprint();
        idx.rows_.reserve(indices.size() * idx.dim_);
        idx.ids_.reserve(indices.size());
        for (std::size_t i : indices) {
            const auto& pair = corpus.at(i);
            Tensor e = embed_code_normalized(model, vocab, pair.code);
            idx.rows_.insert(idx.rows_.end(), e.values().begin(), e.values().end());
            idx.row_of_id_[pair.id] = idx.ids_.size();
            idx.ids_.push_back(pair.id);
        }
        return idx;
    }

    // Assemble an index from precomputed rows (normalized by the caller).
    static EmbeddingIndex from_rows(std::size_t dim, std::vector<double> rows,
                                    std::vector<std::string> ids, std::uint64_t fingerprint) {
        if (rows.size() != dim * ids.size())
            throw contract_error("from_rows: row data does not match dim * ids");
        EmbeddingIndex idx;
        idx.dim_ = dim;
        idx.fingerprint_ = fingerprint;
        idx.rows_ = std::move(rows);
        idx.ids_ = std::move(ids);
        for (std::size_t i = 0; i < idx.ids_.size(); ++i) idx.row_of_id_[idx.ids_[i]] = i;
        return idx;
    }

    std::size_t size() const { return ids_.size(); }
    std::size_t dim() const { return dim_; }
    std::uint64_t fingerprint() const { return fingerprint_; }
    const std::vector<std::string>& ids() const { return ids_; }
    const std::vector<double>& raw_rows() const { return rows_; }

    const double* row(std::size_t i) const { return rows_.data() + i * dim_; }

    std::optional<std::size_t> row_of(const std::string& id) const {
        auto it = row_of_id_.find(id);
        if (it == row_of_id_.end()) return std::nullopt;
        return it->second;
    }

    // Constant (non-differentiable) tensor view of one stored row.
    Tensor row_tensor(std::size_t i) const {
        if (i >= size()) throw contract_error("row_tensor: index out of range");
        return Tensor::from({dim_}, std::vector<double>(row(i), row(i) + dim_));
    }

    // Exhaustive top-k by cosine similarity; ties broken by ascending pair
    // id.  Rows are unit-normalized by construction, but the score divides
    // by both norms so retrieval is scale-free regardless.
    std::vector<RetrievalHit> top_k(const std::vector<double>& query, std::size_t k,
                                    const std::optional<std::string>& exclude_id = std::nullopt) const {
        if (query.size() != dim_) throw contract_error("top_k: query dimension mismatch");
        if (k < 1) throw contract_error("top_k: k must be at least 1");
        std::optional<std::size_t> excluded;
        if (exclude_id) excluded = row_of(*exclude_id);
        const std::size_t available = size() - (excluded ? 1 : 0);
        if (k > available)
            throw contract_error("top_k: k=" + std::to_string(k) + " exceeds available rows " +
                                 std::to_string(available));

        double qn = 0.0;
        for (double x : query) qn += x * x;
        qn = std::sqrt(qn);
        if (qn < 1e-300) throw degenerate_input_error("top_k: zero-norm query");

        std::vector<std::size_t> order;
        order.reserve(size());
        std::vector<double> scores(size());
        for (std::size_t i = 0; i < size(); ++i) {
            if (excluded && *excluded == i) continue;
            const double* r = row(i);
            double s = 0.0, rn = 0.0;
            for (std::size_t j = 0; j < dim_; ++j) {
                s += query[j] * r[j];
                rn += r[j] * r[j];
            }
            s /= qn * std::sqrt(rn);
            scores[i] = std::min(1.0, std::max(-1.0, s));
            order.push_back(i);
        }
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (scores[a] != scores[b]) return scores[a] > scores[b];
            return ids_[a] < ids_[b];
        });
        std::vector<RetrievalHit> hits;
        hits.reserve(k);
        for (std::size_t r = 0; r < k; ++r)
            hits.push_back({ids_[order[r]], scores[order[r]], r + 1});
        return hits;
    }

    void save(const std::string& path) const {
        std::string out;
        out.append(kIndexMagic, 4);
        put_u32(out, kIndexVersion);
        put_u64(out, fingerprint_);
        put_u64(out, size());
        put_u64(out, dim_);
        for (double v : rows_) put_f64(out, v);
        put_u64(out, ids_.size());
        for (const auto& id : ids_) {
            put_u64(out, id.size());
            out += id;
        }
        write_file_bytes(path, out);
    }

    static EmbeddingIndex load(const std::string& path) {
        const std::string bytes = read_file_bytes(path);
        ByteReader r(bytes, path);
        if (r.get_bytes(4) != std::string(kIndexMagic, 4))
            throw data_error(path + ": bad magic, not an index cache");
        if (r.get_u32() != kIndexVersion) throw data_error(path + ": unsupported index version");
        EmbeddingIndex idx;
        idx.fingerprint_ = r.get_u64();
        const std::uint64_t n = r.get_u64();
        idx.dim_ = r.get_u64();
        idx.rows_.resize(n * idx.dim_);
        for (auto& v : idx.rows_) v = r.get_f64();
        const std::uint64_t id_count = r.get_u64();
        if (id_count != n) throw data_error(path + ": id table size mismatch");
        idx.ids_.reserve(n);
        for (std::uint64_t i = 0; i < n; ++i) {
            const std::uint64_t len = r.get_u64();
            std::string id = r.get_bytes(len);
            idx.row_of_id_[id] = idx.ids_.size();
            idx.ids_.push_back(std::move(id));
        }
        return idx;
    }

private:
    std::size_t dim_ = 0;
    std::uint64_t fingerprint_ = 0;
    std::vector<double> rows_;  // row-major [N x dim], unit rows
    std::vector<std::string> ids_;
    std::unordered_map<std::string, std::size_t> row_of_id_;
};

}  // namespace codesum
