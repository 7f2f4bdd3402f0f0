#pragma once

// Phase 2: joint retriever-generator fine-tuning.  Each query retrieves its
// top-k exemplars, every exemplar forms one augmented decoder input, and the
// per-exemplar generation losses are combined weighted by the retrieval
// similarity: L = (1/k) sum_j L_j * nu_j.
//
// Index rows are constants refreshed once per epoch.  nu_j is computed from
// the live query embedding; whether it also carries gradient is an option
// (see CompositeLossOptions::nu_live_gradient).  Per-exemplar loss is the
// per-token sum of the cross entropy.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "codesum/generate.hpp"
#include "codesum/optim.hpp"
#include "codesum/retriever.hpp"

namespace codesum {

struct AugmentedInput {
    TokenSequence tokens;  // <bos> query <sep> exemplar comment <sep> exemplar code <eos>
    std::string exemplar_id;
    double nu_at_retrieval = 0.0;
};

// Segment order is query, exemplar comment, exemplar code.  When the total
// exceeds max_src_len the exemplar code is truncated first, then the
// exemplar comment; the query is never cut for the exemplar's sake.
inline AugmentedInput build_augmented_input(const CodeCommentPair& query, const RetrievalHit& hit,
                                            const Corpus& corpus, const Vocabulary& vocab,
                                            std::size_t max_src_len, bool allow_self = false) {
    if (!corpus.has_id(hit.pair_id))
        throw data_error("augmented input: exemplar id '" + hit.pair_id +
                         "' not present in the corpus (index-corpus mismatch)");
    if (!allow_self && hit.pair_id == query.id)
        throw contract_error("augmented input: exemplar equals the query pair");
    const CodeCommentPair& exemplar = corpus.by_id(hit.pair_id);

    constexpr std::size_t overhead = 4;  // <bos> <sep> <sep> <eos>
    if (max_src_len <= overhead) throw contract_error("augmented input: max_src_len too small");
    const std::size_t budget = max_src_len - overhead;

    std::vector<int> q = tokens_to_ids(split_tokens(query.code, TextKind::code), vocab);
    if (q.size() > budget) q.resize(budget);
    std::vector<int> ec = tokens_to_ids(split_tokens(exemplar.comment, TextKind::comment), vocab);
    std::vector<int> eq = tokens_to_ids(split_tokens(exemplar.code, TextKind::code), vocab);

    const std::size_t room_after_query = budget - q.size();
    if (ec.size() > room_after_query) ec.resize(room_after_query);
    const std::size_t room_after_comment = room_after_query - ec.size();
    if (eq.size() > room_after_comment) eq.resize(room_after_comment);

    AugmentedInput out;
    out.exemplar_id = hit.pair_id;
    out.nu_at_retrieval = hit.score;
    out.tokens.ids.reserve(overhead + q.size() + ec.size() + eq.size());
    out.tokens.ids.push_back(Vocabulary::kBos);
    out.tokens.ids.insert(out.tokens.ids.end(), q.begin(), q.end());
    out.tokens.ids.push_back(Vocabulary::kSep);
    out.tokens.ids.insert(out.tokens.ids.end(), ec.begin(), ec.end());
    out.tokens.ids.push_back(Vocabulary::kSep);
    out.tokens.ids.insert(out.tokens.ids.end(), eq.begin(), eq.end());
    out.tokens.ids.push_back(Vocabulary::kEos);
    return out;
}

struct CompositeLossRecord {
    std::string query_id;
    std::vector<std::string> exemplar_ids;
    std::vector<double> per_exemplar_loss;  // L_j, per-token sum form
    std::vector<double> weights;            // nu_j as applied
    double combined = 0.0;                  // L = (1/k) sum L_j nu_j
    std::size_t k = 0;
};

struct CompositeLossOptions {
    bool weight_by_similarity = true;  // off: plain mean over exemplars
    bool nu_floor = true;              // clamp nu at 0 before weighting
    // When set, nu carries gradient into the encoder through the live query
    // embedding.  Off by default: minimizing L_j * nu_j with a trainable nu
    // has a degenerate optimum where the encoder zeroes every similarity
    // instead of reducing the generation error, which stalls training at
    // this scale.  The loss value is identical either way.
    bool nu_live_gradient = false;
    bool train_mode = true;
    std::uint64_t dropout_seed = 0;
};

struct CompositeLoss {
    Tensor loss;
    CompositeLossRecord record;
};

inline CompositeLoss composite_loss(const Transformer& model, const Vocabulary& vocab,
                                    const CodeCommentPair& query, const TokenSequence& target,
                                    const std::vector<RetrievalHit>& hits,
                                    const EmbeddingIndex& index, const Corpus& corpus,
                                    const CompositeLossOptions& opts = {}) {
    if (hits.empty()) throw contract_error("composite_loss: need at least one retrieval hit");
    const std::size_t k = hits.size();

    // query embedding for nu: dropout off; carries gradient only when the
    // live-gradient option is on
    Tensor q_emb;
    if (opts.weight_by_similarity) {
        if (opts.nu_live_gradient) {
            q_emb = embed_code_normalized(model, vocab, query.code);
        } else {
            NoGradGuard ng;
            q_emb = embed_code_normalized(model, vocab, query.code);
        }
    }

    std::vector<int> targets(target.ids.begin() + 1, target.ids.end());
    Tensor total;
    CompositeLossRecord rec;
    rec.query_id = query.id;
    rec.k = k;
    for (std::size_t j = 0; j < k; ++j) {
        AugmentedInput aug =
            build_augmented_input(query, hits[j], corpus, vocab, model.config().max_src_len);
        Tensor logits = model.forward_teacher_forced(
            aug.tokens, target, opts.train_mode,
            derive_seed(opts.dropout_seed, "exemplar-pass", j));
        Tensor l_j = cross_entropy(logits, targets, Vocabulary::kPad, Reduction::sum);

        Tensor nu;
        if (opts.weight_by_similarity) {
            auto row = index.row_of(hits[j].pair_id);
            if (!row)
                throw data_error("composite_loss: exemplar '" + hits[j].pair_id +
                                 "' missing from the index (index-corpus mismatch)");
            nu = dot(q_emb, index.row_tensor(*row));
            if (opts.nu_floor) nu = clamp_min0(nu);
        } else {
            nu = Tensor::scalar(1.0);
        }

        rec.exemplar_ids.push_back(aug.exemplar_id);
        rec.per_exemplar_loss.push_back(l_j.item());
        rec.weights.push_back(nu.item());

        Tensor term = mul(l_j, nu);
        total = total.defined() ? add(total, term) : term;
    }
    CompositeLoss out;
    out.loss = scale(total, 1.0 / static_cast<double>(k));
    out.record = std::move(rec);
    out.record.combined = out.loss.item();
    if (!std::isfinite(out.record.combined))
        throw numeric_error("composite_loss: non-finite loss for query '" + query.id + "'");
    return out;
}

// One training example: a corpus query plus the target text the decoder
// should produce for it (the gold comment in phase 2, a selected candidate
// in phase 3).
struct TrainingExample {
    std::size_t corpus_index;
    std::string target_text;
};

struct FinetuneOptions {
    std::size_t k = 4;
    std::size_t epochs = 10;
    std::size_t batch_size = 24;
    double lr = 5e-5;
    double clip_norm = 1.0;
    std::uint64_t seed = 42;
    bool use_retrieval = true;         // off: bare-query inputs, plain cross entropy
    bool weight_by_similarity = true;  // off: unweighted mean over exemplars
    bool nu_floor = true;
    bool nu_live_gradient = false;     // see CompositeLossOptions
    std::string phase = "finetune";    // seed/tag prefix
    const Transformer* retrieval_encoder = nullptr;  // frozen external retriever
    bool collect_records = false;
};

struct FinetuneLog {
    std::vector<double> epoch_mean_loss;
    std::vector<CompositeLossRecord> records;
    std::size_t steps = 0;
};

inline std::vector<TrainingExample> gold_training_examples(const Corpus& corpus) {
    std::vector<TrainingExample> out;
    for (std::size_t i : corpus.split_indices(Split::train))
        out.push_back({i, corpus.at(i).comment});
    return out;
}

// Joint fine-tuning over explicit (query, target) examples.  The retrieval
// index is rebuilt from the live encoder once per epoch (or built once from
// a frozen external retriever); the query's own pair is always excluded.
inline void finetune(Transformer& model, const Vocabulary& vocab, const Corpus& corpus,
                     const std::vector<TrainingExample>& examples, const FinetuneOptions& opts,
                     FinetuneLog* log = nullptr,
                     const std::function<void(std::size_t, double)>& on_epoch = {}) {
    if (examples.empty()) throw data_error("finetune: no training examples");
    if (opts.batch_size < 1) throw contract_error("finetune: batch_size must be positive");
    if (opts.use_retrieval && opts.k < 1) throw contract_error("finetune: k must be at least 1");

    Adam opt(model.parameters(), {.lr = opts.lr, .clip_norm = opts.clip_norm});
    const std::size_t max_tgt = model.config().max_tgt_len;
    const std::uint64_t order_seed = derive_seed(opts.seed, opts.phase + "-order");

    std::vector<std::size_t> example_ids(examples.size());
    for (std::size_t i = 0; i < example_ids.size(); ++i) example_ids[i] = i;

    EmbeddingIndex frozen_index;
    if (opts.use_retrieval && opts.retrieval_encoder)
        frozen_index = EmbeddingIndex::build(*opts.retrieval_encoder, vocab, corpus);

    for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
        EmbeddingIndex live_index;
        const EmbeddingIndex* index = nullptr;
        std::size_t k_eff = 0;
        if (opts.use_retrieval) {
            if (opts.retrieval_encoder) {
                index = &frozen_index;
            } else {
                live_index = EmbeddingIndex::build(model, vocab, corpus);
                index = &live_index;
            }
            if (index->size() < 2)
                throw data_error("finetune: retrieval needs at least 2 training pairs");
            k_eff = std::min(opts.k, index->size() - 1);
        }

        auto order = epoch_order(example_ids, order_seed, epoch);
        double epoch_loss = 0.0;
        std::size_t epoch_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
            const std::size_t end = std::min(order.size(), start + opts.batch_size);
            Tensor batch_total;
            for (std::size_t pos = start; pos < end; ++pos) {
                const TrainingExample& ex = examples[order[pos]];
                const CodeCommentPair& query = corpus.at(ex.corpus_index);
                TokenSequence target = tokenize(ex.target_text, vocab, max_tgt, TextKind::comment);
                const std::uint64_t dseed = derive_seed(opts.seed, opts.phase + "-dropout", epoch, pos);

                Tensor loss_i;
                if (opts.use_retrieval) {
                    Tensor q_probe;
                    {
                        NoGradGuard ng;  // ranking only; nu gets its own live pass
                        q_probe = embed_code_normalized(opts.retrieval_encoder
                                                            ? *opts.retrieval_encoder
                                                            : model,
                                                        vocab, query.code);
                    }
                    auto hits = index->top_k(q_probe.values(), k_eff, query.id);
                    for (const auto& h : hits)
                        if (h.pair_id == query.id)
                            throw contract_error("finetune: self-exclusion violated for '" +
                                                 query.id + "'");
                    CompositeLossOptions copts;
                    copts.weight_by_similarity = opts.weight_by_similarity;
                    copts.nu_floor = opts.nu_floor;
                    copts.nu_live_gradient = opts.nu_live_gradient;
                    copts.train_mode = true;
                    copts.dropout_seed = dseed;
                    CompositeLoss cl =
                        composite_loss(model, vocab, query, target, hits, *index, corpus, copts);
                    loss_i = cl.loss;
                    if (log && opts.collect_records) log->records.push_back(std::move(cl.record));
                } else {
                    TokenSequence src =
                        tokenize(query.code, vocab, model.config().max_src_len, TextKind::code);
                    std::vector<int> targets(target.ids.begin() + 1, target.ids.end());
                    Tensor logits = model.forward_teacher_forced(src, target, true, dseed);
                    loss_i = cross_entropy(logits, targets, Vocabulary::kPad, Reduction::sum);
                }
                batch_total = batch_total.defined() ? add(batch_total, loss_i) : loss_i;
            }
            Tensor batch_loss = scale(batch_total, 1.0 / static_cast<double>(end - start));
            const double value = batch_loss.item();
            if (!std::isfinite(value))
                throw numeric_error("finetune diverged: non-finite loss at epoch " +
                                    std::to_string(epoch) + ", batch starting " +
                                    std::to_string(start));
            opt.zero_grad();
            batch_loss.backward();
            opt.step();
            epoch_loss += value;
            ++epoch_batches;
            if (log) ++log->steps;
        }
        const double mean = epoch_batches ? epoch_loss / static_cast<double>(epoch_batches) : 0.0;
        if (log) log->epoch_mean_loss.push_back(mean);
        if (on_epoch) on_epoch(epoch, mean);
    }
}

}  // namespace codesum
