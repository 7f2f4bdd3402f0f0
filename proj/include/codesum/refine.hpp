#pragma once

// Phase 3: self-refinement.  For each training query the phase-2 model
// generates K candidates (greedy first, then temperature samples) with the
// inference input format (top-1 exemplar, self excluded); the candidate with
// the highest ROUGE-L against the reference becomes the new target, and the
// model is fine-tuned on the augmented dataset at a reduced learning rate.

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "codesum/finetune.hpp"
#include "codesum/metrics.hpp"

namespace codesum {

struct Candidate {
    TokenSequence tokens;
    std::string surface;
    std::uint64_t seed_tag = 0;  // 0 = greedy; sampled candidates get 1..K-1
    double rouge = 0.0;
};

struct CandidateSet {
    std::string query_id;
    std::vector<Candidate> candidates;  // ordered by seed_tag
    std::size_t best_index = 0;
};

struct RefineDecodeOptions {
    std::size_t K = 5;
    double temperature = 0.8;
    std::uint64_t seed = 42;
};

// Reference surface used for scoring and evaluation: the comment-tokenized
// text, so hypotheses and references share one token space.
inline std::string reference_surface(const CodeCommentPair& pair) {
    return join_tokens(split_tokens(pair.comment, TextKind::comment));
}

// Inference-format source for a query: top-1 exemplar concatenated, the
// query's own pair excluded when it is in the index.  The ranking embedding
// comes from `retriever` when given (an independently trained retriever),
// otherwise from the generating model itself.
inline AugmentedInput inference_input(const Transformer& model, const Vocabulary& vocab,
                                      const CodeCommentPair& query, const EmbeddingIndex& index,
                                      const Corpus& corpus,
                                      const Transformer* retriever = nullptr) {
    Tensor q;
    {
        NoGradGuard ng;
        q = embed_code_normalized(retriever ? *retriever : model, vocab, query.code);
    }
    const bool self_known = index.row_of(query.id).has_value();
    auto hits = index.top_k(q.values(), 1,
                            self_known ? std::optional<std::string>(query.id) : std::nullopt);
    return build_augmented_input(query, hits[0], corpus, vocab, model.config().max_src_len,
                                 /*allow_self=*/!self_known);
}

inline std::size_t select_best_index(const std::vector<Candidate>& candidates) {
    if (candidates.empty()) throw contract_error("select_best: no candidates");
    std::size_t best = 0;
    for (std::size_t i = 1; i < candidates.size(); ++i)
        if (candidates[i].rouge > candidates[best].rouge) best = i;
    return best;
}

// K candidates: greedy plus temperature samples, reproducible from the seed.
// Ties in ROUGE-L go to the lowest seed tag.
inline CandidateSet sample_candidates(const Transformer& model, const Vocabulary& vocab,
                                      const CodeCommentPair& query, const EmbeddingIndex& index,
                                      const Corpus& corpus, const RefineDecodeOptions& opts,
                                      const Transformer* retriever = nullptr) {
    if (opts.K < 1) throw contract_error("sample_candidates: K must be at least 1");
    AugmentedInput input = inference_input(model, vocab, query, index, corpus, retriever);

    const Tokens ref = eval_tokenize(reference_surface(query));
    if (ref.empty()) throw contract_error("sample_candidates: empty reference");

    CandidateSet set;
    set.query_id = query.id;
    for (std::size_t j = 0; j < opts.K; ++j) {
        Candidate c;
        c.seed_tag = j;
        if (j == 0) {
            c.tokens = generate(model, input.tokens);
        } else {
            const std::uint64_t seed = derive_seed(opts.seed, "candidate", fnv1a64(query.id), j);
            c.tokens = generate(model, input.tokens,
                                GenerateOptions::sample_opts(opts.temperature, seed));
        }
        c.surface = join_tokens(detokenize(c.tokens, vocab));
        c.rouge = rouge_l(eval_tokenize(c.surface), ref);
        set.candidates.push_back(std::move(c));
    }
    set.best_index = select_best_index(set.candidates);
    return set;
}

struct AugmentedDataset {
    std::vector<CodeCommentPair> records;  // comment = selected candidate text
    std::vector<double> selected_rouge;
    std::vector<double> greedy_rouge;
    std::size_t dropped_empty = 0;
    nlohmann::json provenance;
};

inline AugmentedDataset build_augmented_dataset(const Transformer& model, const Vocabulary& vocab,
                                                const Corpus& corpus, const EmbeddingIndex& index,
                                                const RefineDecodeOptions& opts,
                                                const Transformer* retriever = nullptr) {
    AugmentedDataset out;
    for (std::size_t i : corpus.split_indices(Split::train)) {
        const auto& pair = corpus.at(i);
        CandidateSet set = sample_candidates(model, vocab, pair, index, corpus, opts, retriever);
        const Candidate& best = set.candidates[set.best_index];
        out.selected_rouge.push_back(best.rouge);
        out.greedy_rouge.push_back(set.candidates[0].rouge);
        if (best.surface.empty()) {
            ++out.dropped_empty;  // degenerate decode, nothing to train on
            continue;
        }
        out.records.push_back({pair.id, pair.code, best.surface, Split::train});
    }
    out.provenance["checkpoint_fingerprint"] = model.encoder_fingerprint();
    out.provenance["K"] = opts.K;
    out.provenance["temperature"] = opts.temperature;
    out.provenance["decode_seed"] = opts.seed;
    out.provenance["dropped_empty"] = out.dropped_empty;
    return out;
}

struct RefineOptions {
    RefineDecodeOptions decode;
    std::size_t epochs = 5;
    std::size_t batch_size = 24;
    double lr = 1e-5;
    double clip_norm = 1.0;
    std::size_t k = 4;
    std::uint64_t seed = 42;
    bool weight_by_similarity = true;
    bool nu_floor = true;
    bool nu_live_gradient = false;
    bool mix_gold = false;  // also train on the gold comments
    const Transformer* retrieval_encoder = nullptr;  // frozen external retriever
};

struct RefineResult {
    AugmentedDataset daug;
    FinetuneLog finetune_log;
};

// Builds D_aug from the current model, then fine-tunes in place on the
// selected candidates with the same composite machinery as phase 2.
inline RefineResult refine(Transformer& model, const Vocabulary& vocab, const Corpus& corpus,
                           const RefineOptions& opts,
                           const std::function<void(std::size_t, double)>& on_epoch = {}) {
    EmbeddingIndex index = EmbeddingIndex::build(
        opts.retrieval_encoder ? *opts.retrieval_encoder : model, vocab, corpus);
    RefineResult result;
    result.daug =
        build_augmented_dataset(model, vocab, corpus, index, opts.decode, opts.retrieval_encoder);
    if (result.daug.records.empty()) throw data_error("refine: empty augmented dataset");

    std::unordered_map<std::string, std::size_t> position_of;
    for (std::size_t i : corpus.split_indices(Split::train)) position_of[corpus.at(i).id] = i;
    std::vector<TrainingExample> examples;
    for (const auto& rec : result.daug.records) {
        auto it = position_of.find(rec.id);
        if (it == position_of.end())
            throw data_error("refine: augmented record id '" + rec.id + "' not in corpus");
        examples.push_back({it->second, rec.comment});
    }
    if (opts.mix_gold)
        for (std::size_t i : corpus.split_indices(Split::train))
            examples.push_back({i, corpus.at(i).comment});

    FinetuneOptions fopts;
    fopts.k = opts.k;
    fopts.epochs = opts.epochs;
    fopts.batch_size = opts.batch_size;
    fopts.lr = opts.lr;
    fopts.clip_norm = opts.clip_norm;
    fopts.seed = opts.seed;
    fopts.weight_by_similarity = opts.weight_by_similarity;
    fopts.nu_floor = opts.nu_floor;
    fopts.nu_live_gradient = opts.nu_live_gradient;
    fopts.phase = "refine";
    fopts.retrieval_encoder = opts.retrieval_encoder;
    finetune(model, vocab, corpus, examples, fopts, &result.finetune_log, on_epoch);
    return result;
}

}  // namespace codesum
