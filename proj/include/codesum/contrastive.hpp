#pragma once

// Phase 1: self-supervised contrastive training of the encoder with
// in-batch negatives.  Two dropout-perturbed encodings of the same code form
// the code-to-code positive pair; the paired comment forms the
// code-to-comment positive.  Embeddings are unit-normalized before
// similarity, so sim() is a plain dot product.

#include <functional>
#include <vector>

#include "codesum/optim.hpp"
#include "codesum/retriever.hpp"
#include "codesum/transformer.hpp"

namespace codesum {

// -log( e^{s_pos/tau} / (e^{s_pos/tau} + sum_j e^{s_negj/tau}) ), averaged
// over the batch.  anchors/positives are normalized pooled embeddings; the
// negatives for anchor i are the other anchors (or the other positives when
// negatives_from_positives is set).
inline Tensor contrastive_loss(const std::vector<Tensor>& anchors,
                               const std::vector<Tensor>& positives, double tau,
                               bool negatives_from_positives = false) {
    const std::size_t b = anchors.size();
    if (b < 2) throw contract_error("contrastive loss: batch must have at least 2 examples");
    if (positives.size() != b) throw contract_error("contrastive loss: positives size mismatch");
    if (tau <= 0.0) throw contract_error("contrastive loss: temperature must be positive");

    const double inv_tau = 1.0 / tau;
    Tensor total;
    for (std::size_t i = 0; i < b; ++i) {
        std::vector<Tensor> logits;
        logits.reserve(b);
        logits.push_back(scale(dot(anchors[i], positives[i]), inv_tau));
        for (std::size_t j = 0; j < b; ++j) {
            if (j == i) continue;
            const Tensor& neg = negatives_from_positives ? positives[j] : anchors[j];
            logits.push_back(scale(dot(anchors[i], neg), inv_tau));
        }
        Tensor stacked = stack_scalars(logits);
        Tensor loss_i = sub(logsumexp(stacked), pick(stacked, 0));
        total = total.defined() ? add(total, loss_i) : loss_i;
    }
    return scale(total, 1.0 / static_cast<double>(b));
}

// Code-to-code loss: anchor = first dropout view, positive = second view,
// negatives = the other examples' first views (switchable).
inline Tensor loss_q2q(const std::vector<Tensor>& first_views,
                       const std::vector<Tensor>& second_views, double tau,
                       bool negatives_second_view = false) {
    return contrastive_loss(first_views, second_views, tau, negatives_second_view);
}

// Code-to-comment loss: anchor = query embedding, positive = own comment,
// negatives = the other comments in the batch.
inline Tensor loss_q2c(const std::vector<Tensor>& queries, const std::vector<Tensor>& comments,
                       double tau) {
    return contrastive_loss(queries, comments, tau, /*negatives_from_positives=*/true);
}

struct PretrainOptions {
    std::size_t epochs = 1;
    std::size_t batch_size = 24;
    double tau = 0.2;
    double lr = 5e-5;
    double clip_norm = 1.0;
    std::uint64_t seed = 42;
    bool negatives_second_view = false;
};

struct PretrainLog {
    std::vector<double> epoch_mean_loss;
    std::size_t steps = 0;
};

// Trains the encoder in place on L_q2q + L_q2c over the train split.
inline void pretrain(Transformer& model, const Vocabulary& vocab, const Corpus& corpus,
                     const PretrainOptions& opts, PretrainLog* log = nullptr,
                     const std::function<void(std::size_t, double)>& on_epoch = {}) {
    if (opts.batch_size < 2) throw contract_error("pretrain: batch_size must be at least 2");
    auto train_idx = corpus.split_indices(Split::train);
    if (train_idx.empty()) throw data_error("pretrain: empty train split");

    Adam opt(model.parameters(), {.lr = opts.lr, .clip_norm = opts.clip_norm});
    const std::size_t max_src = model.config().max_src_len;
    const std::uint64_t order_seed = derive_seed(opts.seed, "pretrain-order");

    for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
        auto order = epoch_order(train_idx, order_seed, epoch);
        double epoch_loss = 0.0;
        std::size_t epoch_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
            const std::size_t end = std::min(order.size(), start + opts.batch_size);
            if (end - start < 2) continue;  // in-batch negatives need a batch of 2+

            std::vector<Tensor> first, second, comments;
            for (std::size_t pos = start; pos < end; ++pos) {
                const auto& pair = corpus.at(order[pos]);
                TokenSequence code = tokenize(pair.code, vocab, max_src, TextKind::code);
                TokenSequence comm = tokenize(pair.comment, vocab, max_src, TextKind::comment);
                const std::uint64_t sa = derive_seed(opts.seed, "ctr-view-a", epoch, pos);
                const std::uint64_t sb = derive_seed(opts.seed, "ctr-view-b", epoch, pos);
                const std::uint64_t sc = derive_seed(opts.seed, "ctr-comment", epoch, pos);
                first.push_back(l2_normalize(model.encode(code, true, sa).pooled));
                second.push_back(l2_normalize(model.encode(code, true, sb).pooled));
                comments.push_back(l2_normalize(model.encode(comm, true, sc).pooled));
            }
            Tensor loss = add(loss_q2q(first, second, opts.tau, opts.negatives_second_view),
                              loss_q2c(first, comments, opts.tau));
            const double value = loss.item();
            if (!std::isfinite(value))
                throw numeric_error("pretrain diverged: non-finite loss at epoch " +
                                    std::to_string(epoch) + ", batch starting " +
                                    std::to_string(start));
            opt.zero_grad();
            loss.backward();
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
