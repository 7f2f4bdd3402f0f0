#pragma once

// Decoding strategies: greedy, beam search, temperature sampling.
// Generation never records gradients.  Argmax and beam expansion break ties
// toward the lowest token id, so beam(1) coincides with greedy exactly.

#include <algorithm>
#include <string>
#include <vector>

#include "codesum/transformer.hpp"

namespace codesum {

struct GenerateOptions {
    enum class Strategy { greedy, beam, sample };
    Strategy strategy = Strategy::greedy;
    std::size_t beam_width = 4;
    double temperature = 1.0;
    std::uint64_t seed = 0;
    std::size_t max_tgt_len = 0;  // 0: use the model config

    static GenerateOptions greedy_opts() { return {}; }
    static GenerateOptions beam_opts(std::size_t width) {
        GenerateOptions o;
        o.strategy = Strategy::beam;
        o.beam_width = width;
        return o;
    }
    static GenerateOptions sample_opts(double temperature, std::uint64_t seed) {
        GenerateOptions o;
        o.strategy = Strategy::sample;
        o.temperature = temperature;
        o.seed = seed;
        return o;
    }
};

namespace detail {

inline std::vector<double> last_row_logits(const Transformer& model, const EncoderOutput& enc,
                                           const std::vector<int>& prefix) {
    Rng unused(0);
    Tensor states = model.decoder_states(enc, prefix, false, unused);
    Tensor logits = model.output_logits(states);
    const std::size_t v = logits.dim(1);
    const std::size_t last = logits.dim(0) - 1;
    std::vector<double> row(v);
    for (std::size_t j = 0; j < v; ++j) row[j] = logits(last, j);
    return row;
}

inline int argmax_lowest_id(const std::vector<double>& row) {
    return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

inline std::vector<double> log_softmax_row(std::vector<double> row) {
    double mx = row[0];
    for (double x : row) mx = std::max(mx, x);
    double denom = 0.0;
    for (double x : row) denom += std::exp(x - mx);
    const double lse = mx + std::log(denom);
    for (double& x : row) x -= lse;
    return row;
}

}  // namespace detail

inline TokenSequence generate(const Transformer& model, const TokenSequence& src,
                              const GenerateOptions& opts = {}) {
    NoGradGuard ng;
    const std::size_t cap = opts.max_tgt_len ? opts.max_tgt_len : model.config().max_tgt_len;
    if (cap < 2) throw contract_error("generate: max_tgt_len must be at least 2");
    const std::size_t content_cap = cap - 2;  // room for <bos> and <eos>
    EncoderOutput enc = model.encode(src, false, 0);

    if (opts.strategy == GenerateOptions::Strategy::beam) {
        if (opts.beam_width == 0) throw contract_error("generate: beam width must be positive");
        struct Hyp {
            std::vector<int> ids;  // includes <bos>, excludes <eos>
            double logp = 0.0;
            bool done = false;
        };
        auto hyp_less = [](const Hyp& a, const Hyp& b) {
            if (a.logp != b.logp) return a.logp > b.logp;
            return a.ids < b.ids;
        };
        std::vector<Hyp> beam = {{{Vocabulary::kBos}, 0.0, false}};
        for (std::size_t step = 0; step < content_cap; ++step) {
            bool all_done = true;
            std::vector<Hyp> candidates;
            for (const auto& h : beam) {
                if (h.done) {
                    candidates.push_back(h);
                    continue;
                }
                all_done = false;
                auto logp = detail::log_softmax_row(detail::last_row_logits(model, enc, h.ids));
                // top beam_width continuations, ties to the lowest id
                std::vector<int> order(logp.size());
                for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
                std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
                    return logp[static_cast<std::size_t>(a)] > logp[static_cast<std::size_t>(b)];
                });
                for (std::size_t w = 0; w < opts.beam_width && w < order.size(); ++w) {
                    Hyp next = h;
                    next.logp += logp[static_cast<std::size_t>(order[w])];
                    if (order[w] == Vocabulary::kEos) next.done = true;
                    else next.ids.push_back(order[w]);
                    candidates.push_back(std::move(next));
                }
            }
            if (all_done) break;
            std::stable_sort(candidates.begin(), candidates.end(), hyp_less);
            if (candidates.size() > opts.beam_width) candidates.resize(opts.beam_width);
            beam = std::move(candidates);
        }
        std::stable_sort(beam.begin(), beam.end(), hyp_less);
        TokenSequence out;
        out.ids = beam.front().ids;
        out.ids.push_back(Vocabulary::kEos);
        return out;
    }

    Rng rng(derive_seed(opts.seed, "sample-decode"));
    TokenSequence out;
    out.ids = {Vocabulary::kBos};
    for (std::size_t step = 0; step < content_cap; ++step) {
        auto row = detail::last_row_logits(model, enc, out.ids);
        int next;
        if (opts.strategy == GenerateOptions::Strategy::greedy) {
            next = detail::argmax_lowest_id(row);
        } else {
            if (opts.temperature <= 0.0) throw contract_error("generate: temperature must be positive");
            for (double& x : row) x /= opts.temperature;
            auto logp = detail::log_softmax_row(std::move(row));
            const double r = rng.uniform();
            double cum = 0.0;
            next = static_cast<int>(logp.size()) - 1;
            for (std::size_t j = 0; j < logp.size(); ++j) {
                cum += std::exp(logp[j]);
                if (r < cum) {
                    next = static_cast<int>(j);
                    break;
                }
            }
        }
        if (next == Vocabulary::kEos) break;
        out.ids.push_back(next);
    }
    out.ids.push_back(Vocabulary::kEos);
    return out;
}

}  // namespace codesum
