#pragma once

// Text-generation metrics: sentence/corpus BLEU, ROUGE-L, METEOR (exact +
// stem stages), CIDEr.  All functions are pure and operate on evaluation
// tokens: lowercased, whitespace-split surfaces, independent of the model
// vocabulary.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "codesum/common.hpp"
#include "codesum/corpus.hpp"

namespace codesum {

using Tokens = std::vector<std::string>;

inline Tokens eval_tokenize(const std::string& text) {
    Tokens out;
    std::string cur;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

namespace detail {

// n-grams encoded as token spans joined with an unprintable separator
inline std::unordered_map<std::string, std::size_t> ngram_counts(const Tokens& toks, std::size_t n) {
    std::unordered_map<std::string, std::size_t> counts;
    if (toks.size() < n) return counts;
    for (std::size_t i = 0; i + n <= toks.size(); ++i) {
        std::string key;
        for (std::size_t j = 0; j < n; ++j) {
            if (j) key.push_back('\x1f');
            key += toks[i + j];
        }
        counts[key]++;
    }
    return counts;
}

struct BleuStats {
    std::vector<std::size_t> matches;  // clipped n-gram matches per order
    std::vector<std::size_t> totals;   // hypothesis n-gram counts per order
    std::size_t hyp_len = 0;
    std::size_t ref_len = 0;
};

inline BleuStats bleu_stats(const Tokens& hyp, const Tokens& ref, std::size_t max_n) {
    BleuStats s;
    s.matches.assign(max_n, 0);
    s.totals.assign(max_n, 0);
    s.hyp_len = hyp.size();
    s.ref_len = ref.size();
    for (std::size_t n = 1; n <= max_n; ++n) {
        auto hc = ngram_counts(hyp, n);
        auto rc = ngram_counts(ref, n);
        std::size_t m = 0, t = 0;
        for (auto& [g, c] : hc) {
            t += c;
            auto it = rc.find(g);
            if (it != rc.end()) m += std::min(c, it->second);
        }
        s.matches[n - 1] = m;
        s.totals[n - 1] = t;
    }
    return s;
}

inline double brevity_penalty(std::size_t hyp_len, std::size_t ref_len) {
    if (hyp_len == 0) return 0.0;
    if (hyp_len >= ref_len) return 1.0;
    return std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
}

}  // namespace detail

// Sentence BLEU: geometric mean of modified n-gram precisions times brevity
// penalty.  With smoothing on, a zero precision at any order is replaced by
// 1/(2*|hyp|); with smoothing off a zero precision gives 0.
inline double sentence_bleu(const Tokens& hyp, const Tokens& ref, std::size_t max_n = 4,
                            bool smooth = true) {
    if (max_n == 0) throw contract_error("sentence_bleu: max_n must be positive");
    if (hyp.empty()) return 0.0;
    auto s = detail::bleu_stats(hyp, ref, max_n);
    double log_sum = 0.0;
    for (std::size_t n = 0; n < max_n; ++n) {
        double p;
        if (s.totals[n] == 0 || s.matches[n] == 0) {
            if (!smooth) return 0.0;
            p = 1.0 / (2.0 * static_cast<double>(hyp.size()));
        } else {
            p = static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n]);
        }
        log_sum += std::log(p);
    }
    return detail::brevity_penalty(s.hyp_len, s.ref_len) * std::exp(log_sum / static_cast<double>(max_n));
}

// Corpus BLEU: n-gram counts and lengths pooled over the corpus before the
// geometric mean; zero pooled counts give 0 (no smoothing).
inline double corpus_bleu(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs,
                          std::size_t max_n = 4) {
    if (hyps.size() != refs.size())
        throw contract_error("corpus_bleu: hypothesis/reference counts differ");
    if (hyps.empty()) return 0.0;
    std::vector<std::size_t> matches(max_n, 0), totals(max_n, 0);
    std::size_t hyp_len = 0, ref_len = 0;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        auto s = detail::bleu_stats(hyps[i], refs[i], max_n);
        for (std::size_t n = 0; n < max_n; ++n) {
            matches[n] += s.matches[n];
            totals[n] += s.totals[n];
        }
        hyp_len += s.hyp_len;
        ref_len += s.ref_len;
    }
    double log_sum = 0.0;
    for (std::size_t n = 0; n < max_n; ++n) {
        if (totals[n] == 0 || matches[n] == 0) return 0.0;
        log_sum += std::log(static_cast<double>(matches[n]) / static_cast<double>(totals[n]));
    }
    return detail::brevity_penalty(hyp_len, ref_len) * std::exp(log_sum / static_cast<double>(max_n));
}

// ROUGE-L: F-measure over the longest common subsequence,
// F = (1+beta^2) P R / (R + beta^2 P).
inline double rouge_l(const Tokens& hyp, const Tokens& ref, double beta = 1.2) {
    if (hyp.empty() || ref.empty()) return 0.0;
    const std::size_t n = hyp.size(), m = ref.size();
    std::vector<std::size_t> prev(m + 1, 0), cur(m + 1, 0);
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j) {
            if (hyp[i - 1] == ref[j - 1]) cur[j] = prev[j - 1] + 1;
            else cur[j] = std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    const double lcs = static_cast<double>(prev[m]);
    if (lcs == 0.0) return 0.0;
    const double p = lcs / static_cast<double>(n);
    const double r = lcs / static_cast<double>(m);
    const double b2 = beta * beta;
    return (1.0 + b2) * p * r / (r + b2 * p);
}

namespace detail {

// Light suffix-stripping stemmer for the METEOR stem stage.
inline std::string stem(const std::string& w) {
    auto ends_with = [&](const char* suf) {
        const std::size_t n = std::strlen(suf);
        return w.size() >= n && w.compare(w.size() - n, n, suf) == 0;
    };
    auto undouble = [](std::string s) {
        const std::size_t n = s.size();
        if (n >= 2 && s[n - 1] == s[n - 2] &&
            std::string("bdfgmnprt").find(s[n - 1]) != std::string::npos)
            s.pop_back();
        return s;
    };
    if (ends_with("ing") && w.size() > 5) return undouble(w.substr(0, w.size() - 3));
    if (ends_with("ies") && w.size() > 4) return w.substr(0, w.size() - 3) + "y";
    if (ends_with("ed") && w.size() > 4) return undouble(w.substr(0, w.size() - 2));
    if (ends_with("es") && w.size() > 3) return w.substr(0, w.size() - 2);
    if (ends_with("s") && !ends_with("ss") && w.size() > 3) return w.substr(0, w.size() - 1);
    return w;
}

}  // namespace detail

// METEOR with exact and stem alignment stages (no synonym dictionary).
// F_mean = P R / (alpha P + (1-alpha) R); penalty = gamma (chunks/matches)^theta.
inline double meteor(const Tokens& hyp, const Tokens& ref, double alpha = 0.9, double gamma = 0.5,
                     double theta = 3.0) {
    if (hyp.empty() || ref.empty()) return 0.0;
    std::vector<int> hyp_match(hyp.size(), -1);
    std::vector<bool> ref_used(ref.size(), false);

    // stage 1: exact; stage 2: stem.  In-order greedy matching keeps the
    // alignment deterministic and yields one chunk for identical inputs.
    for (int stage = 0; stage < 2; ++stage) {
        for (std::size_t i = 0; i < hyp.size(); ++i) {
            if (hyp_match[i] >= 0) continue;
            for (std::size_t j = 0; j < ref.size(); ++j) {
                if (ref_used[j]) continue;
                const bool hit = stage == 0 ? hyp[i] == ref[j]
                                            : detail::stem(hyp[i]) == detail::stem(ref[j]);
                if (hit) {
                    hyp_match[i] = static_cast<int>(j);
                    ref_used[j] = true;
                    break;
                }
            }
        }
    }

    std::size_t m = 0;
    for (int j : hyp_match) m += j >= 0 ? 1 : 0;
    if (m == 0) return 0.0;

    const double p = static_cast<double>(m) / static_cast<double>(hyp.size());
    const double r = static_cast<double>(m) / static_cast<double>(ref.size());
    const double f_mean = p * r / (alpha * p + (1.0 - alpha) * r);

    std::size_t chunks = 0;
    int prev_ref = -2;
    for (std::size_t i = 0; i < hyp.size(); ++i) {
        if (hyp_match[i] < 0) continue;
        if (hyp_match[i] != prev_ref + 1) ++chunks;
        prev_ref = hyp_match[i];
    }
    const double penalty =
        gamma * std::pow(static_cast<double>(chunks) / static_cast<double>(m), theta);
    return f_mean * (1.0 - penalty);
}

// CIDEr: mean over n of TF-IDF cosine between hypothesis and reference,
// averaged over the corpus and scaled by 10.  IDF is computed over the
// reference set; nothing is added to document frequencies, so a
// single-example corpus has zero IDF everywhere and scores 0 (flagged).
struct CiderResult {
    double score = 0.0;
    bool degenerate_idf = false;
};

inline CiderResult cider(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs,
                         std::size_t max_n = 4) {
    if (hyps.size() != refs.size()) throw contract_error("cider: hypothesis/reference counts differ");
    if (hyps.empty()) return {};
    const double num_refs = static_cast<double>(refs.size());

    // document frequency per n-gram over references
    std::vector<std::unordered_map<std::string, std::size_t>> df(max_n);
    for (const auto& ref : refs) {
        for (std::size_t n = 1; n <= max_n; ++n) {
            for (auto& [g, c] : detail::ngram_counts(ref, n)) df[n - 1][g] += 1;
        }
    }
    auto idf = [&](std::size_t n, const std::string& g) {
        auto it = df[n - 1].find(g);
        const double d = it == df[n - 1].end() ? 1.0 : static_cast<double>(it->second);
        return std::log(num_refs / d);
    };

    CiderResult out;
    out.degenerate_idf = refs.size() == 1;
    double total = 0.0;
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        double per_example = 0.0;
        for (std::size_t n = 1; n <= max_n; ++n) {
            auto hc = detail::ngram_counts(hyps[i], n);
            auto rc = detail::ngram_counts(refs[i], n);
            double dot = 0.0, hn = 0.0, rn = 0.0;
            for (auto& [g, c] : hc) {
                const double w = static_cast<double>(c) * idf(n, g);
                hn += w * w;
                auto it = rc.find(g);
                if (it != rc.end()) dot += w * static_cast<double>(it->second) * idf(n, g);
            }
            for (auto& [g, c] : rc) {
                const double w = static_cast<double>(c) * idf(n, g);
                rn += w * w;
            }
            if (hn > 0.0 && rn > 0.0) per_example += dot / (std::sqrt(hn) * std::sqrt(rn));
        }
        total += per_example / static_cast<double>(max_n);
    }
    out.score = 10.0 * total / static_cast<double>(hyps.size());
    return out;
}

// ----------------------------- aggregate report -----------------------------

struct MetricReport {
    std::size_t count = 0;
    double corpus_bleu_score = 0.0;
    double cider_score = 0.0;
    double mean_sentence_bleu = 0.0;
    double mean_rouge_l = 0.0;
    double mean_meteor = 0.0;
    std::vector<double> sentence_bleu_scores;
    std::vector<double> rouge_l_scores;
    std::vector<double> meteor_scores;
    // configuration echoed into reports
    std::size_t max_n = 4;
    double rouge_beta = 1.2;
    std::string smoothing = "zero n-gram precisions replaced by 1/(2|hyp|)";
    bool cider_degenerate_idf = false;
};

inline MetricReport evaluate_texts(const std::vector<std::string>& hyps,
                                   const std::vector<std::string>& refs) {
    if (hyps.size() != refs.size())
        throw contract_error("evaluate_texts: hypothesis/reference counts differ");
    MetricReport rep;
    rep.count = hyps.size();
    std::vector<Tokens> ht, rt;
    ht.reserve(hyps.size());
    rt.reserve(refs.size());
    for (std::size_t i = 0; i < hyps.size(); ++i) {
        ht.push_back(eval_tokenize(hyps[i]));
        rt.push_back(eval_tokenize(refs[i]));
    }
    double sb = 0.0, rl = 0.0, mt = 0.0;
    for (std::size_t i = 0; i < ht.size(); ++i) {
        rep.sentence_bleu_scores.push_back(sentence_bleu(ht[i], rt[i], rep.max_n));
        rep.rouge_l_scores.push_back(rouge_l(ht[i], rt[i], rep.rouge_beta));
        rep.meteor_scores.push_back(meteor(ht[i], rt[i]));
        sb += rep.sentence_bleu_scores.back();
        rl += rep.rouge_l_scores.back();
        mt += rep.meteor_scores.back();
    }
    if (rep.count > 0) {
        rep.mean_sentence_bleu = sb / static_cast<double>(rep.count);
        rep.mean_rouge_l = rl / static_cast<double>(rep.count);
        rep.mean_meteor = mt / static_cast<double>(rep.count);
    }
    rep.corpus_bleu_score = corpus_bleu(ht, rt, rep.max_n);
    auto cd = cider(ht, rt, rep.max_n);
    rep.cider_score = cd.score;
    rep.cider_degenerate_idf = cd.degenerate_idf;
    return rep;
}

}  // namespace codesum
