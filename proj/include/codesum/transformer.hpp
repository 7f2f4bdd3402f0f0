#pragma once

// Mini encoder-decoder transformer.  Pre-LN blocks, sinusoidal positions,
// one token embedding shared by the encoder, the decoder, and the output
// projection.  The encoder exposes per-token states plus a pooled embedding
// (mean over non-pad positions) used for retrieval.

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "codesum/ops.hpp"
#include "codesum/optim.hpp"
#include "codesum/serialize.hpp"
#include "codesum/vocab.hpp"

namespace codesum {

struct TransformerConfig {
    std::size_t d_model = 128;
    std::size_t n_heads = 4;
    std::size_t n_enc_layers = 2;
    std::size_t n_dec_layers = 2;
    std::size_t ff_dim = 512;
    std::size_t vocab_size = 0;  // set from the vocabulary
    std::size_t max_src_len = 256;
    std::size_t max_tgt_len = 64;
    double dropout_p = 0.1;

    void validate() const {
        if (d_model == 0 || n_heads == 0 || ff_dim == 0 || vocab_size == 0)
            throw config_error("model config: dimensions must be positive");
        if (d_model % n_heads != 0)
            throw config_error("model config: d_model must be divisible by n_heads");
        if (max_src_len < 2 || max_tgt_len < 2)
            throw config_error("model config: sequence limits must be at least 2");
        if (dropout_p < 0.0 || dropout_p >= 1.0)
            throw config_error("model config: dropout_p must be in [0, 1)");
    }
};

struct EncoderOutput {
    Tensor states;               // [T x d_model]
    Tensor pooled;               // [d_model], mean over non-pad positions
    std::vector<bool> pad_mask;  // true where the token is <pad>
};

namespace detail {

struct AttnParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct LnParams {
    Tensor gain, bias;
};

struct FfnParams {
    Tensor w1, b1, w2, b2;
};

struct EncLayerParams {
    LnParams ln1;
    AttnParams attn;
    LnParams ln2;
    FfnParams ffn;
};

struct DecLayerParams {
    LnParams ln1;
    AttnParams self_attn;
    LnParams ln2;
    AttnParams cross_attn;
    LnParams ln3;
    FfnParams ffn;
};

// sinusoidal positional table, [max_len x d]
inline Tensor positional_table(std::size_t max_len, std::size_t d) {
    std::vector<double> pe(max_len * d, 0.0);
    for (std::size_t pos = 0; pos < max_len; ++pos) {
        for (std::size_t i = 0; i < d; i += 2) {
            const double angle =
                static_cast<double>(pos) /
                std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
            pe[pos * d + i] = std::sin(angle);
            if (i + 1 < d) pe[pos * d + i + 1] = std::cos(angle);
        }
    }
    return Tensor::from({max_len, d}, std::move(pe));
}

}  // namespace detail

class Transformer {
public:
    Transformer(TransformerConfig config, std::uint64_t init_seed) : cfg_(config) {
        cfg_.validate();
        Rng rng(derive_seed(init_seed, "param-init"));
        const std::size_t d = cfg_.d_model;

        embed_ = make_param("embed.weight", {cfg_.vocab_size, d}, rng);
        enc_layers_.resize(cfg_.n_enc_layers);
        for (std::size_t l = 0; l < cfg_.n_enc_layers; ++l) {
            const std::string p = "enc." + std::to_string(l) + ".";
            auto& lay = enc_layers_[l];
            lay.ln1 = make_ln(p + "ln1", rng);
            lay.attn = make_attn(p + "attn", rng);
            lay.ln2 = make_ln(p + "ln2", rng);
            lay.ffn = make_ffn(p + "ffn", rng);
        }
        enc_final_ln_ = make_ln("enc.final_ln", rng);
        dec_layers_.resize(cfg_.n_dec_layers);
        for (std::size_t l = 0; l < cfg_.n_dec_layers; ++l) {
            const std::string p = "dec." + std::to_string(l) + ".";
            auto& lay = dec_layers_[l];
            lay.ln1 = make_ln(p + "ln1", rng);
            lay.self_attn = make_attn(p + "self_attn", rng);
            lay.ln2 = make_ln(p + "ln2", rng);
            lay.cross_attn = make_attn(p + "cross_attn", rng);
            lay.ln3 = make_ln(p + "ln3", rng);
            lay.ffn = make_ffn(p + "ffn", rng);
        }
        dec_final_ln_ = make_ln("dec.final_ln", rng);

        pos_table_ = detail::positional_table(std::max(cfg_.max_src_len, cfg_.max_tgt_len) + 1, d);
    }

    const TransformerConfig& config() const { return cfg_; }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> out;
        out.reserve(params_.size());
        for (const auto& [name, t] : params_) out.push_back(t);
        return out;
    }

    const std::vector<std::pair<std::string, Tensor>>& named_parameters() const { return params_; }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : params_) n += t.numel();
        return n;
    }

    void zero_grad() const {
        for (const auto& [name, t] : params_) const_cast<Tensor&>(t).zero_grad();
    }

    std::vector<NamedTensor> export_parameters() const {
        std::vector<NamedTensor> out;
        out.reserve(params_.size());
        for (const auto& [name, t] : params_) out.push_back({name, t.shape(), t.values()});
        return out;
    }

    void import_parameters(const std::vector<NamedTensor>& tensors) {
        std::unordered_map<std::string, const NamedTensor*> by_name;
        for (const auto& t : tensors) by_name[t.name] = &t;
        for (auto& [name, param] : params_) {
            auto it = by_name.find(name);
            if (it == by_name.end()) throw data_error("checkpoint: missing parameter '" + name + "'");
            if (it->second->shape != param.shape())
                throw data_error("checkpoint: shape mismatch for '" + name + "'");
            param.values() = it->second->data;
        }
        if (by_name.size() != params_.size())
            throw data_error("checkpoint: unexpected extra parameters");
    }

    // Identity of the embedding function: config, vocab size, and the live
    // 64-bit parameter values.  Retrieval indices record this value.
    std::uint64_t encoder_fingerprint() const {
        Fnv1a64 h;
        h.update_u64(cfg_.d_model);
        h.update_u64(cfg_.n_heads);
        h.update_u64(cfg_.n_enc_layers);
        h.update_u64(cfg_.n_dec_layers);
        h.update_u64(cfg_.ff_dim);
        h.update_u64(cfg_.vocab_size);
        for (const auto& [name, t] : params_) {
            h.update(name);
            for (double v : t.values()) h.update_f64(v);
        }
        return h.digest();
    }

    // ----------------------------- encoder -----------------------------

    // Deterministic given (parameters, tokens, train_mode, dropout_seed); in
    // train mode two seeds yield two stochastic views of the same input.
    EncoderOutput encode(const TokenSequence& tokens, bool train_mode = false,
                         std::uint64_t dropout_seed = 0) const {
        Rng rng(derive_seed(dropout_seed, "encoder-dropout"));
        return encode_with_rng(tokens, train_mode, rng);
    }

    // ----------------------------- teacher forcing -----------------------------

    // Logits for predicting tgt[1..]; row i conditions on tgt[0..i] and src.
    Tensor forward_teacher_forced(const TokenSequence& src, const TokenSequence& tgt,
                                  bool train_mode = false, std::uint64_t dropout_seed = 0) const {
        if (tgt.size() < 2) throw contract_error("forward_teacher_forced: target too short");
        if (tgt.ids.front() != Vocabulary::kBos)
            throw contract_error("forward_teacher_forced: target must begin with <bos>");
        Rng rng(derive_seed(dropout_seed, "model-dropout"));
        EncoderOutput enc = encode_with_rng(src, train_mode, rng);
        std::vector<int> dec_input(tgt.ids.begin(), tgt.ids.end() - 1);
        Tensor states = decoder_states(enc, dec_input, train_mode, rng);
        return output_logits(states);
    }

    // Decoder stack over a prefix with cross-attention into enc.
    Tensor decoder_states(const EncoderOutput& enc, const std::vector<int>& dec_input,
                          bool train_mode, Rng& rng) const {
        if (dec_input.empty()) throw contract_error("decoder_states: empty decoder input");
        if (dec_input.size() > cfg_.max_tgt_len)
            throw contract_error("decoder_states: decoder input exceeds max_tgt_len");
        const std::size_t t = dec_input.size();
        const std::size_t s = enc.pad_mask.size();

        Tensor x = embed_sequence(dec_input, train_mode, rng);

        // causal self-attention mask; pad keys excluded
        std::vector<bool> causal(t * t, false);
        for (std::size_t i = 0; i < t; ++i)
            for (std::size_t j = 0; j <= i; ++j)
                causal[i * t + j] = dec_input[j] != Vocabulary::kPad || j == i;
        std::vector<bool> cross(t * s, false);
        for (std::size_t i = 0; i < t; ++i)
            for (std::size_t j = 0; j < s; ++j) cross[i * s + j] = !enc.pad_mask[j];

        for (const auto& lay : dec_layers_) {
            Tensor h = layer_norm(x, lay.ln1.gain, lay.ln1.bias);
            x = add(x, maybe_dropout(attention(lay.self_attn, h, h, causal), train_mode, rng));
            h = layer_norm(x, lay.ln2.gain, lay.ln2.bias);
            x = add(x, maybe_dropout(attention(lay.cross_attn, h, enc.states, cross),
                                     train_mode, rng));
            h = layer_norm(x, lay.ln3.gain, lay.ln3.bias);
            x = add(x, maybe_dropout(ffn(lay.ffn, h), train_mode, rng));
        }
        return layer_norm(x, dec_final_ln_.gain, dec_final_ln_.bias);
    }

    // Tied output projection: logits = states * embed^T
    Tensor output_logits(const Tensor& states) const { return matmul(states, transpose(embed_)); }

    const Tensor& embedding() const { return embed_; }

private:
    Tensor make_param(const std::string& name, Shape shape, Rng& rng) {
        std::vector<double> data(shape_numel(shape));
        for (auto& v : data) v = rng.gaussian() * 0.02;
        Tensor t = Tensor::from(std::move(shape), std::move(data), true);
        params_.emplace_back(name, t);
        return t;
    }

    Tensor make_const_param(const std::string& name, Shape shape, double value) {
        Tensor t = Tensor::filled(std::move(shape), value, true);
        params_.emplace_back(name, t);
        return t;
    }

    detail::LnParams make_ln(const std::string& prefix, Rng&) {
        detail::LnParams ln;
        ln.gain = make_const_param(prefix + ".gain", {cfg_.d_model}, 1.0);
        ln.bias = make_const_param(prefix + ".bias", {cfg_.d_model}, 0.0);
        return ln;
    }

    detail::AttnParams make_attn(const std::string& prefix, Rng& rng) {
        detail::AttnParams a;
        const std::size_t d = cfg_.d_model;
        a.wq = make_param(prefix + ".wq", {d, d}, rng);
        a.bq = make_const_param(prefix + ".bq", {d}, 0.0);
        a.wk = make_param(prefix + ".wk", {d, d}, rng);
        a.bk = make_const_param(prefix + ".bk", {d}, 0.0);
        a.wv = make_param(prefix + ".wv", {d, d}, rng);
        a.bv = make_const_param(prefix + ".bv", {d}, 0.0);
        a.wo = make_param(prefix + ".wo", {d, d}, rng);
        a.bo = make_const_param(prefix + ".bo", {d}, 0.0);
        return a;
    }

    detail::FfnParams make_ffn(const std::string& prefix, Rng& rng) {
        detail::FfnParams f;
        f.w1 = make_param(prefix + ".w1", {cfg_.d_model, cfg_.ff_dim}, rng);
        f.b1 = make_const_param(prefix + ".b1", {cfg_.ff_dim}, 0.0);
        f.w2 = make_param(prefix + ".w2", {cfg_.ff_dim, cfg_.d_model}, rng);
        f.b2 = make_const_param(prefix + ".b2", {cfg_.d_model}, 0.0);
        return f;
    }

    Tensor maybe_dropout(const Tensor& x, bool train_mode, Rng& rng) const {
        if (!train_mode || cfg_.dropout_p == 0.0) return x;
        return dropout(x, cfg_.dropout_p, rng);
    }

    Tensor embed_sequence(const std::vector<int>& ids, bool train_mode, Rng& rng) const {
        Tensor x = scale(rows_gather(embed_, ids), std::sqrt(static_cast<double>(cfg_.d_model)));
        x = add(x, slice_rows(pos_table_, 0, ids.size()));
        return maybe_dropout(x, train_mode, rng);
    }

    Tensor attention(const detail::AttnParams& p, const Tensor& xq, const Tensor& xkv,
                     const std::vector<bool>& allowed) const {
        const std::size_t heads = cfg_.n_heads;
        const std::size_t dh = cfg_.d_model / heads;
        Tensor q = add_rowvec(matmul(xq, p.wq), p.bq);
        Tensor k = add_rowvec(matmul(xkv, p.wk), p.bk);
        Tensor v = add_rowvec(matmul(xkv, p.wv), p.bv);
        std::vector<Tensor> ctx;
        ctx.reserve(heads);
        const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
        for (std::size_t h = 0; h < heads; ++h) {
            Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
            Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
            Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
            Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
            Tensor attn = masked_softmax_rows(scores, allowed);
            ctx.push_back(matmul(attn, vh));
        }
        return add_rowvec(matmul(concat_cols(ctx), p.wo), p.bo);
    }

    Tensor ffn(const detail::FfnParams& p, const Tensor& x) const {
        return add_rowvec(matmul(gelu(add_rowvec(matmul(x, p.w1), p.b1)), p.w2), p.b2);
    }

    EncoderOutput encode_with_rng(const TokenSequence& tokens, bool train_mode, Rng& rng) const {
        if (tokens.empty()) throw contract_error("encode: empty token sequence");
        if (tokens.size() > cfg_.max_src_len)
            throw contract_error("encode: input exceeds max_src_len; caller must truncate");
        const std::size_t t = tokens.size();
        std::vector<bool> pad_mask(t, false);
        std::size_t non_pad = 0;
        for (std::size_t i = 0; i < t; ++i) {
            pad_mask[i] = tokens.ids[i] == Vocabulary::kPad;
            non_pad += pad_mask[i] ? 0 : 1;
        }
        if (non_pad == 0) throw contract_error("encode: all-pad input");

        Tensor x = embed_sequence(tokens.ids, train_mode, rng);

        std::vector<bool> allowed(t * t, false);
        for (std::size_t i = 0; i < t; ++i)
            for (std::size_t j = 0; j < t; ++j) allowed[i * t + j] = !pad_mask[j] || i == j;

        for (const auto& lay : enc_layers_) {
            Tensor h = layer_norm(x, lay.ln1.gain, lay.ln1.bias);
            x = add(x, maybe_dropout(attention(lay.attn, h, h, allowed), train_mode, rng));
            h = layer_norm(x, lay.ln2.gain, lay.ln2.bias);
            x = add(x, maybe_dropout(ffn(lay.ffn, h), train_mode, rng));
        }
        EncoderOutput out;
        out.states = layer_norm(x, enc_final_ln_.gain, enc_final_ln_.bias);
        std::vector<bool> include(t);
        for (std::size_t i = 0; i < t; ++i) include[i] = !pad_mask[i];
        out.pooled = mean_rows_masked(out.states, include);
        out.pad_mask = std::move(pad_mask);
        return out;
    }

    TransformerConfig cfg_;
    Tensor embed_;
    std::vector<detail::EncLayerParams> enc_layers_;
    detail::LnParams enc_final_ln_;
    std::vector<detail::DecLayerParams> dec_layers_;
    detail::LnParams dec_final_ln_;
    Tensor pos_table_;
    std::vector<std::pair<std::string, Tensor>> params_;
};

}  // namespace codesum
