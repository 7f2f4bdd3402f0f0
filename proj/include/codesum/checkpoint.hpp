#pragma once

// Model checkpoint: parameter container + TransformerConfig + Vocabulary +
// phase tag + fingerprints, one file.
//
//   magic "CSCK" | u32 version | u64 header_len | header JSON | f32 blob
//
// The integrity fingerprint covers the phase, config, vocabulary, and the
// stored f32 bytes; it is recomputed and verified on load.  Phase tags form
// the chain init -> pretrain -> finetune -> refine.

#include <string>
#include <vector>

#include <json.hpp>

#include "codesum/serialize.hpp"
#include "codesum/transformer.hpp"

namespace codesum {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[5] = "CSCK";

inline const std::vector<std::string>& phase_chain() {
    static const std::vector<std::string> chain = {"init", "pretrain", "finetune", "refine"};
    return chain;
}

inline bool phase_precedes(const std::string& parent, const std::string& child) {
    const auto& chain = phase_chain();
    std::ptrdiff_t pi = -1, ci = -1;
    for (std::size_t i = 0; i < chain.size(); ++i) {
        if (chain[i] == parent) pi = static_cast<std::ptrdiff_t>(i);
        if (chain[i] == child) ci = static_cast<std::ptrdiff_t>(i);
    }
    return pi >= 0 && ci >= 0 && pi < ci;
}

namespace detail {

inline nlohmann::json config_to_json(const TransformerConfig& c) {
    nlohmann::json j;
    j["d_model"] = c.d_model;
    j["n_heads"] = c.n_heads;
    j["n_enc_layers"] = c.n_enc_layers;
    j["n_dec_layers"] = c.n_dec_layers;
    j["ff_dim"] = c.ff_dim;
    j["vocab_size"] = c.vocab_size;
    j["max_src_len"] = c.max_src_len;
    j["max_tgt_len"] = c.max_tgt_len;
    j["dropout_p"] = c.dropout_p;
    return j;
}

inline TransformerConfig config_from_json(const nlohmann::json& j) {
    TransformerConfig c;
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.n_enc_layers = j.at("n_enc_layers").get<std::size_t>();
    c.n_dec_layers = j.at("n_dec_layers").get<std::size_t>();
    c.ff_dim = j.at("ff_dim").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_src_len = j.at("max_src_len").get<std::size_t>();
    c.max_tgt_len = j.at("max_tgt_len").get<std::size_t>();
    c.dropout_p = j.at("dropout_p").get<double>();
    return c;
}

inline std::uint64_t checkpoint_fingerprint(const std::string& phase, const nlohmann::json& config,
                                            const Vocabulary& vocab, const std::string& blob) {
    Fnv1a64 h;
    h.update_u64(kCheckpointVersion);
    h.update(phase);
    h.update(config.dump());
    for (const auto& tok : vocab.tokens()) {
        h.update(tok);
        h.update("\x1f");
    }
    h.update_u64(vocab.min_frequency());
    h.update(blob);
    return h.digest();
}

}  // namespace detail

struct Checkpoint {
    Transformer model;
    Vocabulary vocab;
    std::string phase;
    std::uint64_t fingerprint = 0;
    std::uint64_t parent_fingerprint = 0;
};

// Writes the checkpoint and returns its fingerprint.
inline std::uint64_t save_checkpoint(const std::string& path, const Transformer& model,
                                     const Vocabulary& vocab, const std::string& phase,
                                     std::uint64_t parent_fingerprint) {
    bool known = false;
    for (const auto& p : phase_chain()) known = known || p == phase;
    if (!known) throw contract_error("save_checkpoint: unknown phase '" + phase + "'");

    // container body reused for the blob so offsets come from one place
    const std::string container = encode_container(model.export_parameters());
    const nlohmann::json config = detail::config_to_json(model.config());
    const std::uint64_t fp = detail::checkpoint_fingerprint(phase, config, vocab, container);

    nlohmann::json header;
    header["format_version"] = kCheckpointVersion;
    header["phase"] = phase;
    header["fingerprint"] = fp;
    header["parent_fingerprint"] = parent_fingerprint;
    header["config"] = config;
    header["vocab"]["tokens"] = vocab.tokens();
    header["vocab"]["min_frequency"] = vocab.min_frequency();
    const std::string hstr = header.dump();

    std::string out;
    out.append(kCheckpointMagic, 4);
    put_u32(out, kCheckpointVersion);
    put_u64(out, hstr.size());
    out += hstr;
    out += container;
    write_file_bytes(path, out);
    return fp;
}

inline Checkpoint load_checkpoint(const std::string& path) {
    const std::string bytes = read_file_bytes(path);
    ByteReader r(bytes, path);
    if (r.get_bytes(4) != std::string(kCheckpointMagic, 4))
        throw data_error(path + ": bad magic, not a checkpoint");
    if (r.get_u32() != kCheckpointVersion)
        throw data_error(path + ": unsupported checkpoint version");
    const std::uint64_t hlen = r.get_u64();
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(r.get_bytes(hlen));
    } catch (const nlohmann::json::exception& e) {
        throw data_error(path + ": bad checkpoint header: " + e.what());
    }
    const std::string container = bytes.substr(r.pos());

    const std::string phase = header.at("phase").get<std::string>();
    const nlohmann::json config_json = header.at("config");
    Vocabulary vocab = Vocabulary::from_tokens(
        header.at("vocab").at("tokens").get<std::vector<std::string>>(),
        header.at("vocab").at("min_frequency").get<std::size_t>());

    const std::uint64_t stored_fp = header.at("fingerprint").get<std::uint64_t>();
    const std::uint64_t actual_fp =
        detail::checkpoint_fingerprint(phase, config_json, vocab, container);
    if (stored_fp != actual_fp)
        throw data_error(path + ": fingerprint mismatch, checkpoint corrupt or tampered");

    TransformerConfig cfg = detail::config_from_json(config_json);
    Checkpoint ckpt{Transformer(cfg, 0), std::move(vocab), phase, stored_fp,
                    header.at("parent_fingerprint").get<std::uint64_t>()};
    ckpt.model.import_parameters(decode_container(container, path));
    return ckpt;
}

}  // namespace codesum
