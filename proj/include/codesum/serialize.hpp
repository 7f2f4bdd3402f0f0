#pragma once

// Parameter container file: a JSON manifest (names, shapes, dtype, offsets)
// followed by one little-endian float32 blob.
//
//   magic "CSTC" | u32 format_version | u64 manifest_len | manifest | blob
//
// Training runs in 64-bit; containers store 32-bit values.

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "codesum/common.hpp"
#include "codesum/tensor.hpp"

namespace codesum {

inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr char kContainerMagic[5] = "CSTC";

struct NamedTensor {
    std::string name;
    Shape shape;
    std::vector<double> data;
};

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open file: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return buf;
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw data_error("cannot open file for writing: " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw data_error("write failed: " + path);
}

inline std::string encode_container(const std::vector<NamedTensor>& tensors) {
    nlohmann::json manifest;
    manifest["format_version"] = kContainerVersion;
    nlohmann::json list = nlohmann::json::array();
    std::string blob;
    for (const auto& t : tensors) {
        nlohmann::json e;
        e["name"] = t.name;
        e["shape"] = t.shape;
        e["dtype"] = "f32";
        e["offset"] = blob.size();
        e["count"] = t.data.size();
        if (shape_numel(t.shape) != t.data.size())
            throw contract_error("encode_container: shape/data mismatch for " + t.name);
        for (double v : t.data) put_f32(blob, static_cast<float>(v));
        list.push_back(std::move(e));
    }
    manifest["tensors"] = std::move(list);
    const std::string mstr = manifest.dump();

    std::string out;
    out.append(kContainerMagic, 4);
    put_u32(out, kContainerVersion);
    put_u64(out, mstr.size());
    out += mstr;
    out += blob;
    return out;
}

inline std::vector<NamedTensor> decode_container(const std::string& bytes, const std::string& what) {
    ByteReader r(bytes, what);
    if (r.get_bytes(4) != std::string(kContainerMagic, 4))
        throw data_error(what + ": bad magic, not a parameter container");
    const std::uint32_t version = r.get_u32();
    if (version != kContainerVersion)
        throw data_error(what + ": unsupported container version " + std::to_string(version));
    const std::uint64_t mlen = r.get_u64();
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(r.get_bytes(mlen));
    } catch (const nlohmann::json::exception& e) {
        throw data_error(what + ": bad manifest: " + e.what());
    }
    const std::size_t blob_start = r.pos();

    std::vector<NamedTensor> out;
    for (const auto& e : manifest.at("tensors")) {
        NamedTensor t;
        t.name = e.at("name").get<std::string>();
        t.shape = e.at("shape").get<Shape>();
        const std::size_t offset = e.at("offset").get<std::size_t>();
        const std::size_t count = e.at("count").get<std::size_t>();
        if (count != shape_numel(t.shape)) throw data_error(what + ": manifest shape/count mismatch");
        if (e.at("dtype").get<std::string>() != "f32") throw data_error(what + ": unsupported dtype");
        if (blob_start + offset + 4 * count > bytes.size()) throw data_error(what + ": blob out of range");
        t.data.resize(count);
        ByteReader br(bytes, what);
        br.get_bytes(blob_start + offset);  // skip
        for (std::size_t i = 0; i < count; ++i) t.data[i] = static_cast<double>(br.get_f32());
        out.push_back(std::move(t));
    }
    return out;
}

inline void write_container(const std::string& path, const std::vector<NamedTensor>& tensors) {
    write_file_bytes(path, encode_container(tensors));
}

inline std::vector<NamedTensor> read_container(const std::string& path) {
    return decode_container(read_file_bytes(path), path);
}

}  // namespace codesum
