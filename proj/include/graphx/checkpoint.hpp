#pragma once

// Binary checkpoint:
//   8 bytes  magic "GRPHXCKP"
//   u32      format version
//   u64      config hash
//   u64      header length L
//   L bytes  JSON header {config, parameters: [{name, shape}], extra}
//   doubles  every registry tensor in order, little-endian IEEE-754
// All integers are little-endian.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "graphx/pipeline.hpp"

namespace graphx {

inline constexpr std::array<char, 8> kCheckpointMagic{'G', 'R', 'P', 'H', 'X', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw ValidationError("checkpoint is truncated");
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    pos += sizeof(T);
    return v;
}

}  // namespace detail

struct Checkpoint {
    Model model;
    nlohmann::json extra;  // free-form metadata (seed, episodes, ...)
};

inline std::string serialize_checkpoint(const Model& m, const nlohmann::json& extra = nlohmann::json::object()) {
    nlohmann::json header;
    header["config"] = to_json(m.config);
    header["parameters"] = nlohmann::json::array();
    const auto reg = m.registry();
    for (const auto& [name, t] : reg) header["parameters"].push_back({{"name", name}, {"shape", t.shape()}});
    header["extra"] = extra;
    const std::string text = header.dump();

    std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
    detail::put_le<std::uint32_t>(out, kCheckpointVersion);
    detail::put_le<std::uint64_t>(out, config_hash(m.config));
    detail::put_le<std::uint64_t>(out, text.size());
    out += text;
    for (const auto& [_, t] : reg)
        for (double v : t.values()) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
    if (bytes.size() < kCheckpointMagic.size() ||
        std::memcmp(bytes.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0) {
        throw ValidationError("not a graphx checkpoint (bad magic)");
    }
    std::size_t pos = kCheckpointMagic.size();
    const auto version = detail::get_le<std::uint32_t>(bytes, pos);
    if (version != kCheckpointVersion) throw ValidationError("unsupported checkpoint version " + std::to_string(version));
    const auto hash = detail::get_le<std::uint64_t>(bytes, pos);
    const auto len = detail::get_le<std::uint64_t>(bytes, pos);
    if (pos + len > bytes.size()) throw ValidationError("checkpoint is truncated");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.substr(pos, len));
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(std::string("checkpoint header: ") + e.what());
    }
    pos += len;
    ModelConfig config;
    update_from_json(config, header.at("config"));
    if (config_hash(config) != hash) throw ValidationError("checkpoint config hash does not match its header");
    Checkpoint ck{Model::init(config, 0), header.value("extra", nlohmann::json::object())};
    const auto reg = ck.model.registry();
    const auto& params = header.at("parameters");
    if (params.size() != reg.size()) throw ValidationError("checkpoint parameter list does not match the model");
    for (std::size_t k = 0; k < reg.size(); ++k) {
        auto& [name, t] = reg[k];
        if (params[k].at("name").get<std::string>() != name ||
            params[k].at("shape").get<std::vector<std::size_t>>() != t.shape()) {
            throw ValidationError("checkpoint parameter '" + params[k].at("name").get<std::string>() +
                                  "' does not match the model layout");
        }
        Tensor dst = t;
        for (auto& v : dst.mutable_values()) v = std::bit_cast<double>(detail::get_le<std::uint64_t>(bytes, pos));
    }
    if (pos != bytes.size()) throw ValidationError("checkpoint has trailing bytes");
    return ck;
}

inline void save_checkpoint(const Model& m, const std::string& path, const nlohmann::json& extra = nlohmann::json::object()) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot write '" + path + "'");
    const auto bytes = serialize_checkpoint(m, extra);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw ValidationError("failed writing '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ValidationError("cannot read checkpoint '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(bytes);
}

}  // namespace graphx
