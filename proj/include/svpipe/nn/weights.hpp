#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "svpipe/hash.hpp"
#include "svpipe/nn/models.hpp"

namespace svpipe::nn {

// On-disk layout (see docs/weights_format.md):
//   <stem>.json  manifest: format tag, ModelSpec, tensor directory, hash
//   <stem>.bin   every tensor's values as little-endian IEEE-754 binary32,
//                row-major, concatenated in directory order
inline constexpr const char* kWeightsFormat = "svpipe-weights";
inline constexpr int kWeightsVersion = 1;

namespace detail {

inline void put_f32_le(std::string& out, float v) {
    std::uint32_t u = 0;
    std::memcpy(&u, &v, sizeof u);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xffu));
}

inline float get_f32_le(const unsigned char* p) {
    std::uint32_t u = 0;
    for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    float v = 0;
    std::memcpy(&v, &u, sizeof v);
    return v;
}

inline std::string weights_hash(const nlohmann::json& spec, const nlohmann::json& tensors, const std::string& payload) {
    Fnv1a64 h;
    h.update(spec.dump());
    h.update("\n");
    h.update(tensors.dump());
    h.update("\n");
    h.update(payload);
    return "fnv1a64:" + h.hex();
}

inline std::filesystem::path payload_path(const std::filesystem::path& manifest) {
    auto p = manifest;
    p.replace_extension(".bin");
    return p;
}

}  // namespace detail

/// Writes `<stem>.json` + `<stem>.bin`. Values are stored as float32.
template <class T>
void save_weights(const Network<T>& net, const std::filesystem::path& manifest_path) {
    std::string payload;
    nlohmann::json tensors = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& p : net.parameters()) {
        for (T v : p.value.data) detail::put_f32_le(payload, static_cast<float>(v));
        tensors.push_back({{"name", p.name}, {"shape", p.value.shape}, {"offset", offset}, {"count", p.value.size()}});
        offset += p.value.size() * 4;
    }
    const nlohmann::json spec = net.spec();
    const auto bin = detail::payload_path(manifest_path);
    nlohmann::json manifest{{"format", kWeightsFormat},
                            {"version", kWeightsVersion},
                            {"spec", spec},
                            {"payload", bin.filename().string()},
                            {"payload_bytes", payload.size()},
                            {"tensors", tensors},
                            {"hash", detail::weights_hash(spec, tensors, payload)}};
    if (manifest_path.has_parent_path()) std::filesystem::create_directories(manifest_path.parent_path());
    std::ofstream b(bin, std::ios::binary);
    b.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    std::ofstream m(manifest_path);
    m << manifest.dump(2) << "\n";
    if (!b || !m) throw WeightsError("failed to write weights to " + manifest_path.string());
}

/// Loads and verifies a weight file. Refuses on format, hash, tensor layout or
/// (when `expected` is given) ModelSpec mismatch.
template <class T>
std::unique_ptr<Network<T>> load_weights(const std::filesystem::path& manifest_path,
                                         const std::optional<ModelSpec>& expected = std::nullopt) {
    std::ifstream m(manifest_path);
    if (!m) throw WeightsError("cannot open weights manifest " + manifest_path.string());
    nlohmann::json manifest;
    try {
        m >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw WeightsError("malformed weights manifest " + manifest_path.string() + ": " + e.what());
    }
    if (manifest.value("format", "") != kWeightsFormat || manifest.value("version", 0) != kWeightsVersion)
        throw WeightsError("unsupported weights format in " + manifest_path.string());
    ModelSpec spec;
    try {
        spec = manifest.at("spec").get<ModelSpec>();
    } catch (const std::exception& e) {
        throw WeightsError(std::string("invalid model spec in manifest: ") + e.what());
    }
    if (expected && !(*expected == spec))
        throw WeightsError("weights in " + manifest_path.string() + " were saved for a different model spec (" +
                           nlohmann::json(spec).dump() + " vs expected " + nlohmann::json(*expected).dump() + ")");

    const auto bin = manifest_path.parent_path() / manifest.at("payload").get<std::string>();
    std::ifstream b(bin, std::ios::binary);
    if (!b) throw WeightsError("cannot open weights payload " + bin.string());
    const std::string payload((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    if (payload.size() != manifest.at("payload_bytes").get<std::size_t>())
        throw WeightsError("weights payload size mismatch for " + bin.string());
    const auto& tensors = manifest.at("tensors");
    if (detail::weights_hash(manifest.at("spec"), tensors, payload) != manifest.at("hash").get<std::string>())
        throw WeightsError("weights content hash mismatch for " + manifest_path.string());

    auto net = make_network<T>(spec, 0);
    auto& params = net->parameters();
    if (tensors.size() != params.size()) throw WeightsError("tensor count does not match the model spec");
    const auto* bytes = reinterpret_cast<const unsigned char*>(payload.data());
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& t = tensors[i];
        if (t.at("name").get<std::string>() != params[i].name ||
            t.at("shape").get<std::vector<int>>() != params[i].value.shape)
            throw WeightsError("tensor " + std::to_string(i) + " (" + t.at("name").get<std::string>() +
                               ") does not match the model layout");
        const auto off = t.at("offset").get<std::size_t>();
        const auto count = t.at("count").get<std::size_t>();
        if (count != params[i].value.size() || off + count * 4 > payload.size())
            throw WeightsError("tensor " + params[i].name + " lies outside the payload");
        for (std::size_t k = 0; k < count; ++k)
            params[i].value.data[k] = static_cast<T>(detail::get_f32_le(bytes + off + 4 * k));
    }
    return net;
}

}  // namespace svpipe::nn
