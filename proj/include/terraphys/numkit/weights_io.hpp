#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "terraphys/common.hpp"
#include "terraphys/numkit/tensor.hpp"

namespace terraphys::numkit {

// Weight file layout: magic "TPW1", u32 LE header byte length, JSON header
// {"arrays":[{"name":...,"shape":[...]}...]}, then float32 LE payloads in
// header order. Offsets are implicit from the shapes.
using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline void save_weights(const std::string& path, const NamedTensors& arrays) {
    nlohmann::json header;
    header["arrays"] = nlohmann::json::array();
    for (const auto& [name, t] : arrays) {
        nlohmann::json entry;
        entry["name"] = name;
        entry["shape"] = t.shape;
        header["arrays"].push_back(entry);
    }
    const std::string header_str = header.dump();
    if (header_str.size() > 0xffffffffu) fail("save-weights: header too large");

    std::ofstream out(path, std::ios::binary);
    if (!out) fail("save-weights: cannot open ", path);
    out.write("TPW1", 4);
    const std::uint32_t hlen = static_cast<std::uint32_t>(header_str.size());
    char lenbuf[4];
    lenbuf[0] = static_cast<char>(hlen & 0xff);
    lenbuf[1] = static_cast<char>((hlen >> 8) & 0xff);
    lenbuf[2] = static_cast<char>((hlen >> 16) & 0xff);
    lenbuf[3] = static_cast<char>((hlen >> 24) & 0xff);
    out.write(lenbuf, 4);
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));

    std::vector<float> buf;
    for (const auto& [name, t] : arrays) {
        buf.resize(t.values.size());
        for (std::size_t i = 0; i < t.values.size(); ++i)
            buf[i] = static_cast<float>(t.values[i]);
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!out) fail("save-weights: write failed for ", path);
}

inline NamedTensors load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("load-weights: cannot open ", path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "TPW1", 4) != 0)
        fail("load-weights: bad magic in ", path);
    char lenbuf[4];
    in.read(lenbuf, 4);
    if (!in) fail("load-weights: truncated header length in ", path);
    const std::uint32_t hlen =
        (static_cast<std::uint32_t>(static_cast<unsigned char>(lenbuf[0]))) |
        (static_cast<std::uint32_t>(static_cast<unsigned char>(lenbuf[1])) << 8) |
        (static_cast<std::uint32_t>(static_cast<unsigned char>(lenbuf[2])) << 16) |
        (static_cast<std::uint32_t>(static_cast<unsigned char>(lenbuf[3])) << 24);
    std::string header_str(hlen, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(hlen));
    if (!in) fail("load-weights: truncated header in ", path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_str);
    } catch (const std::exception& e) {
        fail("load-weights: invalid header JSON in ", path, ": ", e.what());
    }
    if (!header.contains("arrays") || !header["arrays"].is_array())
        fail("load-weights: header missing arrays list in ", path);

    NamedTensors arrays;
    std::vector<float> buf;
    for (const auto& entry : header["arrays"]) {
        const std::string name = entry.at("name").get<std::string>();
        const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
        std::size_t count = 1;
        for (int d : shape) {
            if (d <= 0) fail("load-weights: bad dimension in array ", name);
            count *= static_cast<std::size_t>(d);
        }
        buf.resize(count);
        in.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(count * sizeof(float)));
        if (!in) fail("load-weights: truncated payload for array ", name, " in ", path);
        Tensor t;
        t.shape = shape;
        t.values.resize(count);
        for (std::size_t i = 0; i < count; ++i)
            t.values[i] = static_cast<double>(buf[i]);
        arrays.emplace_back(name, std::move(t));
    }
    return arrays;
}

// FNV-1a over the raw file bytes; used to tag weight snapshots.
inline std::uint64_t file_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail("checksum: cannot open ", path);
    std::uint64_t h = 1469598103934665603ull;
    char chunk[4096];
    while (in.read(chunk, sizeof(chunk)) || in.gcount() > 0) {
        const std::streamsize got = in.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            h ^= static_cast<unsigned char>(chunk[i]);
            h *= 1099511628211ull;
        }
        if (got < static_cast<std::streamsize>(sizeof(chunk))) break;
    }
    return h;
}

} // namespace terraphys::numkit
