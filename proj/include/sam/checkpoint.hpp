#pragma once
// Single-file archive of named double arrays plus a plain-text metadata
// record. Arrays round-trip bit-exactly (raw little-endian doubles).
//
// Layout: "SAMC" | u32 format version | u64 meta bytes | meta (key=value
// lines) | u32 array count | per array: u32 name len, name, u32 ndim,
// u64 dims..., f64 data.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "sam/tensor.hpp"

namespace sam {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::map<std::string, Tensor> arrays;
    std::map<std::string, std::string> meta;

    const Tensor& array(const std::string& name) const {
        auto it = arrays.find(name);
        if (it == arrays.end()) throw std::runtime_error("checkpoint: missing array " + name);
        return it->second;
    }
    const std::string& meta_at(const std::string& key) const {
        auto it = meta.find(key);
        if (it == meta.end()) throw std::runtime_error("checkpoint: missing meta key " + key);
        return it->second;
    }
    bool has_meta(const std::string& key) const { return meta.count(key) > 0; }
};

namespace detail {

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

inline std::string encode_meta(const std::map<std::string, std::string>& meta) {
    std::ostringstream os;
    for (const auto& [k, v] : meta) {
        if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos)
            throw std::invalid_argument("checkpoint meta: key contains '=' or newline");
        std::string enc = v;
        std::size_t pos = 0;
        while ((pos = enc.find('\n', pos)) != std::string::npos) {
            enc.replace(pos, 1, "\\n");
            pos += 2;
        }
        os << k << "=" << enc << "\n";
    }
    return os.str();
}

inline std::map<std::string, std::string> decode_meta(const std::string& text) {
    std::map<std::string, std::string> meta;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error("checkpoint meta: malformed line");
        std::string val = line.substr(eq + 1);
        std::size_t pos = 0;
        while ((pos = val.find("\\n", pos)) != std::string::npos) {
            val.replace(pos, 2, "\n");
            pos += 1;
        }
        meta[line.substr(0, eq)] = val;
    }
    return meta;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    os.write("SAMC", 4);
    detail::put<std::uint32_t>(os, kCheckpointVersion);
    const std::string meta = detail::encode_meta(ck.meta);
    detail::put<std::uint64_t>(os, meta.size());
    os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(ck.arrays.size()));
    for (const auto& [name, t] : ck.arrays) {
        detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.ndim()));
        for (std::size_t d : t.shape) detail::put<std::uint64_t>(os, d);
        os.write(reinterpret_cast<const char*>(t.v.data()),
                 static_cast<std::streamsize>(t.v.size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "SAMC", 4) != 0)
        throw std::runtime_error("load_checkpoint: not a checkpoint file: " + path);
    const auto version = detail::get<std::uint32_t>(is);
    if (version != kCheckpointVersion)
        throw std::runtime_error("load_checkpoint: unsupported format version " +
                                 std::to_string(version));
    Checkpoint ck;
    const auto meta_len = detail::get<std::uint64_t>(is);
    std::string meta(meta_len, '\0');
    is.read(meta.data(), static_cast<std::streamsize>(meta_len));
    if (!is) throw std::runtime_error("load_checkpoint: truncated metadata");
    ck.meta = detail::decode_meta(meta);
    const auto count = detail::get<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = detail::get<std::uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const auto ndim = detail::get<std::uint32_t>(is);
        std::vector<std::size_t> shape(ndim);
        for (auto& d : shape) d = static_cast<std::size_t>(detail::get<std::uint64_t>(is));
        Tensor t(shape);
        is.read(reinterpret_cast<char*>(t.v.data()),
                static_cast<std::streamsize>(t.v.size() * sizeof(double)));
        if (!is) throw std::runtime_error("load_checkpoint: truncated array " + name);
        ck.arrays.emplace(std::move(name), std::move(t));
    }
    return ck;
}

}  // namespace sam
