// Binary checkpoint of named parameter tensors.
//
// Layout (all integers little-endian):
//   magic   "TSCK"
//   u32     format version (currently 1)
//   u64     tensor count
//   per tensor:
//     u32   name length, then that many name bytes
//     u32   rank, then rank u64 dimensions
//     f64   values, row-major
//
// Loading restores values into an existing parameter list and demands an
// exact match in both directions: every stored tensor must find its
// parameter and vice versa, with identical shapes.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "tsadc/common.hpp"
#include "tsadc/tensor.hpp"

namespace tsadc {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

namespace detail_ckpt {

constexpr char kMagic[4] = {'T', 'S', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = (unsigned char)((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = (unsigned char)((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f64(std::ostream& os, double v) {
    put_u64(os, std::bit_cast<std::uint64_t>(v));
}

// Reader that tracks its byte offset so failures can be located precisely.
struct CkptReader {
    std::istream& is;
    std::size_t offset = 0;

    void read(void* dst, std::size_t n, const char* what) {
        is.read(reinterpret_cast<char*>(dst), std::streamsize(n));
        if (std::size_t(is.gcount()) != n)
            throw FormatError(std::string("checkpoint truncated while reading ") + what, offset);
        offset += n;
    }

    std::uint32_t u32(const char* what) {
        unsigned char b[4];
        read(b, 4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
        return v;
    }

    std::uint64_t u64(const char* what) {
        unsigned char b[8];
        read(b, 8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
        return v;
    }

    double f64(const char* what) { return std::bit_cast<double>(u64(what)); }
};

}  // namespace detail_ckpt

inline void save_checkpoint(const NamedParams& params, std::ostream& os) {
    using namespace detail_ckpt;
    os.write(kMagic, 4);
    put_u32(os, kVersion);
    put_u64(os, params.size());
    for (const auto& [name, t] : params) {
        put_u32(os, std::uint32_t(name.size()));
        os.write(name.data(), std::streamsize(name.size()));
        const Shape& dims = t.shape();
        put_u32(os, std::uint32_t(dims.size()));
        for (std::size_t d : dims) put_u64(os, d);
        for (double v : t.values()) put_f64(os, v);
    }
    if (!os) throw FormatError("write failure while saving checkpoint", 0);
}

inline void save_checkpoint(const NamedParams& params, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path + "' for writing", 0);
    save_checkpoint(params, os);
}

struct StoredTensor {
    Shape shape;
    std::vector<double> values;
};

inline std::map<std::string, StoredTensor> read_checkpoint(std::istream& is) {
    using namespace detail_ckpt;
    CkptReader r{is};
    char magic[4];
    r.read(magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        throw FormatError("bad magic (expected \"TSCK\")", 0);
    const std::uint32_t version = r.u32("version");
    if (version != kVersion)
        throw ConfigError("checkpoint version " + std::to_string(version) +
                          " does not match supported version " + std::to_string(kVersion));
    const std::uint64_t count = r.u64("tensor count");
    std::map<std::string, StoredTensor> out;
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = r.u32("name length");
        std::string name(name_len, '\0');
        if (name_len > 0) r.read(name.data(), name_len, "name");
        const std::uint32_t rank = r.u32("rank");
        StoredTensor st;
        std::size_t n = 1;
        for (std::uint32_t d = 0; d < rank; ++d) {
            st.shape.push_back(std::size_t(r.u64("dimension")));
            n *= st.shape.back();
        }
        st.values.resize(n);
        for (std::size_t j = 0; j < n; ++j) st.values[j] = r.f64("values");
        if (!out.emplace(std::move(name), std::move(st)).second)
            throw FormatError("duplicate tensor name in checkpoint", r.offset);
    }
    return out;
}

inline void load_checkpoint(NamedParams& params, std::istream& is) {
    auto stored = read_checkpoint(is);
    for (auto& [name, t] : params) {
        auto it = stored.find(name);
        if (it == stored.end())
            throw ConfigError("checkpoint mismatch: no stored tensor named '" + name + "'");
        if (it->second.shape != t.shape())
            throw ConfigError("checkpoint mismatch: tensor '" + name + "' stored as " +
                              shape_str(it->second.shape) + " but model expects " +
                              shape_str(t.shape()));
        std::vector<double>& dst = t.mutable_values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = it->second.values[i];
        stored.erase(it);
    }
    if (!stored.empty())
        throw ConfigError("checkpoint mismatch: stored tensor '" + stored.begin()->first +
                          "' has no matching model parameter");
}

inline void load_checkpoint(NamedParams& params, const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open '" + path + "' for reading", 0);
    load_checkpoint(params, is);
}

}  // namespace tsadc
