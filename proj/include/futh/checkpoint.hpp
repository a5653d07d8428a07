#pragma once

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "futh/tensor.hpp"

namespace futh {

// Checkpoint container: magic "FUTHCKPT", version, precision tag, then a
// named-blob table. Blobs hold parameter/state tensors (f32/f64), u64 vectors
// (rng state, cursors), and raw byte strings (carried text artifacts).
namespace ckpt {

constexpr char kMagic[8] = {'F', 'U', 'T', 'H', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kDtypeF32 = 1;
constexpr std::uint32_t kDtypeF64 = 2;
constexpr std::uint32_t kDtypeU64 = 3;
constexpr std::uint32_t kDtypeU8 = 4;

inline std::size_t dtype_size(std::uint32_t dtype) {
    switch (dtype) {
        case kDtypeF32: return 4;
        case kDtypeF64: return 8;
        case kDtypeU64: return 8;
        case kDtypeU8: return 1;
    }
    throw FormatError("checkpoint: unknown dtype code " + std::to_string(dtype));
}

}  // namespace ckpt

struct NamedBlob {
    std::string name;
    std::uint32_t dtype = ckpt::kDtypeU8;
    std::vector<std::int64_t> dims;          // rank may be 0 (scalar-less raw blob)
    std::vector<unsigned char> payload;      // little-endian element bytes

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (auto d : dims) n *= d;
        return n;
    }
};

class CheckpointFile {
public:
    std::uint32_t precision = 32;
    std::vector<NamedBlob> blobs;

    const NamedBlob* find(const std::string& name) const {
        for (const auto& b : blobs)
            if (b.name == name) return &b;
        return nullptr;
    }

    const NamedBlob& require(const std::string& name) const {
        const NamedBlob* b = find(name);
        if (!b) throw ConfigError("checkpoint: missing entry '" + name + "'");
        return *b;
    }

    // --- builders -----------------------------------------------------------

    template <class T>
    void add_tensor(const std::string& name, const TensorT<T>& t) {
        static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
        NamedBlob b;
        b.name = name;
        b.dtype = std::is_same_v<T, float> ? ckpt::kDtypeF32 : ckpt::kDtypeF64;
        b.dims.assign(t.shape().begin(), t.shape().end());
        b.payload.resize(static_cast<std::size_t>(t.numel()) * sizeof(T));
        for (std::int64_t i = 0; i < t.numel(); ++i)
            put_scalar(b.payload.data() + static_cast<std::size_t>(i) * sizeof(T), t[i]);
        push(std::move(b));
    }

    void add_u64(const std::string& name, const std::vector<std::uint64_t>& v) {
        NamedBlob b;
        b.name = name;
        b.dtype = ckpt::kDtypeU64;
        b.dims = {static_cast<std::int64_t>(v.size())};
        b.payload.resize(v.size() * 8);
        for (std::size_t i = 0; i < v.size(); ++i) put_u64(b.payload.data() + i * 8, v[i]);
        push(std::move(b));
    }

    void add_bytes(const std::string& name, const std::string& bytes) {
        NamedBlob b;
        b.name = name;
        b.dtype = ckpt::kDtypeU8;
        b.dims = {static_cast<std::int64_t>(bytes.size())};
        b.payload.assign(bytes.begin(), bytes.end());
        push(std::move(b));
    }

    // --- typed readers ------------------------------------------------------

    template <class T>
    TensorT<T> tensor(const std::string& name) const {
        static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
        const NamedBlob& b = require(name);
        const std::uint32_t want = std::is_same_v<T, float> ? ckpt::kDtypeF32 : ckpt::kDtypeF64;
        if (b.dtype != want)
            throw ConfigError("checkpoint: entry '" + name + "' has dtype code " +
                              std::to_string(b.dtype) + ", expected " + std::to_string(want));
        Shape s(b.dims.begin(), b.dims.end());
        TensorT<T> t(s);
        for (std::int64_t i = 0; i < t.numel(); ++i)
            t[i] = get_scalar<T>(b.payload.data() + static_cast<std::size_t>(i) * sizeof(T));
        return t;
    }

    std::vector<std::uint64_t> u64s(const std::string& name) const {
        const NamedBlob& b = require(name);
        if (b.dtype != ckpt::kDtypeU64)
            throw ConfigError("checkpoint: entry '" + name + "' is not a u64 vector");
        std::vector<std::uint64_t> v(static_cast<std::size_t>(b.numel()));
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = get_u64(b.payload.data() + i * 8);
        return v;
    }

    std::string bytes(const std::string& name) const {
        const NamedBlob* b = find(name);
        if (!b) return {};
        if (b->dtype != ckpt::kDtypeU8)
            throw ConfigError("checkpoint: entry '" + name + "' is not a byte string");
        return std::string(b->payload.begin(), b->payload.end());
    }

    // --- serialization ------------------------------------------------------

    std::string encode() const {
        std::string out;
        out.append(ckpt::kMagic, 8);
        append_u32(out, ckpt::kVersion);
        append_u32(out, precision);
        append_u32(out, static_cast<std::uint32_t>(blobs.size()));
        for (const auto& b : blobs) {
            append_u32(out, static_cast<std::uint32_t>(b.name.size()));
            out += b.name;
            append_u32(out, b.dtype);
            append_u32(out, static_cast<std::uint32_t>(b.dims.size()));
            for (auto d : b.dims) append_u32(out, static_cast<std::uint32_t>(d));
            out.append(reinterpret_cast<const char*>(b.payload.data()), b.payload.size());
        }
        return out;
    }

    void write(const std::string& path) const {
        const std::string buf = encode();
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("checkpoint: cannot open '" + path + "' for writing");
        f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (!f) throw IoError("checkpoint: short write to '" + path + "'");
    }

    static CheckpointFile decode(const std::string& raw, const std::string& origin) {
        const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
        const std::size_t n = raw.size();
        std::size_t off = 0;
        auto fail = [&](const std::string& what) {
            throw FormatError("'" + origin + "' offset " + std::to_string(off) + ": " + what);
        };
        auto need = [&](std::size_t k, const char* what) {
            if (off + k > n) fail(std::string("truncated ") + what);
        };
        need(8, "magic");
        if (std::memcmp(p, ckpt::kMagic, 8) != 0) fail("bad magic (expected FUTHCKPT)");
        off = 8;
        need(4, "version");
        const std::uint32_t version = read_u32(p + off);
        if (version != ckpt::kVersion) fail("unsupported version " + std::to_string(version));
        off += 4;

        CheckpointFile ck;
        need(4, "precision tag");
        ck.precision = read_u32(p + off);
        off += 4;
        need(4, "entry count");
        const std::uint32_t count = read_u32(p + off);
        off += 4;
        for (std::uint32_t i = 0; i < count; ++i) {
            NamedBlob b;
            need(4, "name length");
            const std::uint32_t name_len = read_u32(p + off);
            off += 4;
            need(name_len, "entry name");
            b.name.assign(reinterpret_cast<const char*>(p + off), name_len);
            off += name_len;
            need(4, "dtype");
            b.dtype = read_u32(p + off);
            ckpt::dtype_size(b.dtype);  // validates
            off += 4;
            need(4, "rank");
            const std::uint32_t rank = read_u32(p + off);
            off += 4;
            std::int64_t numel = 1;
            for (std::uint32_t d = 0; d < rank; ++d) {
                need(4, "dimension");
                b.dims.push_back(read_u32(p + off));
                numel *= b.dims.back();
                off += 4;
            }
            const std::size_t bytes = static_cast<std::size_t>(numel) * ckpt::dtype_size(b.dtype);
            need(bytes, "payload");
            b.payload.assign(p + off, p + off + bytes);
            off += bytes;
            ck.blobs.push_back(std::move(b));
        }
        if (off != n) fail(std::to_string(n - off) + " trailing bytes");
        return ck;
    }

    static CheckpointFile read(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw IoError("checkpoint: cannot open '" + path + "'");
        std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        return decode(raw, path);
    }

private:
    void push(NamedBlob b) {
        for (const auto& e : blobs)
            if (e.name == b.name)
                throw StateError("checkpoint: duplicate entry '" + b.name + "'");
        blobs.push_back(std::move(b));
    }

    static void append_u32(std::string& out, std::uint32_t v) {
        out.push_back(static_cast<char>(v & 0xff));
        out.push_back(static_cast<char>((v >> 8) & 0xff));
        out.push_back(static_cast<char>((v >> 16) & 0xff));
        out.push_back(static_cast<char>((v >> 24) & 0xff));
    }

    static std::uint32_t read_u32(const unsigned char* p) {
        return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
               static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
    }

    static void put_u64(unsigned char* p, std::uint64_t v) {
        for (int i = 0; i < 8; ++i) p[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    }

    static std::uint64_t get_u64(const unsigned char* p) {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
        return v;
    }

    template <class T>
    static void put_scalar(unsigned char* p, T v) {
        if constexpr (std::is_same_v<T, float>) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            for (int i = 0; i < 4; ++i) p[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
        } else {
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            put_u64(p, bits);
        }
    }

    template <class T>
    static T get_scalar(const unsigned char* p) {
        if constexpr (std::is_same_v<T, float>) {
            std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                                 static_cast<std::uint32_t>(p[1]) << 8 |
                                 static_cast<std::uint32_t>(p[2]) << 16 |
                                 static_cast<std::uint32_t>(p[3]) << 24;
            float v;
            std::memcpy(&v, &bits, 4);
            return v;
        } else {
            const std::uint64_t bits = get_u64(p);
            double v;
            std::memcpy(&v, &bits, 8);
            return v;
        }
    }
};

}  // namespace futh
