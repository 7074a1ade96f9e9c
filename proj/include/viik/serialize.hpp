#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "viik/errors.hpp"

namespace viik::io {

// Little-endian scalar packing into a growing byte buffer.

inline void put_bytes(std::string& buf, const void* p, std::size_t n) {
    buf.append(static_cast<const char*>(p), n);
}

inline void put_u32(std::string& buf, std::uint32_t v) {
    std::array<unsigned char, 4> b;
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    put_bytes(buf, b.data(), 4);
}

inline void put_u64(std::string& buf, std::uint64_t v) {
    std::array<unsigned char, 8> b;
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    put_bytes(buf, b.data(), 8);
}

inline void put_f64(std::string& buf, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(buf, bits);
}

/// Bounds-checked cursor over an in-memory file image.
class Reader {
public:
    Reader(const std::string& buf, std::string what)
        : buf_(buf), what_(std::move(what)) {}

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return buf_.size() - pos_; }

    void raw(void* out, std::size_t n) {
        if (remaining() < n) throw IoError(what_ + ": truncated file");
        std::memcpy(out, buf_.data() + pos_, n);
        pos_ += n;
    }

    std::uint32_t u32() {
        unsigned char b[4];
        raw(b, 4);
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
        return v;
    }

    std::uint64_t u64() {
        unsigned char b[8];
        raw(b, 8);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
        return v;
    }

    double f64() {
        std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }

    std::string str(std::size_t n) {
        if (remaining() < n) throw IoError(what_ + ": truncated file");
        std::string s(buf_.data() + pos_, n);
        pos_ += n;
        return s;
    }

private:
    const std::string& buf_;
    std::string what_;
    std::size_t pos_ = 0;
};

inline std::uint32_t crc32(const void* data, std::size_t n,
                           std::uint32_t crc = 0xffffffffu) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ p[i]) & 0xffu] ^ (crc >> 8);
    return crc;
}

inline std::uint32_t crc32_final(std::uint32_t crc) { return crc ^ 0xffffffffu; }

inline void write_file(const std::filesystem::path& path, const std::string& buf) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
    return buf;
}

}  // namespace viik::io
