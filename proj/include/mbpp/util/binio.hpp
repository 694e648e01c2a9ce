#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mbpp/core/error.hpp"

namespace mbpp::io {

/// Little-endian primitive I/O over whole-file buffers. Files are read fully
/// and decoded with explicit bounds checks so truncation is reported as such
/// rather than as garbage values.
class Reader {
public:
    Reader(std::vector<std::uint8_t> bytes, std::string origin)
        : bytes_(std::move(bytes)), origin_(std::move(origin)) {}

    static Reader from_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error("cannot open " + path);
        std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                        std::istreambuf_iterator<char>());
        return Reader(std::move(bytes), path);
    }

    std::uint32_t read_u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    float read_f32() {
        const std::uint32_t raw = read_u32();
        float f;
        std::memcpy(&f, &raw, 4);
        return f;
    }

    std::uint8_t read_u8() {
        need(1);
        return bytes_[pos_++];
    }

    void read_f32_block(float* dst, std::size_t count) {
        need(count * 4);
        for (std::size_t i = 0; i < count; ++i) {
            std::uint32_t v = 0;
            for (int b = 0; b < 4; ++b) {
                v |= static_cast<std::uint32_t>(bytes_[pos_ + 4 * i + b]) << (8 * b);
            }
            std::memcpy(dst + i, &v, 4);
        }
        pos_ += count * 4;
    }

    std::string read_bytes(std::size_t count) {
        need(count);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), count);
        pos_ += count;
        return s;
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

    void expect_magic(const char magic[4], const std::string& what) {
        if (remaining() < 4 || std::memcmp(bytes_.data() + pos_, magic, 4) != 0) {
            throw ParseError(ParseError::Kind::bad_magic, origin_ + ": bad magic for " + what);
        }
        pos_ += 4;
    }

    void expect_version(std::uint32_t want) {
        if (remaining() < 4) {
            throw ParseError(ParseError::Kind::truncated, origin_ + ": truncated before version");
        }
        const std::uint32_t got = read_u32();
        if (got != want) {
            throw ParseError(ParseError::Kind::bad_version,
                             origin_ + ": version " + std::to_string(got) + ", expected " +
                                 std::to_string(want));
        }
    }

    const std::string& origin() const { return origin_; }

    [[noreturn]] void fail_truncated(const std::string& what) const {
        throw ParseError(ParseError::Kind::truncated, origin_ + ": truncated payload (" + what + ")");
    }

private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) fail_truncated("need " + std::to_string(n) + " bytes");
    }

    std::vector<std::uint8_t> bytes_;
    std::string origin_;
    std::size_t pos_ = 0;
};

class Writer {
public:
    explicit Writer(const std::string& path) : out_(path, std::ios::binary), path_(path) {
        if (!out_) throw Error("cannot open " + path + " for writing");
    }

    void write_u32(std::uint32_t v) {
        char buf[4];
        for (int i = 0; i < 4; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
        out_.write(buf, 4);
    }

    void write_f32(float f) {
        std::uint32_t v;
        std::memcpy(&v, &f, 4);
        write_u32(v);
    }

    void write_u8(std::uint8_t v) { out_.put(static_cast<char>(v)); }

    void write_magic(const char magic[4]) { out_.write(magic, 4); }

    void write_bytes(const std::string& s) { out_.write(s.data(), static_cast<std::streamsize>(s.size())); }

    void close() {
        out_.close();
        if (!out_) throw Error("write failed for " + path_);
    }

private:
    std::ofstream out_;
    std::string path_;
};

}  // namespace mbpp::io
