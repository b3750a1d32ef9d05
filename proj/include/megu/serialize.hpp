#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "megu/error.hpp"

namespace megu {

// Little-endian binary writer backed by an in-memory buffer. Artifacts are
// assembled in memory and flushed atomically (write-temp-then-rename).
class ByteWriter {
public:
    void write_bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }

    void write_magic(const char* magic) { write_bytes(magic, std::strlen(magic)); }

    void write_u8(std::uint8_t v) { write_bytes(&v, 1); }

    void write_u16(std::uint16_t v) {
        std::uint8_t b[2] = {std::uint8_t(v), std::uint8_t(v >> 8)};
        write_bytes(b, 2);
    }

    void write_u32(std::uint32_t v) {
        std::uint8_t b[4];
        for (int i = 0; i < 4; ++i) b[i] = std::uint8_t(v >> (8 * i));
        write_bytes(b, 4);
    }

    void write_u64(std::uint64_t v) {
        std::uint8_t b[8];
        for (int i = 0; i < 8; ++i) b[i] = std::uint8_t(v >> (8 * i));
        write_bytes(b, 8);
    }

    void write_f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        write_u64(bits);
    }

    void write_f64_span(std::span<const double> xs) {
        for (double x : xs) write_f64(x);
    }

    void write_string(const std::string& s) {
        write_u32(static_cast<std::uint32_t>(s.size()));
        write_bytes(s.data(), s.size());
    }

    const std::vector<std::uint8_t>& bytes() const { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

// Reader over a byte buffer; every failure reports the offending offset.
class ByteReader {
public:
    explicit ByteReader(std::vector<std::uint8_t> bytes) : buf_(std::move(bytes)) {}

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return buf_.size() - pos_; }

    void expect_magic(const char* magic) {
        const std::size_t n = std::strlen(magic);
        if (remaining() < n || std::memcmp(buf_.data() + pos_, magic, n) != 0)
            throw ParseError(std::string("bad magic, expected \"") + magic + "\"", pos_);
        pos_ += n;
    }

    std::uint8_t read_u8() {
        need(1, "u8");
        return buf_[pos_++];
    }

    std::uint16_t read_u16() {
        need(2, "u16");
        std::uint16_t v = std::uint16_t(buf_[pos_]) | std::uint16_t(buf_[pos_ + 1]) << 8;
        pos_ += 2;
        return v;
    }

    std::uint32_t read_u32() {
        need(4, "u32");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(buf_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    std::uint64_t read_u64() {
        need(8, "u64");
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t(buf_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }

    double read_f64() {
        const std::uint64_t bits = read_u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }

    std::vector<double> read_f64_vec(std::size_t n) {
        if (remaining() < n * 8)
            throw ParseError("truncated payload, expected " + std::to_string(n * 8) +
                                 " bytes but only " + std::to_string(remaining()) + " remain",
                             pos_);
        std::vector<double> out(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = read_f64();
        return out;
    }

    std::string read_string() {
        const std::uint32_t n = read_u32();
        need(n, "string payload");
        std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
        pos_ += n;
        return s;
    }

private:
    void need(std::size_t n, const char* what) {
        if (remaining() < n)
            throw ParseError(std::string("truncated ") + what + ", expected " +
                                 std::to_string(n) + " bytes but only " +
                                 std::to_string(remaining()) + " remain",
                             pos_);
    }

    std::vector<std::uint8_t> buf_;
    std::size_t pos_ = 0;
};

// Whole-file helpers. write_file_atomic writes a sibling temp file and
// renames it over the target, so readers never observe a partial artifact.
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

// SHA-256 digest (32 bytes) and its lowercase hex rendering.
std::array<std::uint8_t, 32> sha256(std::span<const std::uint8_t> bytes);
std::string hex_digest(const std::array<std::uint8_t, 32>& digest);

std::string base64_encode(std::span<const std::uint8_t> bytes);

} // namespace megu
