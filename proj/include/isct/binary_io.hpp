#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "isct/error.hpp"

namespace isct {

// Explicit little-endian encoding regardless of host byte order.
class ByteWriter {
public:
    void bytes(std::string_view raw) { buf_.insert(buf_.end(), raw.begin(), raw.end()); }

    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }

    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }

    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }

    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

    void f64s(std::span<const double> vs) {
        for (double v : vs) f64(v);
    }

    /// u32 length prefix followed by the raw bytes.
    void string(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s);
    }

    [[nodiscard]] const std::string& data() const { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view data) : data_(data) {}

    std::string_view bytes(std::size_t n) {
        need(n);
        auto out = data_.substr(pos_, n);
        pos_ += n;
        return out;
    }

    std::uint8_t u8() { return static_cast<std::uint8_t>(bytes(1)[0]); }

    std::uint32_t u32() {
        auto b = bytes(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[i])) << (8 * i);
        return v;
    }

    std::uint64_t u64() {
        auto b = bytes(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[i])) << (8 * i);
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    /// Reads `count` doubles after checking the buffer can hold them, so a
    /// corrupt length field fails before any allocation.
    std::vector<double> f64s(std::uint64_t count) {
        if (count > remaining() / 8) {
            throw CorruptFileError("length field claims " + std::to_string(count) +
                                   " values but only " + std::to_string(remaining()) + " bytes remain");
        }
        std::vector<double> out(static_cast<std::size_t>(count));
        for (auto& v : out) v = f64();
        return out;
    }

    std::string string() {
        const auto n = u32();
        return std::string(bytes(n));
    }

    [[nodiscard]] std::size_t remaining() const { return data_.size() - pos_; }
    [[nodiscard]] bool at_end() const { return pos_ == data_.size(); }

private:
    void need(std::size_t n) const {
        if (n > remaining()) {
            throw CorruptFileError("unexpected end of data (need " + std::to_string(n) + " bytes, have " +
                                   std::to_string(remaining()) + ")");
        }
    }

    std::string_view data_;
    std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace isct
