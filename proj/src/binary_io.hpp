#pragma once

// Little-endian encoding helpers shared by the checkpoint and patch formats.

#include <bit>
#include <charconv>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "spcnn/errors.hpp"

namespace spcnn::detail {

class ByteWriter {
public:
    void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

    const std::string& buffer() const noexcept { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view data) : data_(data) {}

    std::uint64_t offset() const noexcept { return pos_; }
    std::uint64_t remaining() const noexcept { return data_.size() - pos_; }

    std::string_view bytes(std::size_t n, const char* what) {
        need(n, what);
        auto s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(data_[pos_++]);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t{static_cast<std::uint8_t>(data_[pos_ + i])} << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t{static_cast<std::uint8_t>(data_[pos_ + i])} << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
    double f64(const char* what) { return std::bit_cast<double>(u64(what)); }

    void need(std::uint64_t n, const char* what) const {
        if (remaining() < n) {
            throw FormatError(std::string("truncated input while reading ") + what, pos_);
        }
    }

private:
    std::string_view data_;
    std::uint64_t pos_ = 0;
};

/// Shortest-round-trip-safe decimal form (17 significant digits).
std::string format_double(double v);
/// Shortest text that parses back to the same double.
std::string format_shortest(double v);

std::vector<std::string_view> split_csv(std::string_view line);

template <typename T>
T parse_number(std::string_view field, const std::string& source, std::size_t line_no) {
    T v{};
    const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
        throw DataError(source + " line " + std::to_string(line_no) + ": bad number '" + std::string(field) + "'");
    }
    return v;
}

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

}  // namespace spcnn::detail
