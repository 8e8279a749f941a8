#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "crownseg/error.hpp"

namespace crownseg {

// Little-endian byte buffer helpers shared by the file formats.
class ByteWriter {
public:
    void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u16(std::uint16_t v) { put(v); }
    void u32(std::uint32_t v) { put(v); }
    void i32(std::int32_t v) { put(static_cast<std::uint32_t>(v)); }
    void f32(float v) { put(std::bit_cast<std::uint32_t>(v)); }

    const std::vector<char>& buffer() const noexcept { return buf_; }

private:
    template <typename U>
    void put(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }

    std::vector<char> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::vector<char> data) : data_(std::move(data)) {}

    std::size_t offset() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return data_.size() - pos_; }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s(data_.data() + pos_, n);
        pos_ += n;
        return s;
    }
    std::uint8_t u8() { return static_cast<std::uint8_t>(get<std::uint8_t>()); }
    std::uint16_t u16() { return get<std::uint16_t>(); }
    std::uint32_t u32() { return get<std::uint32_t>(); }
    std::int32_t i32() { return static_cast<std::int32_t>(get<std::uint32_t>()); }
    float f32() { return std::bit_cast<float>(get<std::uint32_t>()); }

    void need(std::size_t n) const {
        if (remaining() < n)
            throw LengthError("truncated payload: need " + std::to_string(n) + " bytes at offset " +
                              std::to_string(pos_) + ", " + std::to_string(remaining()) + " available");
    }

private:
    template <typename U>
    U get() {
        need(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i)
            v = static_cast<U>(v | (static_cast<U>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i)));
        pos_ += sizeof(U);
        return v;
    }

    std::vector<char> data_;
    std::size_t pos_ = 0;
};

std::vector<char> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<char>& bytes);

/// Shortest text that parses back to the same value.
std::string format_real(double v);
std::string format_real(float v);

} // namespace crownseg
