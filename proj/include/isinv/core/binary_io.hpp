#pragma once

// Little-endian primitive encoding shared by the weight container, the IS
// frame format and the split-inference wire protocol.

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "isinv/core/errors.hpp"

namespace isinv {

using Bytes = std::vector<std::uint8_t>;

class ByteWriter {
public:
    template <typename T>
    void put(T value) {
        static_assert(std::is_arithmetic_v<T>);
        std::uint8_t raw[sizeof(T)];
        std::memcpy(raw, &value, sizeof(T));
        buf_.insert(buf_.end(), raw, raw + sizeof(T));  // host is little-endian (x86-64 / aarch64)
    }
    void put_bytes(std::span<const std::uint8_t> bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }
    void put_tag(std::string_view tag) { buf_.insert(buf_.end(), tag.begin(), tag.end()); }
    void put_string(std::string_view s) {
        put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
        put_tag(s);
    }

    const Bytes& bytes() const { return buf_; }
    Bytes take() { return std::move(buf_); }

private:
    Bytes buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}

    template <typename T>
    T get() {
        static_assert(std::is_arithmetic_v<T>);
        need(sizeof(T));
        T value;
        std::memcpy(&value, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return value;
    }
    std::span<const std::uint8_t> get_bytes(std::size_t n) {
        need(n);
        auto out = data_.subspan(pos_, n);
        pos_ += n;
        return out;
    }
    std::string get_tag(std::size_t n) {
        auto b = get_bytes(n);
        return std::string(b.begin(), b.end());
    }
    std::string get_string() { return get_tag(get<std::uint32_t>()); }

    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }
    bool done() const { return pos_ == data_.size(); }

private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) throw FormatError("unexpected end of data");
    }

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
};

Bytes read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

/// 64-bit FNV-1a, stable across platforms; used for model fingerprints.
class Fnv1a {
public:
    void update(std::span<const std::uint8_t> bytes);
    void update(const void* data, std::size_t n);
    std::uint64_t digest() const { return h_; }

private:
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

}  // namespace isinv
