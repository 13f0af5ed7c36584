#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <type_traits>

#include "npd/error.hpp"

namespace npd::detail {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
T byteswap_if_big(T value) noexcept {
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&value, bytes, sizeof(T));
  }
  return value;
}

/// Append-only little-endian encoder.
class ByteWriter {
 public:
  template <class T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    value = byteswap_if_big(value);
    char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    buffer_.append(bytes, sizeof(T));
  }

  void put_bytes(std::string_view bytes) { buffer_.append(bytes); }

  void put_string(std::string_view s) {
    put(static_cast<std::uint32_t>(s.size()));
    put_bytes(s);
  }

  std::string& str() noexcept { return buffer_; }
  std::string take() noexcept { return std::move(buffer_); }

 private:
  std::string buffer_;
};

/// Bounds-checked little-endian decoder; every failure reports the byte offset.
class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) noexcept : bytes_(bytes) {}

  template <class T>
    requires std::is_arithmetic_v<T>
  T get() {
    require(sizeof(T), "value");
    T value;
    std::memcpy(&value, bytes_.data() + offset_, sizeof(T));
    offset_ += sizeof(T);
    return byteswap_if_big(value);
  }

  std::string_view get_bytes(std::size_t n) {
    require(n, "byte run");
    auto out = bytes_.substr(offset_, n);
    offset_ += n;
    return out;
  }

  std::string get_string() {
    const auto n = get<std::uint32_t>();
    return std::string(get_bytes(n));
  }

  void expect_magic(std::string_view magic) {
    const auto at = offset_;
    if (remaining() < magic.size() || bytes_.substr(offset_, magic.size()) != magic) {
      throw FormatError(at, "expected magic '" + std::string(magic) + "'");
    }
    offset_ += magic.size();
  }

  std::size_t offset() const noexcept { return offset_; }
  std::size_t remaining() const noexcept { return bytes_.size() - offset_; }
  bool done() const noexcept { return offset_ == bytes_.size(); }

 private:
  void require(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw FormatError(offset_, std::string("truncated ") + what + " (need " + std::to_string(n) +
                                     " bytes, have " + std::to_string(remaining()) + ")");
    }
  }

  std::string_view bytes_;
  std::size_t offset_ = 0;
};

}  // namespace npd::detail
