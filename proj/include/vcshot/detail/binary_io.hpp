#pragma once

// Little-endian encoding helpers shared by the VCFS, VCDC and VCBE formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace vcshot::detail {

class ByteWriter {
 public:
  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T value) {
    using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
              std::conditional_t<sizeof(T) == 2, std::uint16_t,
              std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
    const auto bits = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bytes_.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xffu));
    }
  }

  void put_bytes(std::string_view raw) { bytes_.insert(bytes_.end(), raw.begin(), raw.end()); }

  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

// Reader over a complete buffer. On short reads it calls the supplied
// handler (which must throw) with the offset at which data ran out.
template <typename OnTruncated>
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, OnTruncated on_truncated)
      : bytes_(bytes), on_truncated_(on_truncated) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    using U = std::conditional_t<sizeof(T) == 1, std::uint8_t,
              std::conditional_t<sizeof(T) == 2, std::uint16_t,
              std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>>>;
    require(sizeof(T));
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bits |= static_cast<U>(static_cast<U>(bytes_[offset_ + i]) << (8 * i));
    }
    offset_ += sizeof(T);
    return std::bit_cast<T>(bits);
  }

  std::string get_string(std::size_t length) {
    require(length);
    std::string out(reinterpret_cast<const char*>(bytes_.data() + offset_), length);
    offset_ += length;
    return out;
  }

  std::span<const std::uint8_t> get_span(std::size_t length) {
    require(length);
    auto out = bytes_.subspan(offset_, length);
    offset_ += length;
    return out;
  }

  void require(std::size_t length) const {
    if (length > bytes_.size() - offset_) on_truncated_(offset_);
  }

  std::size_t offset() const { return offset_; }
  std::size_t remaining() const { return bytes_.size() - offset_; }

 private:
  std::span<const std::uint8_t> bytes_;
  OnTruncated on_truncated_;
  std::size_t offset_ = 0;
};

}  // namespace vcshot::detail
