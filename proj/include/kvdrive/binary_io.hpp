#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>

#include "kvdrive/error.hpp"

namespace kvdrive {

// Little-endian serialization over iostreams. Readers throw kFormat on
// truncation so a short file never decodes into garbage.

template <typename T>
T to_little_endian(T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::little) {
    return value;
  } else {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    return std::bit_cast<T>(bytes);
  }
}

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& os) : os_(os) {}

  template <typename T>
  void put(T value) {
    const T le = to_little_endian(value);
    os_.write(reinterpret_cast<const char*>(&le), sizeof(T));
    written_ += sizeof(T);
  }

  void put_floats(std::span<const float> values) {
    if constexpr (std::endian::native == std::endian::little) {
      os_.write(reinterpret_cast<const char*>(values.data()),
                static_cast<std::streamsize>(values.size_bytes()));
      written_ += values.size_bytes();
    } else {
      for (float v : values) put(v);
    }
  }

  void put_magic(std::string_view magic) {
    os_.write(magic.data(), static_cast<std::streamsize>(magic.size()));
    written_ += magic.size();
  }

  void pad_to(std::uint64_t alignment) {
    while (written_ % alignment != 0) put<std::uint8_t>(0);
  }

  std::uint64_t written() const noexcept { return written_; }

  void check() const {
    if (!os_) fail(ErrorCode::kIo, "write failed");
  }

 private:
  std::ostream& os_;
  std::uint64_t written_ = 0;
};

class BinaryReader {
 public:
  BinaryReader(std::istream& is, std::string what) : is_(is), what_(std::move(what)) {}

  template <typename T>
  T get() {
    T value{};
    is_.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (is_.gcount() != static_cast<std::streamsize>(sizeof(T))) truncated();
    consumed_ += sizeof(T);
    return to_little_endian(value);
  }

  void get_floats(std::span<float> out) {
    if constexpr (std::endian::native == std::endian::little) {
      is_.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size_bytes()));
      if (is_.gcount() != static_cast<std::streamsize>(out.size_bytes())) truncated();
      consumed_ += out.size_bytes();
    } else {
      for (float& v : out) v = get<float>();
    }
  }

  void expect_magic(std::string_view magic) {
    char buf[8] = {};
    is_.read(buf, static_cast<std::streamsize>(magic.size()));
    if (is_.gcount() != static_cast<std::streamsize>(magic.size())) truncated();
    if (std::string_view(buf, magic.size()) != magic) {
      fail(ErrorCode::kFormat, what_ + ": bad magic, expected \"" + std::string(magic) + "\"");
    }
    consumed_ += magic.size();
  }

  void skip_to(std::uint64_t alignment) {
    while (consumed_ % alignment != 0) get<std::uint8_t>();
  }

  std::uint64_t consumed() const noexcept { return consumed_; }

 private:
  [[noreturn]] void truncated() const { fail(ErrorCode::kFormat, what_ + ": truncated input"); }

  std::istream& is_;
  std::string what_;
  std::uint64_t consumed_ = 0;
};

// Same encoding over an in-memory byte buffer (used for pread'd extents).
class ByteCursor {
 public:
  explicit ByteCursor(std::span<const std::byte> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size()) fail(ErrorCode::kFormat, "buffer truncated");
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return to_little_endian(value);
  }

  void get_floats(std::span<float> out) {
    if (pos_ + out.size_bytes() > bytes_.size()) fail(ErrorCode::kFormat, "buffer truncated");
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(out.data(), bytes_.data() + pos_, out.size_bytes());
      pos_ += out.size_bytes();
    } else {
      for (float& v : out) v = get<float>();
    }
  }

  void skip(std::size_t n) {
    if (pos_ + n > bytes_.size()) fail(ErrorCode::kFormat, "buffer truncated");
    pos_ += n;
  }

  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  std::span<const std::byte> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace kvdrive
