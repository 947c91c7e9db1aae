#pragma once

// Little-endian encode/decode helpers shared by the file formats.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "cardioseg/errors.hpp"

namespace cardioseg::detail {

class ByteWriter {
 public:
  template <typename U>
  void put(U value) {
    static_assert(std::is_arithmetic_v<U>);
    unsigned char raw[sizeof(U)];
    std::memcpy(raw, &value, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(U));
    bytes_.insert(bytes_.end(), raw, raw + sizeof(U));
  }
  void put_bytes(const void* data, std::size_t n) {
    auto p = static_cast<const unsigned char*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void pad_to(std::size_t n) {
    if (bytes_.size() < n) bytes_.resize(n, 0);
  }
  std::vector<unsigned char>& bytes() { return bytes_; }

 private:
  std::vector<unsigned char> bytes_;
};

class ByteReader {
 public:
  ByteReader(const unsigned char* data, std::size_t size, std::string what)
      : data_(data), size_(size), what_(std::move(what)) {}

  template <typename U>
  U get() {
    static_assert(std::is_arithmetic_v<U>);
    need(sizeof(U));
    unsigned char raw[sizeof(U)];
    std::memcpy(raw, data_ + pos_, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(U));
    pos_ += sizeof(U);
    U out;
    std::memcpy(&out, raw, sizeof(U));
    return out;
  }
  template <typename U>
  U get_at(std::size_t offset) {
    std::size_t saved = pos_;
    pos_ = offset;
    U v = get<U>();
    pos_ = saved;
    return v;
  }
  void get_bytes(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, data_ + pos_, n);
    pos_ += n;
  }
  void seek(std::size_t pos) { pos_ = pos; }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return size_ - pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > size_) throw FormatError(what_ + ": unexpected end of data");
  }
  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string what_;
};

std::vector<unsigned char> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<unsigned char>& bytes);

}  // namespace cardioseg::detail
