#pragma once

#include <bit>
#include <cstdint>
#include <string>

#include "llae/error.hpp"

namespace llae::detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32_le(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32_be(std::uint32_t v) {
    for (int i = 3; i >= 0; --i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64_le(double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  void bytes(const std::string& s) { out_ += s; }
  std::string& str() { return out_; }

 private:
  std::string out_;
};

/// Bounds-checked reader; every failure reports the byte offset.
class ByteReader {
 public:
  explicit ByteReader(const std::string& data, std::size_t end = std::string::npos)
      : data_(data), end_(end == std::string::npos ? data.size() : end) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return end_ - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw ParseError(std::string("truncated ") + what, pos_);
  }
  std::uint8_t u8(const char* what = "byte") {
    need(1, what);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32_le(const char* what = "integer") {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{static_cast<std::uint8_t>(data_[pos_ + i])} << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint32_t u32_be(const char* what = "integer") {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | static_cast<std::uint8_t>(data_[pos_ + i]);
    pos_ += 4;
    return v;
  }
  double f64_le(const char* what = "double") {
    need(8, what);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= std::uint64_t{static_cast<std::uint8_t>(data_[pos_ + i])} << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(bits);
  }
  const char* take(std::size_t n, const char* what) {
    need(n, what);
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }

 private:
  const std::string& data_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

}  // namespace llae::detail
