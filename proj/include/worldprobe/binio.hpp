#pragma once

// Little-endian encoding helpers shared by the ACTV, PRBE and TOYM containers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "worldprobe/errors.hpp"

namespace worldprobe::binio {

class Writer {
 public:
  void bytes(std::string_view s) { buf_.append(s); }

  template <typename T>
  void uint(T v) {
    static_assert(std::is_unsigned_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
  }

  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }

  // u16 length prefix + UTF-8 bytes.
  void str16(std::string_view s) {
    if (s.size() > 0xFFFF) throw DataError("string field longer than 65535 bytes");
    uint(static_cast<std::uint16_t>(s.size()));
    bytes(s);
  }

  void f64_array(std::span<const double> v) {
    for (double x : v) f64(x);
  }

  const std::string& data() const { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

  void need(std::size_t n) const {
    if (remaining() < n) {
      throw DataError(what_ + ": truncated (expected " + std::to_string(pos_ + n) +
                      " bytes, file has " + std::to_string(data_.size()) + ")");
    }
  }

  std::string_view bytes(std::size_t n) {
    need(n);
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  template <typename T>
  T uint() {
    static_assert(std::is_unsigned_v<T>);
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(T);
    return v;
  }

  float f32() { return std::bit_cast<float>(uint<std::uint32_t>()); }
  double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }

  std::string str16() {
    const auto n = uint<std::uint16_t>();
    return std::string(bytes(n));
  }

  std::vector<double> f64_array(std::size_t n) {
    need(n * 8);
    std::vector<double> out(n);
    for (auto& x : out) x = f64();
    return out;
  }

  const std::string& what() const { return what_; }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
  std::string what_;
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

}  // namespace worldprobe::binio
