// SPDX-License-Identifier: Apache-2.0
//
// Little-endian byte-stream helpers used by the binary container formats.
// All multi-byte integers in every file format are little-endian regardless
// of host order.

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "fcnvm/errors.hpp"

namespace fcnvm::io {

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }

  void u16(std::uint16_t v) {
    buf_.push_back(static_cast<std::uint8_t>(v));
    buf_.push_back(static_cast<std::uint8_t>(v >> 8));
  }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }

  void f32(float v) {
    std::uint32_t b;
    std::memcpy(&b, &v, 4);
    u32(b);
  }

  void bytes(const void* p, std::size_t n) {
    const auto* s = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), s, s + n);
  }

  // Length-prefixed UTF-8 string (u16 length).
  void str(const std::string& s) {
    if (s.size() > 0xffff) throw RangeError("string too long for container");
    u16(static_cast<std::uint16_t>(s.size()));
    bytes(s.data(), s.size());
  }

  void magic(const char tag[5]) { bytes(tag, 4); }

  std::size_t size() const { return buf_.size(); }
  const std::vector<std::uint8_t>& data() const { return buf_; }
  std::vector<std::uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}
  explicit Reader(const std::vector<std::uint8_t>& v) : Reader(v.data(), v.size()) {}

  std::uint8_t u8() {
    need(1);
    return p_[pos_++];
  }

  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(p_[pos_] | (p_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }

  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }

  float f32() {
    std::uint32_t b = u32();
    float v;
    std::memcpy(&v, &b, 4);
    return v;
  }

  void bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, p_ + pos_, n);
    pos_ += n;
  }

  std::string str() {
    std::uint16_t n = u16();
    need(n);
    std::string s(reinterpret_cast<const char*>(p_ + pos_), n);
    pos_ += n;
    return s;
  }

  void magic(const char tag[5]) {
    char got[4];
    bytes(got, 4);
    if (std::memcmp(got, tag, 4) != 0)
      throw FormatError(std::string("bad magic, expected ") + tag);
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return n_ - pos_; }
  void seek(std::size_t pos) {
    if (pos > n_) throw FormatError("seek past end of container");
    pos_ = pos;
  }

 private:
  void need(std::size_t n) const {
    if (n_ - pos_ < n) throw FormatError("truncated container");
  }

  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  f.seekg(0, std::ios::end);
  std::streampos end = f.tellg();
  f.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(end));
  if (end > 0) f.read(reinterpret_cast<char*>(buf.data()), end);
  if (!f) throw IoError("cannot read " + path);
  return buf;
}

inline std::string read_text_file(const std::string& path) {
  auto v = read_file(path);
  return std::string(v.begin(), v.end());
}

inline void write_file(const std::string& path, const void* p, std::size_t n) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!f) throw IoError("cannot write " + path);
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& v) {
  write_file(path, v.data(), v.size());
}

inline void write_text_file(const std::string& path, const std::string& s) {
  write_file(path, s.data(), s.size());
}

}  // namespace fcnvm::io
