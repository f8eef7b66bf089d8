// SPDX-License-Identifier: Apache-2.0
//
// Dense CHW tensors and their binary container.  Storage precision on the
// simulated device is Half; float and double variants exist for reference
// paths and weight handling.

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "fcnvm/errors.hpp"
#include "fcnvm/half.hpp"
#include "fcnvm/io.hpp"

namespace fcnvm {

template <typename T>
struct TensorT {
  int c = 0, h = 0, w = 0;
  std::vector<T> data;

  TensorT() = default;
  TensorT(int c_, int h_, int w_)
      : c(c_), h(h_), w(w_), data(static_cast<std::size_t>(c_) * h_ * w_) {
    if (c_ < 0 || h_ < 0 || w_ < 0) throw ShapeError("negative tensor dimension");
  }

  std::size_t size() const { return data.size(); }

  T& at(int ci, int y, int x) {
    return data[(static_cast<std::size_t>(ci) * h + y) * w + x];
  }
  const T& at(int ci, int y, int x) const {
    return data[(static_cast<std::size_t>(ci) * h + y) * w + x];
  }

  bool same_shape(const TensorT& o) const { return c == o.c && h == o.h && w == o.w; }
};

using Tensor = TensorT<Half>;
using TensorF = TensorT<float>;
using TensorD = TensorT<double>;

template <typename T>
inline TensorT<T> transpose_hw(const TensorT<T>& t) {
  TensorT<T> r(t.c, t.w, t.h);
  for (int ci = 0; ci < t.c; ++ci)
    for (int y = 0; y < t.h; ++y)
      for (int x = 0; x < t.w; ++x) r.at(ci, x, y) = t.at(ci, y, x);
  return r;
}

inline TensorF to_float(const Tensor& t) {
  TensorF r(t.c, t.h, t.w);
  for (std::size_t i = 0; i < t.size(); ++i) r.data[i] = t.data[i].to_float();
  return r;
}

inline Tensor to_half(const TensorF& t) {
  Tensor r(t.c, t.h, t.w);
  for (std::size_t i = 0; i < t.size(); ++i) r.data[i] = Half::from_float(t.data[i]);
  return r;
}

inline TensorD to_double(const Tensor& t) {
  TensorD r(t.c, t.h, t.w);
  for (std::size_t i = 0; i < t.size(); ++i) r.data[i] = t.data[i].to_double();
  return r;
}

// Tensor container: magic "TNSR", version byte, dtype byte (0 = half,
// 1 = float32), two pad bytes, u32 C/H/W, then the little-endian payload.
// Ingestion rejects NaN and infinity.

inline std::vector<std::uint8_t> tensor_to_bytes(const Tensor& t) {
  io::Writer w;
  w.magic("TNSR");
  w.u8(1);
  w.u8(0);
  w.u16(0);
  w.u32(static_cast<std::uint32_t>(t.c));
  w.u32(static_cast<std::uint32_t>(t.h));
  w.u32(static_cast<std::uint32_t>(t.w));
  for (Half v : t.data) w.u16(v.bits());
  return w.take();
}

inline std::vector<std::uint8_t> tensor_to_bytes(const TensorF& t) {
  io::Writer w;
  w.magic("TNSR");
  w.u8(1);
  w.u8(1);
  w.u16(0);
  w.u32(static_cast<std::uint32_t>(t.c));
  w.u32(static_cast<std::uint32_t>(t.h));
  w.u32(static_cast<std::uint32_t>(t.w));
  for (float v : t.data) w.f32(v);
  return w.take();
}

// Loads either dtype; float payloads are rounded to half on load.
inline Tensor tensor_from_bytes(const std::uint8_t* p, std::size_t n) {
  io::Reader r(p, n);
  r.magic("TNSR");
  if (r.u8() != 1) throw FormatError("unsupported tensor container version");
  std::uint8_t dtype = r.u8();
  if (dtype > 1) throw FormatError("unknown tensor dtype");
  r.u16();
  std::uint32_t c = r.u32(), h = r.u32(), w = r.u32();
  constexpr std::uint64_t kDimCap = 1u << 20;
  if (c > kDimCap || h > kDimCap || w > kDimCap)
    throw FormatError("tensor dimension out of range");
  std::uint64_t count = static_cast<std::uint64_t>(c) * h * w;
  if (r.remaining() != count * (dtype == 0 ? 2 : 4))
    throw FormatError("tensor payload size mismatch");
  Tensor t(static_cast<int>(c), static_cast<int>(h), static_cast<int>(w));
  for (std::uint64_t i = 0; i < count; ++i) {
    if (dtype == 0) {
      Half v = Half::from_bits(r.u16());
      if (!v.is_finite()) throw FormatError("non-finite value in tensor payload");
      t.data[i] = v;
    } else {
      float f = r.f32();
      if (!std::isfinite(f)) throw FormatError("non-finite value in tensor payload");
      t.data[i] = Half::from_float(f);
    }
  }
  return t;
}

inline Tensor tensor_from_bytes(const std::vector<std::uint8_t>& v) {
  return tensor_from_bytes(v.data(), v.size());
}

inline void save_tensor(const std::string& path, const Tensor& t) {
  io::write_file(path, tensor_to_bytes(t));
}

inline Tensor load_tensor(const std::string& path) {
  return tensor_from_bytes(io::read_file(path));
}

}  // namespace fcnvm
