// SPDX-License-Identifier: Apache-2.0
//
// Block floating point.  A block of values shares one exponent: the maximum
// of the per-value exponents.  Each value keeps a signed fixed-point mantissa
// aligned to that exponent, produced by truncation toward zero, so a block
// multiplies as pure integers with one scale factor applied at the end.
//
// With mantissa width w (sign included) the fraction anchor is F = w - 2 and
// the worst-case quantization error of one value is 2^(exponent - F).

#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "fcnvm/errors.hpp"
#include "fcnvm/half.hpp"

namespace fcnvm {

struct BfpConfig {
  int block_size = 32;   // values sharing one exponent, along input channels
  int mant_width = 16;   // signed mantissa bits, sign included

  void validate() const {
    if (block_size < 1) throw ConfigError("block_size must be positive");
    // 24 keeps block dot products inside int64 for any supported block count.
    if (mant_width < 4 || mant_width > 24)
      throw ConfigError("mant_width out of supported range [4,24]");
  }
};

struct BfpBlock {
  int shared_exponent = 0;
  int mant_width = 16;
  std::vector<std::int32_t> mantissas;

  int fraction_bits() const { return mant_width - 2; }

  double reconstruct(std::size_t i) const {
    return std::ldexp(static_cast<double>(mantissas[i]), shared_exponent - fraction_bits());
  }
};

// Shared-exponent quantization of one block.  An all-zero block keeps
// exponent 0 so reconstruction stays exact.
inline BfpBlock normalize_block(const double* values, std::size_t n, int mant_width) {
  if (mant_width < 4 || mant_width > 24) throw ConfigError("mant_width out of supported range [4,24]");
  BfpBlock b;
  b.mant_width = mant_width;
  b.mantissas.resize(n);
  int xi = 0;
  bool any = false;
  for (std::size_t i = 0; i < n; ++i) {
    double v = values[i];
    if (!std::isfinite(v)) throw FormatError("non-finite value in block quantization");
    if (v != 0.0) {
      int e = std::ilogb(v);
      if (!any || e > xi) xi = e;
      any = true;
    }
  }
  b.shared_exponent = any ? xi : 0;
  const int f = b.fraction_bits();
  for (std::size_t i = 0; i < n; ++i) {
    // Truncation toward zero; equivalent to quantizing in the value's own
    // binade and then shifting the mantissa right by the exponent gap.
    b.mantissas[i] = static_cast<std::int32_t>(std::trunc(std::ldexp(values[i], f - b.shared_exponent)));
  }
  return b;
}

inline BfpBlock normalize_block(const std::vector<double>& values, int mant_width) {
  return normalize_block(values.data(), values.size(), mant_width);
}

// Dot product of two blocks: exact in int64, one rounding into the
// accumulator format.  Safe for any block length up to 4096 at width 24.
inline ExtAccum block_dot(const BfpBlock& a, const BfpBlock& b) {
  if (a.mantissas.size() != b.mantissas.size())
    throw ShapeError("block_dot length mismatch");
  std::int64_t s = 0;
  for (std::size_t i = 0; i < a.mantissas.size(); ++i)
    s += static_cast<std::int64_t>(a.mantissas[i]) * b.mantissas[i];
  int exp2 = (a.shared_exponent - a.fraction_bits()) + (b.shared_exponent - b.fraction_bits());
  return ExtAccum::from_scaled_int(s, exp2);
}

}  // namespace fcnvm
