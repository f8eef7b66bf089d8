// SPDX-License-Identifier: Apache-2.0
//
// Software floating point for the datapath.
//
// Two storage formats share one codec: Half is IEEE binary16 (1 sign, 5
// exponent bits biased 15, 10 mantissa bits, subnormals, round to nearest
// even) and ExtAccum is the accumulator variant with the mantissa widened to
// 15 bits at the same exponent range.  Partial sums are kept in ExtAccum and
// truncated back to Half once per output element, which removes most of the
// cancellation error of chained binary16 adds without changing the stored
// tensor format.
//
// Everything routes through exact integer rounding; no host FPU rounding mode
// or libm behaviour leaks into results, so outputs are byte-stable across
// platforms.

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>

namespace fcnvm {

namespace fpdetail {

// Round-to-nearest-even encode of (neg ? -1 : +1) * mag * 2^exp2 into the
// [sign | 5-bit exponent | MantBits mantissa] layout.  The value is exact on
// input; the single rounding happens here.
template <int MantBits>
inline std::uint32_t encode_from_int_rne(bool neg, std::uint64_t mag, int exp2, bool saturate) {
  static_assert(MantBits >= 1 && MantBits <= 20);
  constexpr std::uint32_t kSign = 1u << (5 + MantBits);
  constexpr std::uint32_t kMantMask = (1u << MantBits) - 1;
  constexpr std::uint32_t kInf = 31u << MantBits;
  constexpr std::uint32_t kMaxFinite = (30u << MantBits) | kMantMask;
  const std::uint32_t sign = neg ? kSign : 0;

  if (mag == 0) return sign;
  int bl = 64 - std::countl_zero(mag);
  int ue = bl - 1 + exp2;  // unbiased exponent of the value
  // Grid the result lives on: normals use ulp 2^(ue-MantBits), subnormals
  // share the fixed quantum 2^(-14-MantBits).
  int qe = (ue < -14) ? (-14 - MantBits) : (ue - MantBits);
  int shift = exp2 - qe;
  std::uint64_t n;
  if (shift >= 0) {
    n = mag << shift;  // exact; at most MantBits+1 significant bits by construction
  } else {
    int r = -shift;
    if (r > 63) {
      n = 0;  // value far below half the smallest quantum
    } else {
      std::uint64_t kept = mag >> r;
      std::uint64_t rem = mag & ((1ull << r) - 1);
      std::uint64_t half = 1ull << (r - 1);
      if (rem > half || (rem == half && (kept & 1))) ++kept;
      n = kept;
    }
  }
  if (n == 0) return sign;

  int nbl = 64 - std::countl_zero(n);
  if (qe == -14 - MantBits && nbl <= MantBits) {
    return sign | static_cast<std::uint32_t>(n);  // subnormal, exponent field 0
  }
  // Rounding can carry into the next binade; the carry case is always a pure
  // power of two, so the shift below stays exact.
  int extra = nbl - (MantBits + 1);
  std::uint64_t sig = n >> extra;  // extra is 0 or 1
  int unbiased = (nbl - 1) + qe;
  int biased = unbiased + 15;
  if (biased >= 31) return sign | (saturate ? kMaxFinite : kInf);
  return sign | (static_cast<std::uint32_t>(biased) << MantBits) |
         (static_cast<std::uint32_t>(sig) & kMantMask);
}

template <int MantBits>
inline std::uint32_t encode_rne(double v, bool saturate) {
  constexpr std::uint32_t kSign = 1u << (5 + MantBits);
  constexpr std::uint32_t kMantMask = (1u << MantBits) - 1;
  constexpr std::uint32_t kInf = 31u << MantBits;
  bool neg = std::signbit(v);
  if (std::isnan(v)) return kInf | (1u << (MantBits - 1)) | (neg ? kSign : 0);
  if (std::isinf(v))
    return (neg ? kSign : 0) | (saturate ? ((30u << MantBits) | kMantMask) : kInf);
  if (v == 0.0) return neg ? kSign : 0;
  int e;
  double fr = std::frexp(std::fabs(v), &e);           // fr in [0.5, 1)
  auto mag = static_cast<std::uint64_t>(std::ldexp(fr, 53));  // exact 53-bit integer
  return encode_from_int_rne<MantBits>(neg, mag, e - 53, saturate);
}

// Exact: every finite value of these formats is a double.
template <int MantBits>
inline double decode(std::uint32_t bits) {
  const std::uint32_t e = (bits >> MantBits) & 31u;
  const std::uint32_t m = bits & ((1u << MantBits) - 1);
  const bool neg = (bits >> (5 + MantBits)) & 1u;
  double mag;
  if (e == 31) {
    mag = m ? std::numeric_limits<double>::quiet_NaN() : std::numeric_limits<double>::infinity();
  } else if (e == 0) {
    mag = std::ldexp(static_cast<double>(m), -14 - MantBits);
  } else {
    mag = std::ldexp(static_cast<double>(m | (1u << MantBits)), static_cast<int>(e) - 15 - MantBits);
  }
  return neg ? -mag : mag;
}

// One rounded add.  Small exponent gaps make the double sum exact (the exact
// sum needs at most gap + MantBits + 2 <= 53 bits); beyond the gap the small
// operand sits strictly below half an ulp of the result and the sum rounds
// back to the large operand.
template <int MantBits>
inline std::uint32_t add_rne(std::uint32_t a, std::uint32_t b, bool saturate) {
  double da = decode<MantBits>(a);
  double db = decode<MantBits>(b);
  if (da == 0.0 && db == 0.0) {
    constexpr std::uint32_t kSign = 1u << (5 + MantBits);
    return ((a & kSign) && (b & kSign)) ? kSign : 0u;
  }
  if (da == 0.0) return b;
  if (db == 0.0) return a;
  if (std::isnan(da) || std::isnan(db) || std::isinf(da) || std::isinf(db))
    return encode_rne<MantBits>(da + db, saturate);
  int gap = std::ilogb(da) - std::ilogb(db);
  constexpr int kExactGap = 51 - MantBits;
  if (gap > kExactGap) return a;
  if (gap < -kExactGap) return b;
  return encode_rne<MantBits>(da + db, saturate);  // da + db is exact here
}

}  // namespace fpdetail

class Half {
 public:
  constexpr Half() = default;

  static constexpr Half from_bits(std::uint16_t b) {
    Half h;
    h.bits_ = b;
    return h;
  }

  static Half from_double(double v) {
    return from_bits(static_cast<std::uint16_t>(fpdetail::encode_rne<10>(v, false)));
  }

  // float is a subset of double, so one rounding total.
  static Half from_float(float v) { return from_double(static_cast<double>(v)); }

  double to_double() const { return fpdetail::decode<10>(bits_); }
  float to_float() const { return static_cast<float>(to_double()); }  // exact

  std::uint16_t bits() const { return bits_; }
  bool is_negative() const { return (bits_ & 0x8000u) != 0; }
  bool is_finite() const { return (bits_ & 0x7c00u) != 0x7c00u; }
  bool is_nan() const { return (bits_ & 0x7c00u) == 0x7c00u && (bits_ & 0x03ffu) != 0; }

  friend bool operator==(Half a, Half b) { return a.bits_ == b.bits_; }
  friend bool operator!=(Half a, Half b) { return a.bits_ != b.bits_; }

 private:
  std::uint16_t bits_ = 0;
};

class ExtAccum {
 public:
  constexpr ExtAccum() = default;

  static constexpr ExtAccum from_bits(std::uint32_t b) {
    ExtAccum a;
    a.bits_ = b;
    return a;
  }

  // Rounded entry points saturate to the largest finite value on overflow.
  static ExtAccum from_double(double v) {
    return from_bits(fpdetail::encode_rne<15>(v, true));
  }

  // Exact value m * 2^exp2, one rounding.
  static ExtAccum from_scaled_int(std::int64_t m, int exp2) {
    bool neg = m < 0;
    std::uint64_t mag = neg ? (~static_cast<std::uint64_t>(m) + 1) : static_cast<std::uint64_t>(m);
    return from_bits(fpdetail::encode_from_int_rne<15>(neg, mag, exp2, true));
  }

  double to_double() const { return fpdetail::decode<15>(bits_); }
  std::uint32_t bits() const { return bits_; }

  friend bool operator==(ExtAccum a, ExtAccum b) { return a.bits_ == b.bits_; }
  friend bool operator!=(ExtAccum a, ExtAccum b) { return a.bits_ != b.bits_; }

 private:
  std::uint32_t bits_ = 0;
};

// Half -> ExtAccum is exact: same exponent range, wider mantissa.
inline ExtAccum widen(Half h) {
  return ExtAccum::from_bits(fpdetail::encode_rne<15>(h.to_double(), true));
}

// One rounded accumulator add (round to nearest even, saturating).
inline ExtAccum accum_add(ExtAccum a, ExtAccum b) {
  return ExtAccum::from_bits(fpdetail::add_rne<15>(a.bits(), b.bits(), true));
}

// Final narrowing back to storage precision; overflow was already saturated
// in the accumulator, and the narrowing itself saturates too.
inline Half truncate_to_half(ExtAccum a) {
  return Half::from_bits(static_cast<std::uint16_t>(fpdetail::encode_rne<10>(a.to_double(), true)));
}

// Plain binary16 chained add, used when modelling accumulation without the
// widened accumulator.
inline Half half_add(Half a, Half b) {
  return Half::from_bits(static_cast<std::uint16_t>(fpdetail::add_rne<10>(a.bits(), b.bits(), false)));
}

inline Half relu(Half x) { return x.is_negative() ? Half() : x; }

// Ties resolve to the smaller bit pattern so +0 beats -0 regardless of
// operand order; equal nonzero values share one encoding, so the result is
// operand-order independent.
inline Half half_max(Half a, Half b) {
  double da = a.to_double(), db = b.to_double();
  if (da != db) return db > da ? b : a;
  return b.bits() < a.bits() ? b : a;
}

}  // namespace fcnvm
