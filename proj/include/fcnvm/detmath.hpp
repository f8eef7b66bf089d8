// SPDX-License-Identifier: Apache-2.0
//
// Deterministic elementary functions.  libm's exp differs by an ulp or two
// across platforms, which is enough to flip a Half rounding and break golden
// byte comparisons.  This exp uses a fixed Cody-Waite reduction and a fixed
// Taylor evaluation order, so it is a pure function of IEEE double arithmetic
// and gives identical bits everywhere.  Accuracy is a couple of double ulps,
// far below the Half quantization that follows it.

#pragma once

#include <cmath>
#include <limits>

#include "fcnvm/half.hpp"

namespace fcnvm::detmath {

inline double exp_det(double x) {
  if (std::isnan(x)) return x;
  if (x > 709.8) return std::numeric_limits<double>::infinity();
  if (x < -745.0) return 0.0;

  // x = k*ln2 + r with |r| <= ln2/2; the hi/lo split keeps k*ln2 exact.
  constexpr double kInvLn2 = 1.44269504088896338700e+00;
  constexpr double kLn2Hi = 6.93147180369123816490e-01;
  constexpr double kLn2Lo = 1.90821492927058770002e-10;
  double t = std::floor(x * kInvLn2 + 0.5);
  int k = static_cast<int>(t);
  double r = (x - t * kLn2Hi) - t * kLn2Lo;

  // Taylor series to degree 13; remainder < 4e-18 relative at |r| <= 0.347.
  constexpr int kDeg = 13;
  double c[kDeg + 1];
  c[0] = 1.0;
  for (int i = 1; i <= kDeg; ++i) c[i] = c[i - 1] / static_cast<double>(i);
  double p = c[kDeg];
  for (int i = kDeg - 1; i >= 0; --i) p = p * r + c[i];
  return std::ldexp(p, k);
}

inline double sigmoid_det(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + exp_det(-x));
  }
  double e = exp_det(x);
  return e / (1.0 + e);
}

// The activation unit evaluates in single precision and stores Half.
inline Half sigmoid_half(Half x) {
  float f = static_cast<float>(sigmoid_det(x.to_double()));
  return Half::from_float(f);
}

}  // namespace fcnvm::detmath
