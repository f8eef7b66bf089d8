// SPDX-License-Identifier: Apache-2.0
//
// Minimal-filtering transforms for F(4x4,3x3), interpolation points
// 0, +-1, +-2, inf. The data-side matrices are integral, so tile and
// inverse transforms over quantized mantissas are exact integer arithmetic;
// the only rounded object in the whole convolution is the pretransformed
// kernel. One output tile costs 36 transform-domain multiplications against
// 144 for direct accumulation.

#pragma once

#include <cstdint>

namespace fcnvm {

// Operation tallies the compute kernels report. Multiplications by the
// transform constants are counted the way the target hardware prices them:
// each 6-wide row pass of the input transform is 6 generic multiplications
// plus 18 additions/subtractions, with no sharing across output lanes.
struct OpCounters {
  std::uint64_t mac_ops = 0;            // direct-path multiply-accumulates
  std::uint64_t transform_mults = 0;    // Winograd transform-domain products
  std::uint64_t wino_row_passes = 0;    // input-transform row passes
  std::uint64_t wino_input_mults = 0;   // constant mults inside row passes
  std::uint64_t wino_input_addsub = 0;  // add/sub inside row passes
  std::uint64_t upsample_macs = 0;      // upsampling multiply-accumulates

  void reset() { *this = OpCounters{}; }
};

namespace winograd {

// B^T (6x6): input transform. Integral by construction.
inline constexpr int kBT[6][6] = {
    {4, 0, -5, 0, 1, 0},  {0, -4, -4, 1, 1, 0}, {0, 4, -4, -1, 1, 0},
    {0, -2, -1, 2, 1, 0}, {0, 2, -1, -2, 1, 0}, {0, 4, 0, -5, 0, 1},
};

// A^T (4x6): output transform. Integral.
inline constexpr int kAT[4][6] = {
    {1, 1, 1, 1, 1, 0},
    {0, 1, -1, 2, -2, 0},
    {0, 1, 1, 4, 4, 0},
    {0, 1, -1, 8, -8, 1},
};

// G (6x3): kernel transform. The only non-integral matrix; applied once at
// compile time.
inline constexpr double kG[6][3] = {
    {1.0 / 4, 0, 0},
    {-1.0 / 6, -1.0 / 6, -1.0 / 6},
    {-1.0 / 6, 1.0 / 6, -1.0 / 6},
    {1.0 / 24, 1.0 / 12, 1.0 / 6},
    {1.0 / 24, -1.0 / 12, 1.0 / 6},
    {0, 0, 1},
};

// One row pass of B^T x. Written as six independent lanes, each one
// constant multiplication and three add/subs; exact in 64-bit integers for
// any |x| < 2^57.
inline void row_pass(const std::int64_t x[6], std::int64_t y[6], OpCounters* ctr) {
  y[0] = 4 * (x[0] - x[2]) - (x[2] - x[4]);
  y[1] = (x[3] + x[4]) - 4 * (x[1] + x[2]);
  y[2] = 4 * (x[1] - x[2]) - (x[3] - x[4]);
  y[3] = (x[4] - x[2]) - 2 * (x[1] - x[3]);
  y[4] = (x[4] - x[2]) + 2 * (x[1] - x[3]);
  y[5] = 4 * (x[1] - x[3]) + (x[5] - x[3]);
  if (ctr) {
    ctr->wino_row_passes += 1;
    ctr->wino_input_mults += 6;
    ctr->wino_input_addsub += 18;
  }
}

// B^T X B over a 6x6 integer tile: six row passes then six column passes.
inline void transform_input(const std::int64_t x[36], std::int64_t t[36], OpCounters* ctr) {
  std::int64_t mid[36];
  for (int r = 0; r < 6; ++r) row_pass(x + 6 * r, mid + 6 * r, ctr);
  for (int c = 0; c < 6; ++c) {
    std::int64_t col[6], out[6];
    for (int r = 0; r < 6; ++r) col[r] = mid[6 * r + c];
    row_pass(col, out, ctr);
    for (int r = 0; r < 6; ++r) t[6 * r + c] = out[r];
  }
}

// A^T M A over a 6x6 integer tile; exact.
inline void inverse_transform(const std::int64_t m[36], std::int64_t y[16]) {
  std::int64_t mid[24];  // A^T M, 4x6
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 6; ++j) {
      std::int64_t acc = 0;
      for (int k = 0; k < 6; ++k) acc += kAT[i][k] * m[6 * k + j];
      mid[6 * i + j] = acc;
    }
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      std::int64_t acc = 0;
      for (int k = 0; k < 6; ++k) acc += mid[6 * i + k] * kAT[j][k];
      y[4 * i + j] = acc;
    }
}

// G w G^T for one 3x3 kernel. Float arithmetic: this runs once per kernel
// at compile time and is the sole source of rounding in the Winograd path.
template <typename F>
inline void transform_kernel(const float w[9], F u[36]) {
  F gw[18];  // G w, 6x3
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 3; ++j) {
      F acc = 0;
      for (int k = 0; k < 3; ++k) acc += static_cast<F>(kG[i][k]) * static_cast<F>(w[3 * k + j]);
      gw[3 * i + j] = acc;
    }
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) {
      F acc = 0;
      for (int k = 0; k < 3; ++k) acc += gw[3 * i + k] * static_cast<F>(kG[j][k]);
      u[6 * i + j] = acc;
    }
}

// Double-precision tile transforms for the oracle arithmetic mode.
inline void transform_input_f64(const double x[36], double t[36]) {
  double mid[36];
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 6; ++c) {
      double acc = 0;
      for (int k = 0; k < 6; ++k) acc += kBT[c][k] * x[6 * r + k];
      mid[6 * r + c] = acc;
    }
  for (int c = 0; c < 6; ++c)
    for (int r = 0; r < 6; ++r) {
      double acc = 0;
      for (int k = 0; k < 6; ++k) acc += kBT[r][k] * mid[6 * k + c];
      t[6 * r + c] = acc;
    }
}

inline void inverse_transform_f64(const double m[36], double y[16]) {
  double mid[24];
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 6; ++j) {
      double acc = 0;
      for (int k = 0; k < 6; ++k) acc += kAT[i][k] * m[6 * k + j];
      mid[6 * i + j] = acc;
    }
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double acc = 0;
      for (int k = 0; k < 6; ++k) acc += mid[6 * i + k] * kAT[j][k];
      y[4 * i + j] = acc;
    }
}

}  // namespace winograd
}  // namespace fcnvm
