// SPDX-License-Identifier: Apache-2.0
//
// Layer compute kernels: Winograd and direct convolution over
// block-floating-point operands with extended-precision accumulation, max
// pooling, zero-skip upsampling, sigmoid, and residual addition.
//
// Numeric contract shared by both convolution paths:
//   - activations are quantized once per layer: one shared exponent per
//     input-channel block covering the whole plane, so row tiling and the
//     transpose path see identical mantissas;
//   - within a channel block every operation is exact integer arithmetic;
//   - block results enter a saturating extended accumulator; the bias is
//     its initial value; one final truncation produces the Half output.
//
// Kernels compute in the plane's logical orientation. `transposed` means
// the stored plane is the transpose of the logical one; kernels then swap
// coordinates at the memory boundary but keep the logical iteration order,
// which makes the transpose path bit-exact, not merely close.

#pragma once

#include <cstdint>
#include <vector>

#include "fcnvm/bfp.hpp"
#include "fcnvm/detmath.hpp"
#include "fcnvm/errors.hpp"
#include "fcnvm/half.hpp"
#include "fcnvm/tensor.hpp"
#include "fcnvm/weights.hpp"
#include "fcnvm/winograd.hpp"

namespace fcnvm {

// Block-floating-point view of a CHW Half plane.
struct QuantizedActs {
  int c = 0, h = 0, w = 0;
  int block = 32;
  int fbits = 14;
  std::vector<std::int32_t> mant;  // CHW mantissas
  std::vector<int> expo;           // shared exponent per channel block

  int blocks() const { return (c + block - 1) / block; }
  int block_channels(int b) const { return std::min(block, c - b * block); }

  // Zero-padded mantissa fetch in logical coordinates.
  std::int32_t at(int ch, int y, int x, bool transposed) const {
    int lh = transposed ? w : h, lw = transposed ? h : w;
    if (y < 0 || y >= lh || x < 0 || x >= lw) return 0;
    if (transposed) std::swap(y, x);
    return mant[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }
};

inline QuantizedActs quantize_acts(const Tensor& t, const BfpConfig& cfg = {}) {
  cfg.validate();
  QuantizedActs q;
  q.c = t.c;
  q.h = t.h;
  q.w = t.w;
  q.block = cfg.block_size;
  q.fbits = cfg.mant_width - 2;
  q.mant.resize(t.size());
  const std::size_t plane = static_cast<std::size_t>(t.h) * t.w;
  std::vector<double> vals;
  for (int b = 0; b < q.blocks(); ++b) {
    const int nch = q.block_channels(b);
    vals.resize(nch * plane);
    for (int i = 0; i < nch; ++i)
      for (std::size_t p = 0; p < plane; ++p)
        vals[i * plane + p] = t.data[(b * q.block + i) * plane + p].to_double();
    BfpBlock blk = normalize_block(vals.data(), vals.size(), cfg.mant_width);
    q.expo.push_back(blk.shared_exponent);
    for (int i = 0; i < nch; ++i)
      for (std::size_t p = 0; p < plane; ++p)
        q.mant[(b * q.block + i) * plane + p] = blk.mantissas[i * plane + p];
  }
  return q;
}

// Direct-path weights: one shared exponent per (output channel, kernel
// position, input-channel block), mantissas laid out [o][pos][c].
struct BfpConvWeights {
  int out_ch = 0, in_ch = 0, kh = 0, kw = 0;
  int block = 32;
  int fbits = 14;
  std::vector<std::int32_t> mant;
  std::vector<int> expo;  // [o][pos][block]
  std::vector<float> bias;

  int blocks() const { return (in_ch + block - 1) / block; }
  std::int32_t m_at(int o, int pos, int c) const {
    return mant[(static_cast<std::size_t>(o) * kh * kw + pos) * in_ch + c];
  }
  int e_at(int o, int pos, int b) const {
    return expo[(static_cast<std::size_t>(o) * kh * kw + pos) * blocks() + b];
  }
};

inline BfpConvWeights quantize_weights_direct(const ConvWeights& cw, const BfpConfig& cfg = {}) {
  cfg.validate();
  BfpConvWeights q;
  q.out_ch = cw.out_ch;
  q.in_ch = cw.in_ch;
  q.kh = cw.kh;
  q.kw = cw.kw;
  q.block = cfg.block_size;
  q.fbits = cfg.mant_width - 2;
  q.bias = cw.bias;
  q.mant.resize(static_cast<std::size_t>(cw.out_ch) * cw.kh * cw.kw * cw.in_ch);
  std::vector<double> vals;
  for (int o = 0; o < cw.out_ch; ++o)
    for (int pos = 0; pos < cw.kh * cw.kw; ++pos)
      for (int b = 0; b < q.blocks(); ++b) {
        const int nch = std::min(q.block, cw.in_ch - b * q.block);
        vals.resize(nch);
        for (int i = 0; i < nch; ++i)
          vals[i] = cw.w[(static_cast<std::size_t>(o) * cw.in_ch + b * q.block + i) * cw.kh * cw.kw +
                         pos];
        BfpBlock blk = normalize_block(vals.data(), vals.size(), cfg.mant_width);
        q.expo.push_back(blk.shared_exponent);
        for (int i = 0; i < nch; ++i)
          q.mant[(static_cast<std::size_t>(o) * cw.kh * cw.kw + pos) * cw.in_ch + b * q.block + i] =
              blk.mantissas[i];
      }
  return q;
}

// Winograd-path weights: kernels pretransformed to the 6x6 domain in float,
// then one shared exponent per (output channel, input-channel block) across
// all 36 positions. Mantissas laid out [o][pos][c]. Transform-domain values
// are stored in logical orientation; the transpose path remaps positions at
// access time so both orientations share one weight image byte-for-byte.
struct BfpWinogradWeights {
  int out_ch = 0, in_ch = 0;
  int block = 32;
  int fbits = 14;
  std::vector<std::int32_t> mant;
  std::vector<int> expo;  // [o][block]
  std::vector<float> bias;

  int blocks() const { return (in_ch + block - 1) / block; }
  std::int32_t m_at(int o, int pos, int c) const {
    return mant[(static_cast<std::size_t>(o) * 36 + pos) * in_ch + c];
  }
  int e_at(int o, int b) const { return expo[static_cast<std::size_t>(o) * blocks() + b]; }
};

// The kernel transform spreads one 3x3 kernel's energy across 36 positions
// whose magnitudes span several binades, and the block exponent follows the
// largest. Narrow mantissas would starve the small positions, so the
// transformed kernels carry five extra mantissa bits (the 10-bit spatial to
// 15-bit transform-domain expansion). The widening is capped so the worst
// case |A^T[(U m) o (B^T X B)]A| stays exact in 64-bit integers:
// products <= 2^(fx+fu+2), channel sum x block, inverse transform x 361.
inline int winograd_fraction_bits(const BfpConfig& cfg) {
  const int fx = cfg.mant_width - 2;
  const int headroom = 62 - fx - 2 - static_cast<int>(std::ceil(std::log2(361.0 * 100.0 * cfg.block_size)));
  return std::max(4, std::min({fx + 5, 22, headroom}));
}

inline BfpWinogradWeights transform_weights(const ConvWeights& cw, const BfpConfig& cfg = {}) {
  cfg.validate();
  if (cw.kh != 3 || cw.kw != 3) throw ShapeError("Winograd path requires a 3x3 kernel");
  BfpWinogradWeights q;
  q.out_ch = cw.out_ch;
  q.in_ch = cw.in_ch;
  q.block = cfg.block_size;
  q.fbits = winograd_fraction_bits(cfg);
  q.bias = cw.bias;
  q.mant.resize(static_cast<std::size_t>(cw.out_ch) * 36 * cw.in_ch);

  std::vector<double> u(static_cast<std::size_t>(cw.in_ch) * 36);
  std::vector<double> vals;
  for (int o = 0; o < cw.out_ch; ++o) {
    for (int c = 0; c < cw.in_ch; ++c) {
      float uf[36];
      winograd::transform_kernel<float>(&cw.w[(static_cast<std::size_t>(o) * cw.in_ch + c) * 9],
                                        uf);
      for (int p = 0; p < 36; ++p) u[c * 36 + p] = uf[p];
    }
    for (int b = 0; b < q.blocks(); ++b) {
      const int nch = std::min(q.block, cw.in_ch - b * q.block);
      vals.assign(u.begin() + static_cast<std::size_t>(b) * q.block * 36,
                  u.begin() + (static_cast<std::size_t>(b) * q.block + nch) * 36);
      BfpBlock blk = normalize_block(vals.data(), vals.size(), q.fbits + 2);
      q.expo.push_back(blk.shared_exponent);
      for (int i = 0; i < nch; ++i)
        for (int p = 0; p < 36; ++p)
          q.mant[(static_cast<std::size_t>(o) * 36 + p) * cw.in_ch + b * q.block + i] =
              blk.mantissas[i * 36 + p];
    }
  }
  return q;
}

namespace dpdetail {

inline void check_block_compat(int ab, int wb, int ac, int wc) {
  if (ab != wb) throw ConfigError("activation and weight block sizes differ");
  if (ac != wc) throw ShapeError("input channels do not match weight channels");
}

inline Half finish(ExtAccum acc, bool do_relu) {
  Half h = truncate_to_half(acc);
  return do_relu ? relu(h) : h;
}

}  // namespace dpdetail

// Winograd F(4x4,3x3) convolution over output rows [oy0, oy1) of the stored
// plane. Stride 1, zero padding 1, output spatial size equals input.
inline void conv_winograd_rows(const QuantizedActs& in, const BfpWinogradWeights& w, bool do_relu,
                               bool transposed, int oy0, int oy1, Tensor& out,
                               OpCounters* ctr = nullptr) {
  dpdetail::check_block_compat(in.block, w.block, in.c, w.in_ch);
  const int lh = transposed ? in.w : in.h, lw = transposed ? in.h : in.w;
  if (out.c != w.out_ch || out.h != in.h || out.w != in.w)
    throw ShapeError("output tensor has the wrong shape");

  // Stored rows [oy0, oy1) correspond to logical rows (direct) or logical
  // columns (transposed); either way tiles are enumerated logically.
  const int ty0 = transposed ? 0 : oy0 / 4, ty1 = transposed ? (lh + 3) / 4 : (oy1 + 3) / 4;
  const int tx0 = transposed ? oy0 / 4 : 0, tx1 = transposed ? (oy1 + 3) / 4 : (lw + 3) / 4;

  std::vector<std::int64_t> tdom(static_cast<std::size_t>(in.block) * 36);
  std::vector<ExtAccum> acc(static_cast<std::size_t>(w.out_ch) * 16);

  for (int ty = ty0; ty < ty1; ++ty)
    for (int tx = tx0; tx < tx1; ++tx) {
      for (int o = 0; o < w.out_ch; ++o) {
        ExtAccum b0 = ExtAccum::from_double(w.bias[o]);
        for (int i = 0; i < 16; ++i) acc[o * 16 + i] = b0;
      }
      for (int b = 0; b < in.blocks(); ++b) {
        const int nch = in.block_channels(b);
        for (int i = 0; i < nch; ++i) {
          const int ch = b * in.block + i;
          std::int64_t x[36];
          for (int dy = 0; dy < 6; ++dy)
            for (int dx = 0; dx < 6; ++dx)
              x[6 * dy + dx] = in.at(ch, 4 * ty - 1 + dy, 4 * tx - 1 + dx, transposed);
          winograd::transform_input(x, tdom.data() + static_cast<std::size_t>(i) * 36, ctr);
        }
        for (int o = 0; o < w.out_ch; ++o) {
          std::int64_t prod[36] = {};
          for (int i = 0; i < nch; ++i) {
            const std::int64_t* t = tdom.data() + static_cast<std::size_t>(i) * 36;
            for (int p = 0; p < 36; ++p)
              prod[p] += static_cast<std::int64_t>(w.m_at(o, p, b * in.block + i)) * t[p];
            if (ctr) ctr->transform_mults += 36;
          }
          std::int64_t y[16];
          winograd::inverse_transform(prod, y);
          const int e = (in.expo[b] - in.fbits) + (w.e_at(o, b) - w.fbits);
          for (int i = 0; i < 16; ++i)
            acc[o * 16 + i] = accum_add(acc[o * 16 + i], ExtAccum::from_scaled_int(y[i], e));
        }
      }
      for (int o = 0; o < w.out_ch; ++o)
        for (int dy = 0; dy < 4; ++dy)
          for (int dx = 0; dx < 4; ++dx) {
            const int y = 4 * ty + dy, x = 4 * tx + dx;
            if (y >= lh || x >= lw) continue;
            const int sy = transposed ? x : y, sx = transposed ? y : x;
            if (sy < oy0 || sy >= oy1) continue;
            out.at(o, sy, sx) = dpdetail::finish(acc[o * 16 + 4 * dy + dx], do_relu);
          }
    }
}

// Direct convolution over stored output rows [oy0, oy1). Accumulation order
// is normative: input-channel blocks outer, kernel positions row-major in
// logical orientation inner; this is what makes the transpose path and row
// tiling bit-exact.
inline void conv_direct_rows(const QuantizedActs& in, const BfpConvWeights& w, Stride stride,
                             bool do_relu, bool transposed, int oy0, int oy1, Tensor& out,
                             OpCounters* ctr = nullptr) {
  dpdetail::check_block_compat(in.block, w.block, in.c, w.in_ch);
  if (w.kh != w.kw || (w.kh != 1 && w.kh != 3 && w.kh != 7))
    throw ShapeError("direct path supports 1x1, 3x3, and 7x7 kernels");
  const int s = stride_count(stride);
  const int lh = transposed ? in.w : in.h, lw = transposed ? in.h : in.w;
  const int loh = (lh + s - 1) / s, low = (lw + s - 1) / s;
  const int soh = transposed ? low : loh, sow = transposed ? loh : low;
  if (out.c != w.out_ch || out.h != soh || out.w != sow)
    throw ShapeError("output tensor has the wrong shape");
  const int pad = w.kh / 2;

  for (int sy = oy0; sy < oy1; ++sy)
    for (int sx = 0; sx < sow; ++sx) {
      const int y = transposed ? sx : sy, x = transposed ? sy : sx;
      for (int o = 0; o < w.out_ch; ++o) {
        ExtAccum acc = ExtAccum::from_double(w.bias[o]);
        for (int b = 0; b < in.blocks(); ++b) {
          const int nch = in.block_channels(b);
          for (int pos = 0; pos < w.kh * w.kw; ++pos) {
            const int ky = pos / w.kw, kx = pos % w.kw;
            const int iy = y * s + ky - pad, ix = x * s + kx - pad;
            std::int64_t sum = 0;
            for (int i = 0; i < nch; ++i) {
              const int ch = b * in.block + i;
              sum += static_cast<std::int64_t>(w.m_at(o, pos, ch)) *
                     in.at(ch, iy, ix, transposed);
            }
            if (ctr) ctr->mac_ops += nch;
            const int e = (in.expo[b] - in.fbits) + (w.e_at(o, pos, b) - w.fbits);
            acc = accum_add(acc, ExtAccum::from_scaled_int(sum, e));
          }
        }
        out.at(o, sy, sx) = dpdetail::finish(acc, do_relu);
      }
    }
}

// Max pooling, stride 2, kernel 2 (windows start at 2o) or 3 (windows start
// at 2o-1), edges clipped. Pure Half comparisons: no quantization involved.
inline void max_pool_rows(const Tensor& in, int k, bool transposed, int oy0, int oy1, Tensor& out) {
  if (k != 2 && k != 3) throw ShapeError("pooling kernel must be 2 or 3");
  const int lh = transposed ? in.w : in.h, lw = transposed ? in.h : in.w;
  const int loh = (lh + 1) / 2, low = (lw + 1) / 2;
  const int soh = transposed ? low : loh, sow = transposed ? loh : low;
  if (out.c != in.c || out.h != soh || out.w != sow)
    throw ShapeError("output tensor has the wrong shape");
  const int off = k == 3 ? -1 : 0;

  for (int c = 0; c < in.c; ++c)
    for (int sy = oy0; sy < oy1; ++sy)
      for (int sx = 0; sx < sow; ++sx) {
        const int y = transposed ? sx : sy, x = transposed ? sy : sx;
        Half best;
        bool seen = false;
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            int iy = 2 * y + off + ky, ix = 2 * x + off + kx;
            if (iy < 0 || iy >= lh || ix < 0 || ix >= lw) continue;
            Half v = transposed ? in.at(c, ix, iy) : in.at(c, iy, ix);
            best = seen ? half_max(best, v) : v;
            seen = true;
          }
        out.at(c, sy, sx) = best;
      }
}

// 2x upsampling over stored output rows [oy0, oy1). Bilinear mode is
// zero-insertion followed by the fixed (1,2,1;2,4,2;1,2,1)/4 stencil. Each
// output is a sum of at most four products, every one exact in double, so a
// single final rounding makes the naive and zero-skip paths bit-identical;
// only the MAC tally differs (9 taps per output vs 1+2+2+4 per 2x2 block,
// exactly a 75% reduction).
inline void upsample2x_rows(const Tensor& in, bool bilinear, bool zero_skip, bool transposed,
                            int oy0, int oy1, Tensor& out, OpCounters* ctr = nullptr) {
  const int lh = transposed ? in.w : in.h, lw = transposed ? in.h : in.w;
  const int soh = 2 * in.h, sow = 2 * in.w;
  if (out.c != in.c || out.h != soh || out.w != sow)
    throw ShapeError("output tensor has the wrong shape");

  auto src = [&](int c, int y, int x) -> double {
    return (transposed ? in.at(c, x, y) : in.at(c, y, x)).to_double();
  };

  for (int c = 0; c < in.c; ++c)
    for (int sy = oy0; sy < oy1; ++sy)
      for (int sx = 0; sx < 2 * in.w; ++sx) {
        const int y = transposed ? sx : sy, x = transposed ? sy : sx;
        if (!bilinear) {
          out.at(c, sy, sx) = transposed ? in.at(c, x / 2, y / 2) : in.at(c, y / 2, x / 2);
          continue;
        }
        double acc = 0;
        if (!zero_skip) {
          static const double kTap[3] = {0.25, 0.5, 0.25};
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              if (ctr) ctr->upsample_macs += 1;
              const int zy = y + dy, zx = x + dx;
              if (zy < 0 || zy >= 2 * lh || zx < 0 || zx >= 2 * lw) continue;
              if (zy % 2 || zx % 2) continue;
              acc += src(c, zy / 2, zx / 2) * (kTap[dy + 1] * kTap[dx + 1] * 4.0);
            }
        } else {
          // Phase decomposition: only taps landing on source pixels run.
          const int py = y & 1, px = x & 1;
          const int dy0 = py ? -1 : 0, dy1 = py ? 1 : 0;
          const int dx0 = px ? -1 : 0, dx1 = px ? 1 : 0;
          const double wgt = (py ? 0.5 : 1.0) * (px ? 0.5 : 1.0);
          for (int dy = dy0; dy <= dy1; dy += 2)
            for (int dx = dx0; dx <= dx1; dx += 2) {
              if (ctr) ctr->upsample_macs += 1;
              const int zy = y + dy, zx = x + dx;
              if (zy < 0 || zy >= 2 * lh || zx < 0 || zx >= 2 * lw) continue;
              acc += src(c, zy / 2, zx / 2) * wgt;
            }
        }
        out.at(c, sy, sx) = Half::from_double(acc);
      }
}

// Elementwise logistic function, evaluated through the deterministic
// exponential so results are identical across platforms.
inline void sigmoid_rows(const Tensor& in, int y0, int y1, Tensor& out) {
  if (!out.same_shape(in)) throw ShapeError("output tensor has the wrong shape");
  const std::size_t row = static_cast<std::size_t>(in.w);
  for (int c = 0; c < in.c; ++c)
    for (int y = y0; y < y1; ++y) {
      const std::size_t base = (static_cast<std::size_t>(c) * in.h + y) * row;
      for (std::size_t i = 0; i < row; ++i)
        out.data[base + i] = detmath::sigmoid_half(in.data[base + i]);
    }
}

// Elementwise a + b through the extended accumulator, then truncation.
inline void residual_add_rows(const Tensor& a, const Tensor& b, bool do_relu, int y0, int y1,
                              Tensor& out) {
  if (!a.same_shape(b) || !out.same_shape(a)) throw ShapeError("residual operands differ in shape");
  const std::size_t row = static_cast<std::size_t>(a.w);
  for (int c = 0; c < a.c; ++c)
    for (int y = y0; y < y1; ++y) {
      const std::size_t base = (static_cast<std::size_t>(c) * a.h + y) * row;
      for (std::size_t i = 0; i < row; ++i)
        out.data[base + i] = dpdetail::finish(
            accum_add(widen(a.data[base + i]), widen(b.data[base + i])), do_relu);
    }
}

// Whole-tensor wrappers with the layer-level contracts.

inline Tensor conv_winograd(const Tensor& in, const BfpWinogradWeights& w, bool do_relu,
                            OpCounters* ctr = nullptr, const BfpConfig& cfg = {}) {
  QuantizedActs q = quantize_acts(in, cfg);
  Tensor out(w.out_ch, in.h, in.w);
  conv_winograd_rows(q, w, do_relu, false, 0, in.h, out, ctr);
  return out;
}

inline Tensor conv_direct(const Tensor& in, const BfpConvWeights& w, Stride stride, bool do_relu,
                          OpCounters* ctr = nullptr, const BfpConfig& cfg = {}) {
  QuantizedActs q = quantize_acts(in, cfg);
  const int s = stride_count(stride);
  Tensor out(w.out_ch, (in.h + s - 1) / s, (in.w + s - 1) / s);
  conv_direct_rows(q, w, stride, do_relu, false, 0, out.h, out, ctr);
  return out;
}

inline Tensor max_pool(const Tensor& in, int k) {
  Tensor out(in.c, (in.h + 1) / 2, (in.w + 1) / 2);
  max_pool_rows(in, k, false, 0, out.h, out);
  return out;
}

inline Tensor upsample2x(const Tensor& in, bool bilinear, bool zero_skip,
                         OpCounters* ctr = nullptr) {
  Tensor out(in.c, 2 * in.h, 2 * in.w);
  upsample2x_rows(in, bilinear, zero_skip, false, 0, out.h, out, ctr);
  return out;
}

inline Tensor sigmoid_map(const Tensor& in) {
  Tensor out(in.c, in.h, in.w);
  sigmoid_rows(in, 0, in.h, out);
  return out;
}

inline Tensor residual_add(const Tensor& a, const Tensor& b, bool do_relu) {
  Tensor out(a.c, a.h, a.w);
  residual_add_rows(a, b, do_relu, 0, a.h, out);
  return out;
}

// Double-precision arithmetic mode: same algorithms, no quantization, used
// to check the Winograd construction against direct accumulation.

inline TensorD conv_direct_f64(const TensorD& in, const ConvWeights& cw, int stride,
                               bool do_relu) {
  const int pad = cw.kh / 2;
  TensorD out(cw.out_ch, (in.h + stride - 1) / stride, (in.w + stride - 1) / stride);
  for (int o = 0; o < cw.out_ch; ++o)
    for (int y = 0; y < out.h; ++y)
      for (int x = 0; x < out.w; ++x) {
        double acc = cw.bias[o];
        for (int c = 0; c < cw.in_ch; ++c)
          for (int ky = 0; ky < cw.kh; ++ky)
            for (int kx = 0; kx < cw.kw; ++kx) {
              const int iy = y * stride + ky - pad, ix = x * stride + kx - pad;
              if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) continue;
              acc += in.at(c, iy, ix) * cw.at(o, c, ky, kx);
            }
        out.at(o, y, x) = do_relu && acc < 0 ? 0.0 : acc;
      }
  return out;
}

inline TensorD conv_winograd_f64(const TensorD& in, const ConvWeights& cw, bool do_relu) {
  if (cw.kh != 3 || cw.kw != 3) throw ShapeError("Winograd path requires a 3x3 kernel");
  TensorD out(cw.out_ch, in.h, in.w);
  std::vector<double> u(static_cast<std::size_t>(cw.out_ch) * cw.in_ch * 36);
  for (int o = 0; o < cw.out_ch; ++o)
    for (int c = 0; c < cw.in_ch; ++c) {
      float wf[9];
      for (int i = 0; i < 9; ++i) wf[i] = cw.at(o, c, i / 3, i % 3);
      winograd::transform_kernel<double>(wf, &u[(static_cast<std::size_t>(o) * cw.in_ch + c) * 36]);
    }
  for (int ty = 0; ty < (in.h + 3) / 4; ++ty)
    for (int tx = 0; tx < (in.w + 3) / 4; ++tx)
      for (int o = 0; o < cw.out_ch; ++o) {
        double m[36] = {};
        for (int c = 0; c < cw.in_ch; ++c) {
          double xt[36], t[36];
          for (int dy = 0; dy < 6; ++dy)
            for (int dx = 0; dx < 6; ++dx) {
              const int iy = 4 * ty - 1 + dy, ix = 4 * tx - 1 + dx;
              xt[6 * dy + dx] =
                  iy < 0 || iy >= in.h || ix < 0 || ix >= in.w ? 0.0 : in.at(c, iy, ix);
            }
          winograd::transform_input_f64(xt, t);
          const double* uc = &u[(static_cast<std::size_t>(o) * cw.in_ch + c) * 36];
          for (int p = 0; p < 36; ++p) m[p] += uc[p] * t[p];
        }
        double y[16];
        winograd::inverse_transform_f64(m, y);
        for (int dy = 0; dy < 4; ++dy)
          for (int dx = 0; dx < 4; ++dx) {
            const int oy = 4 * ty + dy, ox = 4 * tx + dx;
            if (oy >= in.h || ox >= in.w) continue;
            double v = y[4 * dy + dx] + cw.bias[o];
            out.at(o, oy, ox) = do_relu && v < 0 ? 0.0 : v;
          }
      }
  return out;
}

}  // namespace fcnvm
