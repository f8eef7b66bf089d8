// SPDX-License-Identifier: Apache-2.0
//
// Raw convolution parameters (single precision, as trained) and batchnorm
// folding.  Folding happens before quantization: per output channel o with
// scale g = gamma_o / sqrt(variance_o + eps), the kernel scales by g and the
// bias becomes (bias_o - mean_o) * g + beta_o.  The arithmetic runs in
// double and rounds once back to float per value.

#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "fcnvm/errors.hpp"
#include "fcnvm/io.hpp"
#include "fcnvm/model.hpp"

namespace fcnvm {

struct ConvWeights {
  int out_ch = 0, in_ch = 0, kh = 0, kw = 0;
  std::vector<float> w;     // [out][in][kh][kw]
  std::vector<float> bias;  // [out]

  float& at(int o, int c, int y, int x) {
    return w[((static_cast<std::size_t>(o) * in_ch + c) * kh + y) * kw + x];
  }
  const float& at(int o, int c, int y, int x) const {
    return w[((static_cast<std::size_t>(o) * in_ch + c) * kh + y) * kw + x];
  }
};

struct WeightStore {
  std::map<std::string, ConvWeights> layers;

  const ConvWeights& of(const std::string& id) const {
    auto it = layers.find(id);
    if (it == layers.end()) throw GraphError("no weights for layer: " + id);
    return it->second;
  }
};

// Checks a weight record against a conv layer's declared geometry.
inline void check_weights(const LayerSpec& l, const ConvWeights& cw) {
  int k = kernel_extent(l.kernel);
  if (cw.out_ch != l.out_ch || cw.in_ch != l.in_ch || cw.kh != k || cw.kw != k)
    throw ShapeError("weight geometry disagrees with layer " + l.id);
  if (cw.w.size() != static_cast<std::size_t>(cw.out_ch) * cw.in_ch * cw.kh * cw.kw ||
      cw.bias.size() != static_cast<std::size_t>(cw.out_ch))
    throw ShapeError("weight array length disagrees with layer " + l.id);
}

inline std::pair<ModelGraph, WeightStore> fold_batchnorm(const ModelGraph& g,
                                                         const WeightStore& ws) {
  ModelGraph out_g = g;
  WeightStore out_w = ws;
  for (auto& l : out_g.layers) {
    if (!l.bn) continue;
    // validate() already restricted bn to conv layers and checked lengths.
    auto it = out_w.layers.find(l.id);
    if (it == out_w.layers.end()) throw GraphError("no weights for layer: " + l.id);
    ConvWeights& cw = it->second;
    check_weights(l, cw);
    const BatchNorm& bn = *l.bn;
    for (int o = 0; o < cw.out_ch; ++o) {
      double var = bn.variance[o];
      if (var < 0.0) throw RangeError("layer " + l.id + ": negative variance");
      double scale = bn.gamma[o] / std::sqrt(var + static_cast<double>(bn.epsilon));
      for (int c = 0; c < cw.in_ch; ++c)
        for (int y = 0; y < cw.kh; ++y)
          for (int x = 0; x < cw.kw; ++x)
            cw.at(o, c, y, x) = static_cast<float>(cw.at(o, c, y, x) * scale);
      cw.bias[o] =
          static_cast<float>((cw.bias[o] - bn.mean[o]) * scale + static_cast<double>(bn.beta[o]));
    }
    l.bn.reset();
  }
  out_g.validate();
  return {std::move(out_g), std::move(out_w)};
}

// Weight container: magic "FCNW", version byte, u32 record count, then per
// record an id string, u32 out/in/kh/kw, the kernel floats and a bias float
// per output channel.  All values must be finite.

inline std::vector<std::uint8_t> weights_to_bytes(const WeightStore& ws) {
  io::Writer w;
  w.magic("FCNW");
  w.u8(1);
  w.u32(static_cast<std::uint32_t>(ws.layers.size()));
  for (const auto& [id, cw] : ws.layers) {
    w.str(id);
    w.u32(static_cast<std::uint32_t>(cw.out_ch));
    w.u32(static_cast<std::uint32_t>(cw.in_ch));
    w.u32(static_cast<std::uint32_t>(cw.kh));
    w.u32(static_cast<std::uint32_t>(cw.kw));
    for (float v : cw.w) w.f32(v);
    for (float v : cw.bias) w.f32(v);
  }
  return w.take();
}

inline WeightStore weights_from_bytes(const std::vector<std::uint8_t>& bytes) {
  io::Reader r(bytes);
  r.magic("FCNW");
  if (r.u8() != 1) throw FormatError("unsupported weight container version");
  std::uint32_t n = r.u32();
  WeightStore ws;
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string id = r.str();
    ConvWeights cw;
    cw.out_ch = static_cast<int>(r.u32());
    cw.in_ch = static_cast<int>(r.u32());
    cw.kh = static_cast<int>(r.u32());
    cw.kw = static_cast<int>(r.u32());
    constexpr int kChCap = 1 << 16;
    if (cw.out_ch <= 0 || cw.in_ch <= 0 || cw.kh <= 0 || cw.kw <= 0 || cw.out_ch > kChCap ||
        cw.in_ch > kChCap || cw.kh > 7 || cw.kw > 7)
      throw FormatError("weight record geometry out of range for " + id);
    std::size_t count = static_cast<std::size_t>(cw.out_ch) * cw.in_ch * cw.kh * cw.kw;
    cw.w.resize(count);
    for (auto& v : cw.w) {
      v = r.f32();
      if (!std::isfinite(v)) throw FormatError("non-finite weight in " + id);
    }
    cw.bias.resize(cw.out_ch);
    for (auto& v : cw.bias) {
      v = r.f32();
      if (!std::isfinite(v)) throw FormatError("non-finite bias in " + id);
    }
    if (!ws.layers.emplace(id, std::move(cw)).second)
      throw FormatError("duplicate weight record: " + id);
  }
  return ws;
}

inline void save_weights(const std::string& path, const WeightStore& ws) {
  io::write_file(path, weights_to_bytes(ws));
}

inline WeightStore load_weights(const std::string& path) {
  return weights_from_bytes(io::read_file(path));
}

}  // namespace fcnvm
