// SPDX-License-Identifier: Apache-2.0
//
// Independent references the tests measure everything else against: a plain
// nested-loop network evaluator (float or double), a flood-fill component
// labeler, and error-metric reporting. Deliberately shares no kernel code
// with the simulated datapath, so agreement between the two is evidence.

#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fcnvm/errors.hpp"
#include "fcnvm/model.hpp"
#include "fcnvm/tensor.hpp"
#include "fcnvm/weights.hpp"

namespace fcnvm::oracle {

enum class Precision { F32, F64 };

namespace odetail {

// F32 mode routes every intermediate through float rounding; F64 stays double.
inline double rnd(double v, Precision p) {
  return p == Precision::F32 ? static_cast<double>(static_cast<float>(v)) : v;
}

inline TensorD conv(const TensorD& in, const ConvWeights& cw, int stride, Precision p) {
  int oh = (in.h + stride - 1) / stride, ow = (in.w + stride - 1) / stride;
  int pad = cw.kh / 2;
  TensorD out(cw.out_ch, oh, ow);
  for (int o = 0; o < cw.out_ch; ++o)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        double acc = cw.bias[o];
        for (int c = 0; c < cw.in_ch; ++c)
          for (int ky = 0; ky < cw.kh; ++ky)
            for (int kx = 0; kx < cw.kw; ++kx) {
              int sy = y * stride + ky - pad, sx = x * stride + kx - pad;
              if (sy < 0 || sy >= in.h || sx < 0 || sx >= in.w) continue;
              acc = rnd(acc + rnd(in.at(c, sy, sx) * cw.at(o, c, ky, kx), p), p);
            }
        out.at(o, y, x) = acc;
      }
  return out;
}

inline TensorD max_pool(const TensorD& in, int k) {
  int oh = (in.h + 1) / 2, ow = (in.w + 1) / 2;
  int off = k == 3 ? -1 : 0;
  TensorD out(in.c, oh, ow);
  for (int c = 0; c < in.c; ++c)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        bool seen = false;
        double best = 0;
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            int sy = 2 * y + off + ky, sx = 2 * x + off + kx;
            if (sy < 0 || sy >= in.h || sx < 0 || sx >= in.w) continue;
            double v = in.at(c, sy, sx);
            if (!seen || v > best) best = v, seen = true;
          }
        out.at(c, y, x) = best;
      }
  return out;
}

// Zero-insertion by 2 followed by the fixed (1,2,1)x(1,2,1)/4 smoothing
// stencil; nearest mode replicates each source pixel into its 2x2 block.
inline TensorD upsample2x(const TensorD& in, bool bilinear, Precision p) {
  int oh = 2 * in.h, ow = 2 * in.w;
  TensorD out(in.c, oh, ow);
  static const double kTap[3] = {0.25, 0.5, 0.25};
  for (int c = 0; c < in.c; ++c)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        if (!bilinear) {
          out.at(c, y, x) = in.at(c, y / 2, x / 2);
          continue;
        }
        double acc = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            int sy = y + dy, sx = x + dx;
            if (sy < 0 || sy >= oh || sx < 0 || sx >= ow) continue;
            if (sy % 2 || sx % 2) continue;
            double w = kTap[dy + 1] * kTap[dx + 1] * 4.0;  // exact powers of two
            acc = rnd(acc + rnd(in.at(c, sy / 2, sx / 2) * w, p), p);
          }
        out.at(c, y, x) = acc;
      }
  return out;
}

inline TensorD sigmoid(const TensorD& in, Precision p) {
  TensorD out(in.c, in.h, in.w);
  for (std::size_t i = 0; i < in.size(); ++i) {
    if (p == Precision::F32)
      out.data[i] = 1.0f / (1.0f + std::exp(static_cast<float>(-in.data[i])));
    else
      out.data[i] = 1.0 / (1.0 + std::exp(-in.data[i]));
  }
  return out;
}

}  // namespace odetail

// Evaluates every layer of the graph with naive direct loops.  Returns the
// post-activation tensor of each layer keyed by id.  Precision::F32 rounds
// each multiply and add to float; F64 keeps doubles throughout.
inline std::map<std::string, TensorD> reference_forward(const ModelGraph& g,
                                                        const WeightStore& ws,
                                                        const Tensor& input,
                                                        Precision p = Precision::F32) {
  using namespace odetail;
  std::map<std::string, TensorD> acts;
  TensorD in0 = to_double(input);

  auto gather = [&](const LayerSpec& l) -> TensorD {
    if (l.inputs.empty()) {
      if (in0.c != l.in_ch)
        throw ShapeError("layer " + l.id + ": input has " + std::to_string(in0.c) +
                         " channels, expected " + std::to_string(l.in_ch));
      return in0;
    }
    int take = l.residual == ResidualRole::AddCached ? 1 : static_cast<int>(l.inputs.size());
    const TensorD& first = acts.at(l.inputs[0]);
    if (take == 1) return first;
    TensorD cat(0, first.h, first.w);
    for (int i = 0; i < take; ++i) {
      const TensorD& t = acts.at(l.inputs[i]);
      if (t.h != cat.h || t.w != cat.w)
        throw ShapeError("layer " + l.id + ": concat members disagree on spatial size");
      cat.c += t.c;
      cat.data.insert(cat.data.end(), t.data.begin(), t.data.end());
    }
    return cat;
  };

  for (const auto& l : g.layers) {
    TensorD src = gather(l);
    TensorD out(0, 0, 0);
    switch (l.kind) {
      case LayerKind::Conv: {
        const ConvWeights& cw = ws.of(l.id);
        check_weights(l, cw);
        if (src.c != cw.in_ch)
          throw ShapeError("layer " + l.id + ": channel mismatch");
        out = conv(src, cw, stride_count(l.stride), p);
        if (l.bn) {
          const BatchNorm& bn = *l.bn;
          for (int o = 0; o < out.c; ++o) {
            double scale = bn.gamma[o] / std::sqrt(static_cast<double>(bn.variance[o]) + bn.epsilon);
            for (int y = 0; y < out.h; ++y)
              for (int x = 0; x < out.w; ++x)
                out.at(o, y, x) = rnd((out.at(o, y, x) - bn.mean[o]) * scale + bn.beta[o], p);
          }
        }
        break;
      }
      case LayerKind::MaxPool:
        out = max_pool(src, kernel_extent(l.kernel));
        break;
      case LayerKind::Upsample:
        out = upsample2x(src, l.kernel == Kernel::K3, p);
        break;
      case LayerKind::Sigmoid:
        out = sigmoid(src, p);
        break;
      case LayerKind::Null:
        out = src;
        break;
    }
    if (l.residual == ResidualRole::AddCached) {
      const TensorD& sc = acts.at(l.inputs.at(1));
      if (!sc.same_shape(out))
        throw ShapeError("layer " + l.id + ": residual operands disagree on shape");
      for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = rnd(out.data[i] + sc.data[i], p);
    }
    if (l.relu)
      for (auto& v : out.data)
        if (v < 0) v = 0;
    acts.emplace(l.id, std::move(out));
  }
  return acts;
}

// Convenience: just the two named network outputs.
inline std::map<std::string, TensorD> reference_outputs(const ModelGraph& g,
                                                        const WeightStore& ws,
                                                        const Tensor& input,
                                                        Precision p = Precision::F32) {
  auto acts = reference_forward(g, ws, input, p);
  return {{g.outputs.score, acts.at(g.outputs.score)}, {g.outputs.link, acts.at(g.outputs.link)}};
}

// Flood fill over an h x w positive mask with a caller-supplied merge
// predicate on 8-neighbor pairs: joinable(y, x, k) says whether the
// positive pixel (y, x) merges with its neighbor in direction k.
// Directions follow the fixed order E, SE, S, SW, W, NW, N, NE.
// Returns per-pixel labels, -1 for background, components numbered from 0
// in scan-discovery order.
inline constexpr int kNeighborDy[8] = {0, 1, 1, 1, 0, -1, -1, -1};
inline constexpr int kNeighborDx[8] = {1, 1, 0, -1, -1, -1, 0, 1};

inline std::vector<int> flood_fill_cc(int h, int w, const std::vector<std::uint8_t>& mask,
                                      const std::function<bool(int, int, int)>& joinable,
                                      int* component_count = nullptr) {
  if (static_cast<std::size_t>(h) * w != mask.size())
    throw ShapeError("mask size does not match h*w");
  std::vector<int> label(mask.size(), -1);
  std::vector<int> stack;
  int next = 0;
  for (int y0 = 0; y0 < h; ++y0)
    for (int x0 = 0; x0 < w; ++x0) {
      if (!mask[y0 * w + x0] || label[y0 * w + x0] >= 0) continue;
      label[y0 * w + x0] = next;
      stack.push_back(y0 * w + x0);
      while (!stack.empty()) {
        int at = stack.back();
        stack.pop_back();
        int y = at / w, x = at % w;
        for (int k = 0; k < 8; ++k) {
          int ny = y + kNeighborDy[k], nx = x + kNeighborDx[k];
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          if (!mask[ny * w + nx] || label[ny * w + nx] >= 0) continue;
          if (!joinable(y, x, k)) continue;
          label[ny * w + nx] = next;
          stack.push_back(ny * w + nx);
        }
      }
      ++next;
    }
  if (component_count) *component_count = next;
  return label;
}

// Error metrics between a simulated run and the reference, per tensor name.
struct TensorError {
  std::string name;
  double max_abs = 0;
  double max_rel = 0;
  double rms = 0;
  std::size_t count = 0;
};

struct ErrorReport {
  std::vector<TensorError> entries;
  std::string worst;  // entry with the largest max_rel
  double worst_abs = 0;
  double worst_rel = 0;

  bool within(double tol) const { return worst_rel <= tol; }
};

// Relative error denominators are floored so near-zero reference values do
// not blow the ratio up.
inline constexpr double kRelFloor = 1e-6;

// Every tensor in `got` must exist in `ref` with the same shape.
inline ErrorReport compare_runs(const std::map<std::string, TensorD>& ref,
                                const std::map<std::string, TensorD>& got) {
  ErrorReport rep;
  for (const auto& [name, sim] : got) {
    auto it = ref.find(name);
    if (it == ref.end()) throw ShapeError("no reference tensor named " + name);
    const TensorD& want = it->second;
    if (!want.same_shape(sim)) throw ShapeError("tensor " + name + ": shape mismatch");
    TensorError e;
    e.name = name;
    e.count = want.size();
    double sq = 0;
    for (std::size_t i = 0; i < want.size(); ++i) {
      double d = std::fabs(sim.data[i] - want.data[i]);
      e.max_abs = std::max(e.max_abs, d);
      e.max_rel = std::max(e.max_rel, d / std::max(std::fabs(want.data[i]), kRelFloor));
      sq += d * d;
    }
    e.rms = e.count ? std::sqrt(sq / static_cast<double>(e.count)) : 0.0;
    if (rep.entries.empty() || e.max_rel > rep.worst_rel) {
      rep.worst = name;
      rep.worst_rel = e.max_rel;
    }
    rep.worst_abs = std::max(rep.worst_abs, e.max_abs);
    rep.entries.push_back(std::move(e));
  }
  return rep;
}

inline std::string format_table(const ErrorReport& rep) {
  std::string out = "tensor                     max_abs       max_rel           rms\n";
  char line[160];
  for (const auto& e : rep.entries) {
    std::snprintf(line, sizeof line, "%-22s %12.5e %13.5e %13.5e\n", e.name.c_str(), e.max_abs,
                  e.max_rel, e.rms);
    out += line;
  }
  std::snprintf(line, sizeof line, "worst: %s (max_rel %.5e)\n",
                rep.entries.empty() ? "-" : rep.worst.c_str(), rep.worst_rel);
  out += line;
  return out;
}

inline nlohmann::ordered_json report_json(const ErrorReport& rep) {
  nlohmann::ordered_json j;
  j["tensors"] = nlohmann::ordered_json::array();
  for (const auto& e : rep.entries)
    j["tensors"].push_back({{"name", e.name},
                            {"max_abs", e.max_abs},
                            {"max_rel", e.max_rel},
                            {"rms", e.rms},
                            {"elements", e.count}});
  j["worst"] = rep.worst;
  j["worst_abs"] = rep.worst_abs;
  j["worst_rel"] = rep.worst_rel;
  return j;
}

}  // namespace fcnvm::oracle
