// SPDX-License-Identifier: Apache-2.0
//
// Model builders for tests and fixtures: the two canonical extractor
// backbones, a seeded random model family, and seeded parameter/input
// generators.  Randomness comes from mt19937_64 with explicit bit-to-double
// conversion so fixtures are byte-stable across standard libraries.

#pragma once

#include <random>
#include <string>
#include <vector>

#include "fcnvm/model.hpp"
#include "fcnvm/tensor.hpp"
#include "fcnvm/weights.hpp"

namespace fcnvm::zoo {

inline double uniform01(std::mt19937_64& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& g, double lo, double hi) {
  return lo + (hi - lo) * uniform01(g);
}

namespace zoodetail {

inline LayerSpec conv(std::string id, std::string in, int ic, int oc, Kernel k, Stride s,
                      bool relu) {
  LayerSpec l;
  l.id = std::move(id);
  l.kind = LayerKind::Conv;
  l.in_ch = ic;
  l.out_ch = oc;
  l.kernel = k;
  l.stride = s;
  l.relu = relu;
  if (!in.empty()) l.inputs = {std::move(in)};
  return l;
}

inline LayerSpec pool(std::string id, std::string in, int ch, Kernel k) {
  LayerSpec l;
  l.id = std::move(id);
  l.kind = LayerKind::MaxPool;
  l.in_ch = ch;
  l.out_ch = ch;
  l.kernel = k;
  l.stride = Stride::S2;
  l.inputs = {std::move(in)};
  return l;
}

inline LayerSpec upsample(std::string id, std::string in, int ch) {
  LayerSpec l;
  l.id = std::move(id);
  l.kind = LayerKind::Upsample;
  l.in_ch = ch;
  l.out_ch = ch;
  l.kernel = Kernel::K3;  // bilinear
  l.inputs = {std::move(in)};
  return l;
}

inline LayerSpec sigmoid(std::string id, std::string in, int ch) {
  LayerSpec l;
  l.id = std::move(id);
  l.kind = LayerKind::Sigmoid;
  l.in_ch = ch;
  l.out_ch = ch;
  l.kernel = Kernel::K1;
  l.inputs = {std::move(in)};
  return l;
}

// Detection heads shared by every builder: a 3x3 neck after 2x upsampling,
// then 1x1 score (2ch) and link (16ch) projections through sigmoid.
inline void attach_heads(ModelGraph& g, const std::string& backbone, int backbone_ch) {
  g.layers.push_back(upsample("up_final", backbone, backbone_ch));
  g.layers.push_back(conv("neck", "up_final", backbone_ch, 64, Kernel::K3, Stride::S1, true));
  g.layers.push_back(conv("score_logits", "neck", 64, 2, Kernel::K1, Stride::S1, false));
  g.layers.push_back(sigmoid("score", "score_logits", 2));
  g.layers.push_back(conv("link_logits", "neck", 64, 16, Kernel::K1, Stride::S1, false));
  g.layers.push_back(sigmoid("link", "link_logits", 16));
  g.outputs.score = "score";
  g.outputs.link = "link";
}

}  // namespace zoodetail

// The 13-conv / 5-pool feature extractor, plus detection heads on the fusion
// side so the extraction program carries exactly the backbone.
inline ModelGraph vgg16() {
  using namespace zoodetail;
  ModelGraph g;
  const int plan[5][2] = {{64, 2}, {128, 2}, {256, 3}, {512, 3}, {512, 3}};
  std::string prev;
  int prev_ch = 3;
  int n = 0;
  for (int s = 0; s < 5; ++s) {
    for (int i = 0; i < plan[s][1]; ++i) {
      std::string id = "conv" + std::to_string(++n);
      g.layers.push_back(conv(id, prev, prev_ch, plan[s][0], Kernel::K3, Stride::S1, true));
      prev = id;
      prev_ch = plan[s][0];
    }
    std::string id = "pool" + std::to_string(s + 1);
    g.layers.push_back(pool(id, prev, prev_ch, Kernel::K2));
    prev = id;
  }
  attach_heads(g, prev, prev_ch);
  g.validate();
  return g;
}

// The 53-conv bottleneck extractor: 7x7 stem, 3x3 pool, stages of 3/4/6/3
// bottlenecks with 1x1 projections on each first block (stride on the 3x3).
inline ModelGraph resnet50() {
  using namespace zoodetail;
  ModelGraph g;
  g.layers.push_back(conv("stem", "", 3, 64, Kernel::K7, Stride::S2, true));
  g.layers.push_back(pool("pool1", "stem", 64, Kernel::K3));
  const int blocks[4] = {3, 4, 6, 3};
  const int width[4] = {64, 128, 256, 512};
  std::string prev = "pool1";
  int prev_ch = 64;
  for (int st = 0; st < 4; ++st) {
    int mid = width[st], out = width[st] * 4;
    for (int b = 0; b < blocks[st]; ++b) {
      std::string base = "c" + std::to_string(st + 2) + "b" + std::to_string(b + 1);
      bool first = b == 0;
      Stride s = (first && st > 0) ? Stride::S2 : Stride::S1;
      std::string shortcut = prev;
      if (first) {
        LayerSpec proj = conv(base + "_proj", prev, prev_ch, out, Kernel::K1, s, false);
        proj.residual = ResidualRole::CacheStart;
        g.layers.push_back(proj);
        shortcut = base + "_proj";
      }
      g.layers.push_back(conv(base + "_1", prev, prev_ch, mid, Kernel::K1, Stride::S1, true));
      g.layers.push_back(conv(base + "_2", base + "_1", mid, mid, Kernel::K3, s, true));
      LayerSpec add = conv(base + "_3", base + "_2", mid, out, Kernel::K1, Stride::S1, true);
      add.residual = ResidualRole::AddCached;
      add.inputs.push_back(shortcut);
      g.layers.push_back(add);
      prev = base + "_3";
      prev_ch = out;
    }
  }
  attach_heads(g, prev, prev_ch);
  g.validate();
  return g;
}

// Seeded small models: a 3..8-conv trunk, optionally with one residual pair
// or one concat group, then the standard heads.  Trunks keep spatial size
// workable for 16..32 pixel inputs.
inline ModelGraph random_model(std::uint64_t seed) {
  using namespace zoodetail;
  std::mt19937_64 rng(0x9e3779b97f4a7c15ull ^ (seed * 0xbf58476d1ce4e5b9ull + 0x94d049bb133111ebull));
  ModelGraph g;
  const int depth = 3 + static_cast<int>(rng() % 6);
  const bool want_residual = seed % 3 == 2;
  const bool want_concat = seed % 3 == 0;
  const int in_ch = 1 + static_cast<int>(rng() % 3);

  std::string prev;
  int prev_ch = in_ch;
  int n = 0;
  auto add_conv = [&](int oc, Kernel k) {
    std::string id = "t" + std::to_string(++n);
    g.layers.push_back(conv(id, prev, prev_ch, oc, k, Stride::S1, (rng() & 1) != 0));
    prev = id;
    prev_ch = oc;
  };

  for (int i = 0; i < depth; ++i) {
    int oc = 4 << (rng() % 3);  // 4, 8, or 16 channels
    add_conv(oc, (rng() & 1) ? Kernel::K3 : Kernel::K1);
  }

  if (want_residual) {
    // prev output cached implicitly; one 3x3 body conv; add with relu.
    std::string shortcut = prev;
    add_conv(prev_ch, Kernel::K3);
    LayerSpec add = conv("t" + std::to_string(++n), prev, prev_ch, prev_ch, Kernel::K1,
                         Stride::S1, true);
    add.residual = ResidualRole::AddCached;
    add.inputs.push_back(shortcut);
    g.layers.push_back(add);
    prev = add.id;
  }

  if (want_concat) {
    std::string root = prev;
    LayerSpec a = conv("cat_a", root, prev_ch, 8, Kernel::K3, Stride::S1, true);
    LayerSpec b = conv("cat_b", root, prev_ch, 8, Kernel::K1, Stride::S1, false);
    a.concat_group = "g0";
    b.concat_group = "g0";
    g.layers.push_back(a);
    g.layers.push_back(b);
    LayerSpec join = conv("cat_join", "", 16, 16, Kernel::K3, Stride::S1, true);
    join.inputs = {"cat_a", "cat_b"};
    g.layers.push_back(join);
    prev = "cat_join";
    prev_ch = 16;
  }

  attach_heads(g, prev, prev_ch);
  g.validate();
  return g;
}

// Parameters scaled by 1/sqrt(fan-in), values uniform in [-1, 1] before the
// scale; biases uniform in [-0.25, 0.25].
inline WeightStore random_weights(const ModelGraph& g, std::uint64_t seed) {
  std::mt19937_64 rng(0xda3e39cb94b95bdbull ^ seed);
  WeightStore ws;
  for (const auto& l : g.layers) {
    if (l.kind != LayerKind::Conv) continue;
    ConvWeights cw;
    cw.out_ch = l.out_ch;
    cw.in_ch = l.in_ch;
    cw.kh = cw.kw = kernel_extent(l.kernel);
    cw.w.resize(static_cast<std::size_t>(cw.out_ch) * cw.in_ch * cw.kh * cw.kw);
    cw.bias.resize(cw.out_ch);
    double scale = 1.0 / std::sqrt(static_cast<double>(cw.in_ch) * cw.kh * cw.kw);
    for (auto& v : cw.w) v = static_cast<float>(uniform(rng, -1.0, 1.0) * scale);
    for (auto& v : cw.bias) v = static_cast<float>(uniform(rng, -0.25, 0.25));
    ws.layers.emplace(l.id, std::move(cw));
  }
  return ws;
}

inline Tensor random_input(int c, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(0xc2b2ae3d27d4eb4full ^ seed);
  Tensor t(c, h, w);
  for (auto& v : t.data) v = Half::from_double(uniform01(rng));
  return t;
}

}  // namespace fcnvm::zoo
