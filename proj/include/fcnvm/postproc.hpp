// SPDX-License-Identifier: Apache-2.0
//
// Score/link post-processing: threshold the score map, join positive pixels
// through positive links with union-find, emit one axis-aligned box per
// connected component.

#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "fcnvm/errors.hpp"
#include "fcnvm/tensor.hpp"

namespace fcnvm {

// Neighbor order shared with the link map channels: E, SE, S, SW, W, NW, N,
// NE.  The reverse direction of k is (k + 4) & 7.
inline constexpr int kLinkDy[8] = {0, 1, 1, 1, 0, -1, -1, -1};
inline constexpr int kLinkDx[8] = {1, 1, 0, -1, -1, -1, 0, 1};

// score: 1xHxW positive-class probability, links: 8xHxW where channel k is
// the link toward neighbor k.  Values are post-sigmoid, so within (0, 1).
struct PredictionMaps {
  Tensor score;
  Tensor links;
};

// Selects the positive halves of the raw network outputs: the score plane is
// channel 1 of the 2-channel map, the link toward neighbor k is channel
// 2k + 1 of the 16-channel map (each pair is stored negative, positive).
inline PredictionMaps prediction_maps(const Tensor& score2, const Tensor& link16) {
  if (score2.c != 2) throw ShapeError("score map must have 2 channels");
  if (link16.c != 16) throw ShapeError("link map must have 16 channels");
  if (score2.h != link16.h || score2.w != link16.w)
    throw ShapeError("score and link maps disagree on height or width");
  PredictionMaps m;
  m.score = Tensor(1, score2.h, score2.w);
  m.links = Tensor(8, score2.h, score2.w);
  for (int y = 0; y < score2.h; ++y)
    for (int x = 0; x < score2.w; ++x) {
      m.score.at(0, y, x) = score2.at(1, y, x);
      for (int k = 0; k < 8; ++k) m.links.at(k, y, x) = link16.at(2 * k + 1, y, x);
    }
  return m;
}

struct TextBox {
  int id = 0;  // component id, numbered by first member pixel in raster order
  int area = 0;
  int x_min = 0, y_min = 0, x_max = 0, y_max = 0;
  double score = 0;  // mean over member pixels

  bool operator==(const TextBox&) const = default;
};

namespace ppdetail {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

}  // namespace ppdetail

// Pixel labeling behind extract_boxes, exposed so the labeling itself can be
// checked against an independent reference.  Returns h*w labels, -1 for
// pixels below score_thresh; component ids count up in raster order of each
// component's first pixel.  Two positive 8-neighbors join when either
// directed link between them clears link_thresh.
inline std::vector<int> link_components(const PredictionMaps& maps, double score_thresh,
                                        double link_thresh, int* component_count = nullptr) {
  if (maps.score.c != 1 || maps.links.c != 8)
    throw ShapeError("prediction maps must be 1- and 8-channel");
  if (maps.score.h != maps.links.h || maps.score.w != maps.links.w)
    throw ShapeError("score and link maps disagree on height or width");
  if (!(score_thresh > 0 && score_thresh < 1) || !(link_thresh > 0 && link_thresh < 1))
    throw RangeError("thresholds must lie strictly inside (0, 1)");

  const int h = maps.score.h, w = maps.score.w;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(h) * w, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      mask[y * w + x] = maps.score.at(0, y, x).to_double() >= score_thresh;

  ppdetail::UnionFind uf(h * w);
  // Scanning the forward half (E, SE, S, SW) visits every unordered
  // neighbor pair exactly once; the either-direction rule reads both
  // pixels' link channels, so the backward half is already covered.
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (!mask[y * w + x]) continue;
      for (int k = 0; k < 4; ++k) {
        const int ny = y + kLinkDy[k], nx = x + kLinkDx[k];
        if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
        if (!mask[ny * w + nx]) continue;
        if (maps.links.at(k, y, x).to_double() >= link_thresh ||
            maps.links.at((k + 4) & 7, ny, nx).to_double() >= link_thresh)
          uf.unite(y * w + x, ny * w + nx);
      }
    }

  std::vector<int> label(mask.size(), -1);
  std::vector<int> canon(mask.size(), -1);
  int next = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const int root = uf.find(static_cast<int>(i));
    if (canon[root] < 0) canon[root] = next++;
    label[i] = canon[root];
  }
  if (component_count) *component_count = next;
  return label;
}

inline std::vector<TextBox> extract_boxes(const PredictionMaps& maps, double score_thresh = 0.5,
                                          double link_thresh = 0.5, int min_area = 0) {
  if (min_area < 0) throw RangeError("min_area must be non-negative");
  int count = 0;
  const std::vector<int> label = link_components(maps, score_thresh, link_thresh, &count);

  const int h = maps.score.h, w = maps.score.w;
  std::vector<TextBox> boxes(count);
  std::vector<bool> seen(count, false);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int id = label[y * w + x];
      if (id < 0) continue;
      TextBox& b = boxes[id];
      if (!seen[id]) {
        seen[id] = true;
        b.id = id;
        b.x_min = b.x_max = x;
        b.y_min = b.y_max = y;
      } else {
        b.x_min = std::min(b.x_min, x);
        b.x_max = std::max(b.x_max, x);
        b.y_min = std::min(b.y_min, y);
        b.y_max = std::max(b.y_max, y);
      }
      b.area += 1;
      b.score += maps.score.at(0, y, x).to_double();
    }
  for (TextBox& b : boxes) b.score /= b.area;

  boxes.erase(std::remove_if(boxes.begin(), boxes.end(),
                             [min_area](const TextBox& b) { return b.area < min_area; }),
              boxes.end());
  std::sort(boxes.begin(), boxes.end(), [](const TextBox& a, const TextBox& b) {
    return std::tie(a.y_min, a.x_min, a.id) < std::tie(b.y_min, b.x_min, b.id);
  });
  return boxes;
}

inline std::string boxes_to_json(const std::vector<TextBox>& boxes) {
  nlohmann::json arr = nlohmann::json::array();
  for (const TextBox& b : boxes)
    arr.push_back({{"id", b.id},
                   {"area", b.area},
                   {"bbox", {b.x_min, b.y_min, b.x_max, b.y_max}},
                   {"score", b.score}});
  return arr.dump(2) + "\n";
}

}  // namespace fcnvm
