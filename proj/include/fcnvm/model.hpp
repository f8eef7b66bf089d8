// SPDX-License-Identifier: Apache-2.0
//
// Layer-graph intermediate representation.
//
// A model is a topologically ordered list of layers plus the two named
// detection outputs.  Layers reference producers by id; an empty input list
// means the layer reads the network input.  Validation is strict: anything
// the compiler or the target machine cannot honour is rejected here or at
// shape-inference time, never silently patched.
//
// Every layer also belongs to one of two execution stages.  The stage is not
// part of the on-disk schema; it is derived: upsampling and sigmoid layers
// run on the fusion unit, and fusion-ness propagates forward along edges and
// across concat groups.  The fusion unit has no pooling and no 7x7 support,
// and the extraction unit has no sigmoid, so the derived partition is
// checked against those limits.

#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "fcnvm/errors.hpp"

namespace fcnvm {

enum class LayerKind { Conv, MaxPool, Upsample, Sigmoid, Null };
enum class Kernel { K1, K2, K3, K7 };
enum class Stride { S1, S2 };
enum class ResidualRole { None, CacheStart, AddCached };
enum class Stage { Extraction, Fusion };

inline int kernel_extent(Kernel k) {
  switch (k) {
    case Kernel::K1: return 1;
    case Kernel::K2: return 2;
    case Kernel::K3: return 3;
    case Kernel::K7: return 7;
  }
  return 0;
}

inline int stride_count(Stride s) { return s == Stride::S1 ? 1 : 2; }

struct BatchNorm {
  std::vector<float> gamma, beta, mean, variance;
  float epsilon = 1e-5f;

  friend bool operator==(const BatchNorm&, const BatchNorm&) = default;
};

struct LayerSpec {
  std::string id;
  LayerKind kind = LayerKind::Conv;
  int in_ch = 0;
  int out_ch = 0;
  Kernel kernel = Kernel::K3;
  Stride stride = Stride::S1;
  bool relu = false;
  std::vector<std::string> inputs;  // empty = network input
  ResidualRole residual = ResidualRole::None;
  std::string concat_group;         // empty = none
  std::optional<BatchNorm> bn;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ModelOutputs {
  std::string score, link;

  friend bool operator==(const ModelOutputs&, const ModelOutputs&) = default;
};

struct LayerShapes {
  int in_c = 0, in_h = 0, in_w = 0;
  int out_c = 0, out_h = 0, out_w = 0;
};

class ModelGraph {
 public:
  std::vector<LayerSpec> layers;
  ModelOutputs outputs;

  // Rebuilds the id index and stage partition; throws on any structural
  // problem.  Must be called after constructing or mutating the layer list.
  void validate();

  bool has_layer(const std::string& id) const { return index_.count(id) != 0; }

  int layer_pos(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw GraphError("unknown layer id: " + id);
    return it->second;
  }

  const LayerSpec& layer(const std::string& id) const { return layers[layer_pos(id)]; }

  Stage stage(const std::string& id) const { return stages_[layer_pos(id)]; }
  Stage stage_at(int pos) const { return stages_[pos]; }

  friend bool operator==(const ModelGraph& a, const ModelGraph& b) {
    return a.layers == b.layers && a.outputs == b.outputs;
  }

 private:
  std::map<std::string, int> index_;
  std::vector<Stage> stages_;
};

inline void ModelGraph::validate() {
  if (layers.empty()) throw GraphError("model has no layers");
  index_.clear();
  for (int i = 0; i < static_cast<int>(layers.size()); ++i) {
    const auto& l = layers[i];
    if (l.id.empty()) throw GraphError("layer with empty id");
    if (!index_.emplace(l.id, i).second) throw GraphError("duplicate layer id: " + l.id);
  }

  // Edges must point backwards so list order is an execution order.
  for (int i = 0; i < static_cast<int>(layers.size()); ++i) {
    for (const auto& in : layers[i].inputs) {
      auto it = index_.find(in);
      if (it == index_.end())
        throw GraphError("layer " + layers[i].id + " reads unknown id: " + in);
      if (it->second >= i)
        throw GraphError("layer " + layers[i].id + " reads a later layer: " + in);
    }
  }

  for (const auto& l : layers) {
    if (l.in_ch <= 0 || l.out_ch <= 0)
      throw GraphError("layer " + l.id + " has non-positive channel count");

    switch (l.kind) {
      case LayerKind::Conv:
        if (l.kernel != Kernel::K1 && l.kernel != Kernel::K3 && l.kernel != Kernel::K7)
          throw UnsupportedError("layer " + l.id + ": conv kernel must be 1x1, 3x3, or 7x7");
        break;
      case LayerKind::MaxPool:
        if (l.kernel != Kernel::K2 && l.kernel != Kernel::K3)
          throw UnsupportedError("layer " + l.id + ": pool kernel must be 2x2 or 3x3");
        if (l.stride != Stride::S2)
          throw UnsupportedError("layer " + l.id + ": pooling runs at stride 2 only");
        break;
      case LayerKind::Upsample:
        if (l.kernel != Kernel::K1 && l.kernel != Kernel::K3)
          throw UnsupportedError("layer " + l.id +
                                 ": upsample mode must be k1 (nearest) or k3 (bilinear)");
        break;
      case LayerKind::Sigmoid:
      case LayerKind::Null:
        break;
    }

    if (l.kind != LayerKind::Conv) {
      if (l.out_ch != l.in_ch)
        throw GraphError("layer " + l.id + " cannot change channel count");
      if (l.relu) throw GraphError("layer " + l.id + ": relu only applies to conv layers");
      if (l.bn) throw GraphError("layer " + l.id + ": batchnorm only applies to conv layers");
      if (l.residual == ResidualRole::AddCached)
        throw GraphError("layer " + l.id + ": only conv layers can add the cached tensor");
      if (l.kind != LayerKind::MaxPool && l.stride != Stride::S1)
        throw GraphError("layer " + l.id + ": stride 2 is limited to conv and pool");
    }

    const std::size_t want_inputs = (l.residual == ResidualRole::AddCached) ? 2 : 1;
    const bool concat_consumer = l.inputs.size() > 1 && l.residual != ResidualRole::AddCached;
    if (!concat_consumer && l.inputs.size() > want_inputs)
      throw GraphError("layer " + l.id + " has too many inputs");
    if (l.residual == ResidualRole::AddCached && l.inputs.size() != 2)
      throw GraphError("layer " + l.id + " must name (main, shortcut) inputs");

    if (l.bn) {
      const auto& bn = *l.bn;
      auto n = static_cast<std::size_t>(l.out_ch);
      if (bn.gamma.size() != n || bn.beta.size() != n || bn.mean.size() != n ||
          bn.variance.size() != n)
        throw ShapeError("layer " + l.id + ": batchnorm parameter length mismatch");
    }
  }

  // Channel agreement along edges.
  std::map<std::string, std::vector<int>> groups;  // concat id -> member positions
  for (int i = 0; i < static_cast<int>(layers.size()); ++i) {
    if (!layers[i].concat_group.empty()) groups[layers[i].concat_group].push_back(i);
  }
  for (const auto& [gid, members] : groups) {
    if (members.size() < 2) throw GraphError("concat group " + gid + " needs at least two members");
  }

  for (const auto& l : layers) {
    if (l.inputs.empty()) continue;
    if (l.residual == ResidualRole::AddCached) {
      const auto& main = layer(l.inputs[0]);
      const auto& shortcut = layer(l.inputs[1]);
      if (l.in_ch != main.out_ch)
        throw GraphError("layer " + l.id + ": input channels disagree with " + main.id);
      if (l.out_ch != shortcut.out_ch)
        throw GraphError("layer " + l.id + ": shortcut channels disagree with " + shortcut.id);
      continue;
    }
    if (l.inputs.size() == 1) {
      const auto& p = layer(l.inputs[0]);
      if (l.in_ch != p.out_ch)
        throw GraphError("layer " + l.id + ": input channels disagree with " + p.id);
      continue;
    }
    // Multi-input consumer: inputs must be exactly one concat group, in
    // group order (list order of the members).
    const std::string& gid = layer(l.inputs[0]).concat_group;
    if (gid.empty())
      throw GraphError("layer " + l.id + " has multiple inputs that are not a concat group");
    const auto& members = groups.at(gid);
    if (members.size() != l.inputs.size())
      throw GraphError("layer " + l.id + " must consume the whole concat group " + gid);
    int sum = 0;
    for (std::size_t k = 0; k < l.inputs.size(); ++k) {
      const auto& m = layer(l.inputs[k]);
      if (m.concat_group != gid)
        throw GraphError("layer " + l.id + " mixes concat groups");
      if (layer_pos(l.inputs[k]) != members[k])
        throw GraphError("layer " + l.id + " lists concat inputs out of group order");
      sum += m.out_ch;
    }
    if (l.in_ch != sum)
      throw GraphError("layer " + l.id + ": input channels disagree with concat group " + gid);
  }

  // Residual protocol: the machine has a single cache slot.  Each cached
  // tensor must be consumed by exactly one add before anything else claims
  // the slot.  A tensor may be cached either by tagging its producer
  // (cache_start) or implicitly, in which case the compiler snapshots it
  // right after the producer runs; both occupy the slot from the producer's
  // position onward.
  {
    struct Pair {
      int cache_pos;
      int add_pos;
    };
    std::vector<Pair> pairs;
    std::map<int, int> consumers_of;  // producer position -> add count
    for (int i = 0; i < static_cast<int>(layers.size()); ++i) {
      if (layers[i].residual != ResidualRole::AddCached) continue;
      int p = layer_pos(layers[i].inputs[1]);
      pairs.push_back({p, i});
      ++consumers_of[p];
    }
    for (const auto& [p, n] : consumers_of) {
      if (n > 1)
        throw GraphError("layer " + layers[p].id + " is the shortcut of more than one add");
    }
    std::sort(pairs.begin(), pairs.end(),
              [](const Pair& a, const Pair& b) { return a.add_pos < b.add_pos; });
    int prev_add = -1;
    for (const auto& pr : pairs) {
      if (pr.cache_pos < prev_add)
        throw GraphError("residual ranges overlap around layer " + layers[pr.add_pos].id);
      prev_add = pr.add_pos;
    }
    std::set<int> owners;
    for (const auto& pr : pairs) owners.insert(pr.cache_pos);
    for (int i = 0; i < static_cast<int>(layers.size()); ++i) {
      if (layers[i].residual == ResidualRole::CacheStart && !owners.count(i))
        throw GraphError("layer " + layers[i].id + " caches a tensor nothing consumes");
    }
  }

  // Outputs.
  if (outputs.score.empty() || outputs.link.empty())
    throw GraphError("model must name score and link outputs");
  if (layer(outputs.score).out_ch != 2)
    throw GraphError("score output must have 2 channels");
  if (layer(outputs.link).out_ch != 16)
    throw GraphError("link output must have 16 channels");

  // Stage partition: fusion-ness seeds at upsample/sigmoid and propagates
  // forward along edges and across concat groups.
  stages_.assign(layers.size(), Stage::Extraction);
  bool changed = true;
  while (changed) {
    changed = false;
    for (int i = 0; i < static_cast<int>(layers.size()); ++i) {
      if (stages_[i] == Stage::Fusion) continue;
      bool fusion = layers[i].kind == LayerKind::Upsample || layers[i].kind == LayerKind::Sigmoid;
      for (const auto& in : layers[i].inputs)
        fusion = fusion || stages_[layer_pos(in)] == Stage::Fusion;
      if (!fusion && !layers[i].concat_group.empty()) {
        for (int m : groups.at(layers[i].concat_group))
          fusion = fusion || stages_[m] == Stage::Fusion;
      }
      if (fusion) {
        stages_[i] = Stage::Fusion;
        changed = true;
      }
    }
  }
  for (int i = 0; i < static_cast<int>(layers.size()); ++i) {
    if (stages_[i] != Stage::Fusion) continue;
    if (layers[i].kind == LayerKind::MaxPool)
      throw UnsupportedError("layer " + layers[i].id + ": the fusion unit cannot pool");
    if (layers[i].kind == LayerKind::Conv && layers[i].kernel == Kernel::K7)
      throw UnsupportedError("layer " + layers[i].id + ": the fusion unit has no 7x7 support");
  }
}

// Spatial shape propagation.  Convolution pads to kernel/2 on each side, so
// the output extent is ceil(extent / stride) for every supported kernel;
// pooling halves (rounding up, windows clipped at the border); upsampling
// doubles.
inline std::map<std::string, LayerShapes> infer_shapes(const ModelGraph& g, int c, int h, int w) {
  if (c <= 0 || h <= 0 || w <= 0) throw ShapeError("network input must be non-empty");
  std::map<std::string, LayerShapes> out;
  for (const auto& l : g.layers) {
    LayerShapes s;
    if (l.inputs.empty()) {
      if (l.in_ch != c)
        throw ShapeError("layer " + l.id + " expects " + std::to_string(l.in_ch) +
                         " input channels, image has " + std::to_string(c));
      s.in_c = c;
      s.in_h = h;
      s.in_w = w;
    } else if (l.inputs.size() == 1 || l.residual == ResidualRole::AddCached) {
      const auto& p = out.at(l.inputs[0]);
      s.in_c = p.out_c;
      s.in_h = p.out_h;
      s.in_w = p.out_w;
    } else {
      const auto& first = out.at(l.inputs[0]);
      int sum = 0;
      for (const auto& in : l.inputs) {
        const auto& m = out.at(in);
        if (m.out_h != first.out_h || m.out_w != first.out_w)
          throw GraphError("layer " + l.id + ": concat members have mismatched spatial dims");
        sum += m.out_c;
      }
      s.in_c = sum;
      s.in_h = first.out_h;
      s.in_w = first.out_w;
    }

    const int st = stride_count(l.stride);
    switch (l.kind) {
      case LayerKind::Conv:
        s.out_c = l.out_ch;
        s.out_h = (s.in_h + st - 1) / st;
        s.out_w = (s.in_w + st - 1) / st;
        break;
      case LayerKind::MaxPool:
        s.out_c = s.in_c;
        s.out_h = (s.in_h + 1) / 2;
        s.out_w = (s.in_w + 1) / 2;
        break;
      case LayerKind::Upsample:
        s.out_c = s.in_c;
        s.out_h = s.in_h * 2;
        s.out_w = s.in_w * 2;
        break;
      case LayerKind::Sigmoid:
      case LayerKind::Null:
        s.out_c = s.in_c;
        s.out_h = s.in_h;
        s.out_w = s.in_w;
        break;
    }
    if (l.residual == ResidualRole::AddCached) {
      const auto& sc = out.at(l.inputs[1]);
      if (sc.out_c != s.out_c || sc.out_h != s.out_h || sc.out_w != s.out_w)
        throw ShapeError("layer " + l.id + ": shortcut shape disagrees with output");
    }
    out.emplace(l.id, s);
  }
  return out;
}

// JSON schema.  Field names are normative; unknown fields are rejected.

namespace modeldetail {

inline const char* kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::MaxPool: return "maxpool";
    case LayerKind::Upsample: return "upsample";
    case LayerKind::Sigmoid: return "sigmoid";
    case LayerKind::Null: return "null";
  }
  return "";
}

inline const char* kernel_name(Kernel k) {
  switch (k) {
    case Kernel::K1: return "k1";
    case Kernel::K2: return "k2";
    case Kernel::K3: return "k3";
    case Kernel::K7: return "k7";
  }
  return "";
}

inline const char* residual_name(ResidualRole r) {
  switch (r) {
    case ResidualRole::None: return "none";
    case ResidualRole::CacheStart: return "cache_start";
    case ResidualRole::AddCached: return "add_cached";
  }
  return "";
}

}  // namespace modeldetail

inline ModelGraph parse_model(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("model is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw SchemaError("model document must be a JSON object");
  for (const auto& [k, v] : doc.items()) {
    (void)v;
    if (k != "layers" && k != "outputs") throw SchemaError("unknown model field: " + k);
  }
  if (!doc.contains("layers") || !doc["layers"].is_array())
    throw SchemaError("model needs a layers array");
  if (!doc.contains("outputs") || !doc["outputs"].is_object())
    throw SchemaError("model needs an outputs object");

  auto need_string = [](const nlohmann::json& j, const char* field) {
    if (!j.contains(field) || !j[field].is_string())
      throw SchemaError(std::string("layer field ") + field + " must be a string");
    return j[field].get<std::string>();
  };
  auto need_int = [](const nlohmann::json& j, const char* field) {
    if (!j.contains(field) || !j[field].is_number_integer())
      throw SchemaError(std::string("layer field ") + field + " must be an integer");
    return j[field].get<int>();
  };

  ModelGraph g;
  for (const auto& jl : doc["layers"]) {
    if (!jl.is_object()) throw SchemaError("layer entries must be objects");
    static const std::set<std::string> allowed = {"id",     "kind",   "in_ch",  "out_ch",
                                                  "kernel", "stride", "relu",   "inputs",
                                                  "residual", "concat", "bn"};
    for (const auto& [k, v] : jl.items()) {
      (void)v;
      if (!allowed.count(k)) throw SchemaError("unknown layer field: " + k);
    }

    LayerSpec l;
    l.id = need_string(jl, "id");
    std::string kind = need_string(jl, "kind");
    if (kind == "conv") l.kind = LayerKind::Conv;
    else if (kind == "maxpool") l.kind = LayerKind::MaxPool;
    else if (kind == "upsample") l.kind = LayerKind::Upsample;
    else if (kind == "sigmoid") l.kind = LayerKind::Sigmoid;
    else if (kind == "null") l.kind = LayerKind::Null;
    else throw SchemaError("unknown layer kind: " + kind);

    l.in_ch = need_int(jl, "in_ch");
    l.out_ch = need_int(jl, "out_ch");

    if (jl.contains("kernel") && !jl["kernel"].is_null()) {
      std::string k = need_string(jl, "kernel");
      if (k == "k1") l.kernel = Kernel::K1;
      else if (k == "k2") l.kernel = Kernel::K2;
      else if (k == "k3") l.kernel = Kernel::K3;
      else if (k == "k7") l.kernel = Kernel::K7;
      else throw SchemaError("unknown kernel: " + k);
    } else if (l.kind == LayerKind::MaxPool) {
      throw SchemaError("pool layer " + l.id + " needs an explicit kernel");
    }

    if (jl.contains("stride") && !jl["stride"].is_null()) {
      std::string s = need_string(jl, "stride");
      if (s == "s1") l.stride = Stride::S1;
      else if (s == "s2") l.stride = Stride::S2;
      else throw SchemaError("unknown stride: " + s);
    } else if (l.kind == LayerKind::MaxPool) {
      l.stride = Stride::S2;
    }

    if (jl.contains("relu")) {
      if (!jl["relu"].is_boolean()) throw SchemaError("layer field relu must be a boolean");
      l.relu = jl["relu"].get<bool>();
    }

    if (!jl.contains("inputs") || !jl["inputs"].is_array())
      throw SchemaError("layer " + l.id + " needs an inputs array");
    for (const auto& in : jl["inputs"]) {
      if (!in.is_string()) throw SchemaError("layer inputs must be strings");
      l.inputs.push_back(in.get<std::string>());
    }

    if (jl.contains("residual") && !jl["residual"].is_null()) {
      std::string r = need_string(jl, "residual");
      if (r == "none") l.residual = ResidualRole::None;
      else if (r == "cache_start") l.residual = ResidualRole::CacheStart;
      else if (r == "add_cached") l.residual = ResidualRole::AddCached;
      else throw SchemaError("unknown residual role: " + r);
    }

    if (jl.contains("concat") && !jl["concat"].is_null()) {
      if (!jl["concat"].is_string()) throw SchemaError("layer field concat must be a string or null");
      l.concat_group = jl["concat"].get<std::string>();
    }

    if (jl.contains("bn") && !jl["bn"].is_null()) {
      const auto& jb = jl["bn"];
      if (!jb.is_object()) throw SchemaError("layer field bn must be an object or null");
      for (const auto& [k, v] : jb.items()) {
        (void)v;
        if (k != "gamma" && k != "beta" && k != "mean" && k != "variance" && k != "epsilon")
          throw SchemaError("unknown bn field: " + k);
      }
      BatchNorm bn;
      auto vec = [&](const char* f) {
        if (!jb.contains(f) || !jb[f].is_array())
          throw SchemaError(std::string("bn field ") + f + " must be an array");
        std::vector<float> v;
        for (const auto& x : jb[f]) {
          if (!x.is_number()) throw SchemaError(std::string("bn field ") + f + " must be numeric");
          v.push_back(x.get<float>());
        }
        return v;
      };
      bn.gamma = vec("gamma");
      bn.beta = vec("beta");
      bn.mean = vec("mean");
      bn.variance = vec("variance");
      if (jb.contains("epsilon")) {
        if (!jb["epsilon"].is_number()) throw SchemaError("bn epsilon must be numeric");
        bn.epsilon = jb["epsilon"].get<float>();
      }
      l.bn = std::move(bn);
    }

    g.layers.push_back(std::move(l));
  }

  const auto& jo = doc["outputs"];
  for (const auto& [k, v] : jo.items()) {
    (void)v;
    if (k != "score" && k != "link") throw SchemaError("unknown outputs field: " + k);
  }
  if (!jo.contains("score") || !jo["score"].is_string() || !jo.contains("link") ||
      !jo["link"].is_string())
    throw SchemaError("outputs must name score and link layers");
  g.outputs.score = jo["score"].get<std::string>();
  g.outputs.link = jo["link"].get<std::string>();

  g.validate();
  return g;
}

inline std::string serialize_model(const ModelGraph& g) {
  nlohmann::ordered_json doc;
  doc["layers"] = nlohmann::ordered_json::array();
  for (const auto& l : g.layers) {
    nlohmann::ordered_json jl;
    jl["id"] = l.id;
    jl["kind"] = modeldetail::kind_name(l.kind);
    jl["in_ch"] = l.in_ch;
    jl["out_ch"] = l.out_ch;
    jl["kernel"] = modeldetail::kernel_name(l.kernel);
    jl["stride"] = l.stride == Stride::S1 ? "s1" : "s2";
    jl["relu"] = l.relu;
    jl["inputs"] = l.inputs;
    jl["residual"] = modeldetail::residual_name(l.residual);
    if (l.concat_group.empty()) {
      jl["concat"] = nullptr;
    } else {
      jl["concat"] = l.concat_group;
    }
    if (l.bn) {
      nlohmann::ordered_json jb;
      jb["gamma"] = l.bn->gamma;
      jb["beta"] = l.bn->beta;
      jb["mean"] = l.bn->mean;
      jb["variance"] = l.bn->variance;
      jb["epsilon"] = l.bn->epsilon;
      jl["bn"] = jb;
    } else {
      jl["bn"] = nullptr;
    }
    doc["layers"].push_back(jl);
  }
  doc["outputs"]["score"] = g.outputs.score;
  doc["outputs"]["link"] = g.outputs.link;
  return doc.dump(2) + "\n";
}

}  // namespace fcnvm
