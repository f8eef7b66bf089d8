// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "fcnvm/model.hpp"
#include "fcnvm/tensor.hpp"
#include "fcnvm/weights.hpp"
#include "fcnvm/zoo.hpp"

using namespace fcnvm;

namespace {

std::string minimal_model(const std::string& layers_json) {
  return std::string("{\"layers\":[") + layers_json +
         "],\"outputs\":{\"score\":\"s\",\"link\":\"l\"}}";
}

// A well-formed tail that satisfies the two-output requirement.
const char* kHeads =
    "{\"id\":\"sl\",\"kind\":\"conv\",\"in_ch\":4,\"out_ch\":2,\"kernel\":\"k1\",\"inputs\":[\"x\"]},"
    "{\"id\":\"s\",\"kind\":\"sigmoid\",\"in_ch\":2,\"out_ch\":2,\"inputs\":[\"sl\"]},"
    "{\"id\":\"ll\",\"kind\":\"conv\",\"in_ch\":4,\"out_ch\":16,\"kernel\":\"k1\",\"inputs\":[\"x\"]},"
    "{\"id\":\"l\",\"kind\":\"sigmoid\",\"in_ch\":16,\"out_ch\":16,\"inputs\":[\"ll\"]}";

std::string with_heads(const std::string& front) {
  return minimal_model(front + "," + kHeads);
}

// Naive FP32 3x3/1x1 convolution used only as the local folding oracle.
TensorF naive_conv(const TensorF& in, const ConvWeights& cw, int stride) {
  int oh = (in.h + stride - 1) / stride, ow = (in.w + stride - 1) / stride;
  TensorF out(cw.out_ch, oh, ow);
  int pad = cw.kh / 2;
  for (int o = 0; o < cw.out_ch; ++o)
    for (int y = 0; y < oh; ++y)
      for (int x = 0; x < ow; ++x) {
        float acc = cw.bias[o];
        for (int c = 0; c < cw.in_ch; ++c)
          for (int ky = 0; ky < cw.kh; ++ky)
            for (int kx = 0; kx < cw.kw; ++kx) {
              int sy = y * stride + ky - pad, sx = x * stride + kx - pad;
              if (sy < 0 || sy >= in.h || sx < 0 || sx >= in.w) continue;
              acc += in.at(c, sy, sx) * cw.at(o, c, ky, kx);
            }
        out.at(o, y, x) = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("minimal single-conv model parses") {
  auto g = parse_model(with_heads(
      "{\"id\":\"x\",\"kind\":\"conv\",\"in_ch\":3,\"out_ch\":4,\"kernel\":\"k3\","
      "\"stride\":\"s1\",\"relu\":true,\"inputs\":[]}"));
  CHECK(g.layers.size() == 5);
  CHECK(g.layers[0].kind == LayerKind::Conv);
  CHECK(g.layers[0].kernel == Kernel::K3);
  CHECK(g.layers[0].relu);
}

TEST_CASE("parse-serialize round trip is the identity") {
  for (auto g : {zoo::vgg16(), zoo::resnet50(), zoo::random_model(5), zoo::random_model(6)}) {
    ModelGraph back = parse_model(serialize_model(g));
    CHECK(back == g);
  }
}

TEST_CASE("backbone layer counts match the canonical definitions") {
  auto g = zoo::vgg16();
  int conv = 0, pool = 0;
  for (const auto& l : g.layers) {
    if (g.stage(l.id) != Stage::Extraction) continue;
    conv += l.kind == LayerKind::Conv;
    pool += l.kind == LayerKind::MaxPool;
  }
  CHECK(conv == 13);
  CHECK(pool == 5);

  auto r = zoo::resnet50();
  conv = pool = 0;
  int cache = 0, add = 0;
  for (const auto& l : r.layers) {
    if (r.stage(l.id) != Stage::Extraction) continue;
    conv += l.kind == LayerKind::Conv;
    pool += l.kind == LayerKind::MaxPool;
    cache += l.residual == ResidualRole::CacheStart;
    add += l.residual == ResidualRole::AddCached;
  }
  CHECK(conv == 53);
  CHECK(pool == 1);
  CHECK(cache == 4);   // explicit projections
  CHECK(add == 16);    // one per bottleneck
}

TEST_CASE("schema violations are rejected") {
  CHECK_THROWS_AS(parse_model("not json"), SchemaError);
  CHECK_THROWS_AS(parse_model("{\"layers\":[],\"outputs\":{},\"extra\":1}"), SchemaError);
  CHECK_THROWS_AS(parse_model(with_heads(
                      "{\"id\":\"x\",\"kind\":\"conv\",\"in_ch\":3,\"out_ch\":4,"
                      "\"kernel\":\"k3\",\"inputs\":[],\"bogus\":1}")),
                  SchemaError);
  CHECK_THROWS_AS(parse_model(with_heads(
                      "{\"id\":\"x\",\"kind\":\"dense\",\"in_ch\":3,\"out_ch\":4,\"inputs\":[]}")),
                  SchemaError);
  CHECK_THROWS_AS(parse_model(with_heads(
                      "{\"id\":\"x\",\"kind\":\"conv\",\"in_ch\":3,\"out_ch\":4,"
                      "\"kernel\":\"k5\",\"inputs\":[]}")),
                  SchemaError);
}

TEST_CASE("graph violations are rejected") {
  // Duplicate id.
  CHECK_THROWS_AS(parse_model(with_heads(
                      "{\"id\":\"x\",\"kind\":\"conv\",\"in_ch\":3,\"out_ch\":4,\"kernel\":\"k3\",\"inputs\":[]},"
                      "{\"id\":\"x\",\"kind\":\"conv\",\"in_ch\":4,\"out_ch\":4,\"kernel\":\"k3\",\"inputs\":[\"x\"]}")),
                  GraphError);
  // Forward reference.
  CHECK_THROWS_AS(parse_model(with_heads(
                      "{\"id\":\"x\",\"kind\":\"conv\",\"in_ch\":4,\"out_ch\":4,\"kernel\":\"k3\",\"inputs\":[\"z\"]},"
                      "{\"id\":\"z\",\"kind\":\"conv\",\"in_ch\":3,\"out_ch\":4,\"kernel\":\"k3\",\"inputs\":[]}")),
                  GraphError);
  // Channel mismatch across an edge (stride-2 1x1 then wrong in_ch).
  CHECK_THROWS_AS(parse_model(with_heads(
                      "{\"id\":\"a\",\"kind\":\"conv\",\"in_ch\":3,\"out_ch\":8,\"kernel\":\"k1\",\"stride\":\"s2\",\"inputs\":[]},"
                      "{\"id\":\"x\",\"kind\":\"conv\",\"in_ch\":4,\"out_ch\":4,\"kernel\":\"k3\",\"inputs\":[\"a\"]}")),
                  GraphError);
}

TEST_CASE("unsupported target combinations are rejected") {
  // 2x2 conv kernel.
  CHECK_THROWS_AS(parse_model(with_heads(
                      "{\"id\":\"x\",\"kind\":\"conv\",\"in_ch\":3,\"out_ch\":4,\"kernel\":\"k2\",\"inputs\":[]}")),
                  UnsupportedError);
  // Stride-1 pooling.
  CHECK_THROWS_AS(parse_model(with_heads(
                      "{\"id\":\"p\",\"kind\":\"maxpool\",\"in_ch\":3,\"out_ch\":3,\"kernel\":\"k2\",\"stride\":\"s1\",\"inputs\":[]},"
                      "{\"id\":\"x\",\"kind\":\"conv\",\"in_ch\":3,\"out_ch\":4,\"kernel\":\"k3\",\"inputs\":[\"p\"]}")),
                  UnsupportedError);
}

TEST_CASE("stage partition derives from upsample and sigmoid seeds") {
  auto g = zoo::vgg16();
  CHECK(g.stage("conv13") == Stage::Extraction);
  CHECK(g.stage("pool5") == Stage::Extraction);
  CHECK(g.stage("up_final") == Stage::Fusion);
  CHECK(g.stage("neck") == Stage::Fusion);       // consumes fusion output
  CHECK(g.stage("score_logits") == Stage::Fusion);
  CHECK(g.stage("score") == Stage::Fusion);
}

TEST_CASE("fusion unit limits are enforced on the derived partition") {
  // Pooling downstream of an upsample would land on the fusion unit.
  CHECK_THROWS_AS(parse_model(with_heads(
                      "{\"id\":\"u\",\"kind\":\"upsample\",\"in_ch\":3,\"out_ch\":3,\"inputs\":[]},"
                      "{\"id\":\"p\",\"kind\":\"maxpool\",\"in_ch\":3,\"out_ch\":3,\"kernel\":\"k2\",\"stride\":\"s2\",\"inputs\":[\"u\"]},"
                      "{\"id\":\"x\",\"kind\":\"conv\",\"in_ch\":3,\"out_ch\":4,\"kernel\":\"k3\",\"inputs\":[\"p\"]}")),
                  UnsupportedError);
  // 7x7 convolution likewise.
  CHECK_THROWS_AS(parse_model(with_heads(
                      "{\"id\":\"u\",\"kind\":\"upsample\",\"in_ch\":3,\"out_ch\":3,\"inputs\":[]},"
                      "{\"id\":\"x\",\"kind\":\"conv\",\"in_ch\":3,\"out_ch\":4,\"kernel\":\"k7\",\"inputs\":[\"u\"]}")),
                  UnsupportedError);
}

TEST_CASE("concat groups validate order and channel totals") {
  std::string members =
      "{\"id\":\"r\",\"kind\":\"conv\",\"in_ch\":3,\"out_ch\":8,\"kernel\":\"k3\",\"inputs\":[]},"
      "{\"id\":\"a\",\"kind\":\"conv\",\"in_ch\":8,\"out_ch\":8,\"kernel\":\"k3\",\"inputs\":[\"r\"],\"concat\":\"g\"},"
      "{\"id\":\"b\",\"kind\":\"conv\",\"in_ch\":8,\"out_ch\":8,\"kernel\":\"k1\",\"inputs\":[\"r\"],\"concat\":\"g\"},";
  // Well-formed consumer.
  CHECK_NOTHROW(parse_model(with_heads(
      members +
      "{\"id\":\"x\",\"kind\":\"conv\",\"in_ch\":16,\"out_ch\":4,\"kernel\":\"k3\",\"inputs\":[\"a\",\"b\"]}")));
  // Wrong order.
  CHECK_THROWS_AS(parse_model(with_heads(
                      members +
                      "{\"id\":\"x\",\"kind\":\"conv\",\"in_ch\":16,\"out_ch\":4,\"kernel\":\"k3\",\"inputs\":[\"b\",\"a\"]}")),
                  GraphError);
  // Wrong channel total.
  CHECK_THROWS_AS(parse_model(with_heads(
                      members +
                      "{\"id\":\"x\",\"kind\":\"conv\",\"in_ch\":12,\"out_ch\":4,\"kernel\":\"k3\",\"inputs\":[\"a\",\"b\"]}")),
                  GraphError);
  // Multi-input consumer without a group.
  CHECK_THROWS_AS(parse_model(with_heads(
                      "{\"id\":\"a\",\"kind\":\"conv\",\"in_ch\":3,\"out_ch\":8,\"kernel\":\"k3\",\"inputs\":[]},"
                      "{\"id\":\"b\",\"kind\":\"conv\",\"in_ch\":3,\"out_ch\":8,\"kernel\":\"k1\",\"inputs\":[]},"
                      "{\"id\":\"x\",\"kind\":\"conv\",\"in_ch\":16,\"out_ch\":4,\"kernel\":\"k3\",\"inputs\":[\"a\",\"b\"]}")),
                  GraphError);
}

TEST_CASE("residual protocol holds for one cache slot") {
  // Nested pairs cannot share the slot.
  std::string nested =
      "{\"id\":\"r\",\"kind\":\"conv\",\"in_ch\":3,\"out_ch\":4,\"kernel\":\"k3\",\"inputs\":[],\"residual\":\"cache_start\"},"
      "{\"id\":\"m\",\"kind\":\"conv\",\"in_ch\":4,\"out_ch\":4,\"kernel\":\"k3\",\"inputs\":[\"r\"],\"residual\":\"cache_start\"},"
      "{\"id\":\"n\",\"kind\":\"conv\",\"in_ch\":4,\"out_ch\":4,\"kernel\":\"k3\",\"inputs\":[\"m\"],\"residual\":\"add_cached\"},"
      "{\"id\":\"x\",\"kind\":\"conv\",\"in_ch\":4,\"out_ch\":4,\"kernel\":\"k3\",\"inputs\":[\"n\",\"r\"],\"residual\":\"add_cached\"}";
  CHECK_THROWS_AS(parse_model(with_heads(nested)), GraphError);
  // Unconsumed cache tag.
  CHECK_THROWS_AS(parse_model(with_heads(
                      "{\"id\":\"x\",\"kind\":\"conv\",\"in_ch\":3,\"out_ch\":4,\"kernel\":\"k3\",\"inputs\":[],\"residual\":\"cache_start\"}")),
                  GraphError);
  // A valid implicit-cache pair.
  CHECK_NOTHROW(parse_model(with_heads(
      "{\"id\":\"a\",\"kind\":\"conv\",\"in_ch\":3,\"out_ch\":4,\"kernel\":\"k3\",\"inputs\":[]},"
      "{\"id\":\"b\",\"kind\":\"conv\",\"in_ch\":4,\"out_ch\":4,\"kernel\":\"k3\",\"inputs\":[\"a\"]},"
      "{\"id\":\"x\",\"kind\":\"conv\",\"in_ch\":4,\"out_ch\":4,\"kernel\":\"k1\",\"inputs\":[\"b\",\"a\"],\"residual\":\"add_cached\",\"relu\":true}")));
}

TEST_CASE("shape inference follows stride, pooling, and upsampling") {
  auto g = parse_model(with_heads(
      "{\"id\":\"stem\",\"kind\":\"conv\",\"in_ch\":3,\"out_ch\":64,\"kernel\":\"k7\",\"stride\":\"s2\",\"inputs\":[]},"
      "{\"id\":\"p\",\"kind\":\"maxpool\",\"in_ch\":64,\"out_ch\":64,\"kernel\":\"k3\",\"stride\":\"s2\",\"inputs\":[\"stem\"]},"
      "{\"id\":\"u\",\"kind\":\"upsample\",\"in_ch\":64,\"out_ch\":64,\"inputs\":[\"p\"]},"
      "{\"id\":\"x\",\"kind\":\"conv\",\"in_ch\":64,\"out_ch\":4,\"kernel\":\"k3\",\"inputs\":[\"u\"]}"));
  auto shapes = infer_shapes(g, 3, 224, 224);
  CHECK(shapes.at("stem").out_c == 64);
  CHECK(shapes.at("stem").out_h == 112);
  CHECK(shapes.at("stem").out_w == 112);
  CHECK(shapes.at("p").out_h == 56);
  CHECK(shapes.at("u").out_h == 112);

  // Odd extents round up both for stride-2 conv and pooling.
  auto shapes2 = infer_shapes(g, 3, 37, 41);
  CHECK(shapes2.at("stem").out_h == 19);
  CHECK(shapes2.at("stem").out_w == 21);
  CHECK(shapes2.at("p").out_h == 10);

  CHECK_THROWS_AS(infer_shapes(g, 4, 32, 32), ShapeError);
}

TEST_CASE("concat spatial mismatch is caught at shape inference") {
  auto g = parse_model(with_heads(
      "{\"id\":\"r\",\"kind\":\"conv\",\"in_ch\":3,\"out_ch\":8,\"kernel\":\"k3\",\"inputs\":[]},"
      "{\"id\":\"a\",\"kind\":\"conv\",\"in_ch\":8,\"out_ch\":8,\"kernel\":\"k3\",\"inputs\":[\"r\"],\"concat\":\"g\"},"
      "{\"id\":\"b\",\"kind\":\"conv\",\"in_ch\":8,\"out_ch\":8,\"kernel\":\"k1\",\"stride\":\"s2\",\"inputs\":[\"r\"],\"concat\":\"g\"},"
      "{\"id\":\"x\",\"kind\":\"conv\",\"in_ch\":16,\"out_ch\":4,\"kernel\":\"k3\",\"inputs\":[\"a\",\"b\"]}"));
  CHECK_THROWS_AS(infer_shapes(g, 3, 16, 16), GraphError);
}

TEST_CASE("residual shape mismatch is caught at shape inference") {
  auto g = parse_model(with_heads(
      "{\"id\":\"a\",\"kind\":\"conv\",\"in_ch\":3,\"out_ch\":4,\"kernel\":\"k3\",\"inputs\":[]},"
      "{\"id\":\"b\",\"kind\":\"conv\",\"in_ch\":4,\"out_ch\":4,\"kernel\":\"k3\",\"stride\":\"s2\",\"inputs\":[\"a\"]},"
      "{\"id\":\"x\",\"kind\":\"conv\",\"in_ch\":4,\"out_ch\":4,\"kernel\":\"k1\",\"inputs\":[\"b\",\"a\"],\"residual\":\"add_cached\"}"));
  CHECK_THROWS_AS(infer_shapes(g, 3, 16, 16), ShapeError);
}

TEST_CASE("batchnorm folding: identity and pure scale") {
  ModelGraph g;
  LayerSpec l;
  l.id = "c";
  l.kind = LayerKind::Conv;
  l.in_ch = 2;
  l.out_ch = 2;
  l.kernel = Kernel::K3;
  l.relu = false;
  BatchNorm bn;
  bn.gamma = {1.f, 1.f};
  bn.beta = {0.f, 0.f};
  bn.mean = {0.f, 0.f};
  bn.variance = {1.f, 1.f};
  bn.epsilon = 0.f;
  l.bn = bn;
  g.layers.push_back(l);
  g.layers.push_back(zoo::zoodetail::conv("sl", "c", 2, 2, Kernel::K1, Stride::S1, false));
  g.layers.push_back(zoo::zoodetail::sigmoid("s", "sl", 2));
  g.layers.push_back(zoo::zoodetail::conv("ll", "c", 2, 16, Kernel::K1, Stride::S1, false));
  g.layers.push_back(zoo::zoodetail::sigmoid("li", "ll", 16));
  g.outputs = {"s", "li"};
  g.validate();

  WeightStore ws = zoo::random_weights(g, 99);
  auto [g1, w1] = fold_batchnorm(g, ws);
  CHECK(!g1.layer("c").bn.has_value());
  CHECK(w1.of("c").w == ws.of("c").w);
  CHECK(w1.of("c").bias == ws.of("c").bias);

  // gamma = 2 doubles weights and bias.
  g.layers[0].bn->gamma = {2.f, 2.f};
  g.validate();
  auto [g2, w2] = fold_batchnorm(g, ws);
  (void)g2;
  for (std::size_t i = 0; i < ws.of("c").w.size(); ++i)
    CHECK(w2.of("c").w[i] == 2.f * ws.of("c").w[i]);
  for (std::size_t i = 0; i < ws.of("c").bias.size(); ++i)
    CHECK(w2.of("c").bias[i] == 2.f * ws.of("c").bias[i]);
}

TEST_CASE("batchnorm folding equals conv-then-normalize composition") {
  std::mt19937_64 rng(123);
  ModelGraph g;
  LayerSpec l;
  l.id = "c";
  l.kind = LayerKind::Conv;
  l.in_ch = 3;
  l.out_ch = 8;
  l.kernel = Kernel::K3;
  BatchNorm bn;
  for (int o = 0; o < 8; ++o) {
    bn.gamma.push_back(static_cast<float>(zoo::uniform(rng, 0.5, 2.0)));
    bn.beta.push_back(static_cast<float>(zoo::uniform(rng, -1.0, 1.0)));
    bn.mean.push_back(static_cast<float>(zoo::uniform(rng, -0.5, 0.5)));
    bn.variance.push_back(static_cast<float>(zoo::uniform(rng, 0.1, 2.0)));
  }
  bn.epsilon = 1e-5f;
  l.bn = bn;
  g.layers.push_back(l);
  g.layers.push_back(zoo::zoodetail::conv("sl", "c", 8, 2, Kernel::K1, Stride::S1, false));
  g.layers.push_back(zoo::zoodetail::sigmoid("s", "sl", 2));
  g.layers.push_back(zoo::zoodetail::conv("ll", "c", 8, 16, Kernel::K1, Stride::S1, false));
  g.layers.push_back(zoo::zoodetail::sigmoid("li", "ll", 16));
  g.outputs = {"s", "li"};
  g.validate();

  WeightStore ws = zoo::random_weights(g, 7);
  auto [gf, wf] = fold_batchnorm(g, ws);
  (void)gf;

  TensorF in(3, 6, 6);
  for (auto& v : in.data) v = static_cast<float>(zoo::uniform(rng, -1.0, 1.0));

  TensorF raw = naive_conv(in, ws.of("c"), 1);
  TensorF folded = naive_conv(in, wf.of("c"), 1);
  float max_out = 0, max_diff = 0;
  for (int o = 0; o < 8; ++o) {
    float scale = bn.gamma[o] / std::sqrt(bn.variance[o] + bn.epsilon);
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 6; ++x) {
        float want = (raw.at(o, y, x) - bn.mean[o]) * scale + bn.beta[o];
        float got = folded.at(o, y, x);
        max_out = std::max(max_out, std::fabs(want));
        max_diff = std::max(max_diff, std::fabs(want - got));
      }
  }
  CHECK(max_diff <= 1e-5f * std::max(max_out, 1.0f));
}

TEST_CASE("batchnorm validation errors") {
  // Length mismatch.
  CHECK_THROWS_AS(parse_model(with_heads(
                      "{\"id\":\"x\",\"kind\":\"conv\",\"in_ch\":3,\"out_ch\":4,\"kernel\":\"k3\",\"inputs\":[],"
                      "\"bn\":{\"gamma\":[1,1],\"beta\":[0,0],\"mean\":[0,0],\"variance\":[1,1]}}")),
                  ShapeError);
  // bn on a pool layer.
  CHECK_THROWS_AS(parse_model(with_heads(
                      "{\"id\":\"p\",\"kind\":\"maxpool\",\"in_ch\":3,\"out_ch\":3,\"kernel\":\"k2\",\"stride\":\"s2\",\"inputs\":[],"
                      "\"bn\":{\"gamma\":[1,1,1],\"beta\":[0,0,0],\"mean\":[0,0,0],\"variance\":[1,1,1]}},"
                      "{\"id\":\"x\",\"kind\":\"conv\",\"in_ch\":3,\"out_ch\":4,\"kernel\":\"k3\",\"inputs\":[\"p\"]}")),
                  GraphError);
}

TEST_CASE("weight container round trip and validation") {
  auto g = zoo::random_model(4);
  WeightStore ws = zoo::random_weights(g, 4);
  auto bytes = weights_to_bytes(ws);
  WeightStore back = weights_from_bytes(bytes);
  REQUIRE(back.layers.size() == ws.layers.size());
  for (const auto& [id, cw] : ws.layers) {
    CHECK(back.of(id).w == cw.w);
    CHECK(back.of(id).bias == cw.bias);
  }
  // Truncation and corruption.
  auto cut = bytes;
  cut.resize(cut.size() / 2);
  CHECK_THROWS_AS(weights_from_bytes(cut), FormatError);
  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(weights_from_bytes(bad), FormatError);
}

TEST_CASE("tensor container round trip and ingestion checks") {
  Tensor t = zoo::random_input(3, 5, 7, 42);
  auto bytes = tensor_to_bytes(t);
  Tensor back = tensor_from_bytes(bytes);
  REQUIRE(back.same_shape(t));
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(back.data[i] == t.data[i]);

  // Float payloads load with one rounding.
  TensorF f(1, 2, 2);
  f.data = {0.25f, 1.0f / 3.0f, -2.5f, 100.0f};
  Tensor hf = tensor_from_bytes(tensor_to_bytes(f));
  CHECK(hf.data[1] == Half::from_float(1.0f / 3.0f));

  // Non-finite payloads are rejected.
  Tensor bad(1, 1, 1);
  bad.data[0] = Half::from_bits(0x7c00);  // +inf
  auto raw = tensor_to_bytes(bad);
  CHECK_THROWS_AS(tensor_from_bytes(raw), FormatError);

  auto cut = bytes;
  cut.resize(cut.size() - 2);
  CHECK_THROWS_AS(tensor_from_bytes(cut), FormatError);
}

TEST_CASE("transpose is an involution") {
  Tensor t = zoo::random_input(2, 3, 5, 7);
  Tensor tt = transpose_hw(transpose_hw(t));
  REQUIRE(tt.same_shape(t));
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(tt.data[i] == t.data[i]);
}
