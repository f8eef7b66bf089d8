// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <sstream>

#include "fcnvm/executor.hpp"
#include "fcnvm/oracle.hpp"
#include "fcnvm/zoo.hpp"

using namespace fcnvm;

namespace {

LayerSpec conv_l(std::string id, std::string in, int ic, int oc, Kernel k, Stride s, bool relu) {
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

LayerSpec sigmoid_l(std::string id, std::string in, int ch) {
  LayerSpec l;
  l.id = std::move(id);
  l.kind = LayerKind::Sigmoid;
  l.in_ch = ch;
  l.out_ch = ch;
  l.kernel = Kernel::K1;
  l.inputs = {std::move(in)};
  return l;
}

ModelGraph with_min_heads(std::vector<LayerSpec> front, const std::string& src, int ch) {
  ModelGraph g;
  g.layers = std::move(front);
  g.layers.push_back(conv_l("sl", src, ch, 2, Kernel::K1, Stride::S1, false));
  g.layers.push_back(sigmoid_l("s", "sl", 2));
  g.layers.push_back(conv_l("ll", src, ch, 16, Kernel::K1, Stride::S1, false));
  g.layers.push_back(sigmoid_l("l", "ll", 16));
  g.outputs.score = "s";
  g.outputs.link = "l";
  g.validate();
  return g;
}

// One of everything: winograd conv, pool, residual pair, concat group,
// strided conv, bilinear upsample, and the sigmoid heads.
ModelGraph kitchen_sink() {
  std::vector<LayerSpec> front;
  front.push_back(conv_l("t0", "", 3, 8, Kernel::K3, Stride::S1, true));
  LayerSpec p1;
  p1.id = "p1";
  p1.kind = LayerKind::MaxPool;
  p1.in_ch = p1.out_ch = 8;
  p1.kernel = Kernel::K3;
  p1.stride = Stride::S2;
  p1.inputs = {"t0"};
  front.push_back(p1);
  LayerSpec a = conv_l("a", "p1", 8, 8, Kernel::K1, Stride::S1, true);
  a.residual = ResidualRole::CacheStart;
  front.push_back(a);
  front.push_back(conv_l("m", "a", 8, 8, Kernel::K3, Stride::S1, true));
  LayerSpec b = conv_l("b", "m", 8, 8, Kernel::K1, Stride::S1, true);
  b.residual = ResidualRole::AddCached;
  b.inputs.push_back("a");
  front.push_back(b);
  LayerSpec c1 = conv_l("c1", "b", 8, 16, Kernel::K1, Stride::S1, true);
  c1.concat_group = "g";
  front.push_back(c1);
  LayerSpec c2 = conv_l("c2", "b", 8, 16, Kernel::K3, Stride::S1, true);
  c2.concat_group = "g";
  front.push_back(c2);
  LayerSpec d = conv_l("d", "c1", 32, 8, Kernel::K3, Stride::S2, true);
  d.inputs = {"c1", "c2"};
  front.push_back(d);
  LayerSpec u;
  u.id = "u";
  u.kind = LayerKind::Upsample;
  u.in_ch = u.out_ch = 8;
  u.kernel = Kernel::K3;  // bilinear
  u.inputs = {"d"};
  front.push_back(u);
  return with_min_heads(std::move(front), "u", 8);
}

bool bits_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.data[i].bits() != b.data[i].bits()) return false;
  return true;
}

bool outputs_equal(const std::map<std::string, Tensor>& a,
                   const std::map<std::string, Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [id, t] : a) {
    auto it = b.find(id);
    if (it == b.end() || !bits_equal(t, it->second)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("peak throughput follows the array dimensions") {
  ExecConfig cfg;
  CHECK(peak_macs(cfg) == 655.36e9);
  cfg.array_m = 16;
  cfg.array_n = 32;
  CHECK(peak_macs(cfg) == 163.84e9);
  cfg.clock_hz = 0;
  CHECK(peak_macs(cfg) == 0.0);
}

TEST_CASE("null program leaves memory untouched and returns nothing") {
  MicroProgram p;
  p.input_c = 2;
  p.input_h = 4;
  p.input_w = 4;
  MicroOp op;
  op.layer_type = kOpNull;
  op.in_channels = op.out_channels = 2;
  op.height = op.width = 4;
  p.extraction.push_back(op);
  p.extraction_ids.push_back("");

  Tensor in = zoo::random_input(2, 4, 4, 5);
  RunResult r = run_program(p, in);
  CHECK(r.outputs.empty());
  CHECK(r.counters.bytes_written == 0);
  CHECK(r.counters.mac_ops == 0);
  // The image region still holds exactly what was loaded.
  CHECK(bits_equal(r.pool.read_tensor(0, 2, 4, 4, nullptr), in));
}

TEST_CASE("single conv program matches the kernel call bit for bit") {
  BfpConfig bfp;
  SECTION("winograd path") {
    auto g = with_min_heads({conv_l("t0", "", 3, 8, Kernel::K3, Stride::S1, true)}, "t0", 8);
    WeightStore ws = zoo::random_weights(g, 61);
    MicroProgram p = lower(g, ws, 3, 12, 12);
    Tensor in = zoo::random_input(3, 12, 12, 62);
    RunResult r = run_program(p, in);
    Tensor want = conv_winograd(in, transform_weights(ws.of("t0"), bfp), true, nullptr, bfp);
    CHECK(bits_equal(r.layer_output("t0"), want));
    CHECK(r.counters.transform_mults > 0);
  }
  SECTION("direct path") {
    auto g = with_min_heads({conv_l("t0", "", 3, 8, Kernel::K1, Stride::S1, true)}, "t0", 8);
    WeightStore ws = zoo::random_weights(g, 63);
    MicroProgram p = lower(g, ws, 3, 12, 12);
    Tensor in = zoo::random_input(3, 12, 12, 64);
    RunResult r = run_program(p, in);
    Tensor want =
        conv_direct(in, quantize_weights_direct(ws.of("t0"), bfp), Stride::S1, true, nullptr, bfp);
    CHECK(bits_equal(r.layer_output("t0"), want));
    CHECK(r.counters.mac_ops > 0);
  }
}

TEST_CASE("full network tracks the fp32 oracle") {
  ModelGraph g = kitchen_sink();
  WeightStore ws = zoo::random_weights(g, 67);
  MicroProgram p = lower(g, ws, 3, 24, 24);
  Tensor in = zoo::random_input(3, 24, 24, 68);

  RunResult r = run_program(p, in);
  REQUIRE(r.outputs.count("s") == 1);
  REQUIRE(r.outputs.count("l") == 1);
  CHECK(r.outputs.at("s").c == 2);
  CHECK(r.outputs.at("l").c == 16);

  auto ref = oracle::reference_outputs(g, ws, in, oracle::Precision::F32);
  std::map<std::string, TensorD> got;
  for (const auto& [id, t] : r.outputs) got.emplace(id, to_double(t));
  auto rep = oracle::compare_runs(ref, got);
  CHECK(rep.within(2e-2));
}

TEST_CASE("row tiling is invisible in the output") {
  auto g = with_min_heads({conv_l("t0", "", 8, 8, Kernel::K3, Stride::S1, true)}, "t0", 8);
  WeightStore ws = zoo::random_weights(g, 71);
  MicroProgram p = lower(g, ws, 8, 37, 19);  // height not a multiple of the tile
  Tensor in = zoo::random_input(8, 37, 19, 72);

  ExecConfig cfg;
  RunResult whole = run_program(p, in, cfg);

  std::uint64_t prev_rounds = whole.counters.rounds;
  for (std::uint64_t buf : {8192ull, 4096ull, 2560ull}) {
    cfg.buffer_bytes = buf;
    RunResult tiled = run_program(p, in, cfg);
    CHECK(outputs_equal(tiled.outputs, whole.outputs));
    CHECK(bits_equal(tiled.layer_output("t0"), whole.layer_output("t0")));
    CHECK(tiled.counters.rounds >= prev_rounds);
    prev_rounds = tiled.counters.rounds;
  }
  CHECK(prev_rounds > whole.counters.rounds);

  cfg.buffer_bytes = 1024;  // below one halo'd row group at width 19 x 8ch
  CHECK_THROWS_AS(run_program(p, in, cfg), ConfigError);
}

TEST_CASE("forced transpose is a pure layout change") {
  ModelGraph g = kitchen_sink();
  WeightStore ws = zoo::random_weights(g, 73);
  Tensor in = zoo::random_input(3, 24, 24, 74);

  MicroProgram direct = lower(g, ws, 3, 24, 24);
  LowerOptions opt;
  opt.transpose = TransposeMode::Force;
  MicroProgram flipped = lower(g, ws, 3, 24, 24, opt);
  REQUIRE(flipped.transposed);

  RunResult rd = run_program(direct, in);
  RunResult rt = run_program(flipped, in);
  CHECK(outputs_equal(rd.outputs, rt.outputs));
  for (const char* id : {"t0", "p1", "b", "d", "u"})
    CHECK(bits_equal(rd.layer_output(id), rt.layer_output(id)));
}

TEST_CASE("wide images run transposed and match the relaxed-limit run") {
  auto g = with_min_heads({conv_l("t0", "", 1, 8, Kernel::K3, Stride::S1, true)}, "t0", 8);
  WeightStore ws = zoo::random_weights(g, 77);
  Tensor in = zoo::random_input(1, 64, 5000, 78);

  MicroProgram transposed = lower(g, ws, 1, 64, 5000);
  REQUIRE(transposed.transposed);
  RunResult rt = run_program(transposed, in);

  LowerOptions opt;
  opt.transpose = TransposeMode::Off;
  MicroProgram wide = lower(g, ws, 1, 64, 5000, opt);

  // At the stock limit the machine refuses the untransposed program.
  CHECK_THROWS_AS(run_program(wide, in), RejectError);

  ExecConfig relaxed;
  relaxed.width_limit = 8192;
  RunResult rw = run_program(wide, in, relaxed);
  CHECK(outputs_equal(rt.outputs, rw.outputs));
  CHECK(bits_equal(rt.layer_output("t0"), rw.layer_output("t0")));
}

TEST_CASE("pipeline depth and scheduling never change the bits") {
  ModelGraph g = kitchen_sink();
  WeightStore ws = zoo::random_weights(g, 79);
  MicroProgram p = lower(g, ws, 3, 24, 24);

  std::vector<Tensor> inputs;
  for (int i = 0; i < 6; ++i) inputs.push_back(zoo::random_input(3, 24, 24, 80 + i));

  ExecConfig cfg;
  PipelineResult base = run_pipeline(p, inputs, cfg);
  REQUIRE(base.images.size() == inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    REQUIRE(base.images[i].ok);
    RunResult solo = run_program(p, inputs[i], cfg);
    CHECK(outputs_equal(base.images[i].outputs, solo.outputs));
  }

  std::uint64_t prev_steps = base.steps;
  for (int depth : {2, 3}) {
    cfg.pipeline_depth = depth;
    PipelineResult deep = run_pipeline(p, inputs, cfg);
    CHECK(deep.steps <= prev_steps);
    prev_steps = deep.steps;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      REQUIRE(deep.images[i].ok);
      CHECK(outputs_equal(deep.images[i].outputs, base.images[i].outputs));
    }
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
      PipelineResult fuzzed = run_pipeline(p, inputs, cfg, seed);
      for (std::size_t i = 0; i < inputs.size(); ++i) {
        REQUIRE(fuzzed.images[i].ok);
        CHECK(outputs_equal(fuzzed.images[i].outputs, base.images[i].outputs));
      }
    }
  }
  CHECK(run_pipeline(p, inputs, cfg).images_per_step() >=
        [&] {
          ExecConfig c1 = cfg;
          c1.pipeline_depth = 1;
          return run_pipeline(p, inputs, c1).images_per_step();
        }());
}

TEST_CASE("a bad image fails alone and the stream continues") {
  ModelGraph g = kitchen_sink();
  WeightStore ws = zoo::random_weights(g, 83);
  MicroProgram p = lower(g, ws, 3, 24, 24);

  std::vector<Tensor> inputs = {zoo::random_input(3, 24, 24, 84),
                                zoo::random_input(3, 12, 12, 85),  // wrong shape
                                zoo::random_input(3, 24, 24, 86)};
  ExecConfig cfg;
  cfg.pipeline_depth = 3;
  PipelineResult r = run_pipeline(p, inputs, cfg);
  CHECK(r.images[0].ok);
  CHECK(!r.images[1].ok);
  CHECK(r.images[1].error.find("compiled shape") != std::string::npos);
  CHECK(r.images[2].ok);
}

TEST_CASE("residual cache misuse faults") {
  MicroProgram p;
  p.input_c = 1;
  p.input_h = 1;
  p.input_w = 1;
  MicroOp op;
  op.layer_type = kOpNull;
  op.in_channels = op.out_channels = 1;
  op.height = op.width = 1;
  Tensor in = zoo::random_input(1, 1, 1, 87);

  SECTION("add with an empty cache") {
    op.res_op = 2;
    p.extraction = {op};
    p.extraction_ids = {""};
    CHECK_THROWS_AS(run_program(p, in), CacheFault);
  }
  SECTION("cache overwritten before consumption") {
    op.res_op = 1;
    p.extraction = {op, op};
    p.extraction_ids = {"", ""};
    CHECK_THROWS_AS(run_program(p, in), CacheFault);
  }
}

TEST_CASE("memory violations fault") {
  MicroProgram p;
  p.input_c = 1;
  p.input_h = 1;
  p.input_w = 1;
  Tensor in = zoo::random_input(1, 1, 1, 88);

  SECTION("read of never-written storage") {
    MicroOp op;
    op.layer_type = kOpNull;
    op.in_channels = op.out_channels = 1;
    op.height = op.width = 1;
    op.in_addr = op.out_addr = 4096;
    p.extraction = {op};
    p.extraction_ids = {""};
    CHECK_THROWS_AS(run_program(p, in), MemoryFault);
  }
  SECTION("pool capacity exceeded") {
    auto g = with_min_heads({conv_l("t0", "", 3, 8, Kernel::K3, Stride::S1, true)}, "t0", 8);
    WeightStore ws = zoo::random_weights(g, 89);
    MicroProgram q = lower(g, ws, 3, 10, 10);
    Tensor img = zoo::random_input(3, 10, 10, 90);
    ExecConfig cfg;
    cfg.mem_bytes = 256;
    CHECK_THROWS_AS(run_program(q, img, cfg), MemoryFault);
  }
}

TEST_CASE("environment variable sets the default pool capacity") {
  setenv("FCNVM_MEM_BYTES", "123456", 1);
  CHECK(MemoryPool::default_capacity() == 123456);
  unsetenv("FCNVM_MEM_BYTES");
  CHECK(MemoryPool::default_capacity() == (1ull << 28));
}

TEST_CASE("config validation rejects nonsense") {
  ExecConfig cfg;
  cfg.buffer_bytes = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = ExecConfig{};
  cfg.width_limit = 0x8000;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = ExecConfig{};
  cfg.pipeline_depth = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = ExecConfig{};
  cfg.array_m = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("trace emits one line per op") {
  auto g = with_min_heads({conv_l("t0", "", 3, 8, Kernel::K3, Stride::S1, true)}, "t0", 8);
  WeightStore ws = zoo::random_weights(g, 91);
  MicroProgram p = lower(g, ws, 3, 8, 8);
  Tensor in = zoo::random_input(3, 8, 8, 92);

  std::ostringstream os;
  ExecConfig cfg;
  cfg.trace = &os;
  run_program(p, in, cfg);
  const std::string text = os.str();
  CHECK(text.find("ext conv k3 s1 relu") != std::string::npos);
  CHECK(text.find("fus sigmoid") != std::string::npos);
  CHECK(text.find("rounds:") != std::string::npos);
  std::size_t lines = 0;
  for (char ch : text)
    if (ch == '\n') ++lines;
  CHECK(lines == p.extraction.size() + p.fusion.size());
}

TEST_CASE("repeated runs are byte-identical") {
  ModelGraph g = kitchen_sink();
  WeightStore ws = zoo::random_weights(g, 93);
  MicroProgram p = lower(g, ws, 3, 24, 24);
  Tensor in = zoo::random_input(3, 24, 24, 94);
  RunResult a = run_program(p, in);
  RunResult b = run_program(p, in);
  CHECK(outputs_equal(a.outputs, b.outputs));
  CHECK(a.counters.mac_ops == b.counters.mac_ops);
  CHECK(a.counters.transform_mults == b.counters.transform_mults);
  CHECK(a.counters.rounds == b.counters.rounds);
  CHECK(a.counters.bytes_read == b.counters.bytes_read);
  CHECK(a.counters.bytes_written == b.counters.bytes_written);
}
