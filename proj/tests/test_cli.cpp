// SPDX-License-Identifier: Apache-2.0
//
// Drives the installed binary end to end: fixture generation, compile, run,
// detect, compare, stats, and the checked-in golden regression set.

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>

#include "fcnvm/executor.hpp"
#include "fcnvm/mcode.hpp"
#include "fcnvm/postproc.hpp"
#include "fcnvm/weights.hpp"
#include "fcnvm/zoo.hpp"

namespace fs = std::filesystem;
using namespace fcnvm;

namespace {

const std::string kTool = FCNVM_TOOL_PATH;
const fs::path kGolden = fs::path(FCNVM_SOURCE_DIR) / "data" / "golden";

fs::path work_dir() {
  static fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "fcnvm_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run_tool(const std::string& args, std::string* out = nullptr, std::string* err = nullptr) {
  static int n = 0;
  const fs::path so = work_dir() / ("out" + std::to_string(n));
  const fs::path se = work_dir() / ("err" + std::to_string(n));
  ++n;
  const std::string cmd = kTool + " " + args + " >" + so.string() + " 2>" + se.string();
  const int rc = std::system(cmd.c_str());
  if (out) *out = io::read_text_file(so.string());
  if (err) *err = io::read_text_file(se.string());
  return rc == -1 ? -1 : WEXITSTATUS(rc);
}

bool same_bytes(const fs::path& a, const fs::path& b) {
  return io::read_file(a.string()) == io::read_file(b.string());
}

}  // namespace

TEST_CASE("golden chain reproduces byte-identical artifacts") {
  const fs::path d = work_dir() / "golden_regen";
  REQUIRE(run_tool("gen-fixtures --seed 2 --out " + d.string()) == 0);
  REQUIRE(run_tool("compile --model " + (d / "model.json").string() + " --weights " +
                   (d / "weights.fcnw").string() + " --input " + (d / "input.tnsr").string() +
                   " --out " + (d / "program.fcnm").string()) == 0);
  REQUIRE(run_tool("detect --program " + (d / "program.fcnm").string() + " --input " +
                   (d / "input.tnsr").string() + " --out " + d.string()) == 0);
  for (const char* f : {"model.json", "weights.fcnw", "input.tnsr", "program.fcnm", "score.tnsr",
                        "link.tnsr", "boxes.json"}) {
    INFO(f);
    CHECK(same_bytes(d / f, kGolden / f));
  }
}

TEST_CASE("run dumps the same bits the library computes") {
  const fs::path d = work_dir() / "run_vs_lib";
  REQUIRE(run_tool("run --program " + (kGolden / "program.fcnm").string() + " --input " +
                   (kGolden / "input.tnsr").string() + " --out " + d.string()) == 0);
  MicroProgram p = load_program((kGolden / "program.fcnm").string());
  RunResult r = run_program(p, load_tensor((kGolden / "input.tnsr").string()));
  Tensor score = load_tensor((d / "score.tnsr").string());
  Tensor link = load_tensor((d / "link.tnsr").string());
  REQUIRE(score.same_shape(r.outputs.at(p.outputs.score)));
  for (std::size_t i = 0; i < score.size(); ++i)
    REQUIRE(score.data[i].bits() == r.outputs.at(p.outputs.score).data[i].bits());
  REQUIRE(link.same_shape(r.outputs.at(p.outputs.link)));
  for (std::size_t i = 0; i < link.size(); ++i)
    REQUIRE(link.data[i].bits() == r.outputs.at(p.outputs.link).data[i].bits());
}

TEST_CASE("compile reports the program's own word count") {
  std::string out;
  const fs::path d = work_dir() / "compile_report";
  fs::create_directories(d);
  REQUIRE(run_tool("compile --model " + (kGolden / "model.json").string() + " --weights " +
                       (kGolden / "weights.fcnw").string() + " --input " +
                       (kGolden / "input.tnsr").string() + " --out " + (d / "p.fcnm").string(),
                   &out) == 0);
  MicroProgram p = load_program((d / "p.fcnm").string());
  const std::size_t words = p.extraction.size() + p.fusion.size();
  CHECK(out.find("microcode: " + std::to_string(words) + " words, " +
                 std::to_string(words * sizeof(McWord)) + " bytes") != std::string::npos);
  CHECK(out.find("weight image: ") != std::string::npos);
}

TEST_CASE("pipelined directory run equals per-image runs") {
  const fs::path imgs = work_dir() / "imgs";
  fs::create_directories(imgs);
  MicroProgram p = load_program((kGolden / "program.fcnm").string());
  for (int i = 0; i < 3; ++i)
    save_tensor((imgs / ("img" + std::to_string(i) + ".tnsr")).string(),
                zoo::random_input(p.input_c, p.input_h, p.input_w, 300 + i));

  const fs::path serial = work_dir() / "serial", deep = work_dir() / "deep";
  std::string out;
  REQUIRE(run_tool("run --program " + (kGolden / "program.fcnm").string() + " --input " +
                   imgs.string() + " --out " + serial.string() + " --pipeline 1") == 0);
  REQUIRE(run_tool("run --program " + (kGolden / "program.fcnm").string() + " --input " +
                       imgs.string() + " --out " + deep.string() + " --pipeline 3 --seed 9",
                   &out) == 0);
  CHECK(out.find("images: 3") != std::string::npos);
  for (int i = 0; i < 3; ++i)
    for (const char* suffix : {".score.tnsr", ".link.tnsr"}) {
      INFO("img" << i << suffix);
      CHECK(same_bytes(serial / ("img" + std::to_string(i) + suffix),
                       deep / ("img" + std::to_string(i) + suffix)));
    }
}

TEST_CASE("zero weights detect nothing above a 0.6 score threshold") {
  const fs::path d = work_dir() / "zero";
  REQUIRE(run_tool("gen-fixtures --seed 11 --out " + d.string()) == 0);
  WeightStore ws = load_weights((d / "weights.fcnw").string());
  for (auto& [id, cw] : ws.layers) {
    (void)id;
    std::fill(cw.w.begin(), cw.w.end(), 0.0f);
    std::fill(cw.bias.begin(), cw.bias.end(), 0.0f);
  }
  save_weights((d / "weights.fcnw").string(), ws);
  REQUIRE(run_tool("compile --model " + (d / "model.json").string() + " --weights " +
                   (d / "weights.fcnw").string() + " --input " + (d / "input.tnsr").string() +
                   " --out " + (d / "program.fcnm").string()) == 0);
  std::string out;
  REQUIRE(run_tool("detect --program " + (d / "program.fcnm").string() + " --input " +
                       (d / "input.tnsr").string() + " --out " + d.string() +
                       " --score-thresh 0.6",
                   &out) == 0);
  CHECK(io::read_text_file((d / "boxes.json").string()) == "[]\n");
  CHECK(out.find("boxes: 0") != std::string::npos);
}

TEST_CASE("compare passes at the stock tolerance and fails at zero") {
  const std::string base = "compare --model " + (kGolden / "model.json").string() + " --weights " +
                           (kGolden / "weights.fcnw").string() + " --input " +
                           (kGolden / "input.tnsr").string();
  std::string out;
  REQUIRE(run_tool(base, &out) == 0);
  CHECK(out.find("worst:") != std::string::npos);

  std::string err;
  REQUIRE(run_tool(base + " --tol 0", &out, &err) == 4);
  CHECK(out.find("worst:") != std::string::npos);  // report prints even on breach
  CHECK(err.find("exceeds tolerance") != std::string::npos);

  // Widened mantissa makes quantization lossless; only the accumulator's
  // rounding is left, far below the stock bar.
  const fs::path rep = work_dir() / "report.json";
  REQUIRE(run_tool(base + " --bfp-mant 24 --tol 1e-3 --out " + rep.string()) == 0);
  CHECK(io::read_text_file(rep.string()).find("max_rel") != std::string::npos);
}

TEST_CASE("failure exit codes distinguish compile from runtime") {
  std::string err;
  CHECK(run_tool("compile --model " + (kGolden / "model.json").string() +
                     " --weights /no/such.fcnw --input " + (kGolden / "input.tnsr").string() +
                     " --out /tmp/never.fcnm",
                 nullptr, &err) == 2);
  CHECK(err.find("/no/such.fcnw") != std::string::npos);

  const fs::path bad = work_dir() / "bad.fcnm";
  auto bytes = io::read_file((kGolden / "program.fcnm").string());
  bytes[1] ^= 0xff;
  io::write_file(bad.string(), bytes);
  CHECK(run_tool("run --program " + bad.string() + " --input " +
                     (kGolden / "input.tnsr").string() + " --out " + (work_dir() / "x").string(),
                 nullptr, &err) == 2);

  const fs::path wrong = work_dir() / "wrong.tnsr";
  save_tensor(wrong.string(), zoo::random_input(1, 4, 4, 1));
  CHECK(run_tool("run --program " + (kGolden / "program.fcnm").string() + " --input " +
                     wrong.string() + " --out " + (work_dir() / "y").string(),
                 nullptr, &err) == 3);
  CHECK(err.find("compiled shape") != std::string::npos);

  CHECK(run_tool("run --no-such-flag", nullptr, &err) == 2);
}

TEST_CASE("stats prints the modeled peak throughput") {
  std::string out;
  REQUIRE(run_tool("stats --program " + (kGolden / "program.fcnm").string(), &out) == 0);
  CHECK(out.find("peak mac throughput: 655.36 GMAC/s") != std::string::npos);
  CHECK(out.find("microcode: 13 words, 416 bytes") != std::string::npos);
}

TEST_CASE("trace goes to the error stream") {
  std::string out, err;
  REQUIRE(run_tool("run --program " + (kGolden / "program.fcnm").string() + " --input " +
                       (kGolden / "input.tnsr").string() + " --out " +
                       (work_dir() / "traced").string() + " --trace",
                   &out, &err) == 0);
  CHECK(err.find("ext conv") != std::string::npos);
  CHECK(err.find("fus sigmoid") != std::string::npos);
  CHECK(out.find("ext conv") == std::string::npos);
}
