// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: compile models to microcode programs, run or
// detect over input tensors, compare the simulator against the reference
// evaluator, and print program statistics.
//
// Exit codes: 0 success, 2 invalid invocation or compile-side error,
// 3 executor fault, 4 tolerance breach in compare.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fcnvm/executor.hpp"
#include "fcnvm/mcode.hpp"
#include "fcnvm/model.hpp"
#include "fcnvm/oracle.hpp"
#include "fcnvm/postproc.hpp"
#include "fcnvm/weights.hpp"
#include "fcnvm/zoo.hpp"

namespace fs = std::filesystem;
using namespace fcnvm;

namespace {

constexpr int kExitCompile = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitTolerance = 4;

int fail(int code, const std::string& what) {
  std::cerr << "error: " << what << "\n";
  return code;
}

struct BfpFlags {
  int mant = 16;
  int block = 32;

  void attach(CLI::App* cmd) {
    cmd->add_option("--bfp-mant", mant, "block floating-point mantissa bits (4-24)");
    cmd->add_option("--bfp-block", block, "channels sharing one block exponent");
  }
  BfpConfig config() const {
    BfpConfig c;
    c.mant_width = mant;
    c.block_size = block;
    c.validate();
    return c;
  }
};

void print_counters(const PerfCounters& pc) {
  std::cout << "counters: mac_ops=" << pc.mac_ops << " transform_mults=" << pc.transform_mults
            << " rounds=" << pc.rounds << " bytes_read=" << pc.bytes_read
            << " bytes_written=" << pc.bytes_written << "\n";
}

// Either one tensor file or every *.tnsr inside a directory, sorted by name.
std::vector<std::pair<std::string, Tensor>> load_inputs(const std::string& path) {
  std::vector<std::pair<std::string, Tensor>> out;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path))
      if (e.is_regular_file() && e.path().extension() == ".tnsr") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) out.emplace_back(f.stem().string(), load_tensor(f.string()));
    if (out.empty()) throw IoError("no .tnsr inputs in directory: " + path);
  } else {
    out.emplace_back(fs::path(path).stem().string(), load_tensor(path));
  }
  return out;
}

void write_outputs(const fs::path& dir, const std::string& stem,
                   const MicroProgram& p, const std::map<std::string, Tensor>& outputs,
                   const std::vector<TextBox>* boxes) {
  const std::string prefix = stem.empty() ? "" : stem + ".";
  save_tensor((dir / (prefix + "score.tnsr")).string(), outputs.at(p.outputs.score));
  save_tensor((dir / (prefix + "link.tnsr")).string(), outputs.at(p.outputs.link));
  if (boxes) io::write_text_file((dir / (prefix + "boxes.json")).string(), boxes_to_json(*boxes));
}

int cmd_compile(const std::string& model_path, const std::string& weights_path,
                const std::string& input_path, const std::string& out_path,
                const BfpFlags& bfp) {
  ModelGraph g;
  WeightStore ws;
  Tensor input;
  MicroProgram p;
  try {
    g = parse_model(io::read_text_file(model_path));
    ws = load_weights(weights_path);
    input = load_tensor(input_path);
    for (const auto& l : g.layers)
      if (l.bn) {
        std::tie(g, ws) = fold_batchnorm(g, ws);
        break;
      }
    LowerOptions opt;
    opt.bfp = bfp.config();
    p = lower(g, ws, input.c, input.h, input.w, opt);
    save_program(out_path, p);
  } catch (const Error& e) {
    return fail(kExitCompile, e.what());
  }
  const std::size_t words = p.extraction.size() + p.fusion.size();
  std::cout << "layers: " << g.layers.size() << "\n";
  std::cout << "microcode: " << words << " words, " << words * sizeof(McWord) << " bytes\n";
  std::cout << "weight image: " << p.weight_image.size() << " bytes\n";
  std::cout << "program: " << out_path << "\n";
  return 0;
}

int cmd_run(const std::string& program_path, const std::string& input_path,
            const std::string& out_dir, int pipeline, bool trace, std::uint64_t seed,
            const BfpFlags& bfp, bool detect, double score_thresh, double link_thresh,
            int min_area) {
  MicroProgram p;
  std::vector<std::pair<std::string, Tensor>> inputs;
  ExecConfig cfg;
  try {
    p = load_program(program_path);
    inputs = load_inputs(input_path);
    cfg.bfp = bfp.config();
    cfg.pipeline_depth = pipeline;
    if (trace) cfg.trace = &std::cerr;
    cfg.validate();
    fs::create_directories(out_dir);
  } catch (const Error& e) {
    return fail(kExitCompile, e.what());
  }

  const bool single = inputs.size() == 1 && !fs::is_directory(input_path);
  try {
    if (single && pipeline == 1) {
      RunResult r = run_program(p, inputs[0].second, cfg);
      if (detect) {
        auto boxes = extract_boxes(
            prediction_maps(r.outputs.at(p.outputs.score), r.outputs.at(p.outputs.link)),
            score_thresh, link_thresh, min_area);
        write_outputs(out_dir, "", p, r.outputs, &boxes);
        std::cout << "boxes: " << boxes.size() << "\n";
      } else {
        write_outputs(out_dir, "", p, r.outputs, nullptr);
      }
      print_counters(r.counters);
      return 0;
    }

    std::vector<Tensor> images;
    for (auto& [name, t] : inputs) {
      (void)name;
      images.push_back(t);
    }
    PipelineResult pr = run_pipeline(p, images, cfg, seed);
    PerfCounters total;
    bool any_failed = false;
    for (std::size_t i = 0; i < pr.images.size(); ++i) {
      const auto& img = pr.images[i];
      if (!img.ok) {
        any_failed = true;
        std::cerr << "error: image " << inputs[i].first << ": " << img.error << "\n";
        continue;
      }
      if (detect) {
        auto boxes = extract_boxes(
            prediction_maps(img.outputs.at(p.outputs.score), img.outputs.at(p.outputs.link)),
            score_thresh, link_thresh, min_area);
        write_outputs(out_dir, single ? "" : inputs[i].first, p, img.outputs, &boxes);
      } else {
        write_outputs(out_dir, single ? "" : inputs[i].first, p, img.outputs, nullptr);
      }
      total.mac_ops += img.counters.mac_ops;
      total.transform_mults += img.counters.transform_mults;
      total.rounds += img.counters.rounds;
      total.bytes_read += img.counters.bytes_read;
      total.bytes_written += img.counters.bytes_written;
    }
    std::cout << "images: " << pr.images.size() << " steps: " << pr.steps << "\n";
    print_counters(total);
    if (any_failed) return kExitRuntime;
  } catch (const Error& e) {
    return fail(kExitRuntime, e.what());
  }
  return 0;
}

int cmd_compare(const std::string& model_path, const std::string& weights_path,
                const std::string& input_path, double tol, const std::string& out_path,
                const BfpFlags& bfp) {
  ModelGraph g;
  WeightStore ws;
  Tensor input;
  MicroProgram p;
  ExecConfig cfg;
  try {
    g = parse_model(io::read_text_file(model_path));
    ws = load_weights(weights_path);
    input = load_tensor(input_path);
    for (const auto& l : g.layers)
      if (l.bn) {
        std::tie(g, ws) = fold_batchnorm(g, ws);
        break;
      }
    LowerOptions opt;
    opt.bfp = bfp.config();
    p = lower(g, ws, input.c, input.h, input.w, opt);
    cfg.bfp = opt.bfp;
  } catch (const Error& e) {
    return fail(kExitCompile, e.what());
  }

  oracle::ErrorReport rep;
  try {
    RunResult r = run_program(p, input, cfg);
    std::map<std::string, TensorD> got;
    for (const auto& [id, t] : r.outputs) got.emplace(id, to_double(t));
    rep = oracle::compare_runs(oracle::reference_outputs(g, ws, input), got);
  } catch (const Error& e) {
    return fail(kExitRuntime, e.what());
  }

  std::cout << oracle::format_table(rep);
  if (!out_path.empty()) {
    try {
      io::write_text_file(out_path, oracle::report_json(rep).dump(2) + "\n");
    } catch (const Error& e) {
      return fail(kExitRuntime, e.what());
    }
  }
  if (!rep.within(tol)) {
    std::cerr << "error: max relative error " << rep.worst_rel << " exceeds tolerance " << tol
              << "\n";
    return kExitTolerance;
  }
  return 0;
}

int cmd_stats(const std::string& program_path) {
  MicroProgram p;
  try {
    p = load_program(program_path);
  } catch (const Error& e) {
    return fail(kExitCompile, e.what());
  }

  auto census = [](const std::vector<MicroOp>& ops, bool fusion) {
    std::map<std::string, int> n;
    for (const auto& op : ops) ++n[mcdetail::op_mnemonic(op.layer_type, fusion)];
    std::string out;
    for (const char* key : {"conv", "pool", "sigmoid", "upsample", "null"})
      if (n.count(key)) out += " " + std::string(key) + "=" + std::to_string(n[key]);
    return out;
  };

  std::cout << "input: " << p.input_c << "x" << p.input_h << "x" << p.input_w
            << (p.transposed ? " (stored transposed)" : " (stored direct)") << "\n";
  std::cout << "outputs: score=" << p.outputs.score << " link=" << p.outputs.link << "\n";
  std::cout << "extraction: " << p.extraction.size() << " ops" << census(p.extraction, false)
            << "\n";
  std::cout << "fusion: " << p.fusion.size() << " ops" << census(p.fusion, true) << "\n";
  const std::size_t words = p.extraction.size() + p.fusion.size();
  std::cout << "microcode: " << words << " words, " << words * sizeof(McWord) << " bytes\n";
  std::cout << "weight image: " << p.weight_image.size() << " bytes\n";
  std::uint64_t top = 0;
  for (const auto& [id, e] : p.alloc_map) {
    (void)id;
    top = std::max(top, e.out_addr + e.out_bytes);
  }
  std::cout << "arena top: " << top << " bytes\n";
  ExecConfig cfg;
  char line[96];
  std::snprintf(line, sizeof line, "peak mac throughput: %.2f GMAC/s (%dx%d array at %.0f MHz)\n",
                peak_macs(cfg) / 1e9, cfg.array_m, cfg.array_n, cfg.clock_hz / 1e6);
  std::cout << line;
  return 0;
}

int cmd_gen_fixtures(std::uint64_t seed, const std::string& out_dir, int height, int width) {
  try {
    ModelGraph g = zoo::random_model(seed);
    WeightStore ws = zoo::random_weights(g, seed);
    int in_ch = 0;
    for (const auto& l : g.layers)
      if (l.inputs.empty()) {
        in_ch = l.in_ch;
        break;
      }
    Tensor input = zoo::random_input(in_ch, height, width, seed);
    fs::create_directories(out_dir);
    const fs::path dir(out_dir);
    io::write_text_file((dir / "model.json").string(), serialize_model(g));
    save_weights((dir / "weights.fcnw").string(), ws);
    save_tensor((dir / "input.tnsr").string(), input);
    std::cout << "fixtures: " << (dir / "model.json").string() << " "
              << (dir / "weights.fcnw").string() << " " << (dir / "input.tnsr").string() << "\n";
  } catch (const Error& e) {
    return fail(kExitCompile, e.what());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"microcode compiler and functional simulator for an FCN text detector"};
  app.require_subcommand(1);

  std::string model_path, weights_path, program_path, input_path, out_path;
  double score_thresh = 0.5, link_thresh = 0.5, tol = 2e-2;
  int min_area = 0, pipeline = 1, height = 24, width = 24;
  std::uint64_t seed = 0;
  bool trace = false;
  BfpFlags bfp_compile, bfp_run, bfp_detect, bfp_compare;

  CLI::App* compile = app.add_subcommand("compile", "lower a model to a microcode program");
  compile->add_option("--model", model_path, "model JSON path")->required();
  compile->add_option("--weights", weights_path, "weight container path")->required();
  compile->add_option("--input", input_path, "sample input tensor fixing the compiled shape")
      ->required();
  compile->add_option("--out", out_path, "output program path")->required();
  bfp_compile.attach(compile);

  auto add_exec_flags = [&](CLI::App* cmd) {
    cmd->add_option("--program", program_path, "program path")->required();
    cmd->add_option("--input", input_path, "input tensor, or a directory of .tnsr files")
        ->required();
    cmd->add_option("--out", out_path, "output directory")->required();
    cmd->add_option("--pipeline", pipeline, "pipeline depth (images in flight)");
    cmd->add_option("--seed", seed, "pipeline stall-fuzz seed");
    cmd->add_flag("--trace", trace, "trace each op to the error stream");
  };
  CLI::App* run = app.add_subcommand("run", "execute a program and dump the output tensors");
  add_exec_flags(run);
  bfp_run.attach(run);

  CLI::App* detect = app.add_subcommand("detect", "run, then extract text boxes");
  add_exec_flags(detect);
  detect->add_option("--score-thresh", score_thresh, "positive-pixel threshold");
  detect->add_option("--link-thresh", link_thresh, "link threshold");
  detect->add_option("--min-area", min_area, "drop boxes smaller than this many pixels");
  bfp_detect.attach(detect);

  CLI::App* compare = app.add_subcommand("compare", "check the simulator against the reference");
  compare->add_option("--model", model_path, "model JSON path")->required();
  compare->add_option("--weights", weights_path, "weight container path")->required();
  compare->add_option("--input", input_path, "input tensor path")->required();
  compare->add_option("--tol", tol, "max relative error allowed");
  compare->add_option("--out", out_path, "also write the report as JSON");
  bfp_compare.attach(compare);

  CLI::App* stats = app.add_subcommand("stats", "print program statistics");
  stats->add_option("--program", program_path, "program path")->required();

  CLI::App* gen = app.add_subcommand("gen-fixtures", "emit a seeded random model/weights/input");
  gen->group("");  // hidden
  gen->add_option("--seed", seed, "generator seed")->required();
  gen->add_option("--out", out_path, "output directory")->required();
  gen->add_option("--height", height, "input height");
  gen->add_option("--width", width, "input width");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitCompile;
  }

  if (compile->parsed())
    return cmd_compile(model_path, weights_path, input_path, out_path, bfp_compile);
  if (run->parsed())
    return cmd_run(program_path, input_path, out_path, pipeline, trace, seed, bfp_run, false,
                   score_thresh, link_thresh, min_area);
  if (detect->parsed())
    return cmd_run(program_path, input_path, out_path, pipeline, trace, seed, bfp_detect, true,
                   score_thresh, link_thresh, min_area);
  if (compare->parsed())
    return cmd_compare(model_path, weights_path, input_path, tol, out_path, bfp_compare);
  if (stats->parsed()) return cmd_stats(program_path);
  if (gen->parsed()) return cmd_gen_fixtures(seed, out_path, height, width);
  return kExitCompile;
}
