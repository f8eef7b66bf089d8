// SPDX-License-Identifier: Apache-2.0
//
// The microcode interpreter: a write-tracking external memory pool, row-wise
// tiled execution of the two op lists, the residual result cache, the
// transposed-orientation path, and pipeline-parallel multi-image runs.
//
// Numeric behavior lives in the datapath kernels; the executor's job is
// sequencing and memory. Everything here is deterministic: identical
// (program, input, config) produce identical output bytes regardless of
// buffer size, orientation, or pipeline depth.

#pragma once

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <deque>
#include <map>
#include <memory>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "fcnvm/datapath.hpp"
#include "fcnvm/errors.hpp"
#include "fcnvm/mcode.hpp"
#include "fcnvm/tensor.hpp"

namespace fcnvm {

struct PerfCounters {
  std::uint64_t mac_ops = 0;          // direct-path and upsample MACs
  std::uint64_t transform_mults = 0;  // Winograd transform-domain products
  std::uint64_t bytes_read = 0;       // pool traffic, op reads
  std::uint64_t bytes_written = 0;    // pool traffic, op writes
  std::uint64_t rounds = 0;           // row-group loads across all ops
};

// Simulated external memory. Byte-addressed within a 34-bit space, with a
// per-byte write bitmap so a read of never-written storage is an error, not
// a silent zero. Backing storage grows lazily to the high-water mark; the
// capacity is only a legality bound.
class MemoryPool {
 public:
  static std::uint64_t default_capacity() {
    if (const char* env = std::getenv("FCNVM_MEM_BYTES")) {
      char* end = nullptr;
      unsigned long long v = std::strtoull(env, &end, 0);
      if (end && *end == '\0' && v > 0) return std::min<std::uint64_t>(v, kAddrSpace);
    }
    return 1ull << 28;
  }

  explicit MemoryPool(std::uint64_t capacity = default_capacity())
      : cap_(std::min(capacity, kAddrSpace)) {}

  std::uint64_t capacity() const { return cap_; }

  void write(std::uint64_t addr, const void* src, std::size_t n) {
    bound(addr, n, "write");
    if (addr + n > store_.size()) {
      store_.resize(addr + n);
      mask_.resize(addr + n, false);
    }
    std::memcpy(store_.data() + addr, src, n);
    std::fill(mask_.begin() + static_cast<std::ptrdiff_t>(addr),
              mask_.begin() + static_cast<std::ptrdiff_t>(addr + n), true);
  }

  void read(std::uint64_t addr, void* dst, std::size_t n) const {
    bound(addr, n, "read");
    if (addr + n > store_.size())
      throw MemoryFault(fault_at(std::max<std::uint64_t>(addr, store_.size())));
    for (std::uint64_t i = addr; i < addr + n; ++i)
      if (!mask_[i]) throw MemoryFault(fault_at(i));
    std::memcpy(dst, store_.data() + addr, n);
  }

  // Half CHW plane in stored orientation, 2 bytes per element little-endian.
  Tensor read_tensor(std::uint64_t addr, int c, int h, int w, PerfCounters* pc) const {
    Tensor t(c, h, w);
    if (t.size() == 0) return t;
    std::vector<std::uint8_t> raw(t.size() * 2);
    read(addr, raw.data(), raw.size());
    for (std::size_t i = 0; i < t.size(); ++i)
      t.data[i] = Half::from_bits(
          static_cast<std::uint16_t>(raw[2 * i] | (raw[2 * i + 1] << 8)));
    if (pc) pc->bytes_read += raw.size();
    return t;
  }

  void write_tensor(std::uint64_t addr, const Tensor& t, PerfCounters* pc) {
    if (t.size() == 0) return;
    std::vector<std::uint8_t> raw(t.size() * 2);
    for (std::size_t i = 0; i < t.size(); ++i) {
      raw[2 * i] = static_cast<std::uint8_t>(t.data[i].bits());
      raw[2 * i + 1] = static_cast<std::uint8_t>(t.data[i].bits() >> 8);
    }
    write(addr, raw.data(), raw.size());
    if (pc) pc->bytes_written += raw.size();
  }

 private:
  void bound(std::uint64_t addr, std::size_t n, const char* what) const {
    if (addr > cap_ || n > cap_ - addr)
      throw MemoryFault(std::string(what) + " of " + std::to_string(n) +
                        " bytes at 0x" + hex(addr) + " exceeds pool capacity");
  }

  static std::string hex(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%llx", static_cast<unsigned long long>(v));
    return buf;
  }

  std::string fault_at(std::uint64_t addr) const {
    return "read of never-written byte at 0x" + hex(addr);
  }

  std::uint64_t cap_;
  std::vector<std::uint8_t> store_;
  std::vector<bool> mask_;
};

struct ExecConfig {
  BfpConfig bfp{};
  std::uint64_t buffer_bytes = 2ull << 20;  // on-chip row buffer model
  int width_limit = kDefaultWidthLimit;     // stored row length bound
  int array_m = 32, array_n = 64;           // MAC array dimensions
  double clock_hz = 320e6;
  int pipeline_depth = 1;
  std::uint64_t mem_bytes = 0;  // pool capacity; 0 = FCNVM_MEM_BYTES or 2^28
  std::ostream* trace = nullptr;

  void validate() const {
    bfp.validate();
    if (buffer_bytes == 0) throw ConfigError("buffer size must be positive");
    if (width_limit < 1 || width_limit > 0x7fff)
      throw ConfigError("width limit must be in [1, 32767]");
    if (array_m < 1 || array_n < 1) throw ConfigError("array dimensions must be positive");
    if (clock_hz < 0) throw ConfigError("clock rate must be non-negative");
    if (pipeline_depth < 1) throw ConfigError("pipeline depth must be at least 1");
  }
};

inline double peak_macs(const ExecConfig& cfg) {
  return static_cast<double>(cfg.array_m) * cfg.array_n * cfg.clock_hz;
}

namespace exdetail {

struct StoredPlane {
  std::uint64_t addr = 0;
  int c = 0, h = 0, w = 0;
};

struct ExecContext {
  MemoryPool pool;
  std::map<std::string, StoredPlane> planes;
  Tensor cache;  // the single residual result slot
  bool cache_full = false;
  PerfCounters pc;

  explicit ExecContext(std::uint64_t cap) : pool(cap) {}
};

// Rows-per-round policy: R input rows, the largest multiple of 4 (Winograd
// output tile alignment) whose halo'd footprint (R + halo) x row x one
// channel block fits the buffer. The choice only affects the rounds counter
// and chunk boundaries; results are row-chunk invariant by construction
// because activation quantization is hoisted per plane.
struct RowPlan {
  int chunk_out = 0;  // stored output rows per round
  int rounds = 0;
};

inline RowPlan plan_rows(const MicroOp& op, bool fusion_stage, int out_h, const ExecConfig& cfg) {
  if (out_h <= 0) return {1, 0};
  if (op.height <= 0 || op.width <= 0 || op.in_channels == 0) return {out_h, 1};

  int halo = 0, div = 1, mul = 1;
  switch (op.layer_type) {
    case kOpConv:
      halo = op.kernel_code == kKernel3 ? 2 : op.kernel_code == kKernel7 ? 3 : 0;
      div = op.stride_code ? 2 : 1;
      break;
    case kOpPoolSig:
      if (!fusion_stage) {  // pooling; the sigmoid unit is row-local
        halo = op.kernel_code == kKernel3 ? 1 : 0;
        div = 2;
      }
      break;
    case kOpUpsample:
      halo = 1;
      mul = 2;
      break;
    default:
      break;
  }

  const std::uint64_t chans = std::min<std::uint64_t>(op.in_channels, cfg.bfp.block_size);
  const std::uint64_t row_bytes = 2ull * op.width * chans;
  std::int64_t r = static_cast<std::int64_t>(cfg.buffer_bytes / row_bytes) - halo;
  r -= r & 3;
  if (r < 4)
    throw ConfigError("row buffer of " + std::to_string(cfg.buffer_bytes) +
                      " bytes cannot hold one row group of width " + std::to_string(op.width));
  const std::int64_t chunk = std::min<std::int64_t>(r / div * mul, out_h);
  return {static_cast<int>(chunk), static_cast<int>((out_h + chunk - 1) / chunk)};
}

inline void exec_op(ExecContext& cx, const MicroProgram& p, const MicroOp& op,
                    const std::string& id, bool fusion_stage, const ExecConfig& cfg) {
  if (static_cast<int>(op.width) > cfg.width_limit)
    throw RejectError("stored row length " + std::to_string(op.width) +
                      " exceeds the width limit of " + std::to_string(cfg.width_limit));

  const bool tp = op.transpose;
  const int ic = static_cast<int>(op.in_channels);
  const int ih = static_cast<int>(op.height), iw = static_cast<int>(op.width);
  int on = static_cast<int>(op.out_channels), oh = ih, ow = iw;
  switch (op.layer_type) {
    case kOpConv: {
      const int s = op.stride_code ? 2 : 1;
      oh = (ih + s - 1) / s;
      ow = (iw + s - 1) / s;
      break;
    }
    case kOpPoolSig:
      if (!fusion_stage) {
        oh = (ih + 1) / 2;
        ow = (iw + 1) / 2;
      }
      break;
    case kOpUpsample:
      oh = 2 * ih;
      ow = 2 * iw;
      break;
    default:
      on = ic;
      break;
  }

  const PerfCounters before = cx.pc;
  Tensor in_t = cx.pool.read_tensor(op.in_addr, ic, ih, iw, &cx.pc);
  Tensor out(on, oh, ow);
  OpCounters oc;
  const RowPlan plan = plan_rows(op, fusion_stage, oh, cfg);
  const bool relu_now = op.relu && op.res_op != 2;  // an add applies it after

  switch (op.layer_type) {
    case kOpConv: {
      const LayerWeights lw = layer_weights(p, id);
      const QuantizedActs q = quantize_acts(in_t, cfg.bfp);
      if (lw.winograd && op.stride_code)
        throw RejectError("transform-domain weights require stride 1");
      for (int y0 = 0; y0 < oh; y0 += plan.chunk_out) {
        const int y1 = std::min(oh, y0 + plan.chunk_out);
        if (lw.winograd)
          conv_winograd_rows(q, lw.wino, relu_now, tp, y0, y1, out, &oc);
        else
          conv_direct_rows(q, lw.direct, op.stride_code ? Stride::S2 : Stride::S1, relu_now,
                           tp, y0, y1, out, &oc);
      }
      break;
    }
    case kOpPoolSig:
      for (int y0 = 0; y0 < oh; y0 += plan.chunk_out) {
        const int y1 = std::min(oh, y0 + plan.chunk_out);
        if (fusion_stage) {
          sigmoid_rows(in_t, y0, y1, out);
        } else {
          const int k = op.kernel_code == kKernel2 ? 2 : 3;
          if (op.kernel_code != kKernel2 && op.kernel_code != kKernel3)
            throw DecodeError("pooling word carries a non-pooling kernel code");
          max_pool_rows(in_t, k, tp, y0, y1, out);
        }
      }
      break;
    case kOpUpsample:
      for (int y0 = 0; y0 < oh; y0 += plan.chunk_out) {
        const int y1 = std::min(oh, y0 + plan.chunk_out);
        upsample2x_rows(in_t, op.kernel_code == 1, true, tp, y0, y1, out, &oc);
      }
      break;
    default:
      out = in_t;
      break;
  }

  if (op.res_op == 2) {
    if (!cx.cache_full) throw CacheFault("add requested while the result cache is empty");
    residual_add_rows(out, cx.cache, op.relu, 0, out.h, out);
    cx.cache = Tensor();
    cx.cache_full = false;
  }

  const bool aliased_null = op.layer_type == kOpNull && op.out_addr == op.in_addr;
  if (!aliased_null || op.res_op == 2) cx.pool.write_tensor(op.out_addr, out, &cx.pc);

  if (op.res_op == 1) {
    if (cx.cache_full) throw CacheFault("result cache already holds an unconsumed plane");
    cx.cache = out;
    cx.cache_full = true;
  }

  cx.pc.rounds += plan.rounds;
  cx.pc.mac_ops += oc.mac_ops + oc.upsample_macs;
  cx.pc.transform_mults += oc.transform_mults;
  if (!id.empty()) cx.planes[id] = StoredPlane{op.out_addr, on, oh, ow};

  if (cfg.trace) {
    char addr[48];
    std::snprintf(addr, sizeof addr, "0x%llx->0x%llx",
                  static_cast<unsigned long long>(op.in_addr),
                  static_cast<unsigned long long>(op.out_addr));
    *cfg.trace << (fusion_stage ? "fus " : "ext ")
               << mcdetail::op_mnemonic(op.layer_type, fusion_stage) << ' '
               << mcdetail::kernel_token(op) << " s" << (op.stride_code ? 2 : 1)
               << (op.relu ? " relu" : "") << (op.transpose ? " t" : "")
               << " res:" << static_cast<int>(op.res_op) << " in:" << ic << 'x' << ih << 'x'
               << iw << " out:" << on << 'x' << oh << 'x' << ow << ' ' << addr
               << " rounds:" << plan.rounds << " macs:" << (cx.pc.mac_ops - before.mac_ops)
               << " tmults:" << (cx.pc.transform_mults - before.transform_mults) << '\n';
  }
}

inline void exec_stage(ExecContext& cx, const MicroProgram& p, bool fusion_stage,
                       const ExecConfig& cfg) {
  const auto& ops = fusion_stage ? p.fusion : p.extraction;
  const auto& ids = fusion_stage ? p.fusion_ids : p.extraction_ids;
  if (ops.size() != ids.size()) throw FormatError("op id table disagrees with the op list");
  for (std::size_t i = 0; i < ops.size(); ++i) exec_op(cx, p, ops[i], ids[i], fusion_stage, cfg);
}

inline std::unique_ptr<ExecContext> make_context(const MicroProgram& p, const Tensor& input,
                                                 const ExecConfig& cfg) {
  if (input.c != p.input_c || input.h != p.input_h || input.w != p.input_w)
    throw ShapeError("input tensor does not match the program's compiled shape");
  auto cx = std::make_unique<ExecContext>(
      cfg.mem_bytes ? std::min(cfg.mem_bytes, kAddrSpace) : MemoryPool::default_capacity());
  const Tensor stored = p.transposed ? transpose_hw(input) : input;
  cx->pool.write_tensor(0, stored, nullptr);  // host load, not op traffic
  return cx;
}

inline std::map<std::string, Tensor> collect_outputs(const ExecContext& cx,
                                                     const MicroProgram& p) {
  std::map<std::string, Tensor> out;
  for (const std::string* id : {&p.outputs.score, &p.outputs.link}) {
    if (id->empty()) continue;
    auto it = cx.planes.find(*id);
    if (it == cx.planes.end()) continue;
    const StoredPlane& sp = it->second;
    Tensor t = cx.pool.read_tensor(sp.addr, sp.c, sp.h, sp.w, nullptr);
    out.emplace(*id, p.transposed ? transpose_hw(t) : t);
  }
  return out;
}

}  // namespace exdetail

struct RunResult {
  std::map<std::string, Tensor> outputs;  // score and link planes, logical orientation
  PerfCounters counters;
  ModelOutputs output_ids;
  bool stored_transposed = false;

  // Final memory image plus the plane directory, for per-layer inspection.
  MemoryPool pool{0};
  std::map<std::string, exdetail::StoredPlane> planes;

  bool has_layer(const std::string& id) const { return planes.count(id) != 0; }

  Tensor layer_output(const std::string& id) const {
    auto it = planes.find(id);
    if (it == planes.end()) throw GraphError("program wrote no plane for layer: " + id);
    Tensor t = pool.read_tensor(it->second.addr, it->second.c, it->second.h, it->second.w,
                                nullptr);
    return stored_transposed ? transpose_hw(t) : t;
  }
};

inline RunResult run_program(const MicroProgram& p, const Tensor& input,
                             const ExecConfig& cfg = {}) {
  cfg.validate();
  auto cx = exdetail::make_context(p, input, cfg);
  exdetail::exec_stage(*cx, p, false, cfg);
  exdetail::exec_stage(*cx, p, true, cfg);

  RunResult r;
  r.outputs = exdetail::collect_outputs(*cx, p);
  r.counters = cx->pc;
  r.output_ids = p.outputs;
  r.stored_transposed = p.transposed;
  r.pool = std::move(cx->pool);
  r.planes = std::move(cx->planes);
  return r;
}

struct ImageResult {
  bool ok = false;
  std::string error;
  std::map<std::string, Tensor> outputs;
  PerfCounters counters;
};

struct PipelineResult {
  std::vector<ImageResult> images;  // input order, regardless of scheduling
  std::uint64_t steps = 0;          // simulated scheduler steps consumed

  double images_per_step() const {
    return steps ? static_cast<double>(images.size()) / static_cast<double>(steps) : 0.0;
  }
};

// Pipelined execution: the extraction and fusion units each process one
// image per step, on different images concurrently, with at most
// pipeline_depth images in flight. Every image owns its own memory pool and
// result cache; the program and weights are shared read-only, so outputs are
// bit-identical to depth-1 execution under any schedule. A nonzero
// fuzz_seed randomly stalls one eligible unit per step to exercise
// interleavings; errors are recorded per image and the stream continues.
inline PipelineResult run_pipeline(const MicroProgram& p, const std::vector<Tensor>& inputs,
                                   const ExecConfig& cfg = {}, std::uint64_t fuzz_seed = 0) {
  cfg.validate();
  ExecConfig stage_cfg = cfg;
  stage_cfg.trace = nullptr;  // stages run on concurrent threads

  const int n = static_cast<int>(inputs.size());
  PipelineResult res;
  res.images.resize(n);
  std::vector<std::unique_ptr<exdetail::ExecContext>> ctx(n);
  std::deque<int> ready;
  std::mt19937_64 rng(fuzz_seed);
  int next = 0, in_flight = 0, completed = 0;

  auto run_extraction = [&](int i) {
    try {
      ctx[i] = exdetail::make_context(p, inputs[i], stage_cfg);
      exdetail::exec_stage(*ctx[i], p, false, stage_cfg);
      return true;
    } catch (const std::exception& e) {
      res.images[i].error = e.what();
      ctx[i].reset();
      return false;
    }
  };
  auto run_fusion = [&](int i) {
    try {
      exdetail::exec_stage(*ctx[i], p, true, stage_cfg);
      res.images[i].outputs = exdetail::collect_outputs(*ctx[i], p);
      res.images[i].counters = ctx[i]->pc;
      res.images[i].ok = true;
    } catch (const std::exception& e) {
      res.images[i].error = e.what();
    }
    ctx[i].reset();
  };

  while (completed < n) {
    bool do_ext = next < n && in_flight < cfg.pipeline_depth;
    bool do_fus = !ready.empty();
    if (fuzz_seed && do_ext && do_fus) {
      // Stall at most one unit so every step still makes progress.
      switch (rng() % 3) {
        case 1: do_ext = false; break;
        case 2: do_fus = false; break;
        default: break;
      }
    }
    int ei = -1, fi = -1;
    if (do_ext) {
      ei = next++;
      ++in_flight;
    }
    if (do_fus) {
      fi = ready.front();
      ready.pop_front();
    }

    bool ext_ok = false;
    if (ei >= 0 && fi >= 0) {
      std::thread t([&run_extraction, &ext_ok, ei] { ext_ok = run_extraction(ei); });
      run_fusion(fi);
      t.join();
    } else if (ei >= 0) {
      ext_ok = run_extraction(ei);
    } else if (fi >= 0) {
      run_fusion(fi);
    }

    if (ei >= 0) {
      if (ext_ok) {
        ready.push_back(ei);
      } else {
        --in_flight;
        ++completed;
      }
    }
    if (fi >= 0) {
      --in_flight;
      ++completed;
    }
    ++res.steps;
  }
  return res;
}

}  // namespace fcnvm
