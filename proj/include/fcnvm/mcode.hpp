// SPDX-License-Identifier: Apache-2.0
//
// The 256-bit microcode word and the compiler that lowers a validated
// ModelGraph to a two-stage MicroProgram: encode/decode, external-memory
// address allocation (64-byte-aligned regions, adjacent concat placement,
// single-slot residual sequencing), weight quantization into a byte image,
// a disassembler whose listings reassemble to identical words, and the
// binary program container.

#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fcnvm/datapath.hpp"
#include "fcnvm/errors.hpp"
#include "fcnvm/io.hpp"
#include "fcnvm/model.hpp"
#include "fcnvm/weights.hpp"

namespace fcnvm {

// Word layout, LSB-first in declaration order; words serialize little-endian.
struct FieldSpec {
  const char* name;
  int offset;
  int width;
};

inline constexpr FieldSpec kWordFields[] = {
    {"layer_type", 0, 2},  {"transpose_relu", 2, 2}, {"in_channels", 4, 16},
    {"out_channels", 20, 16}, {"height", 36, 20},    {"width", 56, 15},
    {"kernel", 71, 2},     {"stride", 73, 1},        {"res_op", 74, 2},
    {"in_addr", 76, 34},   {"out_addr", 110, 34},    {"reserved", 144, 112},
};

namespace mcdetail {

constexpr int field_bits() {
  int total = 0;
  for (const auto& f : kWordFields) total += f.width;
  return total;
}

constexpr bool fields_contiguous() {
  int at = 0;
  for (const auto& f : kWordFields) {
    if (f.offset != at) return false;
    at += f.width;
  }
  return true;
}

static_assert(field_bits() == 256, "word fields must cover exactly 256 bits");
static_assert(fields_contiguous(), "word fields must tile the word without gaps");

}  // namespace mcdetail

using McWord = std::array<std::uint8_t, 32>;

// layer_type codes. Code 2 names the stage-shared unit: max pooling in the
// extraction program, sigmoid in the fusion program.
inline constexpr std::uint8_t kOpNull = 0;
inline constexpr std::uint8_t kOpConv = 1;
inline constexpr std::uint8_t kOpPoolSig = 2;
inline constexpr std::uint8_t kOpUpsample = 3;

// kernel_code: conv 0=1x1 1=3x3 2=7x7; pooling adds 3=2x2 and keeps 1=3x3;
// upsample reuses the field as the mode, 0=nearest 1=bilinear.
inline constexpr std::uint8_t kKernel1 = 0;
inline constexpr std::uint8_t kKernel3 = 1;
inline constexpr std::uint8_t kKernel7 = 2;
inline constexpr std::uint8_t kKernel2 = 3;

inline constexpr int kDefaultWidthLimit = 4096;
inline constexpr std::uint64_t kAddrSpace = 1ull << 34;

struct MicroOp {
  std::uint8_t layer_type = kOpNull;
  bool relu = false;       // transpose_relu bit 0
  bool transpose = false;  // transpose_relu bit 1
  std::uint32_t in_channels = 0;
  std::uint32_t out_channels = 0;
  std::uint32_t height = 0;  // stored input rows
  std::uint32_t width = 0;   // stored input row length
  std::uint8_t kernel_code = 0;
  std::uint8_t stride_code = 0;  // 0 = stride 1, 1 = stride 2
  std::uint8_t res_op = 0;       // 0 none, 1 cache result, 2 add cached result
  std::uint64_t in_addr = 0;
  std::uint64_t out_addr = 0;

  friend bool operator==(const MicroOp&, const MicroOp&) = default;
};

namespace mcdetail {

inline void put_bits(McWord& w, int offset, int width, std::uint64_t v, const char* field) {
  if (width < 64 && (v >> width) != 0)
    throw RangeError(std::string(field) + " value does not fit " + std::to_string(width) +
                     " bits");
  for (int i = 0; i < width; ++i)
    if ((v >> i) & 1) w[(offset + i) >> 3] |= static_cast<std::uint8_t>(1u << ((offset + i) & 7));
}

inline std::uint64_t get_bits(const McWord& w, int offset, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i)
    v |= static_cast<std::uint64_t>((w[(offset + i) >> 3] >> ((offset + i) & 7)) & 1) << i;
  return v;
}

// Kernel-code legality depends on the opcode: 2x2 exists for pooling only,
// 7x7 never reaches the pool/sigmoid unit, and upsample has two modes.
inline bool kernel_code_ok(std::uint8_t layer_type, std::uint8_t kernel_code) {
  switch (layer_type) {
    case kOpConv: return kernel_code != kKernel2;
    case kOpPoolSig: return kernel_code != kKernel7;
    case kOpUpsample: return kernel_code <= 1;
    default: return true;
  }
}

}  // namespace mcdetail

inline McWord encode(const MicroOp& op) {
  if (op.res_op > 2) throw RangeError("res_op code 3 is reserved");
  if (!mcdetail::kernel_code_ok(op.layer_type, op.kernel_code))
    throw RangeError("kernel code " + std::to_string(op.kernel_code) +
                     " is not legal for this layer type");
  McWord w{};
  const std::uint64_t tr =
      (op.relu ? 1u : 0u) | (op.transpose ? 2u : 0u);
  mcdetail::put_bits(w, 0, 2, op.layer_type, "layer_type");
  mcdetail::put_bits(w, 2, 2, tr, "transpose_relu");
  mcdetail::put_bits(w, 4, 16, op.in_channels, "in_channels");
  mcdetail::put_bits(w, 20, 16, op.out_channels, "out_channels");
  mcdetail::put_bits(w, 36, 20, op.height, "height");
  mcdetail::put_bits(w, 56, 15, op.width, "width");
  mcdetail::put_bits(w, 71, 2, op.kernel_code, "kernel");
  mcdetail::put_bits(w, 73, 1, op.stride_code, "stride");
  mcdetail::put_bits(w, 74, 2, op.res_op, "res_op");
  mcdetail::put_bits(w, 76, 34, op.in_addr, "in_addr");
  mcdetail::put_bits(w, 110, 34, op.out_addr, "out_addr");
  return w;
}

inline MicroOp decode(const McWord& w) {
  // Reserved bits occupy the top 14 bytes exactly.
  for (int i = 18; i < 32; ++i)
    if (w[i] != 0) throw DecodeError("reserved bits are not zero");
  MicroOp op;
  op.layer_type = static_cast<std::uint8_t>(mcdetail::get_bits(w, 0, 2));
  const auto tr = mcdetail::get_bits(w, 2, 2);
  op.relu = (tr & 1) != 0;
  op.transpose = (tr & 2) != 0;
  op.in_channels = static_cast<std::uint32_t>(mcdetail::get_bits(w, 4, 16));
  op.out_channels = static_cast<std::uint32_t>(mcdetail::get_bits(w, 20, 16));
  op.height = static_cast<std::uint32_t>(mcdetail::get_bits(w, 36, 20));
  op.width = static_cast<std::uint32_t>(mcdetail::get_bits(w, 56, 15));
  op.kernel_code = static_cast<std::uint8_t>(mcdetail::get_bits(w, 71, 2));
  op.stride_code = static_cast<std::uint8_t>(mcdetail::get_bits(w, 73, 1));
  op.res_op = static_cast<std::uint8_t>(mcdetail::get_bits(w, 74, 2));
  op.in_addr = mcdetail::get_bits(w, 76, 34);
  op.out_addr = mcdetail::get_bits(w, 110, 34);
  if (op.res_op == 3) throw DecodeError("res_op code 3 is reserved");
  if (!mcdetail::kernel_code_ok(op.layer_type, op.kernel_code))
    throw DecodeError("kernel code " + std::to_string(op.kernel_code) +
                      " is not legal for this layer type");
  return op;
}

struct WeightSpan {
  std::uint64_t offset = 0;
  std::uint64_t length = 0;

  friend bool operator==(const WeightSpan&, const WeightSpan&) = default;
};

struct AllocEntry {
  std::uint64_t in_addr = 0;
  std::uint64_t out_addr = 0;
  std::uint64_t out_bytes = 0;

  friend bool operator==(const AllocEntry&, const AllocEntry&) = default;
};

struct MicroProgram {
  std::vector<MicroOp> extraction;
  std::vector<MicroOp> fusion;
  // Layer id per op, parallel to the lists; compiler-inserted cache ops
  // carry an empty id.
  std::vector<std::string> extraction_ids;
  std::vector<std::string> fusion_ids;

  std::vector<std::uint8_t> weight_image;
  std::map<std::string, WeightSpan> weight_spans;
  std::map<std::string, AllocEntry> alloc_map;

  int input_c = 0, input_h = 0, input_w = 0;  // logical image shape
  bool transposed = false;                    // planes stored transposed
  ModelOutputs outputs;

  friend bool operator==(const MicroProgram&, const MicroProgram&) = default;
};

// Quantized weights for one conv layer, decoded from the weight image.
struct LayerWeights {
  bool winograd = false;
  BfpConvWeights direct;
  BfpWinogradWeights wino;
};

namespace mcdetail {

inline void append_weight_record(io::Writer& w, const LayerWeights& lw) {
  w.u8(lw.winograd ? 1 : 0);
  const int out_ch = lw.winograd ? lw.wino.out_ch : lw.direct.out_ch;
  const int in_ch = lw.winograd ? lw.wino.in_ch : lw.direct.in_ch;
  w.u16(static_cast<std::uint16_t>(out_ch));
  w.u16(static_cast<std::uint16_t>(in_ch));
  w.u8(static_cast<std::uint8_t>(lw.winograd ? 3 : lw.direct.kh));
  w.u8(static_cast<std::uint8_t>(lw.winograd ? 3 : lw.direct.kw));
  w.u16(static_cast<std::uint16_t>(lw.winograd ? lw.wino.block : lw.direct.block));
  w.u8(static_cast<std::uint8_t>(lw.winograd ? lw.wino.fbits : lw.direct.fbits));
  const auto& expo = lw.winograd ? lw.wino.expo : lw.direct.expo;
  const auto& mant = lw.winograd ? lw.wino.mant : lw.direct.mant;
  const auto& bias = lw.winograd ? lw.wino.bias : lw.direct.bias;
  for (int e : expo) w.i32(e);
  for (std::int32_t m : mant) w.i32(m);
  for (float b : bias) w.f32(b);
}

inline LayerWeights read_weight_record(io::Reader& r) {
  LayerWeights lw;
  lw.winograd = r.u8() != 0;
  const int out_ch = r.u16();
  const int in_ch = r.u16();
  const int kh = r.u8();
  const int kw = r.u8();
  const int block = r.u16();
  const int fbits = r.u8();
  if (out_ch <= 0 || in_ch <= 0 || kh <= 0 || kw <= 0 || block <= 0 || fbits <= 0)
    throw DecodeError("weight record with non-positive geometry");
  const int blocks = (in_ch + block - 1) / block;
  if (lw.winograd) {
    auto& q = lw.wino;
    q.out_ch = out_ch;
    q.in_ch = in_ch;
    q.block = block;
    q.fbits = fbits;
    q.expo.resize(static_cast<std::size_t>(out_ch) * blocks);
    q.mant.resize(static_cast<std::size_t>(out_ch) * 36 * in_ch);
    q.bias.resize(out_ch);
    for (auto& e : q.expo) e = r.i32();
    for (auto& m : q.mant) m = r.i32();
    for (auto& b : q.bias) b = r.f32();
  } else {
    auto& q = lw.direct;
    q.out_ch = out_ch;
    q.in_ch = in_ch;
    q.kh = kh;
    q.kw = kw;
    q.block = block;
    q.fbits = fbits;
    q.expo.resize(static_cast<std::size_t>(out_ch) * kh * kw * blocks);
    q.mant.resize(static_cast<std::size_t>(out_ch) * kh * kw * in_ch);
    q.bias.resize(out_ch);
    for (auto& e : q.expo) e = r.i32();
    for (auto& m : q.mant) m = r.i32();
    for (auto& b : q.bias) b = r.f32();
  }
  return lw;
}

}  // namespace mcdetail

inline LayerWeights layer_weights(const MicroProgram& p, const std::string& id) {
  auto it = p.weight_spans.find(id);
  if (it == p.weight_spans.end()) throw GraphError("no weights in program for layer: " + id);
  if (it->second.offset + it->second.length > p.weight_image.size())
    throw DecodeError("weight span outside the weight image");
  io::Reader r(p.weight_image.data() + it->second.offset,
               static_cast<std::size_t>(it->second.length));
  return mcdetail::read_weight_record(r);
}

enum class TransposeMode { Auto, Force, Off };

struct LowerOptions {
  BfpConfig bfp{};
  int width_limit = kDefaultWidthLimit;
  TransposeMode transpose = TransposeMode::Auto;
};

namespace mcdetail {

inline std::uint64_t region_bytes(int c, int h, int w) {
  return 2ull * static_cast<std::uint64_t>(c) * static_cast<std::uint64_t>(h) *
         static_cast<std::uint64_t>(w);
}

}  // namespace mcdetail

// Lowers a validated, batchnorm-free graph to a MicroProgram.
//
// Address allocation is a bump allocator over the 34-bit external space:
// the input image sits at 0, every layer output gets a fresh 64-byte-aligned
// region, and concat groups are allocated as one region with members placed
// back to back in group order (member boundaries fall wherever the channel
// prefix puts them; only the group start is aligned). Nothing is ever
// reused, so live regions cannot overlap.
//
// When the widest stored row would exceed width_limit the whole program is
// lowered in the transposed orientation (height/width fields swapped,
// transpose bit set on every op); if the transposed orientation is also too
// wide the model is rejected. TransposeMode::Off skips the limit check and
// leaves enforcement to the executor's own configuration.
inline MicroProgram lower(const ModelGraph& g, const WeightStore& ws, int in_c, int in_h,
                          int in_w, const LowerOptions& opt = {}) {
  opt.bfp.validate();
  if (opt.width_limit < 1 || opt.width_limit > 0x7fff)
    throw ConfigError("width limit must be in [1, 32767]");
  for (const auto& l : g.layers)
    if (l.bn) throw UnsupportedError("layer " + l.id + ": fold batch normalization before lowering");

  const auto shapes = infer_shapes(g, in_c, in_h, in_w);

  int max_in_w = in_w, max_in_h = in_h;
  for (const auto& l : g.layers) {
    const auto& s = shapes.at(l.id);
    max_in_w = std::max(max_in_w, s.in_w);
    max_in_h = std::max(max_in_h, s.in_h);
  }
  bool transposed = false;
  if (opt.transpose == TransposeMode::Force) {
    transposed = true;
  } else if (opt.transpose == TransposeMode::Auto && max_in_w > opt.width_limit) {
    transposed = true;
  }
  if (opt.transpose != TransposeMode::Off) {
    const int stored_w = transposed ? max_in_h : max_in_w;
    if (stored_w > opt.width_limit)
      throw RejectError("both image dimensions exceed the width limit of " +
                        std::to_string(opt.width_limit));
  }

  for (const auto& l : g.layers) {
    const auto& s = shapes.at(l.id);
    const int eff_h = transposed ? s.in_w : s.in_h;
    const int eff_w = transposed ? s.in_h : s.in_w;
    if (l.in_ch > 0xffff || l.out_ch > 0xffff)
      throw UnsupportedError("layer " + l.id + ": channel count does not fit 16 bits");
    if (eff_h >= (1 << 20))
      throw UnsupportedError("layer " + l.id + ": height does not fit 20 bits");
    if (eff_w >= (1 << 15))
      throw UnsupportedError("layer " + l.id + ": width does not fit 15 bits");
  }

  MicroProgram p;
  p.input_c = in_c;
  p.input_h = in_h;
  p.input_w = in_w;
  p.transposed = transposed;
  p.outputs = g.outputs;

  // Bump allocator. Alignment keeps the cursor aligned, so region starts
  // are aligned by construction.
  std::uint64_t cursor = 0;
  auto alloc = [&cursor](std::uint64_t n) {
    const std::uint64_t at = cursor;
    if (n > kAddrSpace - at) throw AllocError("34-bit external address space exhausted");
    cursor = (at + n + 63) & ~63ull;
    return at;
  };
  alloc(mcdetail::region_bytes(in_c, in_h, in_w));  // the image itself, at 0

  // Concat groups get one region each, carved when the first member lands.
  std::map<std::string, std::vector<int>> groups;
  for (int i = 0; i < static_cast<int>(g.layers.size()); ++i)
    if (!g.layers[i].concat_group.empty()) groups[g.layers[i].concat_group].push_back(i);
  std::map<std::string, std::uint64_t> group_base;

  // Implicit residual snapshots: an add whose shortcut producer is untagged
  // gets a null cache op right after that producer.
  std::map<int, bool> cache_after;
  for (const auto& l : g.layers) {
    if (l.residual != ResidualRole::AddCached) continue;
    const int p_pos = g.layer_pos(l.inputs[1]);
    if (g.layers[p_pos].residual != ResidualRole::CacheStart) cache_after[p_pos] = true;
  }

  std::vector<std::uint64_t> out_of(g.layers.size(), 0);

  for (int i = 0; i < static_cast<int>(g.layers.size()); ++i) {
    const LayerSpec& l = g.layers[i];
    const LayerShapes& s = shapes.at(l.id);

    std::uint64_t in_addr = 0;
    if (!l.inputs.empty()) in_addr = out_of[g.layer_pos(l.inputs[0])];

    std::uint64_t out_bytes = mcdetail::region_bytes(s.out_c, s.out_h, s.out_w);
    std::uint64_t out_addr = 0;
    if (l.kind == LayerKind::Null) {
      out_addr = in_addr;  // pass-through, no storage of its own
    } else if (!l.concat_group.empty()) {
      const auto& members = groups.at(l.concat_group);
      auto base_it = group_base.find(l.concat_group);
      if (base_it == group_base.end()) {
        std::uint64_t total = 0;
        for (int m : members) {
          const auto& ms = shapes.at(g.layers[m].id);
          total += mcdetail::region_bytes(ms.out_c, ms.out_h, ms.out_w);
        }
        base_it = group_base.emplace(l.concat_group, alloc(total)).first;
      }
      std::uint64_t off = 0;
      for (int m : members) {
        if (m == i) break;
        const auto& ms = shapes.at(g.layers[m].id);
        off += mcdetail::region_bytes(ms.out_c, ms.out_h, ms.out_w);
      }
      out_addr = base_it->second + off;
    } else {
      out_addr = alloc(out_bytes);
    }
    out_of[i] = out_addr;

    MicroOp op;
    switch (l.kind) {
      case LayerKind::Conv:
        op.layer_type = kOpConv;
        op.kernel_code = l.kernel == Kernel::K1 ? kKernel1
                         : l.kernel == Kernel::K3 ? kKernel3
                                                  : kKernel7;
        break;
      case LayerKind::MaxPool:
        op.layer_type = kOpPoolSig;
        op.kernel_code = l.kernel == Kernel::K2 ? kKernel2 : kKernel3;
        break;
      case LayerKind::Sigmoid:
        op.layer_type = kOpPoolSig;
        break;
      case LayerKind::Upsample:
        op.layer_type = kOpUpsample;
        op.kernel_code = l.kernel == Kernel::K1 ? 0 : 1;
        break;
      case LayerKind::Null:
        op.layer_type = kOpNull;
        break;
    }
    op.relu = l.relu;
    op.transpose = transposed;
    op.in_channels = static_cast<std::uint32_t>(l.in_ch);
    op.out_channels = static_cast<std::uint32_t>(l.out_ch);
    op.height = static_cast<std::uint32_t>(transposed ? s.in_w : s.in_h);
    op.width = static_cast<std::uint32_t>(transposed ? s.in_h : s.in_w);
    op.stride_code = l.stride == Stride::S2 ? 1 : 0;
    op.res_op = l.residual == ResidualRole::CacheStart ? 1
                : l.residual == ResidualRole::AddCached ? 2
                                                        : 0;
    op.in_addr = in_addr;
    op.out_addr = out_addr;

    auto& ops = g.stage(l.id) == Stage::Extraction ? p.extraction : p.fusion;
    auto& ids = g.stage(l.id) == Stage::Extraction ? p.extraction_ids : p.fusion_ids;
    ops.push_back(op);
    ids.push_back(l.id);

    if (cache_after.count(i)) {
      MicroOp snap;
      snap.layer_type = kOpNull;
      snap.transpose = transposed;
      snap.in_channels = snap.out_channels = static_cast<std::uint32_t>(s.out_c);
      snap.height = static_cast<std::uint32_t>(transposed ? s.out_w : s.out_h);
      snap.width = static_cast<std::uint32_t>(transposed ? s.out_h : s.out_w);
      snap.res_op = 1;
      snap.in_addr = snap.out_addr = out_addr;
      ops.push_back(snap);
      ids.push_back("");
    }

    p.alloc_map[l.id] = AllocEntry{in_addr, out_addr, out_bytes};
  }

  // Weight image: Winograd-pretransformed kernels for stride-1 3x3 layers,
  // spatial-domain block floats for everything else.
  io::Writer img;
  for (const auto& l : g.layers) {
    if (l.kind != LayerKind::Conv) continue;
    const ConvWeights& cw = ws.of(l.id);
    check_weights(l, cw);
    LayerWeights lw;
    if (l.kernel == Kernel::K3 && l.stride == Stride::S1) {
      lw.winograd = true;
      lw.wino = transform_weights(cw, opt.bfp);
    } else {
      lw.direct = quantize_weights_direct(cw, opt.bfp);
    }
    WeightSpan span;
    span.offset = img.size();
    mcdetail::append_weight_record(img, lw);
    span.length = img.size() - span.offset;
    p.weight_spans[l.id] = span;
  }
  p.weight_image = img.take();
  return p;
}

// ---------------------------------------------------------------------------
// Disassembly. One line per op; every word field appears, so reassembling a
// listing reproduces the words bit for bit.

namespace mcdetail {

inline const char* op_mnemonic(std::uint8_t layer_type, bool fusion) {
  switch (layer_type) {
    case kOpConv: return "conv";
    case kOpPoolSig: return fusion ? "sigmoid" : "pool";
    case kOpUpsample: return "upsample";
    default: return "null";
  }
}

inline std::string kernel_token(const MicroOp& op) {
  if (op.layer_type == kOpUpsample) return op.kernel_code == 0 ? "nearest" : "bilinear";
  switch (op.kernel_code) {
    case kKernel1: return "k1";
    case kKernel3: return "k3";
    case kKernel7: return "k7";
    default: return "k2";
  }
}

inline void print_op(std::ostringstream& out, const MicroOp& op, bool fusion) {
  out << op_mnemonic(op.layer_type, fusion) << ' ' << kernel_token(op) << " s"
      << (op.stride_code == 0 ? 1 : 2);
  if (op.relu) out << " relu";
  if (op.transpose) out << " t";
  out << " res:" << static_cast<int>(op.res_op) << " in:" << op.in_channels << 'x' << op.height
      << 'x' << op.width << " out:" << op.out_channels << " addr:0x" << std::hex << op.in_addr
      << "->0x" << op.out_addr << std::dec << '\n';
}

}  // namespace mcdetail

inline std::string disassemble(const MicroProgram& p) {
  std::ostringstream out;
  if (!p.extraction.empty()) {
    out << ".extraction\n";
    for (const auto& op : p.extraction) mcdetail::print_op(out, op, false);
  }
  if (!p.fusion.empty()) {
    out << ".fusion\n";
    for (const auto& op : p.fusion) mcdetail::print_op(out, op, true);
  }
  return out.str();
}

struct AssembledOps {
  std::vector<MicroOp> extraction;
  std::vector<MicroOp> fusion;
};

namespace mcdetail {

inline std::uint64_t parse_u64(const std::string& tok, const char* what) {
  try {
    std::size_t used = 0;
    std::uint64_t v = std::stoull(tok, &used, 0);
    if (used != tok.size()) throw DecodeError("");
    return v;
  } catch (const std::exception&) {
    throw DecodeError(std::string("cannot parse ") + what + ": " + tok);
  }
}

inline MicroOp parse_op_line(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> tok;
  for (std::string t; in >> t;) tok.push_back(t);
  if (tok.size() < 6) throw DecodeError("truncated instruction line: " + line);

  MicroOp op;
  std::size_t at = 0;
  const std::string& name = tok[at++];
  bool upsample = false;
  if (name == "null") op.layer_type = kOpNull;
  else if (name == "conv") op.layer_type = kOpConv;
  else if (name == "pool" || name == "sigmoid") op.layer_type = kOpPoolSig;
  else if (name == "upsample") op.layer_type = kOpUpsample, upsample = true;
  else throw DecodeError("unknown mnemonic: " + name);

  const std::string& k = tok[at++];
  if (upsample) {
    if (k == "nearest") op.kernel_code = 0;
    else if (k == "bilinear") op.kernel_code = 1;
    else throw DecodeError("unknown upsample mode: " + k);
  } else if (k == "k1") op.kernel_code = kKernel1;
  else if (k == "k3") op.kernel_code = kKernel3;
  else if (k == "k7") op.kernel_code = kKernel7;
  else if (k == "k2") op.kernel_code = kKernel2;
  else throw DecodeError("unknown kernel token: " + k);

  const std::string& s = tok[at++];
  if (s == "s1") op.stride_code = 0;
  else if (s == "s2") op.stride_code = 1;
  else throw DecodeError("unknown stride token: " + s);

  while (at < tok.size() && (tok[at] == "relu" || tok[at] == "t")) {
    if (tok[at] == "relu") op.relu = true;
    else op.transpose = true;
    ++at;
  }

  for (; at < tok.size(); ++at) {
    const std::string& t = tok[at];
    auto colon = t.find(':');
    if (colon == std::string::npos) throw DecodeError("unknown token: " + t);
    const std::string key = t.substr(0, colon);
    const std::string val = t.substr(colon + 1);
    if (key == "res") {
      op.res_op = static_cast<std::uint8_t>(parse_u64(val, "res_op"));
    } else if (key == "in") {
      auto x1 = val.find('x');
      auto x2 = val.find('x', x1 == std::string::npos ? x1 : x1 + 1);
      if (x1 == std::string::npos || x2 == std::string::npos)
        throw DecodeError("bad shape token: " + t);
      op.in_channels = static_cast<std::uint32_t>(parse_u64(val.substr(0, x1), "in_channels"));
      op.height = static_cast<std::uint32_t>(parse_u64(val.substr(x1 + 1, x2 - x1 - 1), "height"));
      op.width = static_cast<std::uint32_t>(parse_u64(val.substr(x2 + 1), "width"));
    } else if (key == "out") {
      op.out_channels = static_cast<std::uint32_t>(parse_u64(val, "out_channels"));
    } else if (key == "addr") {
      auto arrow = val.find("->");
      if (arrow == std::string::npos) throw DecodeError("bad address token: " + t);
      op.in_addr = parse_u64(val.substr(0, arrow), "in_addr");
      op.out_addr = parse_u64(val.substr(arrow + 2), "out_addr");
    } else {
      throw DecodeError("unknown token: " + t);
    }
  }
  return op;
}

}  // namespace mcdetail

inline AssembledOps assemble(const std::string& text) {
  AssembledOps out;
  std::vector<MicroOp>* current = &out.extraction;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    const std::string body = line.substr(first, last - first + 1);
    if (body == ".extraction") current = &out.extraction;
    else if (body == ".fusion") current = &out.fusion;
    else if (body[0] == '#') continue;
    else current->push_back(mcdetail::parse_op_line(body));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Program container: magic, version, op counts, raw little-endian words
// (extraction then fusion), op id table, the weight offset table and image,
// then the allocation map and I/O metadata.

inline constexpr std::uint32_t kProgramVersion = 1;

inline std::vector<std::uint8_t> program_to_bytes(const MicroProgram& p) {
  io::Writer w;
  w.magic("FCNM");
  w.u32(kProgramVersion);
  w.u8(p.transposed ? 1 : 0);
  w.i32(p.input_c);
  w.i32(p.input_h);
  w.i32(p.input_w);
  w.str(p.outputs.score);
  w.str(p.outputs.link);
  w.u32(static_cast<std::uint32_t>(p.extraction.size()));
  w.u32(static_cast<std::uint32_t>(p.fusion.size()));
  for (const auto& op : p.extraction) {
    McWord word = encode(op);
    w.bytes(word.data(), word.size());
  }
  for (const auto& op : p.fusion) {
    McWord word = encode(op);
    w.bytes(word.data(), word.size());
  }
  if (p.extraction_ids.size() != p.extraction.size() || p.fusion_ids.size() != p.fusion.size())
    throw FormatError("op id tables disagree with op lists");
  for (const auto& id : p.extraction_ids) w.str(id);
  for (const auto& id : p.fusion_ids) w.str(id);
  w.u32(static_cast<std::uint32_t>(p.weight_spans.size()));
  for (const auto& [id, span] : p.weight_spans) {
    w.str(id);
    w.u64(span.offset);
    w.u64(span.length);
  }
  w.u64(p.weight_image.size());
  w.bytes(p.weight_image.data(), p.weight_image.size());
  w.u32(static_cast<std::uint32_t>(p.alloc_map.size()));
  for (const auto& [id, a] : p.alloc_map) {
    w.str(id);
    w.u64(a.in_addr);
    w.u64(a.out_addr);
    w.u64(a.out_bytes);
  }
  return w.take();
}

inline MicroProgram program_from_bytes(const std::vector<std::uint8_t>& bytes) {
  io::Reader r(bytes);
  r.magic("FCNM");
  const std::uint32_t version = r.u32();
  if (version != kProgramVersion)
    throw FormatError("unsupported program version " + std::to_string(version));
  MicroProgram p;
  p.transposed = r.u8() != 0;
  p.input_c = r.i32();
  p.input_h = r.i32();
  p.input_w = r.i32();
  p.outputs.score = r.str();
  p.outputs.link = r.str();
  const std::uint32_t n_ext = r.u32();
  const std::uint32_t n_fus = r.u32();
  auto read_word = [&r]() {
    McWord w;
    r.bytes(w.data(), w.size());
    return decode(w);
  };
  p.extraction.reserve(n_ext);
  for (std::uint32_t i = 0; i < n_ext; ++i) p.extraction.push_back(read_word());
  p.fusion.reserve(n_fus);
  for (std::uint32_t i = 0; i < n_fus; ++i) p.fusion.push_back(read_word());
  p.extraction_ids.reserve(n_ext);
  for (std::uint32_t i = 0; i < n_ext; ++i) p.extraction_ids.push_back(r.str());
  p.fusion_ids.reserve(n_fus);
  for (std::uint32_t i = 0; i < n_fus; ++i) p.fusion_ids.push_back(r.str());
  const std::uint32_t n_spans = r.u32();
  for (std::uint32_t i = 0; i < n_spans; ++i) {
    std::string id = r.str();
    WeightSpan span;
    span.offset = r.u64();
    span.length = r.u64();
    p.weight_spans.emplace(std::move(id), span);
  }
  const std::uint64_t img = r.u64();
  if (img > r.remaining()) throw FormatError("truncated container");
  p.weight_image.resize(static_cast<std::size_t>(img));
  if (img) r.bytes(p.weight_image.data(), p.weight_image.size());
  for (const auto& [id, span] : p.weight_spans) {
    if (span.offset + span.length > p.weight_image.size())
      throw FormatError("weight span for " + id + " lies outside the image");
  }
  const std::uint32_t n_alloc = r.u32();
  for (std::uint32_t i = 0; i < n_alloc; ++i) {
    std::string id = r.str();
    AllocEntry a;
    a.in_addr = r.u64();
    a.out_addr = r.u64();
    a.out_bytes = r.u64();
    p.alloc_map.emplace(std::move(id), a);
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after program container");
  return p;
}

inline void save_program(const std::string& path, const MicroProgram& p) {
  io::write_file(path, program_to_bytes(p));
}

inline MicroProgram load_program(const std::string& path) {
  return program_from_bytes(io::read_file(path));
}

}  // namespace fcnvm
