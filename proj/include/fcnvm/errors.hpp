// SPDX-License-Identifier: Apache-2.0
//
// Error taxonomy shared by every module.  Each condition the toolchain can
// reject maps to one exception type so callers (and the CLI exit-code logic)
// can distinguish malformed inputs from internal faults.

#pragma once

#include <stdexcept>
#include <string>

namespace fcnvm {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Input documents that do not match the expected schema (JSON shape, missing
// or unknown fields, wrong types).
struct SchemaError : Error {
  using Error::Error;
};

// Structurally invalid layer graphs: duplicate ids, forward references,
// channel mismatches, broken residual or concat protocol.
struct GraphError : Error {
  using Error::Error;
};

// Well-formed request for something the target cannot do (kernel/stride
// combination, oversized fields, both image dimensions over the width limit).
struct UnsupportedError : Error {
  using Error::Error;
};

// Tensor or parameter dimensions that do not line up.
struct ShapeError : Error {
  using Error::Error;
};

// A value does not fit the instruction field or numeric format it targets.
struct RangeError : Error {
  using Error::Error;
};

// Malformed instruction words or binary containers.
struct DecodeError : Error {
  using Error::Error;
};

struct FormatError : Error {
  using Error::Error;
};

// Address space exhausted during planning.
struct AllocError : Error {
  using Error::Error;
};

// Runtime access violations caught by the simulator's write-tracking memory.
struct MemoryFault : Error {
  using Error::Error;
};

// Residual cache protocol violations at run time.
struct CacheFault : Error {
  using Error::Error;
};

// Program/input combinations the machine refuses to start.
struct RejectError : Error {
  using Error::Error;
};

// Invalid simulator configuration (buffer too small for one row group, etc).
struct ConfigError : Error {
  using Error::Error;
};

// Filesystem problems.
struct IoError : Error {
  using Error::Error;
};

}  // namespace fcnvm
