#pragma once
// Shared error model and small helpers used across the simulator.

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace ina {

enum class Err {
  // traffic
  MalformedFrame,
  UnsupportedProtocol,
  IoError,
  BadMagic,
  // extractor
  Collision,
  FifoFull,
  CapacityExceeded,
  UnsupportedFeature,
  OutOfOrderFin,
  // fabric
  OutOfRange,
  PortConflict,
  OutOfMemory,
  Overlap,
  // vpe / arype
  RegisterConflict,
  BadIndex,
  StreamTooWide,
  BadAddress,
  // compiler
  ShapeError,
  UnsupportedLayer,
  LayoutError,
  // controller
  CapacityError,
  StaleResult,
  // cli / driver
  ConfigError,
  OracleMismatch,
  Deadlock,
};

const char* err_name(Err e);

/// Single exception type carrying a machine-checkable code.
/// Tests assert on `code`; messages are for humans.
class SimError : public std::runtime_error {
 public:
  SimError(Err code, const std::string& msg)
      : std::runtime_error(std::string(err_name(code)) + ": " + msg), code_(code) {}
  Err code() const { return code_; }

 private:
  Err code_;
};

[[noreturn]] inline void fail(Err code, const std::string& msg) { throw SimError(code, msg); }

/// One 128-bit memory word.
using Word16 = std::array<std::uint8_t, 16>;

}  // namespace ina
