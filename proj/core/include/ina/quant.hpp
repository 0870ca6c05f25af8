#pragma once
// Shared int32 -> int8 store-path finalization used by both compute engines:
// fixed-point requantization, then activation, then clamp. The compiler bakes
// the table entries (and any activation LUT) into each program; the scalar
// reference model applies the identical entries, which is what makes engine
// and reference outputs bit-identical.

#include <array>
#include <cstdint>

#include "ina/numeric.hpp"

namespace ina {

enum class Act : std::uint8_t { None, Relu, GeluLut };

struct QEntry {
  QScale scale;
  Act act = Act::None;
  std::array<std::int8_t, 256> lut{};  // indexed by (int8 value + 128)
  bool has_lut = false;
};

inline std::int32_t finalize_lane(std::int64_t acc, const QEntry& e) {
  const std::int64_t v = requant_apply(acc, e.scale);
  switch (e.act) {
    case Act::None:
      return sat_i8(v);
    case Act::Relu:
      return v < 0 ? std::int32_t(0) : sat_i8(v);
    case Act::GeluLut:
      return e.lut[std::size_t(int(sat_i8(v)) + 128)];
  }
  return sat_i8(v);
}

}  // namespace ina
