#include "ina/numeric.hpp"

#include <cmath>

#include "ina/common.hpp"

namespace ina {

std::int64_t round_half_even_rshift(std::int64_t v, unsigned shift) {
  if (shift == 0) return v;
  const std::int64_t floor_part = v >> shift;            // arithmetic shift, floors
  const std::uint64_t rem = static_cast<std::uint64_t>(v) & ((1ULL << shift) - 1);
  const std::uint64_t half = 1ULL << (shift - 1);
  if (rem > half) return floor_part + 1;
  if (rem < half) return floor_part;
  // exactly halfway: round to even
  return (floor_part & 1) ? floor_part + 1 : floor_part;
}

std::int32_t round_half_up_div(std::int64_t num, std::int64_t den) {
  if (den <= 0) fail(Err::ConfigError, "round_half_up_div: nonpositive divisor");
  // round half toward +inf: floor((num + den/2) / den)
  const std::int64_t n = num + den / 2;
  const std::int64_t q = (n >= 0) ? n / den : -((-n + den - 1) / den);
  return sat_i32(q);
}

std::int64_t round_half_even(double v) {
  const double r = std::nearbyint(v);  // assumes default FE_TONEAREST (ties-to-even)
  return static_cast<std::int64_t>(r);
}

QScale quantize_multiplier(double r) {
  if (r <= 0.0) fail(Err::ConfigError, "quantize_multiplier: multiplier must be positive");
  int exp = 0;
  const double frac = std::frexp(r, &exp);  // r = frac * 2^exp, frac in [0.5, 1)
  std::int64_t m = round_half_even(frac * (1LL << 31));
  if (m == (1LL << 31)) {  // frac rounded up to 1.0
    m >>= 1;
    ++exp;
  }
  int shift = 31 - exp;
  // clamp pathological scales rather than faulting; callers pick sane ranges
  while (shift > 62) {
    m >>= 1;
    --shift;
  }
  if (shift < 0) {
    m <<= -shift;
    shift = 0;
  }
  QScale q;
  q.mult = static_cast<std::int32_t>(m);
  q.shift = static_cast<std::uint8_t>(shift);
  return q;
}

std::int64_t requant_apply(std::int64_t acc, const QScale& q) {
  if (q.mult == 0) return acc;
  return round_half_even_rshift(acc * q.mult, q.shift);
}

const char* err_name(Err e) {
  switch (e) {
    case Err::MalformedFrame: return "MalformedFrame";
    case Err::UnsupportedProtocol: return "UnsupportedProtocol";
    case Err::IoError: return "IoError";
    case Err::BadMagic: return "BadMagic";
    case Err::Collision: return "Collision";
    case Err::FifoFull: return "FifoFull";
    case Err::CapacityExceeded: return "CapacityExceeded";
    case Err::UnsupportedFeature: return "UnsupportedFeature";
    case Err::OutOfOrderFin: return "OutOfOrderFin";
    case Err::OutOfRange: return "OutOfRange";
    case Err::PortConflict: return "PortConflict";
    case Err::OutOfMemory: return "OutOfMemory";
    case Err::Overlap: return "Overlap";
    case Err::RegisterConflict: return "RegisterConflict";
    case Err::BadIndex: return "BadIndex";
    case Err::StreamTooWide: return "StreamTooWide";
    case Err::BadAddress: return "BadAddress";
    case Err::ShapeError: return "ShapeError";
    case Err::UnsupportedLayer: return "UnsupportedLayer";
    case Err::LayoutError: return "LayoutError";
    case Err::CapacityError: return "CapacityError";
    case Err::StaleResult: return "StaleResult";
    case Err::ConfigError: return "ConfigError";
    case Err::OracleMismatch: return "OracleMismatch";
    case Err::Deadlock: return "Deadlock";
  }
  return "Unknown";
}

}  // namespace ina
