#pragma once
// Deterministic integer arithmetic used identically by the engines and the
// scalar oracle: saturation, the two rounding rules, fixed-point requantization
// and portable RNG derivations. Everything here is pure and branch-stable so
// results are bit-identical across platforms.

#include <cstdint>
#include <random>

namespace ina {

inline std::int8_t sat_i8(std::int64_t v) {
  if (v > 127) return 127;
  if (v < -128) return -128;
  return static_cast<std::int8_t>(v);
}

inline std::int32_t sat_i32(std::int64_t v) {
  if (v > INT32_MAX) return INT32_MAX;
  if (v < INT32_MIN) return INT32_MIN;
  return static_cast<std::int32_t>(v);
}

/// Round v / 2^shift to nearest, ties to even (banker's rounding).
/// shift == 0 returns v unchanged.
std::int64_t round_half_even_rshift(std::int64_t v, unsigned shift);

/// Round num / den to nearest, ties away from zero upward (round-half-up),
/// 32-bit semantics; den > 0. Used by the controller readout divisions.
std::int32_t round_half_up_div(std::int64_t num, std::int64_t den);

/// Round a double to nearest integer, ties to even.
std::int64_t round_half_even(double v);

/// Fixed-point requantization parameters: real multiplier r ≈ mult / 2^shift
/// with mult in [2^30, 2^31) (or 0 for the identity "saturate only" mode).
struct QScale {
  std::int32_t mult = 0;  // 0 => no multiply, just saturate
  std::uint8_t shift = 0;
};

/// Decompose a positive real multiplier into (mult, shift).
QScale quantize_multiplier(double r);

/// Apply requantization: round_half_even(acc * mult / 2^shift).
/// With mult == 0 the accumulator passes through unscaled.
std::int64_t requant_apply(std::int64_t acc, const QScale& q);

// ---- portable RNG helpers -------------------------------------------------
// mt19937_64 output is pinned by the standard; the mappings below avoid
// std::*_distribution, whose results vary between library implementations.

inline std::uint64_t rng_u64(std::mt19937_64& g) { return g(); }

/// Uniform integer in [lo, hi] (inclusive). Modulo bias is irrelevant at the
/// ranges used here and determinism matters more.
inline std::uint64_t rng_range(std::mt19937_64& g, std::uint64_t lo, std::uint64_t hi) {
  return lo + g() % (hi - lo + 1);
}

/// Uniform double in [-1, 1).
inline double rng_signed_unit(std::mt19937_64& g) {
  return static_cast<double>(g() >> 11) * (1.0 / 4503599627370496.0) * 2.0 - 1.0;
}

/// Integer picoseconds per clock cycle: round(1e12 / hz). All cross-domain
/// time comparisons happen on this integer base.
inline std::uint64_t ps_per_cycle(std::uint64_t hz) {
  return (1'000'000'000'000ull + hz / 2) / hz;
}

/// 64-bit avalanche mix (the murmur3 finalizer). Published, fixed constants.
inline std::uint64_t mix64(std::uint64_t h) {
  h ^= h >> 33;
  h *= 0xff51afd7ed558ccdULL;
  h ^= h >> 33;
  h *= 0xc4ceb9fe1a85ec53ULL;
  h ^= h >> 33;
  return h;
}

}  // namespace ina
