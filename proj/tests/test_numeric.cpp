// Rounding, saturation and requantization primitives. These are the ground the
// engine/oracle bit-exactness stands on, so edge cases get exhaustive checks.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "ina/numeric.hpp"
#include "ina/quant.hpp"

using namespace ina;

TEST_CASE("sat_i8 clamps to [-128, 127]") {
  CHECK(sat_i8(0) == 0);
  CHECK(sat_i8(127) == 127);
  CHECK(sat_i8(128) == 127);
  CHECK(sat_i8(1'000'000'000'000ll) == 127);
  CHECK(sat_i8(-128) == -128);
  CHECK(sat_i8(-129) == -128);
  CHECK(sat_i8(-1'000'000'000'000ll) == -128);
}

TEST_CASE("sat_i32 clamps to int32 range") {
  CHECK(sat_i32(INT32_MAX) == INT32_MAX);
  CHECK(sat_i32(std::int64_t(INT32_MAX) + 1) == INT32_MAX);
  CHECK(sat_i32(INT32_MIN) == INT32_MIN);
  CHECK(sat_i32(std::int64_t(INT32_MIN) - 1) == INT32_MIN);
}

TEST_CASE("round_half_even_rshift: ties go to the even quotient") {
  CHECK(round_half_even_rshift(0, 4) == 0);
  CHECK(round_half_even_rshift(7, 0) == 7);     // shift 0 is identity
  CHECK(round_half_even_rshift(8, 4) == 0);     // 0.5 -> 0 (even)
  CHECK(round_half_even_rshift(24, 4) == 2);    // 1.5 -> 2 (even)
  CHECK(round_half_even_rshift(40, 4) == 2);    // 2.5 -> 2 (even)
  CHECK(round_half_even_rshift(9, 4) == 1);     // 0.5625 -> 1
  CHECK(round_half_even_rshift(-8, 4) == 0);    // -0.5 -> 0
  CHECK(round_half_even_rshift(-24, 4) == -2);  // -1.5 -> -2
  CHECK(round_half_even_rshift(-40, 4) == -2);  // -2.5 -> -2
  CHECK(round_half_even_rshift(-9, 4) == -1);
}

TEST_CASE("round_half_even_rshift matches a double reference away from ties") {
  std::mt19937_64 g(11);
  for (int i = 0; i < 100000; ++i) {
    const std::int64_t v = std::int64_t(g()) >> 20;
    const unsigned sh = unsigned(g() % 31);
    const std::int64_t got = round_half_even_rshift(v, sh);
    const double x = double(v) / std::exp2(double(sh));
    // std::nearbyint rounds half to even in the default mode.
    const std::int64_t want = std::int64_t(std::nearbyint(x));
    CHECK(got == want);
  }
}

TEST_CASE("round_half_up_div: half rounds toward +inf") {
  CHECK(round_half_up_div(5, 2) == 3);
  CHECK(round_half_up_div(-5, 2) == -2);
  CHECK(round_half_up_div(7, 2) == 4);
  CHECK(round_half_up_div(-7, 2) == -3);
  CHECK(round_half_up_div(6, 3) == 2);
  CHECK(round_half_up_div(0, 7) == 0);
}

TEST_CASE("quantize_multiplier produces a normalized mantissa") {
  for (double r : {0.5, 0.25, 1.0 / 3, 1e-3, 0.9999, 1.0 / (134.0 * 4)}) {
    const QScale q = quantize_multiplier(r);
    REQUIRE(q.mult != 0);
    CHECK(q.mult >= (1 << 30));
    CHECK(std::int64_t(q.mult) < (1ll << 31));
    // Reconstructed ratio within one ulp of the mantissa.
    const double back = double(q.mult) / std::exp2(double(q.shift));
    CHECK(std::abs(back - r) / r < 1e-9);
  }
}

TEST_CASE("requant_apply with mult 0 passes the accumulator through") {
  const QScale id{};
  CHECK(requant_apply(123456789, id) == 123456789);
  CHECK(requant_apply(-42, id) == -42);
}

TEST_CASE("requant_apply equals the real-valued product within rounding") {
  std::mt19937_64 g(7);
  for (int i = 0; i < 20000; ++i) {
    const double r = 1e-4 + double(g() % 10000) / 10007.0;
    const QScale q = quantize_multiplier(r);
    const std::int64_t acc = std::int64_t(g() % 2000001) - 1000000;
    const std::int64_t got = requant_apply(acc, q);
    const double want = double(acc) * double(q.mult) / std::exp2(double(q.shift));
    CHECK(std::abs(double(got) - want) <= 0.5 + 1e-9);
  }
}

TEST_CASE("finalize_lane: requant, activation, clamp in that order") {
  QEntry e;
  e.scale = quantize_multiplier(0.5);
  CHECK(finalize_lane(100, e) == 50);
  CHECK(finalize_lane(1000, e) == 127);    // clamps after scaling
  CHECK(finalize_lane(-1000, e) == -128);
  e.act = Act::Relu;
  CHECK(finalize_lane(-100, e) == 0);
  CHECK(finalize_lane(100, e) == 50);
  e.act = Act::GeluLut;
  e.has_lut = true;
  for (int i = 0; i < 256; ++i) e.lut[std::size_t(i)] = std::int8_t(i - 128);
  CHECK(finalize_lane(100, e) == 50);      // identity table
  e.lut[std::size_t(50 + 128)] = -3;
  CHECK(finalize_lane(100, e) == -3);      // table output is final
}

TEST_CASE("ps_per_cycle for the two clock domains") {
  CHECK(ps_per_cycle(125'000'000) == 8000);
  CHECK(ps_per_cycle(222'000'000) == 4505);  // round(1e12 / 222e6)
  CHECK(ps_per_cycle(1'000'000'000) == 1000);
}

TEST_CASE("rng helpers are deterministic and in range") {
  std::mt19937_64 a(99), b(99);
  for (int i = 0; i < 1000; ++i) {
    const std::uint64_t x = rng_range(a, 10, 20);
    CHECK(x == rng_range(b, 10, 20));
    CHECK(x >= 10);
    CHECK(x <= 20);
  }
  std::mt19937_64 c(5);
  for (int i = 0; i < 1000; ++i) {
    const double u = rng_signed_unit(c);
    CHECK(u >= -1.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("mix64 avalanche: single-bit flips change about half the output bits") {
  std::mt19937_64 g(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::uint64_t x = g();
    for (int bit = 0; bit < 64; bit += 7) {
      const std::uint64_t d = mix64(x) ^ mix64(x ^ (1ull << bit));
      const int pop = __builtin_popcountll(d);
      CHECK(pop > 10);
      CHECK(pop < 54);
    }
  }
}
