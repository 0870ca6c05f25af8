// Systolic array engine: matmul bit-exactness, the documented cycle model,
// occupancy accounting, aggregation sweeps, validation, and asm round-trips.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstring>
#include <random>

#include "ina/asm_text.hpp"
#include "ina/arype.hpp"
#include "ina/fabric.hpp"

using namespace ina;
using namespace ina::arype;
using fabric::BankId;
using fabric::MemAddr;

namespace {

struct Rig {
  fabric::Fabric fab;
  AryPe pe;
  explicit Rig(unsigned k = 16) : pe(make_cfg(k), fab) {}
  static AryConfig make_cfg(unsigned k) {
    AryConfig c;
    c.k = k;
    return c;
  }
  void put(std::uint32_t byte, const std::vector<std::uint8_t>& v) {
    fab.write_bytes({BankId::Compute0, byte}, v.data(), v.size(), 0, 1, 1);
    fab.commit_all();
  }
  std::vector<std::uint8_t> get(std::uint32_t byte, std::size_t n) {
    fab.commit_all();
    std::vector<std::uint8_t> out(n);
    const auto& bank = fab.bank(BankId::Compute0);
    for (std::size_t i = 0; i < n; ++i)
      out[i] = bank.committed()[(byte + i) / 16][(byte + i) % 16];
    return out;
  }
};

AryInstr fin() { return FinOp{}; }

}  // namespace

// ---------------------------------------------------------------------------
// Matmul bit-exactness

TEST_CASE("MM streams equal a brute-force int8 matmul (raw int32 outputs)") {
  std::mt19937_64 g(11);
  for (int trial = 0; trial < 60; ++trial) {
    const unsigned k = (trial % 2) ? 16u : 32u;
    const unsigned a = 1 + unsigned(g() % k);
    const unsigned b = 1 + unsigned(g() % k);
    const unsigned l = 1 + unsigned(g() % 12);
    Rig r(k);

    std::vector<std::int8_t> w(std::size_t(a) * b);
    for (auto& x : w) x = std::int8_t(g());
    r.pe.load_pcache(w);

    std::vector<std::uint8_t> acts(std::size_t(l) * 64);
    for (auto& x : acts) x = std::uint8_t(g());
    r.put(0, acts);

    LdOp ld;
    ld.rows = std::uint16_t(a);
    ld.cols = std::uint16_t(b);
    MmOp mm;
    mm.l = l;
    mm.src_areg = 0;
    mm.dst_areg = 1;
    mm.src_row_stride = 64;
    AryProgram p;
    p.instrs = {ld, mm, fin()};
    r.pe.load_program(p);
    r.pe.run({{{0, MemAddr{BankId::Compute0, 0}}, {1, MemAddr{BankId::Compute0, 8192}}}, 0});

    const auto out = r.get(8192, std::size_t(l) * b * 4);
    for (unsigned row = 0; row < l; ++row)
      for (unsigned j = 0; j < b; ++j) {
        std::int64_t want = 0;
        for (unsigned i = 0; i < a; ++i)
          want += std::int32_t(std::int8_t(acts[row * 64 + i])) * w[std::size_t(i) * b + j];
        std::int32_t got;
        std::memcpy(&got, out.data() + (std::size_t(row) * b + j) * 4, 4);
        CHECK(got == sat_i32(want));
      }
  }
}

TEST_CASE("MM with a requant index finalizes every lane like the scalar rule") {
  std::mt19937_64 g(22);
  Rig r(16);
  const unsigned a = 12, b = 9, l = 5;
  std::vector<std::int8_t> w(a * b);
  for (auto& x : w) x = std::int8_t(g());
  r.pe.load_pcache(w);
  std::vector<std::uint8_t> acts(l * 16);
  for (auto& x : acts) x = std::uint8_t(g());
  r.put(0, acts);

  QEntry q;
  q.scale = quantize_multiplier(1.0 / 23);
  q.act = Act::Relu;
  LdOp ld;
  ld.rows = a;
  ld.cols = b;
  MmOp mm;
  mm.l = l;
  mm.src_areg = 0;
  mm.dst_areg = 1;
  mm.qidx = 0;
  AryProgram p;
  p.instrs = {ld, mm, fin()};
  p.qtable = {q};
  r.pe.load_program(p);
  r.pe.run({{{0, MemAddr{BankId::Compute0, 0}}, {1, MemAddr{BankId::Compute0, 8192}}}, 0});

  const auto out = r.get(8192, std::size_t(l) * b);
  for (unsigned row = 0; row < l; ++row)
    for (unsigned j = 0; j < b; ++j) {
      std::int64_t want = 0;
      for (unsigned i = 0; i < a; ++i)
        want += std::int32_t(std::int8_t(acts[row * 16 + i])) * w[std::size_t(i) * b + j];
      CHECK(std::int8_t(out[row * b + j]) == std::int8_t(finalize_lane(want, q)));
    }
}

TEST_CASE("fabric-sourced weight tiles load plain or transposed") {
  Rig r(8);
  // Record laid out as 3 rows x 2 cols.
  std::vector<std::uint8_t> rec = {1, 2, 0, 0, 3, 4, 0, 0, 5, 6, 0, 0};
  r.put(0, rec);

  LdOp ld;
  ld.src = LdOp::Src::Fabric;
  ld.areg = 0;
  ld.rows = 3;
  ld.cols = 2;
  ld.row_stride = 4;
  AryProgram p;
  p.instrs = {ld, fin()};
  r.pe.load_program(p);
  r.pe.run({{{0, MemAddr{BankId::Compute0, 0}}}, 0});
  CHECK(r.pe.weight(0, 0) == 1);
  CHECK(r.pe.weight(0, 1) == 2);
  CHECK(r.pe.weight(2, 1) == 6);
  CHECK(r.pe.weight(3, 0) == 0);  // zero-filled beyond the tile

  // Same record interpreted as (cols x rows) and transposed while latching:
  // tile becomes 2 rows x 3 cols with tile[i][j] == rec[j][i].
  LdOp lt;
  lt.src = LdOp::Src::Fabric;
  lt.areg = 0;
  lt.rows = 2;
  lt.cols = 3;
  lt.row_stride = 4;
  lt.transpose = true;
  AryProgram pt;
  pt.instrs = {lt, fin()};
  r.pe.load_program(pt);
  r.pe.run({{{0, MemAddr{BankId::Compute0, 0}}}, 0});
  CHECK(r.pe.weight(0, 0) == 1);
  CHECK(r.pe.weight(1, 0) == 2);
  CHECK(r.pe.weight(0, 2) == 5);
  CHECK(r.pe.weight(1, 2) == 6);
  CHECK(r.pe.tile_rows() == 2);
  CHECK(r.pe.tile_cols() == 3);
}

// ---------------------------------------------------------------------------
// Cycle model

TEST_CASE("LD costs k cycles and MM costs l + 2k - 1") {
  Rig r(16);
  r.pe.load_pcache(std::vector<std::int8_t>(256, 1));
  LdOp ld;
  ld.rows = 16;
  ld.cols = 16;
  MmOp mm;
  mm.l = 10;
  mm.dst_areg = 1;
  AryProgram p;
  p.instrs = {ld, mm, fin()};
  r.pe.load_program(p);
  const std::uint64_t end =
      r.pe.run({{{0, MemAddr{BankId::Compute0, 0}}, {1, MemAddr{BankId::Compute0, 8192}}}, 0});
  // 16 (load) + 10 + 31 (stream + drain) = 57 cycles; the retire horizon of the
  // last row lands on the same boundary.
  CHECK(end == 57 * r.pe.period_ps());
  CHECK(r.pe.stats().ld_cycles == 16);
  CHECK(r.pe.stats().mm_cycles == 41);
  CHECK(mm_cost(10, 16) == 41);
}

TEST_CASE("shadow preload is free and a continuation MM bills only l cycles") {
  Rig r(16);
  r.pe.load_pcache(std::vector<std::int8_t>(512, 1));
  LdOp ld;
  ld.rows = 16;
  ld.cols = 16;
  LdOp shadow = ld;
  shadow.pcache_off = 256;
  shadow.shadow = true;
  MmOp mm;
  mm.l = 10;
  mm.dst_areg = 1;
  MmOp mm2 = mm;
  mm2.cont = true;
  AryProgram p;
  p.instrs = {ld, mm, shadow, mm2, fin()};
  r.pe.load_program(p);
  const std::uint64_t end =
      r.pe.run({{{0, MemAddr{BankId::Compute0, 0}}, {1, MemAddr{BankId::Compute0, 8192}}}, 0});
  // Issue cycles: 16 + 41 + 0 + 10 = 67. The continuation's last row enters at
  // cycle 66 and retires 2k-1 later: horizon 98 rules the end time.
  CHECK(r.pe.stats().ld_cycles == 16);  // shadow load billed zero
  CHECK(r.pe.stats().mm_cycles == 51);
  CHECK(end == 98 * r.pe.period_ps());
}

TEST_CASE("aggregation sweeps cost 6 cycles per started octet") {
  Rig r(16);
  std::vector<std::uint8_t> zeros(128, 0);
  r.put(0, zeros);
  AggOp ag;
  ag.elems = 20;  // 3 octets
  ag.src_areg = 0;
  ag.dst_areg = 1;
  LdOp ld;
  ld.rows = 1;
  ld.cols = 1;
  r.pe.load_pcache({1});
  AryProgram p;
  p.instrs = {ld, ag, fin()};
  r.pe.load_program(p);
  r.pe.run({{{0, MemAddr{BankId::Compute0, 0}}, {1, MemAddr{BankId::Compute0, 512}}}, 0});
  CHECK(r.pe.stats().agg_cycles == 18);
  CHECK(r.pe.stats().agg_ops == 1);
}

// ---------------------------------------------------------------------------
// Occupancy accounting

TEST_CASE("a (10,3)x(3,32) stream on a 32-wide array books 960 active MACs") {
  Rig r(32);
  r.pe.load_pcache(std::vector<std::int8_t>(96, 2));
  LdOp ld;
  ld.rows = 3;
  ld.cols = 32;
  MmOp mm;
  mm.l = 10;
  mm.dst_areg = 1;
  AryProgram p;
  p.instrs = {ld, mm, fin()};
  r.pe.load_program(p);
  r.pe.run({{{0, MemAddr{BankId::Compute0, 0}}, {1, MemAddr{BankId::Compute0, 8192}}}, 0});
  CHECK(r.pe.stats().active_macs == 960);
  CHECK(r.pe.stats().stream_rows == 10);
  const double occ = double(r.pe.stats().active_macs) /
                     (32.0 * 32.0 * double(r.pe.stats().stream_rows));
  CHECK(occ == doctest::Approx(0.09375));
  CHECK(mm_steady_occupancy(3, 32, 32) == doctest::Approx(0.09375));
}

TEST_CASE("utilization identities follow the documented formulas") {
  CHECK(mm_utilization(16, 16, 100, 16) ==
        doctest::Approx(16.0 * 16 * 100 / (16.0 * 16 * (100 + 31))));
  CHECK(mm_utilization(3, 32, 10, 32) == doctest::Approx(960.0 / (1024.0 * 73)));
  CHECK(mm_steady_occupancy(16, 16, 16) == doctest::Approx(1.0));
  // Output width beyond the array is clamped by min(b, k).
  CHECK(mm_steady_occupancy(16, 64, 16) == doctest::Approx(1.0));
}

// ---------------------------------------------------------------------------
// Aggregation data path

TEST_CASE("accumulating aggregation adds partials into the accumulator") {
  std::mt19937_64 g(33);
  Rig r(16);
  const unsigned n = 21;
  std::vector<std::uint8_t> src(n * 4), acc(n * 4);
  std::vector<std::int32_t> sv(n), av(n);
  for (unsigned i = 0; i < n; ++i) {
    sv[i] = std::int32_t(g());
    av[i] = std::int32_t(g());
    std::memcpy(src.data() + i * 4, &sv[i], 4);
    std::memcpy(acc.data() + i * 4, &av[i], 4);
  }
  r.put(0, src);
  r.put(1024, acc);
  r.pe.load_pcache({1});
  LdOp ld;
  ld.rows = 1;
  ld.cols = 1;
  AggOp ag;
  ag.elems = n;
  ag.src_areg = 0;
  ag.dst_areg = 1;
  AryProgram p;
  p.instrs = {ld, ag, fin()};
  r.pe.load_program(p);
  r.pe.run({{{0, MemAddr{BankId::Compute0, 0}}, {1, MemAddr{BankId::Compute0, 1024}}}, 0});
  const auto out = r.get(1024, n * 4);
  for (unsigned i = 0; i < n; ++i) {
    std::int32_t got;
    std::memcpy(&got, out.data() + i * 4, 4);
    CHECK(got == sat_i32(std::int64_t(av[i]) + sv[i]));
  }
}

TEST_CASE("finalizing aggregation shapes rows and skips pad columns") {
  Rig r(16);
  // Two source rows of 16 partials each; only 15 columns are real.
  std::vector<std::uint8_t> src(32 * 4), acc(32 * 4, 0);
  std::vector<std::int32_t> sv(32);
  for (unsigned i = 0; i < 32; ++i) {
    sv[i] = std::int32_t(i) * 7 - 40;
    std::memcpy(src.data() + i * 4, &sv[i], 4);
  }
  r.put(0, src);
  r.put(1024, acc);
  std::vector<std::uint8_t> sentinel(64, 0xee);
  r.put(2048, sentinel);

  QEntry q;  // identity scale: clamp only
  AggOp ag;
  ag.elems = 32;
  ag.src_areg = 0;
  ag.dst_areg = 1;
  ag.qidx = 0;
  ag.out_areg = 2;
  ag.out_row_elems = 15;
  ag.out_row_stride = 20;
  ag.src_row_elems = 16;
  r.pe.load_pcache({1});
  LdOp ld;
  ld.rows = 1;
  ld.cols = 1;
  AryProgram p;
  p.instrs = {ld, ag, fin()};
  p.qtable = {q};
  r.pe.load_program(p);
  r.pe.run({{{0, MemAddr{BankId::Compute0, 0}},
             {1, MemAddr{BankId::Compute0, 1024}},
             {2, MemAddr{BankId::Compute0, 2048}}},
            0});

  const auto out = r.get(2048, 64);
  for (unsigned row = 0; row < 2; ++row)
    for (unsigned col = 0; col < 20; ++col) {
      const std::uint8_t v = out[row * 20 + col];
      if (col < 15)
        CHECK(std::int8_t(v) == std::int8_t(finalize_lane(sv[row * 16 + col], q)));
      else if (row * 20 + col < 40)
        CHECK(v == 0xee);  // stride gap untouched
    }
}

// ---------------------------------------------------------------------------
// Validation

TEST_CASE("program validation enforces shapes, ordering, and indices") {
  auto expect = [](AryProgram p, Err code) {
    try {
      p.validate(16, 16);
      FAIL("expected validation error");
    } catch (const SimError& e) {
      CHECK(e.code() == code);
    }
  };
  LdOp ld;
  ld.rows = 4;
  ld.cols = 4;
  MmOp mm;
  mm.l = 4;

  expect({{}, {}}, Err::ConfigError);               // empty
  expect({{ld, mm}, {}}, Err::ConfigError);         // no FIN
  expect({{ld, fin(), mm}, {}}, Err::ConfigError);  // instr after FIN

  LdOp wide = ld;
  wide.cols = 17;
  expect({{wide, fin()}, {}}, Err::ShapeError);
  LdOp empty = ld;
  empty.rows = 0;
  expect({{empty, fin()}, {}}, Err::ShapeError);

  MmOp cont = mm;
  cont.cont = true;
  expect({{ld, cont, fin()}, {}}, Err::ConfigError);  // nothing kept the pipe full

  AggOp ag;
  ag.elems = 8;
  MmOp cont_after_agg = mm;
  cont_after_agg.cont = true;
  expect({{ld, mm, ag, cont_after_agg, fin()}, {}}, Err::ConfigError);  // stall drained it

  MmOp bad_areg = mm;
  bad_areg.src_areg = 16;
  expect({{ld, bad_areg, fin()}, {}}, Err::OutOfRange);
  MmOp bad_q = mm;
  bad_q.qidx = 0;  // empty qtable
  expect({{ld, bad_q, fin()}, {}}, Err::OutOfRange);

  // A continuation directly after MM or after a shadow preload is legal.
  LdOp shadow = ld;
  shadow.shadow = true;
  AryProgram ok;
  ok.instrs = {ld, mm, cont, shadow, cont, fin()};
  ok.validate(16, 16);
}

TEST_CASE("running an MM with no loaded tile is a config error") {
  Rig r(16);
  MmOp mm;
  mm.l = 2;
  AryProgram p;
  p.instrs = {mm, fin()};
  r.pe.load_program(p);
  try {
    r.pe.run({{{0, MemAddr{BankId::Compute0, 0}}}, 0});
    FAIL("expected ConfigError");
  } catch (const SimError& e) {
    CHECK(e.code() == Err::ConfigError);
  }
}

TEST_CASE("iCache capacity is enforced") {
  fabric::Fabric fab;
  AryConfig cfg;
  cfg.icache_instrs = 2;
  AryPe small(cfg, fab);
  LdOp ld;
  ld.rows = 1;
  ld.cols = 1;
  MmOp mm;
  mm.l = 1;
  AryProgram p;
  p.instrs = {ld, mm, fin()};
  try {
    small.load_program(p);
    FAIL("expected CapacityError");
  } catch (const SimError& e) {
    CHECK(e.code() == Err::CapacityError);
  }
}

// ---------------------------------------------------------------------------
// Assembly round-trip

TEST_CASE("emit -> parse -> emit is a fixed point for array programs") {
  AryProgram p;
  QEntry q;
  q.scale = quantize_multiplier(0.005);
  q.act = Act::Relu;
  p.qtable = {q};

  LdOp ld;
  ld.pcache_off = 1024;
  ld.rows = 12;
  ld.cols = 30;
  LdOp lf;
  lf.src = LdOp::Src::Fabric;
  lf.areg = 3;
  lf.rows = 8;
  lf.cols = 15;
  lf.row_stride = 64;
  lf.transpose = true;
  lf.shadow = true;
  MmOp mm;
  mm.l = 45;
  mm.src_areg = 1;
  mm.dst_areg = 2;
  mm.src_row_stride = 32;
  mm.dst_row_stride = 128;
  mm.rows_per_seg = 15;
  mm.src_seg_stride = 480;
  mm.dst_seg_stride = 2048;
  mm.qidx = 0;
  MmOp cont;
  cont.l = 12;
  cont.src_areg = 1;
  cont.dst_areg = 2;
  cont.cont = true;
  AggOp ag;
  ag.elems = 96;
  ag.src_areg = 4;
  ag.dst_areg = 5;
  AggOp agf = ag;
  agf.qidx = 0;
  agf.out_areg = 6;
  agf.out_row_elems = 15;
  agf.out_row_stride = 16;
  agf.rows_per_seg = 3;
  agf.out_seg_stride = 256;
  agf.src_row_elems = 16;

  p.instrs = {ld, mm, lf, cont, ag, agf, FinOp{}};
  p.validate(32, 16);

  const std::string text1 = asmtext::emit(p);
  const AryProgram back = asmtext::parse_arype(text1);
  back.validate(32, 16);
  const std::string text2 = asmtext::emit(back);
  CHECK(text1 == text2);
  REQUIRE(back.instrs.size() == p.instrs.size());
  const auto* bl = std::get_if<LdOp>(&back.instrs[2]);
  REQUIRE(bl != nullptr);
  CHECK(bl->src == LdOp::Src::Fabric);
  CHECK(bl->transpose);
  CHECK(bl->shadow);
  CHECK(bl->row_stride == 64);
  const auto* bm = std::get_if<MmOp>(&back.instrs[1]);
  REQUIRE(bm != nullptr);
  CHECK(bm->rows_per_seg == 15);
  CHECK(bm->src_seg_stride == 480);
  CHECK(bm->dst_seg_stride == 2048);
  CHECK(bm->qidx == 0);
  const auto* ba = std::get_if<AggOp>(&back.instrs[5]);
  REQUIRE(ba != nullptr);
  CHECK(ba->out_row_elems == 15);
  CHECK(ba->src_row_elems == 16);
  CHECK(back.qtable.size() == 1);
  CHECK(back.qtable[0].scale.mult == q.scale.mult);
}
