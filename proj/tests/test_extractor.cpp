// Flow feature extractor: micro-op catalog, direct-mapped table lifecycle,
// collision policy, packet mode, cycle model, and agreement with the
// straight-line golden accumulator model.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>

#include "ina/extractor.hpp"
#include "ina/fabric.hpp"
#include "ina/oracle.hpp"
#include "ina/traffic.hpp"

using namespace ina;
using namespace ina::extractor;
using traffic::Direction;
using traffic::FiveTuple;
using traffic::ParsedHeader;

namespace {

ParsedHeader header(const FiveTuple& t, std::uint64_t ns, std::uint32_t size,
                    std::uint8_t flags = 0) {
  ParsedHeader h;
  h.tuple = t;
  h.pkt_size = size;
  h.flags = flags;
  h.direction = t.is_canonical() ? Direction::Forward : Direction::Backward;
  h.arrival_ns = ns;
  h.payload_prefix.assign(16, std::uint8_t(size & 0xff));
  return h;
}

FiveTuple tuple_n(std::uint32_t n) {
  return FiveTuple{0x0a000000u + n, 0xc0000000u + n * 13, std::uint16_t(1000 + n),
                   std::uint16_t(80 + (n % 7)), std::uint8_t(n % 2 ? 6 : 17)};
}

/// A second tuple landing on the same table slot as `t` (for collision tests).
FiveTuple same_slot_tuple(const FiveTuple& t, std::uint32_t depth) {
  const std::uint32_t target = slot_index(hash_tuple(t), depth);
  for (std::uint32_t n = 1;; ++n) {
    const FiveTuple cand = tuple_n(500000 + n);
    if (!(cand.canonical() == t.canonical()) &&
        slot_index(hash_tuple(cand), depth) == target)
      return cand;
  }
}

HistoryRegister committed_word(fabric::Fabric& fab, std::uint32_t word) {
  fab.bank(fabric::BankId::Feature).commit_upto(UINT64_MAX);
  const Word16 w = fab.bank(fabric::BankId::Feature).committed()[word];
  HistoryRegister h;
  std::copy(w.begin(), w.end(), h.begin());
  return h;
}

}  // namespace

// ---------------------------------------------------------------------------
// Micro-op catalog

TEST_CASE("feature_program packs the per-packet id set into 6 bytes") {
  const FeatureProgram fp = feature_program({1, 3, 4, 28});
  CHECK(fp.bytes_used == 6);
  REQUIRE(fp.fields.size() == 4);
  CHECK(fp.fields[0].offset == 0);  // last size, 2 bytes
  CHECK(fp.fields[0].width == 2);
  CHECK(fp.fields[1].offset == 2);  // last interval, 2 bytes
  CHECK(fp.fields[2].offset == 4);  // direction, 1 byte
  CHECK(fp.fields[3].offset == 5);  // flags, 1 byte
  CHECK(fp.program.lanes.size() == 4);
}

TEST_CASE("shared accumulators deduplicate; means pull in the count lane") {
  const FeatureProgram fp = feature_program({6, 13, 36});
  // 6 (byte total) and 13 (mean size) share the sum; 13 and 36 share the count.
  CHECK(fp.program.lanes.size() == 2);
  CHECK(fp.bytes_used == 6);  // 4-byte sum + 2-byte count
  REQUIRE(fp.fields.size() == 3);
  CHECK(fp.fields[0].offset == fp.fields[1].offset);
  CHECK(fp.fields[1].count_offset == fp.fields[2].offset);
  CHECK(fp.fields[0].readout == Readout::Raw);
  CHECK(fp.fields[1].readout == Readout::MeanOverCount);
}

TEST_CASE("feature_program rejects overflow and unknown ids") {
  try {
    feature_program({1, 3, 6, 9, 11, 12, 19, 20});  // 24 accumulator bytes
    FAIL("expected CapacityExceeded");
  } catch (const SimError& e) {
    CHECK(e.code() == Err::CapacityExceeded);
  }
  try {
    feature_program({2});  // not in the lane catalog
    FAIL("expected UnsupportedFeature");
  } catch (const SimError& e) {
    CHECK(e.code() == Err::UnsupportedFeature);
  }
}

TEST_CASE("alu lanes: saturation, floors, identities, skip_first") {
  MetaRegister meta{};
  meta[kMetaPktSize] = 0xff;
  meta[kMetaPktSize + 1] = 0xff;  // size 0xffff
  meta[kMetaIntv] = 50;
  meta[kMetaOne] = 1;

  MicroOpProgram prog;
  prog.lanes.push_back({AluOp::Add, {OperandBank::History, 0}, {OperandBank::Meta, kMetaPktSize},
                        0, 2, false});  // 2-byte saturating sum of sizes
  prog.lanes.push_back({AluOp::Min, {OperandBank::History, 2}, {OperandBank::Meta, kMetaIntv},
                        2, 1, false});  // min interval byte
  prog.lanes.push_back({AluOp::Sub, {OperandBank::Meta, kMetaIntv}, {OperandBank::Meta, kMetaPktSize},
                        3, 1, false});  // 50 - 255 floors at 0
  prog.lanes.push_back({AluOp::Max, {OperandBank::History, 4}, {OperandBank::Meta, kMetaIntv},
                        4, 1, true});   // skip_first: identity on packet 1
  prog.validate();

  HistoryRegister h{};
  const HistoryRegister p1 = alu_cluster_step(prog, h, meta, true);
  CHECK(p1[0] == 0xff);  // 0 + 0xffff
  CHECK(p1[1] == 0xff);
  CHECK(p1[2] == 50);    // min(identity=0xff, 50)
  CHECK(p1[3] == 0);     // floored subtraction
  CHECK(p1[4] == 0);     // skip_first identity

  const HistoryRegister p2 = alu_cluster_step(prog, p1, meta, false);
  CHECK(p2[0] == 0xff);  // saturated at lane width
  CHECK(p2[1] == 0xff);
  CHECK(p2[2] == 50);
  CHECK(p2[4] == 50);    // max now sees the sample
}

TEST_CASE("micro-op program structural validation") {
  MicroOpProgram p;
  p.lanes.push_back({AluOp::Wr, {OperandBank::Meta, 0}, {}, 0, 2, false});
  p.lanes.push_back({AluOp::Wr, {OperandBank::Meta, 0}, {}, 1, 2, false});  // overlaps [0,2)
  try {
    p.validate();
    FAIL("expected Overlap");
  } catch (const SimError& e) {
    CHECK(e.code() == Err::Overlap);
  }
  MicroOpProgram q;
  q.lanes.push_back({AluOp::Wr, {OperandBank::Meta, 12}, {}, 0, 4, false});  // meta is 13 bytes
  try {
    q.validate();
    FAIL("expected OutOfRange");
  } catch (const SimError& e) {
    CHECK(e.code() == Err::OutOfRange);
  }
}

TEST_CASE("read_feature division rules") {
  FeatureField mean;
  mean.readout = Readout::MeanOverCount;
  mean.offset = 0;
  mean.width = 4;
  mean.count_offset = 4;
  mean.count_width = 2;
  HistoryRegister w{};
  w[0] = 7;  // sum 7
  w[4] = 2;  // count 2
  CHECK(read_feature(mean, w) == 4);  // 3.5 rounds half-up
  w[4] = 0;
  CHECK(read_feature(mean, w) == 0);  // no packets -> 0

  FeatureField gaps = mean;
  gaps.readout = Readout::MeanOverGaps;
  w[4] = 1;
  CHECK(read_feature(gaps, w) == 0);  // one packet has no gap
  w[4] = 3;
  CHECK(read_feature(gaps, w) == 4);  // 7 / 2 gaps -> 3.5 -> 4
}

// ---------------------------------------------------------------------------
// Flow table lifecycle

TEST_CASE("claim, accumulate, freeze, recycle; occupancy bookkeeping") {
  fabric::Fabric fab;
  ExtractorConfig cfg;
  cfg.table_depth = 256;
  cfg.threshold_n = 3;
  cfg.program = feature_program({6, 36}).program;
  Extractor ex(cfg, fab);

  const FiveTuple t = tuple_n(1);
  CHECK(ex.ingest(header(t, 1000, 100)).event == ExtractorEvent::NewFlow);
  CHECK(ex.stats().occupancy == 1);
  CHECK(ex.ingest(header(t.reversed(), 2000, 200)).event == ExtractorEvent::Hit);
  const IngestResult r3 = ex.ingest(header(t, 3000, 300));
  CHECK(r3.event == ExtractorEvent::Ready);
  CHECK(ex.slot(r3.slot).frozen);
  CHECK(ex.slot(r3.slot).pkt_count == 3);

  // Packets after the freeze only bump the count.
  const HistoryRegister frozen = committed_word(fab, r3.slot);
  CHECK(ex.ingest(header(t, 4000, 77)).event == ExtractorEvent::Hit);
  CHECK(ex.slot(r3.slot).pkt_count == 4);
  CHECK(committed_word(fab, r3.slot) == frozen);

  REQUIRE(ex.ready_size() == 1);
  const ReadyEntry e = ex.pop_ready();
  CHECK(e.slot == r3.slot);
  CHECK(e.tuple == t.canonical());
  CHECK(e.words == 1);
  ex.recycle(e.slot);
  CHECK(ex.stats().occupancy == 0);
  CHECK(ex.slot(e.slot).pkt_count == 0);  // slot free <=> count 0
  CHECK(ex.stats().new_flows - ex.stats().recycled == ex.stats().occupancy);

  // The freed slot is reusable immediately.
  CHECK(ex.ingest(header(t, 9000, 50)).event == ExtractorEvent::NewFlow);
  CHECK(ex.stats().occupancy == 1);
}

TEST_CASE("collision drops the newcomer and leaves the resident untouched") {
  fabric::Fabric fab;
  ExtractorConfig cfg;
  cfg.table_depth = 16;
  cfg.threshold_n = 4;
  cfg.program = feature_program({6, 36}).program;
  Extractor ex(cfg, fab);

  const FiveTuple a = tuple_n(42);
  const FiveTuple b = same_slot_tuple(a, ex.effective_depth());
  const IngestResult ra = ex.ingest(header(a, 1000, 111));
  const HistoryRegister before = committed_word(fab, ra.slot);

  const IngestResult rb = ex.ingest(header(b, 2000, 222));
  CHECK(rb.event == ExtractorEvent::Collision);
  CHECK(ex.stats().collisions == 1);
  CHECK(ex.slot(ra.slot).tuple_tag == a.canonical());
  CHECK(ex.slot(ra.slot).pkt_count == 1);
  CHECK(committed_word(fab, ra.slot) == before);
  CHECK(ex.stats().occupancy == 1);

  // The resident flow continues unharmed.
  CHECK(ex.ingest(header(a, 3000, 100)).event == ExtractorEvent::Hit);
  CHECK(ex.slot(ra.slot).pkt_count == 2);
}

TEST_CASE("sequential lifecycles leave no residue and reuse every slot") {
  fabric::Fabric fab;
  ExtractorConfig cfg;
  cfg.table_depth = 1024;
  cfg.threshold_n = 2;
  cfg.program = feature_program({1, 3, 4, 28}).program;
  Extractor ex(cfg, fab);

  std::uint64_t ns = 1000;
  for (std::uint32_t i = 0; i < 1024; ++i) {
    const FiveTuple t = tuple_n(i);
    ex.ingest(header(t, ns, 64 + i % 100));
    ns += 1000;
    const IngestResult r = ex.ingest(header(t, ns, 80));
    ns += 1000;
    REQUIRE(r.event == ExtractorEvent::Ready);
    const ReadyEntry e = ex.pop_ready();
    ex.recycle(e.slot);
  }
  CHECK(ex.stats().occupancy == 0);
  CHECK(ex.stats().new_flows == 1024);
  CHECK(ex.stats().recycled == 1024);
  for (std::uint32_t s = 0; s < ex.effective_depth(); ++s) CHECK(ex.slot(s).pkt_count == 0);
}

TEST_CASE("ready FIFO overflow and out-of-order recycle are errors") {
  fabric::Fabric fab;
  ExtractorConfig cfg;
  cfg.table_depth = 64;
  cfg.threshold_n = 1;
  cfg.ready_capacity = 2;
  cfg.program = feature_program({1}).program;
  Extractor ex(cfg, fab);

  ex.ingest(header(tuple_n(1), 1000, 64));
  ex.ingest(header(tuple_n(2), 2000, 64));
  try {
    ex.ingest(header(tuple_n(3), 3000, 64));
    FAIL("expected FifoFull");
  } catch (const SimError& e) {
    CHECK(e.code() == Err::FifoFull);
  }

  const ReadyEntry first = ex.pop_ready();
  const ReadyEntry second = ex.pop_ready();
  try {
    ex.recycle(second.slot);
    FAIL("expected OutOfOrderFin");
  } catch (const SimError& e) {
    CHECK(e.code() == Err::OutOfOrderFin);
  }
  CHECK_NOTHROW(ex.recycle(first.slot));
  CHECK_NOTHROW(ex.recycle(second.slot));
}

TEST_CASE("packet mode: rotating slots, immediate ready, busy-slot drops") {
  fabric::Fabric fab;
  ExtractorConfig cfg;
  cfg.table_depth = 8;
  cfg.threshold_n = 1;
  cfg.packet_mode = true;
  cfg.program = feature_program({1, 4}).program;
  Extractor ex(cfg, fab);
  REQUIRE(ex.effective_depth() == 8);

  for (std::uint32_t i = 0; i < 8; ++i) {
    const IngestResult r = ex.ingest(header(tuple_n(i), 1000 * (i + 1), 64 + i));
    CHECK(r.event == ExtractorEvent::Ready);
    CHECK(r.slot == i);
  }
  // Slots wrap and are still busy: arrivals are dropped, not queued.
  for (std::uint32_t i = 8; i < 11; ++i) {
    const IngestResult r = ex.ingest(header(tuple_n(i), 1000 * (i + 1), 64));
    CHECK(r.event == ExtractorEvent::Collision);
  }
  CHECK(ex.stats().frozen_drops == 3);
  CHECK(ex.ready_size() == 8);

  // Recycle one slot; the rotation has moved past it, so the next arrival
  // still lands on a busy slot (slot 3) and drops.
  ex.recycle(ex.pop_ready().slot);
  CHECK(ex.ingest(header(tuple_n(99), 50000, 64)).event == ExtractorEvent::Collision);
}

TEST_CASE("packet mode meta direction is the canonical-orientation bit") {
  fabric::Fabric fab;
  ExtractorConfig cfg;
  cfg.table_depth = 16;
  cfg.threshold_n = 1;
  cfg.packet_mode = true;
  const FeatureProgram fp = feature_program({4});
  cfg.program = fp.program;
  Extractor ex(cfg, fab);

  const FiveTuple fwd = tuple_n(7).canonical();
  const IngestResult r1 = ex.ingest(header(fwd, 1000, 64));
  const IngestResult r2 = ex.ingest(header(fwd.reversed(), 2000, 64));
  CHECK(read_feature(fp.fields[0], committed_word(fab, r1.slot)) == 0);
  CHECK(read_feature(fp.fields[0], committed_word(fab, r2.slot)) == 1);
}

TEST_CASE("capture geometry shrinks the effective table") {
  fabric::Fabric fab;
  ExtractorConfig cfg;
  cfg.table_depth = 8192;
  cfg.program = feature_program({1}).program;
  CHECK(Extractor(cfg, fab).effective_depth() == 8192);  // 1 word per flow

  ExtractorConfig iv = cfg;
  iv.capture = Capture::IntervalVector;
  iv.threshold_n = 20;  // 2 words per flow
  Extractor eiv(iv, fab);
  CHECK(eiv.words_per_flow() == 2);
  CHECK(eiv.effective_depth() == 4096);

  ExtractorConfig pr = cfg;
  pr.capture = Capture::PayloadRows;
  pr.threshold_n = 15;  // 15 words per flow; floor_pow2(8192/15) = 512
  Extractor epr(pr, fab);
  CHECK(epr.words_per_flow() == 15);
  CHECK(epr.effective_depth() == 512);
}

// ---------------------------------------------------------------------------
// Cycle model

TEST_CASE("hazard interval: same-slot back-to-back packets pay 4 cycles") {
  fabric::Fabric fab;
  ExtractorConfig cfg;
  cfg.table_depth = 256;
  cfg.threshold_n = 100;
  cfg.program = feature_program({6, 36}).program;
  Extractor ex(cfg, fab);

  const FiveTuple t = tuple_n(5);
  for (int i = 0; i < 20; ++i) ex.ingest(header(t, 10 * i, 64));
  // First packet bills 1 cycle, the 19 same-slot successors 4 each.
  CHECK(ex.stats().busy_cycles == 1 + 19 * 4);
  CHECK(ex.modeled_pkt_rate() == doctest::Approx(125e6 * 20 / 77.0));
  CHECK(ex.worst_case_pkt_rate() == doctest::Approx(31.25e6));
}

TEST_CASE("distinct-slot packets sustain one per cycle") {
  fabric::Fabric fab;
  ExtractorConfig cfg;
  cfg.table_depth = 8192;
  cfg.threshold_n = 100;
  cfg.program = feature_program({6, 36}).program;
  Extractor ex(cfg, fab);

  std::uint32_t n = 0;
  std::uint32_t made = 0;
  std::uint32_t prev = UINT32_MAX;
  while (made < 1000) {
    const FiveTuple t = tuple_n(n++);
    const std::uint32_t s = slot_index(hash_tuple(t), ex.effective_depth());
    if (s == prev) continue;  // avoid accidental same-slot pairs
    prev = s;
    ex.ingest(header(t, made * 10, 64));
    ++made;
  }
  CHECK(ex.stats().busy_cycles == 1000);
  CHECK(ex.modeled_pkt_rate() == doctest::Approx(125e6));
}

// ---------------------------------------------------------------------------
// Golden-model agreement

namespace {

void golden_agreement(Capture capture, std::uint32_t threshold, std::uint8_t shift) {
  fabric::Fabric fab;
  ExtractorConfig cfg;
  cfg.table_depth = 512;  // small enough to force collisions
  cfg.threshold_n = threshold;
  cfg.capture = capture;
  cfg.interval_shift = shift;
  if (capture == Capture::AluWord)
    cfg.program = feature_program({13, 21, 11, 12}).program;
  Extractor ex(cfg, fab);
  oracle::FeatureGolden gold(cfg, ex.effective_depth(), ex.words_per_flow());

  traffic::SyntheticFlowSpec spec;
  spec.flow_count = 700;
  spec.packets_per_flow = threshold + 2;
  spec.intv_min_us = 1;
  spec.intv_max_us = 900;
  spec.seed = 20240803 + threshold;
  const auto trace = traffic::generate_trace(spec);

  std::uint64_t compared = 0;
  for (const traffic::RawPacket& p : trace) {
    const ParsedHeader h = traffic::parse_packet(p);
    ex.ingest(h);
    gold.ingest(h);
    REQUIRE(ex.ready_size() == gold.ready_size());
    while (ex.ready_size() > 0) {
      const ReadyEntry e = ex.pop_ready();
      const oracle::GoldenReady g = gold.pop_ready();
      REQUIRE(e.slot == g.slot);
      REQUIRE(e.tuple == g.tuple);
      REQUIRE(e.words == g.words.size());
      fab.bank(fabric::BankId::Feature).commit_upto(UINT64_MAX);
      for (std::uint32_t w = 0; w < e.words; ++w) {
        const Word16 got = fab.bank(fabric::BankId::Feature).committed()[e.base_word + w];
        REQUIRE(got == g.words[w]);
        ++compared;
      }
      ex.recycle(e.slot);
      gold.recycle();
    }
  }
  CHECK(ex.stats().collisions > 0);  // the run exercised the drop path
  CHECK(gold.dropped() == ex.stats().collisions);
  CHECK(compared > 100);
}

}  // namespace

TEST_CASE("engine == golden model: accumulated feature words") {
  golden_agreement(Capture::AluWord, 6, 0);
}

TEST_CASE("engine == golden model: interval vectors with shift") {
  golden_agreement(Capture::IntervalVector, 20, 3);
}

TEST_CASE("engine == golden model: centered payload rows") {
  golden_agreement(Capture::PayloadRows, 5, 0);
}
