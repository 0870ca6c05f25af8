#include "ina/extractor.hpp"

#include <algorithm>
#include <cstring>
#include <string>

#include "ina/numeric.hpp"

namespace ina::extractor {

namespace {

std::uint64_t rd_le(const std::uint8_t* p, unsigned width) {
  std::uint64_t v = 0;
  for (unsigned i = 0; i < width; ++i) v |= std::uint64_t(p[i]) << (8 * i);
  return v;
}

void wr_le(std::uint8_t* p, unsigned width, std::uint64_t v) {
  for (unsigned i = 0; i < width; ++i) p[i] = std::uint8_t(v >> (8 * i));
}

std::uint64_t lane_mask(unsigned width) {
  return width >= 8 ? ~0ull : ((1ull << (8 * width)) - 1);
}

bool is_pow2(std::uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }

std::uint32_t floor_pow2(std::uint32_t v) {
  std::uint32_t p = 1;
  while (p * 2 <= v) p *= 2;
  return v == 0 ? 0 : p;
}

}  // namespace

// ---------------------------------------------------------------------------
// Micro-op program

void MicroOpProgram::validate() const {
  if (lanes.empty()) fail(Err::UnsupportedFeature, "micro-op program has no lanes");
  if (lanes.size() > kMaxLanes)
    fail(Err::CapacityExceeded, "micro-op program exceeds " + std::to_string(kMaxLanes) + " lanes");
  std::uint32_t dst_mask = 0;
  for (const MicroOp& l : lanes) {
    if (l.width < 1 || l.width > 4) fail(Err::OutOfRange, "lane width must be 1..4");
    if (unsigned(l.dst) + l.width > kHistoryBytes)
      fail(Err::OutOfRange, "lane destination beyond feature word");
    auto check_src = [&](const Operand& o) {
      const unsigned limit = o.bank == OperandBank::Meta ? kMetaBytes : kHistoryBytes;
      if (unsigned(o.byte) + l.width > limit) fail(Err::OutOfRange, "lane source beyond register");
    };
    check_src(l.src_a);
    if (l.op != AluOp::Wr) check_src(l.src_b);
    std::uint32_t m = ((1u << l.width) - 1u) << l.dst;
    if (dst_mask & m) fail(Err::Overlap, "lane destinations overlap");
    dst_mask |= m;
  }
}

HistoryRegister alu_cluster_step(const MicroOpProgram& prog, const HistoryRegister& hist,
                                 const MetaRegister& meta, bool first_packet) {
  HistoryRegister out = hist;
  for (const MicroOp& l : prog.lanes) {
    const std::uint64_t mask = lane_mask(l.width);
    const std::uint64_t identity = l.op == AluOp::Min ? mask : 0;
    auto fetch = [&](const Operand& o) -> std::uint64_t {
      if (o.bank == OperandBank::History) {
        if (first_packet) return identity;
        return rd_le(hist.data() + o.byte, l.width);
      }
      return rd_le(meta.data() + o.byte, l.width);
    };
    std::uint64_t r;
    if (first_packet && l.skip_first) {
      r = identity;
    } else {
      const std::uint64_t a = fetch(l.src_a);
      switch (l.op) {
        case AluOp::Wr:
          r = a;
          break;
        case AluOp::Add: {
          const std::uint64_t b = fetch(l.src_b);
          r = a + b;
          if (r > mask) r = mask;  // saturate at lane width
          break;
        }
        case AluOp::Sub: {
          const std::uint64_t b = fetch(l.src_b);
          r = a >= b ? a - b : 0;
          break;
        }
        case AluOp::Max:
          r = std::max(fetch(l.src_a), fetch(l.src_b));
          break;
        case AluOp::Min:
          r = std::min(fetch(l.src_a), fetch(l.src_b));
          break;
        default:
          r = 0;
          break;
      }
    }
    wr_le(out.data() + l.dst, l.width, r & mask);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Hash

std::uint64_t hash_tuple(const traffic::FiveTuple& t) {
  const auto bytes = traffic::tuple_bytes(t.canonical());
  std::uint64_t lo = 0, hi = 0;
  std::memcpy(&lo, bytes.data(), 8);
  std::memcpy(&hi, bytes.data() + 8, bytes.size() - 8);
  std::uint64_t h = 0x9e3779b97f4a7c15ull;
  h = mix64(h ^ lo);
  h = mix64(h ^ hi);
  return h;
}

std::uint32_t slot_index(std::uint64_t hash, std::uint32_t table_depth) {
  if (!is_pow2(table_depth)) fail(Err::ConfigError, "table depth must be a power of two");
  return std::uint32_t(hash & (table_depth - 1));
}

// ---------------------------------------------------------------------------
// Feature catalog

namespace {

// Internal accumulator kinds; several features can share one accumulator.
enum class Acc : std::uint8_t {
  LastSize,
  LastIntv,
  Dir,
  Flag,
  SumSize,
  SumIntv,
  MaxSize,
  MinSize,
  MaxIntv,
  MinIntv,
  Count,
};

struct AccSpec {
  AluOp op;
  Operand src_a;
  Operand src_b;
  std::uint8_t width;
  bool skip_first;
};

AccSpec acc_spec(Acc a) {
  const Operand meta_size{OperandBank::Meta, kMetaPktSize};
  const Operand meta_intv{OperandBank::Meta, kMetaIntv};
  switch (a) {
    case Acc::LastSize:
      return {AluOp::Wr, meta_size, {}, 2, false};
    case Acc::LastIntv:
      return {AluOp::Wr, meta_intv, {}, 2, false};
    case Acc::Dir:
      return {AluOp::Wr, {OperandBank::Meta, kMetaDir}, {}, 1, false};
    case Acc::Flag:
      return {AluOp::Wr, {OperandBank::Meta, kMetaFlag}, {}, 1, false};
    case Acc::SumSize:
      return {AluOp::Add, {OperandBank::History, 0}, meta_size, 4, false};
    case Acc::SumIntv:
      return {AluOp::Add, {OperandBank::History, 0}, meta_intv, 4, false};
    case Acc::MaxSize:
      return {AluOp::Max, {OperandBank::History, 0}, meta_size, 2, false};
    case Acc::MinSize:
      return {AluOp::Min, {OperandBank::History, 0}, meta_size, 2, false};
    case Acc::MaxIntv:
      return {AluOp::Max, {OperandBank::History, 0}, meta_intv, 4, true};
    case Acc::MinIntv:
      return {AluOp::Min, {OperandBank::History, 0}, meta_intv, 4, true};
    case Acc::Count:
      return {AluOp::Add, {OperandBank::History, 0}, {OperandBank::Meta, kMetaOne}, 2, false};
  }
  fail(Err::UnsupportedFeature, "unknown accumulator");
}

struct FeatureSpec {
  Acc main;
  Readout readout;
  bool needs_count;
};

FeatureSpec feature_spec(int id) {
  switch (id) {
    case 1:
      return {Acc::LastSize, Readout::Raw, false};
    case 3:
      return {Acc::LastIntv, Readout::Raw, false};
    case 4:
      return {Acc::Dir, Readout::Raw, false};
    case 6:
      return {Acc::SumSize, Readout::Raw, false};
    case 9:
      return {Acc::SumIntv, Readout::Raw, false};
    case 11:
      return {Acc::MaxSize, Readout::Raw, false};
    case 12:
      return {Acc::MinSize, Readout::Raw, false};
    case 13:
      return {Acc::SumSize, Readout::MeanOverCount, true};
    case 19:
      return {Acc::MaxIntv, Readout::Raw, false};
    case 20:
      return {Acc::MinIntv, Readout::Raw, false};
    case 21:
      return {Acc::SumIntv, Readout::MeanOverGaps, true};
    case 28:
      return {Acc::Flag, Readout::Raw, false};
    case 36:
      return {Acc::Count, Readout::Raw, false};
    default:
      fail(Err::UnsupportedFeature, "feature id " + std::to_string(id) +
                                        " is not computable by the lane catalog");
  }
}

}  // namespace

FeatureProgram feature_program(const std::vector<int>& feature_ids) {
  if (feature_ids.empty()) fail(Err::UnsupportedFeature, "empty feature list");
  FeatureProgram fp;
  std::vector<std::pair<Acc, std::uint8_t>> placed;  // acc -> offset
  std::uint8_t cursor = 0;

  auto place = [&](Acc a) -> std::uint8_t {
    for (const auto& [acc, off] : placed)
      if (acc == a) return off;
    const AccSpec s = acc_spec(a);
    if (cursor + s.width > kHistoryBytes)
      fail(Err::CapacityExceeded, "feature set needs more than 16 accumulator bytes");
    const std::uint8_t off = cursor;
    cursor = std::uint8_t(cursor + s.width);
    MicroOp l;
    l.op = s.op;
    l.src_a = s.src_a;
    l.src_b = s.src_b;
    l.dst = off;
    l.width = s.width;
    l.skip_first = s.skip_first;
    if (l.src_a.bank == OperandBank::History) l.src_a.byte = off;
    fp.program.lanes.push_back(l);
    placed.emplace_back(a, off);
    return off;
  };

  for (int id : feature_ids) {
    const FeatureSpec spec = feature_spec(id);
    FeatureField f;
    f.id = id;
    f.readout = spec.readout;
    f.offset = place(spec.main);
    f.width = acc_spec(spec.main).width;
    if (spec.needs_count) {
      f.count_offset = place(Acc::Count);
      f.count_width = acc_spec(Acc::Count).width;
    }
    fp.fields.push_back(f);
  }
  fp.bytes_used = cursor;
  fp.program.validate();
  return fp;
}

std::int64_t read_feature(const FeatureField& f, const HistoryRegister& word) {
  const std::int64_t v = std::int64_t(rd_le(word.data() + f.offset, f.width));
  if (f.readout == Readout::Raw) return v;
  const std::int64_t n = std::int64_t(rd_le(word.data() + f.count_offset, f.count_width));
  if (f.readout == Readout::MeanOverCount) {
    return n == 0 ? 0 : round_half_up_div(v, n);
  }
  // MeanOverGaps: first packet contributes no interval sample.
  return n < 2 ? 0 : round_half_up_div(v, n - 1);
}

// ---------------------------------------------------------------------------
// Flow tracker

Extractor::Extractor(const ExtractorConfig& cfg, fabric::Fabric& fab) : cfg_(cfg), fab_(fab) {
  if (!is_pow2(cfg_.table_depth)) fail(Err::ConfigError, "table depth must be a power of two");
  if (cfg_.threshold_n == 0) fail(Err::ConfigError, "freeze threshold must be >= 1");
  if (cfg_.clock_hz == 0) fail(Err::ConfigError, "extractor clock must be nonzero");
  period_ps_ = ps_per_cycle(cfg_.clock_hz);

  switch (cfg_.capture) {
    case Capture::AluWord:
      cfg_.program.validate();
      words_per_flow_ = 1;
      break;
    case Capture::IntervalVector:
      words_per_flow_ = (cfg_.threshold_n + 15) / 16;
      break;
    case Capture::PayloadRows:
      words_per_flow_ = cfg_.threshold_n;
      break;
  }
  const std::uint32_t feat_depth = fab_.bank(fabric::BankId::Feature).depth();
  std::uint32_t fit = feat_depth / words_per_flow_;
  depth_ = std::min(cfg_.table_depth, floor_pow2(fit));
  if (depth_ == 0) fail(Err::ConfigError, "per-flow capture region exceeds feature memory");
  slots_.resize(depth_);
  if (cfg_.ready_capacity == 0) cfg_.ready_capacity = depth_;
}

MetaRegister Extractor::build_meta(const traffic::ParsedHeader& h, const FlowSlot& s,
                                   bool first_packet, std::uint64_t hash) const {
  MetaRegister m{};
  wr_le(m.data() + kMetaPktSize, 4, h.pkt_size);
  m[kMetaFlag] = h.flags;
  m[kMetaDir] = (!first_packet && h.direction != s.orientation) ? 1 : 0;
  m[kMetaDigest] = std::uint8_t(hash & 0xff);
  std::uint64_t intv_us = 0;
  if (!first_packet) {
    const std::uint64_t dt_ns = h.arrival_ns >= s.last_ts_ns ? h.arrival_ns - s.last_ts_ns : 0;
    intv_us = std::min<std::uint64_t>(dt_ns / 1000, 0xffffffffull);
  }
  wr_le(m.data() + kMetaIntv, 4, intv_us);
  m[kMetaOne] = 1;
  m[kMetaZero] = 0;
  return m;
}

void Extractor::write_capture(std::uint32_t slot, std::uint32_t pkt_idx,
                              const traffic::ParsedHeader& h, std::uint32_t intv_us,
                              std::uint64_t t_ps) {
  if (pkt_idx >= cfg_.threshold_n) return;
  const std::uint32_t base = slot * words_per_flow_;
  if (cfg_.capture == Capture::IntervalVector) {
    const std::uint32_t shifted = intv_us >> cfg_.interval_shift;
    const std::uint8_t v = std::uint8_t(std::min<std::uint32_t>(shifted, 127));
    fab_.write_bytes({fabric::BankId::Feature, base * fabric::kWordBytes + pkt_idx}, &v, 1, 0,
                     t_ps, period_ps_);
  } else {  // PayloadRows: payload bytes centered to int8 (x - 128)
    Word16 row;
    for (std::size_t i = 0; i < row.size(); ++i)
      row[i] = std::uint8_t(h.payload_prefix[i] ^ 0x80);
    fab_.bank(fabric::BankId::Feature).write(base + pkt_idx, row, 0, t_ps);
  }
}

IngestResult Extractor::ingest(const traffic::ParsedHeader& h) {
  const std::uint64_t arrival_ps = h.arrival_ns * 1000ull;
  const std::uint64_t arrival_cycle = (arrival_ps + period_ps_ - 1) / period_ps_;

  std::uint64_t hash = 0;
  std::uint32_t slot = 0;
  traffic::FiveTuple canon = h.tuple.canonical();
  if (cfg_.packet_mode) {
    slot = std::uint32_t(pkt_seq_++ & (depth_ - 1));
    hash = hash_tuple(h.tuple);
  } else {
    hash = hash_tuple(h.tuple);
    slot = slot_index(hash, depth_);
  }

  const std::uint64_t ii = (have_prev_ && slot == prev_slot_) ? kHazardII : 1;
  const std::uint64_t issue =
      have_prev_ ? std::max(arrival_cycle, prev_issue_cycle_ + ii) : arrival_cycle;
  stats_.packets++;
  stats_.busy_cycles += ii;
  prev_issue_cycle_ = issue;
  prev_slot_ = slot;
  have_prev_ = true;
  next_issue_cycle_ = issue + 1;

  const std::uint64_t read_ps = (issue + 1) * period_ps_;
  const std::uint64_t write_ps = (issue + 3) * period_ps_;
  const std::uint64_t done_ps = (issue + kPipelineDepth) * period_ps_;

  IngestResult res;
  res.slot = slot;
  res.done_ps = done_ps;

  FlowSlot& s = slots_[slot];

  auto push_ready = [&](const FlowSlot& fs) {
    if (ready_.size() >= cfg_.ready_capacity)
      fail(Err::FifoFull, "ready FIFO overflow at slot " + std::to_string(slot));
    ReadyEntry e;
    e.slot = slot;
    e.tuple = fs.tuple_tag;
    e.base_word = slot * words_per_flow_;
    e.words = words_per_flow_;
    e.ready_ps = done_ps;
    e.last_arrival_ns = h.arrival_ns;
    ready_.push_back(e);
    in_flight_.push_back(slot);
    stats_.ready++;
  };

  if (cfg_.packet_mode) {
    // Rotating slots: every packet becomes an immediately-ready single-packet
    // record. Direction carries the canonical-orientation bit itself.
    if (s.pkt_count != 0) {
      stats_.frozen_drops++;
      res.event = ExtractorEvent::Collision;
      return res;
    }
    s.pkt_count = 1;
    s.last_ts_ns = h.arrival_ns;
    s.orientation = traffic::Direction::Forward;
    s.frozen = true;
    s.tuple_tag = canon;
    stats_.new_flows++;
    stats_.occupancy++;
    stats_.occupancy_peak = std::max(stats_.occupancy_peak, stats_.occupancy);
    MetaRegister meta = build_meta(h, s, true, hash);
    meta[kMetaDir] = h.direction == traffic::Direction::Forward ? 0 : 1;
    if (cfg_.capture == Capture::AluWord) {
      HistoryRegister hist{};
      const HistoryRegister out = alu_cluster_step(cfg_.program, hist, meta, true);
      fab_.bank(fabric::BankId::Feature).write(slot * words_per_flow_, out, 0, write_ps);
    } else {
      write_capture(slot, 0, h, 0, write_ps);
    }
    push_ready(s);
    res.event = ExtractorEvent::Ready;
    return res;
  }

  if (s.pkt_count == 0) {
    // Claim a free slot.
    s.pkt_count = 1;
    s.last_ts_ns = h.arrival_ns;
    s.orientation = h.direction;
    s.frozen = false;
    s.tuple_tag = canon;
    stats_.new_flows++;
    stats_.occupancy++;
    stats_.occupancy_peak = std::max(stats_.occupancy_peak, stats_.occupancy);
    const MetaRegister meta = build_meta(h, s, true, hash);
    if (cfg_.capture == Capture::AluWord) {
      HistoryRegister hist{};
      const HistoryRegister out = alu_cluster_step(cfg_.program, hist, meta, true);
      fab_.bank(fabric::BankId::Feature).write(slot, out, 0, write_ps);
    } else {
      write_capture(slot, 0, h, 0, write_ps);
    }
    if (cfg_.threshold_n == 1) {
      s.frozen = true;
      push_ready(s);
      res.event = ExtractorEvent::Ready;
    } else {
      res.event = ExtractorEvent::NewFlow;
    }
    return res;
  }

  if (!(s.tuple_tag == canon)) {
    // Direct-mapped collision: the arriving packet is dropped and counted;
    // the resident flow is untouched.
    stats_.collisions++;
    res.event = ExtractorEvent::Collision;
    return res;
  }

  if (s.frozen) {
    // Accumulation is frozen once the threshold is reached; later packets of
    // the flow are counted but leave the captured state intact.
    s.pkt_count++;
    stats_.hits++;
    res.event = ExtractorEvent::Hit;
    return res;
  }

  const MetaRegister meta = build_meta(h, s, false, hash);
  const std::uint32_t intv_us = std::uint32_t(rd_le(meta.data() + kMetaIntv, 4));
  if (cfg_.capture == Capture::AluWord) {
    const Word16 cur = fab_.bank(fabric::BankId::Feature).read(slot, 0, read_ps);
    HistoryRegister hist;
    std::copy(cur.begin(), cur.end(), hist.begin());
    const HistoryRegister out = alu_cluster_step(cfg_.program, hist, meta, false);
    fab_.bank(fabric::BankId::Feature).write(slot, out, 0, write_ps);
  } else {
    write_capture(slot, s.pkt_count, h, intv_us, write_ps);
  }
  s.pkt_count++;
  s.last_ts_ns = h.arrival_ns;
  stats_.hits++;
  if (s.pkt_count == cfg_.threshold_n) {
    s.frozen = true;
    push_ready(s);
    res.event = ExtractorEvent::Ready;
  } else {
    res.event = ExtractorEvent::Hit;
  }
  return res;
}

ReadyEntry Extractor::pop_ready() {
  if (ready_.empty()) fail(Err::OutOfRange, "pop on empty ready FIFO");
  ReadyEntry e = ready_.front();
  ready_.pop_front();
  return e;
}

void Extractor::recycle(std::uint32_t slot) {
  if (in_flight_.empty() || in_flight_.front() != slot)
    fail(Err::OutOfOrderFin,
         "recycle of slot " + std::to_string(slot) + " does not match the in-flight head");
  in_flight_.pop_front();
  FlowSlot& s = slots_[slot];
  s.pkt_count = 0;
  s.frozen = false;
  stats_.recycled++;
  if (stats_.occupancy > 0) stats_.occupancy--;
}

const FlowSlot& Extractor::slot(std::uint32_t i) const {
  if (i >= slots_.size()) fail(Err::BadIndex, "slot index out of range");
  return slots_[i];
}

double Extractor::modeled_pkt_rate() const {
  if (stats_.busy_cycles == 0) return 0.0;
  return double(cfg_.clock_hz) * double(stats_.packets) / double(stats_.busy_cycles);
}

double Extractor::worst_case_pkt_rate() const {
  return double(cfg_.clock_hz) / double(kHazardII);
}

}  // namespace ina::extractor
