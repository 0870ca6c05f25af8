#include "ina/arype.hpp"

#include <algorithm>
#include <cstring>
#include <string>

namespace ina::arype {

namespace {
// This engine owns port 1 of every bank it touches (the vector engine and the
// extractor sit on port 0 of their respective banks).
constexpr unsigned kPort = 1;
// Sub-cycle phase for stores: reads occupy picosecond slots [t, t+words) at a
// cycle boundary t, writes [t+kWritePhase, ...), so a row retiring 2k-1 cycles
// into the pipeline never collides with the row being fed the same cycle.
constexpr std::uint64_t kWritePhase = 2000;
// Shadow tile preloads use a third phase so they never collide with stream
// reads or retiring rows of the MM they overlap.
constexpr std::uint64_t kShadowPhase = 3000;
}  // namespace

double mm_utilization(unsigned a, unsigned b, std::uint64_t l, unsigned k) {
  const double active = double(a) * double(std::min<unsigned>(b, k)) * double(l);
  return active / (double(k) * double(k) * double(mm_cost(l, k)));
}

double mm_steady_occupancy(unsigned a, unsigned b, unsigned k) {
  return double(a) * double(std::min<unsigned>(b, k)) / (double(k) * double(k));
}

void AryProgram::validate(unsigned k, unsigned adrf) const {
  if (instrs.empty()) fail(Err::ConfigError, "empty program");
  bool saw_fin = false;
  auto check_q = [&](std::uint8_t qidx) {
    if (qidx != kNoQ && qidx >= qtable.size())
      fail(Err::OutOfRange, "requant table index out of range");
  };
  auto check_areg = [&](std::uint8_t r) {
    if (r >= adrf) fail(Err::OutOfRange, "address register index out of range");
  };
  bool mm_seen = false;
  bool prev_streamable = false;  // previous instr keeps the pipeline full
  for (const AryInstr& in : instrs) {
    if (saw_fin) fail(Err::ConfigError, "instruction after FIN");
    if (const auto* ld = std::get_if<LdOp>(&in)) {
      if (ld->rows == 0 || ld->cols == 0) fail(Err::ShapeError, "empty weight tile");
      if (ld->rows > k || ld->cols > k)
        fail(Err::ShapeError, "weight tile exceeds the " + std::to_string(k) + "-wide array");
      if (ld->src == LdOp::Src::Fabric) check_areg(ld->areg);
      prev_streamable = ld->shadow && mm_seen;
    } else if (const auto* mm = std::get_if<MmOp>(&in)) {
      if (mm->l == 0) fail(Err::ShapeError, "MM with zero stream length");
      if (mm->cont && !prev_streamable)
        fail(Err::ConfigError,
             "continuation MM must follow an MM or a shadow-preloaded tile");
      check_areg(mm->src_areg);
      check_areg(mm->dst_areg);
      check_q(mm->qidx);
      mm_seen = true;
      prev_streamable = true;
    } else if (const auto* ag = std::get_if<AggOp>(&in)) {
      if (ag->elems == 0) fail(Err::ShapeError, "aggregation with zero elements");
      check_areg(ag->src_areg);
      check_areg(ag->dst_areg);
      check_q(ag->qidx);
      if (ag->qidx != kNoQ) check_areg(ag->out_areg);
      prev_streamable = false;  // the stall drains the pipeline
    } else {
      saw_fin = true;
    }
  }
  if (!saw_fin) fail(Err::ConfigError, "program does not end with FIN");
}

AryPe::AryPe(const AryConfig& cfg, fabric::Fabric& fab) : cfg_(cfg), fab_(fab) {
  if (cfg_.k == 0) fail(Err::ConfigError, "array dimension must be nonzero");
  period_ps_ = ps_per_cycle(cfg_.clock_hz);
  adrf_.resize(cfg_.adrf);
  tile_.assign(std::size_t(cfg_.k) * cfg_.k, 0);
}

void AryPe::load_pcache(const std::vector<std::int8_t>& image) {
  if (image.size() > cfg_.pcache_bytes)
    fail(Err::CapacityExceeded, "parameter image exceeds pCache");
  pcache_ = image;
}

void AryPe::load_program(const AryProgram& prog) {
  if (prog.instrs.size() > cfg_.icache_instrs)
    fail(Err::CapacityError, "program exceeds iCache capacity");
  prog.validate(cfg_.k, cfg_.adrf);
  prog_ = prog;
  prog_loaded_ = true;
}

fabric::MemAddr AryPe::areg(unsigned i) const {
  if (i >= adrf_.size()) fail(Err::BadIndex, "adRf index out of range");
  return adrf_[i];
}

std::int8_t AryPe::weight(unsigned row, unsigned col) const {
  if (row >= cfg_.k || col >= cfg_.k) fail(Err::BadIndex, "weight latch index out of range");
  return tile_[std::size_t(row) * cfg_.k + col];
}

void AryPe::exec_ld(const LdOp& op, std::uint64_t cycle, std::uint64_t start_ps) {
  std::fill(tile_.begin(), tile_.end(), std::int8_t(0));
  if (op.src == LdOp::Src::PCache) {
    const std::size_t need = std::size_t(op.rows) * op.cols;
    if (op.pcache_off + need > pcache_.size())
      fail(Err::OutOfRange, "weight record beyond pCache image");
    for (unsigned i = 0; i < op.rows; ++i)
      for (unsigned j = 0; j < op.cols; ++j)
        tile_[std::size_t(i) * cfg_.k + j] = pcache_[op.pcache_off + std::size_t(i) * op.cols + j];
  } else {
    // Fabric tile. Without transpose the source is (rows x cols) row-major;
    // with transpose it is (cols x rows) and we latch its transpose, which is
    // how runtime activations (e.g. K in Q*K^T) become a weight tile.
    const fabric::MemAddr base = adrf_[op.areg];
    const unsigned src_rows = op.transpose ? op.cols : op.rows;
    const unsigned src_cols = op.transpose ? op.rows : op.cols;
    const std::uint64_t phase = op.shadow ? kShadowPhase : 0;
    std::vector<std::uint8_t> row(src_cols);
    for (unsigned i = 0; i < src_rows; ++i) {
      fabric::MemAddr a{base.bank, base.byte + i * op.row_stride};
      fab_.read_bytes(a, row.data(), row.size(), kPort,
                      start_ps + cycle * period_ps_ + phase + i * 8, 1);
      stats_.mem_bytes += row.size();
      for (unsigned j = 0; j < src_cols; ++j) {
        const std::int8_t v = std::int8_t(row[j]);
        if (op.transpose)
          tile_[std::size_t(j) * cfg_.k + i] = v;
        else
          tile_[std::size_t(i) * cfg_.k + j] = v;
      }
    }
  }
  tile_rows_ = op.rows;
  tile_cols_ = op.cols;
}

void AryPe::exec_mm(const MmOp& op, std::uint64_t cycle, std::uint64_t start_ps) {
  if (tile_rows_ == 0) fail(Err::ConfigError, "MM with no loaded weight tile");
  const unsigned a = tile_rows_;
  const unsigned b = tile_cols_;
  const fabric::MemAddr src_base = adrf_[op.src_areg];
  const fabric::MemAddr dst_base = adrf_[op.dst_areg];
  const std::uint32_t rps = op.rows_per_seg == 0 ? op.l : op.rows_per_seg;
  const std::uint32_t out_bytes = op.qidx != kNoQ ? b : b * 4;
  const std::uint32_t dst_stride = op.dst_row_stride == 0 ? out_bytes : op.dst_row_stride;

  std::vector<std::uint8_t> in(a);
  std::vector<std::uint8_t> out(out_bytes);
  for (std::uint32_t r = 0; r < op.l; ++r) {
    const std::uint32_t seg = r / rps;
    const std::uint32_t rs = r % rps;
    fabric::MemAddr src{src_base.bank,
                        src_base.byte + seg * op.src_seg_stride + rs * op.src_row_stride};
    // Row r enters the array at relative cycle r and retires 2k-1 later.
    fab_.read_bytes(src, in.data(), in.size(), kPort, start_ps + (cycle + r) * period_ps_, 1);
    for (unsigned j = 0; j < b; ++j) {
      std::int64_t acc = 0;
      for (unsigned i = 0; i < a; ++i)
        acc += std::int32_t(std::int8_t(in[i])) * tile_[std::size_t(i) * cfg_.k + j];
      if (op.qidx != kNoQ) {
        out[j] = std::uint8_t(std::int8_t(finalize_lane(acc, prog_.qtable[op.qidx])));
      } else {
        const std::uint32_t u = std::uint32_t(sat_i32(acc));
        std::memcpy(out.data() + j * 4, &u, 4);
      }
    }
    fabric::MemAddr dst{dst_base.bank,
                        dst_base.byte + seg * op.dst_seg_stride + rs * dst_stride};
    fab_.write_bytes(dst, out.data(), out.size(), kPort,
                     start_ps + (cycle + r + 2ull * cfg_.k - 1) * period_ps_ + kWritePhase, 1);
    stats_.mem_bytes += in.size() + out.size();
  }
  // A continuation MM only bills l cycles, but its last rows retire 2k-1
  // cycles into the pipeline; the program may not end before they land.
  horizon_ = std::max<std::uint64_t>(horizon_, cycle + op.l - 1 + 2ull * cfg_.k - 1 + 1);
  stats_.stream_rows += op.l;
  stats_.active_macs += std::uint64_t(a) * b * op.l;
}

void AryPe::exec_agg(const AggOp& op, std::uint64_t cycle, std::uint64_t start_ps) {
  const fabric::MemAddr src_base = adrf_[op.src_areg];
  const fabric::MemAddr acc_base = adrf_[op.dst_areg];
  const std::uint32_t octets = (op.elems + 7) / 8;
  std::uint8_t sbuf[32], abuf[32];
  for (std::uint32_t o = 0; o < octets; ++o) {
    const std::uint32_t n = std::min<std::uint32_t>(8, op.elems - o * 8);
    const std::uint64_t t = start_ps + (cycle + 6ull * o) * period_ps_;
    fab_.read_bytes({src_base.bank, src_base.byte + o * 32}, sbuf, n * 4, kPort, t, 1);
    fab_.read_bytes({acc_base.bank, acc_base.byte + o * 32}, abuf, n * 4, kPort, t + 2 * period_ps_, 1);
    stats_.mem_bytes += 2ull * n * 4;
    if (op.qidx == kNoQ) {
      for (std::uint32_t i = 0; i < n; ++i) {
        std::uint32_t us, ua;
        std::memcpy(&us, sbuf + i * 4, 4);
        std::memcpy(&ua, abuf + i * 4, 4);
        const std::uint32_t r = std::uint32_t(sat_i32(std::int64_t(std::int32_t(ua)) + std::int32_t(us)));
        std::memcpy(abuf + i * 4, &r, 4);
      }
      fab_.write_bytes({acc_base.bank, acc_base.byte + o * 32}, abuf, n * 4, kPort,
                       t + 4 * period_ps_ + kWritePhase, 1);
      stats_.mem_bytes += std::uint64_t(n) * 4;
    } else {
      // Final pass: finalize to int8 into the (possibly row/segment shaped)
      // output region.
      const fabric::MemAddr out_base = adrf_[op.out_areg];
      const std::uint32_t row_elems = op.out_row_elems == 0 ? op.elems : op.out_row_elems;
      const std::uint32_t src_row = op.src_row_elems == 0 ? row_elems : op.src_row_elems;
      const std::uint32_t rps = op.rows_per_seg == 0 ? UINT32_MAX : op.rows_per_seg;
      for (std::uint32_t i = 0; i < n; ++i) {
        const std::uint32_t e = o * 8 + i;
        const std::uint32_t row = e / src_row;
        const std::uint32_t colb = e % src_row;
        if (colb >= row_elems) continue;  // pad columns carry no output
        std::uint32_t us, ua;
        std::memcpy(&us, sbuf + i * 4, 4);
        std::memcpy(&ua, abuf + i * 4, 4);
        const std::int64_t sum = std::int64_t(std::int32_t(ua)) + std::int32_t(us);
        const std::uint8_t v = std::uint8_t(std::int8_t(finalize_lane(sum, prog_.qtable[op.qidx])));
        const std::uint32_t seg = row / rps;
        const std::uint32_t ris = row % rps;
        const std::uint32_t stride = op.out_row_stride == 0 ? row_elems : op.out_row_stride;
        fabric::MemAddr out{out_base.bank,
                            out_base.byte + seg * op.out_seg_stride + ris * stride + colb};
        fab_.write_bytes(out, &v, 1, kPort, t + 4 * period_ps_ + kWritePhase + i, 1);
        stats_.mem_bytes += 1;
      }
    }
  }
}

std::uint64_t AryPe::run(const AryLaunch& launch) {
  if (!prog_loaded_) fail(Err::ConfigError, "no program loaded");
  for (const auto& [idx, addr] : launch.adrf_init) {
    if (idx >= adrf_.size()) fail(Err::BadIndex, "adRf init index out of range");
    adrf_[idx] = addr;
  }
  std::uint64_t cycle = 0;
  horizon_ = 0;
  bool finished = false;
  for (const AryInstr& in : prog_.instrs) {
    if (const auto* ld = std::get_if<LdOp>(&in)) {
      exec_ld(*ld, cycle, launch.start_ps);
      if (!ld->shadow) {
        cycle += cfg_.k;  // serialized tile load
        stats_.ld_cycles += cfg_.k;
      }
      stats_.ld_ops++;
    } else if (const auto* mm = std::get_if<MmOp>(&in)) {
      exec_mm(*mm, cycle, launch.start_ps);
      const std::uint64_t c = mm->cont ? mm->l : mm_cost(mm->l, cfg_.k);
      cycle += c;
      stats_.mm_ops++;
      stats_.mm_cycles += c;
    } else if (const auto* ag = std::get_if<AggOp>(&in)) {
      exec_agg(*ag, cycle, launch.start_ps);
      const std::uint64_t c = 6ull * ((ag->elems + 7) / 8);
      cycle += c;
      stats_.agg_ops++;
      stats_.agg_cycles += c;
    } else {
      finished = true;
      break;
    }
  }
  if (!finished) fail(Err::ConfigError, "program ran off the end without FIN");
  stats_.programs++;
  return launch.start_ps + std::max(cycle, horizon_) * period_ps_;
}

}  // namespace ina::arype
