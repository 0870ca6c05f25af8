#pragma once
// Weight-stationary k x k systolic array in the 222 MHz compute domain.
// Instructions execute strictly in order:
//   LD  — load a weight tile (a rows x b cols, a,b <= k) from pCache or from
//         a fabric region (optionally transposed, for runtime "weights" like
//         attention K^T); cost: k cycles.
//   MM  — stream l rows through the loaded tile; row r is read at relative
//         cycle r and its b int32 products retire at r + 2k-1, so the
//         instruction costs l + 2k - 1 cycles. Source/destination addressing
//         supports a row stride plus an optional outer segment stride so one
//         MM can sweep many per-flow regions back to back.
//   AGG — read-modify-write aggregation sweep over int32 partials at
//         6 cycles per 8 elements (read partial + read accumulator + write
//         accumulator = 3 word accesses x 2 cycles at the 128-bit port) with
//         the array stalled (the no-collaboration baseline; with collaboration
//         these sweeps run on the vector engine instead and the array keeps
//         streaming).
//   FIN — end of program.
// Per-MM utilization = a*min(b,k)*l / (k^2 * (l+2k-1)); the steady-state term
// drops the fill/drain overhead.

#include <cstdint>
#include <variant>
#include <vector>

#include "ina/common.hpp"
#include "ina/fabric.hpp"
#include "ina/quant.hpp"

namespace ina::arype {

constexpr std::uint8_t kNoQ = 0xff;

struct LdOp {
  enum class Src : std::uint8_t { PCache, Fabric } src = Src::PCache;
  std::uint32_t pcache_off = 0;  // row-major a x b int8 record
  std::uint8_t areg = 0;         // fabric source base (adRf index)
  std::uint16_t rows = 0;        // a: reduction depth
  std::uint16_t cols = 0;        // b: output width
  std::uint32_t row_stride = 0;  // fabric source: bytes between rows
  bool transpose = false;        // fabric record is (b x a); load its transpose
  // Shadow-latch preload: the tile is fetched while the previous MM is still
  // streaming and switched in column-by-column behind its last row, so it
  // costs no array cycles and the following MM may be a continuation.
  bool shadow = false;
};

struct MmOp {
  std::uint32_t l = 0;        // total stream rows (across all segments)
  std::uint8_t src_areg = 0;
  std::uint8_t dst_areg = 0;
  std::uint32_t src_row_stride = fabric::kWordBytes;
  std::uint32_t dst_row_stride = 0;  // 0: packed (b or 4b bytes per row)
  std::uint32_t rows_per_seg = 0;    // 0: single segment
  std::uint32_t src_seg_stride = 0;  // bytes between segment bases
  std::uint32_t dst_seg_stride = 0;
  std::uint8_t qidx = kNoQ;  // finalize rows to int8; kNoQ: raw int32 partials
  // Continuation of the previous MM with the same weight tile: the pipeline is
  // already full, so the 2k-1 refill term is skipped (cost = l cycles).
  bool cont = false;
};

struct AggOp {
  std::uint32_t elems = 0;   // int32 element count
  std::uint8_t src_areg = 0;  // fresh partials (packed int32)
  std::uint8_t dst_areg = 0;  // running accumulator (packed int32)
  std::uint8_t qidx = kNoQ;   // kNoQ: dst += src; else finalize into out_areg
  // int8 output shaping for the finalize pass (guard-row layouts):
  std::uint8_t out_areg = 0;
  std::uint32_t out_row_elems = 0;   // 0: one packed run
  std::uint32_t out_row_stride = 0;  // 0: packed rows
  std::uint32_t rows_per_seg = 0;    // 0: single segment
  std::uint32_t out_seg_stride = 0;
  // Source row width in elements when partials carry pad columns (tiles
  // narrower than the fixed 16-element partial rows); 0: no pad.
  std::uint32_t src_row_elems = 0;
};

struct FinOp {};

using AryInstr = std::variant<LdOp, MmOp, AggOp, FinOp>;

struct AryProgram {
  std::vector<AryInstr> instrs;
  std::vector<QEntry> qtable;
  void validate(unsigned k, unsigned adrf) const;
};

struct AryConfig {
  unsigned k = 32;
  unsigned adrf = 16;
  std::size_t icache_instrs = 8192;
  std::size_t pcache_bytes = 1 << 20;
  std::uint64_t clock_hz = 222'000'000;
};

struct AryLaunch {
  std::vector<std::pair<std::uint8_t, fabric::MemAddr>> adrf_init;
  std::uint64_t start_ps = 0;
};

struct AryStats {
  std::uint64_t programs = 0;
  std::uint64_t ld_ops = 0;
  std::uint64_t mm_ops = 0;
  std::uint64_t agg_ops = 0;
  std::uint64_t ld_cycles = 0;
  std::uint64_t mm_cycles = 0;
  std::uint64_t agg_cycles = 0;  // array stalled on aggregation sweeps
  std::uint64_t stream_rows = 0;
  std::uint64_t active_macs = 0;  // sum of a*b*l over MM ops
  std::uint64_t mem_bytes = 0;
};

/// Documented cycle cost of one MM streaming l rows on a k x k array.
inline std::uint64_t mm_cost(std::uint64_t l, unsigned k) { return l + 2ull * k - 1; }

/// Whole-instruction MAC utilization (fill/drain included).
double mm_utilization(unsigned a, unsigned b, std::uint64_t l, unsigned k);

/// Steady-state occupancy of the array while rows are streaming.
double mm_steady_occupancy(unsigned a, unsigned b, unsigned k);

class AryPe {
 public:
  AryPe(const AryConfig& cfg, fabric::Fabric& fab);

  void load_pcache(const std::vector<std::int8_t>& image);
  void load_program(const AryProgram& prog);  // CapacityError when oversized

  /// Execute the loaded program; returns the picosecond end timestamp.
  std::uint64_t run(const AryLaunch& launch);

  const AryStats& stats() const { return stats_; }
  unsigned k() const { return cfg_.k; }
  std::uint64_t period_ps() const { return period_ps_; }
  fabric::MemAddr areg(unsigned i) const;

  /// Loaded tile inspection for tests.
  std::int8_t weight(unsigned row, unsigned col) const;
  unsigned tile_rows() const { return tile_rows_; }
  unsigned tile_cols() const { return tile_cols_; }

 private:
  void exec_ld(const LdOp& op, std::uint64_t cycle, std::uint64_t start_ps);
  void exec_mm(const MmOp& op, std::uint64_t cycle, std::uint64_t start_ps);
  void exec_agg(const AggOp& op, std::uint64_t cycle, std::uint64_t start_ps);

  AryConfig cfg_;
  fabric::Fabric& fab_;
  std::uint64_t period_ps_;
  AryProgram prog_;
  bool prog_loaded_ = false;
  std::vector<std::int8_t> pcache_;
  std::vector<fabric::MemAddr> adrf_;
  std::vector<std::int8_t> tile_;  // k*k weight latches
  unsigned tile_rows_ = 0;
  unsigned tile_cols_ = 0;
  std::uint64_t horizon_ = 0;  // last cycle any in-flight result retires
  AryStats stats_;
};

}  // namespace ina::arype
