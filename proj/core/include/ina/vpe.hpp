#pragma once
// Vector processing element: a VLIW machine in the 222 MHz compute domain.
// Each instruction word packs up to four fields that issue in the same cycle:
//   simdu — 8 product lanes, each an 8-wide int8 dot (prd) or two independent
//           4-wide sub-lane dots (prds); weights stream implicitly from pCache
//   vu    — 8 element-wise int32 adder/multiplier/max units
//   mif   — memory interface, 2 channels (fa: pop a ready flow's address into
//           adRf; ld: fabric word(s) into a data register)
//   ctrl  — fin
// Latencies: SIMDU 5 cycles (pipelined, II=1), VU 1, ld 2, fa 1. There are no
// interlocks: operand reads see the values visible at issue, and the compiler
// must schedule around them. Two writes landing on one register in the same
// cycle raise RegisterConflict.

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <vector>

#include "ina/common.hpp"
#include "ina/fabric.hpp"
#include "ina/numeric.hpp"
#include "ina/quant.hpp"

namespace ina::vpe {

constexpr unsigned kLanes = 8;
constexpr unsigned kSubWidth = 4;       // prds sub-lane product width limit
constexpr std::uint8_t kNoQ = 0xff;     // "store raw int32" marker
constexpr unsigned kSimdLatency = 5;    // mult + 3-level adder tree + activation
constexpr unsigned kVuLatency = 1;
constexpr unsigned kLdLatency = 2;
constexpr unsigned kFaLatency = 1;

using VecReg = std::array<std::int32_t, kLanes>;

/// One prds sub-lane product: dst_lane += dot(src[src_off .. src_off+width),
/// next `width` pCache weights). Descriptors sharing a dst_lane accumulate,
/// which is how an 8-wide prd decomposes into two 4-wide halves.
struct PrdsDesc {
  std::uint8_t dst_lane = 0;
  std::uint8_t src_off = 0;
  std::uint8_t width = kSubWidth;
};

struct SimdOp {
  enum class Kind : std::uint8_t { Prd, Prds } kind = Kind::Prd;
  std::uint8_t src = 0;    // dRf vector consumed as int8 lanes
  std::uint8_t n_out = 0;  // prd: output lanes 1..8 (each one 8-wide dot)
  std::vector<PrdsDesc> descs;  // prds: up to 16 sub-lane products
  bool dst_mem = false;    // write through Mif channel 0 at adRf[dst]
  std::uint8_t dst = 0;    // dRf index, or adRf index when dst_mem
  std::int32_t post_inc = 0;  // adRf advance after a memory store
  std::uint8_t qidx = kNoQ;   // requant table entry (kNoQ: keep raw int32)
};

struct VuOp {
  enum class Kind : std::uint8_t { Vadd, Vem, Vmax } kind = Kind::Vadd;
  std::uint8_t src_a = 0;
  std::uint8_t src_b = 0;
  bool dst_mem = false;
  std::uint8_t dst = 0;
  std::int32_t post_inc = 0;
  std::uint8_t qidx = kNoQ;
};

enum class ElemWidth : std::uint8_t { B1, W4 };  // int8 / int32 lanes in memory

struct MifOp {
  enum class Kind : std::uint8_t { Fa, Ld } kind = Kind::Ld;
  std::uint8_t addr = 0;  // adRf source (ld) — or destination (fa)
  std::uint8_t dst = 0;   // dRf destination (ld)
  ElemWidth width = ElemWidth::B1;
  std::uint8_t channel = 0;
  std::int32_t post_inc = 0;  // applied to adRf[addr] after the access
};

struct VliwWord {
  std::optional<SimdOp> simdu;
  std::optional<VuOp> vu;
  std::optional<MifOp> mif;
  bool fin = false;
};

struct VpeProgram {
  std::vector<VliwWord> words;
  std::vector<QEntry> qtable;
  /// Structural validation against machine limits (register indices, lane
  /// counts, the one-memory-op-per-word rule, qtable references).
  void validate(unsigned drf, unsigned adrf) const;
};

// ---------------------------------------------------------------------------

struct VpeConfig {
  unsigned drf = 32;
  unsigned adrf = 16;
  std::size_t icache_words = 4096;
  std::size_t pcache_bytes = 1 << 20;
  std::uint64_t clock_hz = 222'000'000;
};

/// Per-launch inputs set by the controller: where the parameter stream starts
/// and any address registers that must be rebased (e.g. per-flow regions).
struct VpeLaunch {
  std::uint32_t pcache_base = 0;
  std::vector<std::pair<std::uint8_t, fabric::MemAddr>> adrf_init;
  std::uint64_t start_ps = 0;
};

struct VpeStats {
  std::uint64_t programs = 0;
  std::uint64_t words = 0;
  std::uint64_t simd_ops = 0;
  std::uint64_t vu_ops = 0;
  std::uint64_t mif_ops = 0;
  std::uint64_t macs = 0;         // int8 multiply-accumulates performed
  std::uint64_t busy_cycles = 0;  // issue..drain, summed over launches
  std::uint64_t mem_bytes = 0;
};

class Vpe {
 public:
  Vpe(const VpeConfig& cfg, fabric::Fabric& fab);

  void load_pcache(const std::vector<std::int8_t>& image);
  void load_program(const VpeProgram& prog);  // CapacityError when oversized

  /// Queue a ready-flow base address for the next fa instruction.
  void push_fa(fabric::MemAddr addr);
  std::size_t fa_pending() const { return fa_queue_.size(); }

  /// Execute the loaded program to fin; returns the picosecond timestamp when
  /// the last in-flight write has drained. Cycle accounting follows the
  /// latency model in the header comment.
  std::uint64_t run(const VpeLaunch& launch);

  const VecReg& reg(unsigned i) const;
  fabric::MemAddr areg(unsigned i) const;
  const VpeStats& stats() const { return stats_; }
  std::uint64_t period_ps() const { return period_ps_; }
  const VpeConfig& config() const { return cfg_; }

 private:
  struct PendingWrite {
    std::uint64_t visible_cycle;
    std::uint8_t reg;
    VecReg value;
  };

  VecReg read_drf(unsigned idx) const;
  void queue_write(std::uint64_t cycle, std::uint8_t reg, const VecReg& v);
  void commit_upto(std::uint64_t cycle);
  void store_vector(const VecReg& lanes, unsigned valid, std::uint8_t aidx,
                    std::int32_t post_inc, std::uint8_t qidx, std::uint64_t cycle,
                    std::uint64_t start_ps);

  VpeConfig cfg_;
  fabric::Fabric& fab_;
  std::uint64_t period_ps_;
  VpeProgram prog_;
  bool prog_loaded_ = false;
  std::vector<std::int8_t> pcache_;
  std::vector<VecReg> drf_;
  std::vector<fabric::MemAddr> adrf_;
  std::vector<PendingWrite> pending_;
  std::deque<fabric::MemAddr> fa_queue_;
  std::size_t pcursor_ = 0;
  VpeStats stats_;
};

}  // namespace ina::vpe
