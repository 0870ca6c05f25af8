#pragma once
// Line-rate flow feature extractor: a hash-indexed direct-mapped flow table,
// a 16-lane micro-op ALU cluster that folds per-packet metadata into a
// 16-byte feature word per flow, and ready/in-flight FIFOs toward the compute
// side. The pipeline has four stages (hash, slot read, ALU, writeback) with
// initiation interval 1, except back-to-back packets of the same flow which
// pay the full 4-cycle read-after-write hazard.

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <vector>

#include "ina/common.hpp"
#include "ina/fabric.hpp"
#include "ina/traffic.hpp"

namespace ina::extractor {

// ---------------------------------------------------------------------------
// Registers

constexpr std::size_t kMetaBytes = 13;
constexpr std::size_t kHistoryBytes = 16;
constexpr unsigned kMaxLanes = 16;
constexpr unsigned kPipelineDepth = 4;
constexpr unsigned kHazardII = 4;  // same-slot back-to-back initiation interval

/// Per-packet metadata register. Byte layout (little-endian fields):
///   [0..3]  frame size, u32
///   [4]     TCP/UDP/ICMP flag byte
///   [5]     flow-relative direction (0 forward / 1 backward)
///   [6]     low byte of the tuple hash (digest)
///   [7..10] inter-arrival time in microseconds, u32 (0 on a flow's first packet)
///   [11]    constant 1 (feeds counting lanes; byte 12 keeps wide reads clean)
///   [12]    constant 0
using MetaRegister = std::array<std::uint8_t, kMetaBytes>;
using HistoryRegister = std::array<std::uint8_t, kHistoryBytes>;

enum Meta : std::uint8_t {
  kMetaPktSize = 0,
  kMetaFlag = 4,
  kMetaDir = 5,
  kMetaDigest = 6,
  kMetaIntv = 7,
  kMetaOne = 11,
  kMetaZero = 12,
};

// ---------------------------------------------------------------------------
// Micro-op ALU cluster

enum class AluOp : std::uint8_t { Add, Sub, Max, Min, Wr };
enum class OperandBank : std::uint8_t { Meta, History };

struct Operand {
  OperandBank bank = OperandBank::Meta;
  std::uint8_t byte = 0;
};

/// One ALU lane. Reads two little-endian unsigned operands of `width` bytes,
/// applies `op` with unsigned saturation at the lane width, and writes the
/// result to output bytes [dst, dst+width). `wr` copies src_a.
/// On a flow's first packet, history-bank operands read the op's identity
/// element (0 for add/sub/max/wr, all-ones for min); lanes with `skip_first`
/// output the identity outright (interval-derived features have no sample on
/// the first packet, whose forced interval is zero).
struct MicroOp {
  AluOp op = AluOp::Wr;
  Operand src_a;
  Operand src_b;
  std::uint8_t dst = 0;
  std::uint8_t width = 1;
  bool skip_first = false;
};

struct MicroOpProgram {
  std::vector<MicroOp> lanes;
  /// Structural checks: lane count, widths, in-range operands, disjoint
  /// destination ranges, total output <= 16 bytes.
  void validate() const;
};

/// One ALU pass: output starts as the history word; each lane overwrites its
/// destination range. Pure function, shared by the engine and tests.
HistoryRegister alu_cluster_step(const MicroOpProgram& prog, const HistoryRegister& hist,
                                 const MetaRegister& meta, bool first_packet);

// ---------------------------------------------------------------------------
// Hash

/// Fixed 64-bit mixing hash over the canonical 13-byte tuple encoding.
/// Both directions of a flow map to the same value.
std::uint64_t hash_tuple(const traffic::FiveTuple& t);

/// Table index: low bits of the hash. `table_depth` must be a power of two.
std::uint32_t slot_index(std::uint64_t hash, std::uint32_t table_depth);

// ---------------------------------------------------------------------------
// Feature catalog -> micro-op programs

/// How a feature value is recovered from the accumulated word at readout.
enum class Readout : std::uint8_t {
  Raw,            // little-endian field as-is
  MeanOverCount,  // field / packet-count   (round-half-up)
  MeanOverGaps,   // field / (count-1), 0 when count < 2
};

struct FeatureField {
  int id = 0;
  Readout readout = Readout::Raw;
  std::uint8_t offset = 0;  // accumulator position in the feature word
  std::uint8_t width = 0;
  std::uint8_t count_offset = 0xff;  // companion count field for means
  std::uint8_t count_width = 0;
};

struct FeatureProgram {
  MicroOpProgram program;
  std::vector<FeatureField> fields;  // one per requested id, request order
  std::uint8_t bytes_used = 0;
};

/// Build the lane program computing the requested catalog features.
/// Supported ids (appendix numbering): 1 last packet size, 3 last interval,
/// 4 direction, 28 flag byte, 6 flow byte total, 9 duration (interval sum),
/// 11/12 max/min packet size, 19/20 max/min interval, 36 packet count,
/// 13/21 mean packet size / mean interval (sums here, division at readout).
/// Shared accumulators are deduplicated; means pull in the count lane.
/// Throws UnsupportedFeature for ids outside the set and CapacityExceeded
/// when the word would exceed 16 bytes.
FeatureProgram feature_program(const std::vector<int>& feature_ids);

/// Decode one feature from an accumulated word (readout post-processing,
/// round-half-up division for means).
std::int64_t read_feature(const FeatureField& f, const HistoryRegister& word);

// ---------------------------------------------------------------------------
// Flow tracker engine

enum class ExtractorEvent : std::uint8_t { NewFlow, Hit, Ready, Collision, Recycled };

struct FlowSlot {
  std::uint32_t pkt_count = 0;  // 0 <=> slot free
  std::uint64_t last_ts_ns = 0;
  traffic::Direction orientation = traffic::Direction::Forward;  // first-seen
  bool frozen = false;
  traffic::FiveTuple tuple_tag;  // canonical
};

/// What the extractor stores per flow in feature memory.
enum class Capture : std::uint8_t {
  AluWord,         // one 16-byte accumulated feature word
  IntervalVector,  // one int8 inter-arrival sample per packet
  PayloadRows,     // one 16-byte centered payload row per packet
};

struct ExtractorConfig {
  std::uint32_t table_depth = 8192;  // power of two
  std::uint32_t threshold_n = 20;    // packets until Ready (freeze)
  bool packet_mode = false;          // per-packet tasks on rotating slots
  Capture capture = Capture::AluWord;
  std::uint8_t interval_shift = 0;   // us >> shift, saturated to [0,127]
  MicroOpProgram program;            // AluWord mode lanes
  std::uint32_t ready_capacity = 0;  // 0 = effective table depth
  std::uint64_t clock_hz = 125'000'000;
};

struct IngestResult {
  ExtractorEvent event = ExtractorEvent::Hit;
  std::uint32_t slot = 0;
  std::uint64_t done_ps = 0;  // writeback completion time
};

struct ReadyEntry {
  std::uint32_t slot = 0;
  traffic::FiveTuple tuple;
  std::uint32_t base_word = 0;  // feature-memory region of this flow
  std::uint32_t words = 1;
  std::uint64_t ready_ps = 0;
  std::uint64_t last_arrival_ns = 0;  // freezing packet, for latency metrics
};

struct ExtractorStats {
  std::uint64_t packets = 0;
  std::uint64_t busy_cycles = 0;  // occupied issue slots (idle gaps excluded)
  std::uint64_t new_flows = 0;
  std::uint64_t hits = 0;
  std::uint64_t ready = 0;
  std::uint64_t collisions = 0;
  std::uint64_t frozen_drops = 0;  // packet-mode arrivals on a busy slot
  std::uint64_t recycled = 0;
  std::uint32_t occupancy = 0;
  std::uint32_t occupancy_peak = 0;
};

class Extractor {
 public:
  Extractor(const ExtractorConfig& cfg, fabric::Fabric& fab);

  /// Slots actually usable (capture modes shrink the table so per-flow
  /// regions fit feature memory).
  std::uint32_t effective_depth() const { return depth_; }
  std::uint32_t words_per_flow() const { return words_per_flow_; }

  IngestResult ingest(const traffic::ParsedHeader& h);

  std::size_t ready_size() const { return ready_.size(); }
  ReadyEntry pop_ready();

  /// Finish a flow: must match the in-flight FIFO head (OutOfOrderFin).
  void recycle(std::uint32_t slot);

  const FlowSlot& slot(std::uint32_t i) const;
  const ExtractorStats& stats() const { return stats_; }
  std::uint64_t busy_until_ps() const { return next_issue_cycle_ * period_ps_; }
  std::uint64_t period_ps() const { return period_ps_; }

  /// Steady-state packets/second implied by occupied issue slots.
  double modeled_pkt_rate() const;
  /// Guaranteed floor: every packet paying the full hazard interval.
  double worst_case_pkt_rate() const;

 private:
  MetaRegister build_meta(const traffic::ParsedHeader& h, const FlowSlot& s,
                          bool first_packet, std::uint64_t hash) const;
  void write_capture(std::uint32_t slot, std::uint32_t pkt_idx,
                     const traffic::ParsedHeader& h, std::uint32_t intv_us,
                     std::uint64_t t_ps);

  ExtractorConfig cfg_;
  fabric::Fabric& fab_;
  std::uint32_t depth_ = 0;
  std::uint32_t words_per_flow_ = 1;
  std::uint64_t period_ps_ = 8000;
  std::vector<FlowSlot> slots_;
  std::deque<ReadyEntry> ready_;
  std::deque<std::uint32_t> in_flight_;
  std::uint64_t pkt_seq_ = 0;          // packet-mode rotating slot cursor
  std::uint64_t next_issue_cycle_ = 0;
  std::uint64_t prev_issue_cycle_ = 0;
  std::uint32_t prev_slot_ = UINT32_MAX;
  bool have_prev_ = false;
  ExtractorStats stats_;
};

}  // namespace ina::extractor
