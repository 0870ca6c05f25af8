#pragma once
// Straight-line golden models the simulator is checked against:
//
//   FeatureGolden     — plain wide-integer replay of the flow-table semantics
//                       (claim / accumulate / freeze / drop on a direct-mapped
//                       table) with no pipeline, memory, or timing model.
//                       Produces the expected capture image per ready flow, in
//                       the same order the engine freezes them.
//   reference_forward — scalar int8 inference over the lowered stage chain
//                       (sliding-window conv, dense, attention, pooling,
//                       quantized softmax) using the same finalization rules
//                       as the engines but none of the tiling or scheduling.
//   compare_block     — byte compare of every stage boundary left in the
//                       memory fabric against the reference, reporting the
//                       first divergence.

#include <cstdint>
#include <deque>
#include <vector>

#include "ina/compiler.hpp"
#include "ina/extractor.hpp"
#include "ina/fabric.hpp"
#include "ina/traffic.hpp"

namespace ina::oracle {

// ---------------------------------------------------------------------------
// Golden flow-capture model
// ---------------------------------------------------------------------------

struct GoldenReady {
  traffic::FiveTuple tuple;   // canonical
  std::uint32_t slot = 0;
  std::vector<Word16> words;  // expected capture image at freeze time
};

class FeatureGolden {
 public:
  /// `depth` and `words_per_flow` must match the engine under test
  /// (Extractor::effective_depth / words_per_flow).
  FeatureGolden(const extractor::ExtractorConfig& cfg, std::uint32_t depth,
                std::uint32_t words_per_flow);

  void ingest(const traffic::ParsedHeader& h);

  std::size_t ready_size() const { return ready_.size(); }
  GoldenReady pop_ready();

  /// Mirror of Extractor::recycle — frees the oldest in-flight slot.
  void recycle();

  std::uint64_t accepted() const { return accepted_; }
  std::uint64_t dropped() const { return dropped_; }

 private:
  struct Slot {
    std::uint32_t count = 0;
    std::uint64_t last_ts_ns = 0;
    traffic::Direction orientation = traffic::Direction::Forward;
    bool frozen = false;
    traffic::FiveTuple tuple;
    std::vector<Word16> image;  // persists across recycles, like the memory
  };

  void accumulate(Slot& s, const traffic::ParsedHeader& h, bool first, std::uint64_t hash);
  void freeze(Slot& s, std::uint32_t idx);

  extractor::ExtractorConfig cfg_;
  std::uint32_t depth_ = 0;
  std::uint32_t words_per_flow_ = 1;
  std::vector<Slot> slots_;
  std::deque<GoldenReady> ready_;
  std::deque<std::uint32_t> in_flight_;
  std::uint64_t pkt_seq_ = 0;
  std::uint64_t accepted_ = 0;
  std::uint64_t dropped_ = 0;
};

// ---------------------------------------------------------------------------
// Reference int8 inference
// ---------------------------------------------------------------------------

struct StageOut {
  unsigned rows = 0, cols = 0;
  std::vector<std::int8_t> v;  // row-major rows x cols
};

/// Evaluate every stage of the lowered chain for one flow. `input` holds
/// input_len x input_ch int8 samples row-major. Returns one StageOut per
/// stage, index-aligned with qm.stages.
std::vector<StageOut> reference_forward(const compiler::QuantModel& qm,
                                        const std::vector<std::int8_t>& input);

/// Plain int8 matmul with int64 accumulation and no finalization: A is
/// (m x k) row-major, B is (k x n) row-major.
std::vector<std::int64_t> matmul_i8(const std::int8_t* a, const std::int8_t* b, unsigned m,
                                    unsigned k, unsigned n);

/// Readout mirror: per-column int64 sums of the final stage (colsum) or its
/// last row. The verdict label is the argmax with ties to the lowest index.
std::vector<std::int64_t> verdict_scores(const StageOut& fin, bool colsum);
unsigned argmax_label(const std::vector<std::int64_t>& scores);

// ---------------------------------------------------------------------------
// Stage-boundary comparison
// ---------------------------------------------------------------------------

struct Divergence {
  int stage = -2;  // -1 = gathered input
  unsigned flow = 0, row = 0, col = 0;
  int got = 0, want = 0;
};

struct CompareResult {
  bool ok = true;
  Divergence first;
  std::uint64_t bytes_checked = 0;
};

/// Compare the committed fabric contents of every stage buffer against the
/// reference forward pass. `inputs` is indexed by block-relative flow id;
/// only ids listed in `flows` are checked (partial final blocks).
CompareResult compare_block(const compiler::CompiledBundle& b, const fabric::Fabric& fab,
                            const std::vector<std::vector<std::int8_t>>& inputs,
                            const std::vector<unsigned>& flows);

/// Committed-state byte read across word boundaries (verification only).
std::vector<std::uint8_t> peek_bytes(const fabric::Fabric& fab, fabric::MemAddr addr,
                                     std::size_t len);

}  // namespace ina::oracle
