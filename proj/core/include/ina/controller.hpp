#pragma once
// Block controller: owns the compiled bundle's fabric regions, launches the
// two engines, and executes the controller-side nodes (capture gather,
// Q16 softmax, readout/decision) with the same one-word-per-cycle port
// discipline the engines follow. The controller shares the compute clock and
// the vector engine's fabric ports, so its nodes occupy the vector lane.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ina/arype.hpp"
#include "ina/compiler.hpp"
#include "ina/fabric.hpp"
#include "ina/traffic.hpp"
#include "ina/vpe.hpp"

namespace ina::ctrl {

/// Runtime binding of a block-relative flow index to a frozen capture region.
struct FlowBinding {
  traffic::FiveTuple tuple{};
  std::uint32_t slot = 0;
  fabric::MemAddr capture{};  // feature-bank byte address of the capture
  std::uint32_t words = 1;
  std::uint64_t ready_ps = 0;
  std::uint64_t last_arrival_ns = 0;
};

/// One classification decision produced by a readout node.
struct Verdict {
  traffic::FiveTuple tuple{};
  int flow = -1;
  unsigned label = 0;
  std::vector<std::int64_t> scores;
  std::uint64_t done_ps = 0;
  std::uint64_t arrival_ns = 0;  // freezing packet, for latency accounting
};

/// Q16 softmax weights for one int8 score row: w_j = exp_lut[max - s_j],
/// apportioned to sum to exactly 65536 by largest remainder (ties to the
/// lowest index). Shared by the controller and the reference evaluator.
std::vector<std::uint32_t> softmax_row_q16(const std::int8_t* row, std::size_t n,
                                           const std::array<std::uint32_t, 256>& exp_lut);

struct CtrlStats {
  std::uint64_t gather_cycles = 0;
  std::uint64_t softmax_cycles = 0;
  std::uint64_t readout_cycles = 0;
  std::uint64_t decisions = 0;
};

class Controller {
 public:
  Controller(const compiler::CompiledBundle& bundle, fabric::Fabric& fab, vpe::Vpe& v,
             arype::AryPe& a);

  /// Place the bundle's regions (Overlap on clashes) and load both engines'
  /// parameter caches. Compute banks must be in their reset (zeroed) state so
  /// guard regions start cleared.
  void init();

  /// Reads of a readout node must land on words written at or after this
  /// epoch; older words raise StaleResult.
  void begin_block(std::uint64_t epoch_ps) { epoch_ps_ = epoch_ps; }

  /// Execute one launch node starting no earlier than `start_ps`; returns the
  /// end timestamp. `fb` binds flow-indexed nodes (gather, fa push, readout).
  std::uint64_t exec(const compiler::LaunchNode& n, std::uint64_t start_ps,
                     const FlowBinding* fb);

  const std::vector<Verdict>& verdicts() const { return verdicts_; }
  void clear_verdicts() { verdicts_.clear(); }
  const CtrlStats& stats() const { return stats_; }
  std::uint64_t period_ps() const { return period_ps_; }

 private:
  std::uint64_t exec_gather(const compiler::LaunchNode& n, std::uint64_t t,
                            const FlowBinding& fb);
  std::uint64_t exec_softmax(const compiler::LaunchNode& n, std::uint64_t t);
  std::uint64_t exec_readout(const compiler::LaunchNode& n, std::uint64_t t,
                             const FlowBinding* fb);

  const compiler::CompiledBundle& bundle_;
  fabric::Fabric& fab_;
  vpe::Vpe& vpe_;
  arype::AryPe& ary_;
  std::uint64_t period_ps_;
  std::uint64_t epoch_ps_ = 0;
  std::vector<Verdict> verdicts_;
  CtrlStats stats_;
};

}  // namespace ina::ctrl
