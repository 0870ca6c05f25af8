#pragma once
// Lowers a model IR onto the two engines:
//   1. lower_model      — turn layers into a chain of semantic stages (matmul /
//                         pool / softmax) with frozen int8 weights, requant
//                         scales and activation tables. The chain is the single
//                         source of truth shared by program emission and the
//                         reference evaluator, so simulated and reference
//                         arithmetic agree bit for bit.
//   2. tile / img2col_1d — task-level arithmetic: convolutions become matmul
//                         tasks over sliding windows; tasks split into k-wide
//                         reduction chunks x k-wide output tiles.
//   3. compile          — allocate fabric regions, emit vector/array programs
//                         and a per-block launch DAG the driver executes.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ina/arype.hpp"
#include "ina/fabric.hpp"
#include "ina/model.hpp"
#include "ina/quant.hpp"
#include "ina/vpe.hpp"

namespace ina::compiler {

// ---------------------------------------------------------------------------
// task-level arithmetic
// ---------------------------------------------------------------------------

struct MatmulTask {
  unsigned m = 0;      // stream rows
  unsigned k_dim = 0;  // reduction width
  unsigned n = 0;      // output width
  std::string tag;
};

struct TilingPlan {
  unsigned k = 0;
  unsigned k_chunks = 0;  // ceil(k_dim / k): reduction splits needing merge
  unsigned n_tiles = 0;   // ceil(n / k): independent output column tiles
  unsigned sub_ops() const { return k_chunks * n_tiles; }
  unsigned aggregations() const { return (k_chunks - 1) * n_tiles; }
};

TilingPlan tile(const MatmulTask& t, unsigned k);

/// Sliding-window lowering of a 1D convolution over `flows` concatenated
/// sequences of `in_len` positions each.
MatmulTask img2col_1d(const model::Conv1D& c, unsigned in_len, unsigned flows,
                      const std::string& tag = {});

// ---------------------------------------------------------------------------
// semantic stage chain
// ---------------------------------------------------------------------------

struct Stage {
  enum class Kind : std::uint8_t { Matmul, Pool, Softmax } kind = Kind::Matmul;
  std::string name;
  // Matmul dims per flow.
  unsigned m = 0, k_dim = 0, n = 0;
  int weight = -1;           // quantized weight tensor (static tiles); -1: runtime
  int in0 = -1;              // producing stage (-1 = model input)
  int in1 = -1;              // runtime weight operand stage (attention)
  bool transpose_w = false;  // latch the in1 operand transposed (Q*K^T)
  bool per_flow = false;     // operands are private to one flow
  // Window addressing: the reduction reads window*in_ch bytes spanning
  // `window` consecutive input rows (dense layers: window 1).
  unsigned window = 1, in_ch = 1, pad = 0, stride = 1;
  QEntry q;  // int8 finalization: requant + optional activation
  double in_scale = 1.0, w_scale = 1.0, out_scale = 1.0;
  unsigned out_len = 0, out_ch = 0;  // per-flow logical output shape
  unsigned pool_stride = 2;          // Pool kind (ceil-mode pairs)
};

struct QuantModel {
  model::ModelIR ir;
  std::vector<model::QuantTensor> weights;
  std::vector<Stage> stages;
  std::array<std::uint32_t, 256> softmax_exp{};  // Q16 exp(-(d)*scale), d = max - s
  bool has_softmax = false;
  unsigned input_len = 0, input_ch = 0;
};

QuantModel lower_model(const model::ModelIR& ir);

/// Per-layer requant ratio convention: wide accumulators over k products of
/// two roughly uniform int8 operands have std ~ 41.6*sqrt(k); dividing by
/// 134*sqrt(k) leaves int8 outputs with std ~ 40 and rare saturation.
double requant_ratio(unsigned k_dim);

/// Identity finalization: plain saturating int8 clamp (used by pooling).
QEntry identity_qentry();

struct ChainEntry {
  MatmulTask task;
  unsigned repeat = 1;  // per-flow tasks repeat once per flow
};

/// Batched matmul sequence for `flows` flows (per-flow attention tasks keep
/// their per-flow dims with repeat = flows; everything else folds flows into m).
std::vector<ChainEntry> matmul_chain(const QuantModel& qm, unsigned flows);

// ---------------------------------------------------------------------------
// scheduling
// ---------------------------------------------------------------------------

enum class Engine : std::uint8_t { Simdu, Array };

/// Narrow-reduction tasks whose tile would leave most of the array idle run
/// on the vector engine's dot-product unit instead.
Engine place_stage(const Stage& s, unsigned k, double occupancy_threshold);

enum class NodeKind : std::uint8_t { Ary, Vpe, Gather, Softmax, Readout };

struct LaunchNode {
  NodeKind kind = NodeKind::Ary;
  int prog = -1;  // index into vpe_programs / ary_programs
  std::uint32_t pcache_base = 0;
  std::vector<std::pair<std::uint8_t, fabric::MemAddr>> adrf;
  std::vector<std::int32_t> deps;  // node indices that must finish first
  int flow = -1;                   // block-relative flow binding
  bool push_fa = false;            // feed the flow's capture base to the fa queue
  fabric::MemAddr src{}, dst{};    // gather / softmax / readout operands
  std::uint32_t words = 0;         // gather: capture words to copy
  std::uint32_t rows = 0, cols = 0, row_stride = 0;
  bool colsum = false;  // readout: argmax of per-column sums instead of row argmax
  int stage = -1;
  std::string label;
};

struct RegionSpec {
  std::string name;
  fabric::BankId bank = fabric::BankId::Compute0;
  std::uint32_t base_word = 0, words = 0;
  bool zero = false;  // guard rows: cleared once at initialization
};

/// Where a stage's finalized int8 output lives, for boundary checks.
struct StageBuffer {
  int stage = -1;
  fabric::MemAddr base{};  // first valid row of flow 0
  std::uint32_t row_bytes = 0, row_stride = 0;
  std::uint32_t rows_per_flow = 0, flow_stride = 0;
};

struct CompileConfig {
  unsigned k = 16;
  bool collab = true;
  unsigned flows = 1;           // flows to provision a batch schedule for
  unsigned max_block = 250;     // cap on flows per block
  std::uint32_t arena_bytes = 50 * 1024;  // per ping-pong partial set
  bool packet = false;          // packet granularity: whole model on the VPE
  double occupancy_threshold = 0.15;
  vpe::VpeConfig vpe{};
  arype::AryConfig ary{};
  std::uint32_t compute_words = 16384;  // per compute bank
};

struct CompiledBundle {
  bool packet = false;
  unsigned flows_per_block = 1;
  unsigned k = 16;
  bool collab = true;
  QuantModel qm;
  std::vector<ChainEntry> chain;
  std::vector<vpe::VpeProgram> vpe_programs;
  std::vector<arype::AryProgram> ary_programs;
  std::vector<std::int8_t> vpe_pcache, ary_pcache;
  std::vector<RegionSpec> regions;
  std::vector<LaunchNode> nodes;  // one block's launch DAG
  std::vector<StageBuffer> buffers;
  // Where gathered model input lands (per block):
  fabric::MemAddr input_base{};
  std::uint32_t input_flow_stride = 0;  // bytes between flows
  std::uint32_t capture_words = 1;      // extractor words consumed per flow
  bool gathered = true;  // false: programs read capture regions directly
};

CompiledBundle compile(const model::ModelIR& ir, const CompileConfig& cfg);

}  // namespace ina::compiler
