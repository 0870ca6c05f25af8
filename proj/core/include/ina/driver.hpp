#pragma once
// Full-system harness: builds the memory fabric, extractor, engines and
// controller from one config, replays a traffic source through the extractor,
// executes the compiled launch graph block by block on a two-lane in-order
// schedule (array lane / vector+controller lane), checks every stage boundary
// against the straight-line reference, and aggregates metrics.

#include <cstdint>
#include <string>
#include <vector>

#include "ina/compiler.hpp"
#include "ina/controller.hpp"
#include "ina/extractor.hpp"
#include "ina/model.hpp"
#include "ina/traffic.hpp"

namespace ina::driver {

struct UseCaseConfig {
  std::string name = "custom";

  // Model source: a saved manifest path, or a built-in seeded model
  // ("usecase1" | "usecase2" | "usecase3").
  std::string model_manifest;
  std::string builtin;
  std::uint64_t model_seed = 7;

  // Traffic source: a pcap path, or the synthetic generator.
  std::string pcap;
  traffic::SyntheticFlowSpec synth;

  // Extractor side.
  bool packet = false;  // per-packet tasks (forces threshold 1)
  std::uint32_t threshold_n = 20;
  extractor::Capture capture = extractor::Capture::AluWord;
  std::uint8_t interval_shift = 0;
  std::vector<int> feature_ids{1, 3, 4, 28};
  std::uint32_t table_depth = 8192;
  std::uint64_t extractor_hz = 125'000'000;

  // Compute side.
  unsigned k = 16;
  bool collab = true;
  unsigned max_block = 250;
  std::uint64_t compute_hz = 222'000'000;

  // Harness.
  bool oracle = true;
  std::string out_dir;  // empty: no report files
};

struct Metrics {
  // Extractor.
  std::uint64_t packets = 0, busy_cycles = 0;
  std::uint64_t collisions = 0, frozen_drops = 0;
  std::uint64_t flows_ready = 0, flows_processed = 0, flows_leftover = 0;
  std::uint32_t occupancy_peak = 0;
  double modeled_mpkts = 0, worst_case_mpkts = 0;

  // Vector engine.
  std::uint64_t vpe_programs = 0, vpe_busy_cycles = 0, vpe_macs = 0;
  std::uint64_t vpe_mem_bytes = 0;
  double vpe_mac_util = 0;  // macs / (8 * busy_cycles)

  // Array engine.
  std::uint64_t ary_ld_cycles = 0, ary_mm_cycles = 0, ary_agg_cycles = 0;
  std::uint64_t ary_active_macs = 0, ary_stream_rows = 0;
  double ary_efficiency = 0;        // active_macs / (k^2 * busy cycles)
  double ary_stream_occupancy = 0;  // active_macs / (k^2 * streamed rows)

  // Controller.
  std::uint64_t gather_cycles = 0, softmax_cycles = 0, readout_cycles = 0;

  // End to end.
  unsigned flows_per_block = 0, blocks = 0;
  std::uint64_t first_start_ps = 0, last_end_ps = 0;
  double flows_per_s = 0;  // processed flows (packets in packet mode) / span
  double lat_min_ns = 0, lat_mean_ns = 0, lat_max_ns = 0;  // decision - arrival
  double kernel_min_ns = 0, kernel_mean_ns = 0, kernel_max_ns = 0;  // packet kernel

  // Oracle.
  bool oracle_ran = false, oracle_ok = true;
  std::uint64_t feature_words_checked = 0, boundary_bytes_checked = 0;
  std::string first_divergence;

  std::uint64_t config_hash = 0;
};

struct RunResult {
  Metrics metrics;
  std::vector<ctrl::Verdict> verdicts;
  compiler::CompiledBundle bundle;
};

/// Built-in configs pinned to the three shipped tasks:
///   usecase1 — per-packet MLP on the 6-byte meta feature word
///   usecase2 — flow CNN on a 20-sample interval vector (1000 flows)
///   usecase3 — flow transformer on 15 payload rows (200 flows)
UseCaseConfig preset(const std::string& name, std::uint64_t seed);

/// JSON config file round-trip (all keys optional on load; unknown keys are
/// rejected). `config_json` is the canonical serialization hashed into
/// Metrics::config_hash.
UseCaseConfig load_config(const std::string& path);
std::string config_json(const UseCaseConfig& c);

model::ModelIR resolve_model(const UseCaseConfig& c);

RunResult run(const UseCaseConfig& c);

}  // namespace ina::driver
