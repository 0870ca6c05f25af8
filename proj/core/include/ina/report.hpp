#pragma once
// Run artifacts: a human-readable summary table, newline-delimited JSON
// metrics records, per-flow decision records, the fabric layout, and the
// emitted engine programs.

#include <string>
#include <vector>

#include "ina/driver.hpp"

namespace ina::report {

/// Newline-delimited JSON: one self-describing record per line
/// ("record": config | extractor | vpe | arype | controller | endtoend |
/// oracle). Parses back losslessly.
std::string metrics_jsonl(const driver::UseCaseConfig& cfg, const driver::Metrics& m);

/// Human-readable run summary (architecture, delay, throughput, efficiency).
std::string summary_text(const driver::UseCaseConfig& cfg, const driver::Metrics& m);

/// One JSON line per classification decision.
std::string decisions_jsonl(const std::vector<ctrl::Verdict>& verdicts);

/// Region and stage-buffer layout of the compiled bundle.
std::string layout_json(const compiler::CompiledBundle& b);

/// Write config.json, metrics.jsonl, summary.txt, decisions.jsonl,
/// layout.json, vpe.s and arype.s under `dir` (created if missing).
void write_reports(const std::string& dir, const driver::UseCaseConfig& cfg,
                   const driver::Metrics& m, const std::vector<ctrl::Verdict>& verdicts,
                   const compiler::CompiledBundle& b);

}  // namespace ina::report
