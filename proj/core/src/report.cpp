#include "ina/report.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "ina/asm_text.hpp"
#include "ina/fabric.hpp"

namespace ina::report {

using nlohmann::ordered_json;

namespace {

std::string tuple_str(const traffic::FiveTuple& t) {
  auto ip = [](std::uint32_t v) {
    std::ostringstream o;
    o << ((v >> 24) & 0xff) << '.' << ((v >> 16) & 0xff) << '.' << ((v >> 8) & 0xff) << '.'
      << (v & 0xff);
    return o.str();
  };
  std::ostringstream o;
  o << ip(t.src_ip) << ':' << t.src_port << "->" << ip(t.dst_ip) << ':' << t.dst_port << '/'
    << unsigned(t.proto);
  return o.str();
}

void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary);
  if (!out) fail(Err::IoError, "cannot write '" + p.string() + "'");
  out << content;
  if (!out) fail(Err::IoError, "short write to '" + p.string() + "'");
}

}  // namespace

std::string metrics_jsonl(const driver::UseCaseConfig& cfg, const driver::Metrics& m) {
  std::ostringstream out;
  ordered_json c = ordered_json::parse(driver::config_json(cfg));
  c["record"] = "config";
  c["config_hash"] = m.config_hash;
  out << c.dump() << '\n';

  ordered_json e{{"record", "extractor"},
                 {"packets", m.packets},
                 {"busy_cycles", m.busy_cycles},
                 {"modeled_mpkts", m.modeled_mpkts},
                 {"worst_case_mpkts", m.worst_case_mpkts},
                 {"collisions", m.collisions},
                 {"frozen_drops", m.frozen_drops},
                 {"flows_ready", m.flows_ready},
                 {"occupancy_peak", m.occupancy_peak}};
  out << e.dump() << '\n';

  ordered_json v{{"record", "vpe"},
                 {"programs", m.vpe_programs},
                 {"busy_cycles", m.vpe_busy_cycles},
                 {"macs", m.vpe_macs},
                 {"mem_bytes", m.vpe_mem_bytes},
                 {"mac_util", m.vpe_mac_util}};
  out << v.dump() << '\n';

  ordered_json a{{"record", "arype"},
                 {"ld_cycles", m.ary_ld_cycles},
                 {"mm_cycles", m.ary_mm_cycles},
                 {"agg_cycles", m.ary_agg_cycles},
                 {"active_macs", m.ary_active_macs},
                 {"stream_rows", m.ary_stream_rows},
                 {"efficiency", m.ary_efficiency},
                 {"stream_occupancy", m.ary_stream_occupancy}};
  out << a.dump() << '\n';

  ordered_json k{{"record", "controller"},
                 {"gather_cycles", m.gather_cycles},
                 {"softmax_cycles", m.softmax_cycles},
                 {"readout_cycles", m.readout_cycles}};
  out << k.dump() << '\n';

  ordered_json t{{"record", "endtoend"},
                 {"flows_per_block", m.flows_per_block},
                 {"blocks", m.blocks},
                 {"flows_processed", m.flows_processed},
                 {"flows_leftover", m.flows_leftover},
                 {"first_start_ps", m.first_start_ps},
                 {"last_end_ps", m.last_end_ps},
                 {"flows_per_s", m.flows_per_s},
                 {"latency_ns", {{"min", m.lat_min_ns}, {"mean", m.lat_mean_ns}, {"max", m.lat_max_ns}}},
                 {"kernel_ns",
                  {{"min", m.kernel_min_ns}, {"mean", m.kernel_mean_ns}, {"max", m.kernel_max_ns}}}};
  out << t.dump() << '\n';

  ordered_json o{{"record", "oracle"},
                 {"ran", m.oracle_ran},
                 {"ok", m.oracle_ok},
                 {"feature_words_checked", m.feature_words_checked},
                 {"boundary_bytes_checked", m.boundary_bytes_checked},
                 {"first_divergence", m.first_divergence}};
  out << o.dump() << '\n';
  return out.str();
}

std::string summary_text(const driver::UseCaseConfig& cfg, const driver::Metrics& m) {
  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(3);
  o << "run: " << cfg.name << "  (config hash " << std::hex << m.config_hash << std::dec
    << ")\n";
  o << "granularity: " << (cfg.packet ? "packet" : "flow") << "   array k: " << cfg.k
    << "   collaboration: " << (cfg.collab ? "on" : "off") << "\n\n";

  o << "extractor @" << double(cfg.extractor_hz) / 1e6 << " MHz\n";
  o << "  packets          " << m.packets << "\n";
  o << "  busy cycles      " << m.busy_cycles << "\n";
  o << "  modeled rate     " << m.modeled_mpkts << " Mpkt/s (worst case " << m.worst_case_mpkts
    << ")\n";
  o << "  collisions       " << m.collisions << "   frozen drops " << m.frozen_drops << "\n";
  o << "  flows ready      " << m.flows_ready << "   occupancy peak " << m.occupancy_peak
    << "\n\n";

  o << "compute @" << double(cfg.compute_hz) / 1e6 << " MHz\n";
  o << "  vector engine    " << m.vpe_programs << " programs, " << m.vpe_busy_cycles
    << " busy cycles, " << m.vpe_macs << " MACs (util " << 100.0 * m.vpe_mac_util << "%)\n";
  o << "  array engine     ld/mm/agg cycles " << m.ary_ld_cycles << "/" << m.ary_mm_cycles
    << "/" << m.ary_agg_cycles << "\n";
  o << "  array efficiency " << 100.0 * m.ary_efficiency << "%   stream occupancy "
    << 100.0 * m.ary_stream_occupancy << "%\n";
  o << "  controller       gather/softmax/readout cycles " << m.gather_cycles << "/"
    << m.softmax_cycles << "/" << m.readout_cycles << "\n\n";

  o << "end to end\n";
  o << "  blocks           " << m.blocks << " x " << m.flows_per_block << " flows ("
    << m.flows_processed << " processed, " << m.flows_leftover << " leftover)\n";
  o << "  throughput       " << m.flows_per_s << " " << (cfg.packet ? "pkt" : "flow")
    << "/s\n";
  o << "  decision latency " << m.lat_min_ns << " / " << m.lat_mean_ns << " / " << m.lat_max_ns
    << " ns (min/mean/max)\n";
  if (cfg.packet)
    o << "  compute kernel   " << m.kernel_min_ns << " / " << m.kernel_mean_ns << " / "
      << m.kernel_max_ns << " ns (min/mean/max)\n";
  o << "  oracle           "
    << (!m.oracle_ran ? "skipped" : (m.oracle_ok ? "ok" : ("FAIL " + m.first_divergence)))
    << " (" << m.feature_words_checked << " feature words, " << m.boundary_bytes_checked
    << " boundary bytes)\n";
  return o.str();
}

std::string decisions_jsonl(const std::vector<ctrl::Verdict>& verdicts) {
  std::ostringstream out;
  for (const auto& v : verdicts) {
    ordered_json j{{"tuple", tuple_str(v.tuple)},
                   {"flow", v.flow},
                   {"label", v.label},
                   {"scores", v.scores},
                   {"done_ps", v.done_ps},
                   {"arrival_ns", v.arrival_ns}};
    out << j.dump() << '\n';
  }
  return out.str();
}

std::string layout_json(const compiler::CompiledBundle& b) {
  ordered_json j;
  j["flows_per_block"] = b.flows_per_block;
  j["k"] = b.k;
  j["collab"] = b.collab;
  j["packet"] = b.packet;
  j["regions"] = ordered_json::array();
  for (const auto& r : b.regions)
    j["regions"].push_back({{"name", r.name},
                            {"bank", fabric::bank_name(r.bank)},
                            {"base_word", r.base_word},
                            {"words", r.words},
                            {"zero", r.zero}});
  j["stage_buffers"] = ordered_json::array();
  for (const auto& sb : b.buffers)
    j["stage_buffers"].push_back({{"stage", sb.stage},
                                  {"bank", fabric::bank_name(sb.base.bank)},
                                  {"byte", sb.base.byte},
                                  {"row_bytes", sb.row_bytes},
                                  {"row_stride", sb.row_stride},
                                  {"rows_per_flow", sb.rows_per_flow},
                                  {"flow_stride", sb.flow_stride}});
  return j.dump(2) + "\n";
}

void write_reports(const std::string& dir, const driver::UseCaseConfig& cfg,
                   const driver::Metrics& m, const std::vector<ctrl::Verdict>& verdicts,
                   const compiler::CompiledBundle& b) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(Err::IoError, "cannot create '" + dir + "': " + ec.message());
  const std::filesystem::path base(dir);
  write_file(base / "config.json", driver::config_json(cfg) + "\n");
  write_file(base / "metrics.jsonl", metrics_jsonl(cfg, m));
  write_file(base / "summary.txt", summary_text(cfg, m));
  write_file(base / "decisions.jsonl", decisions_jsonl(verdicts));
  write_file(base / "layout.json", layout_json(b));
  std::string vs, as;
  for (std::size_t i = 0; i < b.vpe_programs.size(); ++i) {
    vs += "# program " + std::to_string(i) + "\n";
    vs += asmtext::emit(b.vpe_programs[i]);
    vs += "\n";
  }
  for (std::size_t i = 0; i < b.ary_programs.size(); ++i) {
    as += "# program " + std::to_string(i) + "\n";
    as += asmtext::emit(b.ary_programs[i]);
    as += "\n";
  }
  write_file(base / "vpe.s", vs);
  write_file(base / "arype.s", as);
}

}  // namespace ina::report
