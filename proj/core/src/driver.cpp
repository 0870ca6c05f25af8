#include "ina/driver.hpp"

#include <algorithm>
#include <fstream>
#include <limits>

#include "json.hpp"

#include "ina/arype.hpp"
#include "ina/fabric.hpp"
#include "ina/numeric.hpp"
#include "ina/oracle.hpp"
#include "ina/report.hpp"
#include "ina/vpe.hpp"

namespace ina::driver {

using nlohmann::ordered_json;

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (const unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

const char* capture_name(extractor::Capture c) {
  switch (c) {
    case extractor::Capture::AluWord:
      return "alu_word";
    case extractor::Capture::IntervalVector:
      return "interval_vector";
    case extractor::Capture::PayloadRows:
      return "payload_rows";
  }
  return "alu_word";
}

extractor::Capture capture_from(const std::string& s) {
  if (s == "alu_word") return extractor::Capture::AluWord;
  if (s == "interval_vector") return extractor::Capture::IntervalVector;
  if (s == "payload_rows") return extractor::Capture::PayloadRows;
  fail(Err::ConfigError, "unknown capture mode '" + s + "'");
}

template <typename T>
void take(const ordered_json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void check_keys(const ordered_json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(),
                     [&](const char* a) { return key == a; }) == allowed.end())
      fail(Err::ConfigError, "unknown config key '" + key + "' in " + where);
  }
}

}  // namespace

UseCaseConfig preset(const std::string& name, std::uint64_t seed) {
  UseCaseConfig c;
  c.name = name;
  c.builtin = name;
  c.model_seed = seed;
  c.synth.seed = seed;
  if (name == "usecase1") {
    // Per-packet MLP over the packed meta features (size, interval,
    // direction, flags = 6 bytes).
    c.packet = true;
    c.threshold_n = 1;
    c.capture = extractor::Capture::AluWord;
    c.feature_ids = {1, 3, 4, 28};
    c.synth.flow_count = 250;
    c.synth.packets_per_flow = 4;
    c.synth.intv_min_us = 50;
    c.synth.intv_max_us = 200;
  } else if (name == "usecase2") {
    // Flow CNN over the first 20 inter-arrival samples (us >> 3).
    c.threshold_n = 20;
    c.capture = extractor::Capture::IntervalVector;
    c.interval_shift = 3;
    c.synth.flow_count = 1000;
    c.synth.packets_per_flow = 20;
    c.synth.intv_min_us = 1;
    c.synth.intv_max_us = 800;
  } else if (name == "usecase3") {
    // Flow transformer over the first 15 payload rows (16 bytes each).
    c.threshold_n = 15;
    c.capture = extractor::Capture::PayloadRows;
    c.synth.flow_count = 200;
    c.synth.packets_per_flow = 15;
    c.synth.intv_min_us = 1;
    c.synth.intv_max_us = 100;
  } else {
    fail(Err::ConfigError, "unknown preset '" + name + "'");
  }
  return c;
}

std::string config_json(const UseCaseConfig& c) {
  ordered_json j;
  j["name"] = c.name;
  j["model"] = {{"manifest", c.model_manifest}, {"builtin", c.builtin}, {"seed", c.model_seed}};
  j["traffic"] = {{"pcap", c.pcap},
                  {"flows", c.synth.flow_count},
                  {"packets_per_flow", c.synth.packets_per_flow},
                  {"size_min", c.synth.size_min},
                  {"size_max", c.synth.size_max},
                  {"intv_min_us", c.synth.intv_min_us},
                  {"intv_max_us", c.synth.intv_max_us},
                  {"seed", c.synth.seed},
                  {"interleave", c.synth.interleave == traffic::Interleave::RoundRobin
                                     ? "round_robin"
                                     : "sequential"}};
  j["extractor"] = {{"packet", c.packet},
                    {"threshold", c.threshold_n},
                    {"capture", capture_name(c.capture)},
                    {"interval_shift", c.interval_shift},
                    {"feature_ids", c.feature_ids},
                    {"table_depth", c.table_depth},
                    {"clock_hz", c.extractor_hz}};
  j["compute"] = {{"k", c.k},
                  {"collab", c.collab},
                  {"max_block", c.max_block},
                  {"clock_hz", c.compute_hz}};
  j["oracle"] = c.oracle;
  j["out_dir"] = c.out_dir;
  return j.dump(2);
}

UseCaseConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Err::IoError, "cannot open config '" + path + "'");
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const std::exception& e) {
    fail(Err::ConfigError, "config parse error: " + std::string(e.what()));
  }
  try {
    UseCaseConfig c;
    check_keys(j, {"name", "model", "traffic", "extractor", "compute", "oracle", "out_dir"},
               "the top level");
    take(j, "name", c.name);
    if (j.contains("model")) {
      const auto& m = j.at("model");
      check_keys(m, {"manifest", "builtin", "seed"}, "model");
      take(m, "manifest", c.model_manifest);
      take(m, "builtin", c.builtin);
      take(m, "seed", c.model_seed);
    }
    if (j.contains("traffic")) {
      const auto& t = j.at("traffic");
      check_keys(t,
                 {"pcap", "flows", "packets_per_flow", "size_min", "size_max", "intv_min_us",
                  "intv_max_us", "seed", "interleave"},
                 "traffic");
      take(t, "pcap", c.pcap);
      take(t, "flows", c.synth.flow_count);
      take(t, "packets_per_flow", c.synth.packets_per_flow);
      take(t, "size_min", c.synth.size_min);
      take(t, "size_max", c.synth.size_max);
      take(t, "intv_min_us", c.synth.intv_min_us);
      take(t, "intv_max_us", c.synth.intv_max_us);
      take(t, "seed", c.synth.seed);
      if (t.contains("interleave")) {
        const std::string s = t.at("interleave").get<std::string>();
        if (s == "round_robin")
          c.synth.interleave = traffic::Interleave::RoundRobin;
        else if (s == "sequential")
          c.synth.interleave = traffic::Interleave::Sequential;
        else
          fail(Err::ConfigError, "unknown interleave '" + s + "'");
      }
    }
    if (j.contains("extractor")) {
      const auto& e = j.at("extractor");
      check_keys(e,
                 {"packet", "threshold", "capture", "interval_shift", "feature_ids",
                  "table_depth", "clock_hz"},
                 "extractor");
      take(e, "packet", c.packet);
      take(e, "threshold", c.threshold_n);
      if (e.contains("capture")) c.capture = capture_from(e.at("capture").get<std::string>());
      unsigned shift = c.interval_shift;
      take(e, "interval_shift", shift);
      c.interval_shift = std::uint8_t(shift);
      take(e, "feature_ids", c.feature_ids);
      take(e, "table_depth", c.table_depth);
      take(e, "clock_hz", c.extractor_hz);
    }
    if (j.contains("compute")) {
      const auto& k = j.at("compute");
      check_keys(k, {"k", "collab", "max_block", "clock_hz"}, "compute");
      take(k, "k", c.k);
      take(k, "collab", c.collab);
      take(k, "max_block", c.max_block);
      take(k, "clock_hz", c.compute_hz);
    }
    take(j, "oracle", c.oracle);
    take(j, "out_dir", c.out_dir);
    if (c.packet) c.threshold_n = 1;
    return c;
  } catch (const SimError&) {
    throw;
  } catch (const std::exception& e) {
    fail(Err::ConfigError, "config field error: " + std::string(e.what()));
  }
}

model::ModelIR resolve_model(const UseCaseConfig& c) {
  if (!c.model_manifest.empty()) return model::load(c.model_manifest);
  if (c.builtin == "usecase1") return model::make_usecase1(c.model_seed);
  if (c.builtin == "usecase2") return model::make_usecase2(c.model_seed);
  if (c.builtin == "usecase3") return model::make_usecase3(c.model_seed);
  fail(Err::ConfigError, "config names neither a model manifest nor a known builtin");
}

RunResult run(const UseCaseConfig& cfg) {
  const model::ModelIR ir = resolve_model(cfg);

  // --- traffic -------------------------------------------------------------
  std::vector<traffic::RawPacket> raw =
      cfg.pcap.empty() ? traffic::generate_trace(cfg.synth) : traffic::read_pcap(cfg.pcap);
  std::vector<traffic::ParsedHeader> trace;
  trace.reserve(raw.size());
  for (const auto& p : raw) trace.push_back(traffic::parse_packet(p));

  // --- system construction -------------------------------------------------
  fabric::Fabric fab{fabric::FabricConfig{}};

  extractor::ExtractorConfig ecfg;
  ecfg.table_depth = cfg.table_depth;
  ecfg.threshold_n = cfg.packet ? 1 : cfg.threshold_n;
  ecfg.packet_mode = cfg.packet;
  ecfg.capture = cfg.capture;
  ecfg.interval_shift = cfg.interval_shift;
  ecfg.program = extractor::feature_program(cfg.feature_ids).program;
  ecfg.clock_hz = cfg.extractor_hz;
  extractor::Extractor ext(ecfg, fab);

  oracle::FeatureGolden golden(ecfg, ext.effective_depth(), ext.words_per_flow());

  compiler::CompileConfig cc;
  cc.k = cfg.k;
  cc.collab = cfg.collab;
  cc.packet = cfg.packet;
  cc.max_block = cfg.max_block;
  cc.flows = cfg.packet ? 1 : std::max<unsigned>(1, cfg.synth.flow_count);
  if (!cfg.pcap.empty() && !cfg.packet) {
    // Provision for the distinct flows actually present in the capture.
    std::vector<traffic::FiveTuple> seen;
    for (const auto& h : trace) {
      const auto canon = h.tuple.canonical();
      if (std::find(seen.begin(), seen.end(), canon) == seen.end()) seen.push_back(canon);
    }
    cc.flows = std::max<unsigned>(1, unsigned(seen.size()));
  }
  cc.vpe.clock_hz = cfg.compute_hz;
  cc.ary.clock_hz = cfg.compute_hz;
  cc.ary.k = cfg.k;

  RunResult rr;
  rr.bundle = compiler::compile(ir, cc);
  const compiler::CompiledBundle& bundle = rr.bundle;

  vpe::Vpe vp(cc.vpe, fab);
  arype::AryPe ap(cc.ary, fab);
  ctrl::Controller con(bundle, fab, vp, ap);
  con.init();

  Metrics& m = rr.metrics;
  m.config_hash = fnv1a(config_json(cfg));
  m.flows_per_block = bundle.flows_per_block;
  m.oracle_ran = cfg.oracle;

  // --- ingest --------------------------------------------------------------
  for (const auto& h : trace) {
    ext.ingest(h);
    if (cfg.oracle) golden.ingest(h);
  }
  fab.commit_all();

  const unsigned bytes_per_input = bundle.qm.input_len * bundle.qm.input_ch;
  const unsigned B = bundle.flows_per_block;

  // --- block loop ----------------------------------------------------------
  std::uint64_t lane[2] = {0, 0};
  std::uint64_t busy_span_ps = 0;
  std::vector<std::uint64_t> kernel_ps;
  std::vector<double> lat_ns;
  std::size_t verdict_base = 0;

  while (B > 0 && ext.ready_size() >= B) {
    std::vector<extractor::ReadyEntry> entries;
    std::vector<ctrl::FlowBinding> binds;
    entries.reserve(B);
    binds.reserve(B);
    for (unsigned f = 0; f < B; ++f) {
      extractor::ReadyEntry e = ext.pop_ready();
      if (cfg.oracle) {
        oracle::GoldenReady g = golden.pop_ready();
        if (!(g.tuple == e.tuple) || g.slot != e.slot)
          fail(Err::OracleMismatch, "ready-flow order diverges from the golden model");
        const auto& store = fab.bank(fabric::BankId::Feature).committed();
        for (std::uint32_t w = 0; w < e.words; ++w) {
          const Word16& got = store.at(e.base_word + w);
          const Word16& want = g.words.at(w);
          if (got != want) {
            std::size_t i = 0;
            while (i < 16 && got[i] == want[i]) ++i;
            fail(Err::OracleMismatch,
                 "feature word " + std::to_string(w) + " byte " + std::to_string(i) +
                     " of slot " + std::to_string(e.slot) + ": got " +
                     std::to_string(int(got[i])) + ", golden " + std::to_string(int(want[i])));
          }
        }
        m.feature_words_checked += e.words;
      }
      ctrl::FlowBinding fb;
      fb.tuple = e.tuple;
      fb.slot = e.slot;
      fb.capture = {fabric::BankId::Feature, e.base_word * fabric::kWordBytes};
      fb.words = e.words;
      fb.ready_ps = e.ready_ps;
      fb.last_arrival_ns = e.last_arrival_ns;
      entries.push_back(e);
      binds.push_back(fb);
    }

    const std::uint64_t barrier = std::max(lane[0], lane[1]);
    con.begin_block(barrier + 1);

    std::vector<std::uint64_t> end(bundle.nodes.size(), 0);
    std::uint64_t bstart = std::numeric_limits<std::uint64_t>::max(), bend = 0;
    std::vector<bool> readout_colsum(B, false);
    for (std::size_t i = 0; i < bundle.nodes.size(); ++i) {
      const compiler::LaunchNode& n = bundle.nodes[i];
      const int L = n.kind == compiler::NodeKind::Ary ? 0 : 1;
      std::uint64_t s = std::max(lane[L], barrier);
      for (const std::int32_t d : n.deps) {
        if (d < 0 || std::size_t(d) >= i)
          fail(Err::Deadlock, "node '" + n.label + "' depends on a later node");
        s = std::max(s, end[std::size_t(d)]);
      }
      const ctrl::FlowBinding* fb = nullptr;
      if (n.flow >= 0) {
        if (std::size_t(n.flow) >= binds.size())
          fail(Err::BadIndex, "node '" + n.label + "' binds a flow outside the block");
        fb = &binds[std::size_t(n.flow)];
        s = std::max(s, fb->ready_ps);
      }
      const std::uint64_t e = con.exec(n, s, fb);
      if (bundle.packet && n.kind == compiler::NodeKind::Vpe && n.prog >= 0)
        kernel_ps.push_back(e - s);
      if (n.kind == compiler::NodeKind::Readout && n.flow >= 0)
        readout_colsum[std::size_t(n.flow)] = n.colsum;
      end[i] = e;
      lane[L] = e;
      bstart = std::min(bstart, s);
      bend = std::max(bend, e);
    }
    if (m.blocks == 0) m.first_start_ps = bstart;
    m.last_end_ps = std::max(m.last_end_ps, bend);
    busy_span_ps += bend - bstart;
    fab.commit_all();

    if (cfg.oracle) {
      std::vector<std::vector<std::int8_t>> inputs(B);
      std::vector<unsigned> flow_ids(B);
      for (unsigned f = 0; f < B; ++f) {
        const auto bytes = oracle::peek_bytes(fab, binds[f].capture, bytes_per_input);
        inputs[f].assign(bytes.begin(), bytes.end());
        flow_ids[f] = f;
      }
      const oracle::CompareResult cr = oracle::compare_block(bundle, fab, inputs, flow_ids);
      m.boundary_bytes_checked += cr.bytes_checked;
      if (!cr.ok) {
        const auto& d = cr.first;
        m.oracle_ok = false;
        m.first_divergence = "stage " + std::to_string(d.stage) + " flow " +
                             std::to_string(d.flow) + " row " + std::to_string(d.row) +
                             " col " + std::to_string(d.col) + ": got " +
                             std::to_string(d.got) + ", reference " + std::to_string(d.want);
        fail(Err::OracleMismatch, m.first_divergence);
      }
      for (std::size_t vi = verdict_base; vi < con.verdicts().size(); ++vi) {
        const ctrl::Verdict& v = con.verdicts()[vi];
        if (v.flow < 0 || unsigned(v.flow) >= B) fail(Err::BadIndex, "verdict flow out of range");
        const auto ref = oracle::reference_forward(bundle.qm, inputs[std::size_t(v.flow)]);
        const auto want = oracle::verdict_scores(ref.back(), readout_colsum[std::size_t(v.flow)]);
        if (v.scores != want || v.label != oracle::argmax_label(want))
          fail(Err::OracleMismatch,
               "verdict for flow " + std::to_string(v.flow) + " diverges from the reference");
      }
    }
    verdict_base = con.verdicts().size();

    for (const auto& e : entries) {
      ext.recycle(e.slot);
      if (cfg.oracle) golden.recycle();
    }
    m.blocks++;
    m.flows_processed += B;
  }

  // --- metrics -------------------------------------------------------------
  const auto& es = ext.stats();
  m.packets = es.packets;
  m.busy_cycles = es.busy_cycles;
  m.collisions = es.collisions;
  m.frozen_drops = es.frozen_drops;
  m.flows_ready = es.ready;
  m.flows_leftover = ext.ready_size();
  m.occupancy_peak = es.occupancy_peak;
  m.modeled_mpkts = ext.modeled_pkt_rate() / 1e6;
  m.worst_case_mpkts = ext.worst_case_pkt_rate() / 1e6;

  const auto& vs = vp.stats();
  m.vpe_programs = vs.programs;
  m.vpe_busy_cycles = vs.busy_cycles;
  m.vpe_macs = vs.macs;
  m.vpe_mem_bytes = vs.mem_bytes;
  m.vpe_mac_util = vs.busy_cycles ? double(vs.macs) / (8.0 * double(vs.busy_cycles)) : 0.0;

  const auto& as = ap.stats();
  m.ary_ld_cycles = as.ld_cycles;
  m.ary_mm_cycles = as.mm_cycles;
  m.ary_agg_cycles = as.agg_cycles;
  m.ary_active_macs = as.active_macs;
  m.ary_stream_rows = as.stream_rows;
  const double cells = double(cfg.k) * double(cfg.k);
  const std::uint64_t ary_busy = as.ld_cycles + as.mm_cycles + as.agg_cycles;
  m.ary_efficiency = ary_busy ? double(as.active_macs) / (cells * double(ary_busy)) : 0.0;
  m.ary_stream_occupancy =
      as.stream_rows ? double(as.active_macs) / (cells * double(as.stream_rows)) : 0.0;

  const auto& cs = con.stats();
  m.gather_cycles = cs.gather_cycles;
  m.softmax_cycles = cs.softmax_cycles;
  m.readout_cycles = cs.readout_cycles;

  if (busy_span_ps > 0)
    m.flows_per_s = double(m.flows_processed) / (double(busy_span_ps) * 1e-12);

  for (const ctrl::Verdict& v : con.verdicts())
    lat_ns.push_back(double(v.done_ps) / 1000.0 - double(v.arrival_ns));
  if (!lat_ns.empty()) {
    m.lat_min_ns = *std::min_element(lat_ns.begin(), lat_ns.end());
    m.lat_max_ns = *std::max_element(lat_ns.begin(), lat_ns.end());
    double sum = 0;
    for (const double v : lat_ns) sum += v;
    m.lat_mean_ns = sum / double(lat_ns.size());
  }
  if (!kernel_ps.empty()) {
    std::uint64_t mn = kernel_ps[0], mx = kernel_ps[0], sum = 0;
    for (const std::uint64_t v : kernel_ps) {
      mn = std::min(mn, v);
      mx = std::max(mx, v);
      sum += v;
    }
    m.kernel_min_ns = double(mn) / 1000.0;
    m.kernel_max_ns = double(mx) / 1000.0;
    m.kernel_mean_ns = double(sum) / double(kernel_ps.size()) / 1000.0;
  }

  rr.verdicts = con.verdicts();
  if (!cfg.out_dir.empty()) report::write_reports(cfg.out_dir, cfg, m, rr.verdicts, bundle);
  return rr;
}

}  // namespace ina::driver
