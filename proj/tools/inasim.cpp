// Command-line harness around the simulator library.
//
//   inasim run    --preset usecase2 [--collab off --flows 1000 --seed 3 ...]
//   inasim run    --config my.json --out results/
//   inasim config --preset usecase3            # print the canonical JSON
//   inasim model  --preset usecase1 --out dir  # write manifest + weight blob
//   inasim trace  --flows 50 --packets 20 --out t.pcap
//   inasim asm    --preset usecase2 [--collab off]   # dump engine programs
//
// Exit codes: 0 success, 2 oracle mismatch, 3 bad config, 1 other failure.

#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "ina/asm_text.hpp"
#include "ina/common.hpp"
#include "ina/driver.hpp"
#include "ina/model.hpp"
#include "ina/report.hpp"
#include "ina/traffic.hpp"

namespace {

struct RunOpts {
  std::string config, preset_name;
  std::string collab, oracle;
  std::uint64_t seed = 0;
  bool has_seed = false;
  unsigned flows = 0;
  std::string out_dir;
  unsigned k = 0;
};

ina::driver::UseCaseConfig make_config(const RunOpts& o) {
  using ina::Err;
  if (o.config.empty() == o.preset_name.empty())
    ina::fail(Err::ConfigError, "pass exactly one of --config or --preset");
  ina::driver::UseCaseConfig cfg = !o.config.empty()
                                       ? ina::driver::load_config(o.config)
                                       : ina::driver::preset(o.preset_name, 1);
  if (o.has_seed) {
    cfg.synth.seed = o.seed;
    cfg.model_seed = o.seed;
  }
  if (!o.collab.empty()) cfg.collab = o.collab == "on";
  if (!o.oracle.empty()) cfg.oracle = o.oracle == "on";
  if (o.flows > 0) cfg.synth.flow_count = o.flows;
  if (o.k > 0) cfg.k = o.k;
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  return cfg;
}

void add_run_opts(CLI::App* cmd, RunOpts& o) {
  cmd->add_option("--config", o.config, "JSON config file");
  cmd->add_option("--preset", o.preset_name, "built-in config: usecase1|usecase2|usecase3");
  cmd->add_option("--collab", o.collab, "override collaboration (on|off)")
      ->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--oracle", o.oracle, "override oracle verification (on|off)")
      ->check(CLI::IsMember({"on", "off"}));
  cmd->add_option("--flows", o.flows, "override synthetic flow count");
  cmd->add_option("--k", o.k, "override array/tile width");
  cmd->add_option("--seed", o.seed, "override traffic and weight seed")
      ->each([&](const std::string&) { o.has_seed = true; });
  cmd->add_option("--out", o.out_dir, "write report files to this directory");
}

int dispatch(CLI::App& app, const RunOpts& ro, const std::string& model_preset,
             const std::string& model_out, std::uint64_t model_seed,
             const ina::traffic::SyntheticFlowSpec& tspec, const std::string& trace_out) {
  if (app.got_subcommand("run")) {
    const auto cfg = make_config(ro);
    const auto rr = ina::driver::run(cfg);
    std::cout << ina::report::summary_text(cfg, rr.metrics);
    return 0;
  }
  if (app.got_subcommand("config")) {
    const auto cfg = make_config(ro);
    std::cout << ina::driver::config_json(cfg) << "\n";
    return 0;
  }
  if (app.got_subcommand("model")) {
    ina::model::ModelIR ir;
    if (model_preset == "usecase1")
      ir = ina::model::make_usecase1(model_seed);
    else if (model_preset == "usecase2")
      ir = ina::model::make_usecase2(model_seed);
    else if (model_preset == "usecase3")
      ir = ina::model::make_usecase3(model_seed);
    else
      ina::fail(ina::Err::ConfigError, "unknown model preset '" + model_preset + "'");
    ina::model::save(ir, model_out);
    std::cout << "wrote " << model_out << "/" << ir.name << ".json\n";
    return 0;
  }
  if (app.got_subcommand("trace")) {
    const auto pkts = ina::traffic::generate_trace(tspec);
    ina::traffic::write_pcap(trace_out, pkts);
    std::cout << "wrote " << pkts.size() << " packets to " << trace_out << "\n";
    return 0;
  }
  if (app.got_subcommand("asm")) {
    auto cfg = make_config(ro);
    cfg.oracle = false;
    const auto ir = ina::driver::resolve_model(cfg);
    ina::compiler::CompileConfig cc;
    cc.k = cfg.k;
    cc.collab = cfg.collab;
    cc.packet = cfg.packet;
    cc.max_block = cfg.max_block;
    cc.flows = cfg.packet ? 1 : std::max<unsigned>(1, cfg.synth.flow_count);
    cc.ary.k = cfg.k;
    const auto bundle = ina::compiler::compile(ir, cc);
    for (std::size_t i = 0; i < bundle.vpe_programs.size(); ++i)
      std::cout << "# vpe program " << i << "\n"
                << ina::asmtext::emit(bundle.vpe_programs[i]) << "\n";
    for (std::size_t i = 0; i < bundle.ary_programs.size(); ++i)
      std::cout << "# arype program " << i << "\n"
                << ina::asmtext::emit(bundle.ary_programs[i]) << "\n";
    return 0;
  }
  std::cout << app.help();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cycle-approximate simulator of an in-network inference accelerator"};
  app.require_subcommand(0, 1);

  RunOpts ro;
  auto* run_cmd = app.add_subcommand("run", "simulate a full use case and report metrics");
  add_run_opts(run_cmd, ro);
  auto* cfg_cmd = app.add_subcommand("config", "print the resolved config as canonical JSON");
  add_run_opts(cfg_cmd, ro);

  std::string model_preset = "usecase1", model_out = ".";
  std::uint64_t model_seed = 7;
  auto* model_cmd = app.add_subcommand("model", "write a built-in model to disk");
  model_cmd->add_option("--preset", model_preset, "usecase1|usecase2|usecase3");
  model_cmd->add_option("--out", model_out, "output directory");
  model_cmd->add_option("--seed", model_seed, "weight seed");

  ina::traffic::SyntheticFlowSpec tspec;
  std::string trace_out = "trace.pcap";
  auto* trace_cmd = app.add_subcommand("trace", "write a synthetic trace as pcap");
  trace_cmd->add_option("--flows", tspec.flow_count, "flow count");
  trace_cmd->add_option("--packets", tspec.packets_per_flow, "packets per flow");
  trace_cmd->add_option("--seed", tspec.seed, "trace seed");
  trace_cmd->add_option("--out", trace_out, "output pcap path");

  auto* asm_cmd = app.add_subcommand("asm", "dump the compiled engine programs");
  add_run_opts(asm_cmd, ro);

  (void)run_cmd;
  (void)cfg_cmd;
  (void)model_cmd;
  (void)asm_cmd;

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    return dispatch(app, ro, model_preset, model_out, model_seed, tspec, trace_out);
  } catch (const ina::SimError& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (e.code() == ina::Err::OracleMismatch) return 2;
    if (e.code() == ina::Err::ConfigError) return 3;
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
