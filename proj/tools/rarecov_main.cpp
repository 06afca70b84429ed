// SPDX-License-Identifier: Apache-2.0
//
// rarecov: rare-event trust verification for RTL designs.
//
//   rarecov analyze  --config cfg.json          signal statistics + rarity partition
//   rarecov trace    --config cfg.json --all-rare | --signal NAME...
//   rarecov events   --config cfg.json          build the event database
//   rarecov generate --config cfg.json [--event ID]...
//   rarecov detect   --config cfg.json          diff test traces against golden
//   rarecov report   --config cfg.json          coverage tables and bucket curves
//   rarecov pipeline --config cfg.json          all stages, resumable via markers
//
// Exit codes: 0 success, 1 finished with skips/aborts, 2 configuration or
// input error, 3 environment error (missing tool, unwritable work dir,
// unreachable provider).

#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rarecov/config.hpp"
#include "rarecov/pipeline.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::string work_dir;
  std::string format;
  std::string tier;
  int budget = 0;
  int verbosity = -1;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "run configuration (JSON)")
      ->required();
  cmd->add_option("--work-dir", f.work_dir, "override output directory");
  cmd->add_option("--format", f.format, "table print format: json|csv");
  cmd->add_option("--tier", f.tier, "prompt strategy tier: T1..T4");
  cmd->add_option("--budget", f.budget, "iteration budget per event");
  cmd->add_option("--verbosity", f.verbosity, "0 silent, 1 progress");
}

rarecov::config::RunConfig load(const CommonFlags& f) {
  auto cfg = rarecov::config::load_config(f.config_path);
  if (!f.work_dir.empty()) {
    cfg.work_dir = f.work_dir;
    cfg.event_db_path = cfg.work_dir + "/events.json";
    cfg.exemplar_pool_path = cfg.work_dir + "/exemplar_pool.json";
    cfg.toolchain.work_dir = cfg.work_dir + "/toolchain";
  }
  if (!f.format.empty()) {
    if (f.format != "json" && f.format != "csv")
      throw rarecov::config::ConfigError("output.format", "must be 'json' or 'csv'");
    cfg.format = f.format;
  }
  if (!f.tier.empty()) {
    rarecov::agent::parse_tier(f.tier);  // validates
    cfg.tier = f.tier;
  }
  if (f.budget > 0) cfg.budget = f.budget;
  if (f.verbosity >= 0) cfg.verbosity = f.verbosity;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rare microarchitectural event coverage toolkit"};
  app.require_subcommand(1);

  CommonFlags flags;
  std::vector<std::string> signals;
  bool all_rare = false;
  std::vector<std::string> event_selectors;

  auto* c_analyze = app.add_subcommand("analyze", "signal statistics and rarity partition");
  add_common(c_analyze, flags);
  auto* c_trace = app.add_subcommand("trace", "fan-in cones for chosen signals");
  add_common(c_trace, flags);
  c_trace->add_option("--signal", signals, "signal to trace (repeatable)");
  c_trace->add_flag("--all-rare", all_rare, "trace every rare signal");
  auto* c_events = app.add_subcommand("events", "build the event database");
  add_common(c_events, flags);
  auto* c_generate = app.add_subcommand("generate", "agent-driven test program generation");
  add_common(c_generate, flags);
  c_generate->add_option("--event", event_selectors, "event id or name (repeatable)");
  auto* c_detect = app.add_subcommand("detect", "trace differencing against golden");
  add_common(c_detect, flags);
  auto* c_report = app.add_subcommand("report", "coverage tables and bucket curves");
  add_common(c_report, flags);
  auto* c_pipeline = app.add_subcommand("pipeline", "all stages end to end, resumable");
  add_common(c_pipeline, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : rarecov::pipeline::kConfigError;
  }

  namespace rp = rarecov::pipeline;
  try {
    auto cfg = load(flags);
    if (c_analyze->parsed()) return rp::cmd_analyze(cfg);
    if (c_trace->parsed()) return rp::cmd_trace(cfg, signals, all_rare);
    if (c_events->parsed()) return rp::cmd_events(cfg);
    if (c_generate->parsed()) return rp::cmd_generate(cfg, event_selectors);
    if (c_detect->parsed()) return rp::cmd_detect(cfg);
    if (c_report->parsed()) return rp::cmd_report(cfg);
    if (c_pipeline->parsed()) return rp::cmd_pipeline(cfg);
    std::cerr << "error: no command\n";
    return rp::kConfigError;
  } catch (const rarecov::config::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return rp::kConfigError;
  } catch (const rp::InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return rp::kConfigError;
  } catch (const rarecov::toolchain::ToolNotFound& e) {
    std::cerr << "error: " << e.what() << "\n";
    return rp::kEnvError;
  } catch (const rarecov::toolchain::WorkDirUnwritable& e) {
    std::cerr << "error: " << e.what() << "\n";
    return rp::kEnvError;
  } catch (const rarecov::agent::ProviderError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return rp::kEnvError;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return rp::kEnvError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return rp::kConfigError;
  }
}
