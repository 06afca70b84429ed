// SPDX-License-Identifier: Apache-2.0
//
// One JSON configuration file drives every command. Relative paths resolve
// against the config file's directory so a checked-in config works from any
// working directory. Command-line flags override file values after load.

#pragma once

#include <cstdlib>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "rarecov/jsonio.hpp"
#include "rarecov/toolchain.hpp"

namespace rarecov::config {

struct ConfigError : std::runtime_error {
  std::string field;
  ConfigError(std::string f, const std::string& why)
      : std::runtime_error("config field '" + f + "': " + why), field(std::move(f)) {}
};

struct RunConfig {
  int schema_version = 1;
  std::string run_stamp = "1970-01-01T00:00:00Z";  // pins provenance timestamps

  // paths (resolved at load; *_given keeps the config's own text for when
  // a path is echoed into an output file)
  std::vector<std::string> rtl_sources;
  std::vector<std::string> benchmark_vcds;
  std::vector<std::string> benchmark_vcds_given;
  std::string isa_json;
  std::string isa_manual_ref = "isa_manual.pdf";  // prompt attachment id
  std::string work_dir = "out";
  std::string event_db_path;       // default work_dir/events.json
  std::string exemplar_pool_path;  // default work_dir/exemplar_pool.json
  std::string annotations_path;    // optional mock annotation source

  // rarity
  std::string sampling = "every";  // clock | every
  std::string clock;
  bool rising = true;
  std::vector<double> thresholds{0.05};
  std::vector<std::string> exclude_globs{"*clk*", "*clock*", "*rst*", "*reset*"};

  // trace
  int max_depth = 8;
  std::vector<std::string> stop_set;
  bool strict = false;
  bool include_sensitivity_signals = false;
  std::string top_override;

  // agent
  std::string tier = "T3";
  int budget = 6;
  std::string provider = "scripted";  // scripted | http
  std::string provider_script;
  std::string provider_host = "127.0.0.1";
  int provider_port = 8080;
  std::string provider_http_path = "/v1/complete";
  std::string provider_model = "default";
  double provider_timeout_s = 60.0;
  std::string constraints;
  std::string checklist_origin = "original";  // the shipped checklist wording

  // toolchain
  std::string toolchain_kind = "fake";  // fake | subprocess
  std::string fake_script;
  toolchain::ToolchainConfig toolchain;

  // coverage
  double table_threshold = 0.05;
  std::vector<double> theta_bucket_edges{0.0, 1e-4, 1e-2, 1.0};
  int sequence_length = 2;
  int sample_count = 5;
  uint64_t seed = 7;
  bool require_order = true;

  // output
  std::string format = "json";  // json | csv (csv additionally writes tables as CSV)
  int verbosity = 1;
};

namespace detail {

inline std::string resolve(const std::string& base, const std::string& p) {
  if (p.empty()) return p;
  std::filesystem::path fp(p);
  if (fp.is_absolute()) return p;
  return (std::filesystem::path(base) / fp).lexically_normal().string();
}

inline void require_exists(const std::string& field, const std::string& path) {
  if (!std::filesystem::exists(path))
    throw ConfigError(field, "path does not exist: " + path);
}

}  // namespace detail

/// Parse and validate a config file. Referenced input paths must exist;
/// threshold and bucket lists must be sorted; enumerations are checked here
/// so commands can assume a well-formed config.
inline RunConfig load_config(const std::string& config_path) {
  jsonio::json j;
  try {
    j = jsonio::parse_checked(jsonio::read_file(config_path));
  } catch (const std::exception& e) {
    throw ConfigError("$", e.what());
  }
  if (!j.is_object()) throw ConfigError("$", "top level must be an object");

  std::string base = std::filesystem::absolute(config_path).parent_path().string();
  RunConfig c;
  c.schema_version = j.value("schema_version", 1);
  if (c.schema_version != 1)
    throw ConfigError("schema_version", "unsupported version " + std::to_string(c.schema_version));
  c.run_stamp = j.value("run_stamp", c.run_stamp);

  const auto paths = j.value("paths", jsonio::json::object());
  for (const auto& s : paths.value("rtl_sources", std::vector<std::string>{}))
    c.rtl_sources.push_back(detail::resolve(base, s));
  for (const auto& s : paths.value("benchmark_vcds", std::vector<std::string>{})) {
    c.benchmark_vcds_given.push_back(s);
    c.benchmark_vcds.push_back(detail::resolve(base, s));
  }
  c.isa_json = detail::resolve(base, paths.value("isa_json", ""));
  c.isa_manual_ref = paths.value("isa_manual", c.isa_manual_ref);
  c.work_dir = detail::resolve(base, paths.value("work_dir", c.work_dir));
  c.event_db_path = detail::resolve(base, paths.value("event_db", ""));
  if (c.event_db_path.empty()) c.event_db_path = c.work_dir + "/events.json";
  c.exemplar_pool_path = detail::resolve(base, paths.value("exemplar_pool", ""));
  if (c.exemplar_pool_path.empty()) c.exemplar_pool_path = c.work_dir + "/exemplar_pool.json";
  c.annotations_path = detail::resolve(base, paths.value("annotations", ""));

  const auto rarity = j.value("rarity", jsonio::json::object());
  c.sampling = rarity.value("sampling", c.sampling);
  if (c.sampling != "clock" && c.sampling != "every")
    throw ConfigError("rarity.sampling", "must be 'clock' or 'every', got '" + c.sampling + "'");
  c.clock = rarity.value("clock", c.clock);
  if (c.sampling == "clock" && c.clock.empty())
    throw ConfigError("rarity.clock", "clock-edge sampling needs a clock name");
  c.rising = rarity.value("rising", c.rising);
  if (rarity.contains("thresholds"))
    c.thresholds = rarity["thresholds"].get<std::vector<double>>();
  if (c.thresholds.empty()) throw ConfigError("rarity.thresholds", "must be non-empty");
  for (size_t i = 0; i < c.thresholds.size(); ++i) {
    if (c.thresholds[i] < 0.0 || c.thresholds[i] > 1.0)
      throw ConfigError("rarity.thresholds", "entries must lie in [0,1]");
    if (i > 0 && c.thresholds[i] < c.thresholds[i - 1])
      throw ConfigError("rarity.thresholds", "must be sorted ascending");
  }
  if (rarity.contains("exclude"))
    c.exclude_globs = rarity["exclude"].get<std::vector<std::string>>();

  const auto trace = j.value("trace", jsonio::json::object());
  c.max_depth = trace.value("max_depth", c.max_depth);
  if (c.max_depth < 1) throw ConfigError("trace.max_depth", "must be >= 1");
  c.stop_set = trace.value("stop_set", c.stop_set);
  c.strict = trace.value("strict", c.strict);
  c.include_sensitivity_signals =
      trace.value("include_sensitivity_signals", c.include_sensitivity_signals);
  c.top_override = trace.value("top", c.top_override);

  const auto agent = j.value("agent", jsonio::json::object());
  c.tier = agent.value("tier", c.tier);
  if (c.tier != "T1" && c.tier != "T2" && c.tier != "T3" && c.tier != "T4")
    throw ConfigError("agent.tier", "must be one of T1..T4, got '" + c.tier + "'");
  c.budget = agent.value("budget", c.budget);
  if (c.budget < 1) throw ConfigError("agent.budget", "must be >= 1");
  c.provider = agent.value("provider", c.provider);
  if (c.provider != "scripted" && c.provider != "http")
    throw ConfigError("agent.provider", "must be 'scripted' or 'http'");
  c.provider_script = detail::resolve(base, agent.value("provider_script", ""));
  if (c.provider == "scripted" && c.provider_script.empty())
    throw ConfigError("agent.provider_script", "scripted provider needs a transcript path");
  const auto http = agent.value("http", jsonio::json::object());
  c.provider_host = http.value("host", c.provider_host);
  c.provider_port = http.value("port", c.provider_port);
  c.provider_http_path = http.value("path", c.provider_http_path);
  c.provider_model = http.value("model", c.provider_model);
  c.provider_timeout_s = http.value("timeout_s", c.provider_timeout_s);
  c.constraints = agent.value("constraints", c.constraints);
  c.checklist_origin = agent.value("checklist_origin", c.checklist_origin);

  const auto tc = j.value("toolchain", jsonio::json::object());
  c.toolchain_kind = tc.value("kind", c.toolchain_kind);
  if (c.toolchain_kind != "fake" && c.toolchain_kind != "subprocess")
    throw ConfigError("toolchain.kind", "must be 'fake' or 'subprocess'");
  c.fake_script = detail::resolve(base, tc.value("fake_script", ""));
  if (c.toolchain_kind == "fake" && c.fake_script.empty())
    throw ConfigError("toolchain.fake_script", "fake toolchain needs a script path");
  c.toolchain.compile_cmd_template = tc.value("compile_cmd", "");
  c.toolchain.simulate_cmd_template = tc.value("simulate_cmd", "");
  c.toolchain.wall_budget = tc.value("wall_budget_s", c.toolchain.wall_budget);
  c.toolchain.work_dir = detail::resolve(base, tc.value("work_dir", ""));
  if (c.toolchain.work_dir.empty()) c.toolchain.work_dir = c.work_dir + "/toolchain";
  if (const char* env = std::getenv("RARECOV_WORK_DIR"))
    c.toolchain.work_dir = env;  // environment override wins over file values
  c.toolchain.golden_cache = detail::resolve(base, tc.value("golden_cache", ""));
  c.toolchain.max_concurrency = tc.value("max_concurrency", c.toolchain.max_concurrency);
  if (c.toolchain_kind == "subprocess") {
    if (c.toolchain.compile_cmd_template.empty())
      throw ConfigError("toolchain.compile_cmd", "subprocess toolchain needs a compile template");
    if (c.toolchain.simulate_cmd_template.empty())
      throw ConfigError("toolchain.simulate_cmd",
                        "subprocess toolchain needs a simulate template");
  }

  const auto cov = j.value("coverage", jsonio::json::object());
  c.table_threshold = cov.value("table_threshold", c.table_threshold);
  if (c.table_threshold < 0.0 || c.table_threshold > 1.0)
    throw ConfigError("coverage.table_threshold", "must lie in [0,1]");
  if (cov.contains("theta_bucket_edges"))
    c.theta_bucket_edges = cov["theta_bucket_edges"].get<std::vector<double>>();
  if (c.theta_bucket_edges.size() < 2)
    throw ConfigError("coverage.theta_bucket_edges", "need at least two edges");
  for (size_t i = 1; i < c.theta_bucket_edges.size(); ++i)
    if (c.theta_bucket_edges[i] <= c.theta_bucket_edges[i - 1])
      throw ConfigError("coverage.theta_bucket_edges", "must be strictly ascending");
  c.sequence_length = cov.value("sequence_length", c.sequence_length);
  if (c.sequence_length < 2) throw ConfigError("coverage.sequence_length", "must be >= 2");
  c.sample_count = cov.value("sample_count", c.sample_count);
  if (c.sample_count < 1) throw ConfigError("coverage.sample_count", "must be >= 1");
  c.seed = cov.value("seed", c.seed);
  c.require_order = cov.value("require_order", c.require_order);

  const auto out = j.value("output", jsonio::json::object());
  c.format = out.value("format", c.format);
  if (c.format != "json" && c.format != "csv")
    throw ConfigError("output.format", "must be 'json' or 'csv'");
  c.verbosity = out.value("verbosity", c.verbosity);

  // referenced inputs must exist up front; outputs (work dir) get created
  for (size_t i = 0; i < c.rtl_sources.size(); ++i)
    detail::require_exists("paths.rtl_sources[" + std::to_string(i) + "]", c.rtl_sources[i]);
  for (size_t i = 0; i < c.benchmark_vcds.size(); ++i)
    detail::require_exists("paths.benchmark_vcds[" + std::to_string(i) + "]",
                           c.benchmark_vcds[i]);
  if (!c.isa_json.empty()) detail::require_exists("paths.isa_json", c.isa_json);
  if (!c.annotations_path.empty())
    detail::require_exists("paths.annotations", c.annotations_path);
  if (!c.provider_script.empty() && c.provider == "scripted")
    detail::require_exists("agent.provider_script", c.provider_script);
  if (!c.fake_script.empty() && c.toolchain_kind == "fake")
    detail::require_exists("toolchain.fake_script", c.fake_script);
  return c;
}

}  // namespace rarecov::config
