// SPDX-License-Identifier: Apache-2.0
//
// The command layer: analyze, trace, events, generate, detect, report, and
// the end-to-end pipeline with stage-completion markers. Every command reads
// a RunConfig, works entirely in files under work_dir, and returns one of
// the four exit codes. Outputs never contain absolute paths, wall-clock
// times, or other run-specific noise, so reruns are byte-identical.

#pragma once

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "rarecov/agent.hpp"
#include "rarecov/config.hpp"
#include "rarecov/coverage.hpp"
#include "rarecov/event_db.hpp"
#include "rarecov/fanin.hpp"
#include "rarecov/jsonio.hpp"
#include "rarecov/provider_http.hpp"
#include "rarecov/rtl.hpp"
#include "rarecov/toolchain.hpp"
#include "rarecov/vcd.hpp"

namespace rarecov::pipeline {

// exit codes shared by every command
constexpr int kOk = 0;
constexpr int kPartial = 1;      // finished with a non-empty skip/abort list
constexpr int kConfigError = 2;  // bad config or bad configured input data
constexpr int kEnvError = 3;     // missing tools, unwritable dirs, dead endpoints

/// Configured input data that exists but cannot be used (malformed VCD,
/// missing upstream stage output, unknown event selector).
struct InputError : std::runtime_error {
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

inline void log(const config::RunConfig& cfg, const std::string& line) {
  if (cfg.verbosity >= 1) std::cout << line << "\n";
}

inline void write_json(const std::string& path, const jsonio::json& j) {
  jsonio::write_file(path, j.dump(2) + "\n");
}

inline std::string fmt_double(double v) {
  char buf[64];
  snprintf(buf, sizeof buf, "%.6g", v);
  return std::string(buf);
}

inline std::string safe_filename(const std::string& name) {
  std::string out;
  for (char c : name)
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-')
               ? c
               : '_';
  return out;
}

inline std::string marker_path(const config::RunConfig& cfg, const std::string& stage) {
  return cfg.work_dir + "/.stage." + stage + ".done";
}

inline bool stage_done(const config::RunConfig& cfg, const std::string& stage) {
  return std::filesystem::exists(marker_path(cfg, stage));
}

inline void mark_stage_done(const config::RunConfig& cfg, const std::string& stage) {
  jsonio::write_file(marker_path(cfg, stage),
                     jsonio::json{{"stage", stage}, {"run_stamp", cfg.run_stamp}}.dump() + "\n");
}

// ---- SignalStats (de)serialization for stats.json --------------------------

inline jsonio::json stats_to_json(const vcd::SignalStats& s) {
  return jsonio::json{{"name", s.hierarchical_name},
                      {"width", s.width},
                      {"kind", vcd::kind_name(s.kind)},
                      {"samples", s.samples},
                      {"p0", s.p0_hat},
                      {"p1", s.p1_hat},
                      {"toggle_rate", s.toggle_rate},
                      {"theta", s.theta},
                      {"trace_transitions", s.trace_transitions},
                      {"zeros", s.zeros},
                      {"ones", s.ones},
                      {"toggle_changes", s.toggle_changes},
                      {"toggle_pairs", s.toggle_pairs}};
}

inline vcd::SignalStats stats_from_json(const jsonio::json& j) {
  vcd::SignalStats s;
  s.hierarchical_name = j.at("name").get<std::string>();
  s.width = j.at("width").get<unsigned>();
  s.kind = j.at("kind").get<std::string>() == "bus" ? vcd::SignalKindTag::Bus
                                                    : vcd::SignalKindTag::SingleBit;
  s.samples = j.at("samples").get<uint64_t>();
  s.p0_hat = j.at("p0").get<double>();
  s.p1_hat = j.at("p1").get<double>();
  s.toggle_rate = j.at("toggle_rate").get<double>();
  s.theta = j.at("theta").get<double>();
  s.trace_transitions = j.at("trace_transitions").get<uint64_t>();
  s.zeros = j.at("zeros").get<uint64_t>();
  s.ones = j.at("ones").get<uint64_t>();
  s.toggle_changes = j.at("toggle_changes").get<uint64_t>();
  s.toggle_pairs = j.at("toggle_pairs").get<uint64_t>();
  return s;
}

inline vcd::StatsReport load_stats(const config::RunConfig& cfg) {
  std::string path = cfg.work_dir + "/stats.json";
  if (!std::filesystem::exists(path))
    throw InputError("missing " + std::string("stats.json") + " in work dir; run analyze first");
  auto j = jsonio::parse_checked(jsonio::read_file(path));
  vcd::StatsReport rep;
  for (const auto& e : j.at("signals")) rep.stats.push_back(stats_from_json(e));
  rep.unobserved = j.value("unobserved", std::vector<std::string>{});
  return rep;
}

inline bool excluded(const config::RunConfig& cfg, const std::string& name) {
  std::string lower = util::to_lower(name);
  for (const auto& g : cfg.exclude_globs)
    if (util::glob_match(g, lower)) return true;
  return false;
}

/// Rare signals at one threshold, exclusion globs applied.
inline std::vector<vcd::SignalStats> rare_signals(const config::RunConfig& cfg,
                                                  const vcd::StatsReport& rep,
                                                  double threshold) {
  std::vector<vcd::SignalStats> kept;
  for (const auto& s : rep.stats)
    if (!excluded(cfg, s.hierarchical_name)) kept.push_back(s);
  return vcd::classify_rare(kept, threshold).rare;
}

// ---- shared loaders ---------------------------------------------------------

inline rtl::DesignAST parse_design(const config::RunConfig& cfg) {
  if (cfg.rtl_sources.empty())
    throw config::ConfigError("paths.rtl_sources", "at least one RTL source required");
  std::vector<rtl::SourceFile> files;
  for (const auto& p : cfg.rtl_sources)
    files.push_back({std::filesystem::path(p).filename().string(), jsonio::read_file(p)});
  rtl::ParseOptions opt;
  opt.strict = cfg.strict;
  opt.top_override = cfg.top_override;
  return rtl::parse_rtl(files, opt);
}

inline events::EventDB load_events(const config::RunConfig& cfg) {
  if (!std::filesystem::exists(cfg.event_db_path))
    throw InputError("missing event database " + cfg.event_db_path + "; run events first");
  return events::load_db(jsonio::read_file(cfg.event_db_path));
}

inline events::IsaDB load_isa_db(const config::RunConfig& cfg) {
  if (cfg.isa_json.empty()) return {};
  return events::load_isa(jsonio::read_file(cfg.isa_json));
}

inline std::unique_ptr<toolchain::Toolchain> make_toolchain(const config::RunConfig& cfg) {
  if (cfg.toolchain_kind == "fake")
    return std::make_unique<toolchain::FakeToolchain>(
        toolchain::FakeToolchain::from_script(cfg.fake_script, cfg.toolchain.work_dir));
  auto tc_cfg = cfg.toolchain;
  return std::make_unique<toolchain::SubprocessToolchain>(tc_cfg);
}

inline std::unique_ptr<agent::LLMProvider> make_provider(const config::RunConfig& cfg) {
  if (cfg.provider == "scripted")
    return std::make_unique<agent::ScriptedProvider>(
        agent::ScriptedProvider::from_file(cfg.provider_script));
  agent::HttpProviderConfig hc;
  hc.host = cfg.provider_host;
  hc.port = cfg.provider_port;
  hc.path = cfg.provider_http_path;
  hc.model = cfg.provider_model;
  hc.timeout_s = cfg.provider_timeout_s;
  return std::make_unique<agent::HttpProvider>(hc);
}

// ---- derived annotations ----------------------------------------------------

inline std::vector<std::string> stage_categories(const std::string& stage) {
  if (stage == "fetch") return {"branch"};
  if (stage == "decode") return {"arith", "imm"};
  if (stage == "alu") return {"arith"};
  if (stage == "lsu") return {"load", "store"};
  if (stage == "ctrl") return {"branch"};
  return {"arith"};
}

/// Deterministic annotation text from the trace abstraction, used when no
/// annotation source file is configured.
inline events::Annotation derived_annotation(const std::string& root,
                                             const fanin::TraceAbstraction& abs,
                                             const std::string& stage) {
  std::string local = root;
  auto dot = local.rfind('.');
  if (dot != std::string::npos) local = local.substr(dot + 1);
  events::Annotation ann;
  ann.name = local + " rare activity";
  ann.description = abs.blocks.empty() ? ("Rare activity on " + root + ".") : abs.blocks.front();
  ann.logical_summary = util::join(abs.blocks, " ");
  if (ann.logical_summary.empty()) ann.logical_summary = "Rare activity on " + root + ".";
  ann.stimulus_guidance =
      "Exercise the signals feeding " + root + ": " + util::join(abs.referenced_signals, ", ") +
      ".";
  ann.instruction_categories = stage_categories(stage);
  return ann;
}

inline std::map<std::string, events::Annotation> load_annotations(
    const config::RunConfig& cfg) {
  std::map<std::string, events::Annotation> out;
  if (cfg.annotations_path.empty()) return out;
  auto j = jsonio::parse_checked(jsonio::read_file(cfg.annotations_path));
  const jsonio::json entries = j.value("annotations", jsonio::json::object());
  for (const auto& [signal, a] : entries.items()) {
    events::Annotation ann;
    ann.name = a.value("name", "");
    ann.description = a.value("description", "");
    ann.logical_summary = a.value("logical_summary", "");
    ann.stimulus_guidance = a.value("stimulus_guidance", "");
    ann.instruction_categories =
        a.value("instruction_categories", std::vector<std::string>{});
    out[signal] = ann;
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// analyze: benchmark VCDs -> merged stats + rarity partition
// ---------------------------------------------------------------------------

inline int cmd_analyze(const config::RunConfig& cfg) {
  if (cfg.benchmark_vcds.empty())
    throw config::ConfigError("paths.benchmark_vcds", "at least one benchmark VCD required");
  std::filesystem::create_directories(cfg.work_dir);

  vcd::SamplingPolicy policy = cfg.sampling == "clock"
                                   ? vcd::SamplingPolicy::clock_edge(cfg.clock, cfg.rising)
                                   : vcd::SamplingPolicy::every_timestamp();

  std::vector<vcd::StatsReport> runs;
  for (size_t i = 0; i < cfg.benchmark_vcds.size(); ++i) {
    try {
      auto db = vcd::parse_vcd(jsonio::read_file(cfg.benchmark_vcds[i]));
      runs.push_back(vcd::compute_stats(db, vcd::sample_signals(db, policy)));
    } catch (const vcd::VcdError& e) {
      throw InputError(cfg.benchmark_vcds_given[i] + ": " + e.what());
    }
  }
  vcd::StatsReport merged = vcd::merge_stats_reports(runs);

  jsonio::json sj;
  sj["schema_version"] = 1;
  sj["sampling"] = cfg.sampling == "clock"
                       ? ("clock:" + cfg.clock + (cfg.rising ? ":rising" : ":falling"))
                       : "every";
  sj["benchmarks"] = cfg.benchmark_vcds_given;
  jsonio::json sig = jsonio::json::array();
  for (const auto& s : merged.stats) sig.push_back(detail::stats_to_json(s));
  sj["signals"] = sig;
  sj["unobserved"] = merged.unobserved;
  detail::write_json(cfg.work_dir + "/stats.json", sj);
  jsonio::write_file(cfg.work_dir + "/stats.csv", vcd::stats_csv(merged.stats));

  std::vector<vcd::SignalStats> kept;
  std::vector<std::string> excluded_names;
  for (const auto& s : merged.stats) {
    if (detail::excluded(cfg, s.hierarchical_name)) excluded_names.push_back(s.hierarchical_name);
    else kept.push_back(s);
  }
  jsonio::json pj;
  pj["thresholds"] = cfg.thresholds;
  pj["excluded"] = excluded_names;
  jsonio::json parts = jsonio::json::array();
  for (double thr : cfg.thresholds) {
    auto part = vcd::classify_rare(kept, thr);
    jsonio::json p;
    p["threshold"] = thr;
    auto names = [](const std::vector<vcd::SignalStats>& v) {
      std::vector<std::string> out;
      for (const auto& s : v) out.push_back(s.hierarchical_name);
      return out;
    };
    p["rare"] = names(part.rare);
    p["common"] = names(part.common);
    p["unobserved"] = names(part.unobserved);
    parts.push_back(std::move(p));
  }
  pj["partitions"] = parts;
  detail::write_json(cfg.work_dir + "/partition.json", pj);

  detail::log(cfg, "analyze: " + std::to_string(merged.stats.size()) + " signals across " +
                       std::to_string(runs.size()) + " benchmarks");
  return kOk;
}

// ---------------------------------------------------------------------------
// trace: fan-in cones + abstractions for chosen signals
// ---------------------------------------------------------------------------

// Rarity uses the loosest configured threshold here: the event database
// holds every event any report row can ask for, and each row filters by
// its own threshold when counting.
inline std::vector<std::string> all_rare_signal_names(const config::RunConfig& cfg) {
  auto rep = detail::load_stats(cfg);
  std::vector<std::string> names;
  for (const auto& s : detail::rare_signals(cfg, rep, cfg.thresholds.back()))
    names.push_back(s.hierarchical_name);
  return names;
}

inline int cmd_trace(const config::RunConfig& cfg, std::vector<std::string> signals,
                     bool all_rare) {
  std::filesystem::create_directories(cfg.work_dir + "/traces");
  if (all_rare) {
    auto rare = all_rare_signal_names(cfg);
    signals.insert(signals.end(), rare.begin(), rare.end());
  }
  if (signals.empty())
    throw config::ConfigError("trace", "no signals requested (names or --all-rare)");

  rtl::DesignAST design = detail::parse_design(cfg);
  fanin::FanInOptions opt;
  opt.max_depth = cfg.max_depth;
  opt.stop_set = cfg.stop_set;
  opt.include_sensitivity_signals = cfg.include_sensitivity_signals;

  jsonio::json skipped = jsonio::json::array();
  size_t ok = 0;
  for (const auto& name : signals) {
    try {
      auto trace = fanin::fanin_trace(design, name, opt);
      auto abs = fanin::abstract_trace(trace, design);
      detail::write_json(cfg.work_dir + "/traces/" + detail::safe_filename(name) + ".json",
                         fanin::to_json(trace, abs));
      ++ok;
    } catch (const std::exception& e) {
      skipped.push_back({{"signal", name}, {"error", e.what()}});
    }
  }
  detail::write_json(cfg.work_dir + "/skiplist.json", jsonio::json{{"skipped", skipped}});
  detail::log(cfg, "trace: " + std::to_string(ok) + " traced, " +
                       std::to_string(skipped.size()) + " skipped");
  return skipped.empty() ? kOk : kPartial;
}

// ---------------------------------------------------------------------------
// events: rare signals + traces + annotations + rarity -> event database
// ---------------------------------------------------------------------------

inline int cmd_events(const config::RunConfig& cfg) {
  std::filesystem::create_directories(cfg.work_dir);
  auto rep = detail::load_stats(cfg);
  auto rare = detail::rare_signals(cfg, rep, cfg.thresholds.back());
  rtl::DesignAST design = detail::parse_design(cfg);
  auto annotations = detail::load_annotations(cfg);
  auto isa = detail::load_isa_db(cfg);

  fanin::FanInOptions opt;
  opt.max_depth = cfg.max_depth;
  opt.stop_set = cfg.stop_set;
  opt.include_sensitivity_signals = cfg.include_sensitivity_signals;

  events::EventDB db;
  db.provenance.design = design.top;
  db.provenance.isa = isa.name;
  db.provenance.created_at = cfg.run_stamp;
  db.provenance.sampling_policy =
      cfg.sampling == "clock" ? ("clock:" + cfg.clock + (cfg.rising ? ":rising" : ":falling"))
                              : "every";

  jsonio::json skipped = jsonio::json::array();
  for (const auto& stats : rare) {
    const std::string& name = stats.hierarchical_name;
    try {
      auto trace = fanin::fanin_trace(design, name, opt);
      auto abs = fanin::abstract_trace(trace, design);
      std::string stage = events::infer_stage(trace.root, events::default_stage_map());
      events::Annotation ann;
      auto found = annotations.find(name);
      if (found == annotations.end()) found = annotations.find(trace.root);
      ann = found != annotations.end() ? found->second
                                       : detail::derived_annotation(trace.root, abs, stage);
      auto rec = fanin::build_event(design.top, trace, abs, ann, stats);
      db.events[rec.id] = rec;
    } catch (const std::exception& e) {
      skipped.push_back({{"signal", name}, {"error", e.what()}});
    }
  }
  detail::write_json(cfg.work_dir + "/events_skiplist.json", jsonio::json{{"skipped", skipped}});
  jsonio::write_file(cfg.event_db_path, events::save_db(db));
  detail::log(cfg, "events: " + std::to_string(db.events.size()) + " events, " +
                       std::to_string(skipped.size()) + " skipped");
  return skipped.empty() ? kOk : kPartial;
}

// ---------------------------------------------------------------------------
// generate: run one agent session per selected event
// ---------------------------------------------------------------------------

inline int cmd_generate(const config::RunConfig& cfg,
                        const std::vector<std::string>& selectors) {
  std::filesystem::create_directories(cfg.work_dir + "/sessions");
  auto db = detail::load_events(cfg);
  auto isa = detail::load_isa_db(cfg);
  auto tc = detail::make_toolchain(cfg);
  auto provider = detail::make_provider(cfg);

  std::vector<std::string> ids;
  if (selectors.empty()) {
    for (const auto& [id, rec] : db.events) ids.push_back(id);
  } else {
    for (const auto& sel : selectors) {
      if (db.events.count(sel)) {
        ids.push_back(sel);
        continue;
      }
      std::string hit;
      for (const auto& [id, rec] : db.events)
        if (rec.name == sel) hit = id;
      if (hit.empty()) throw InputError("unknown event selector: " + sel);
      ids.push_back(hit);
    }
  }

  agent::ExemplarPool pool;
  if (std::filesystem::exists(cfg.exemplar_pool_path))
    pool = agent::ExemplarPool::from_json(
        jsonio::parse_checked(jsonio::read_file(cfg.exemplar_pool_path)));

  agent::RunOptions opt;
  opt.budget = cfg.budget;
  opt.constraints = cfg.constraints;
  opt.isa_manual_ref = cfg.isa_manual_ref;
  opt.isa_json_ref = cfg.isa_json.empty()
                         ? "isa.json"
                         : std::filesystem::path(cfg.isa_json).filename().string();
  agent::StrategyTier tier = agent::parse_tier(cfg.tier);

  jsonio::json summary = jsonio::json::array();
  jsonio::json programs = jsonio::json::array();
  int aborted = 0;
  for (const auto& id : ids) {
    auto session = agent::run_event(id, db, isa, tier, *provider, *tc, opt, &pool);
    std::ofstream log(cfg.work_dir + "/sessions/" + detail::safe_filename(id) + ".jsonl",
                      std::ios::binary);
    agent::write_session_log(log, session);

    jsonio::json row{{"event_id", id},
                     {"status", agent::status_name(session.final_status)},
                     {"iterations", session.iterations.size()},
                     {"budget", session.budget}};
    if (session.final_status == agent::GenerationSession::Aborted) {
      row["abort_reason"] = session.abort_reason;
      ++aborted;
    }
    summary.push_back(std::move(row));

    // final program (last iteration that produced source text)
    for (auto it = session.iterations.rbegin(); it != session.iterations.rend(); ++it) {
      if (it->program.source_text.empty()) continue;
      programs.push_back({{"program_id", it->program.id},
                          {"event_id", id},
                          {"language_kind", it->program.language_kind},
                          {"source_text", it->program.source_text},
                          {"origin_tier", it->program.origin_tier},
                          {"origin_iteration", it->program.origin_iteration},
                          {"generation_triggered", it->verdict.triggered}});
      break;
    }
  }
  detail::write_json(cfg.work_dir + "/generation_summary.json",
                     jsonio::json{{"sessions", summary}});
  detail::write_json(cfg.work_dir + "/programs.json", jsonio::json{{"programs", programs}});
  detail::write_json(cfg.exemplar_pool_path, pool.to_json());
  detail::log(cfg, "generate: " + std::to_string(ids.size()) + " sessions, " +
                       std::to_string(aborted) + " aborted");
  // aborts are provider/transport failures: all of them failing means the
  // environment is broken, a subset means a partial run
  if (aborted == 0) return kOk;
  return static_cast<size_t>(aborted) == ids.size() ? kEnvError : kPartial;
}

// ---------------------------------------------------------------------------
// detect: compile/simulate each program, diff against golden per event
// ---------------------------------------------------------------------------

inline int cmd_detect(const config::RunConfig& cfg) {
  std::filesystem::create_directories(cfg.work_dir);
  auto db = detail::load_events(cfg);
  std::string programs_path = cfg.work_dir + "/programs.json";
  if (!std::filesystem::exists(programs_path))
    throw InputError("missing programs.json; run generate first");
  auto pj = jsonio::parse_checked(jsonio::read_file(programs_path));
  auto tc = detail::make_toolchain(cfg);

  auto golden_db = vcd::parse_vcd(jsonio::read_file(tc->golden_trace()));

  jsonio::json rows = jsonio::json::array();
  std::map<std::string, bool> event_triggered;
  for (const auto& [id, rec] : db.events) event_triggered[id] = false;

  for (const auto& p : pj.value("programs", jsonio::json::array())) {
    std::string program_id = p.at("program_id").get<std::string>();
    std::string target = p.at("event_id").get<std::string>();
    toolchain::TestProgram prog{program_id, p.at("source_text").get<std::string>(), "c"};

    jsonio::json row{{"program_id", program_id}, {"event_id", target}};
    auto comp = tc->compile(prog);
    if (comp.status != toolchain::CompileResult::Ok) {
      row["outcome"] = "compile-error";
      row["per_event"] = jsonio::json::object();
      rows.push_back(std::move(row));
      continue;
    }
    auto sim = tc->simulate(comp.artifact);
    if (sim.status != toolchain::SimulateResult::Ok) {
      row["outcome"] = sim.status == toolchain::SimulateResult::Timeout ? "timeout" : "crash";
      row["per_event"] = jsonio::json::object();
      rows.push_back(std::move(row));
      continue;
    }
    auto test_db = vcd::parse_vcd(jsonio::read_file(sim.vcd_path));
    row["outcome"] = "simulated";
    jsonio::json per_event = jsonio::json::object();
    for (const auto& [id, rec] : db.events) {
      const std::string& root = rec.source_signals.front();
      jsonio::json v;
      try {
        auto deltas = vcd::diff_transitions(test_db, golden_db, std::vector<std::string>{root});
        const auto& d = deltas.front();
        v["triggered"] = d.triggered();
        v["delta"] = d.delta;
        if (d.triggered()) {
          auto t = vcd::first_extra_transition_time(test_db, golden_db, root);
          if (t) v["first_extra_transition_time"] = *t;
          event_triggered[id] = true;
        }
      } catch (const vcd::VcdError& e) {
        v["triggered"] = false;
        v["note"] = e.what();
      }
      per_event[id] = std::move(v);
    }
    row["per_event"] = std::move(per_event);
    rows.push_back(std::move(row));
  }

  jsonio::json vj;
  vj["programs"] = rows;
  vj["events"] = event_triggered;
  detail::write_json(cfg.work_dir + "/verdicts.json", vj);

  size_t triggered = 0;
  for (const auto& [id, t] : event_triggered)
    if (t) ++triggered;
  detail::log(cfg, "detect: " + std::to_string(triggered) + "/" +
                       std::to_string(event_triggered.size()) + " events triggered");
  return kOk;
}

// ---------------------------------------------------------------------------
// report: stage table / threshold sweep / expected coverage / sequential buckets
// ---------------------------------------------------------------------------

inline int cmd_report(const config::RunConfig& cfg) {
  std::filesystem::create_directories(cfg.work_dir);
  auto db = detail::load_events(cfg);
  std::string verdicts_path = cfg.work_dir + "/verdicts.json";
  if (!std::filesystem::exists(verdicts_path))
    throw InputError("missing verdicts.json; run detect first");
  auto vj = jsonio::parse_checked(jsonio::read_file(verdicts_path));

  std::map<std::string, bool> verdicts;
  for (const auto& [id, t] : vj.at("events").items()) verdicts[id] = t.get<bool>();

  // Table II: per-stage signal/event/rare counts
  std::map<std::string, uint64_t> signal_counts;
  if (std::filesystem::exists(cfg.work_dir + "/stats.json")) {
    auto rep = detail::load_stats(cfg);
    for (const auto& s : rep.stats)
      ++signal_counts[events::infer_stage(s.hierarchical_name, events::default_stage_map())];
  }
  auto stage_rows = coverage::stage_summary(db, cfg.table_threshold, signal_counts);
  jsonio::json t2 = jsonio::json::array();
  std::string t2csv = "stage,signals,events,rare\n";
  for (const auto& r : stage_rows) {
    t2.push_back({{"stage", r.stage},
                  {"signals", r.signals},
                  {"events", r.events},
                  {"rare", r.rare}});
    t2csv += r.stage + "," + std::to_string(r.signals) + "," + std::to_string(r.events) + "," +
             std::to_string(r.rare) + "\n";
  }
  detail::write_json(cfg.work_dir + "/table2.json",
                     jsonio::json{{"threshold", cfg.table_threshold}, {"rows", t2}});
  jsonio::write_file(cfg.work_dir + "/table2.csv", t2csv);

  // threshold sweep
  auto cov_rows = coverage::coverage_table(db, verdicts, cfg.thresholds);
  jsonio::json t3 = jsonio::json::array();
  std::string t3csv = "theta,rare_events,triggered,percent\n";
  for (const auto& r : cov_rows) {
    t3.push_back({{"theta", r.theta_threshold},
                  {"rare_events", r.rare_events},
                  {"triggered", r.rare_triggered},
                  {"percent", r.percent_text},
                  {"empty", r.empty}});
    t3csv += detail::fmt_double(r.theta_threshold) + "," + std::to_string(r.rare_events) + "," +
             std::to_string(r.rare_triggered) + "," + r.percent_text + "\n";
  }
  detail::write_json(cfg.work_dir + "/table3.json", jsonio::json{{"rows", t3}});
  jsonio::write_file(cfg.work_dir + "/table3.csv", t3csv);

  // Expected coverage: probability model p(event, targeting program) = event
  // rarity theta (a random program hits the event roughly at its rarity;
  // documented modeling assumption).
  coverage::IncidenceMatrix m;
  for (const auto& [id, rec] : db.events) m.events.push_back(id);
  std::map<std::string, std::set<size_t>> targets_by_event;
  for (const auto& p : vj.at("programs")) {
    std::string target = p.at("event_id").get<std::string>();
    m.programs.push_back(p.at("program_id").get<std::string>());
    targets_by_event[target].insert(m.programs.size() - 1);
  }
  m.p.assign(m.events.size(), std::vector<double>(m.programs.size(), 0.0));
  m.targets.assign(m.events.size(), {});
  std::vector<double> indv_p;
  for (size_t i = 0; i < m.events.size(); ++i) {
    const auto& rec = db.events.at(m.events[i]);
    double theta = std::min(rec.theta, 0.999999);
    for (size_t j : targets_by_event[m.events[i]]) {
      m.p[i][j] = theta;
      m.targets[i].push_back(j);
    }
    indv_p.push_back(targets_by_event[m.events[i]].empty() ? 0.0 : theta);
  }
  jsonio::json ec;
  ec["model"] = "event-rarity";
  ec["n_events"] = m.events.size();
  ec["n_programs"] = m.programs.size();
  if (!m.events.empty() && !m.programs.empty()) {
    m.validate();
    ec["expected_triggers_indv"] = coverage::expected_triggers_indv(indv_p);
    ec["coverage_indv"] = coverage::expected_coverage_indv(indv_p);
    ec["expected_triggers_comb"] = coverage::expected_triggers_comb(m);
    ec["coverage_comb"] = coverage::expected_coverage_comb(m);
  } else {
    ec["note"] = "no events or no programs; expectations undefined";
  }
  detail::write_json(cfg.work_dir + "/expected_coverage.json", ec);

  // Sequential buckets: occurrences from per-program first-extra times
  coverage::OccurrenceMap occurrences;
  for (const auto& p : vj.at("programs")) {
    std::string program_id = p.at("program_id").get<std::string>();
    const jsonio::json per_event = p.value("per_event", jsonio::json::object());
    for (const auto& [eid, v] : per_event.items())
      if (v.contains("first_extra_transition_time"))
        occurrences[program_id][eid] = v["first_extra_transition_time"].get<uint64_t>();
  }
  std::vector<coverage::ThetaBucket> buckets;
  for (size_t i = 0; i + 1 < cfg.theta_bucket_edges.size(); ++i)
    buckets.push_back({cfg.theta_bucket_edges[i], cfg.theta_bucket_edges[i + 1]});
  std::vector<coverage::SequentialTrigger> sequences;
  std::vector<std::string> unsatisfiable;
  for (size_t b = 0; b < buckets.size(); ++b) {
    try {
      auto sampled = coverage::sample_sequences(
          db, static_cast<size_t>(cfg.sequence_length), buckets[b],
          static_cast<size_t>(cfg.sample_count), cfg.seed + b);
      sequences.insert(sequences.end(), sampled.begin(), sampled.end());
    } catch (const coverage::BucketUnsatisfiable&) {
      unsatisfiable.push_back(detail::fmt_double(buckets[b].lo) + ".." +
                              detail::fmt_double(buckets[b].hi));
    } catch (const std::invalid_argument&) {
      unsatisfiable.push_back(detail::fmt_double(buckets[b].lo) + ".." +
                              detail::fmt_double(buckets[b].hi));
    }
  }
  coverage::SequentialOptions seq_opt;
  seq_opt.require_order = cfg.require_order;
  auto bucket_rows = coverage::sequential_coverage(db, occurrences, sequences, buckets, seq_opt);
  jsonio::json sq = jsonio::json::array();
  std::string sqcsv = "bucket_lo,bucket_hi,sequences,triggered,percent\n";
  for (const auto& r : bucket_rows) {
    sq.push_back({{"bucket_lo", r.bucket.lo},
                  {"bucket_hi", r.bucket.hi},
                  {"sequences", r.sequences},
                  {"triggered", r.triggered},
                  {"percent", r.percent_text},
                  {"empty", r.empty}});
    sqcsv += detail::fmt_double(r.bucket.lo) + "," + detail::fmt_double(r.bucket.hi) + "," +
             std::to_string(r.sequences) + "," + std::to_string(r.triggered) + "," +
             r.percent_text + "\n";
  }
  detail::write_json(cfg.work_dir + "/sequential.json",
                     jsonio::json{{"rows", sq}, {"unsatisfiable_buckets", unsatisfiable}});
  jsonio::write_file(cfg.work_dir + "/sequential.csv", sqcsv);

  if (cfg.verbosity >= 1) {
    if (cfg.format == "csv") std::cout << t3csv;
    else std::cout << jsonio::json{{"rows", t3}}.dump(2) << "\n";
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// pipeline: all stages with resume markers
// ---------------------------------------------------------------------------

inline int cmd_pipeline(const config::RunConfig& cfg) {
  std::filesystem::create_directories(cfg.work_dir);
  struct Stage {
    const char* name;
    std::function<int()> run;
  };
  std::vector<Stage> stages = {
      {"analyze", [&] { return cmd_analyze(cfg); }},
      {"trace", [&] { return cmd_trace(cfg, {}, /*all_rare=*/true); }},
      {"events", [&] { return cmd_events(cfg); }},
      {"generate", [&] { return cmd_generate(cfg, {}); }},
      {"detect", [&] { return cmd_detect(cfg); }},
      {"report", [&] { return cmd_report(cfg); }},
  };
  int worst = kOk;
  for (const auto& stage : stages) {
    if (detail::stage_done(cfg, stage.name)) {
      detail::log(cfg, std::string("pipeline: stage ") + stage.name + " already complete");
      continue;
    }
    int rc = stage.run();
    if (rc >= kConfigError) return rc;
    detail::mark_stage_done(cfg, stage.name);
    worst = std::max(worst, rc);
  }
  return worst;
}

}  // namespace rarecov::pipeline
