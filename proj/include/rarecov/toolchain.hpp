// SPDX-License-Identifier: Apache-2.0
//
// Compile/simulate adapters: a subprocess-backed toolchain driven by shell
// command templates, and a hermetic scripted fake for tests. Both sit behind
// one interface so the generation loop never knows which it is talking to.

#pragma once

#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <semaphore>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "rarecov/jsonio.hpp"
#include "rarecov/subprocess.hpp"
#include "rarecov/util.hpp"

namespace rarecov::toolchain {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct ToolNotFound : std::runtime_error {
  std::string attempted_command;
  explicit ToolNotFound(const std::string& cmd)
      : std::runtime_error("tool not found, command was: " + cmd), attempted_command(cmd) {}
};

struct WorkDirUnwritable : std::runtime_error {
  std::string path;
  explicit WorkDirUnwritable(const std::string& p)
      : std::runtime_error("work directory not writable: " + p), path(p) {}
};

struct GoldenTraceError : std::runtime_error {
  std::string log;
  explicit GoldenTraceError(const std::string& stage, const std::string& l)
      : std::runtime_error("golden trace generation failed during " + stage), log(l) {}
};

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

struct TestProgram {
  std::string name;      // artifact label, sanitized before use in paths
  std::string source;
  std::string language;  // "c" or "asm"
};

struct CompileResult {
  enum Status { Ok, Error } status = Error;
  std::string artifact;     // populated on Ok
  std::string log;          // captured compiler output
  std::string source_path;  // persisted source, kept for audit
};

struct SimulateResult {
  enum Status { Ok, Timeout, Crash } status = Crash;
  std::string vcd_path;  // populated on Ok
  double elapsed_seconds = 0.0;
  int exit_code = 0;
  std::string log;
};

struct ToolchainConfig {
  std::string compile_cmd_template;   // placeholders {src} {out}
  std::string simulate_cmd_template;  // placeholders {bin} {vcd_out}
  double wall_budget = 120.0;         // seconds, simulation only
  std::string work_dir;
  std::string golden_cache;  // directory holding cached golden VCDs
  int max_concurrency = 0;   // 0: use hardware_concurrency

  void validate() const {
    if (compile_cmd_template.find("{src}") == std::string::npos ||
        compile_cmd_template.find("{out}") == std::string::npos)
      throw std::invalid_argument("compile_cmd_template must contain {src} and {out}");
    if (simulate_cmd_template.find("{bin}") == std::string::npos ||
        simulate_cmd_template.find("{vcd_out}") == std::string::npos)
      throw std::invalid_argument("simulate_cmd_template must contain {bin} and {vcd_out}");
    if (!(wall_budget > 0)) throw std::invalid_argument("wall_budget must be positive");
    if (work_dir.empty()) throw std::invalid_argument("work_dir required");
  }
};

class Toolchain {
 public:
  virtual ~Toolchain() = default;
  virtual CompileResult compile(const TestProgram& program) = 0;
  virtual SimulateResult simulate(const std::string& artifact) = 0;
  /// Golden reference VCD for the canonical empty-main program; cached.
  virtual std::string golden_trace() = 0;
};

/// The program whose trace is the reference all test traces diff against.
inline TestProgram empty_main_program() {
  return {"golden_empty_main", "int main(void) { return 0; }\n", "c"};
}

// ---------------------------------------------------------------------------
// Subprocess-backed toolchain
// ---------------------------------------------------------------------------

namespace detail {

inline std::string substitute(std::string tmpl, const std::map<std::string, std::string>& vars) {
  for (const auto& [key, value] : vars) {
    std::string pat = "{" + key + "}";
    std::string quoted = util::shell_quote(value);
    size_t pos = 0;
    while ((pos = tmpl.find(pat, pos)) != std::string::npos) {
      tmpl.replace(pos, pat.size(), quoted);
      pos += quoted.size();
    }
  }
  return tmpl;
}

}  // namespace detail

class SubprocessToolchain : public Toolchain {
 public:
  // compile steps get a fixed allowance; wall_budget governs simulation
  static constexpr double kCompileTimeoutSeconds = 60.0;

  explicit SubprocessToolchain(ToolchainConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(cfg_.work_dir, ec);
    if (!cfg_.golden_cache.empty()) fs::create_directories(cfg_.golden_cache, ec);
    // writability probe: the failure mode is an environment error, not a
    // per-program one, so surface it at construction
    std::string probe = cfg_.work_dir + "/.probe";
    std::ofstream f(probe);
    if (!f) throw WorkDirUnwritable(cfg_.work_dir);
    f.close();
    fs::remove(probe, ec);
    // resume numbering past any artifacts from an earlier run
    for (const auto& entry : fs::directory_iterator(cfg_.work_dir, ec)) {
      std::string stem = entry.path().filename().string();
      if (stem.rfind("prog", 0) != 0) continue;
      size_t i = 4, n = 0;
      bool digits = i < stem.size() && std::isdigit(static_cast<unsigned char>(stem[i]));
      while (i < stem.size() && std::isdigit(static_cast<unsigned char>(stem[i])))
        n = n * 10 + static_cast<size_t>(stem[i++] - '0');
      if (digits && n + 1 > next_) next_ = n + 1;
    }
    int cap = cfg_.max_concurrency > 0
                  ? cfg_.max_concurrency
                  : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    sem_ = std::make_unique<std::counting_semaphore<>>(cap);
  }

  CompileResult compile(const TestProgram& program) override {
    size_t n = take_number();
    std::string base = cfg_.work_dir + "/prog" + seq(n);
    std::string src = base + (program.language == "asm" ? ".S" : ".c");
    write_file(src, program.source);

    std::string out = base + ".bin";
    std::string cmd = detail::substitute(cfg_.compile_cmd_template, {{"src", src}, {"out", out}});
    auto run = guarded_run(cmd, kCompileTimeoutSeconds);
    write_file(base + ".compile.log", run.output);
    if (run.tool_missing || run.spawn_failed) throw ToolNotFound(cmd);

    CompileResult res;
    res.log = run.output;
    res.source_path = src;
    if (run.exit_code == 0 && std::filesystem::exists(out)) {
      res.status = CompileResult::Ok;
      res.artifact = out;
    } else {
      res.status = CompileResult::Error;
      if (run.timed_out) res.log += "\n[compile timed out]";
    }
    return res;
  }

  SimulateResult simulate(const std::string& artifact) override {
    size_t n = take_number();
    std::string base = cfg_.work_dir + "/prog" + seq(n);
    std::string vcd = base + ".vcd";
    std::string cmd =
        detail::substitute(cfg_.simulate_cmd_template, {{"bin", artifact}, {"vcd_out", vcd}});
    auto run = guarded_run(cmd, cfg_.wall_budget);
    write_file(base + ".sim.log", run.output);
    if (run.tool_missing || run.spawn_failed) throw ToolNotFound(cmd);

    SimulateResult res;
    res.elapsed_seconds = run.elapsed_s;
    res.log = run.output;
    if (run.timed_out) {
      res.status = SimulateResult::Timeout;
    } else if (run.exit_code == 0 && std::filesystem::exists(vcd)) {
      res.status = SimulateResult::Ok;
      res.vcd_path = vcd;
    } else {
      res.status = SimulateResult::Crash;
      res.exit_code = run.exit_code;
    }
    return res;
  }

  std::string golden_trace() override {
    std::string digest =
        util::hex64(util::fnv1a64(cfg_.compile_cmd_template + "\x1f" + cfg_.simulate_cmd_template));
    std::string cache_dir = cfg_.golden_cache.empty() ? cfg_.work_dir : cfg_.golden_cache;
    std::string cached = cache_dir + "/golden_" + digest + ".vcd";
    std::lock_guard<std::mutex> lock(golden_mutex_);
    if (std::filesystem::exists(cached)) return cached;

    auto comp = compile(empty_main_program());
    if (comp.status != CompileResult::Ok) throw GoldenTraceError("compile", comp.log);
    auto sim = simulate(comp.artifact);
    if (sim.status != SimulateResult::Ok) throw GoldenTraceError("simulate", sim.log);
    std::error_code ec;
    std::filesystem::copy_file(sim.vcd_path, cached,
                               std::filesystem::copy_options::overwrite_existing, ec);
    if (ec) throw WorkDirUnwritable(cache_dir);
    return cached;
  }

 private:
  static std::string seq(size_t n) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04zu", n);
    return buf;
  }

  size_t take_number() {
    std::lock_guard<std::mutex> lock(mutex_);
    return next_++;
  }

  util::RunResult guarded_run(const std::string& cmd, double timeout_s) {
    sem_->acquire();
    auto res = util::run_command(cmd, timeout_s);
    sem_->release();
    return res;
  }

  static void write_file(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw WorkDirUnwritable(path);
    f << text;
  }

  ToolchainConfig cfg_;
  std::mutex mutex_;
  std::mutex golden_mutex_;
  size_t next_ = 0;
  std::unique_ptr<std::counting_semaphore<>> sem_;
};

// ---------------------------------------------------------------------------
// Scripted fake
// ---------------------------------------------------------------------------

/// Hermetic toolchain for tests. Outcomes are looked up in a script: each
/// rule matches on a substring of the program source ("*" matches all),
/// first match wins. Simulation outcomes reference pre-baked VCD fixtures.
///
/// Script shape:
///   {
///     "golden_vcd": "fixtures/golden.vcd",
///     "rules": [
///       {"match": "*", "compile": "ok", "sim": "ok", "vcd": "fixtures/hit.vcd",
///        "compile_log": "", "sim_log": "", "exit_code": 1}
///     ]
///   }
class FakeToolchain : public Toolchain {
 public:
  struct Rule {
    std::string match;
    std::string compile = "ok";  // ok | fail | toolnotfound
    std::string compile_log;
    std::string sim = "ok";  // ok | timeout | crash
    std::string vcd;
    std::string sim_log;
    int exit_code = 1;
  };

  FakeToolchain(std::string work_dir, std::string golden_vcd, std::vector<Rule> rules)
      : work_dir_(std::move(work_dir)), golden_vcd_(std::move(golden_vcd)), rules_(std::move(rules)) {
    std::filesystem::create_directories(work_dir_);
  }

  static FakeToolchain from_script(const std::string& script_path, const std::string& work_dir) {
    auto j = jsonio::parse_checked(jsonio::read_file(script_path));
    std::string base = std::filesystem::path(script_path).parent_path().string();
    auto resolve = [&](std::string p) {
      if (p.empty() || p.front() == '/') return p;
      return base + "/" + p;
    };
    std::vector<Rule> rules;
    for (const auto& r : j.value("rules", jsonio::json::array())) {
      Rule rule;
      rule.match = r.value("match", "*");
      rule.compile = r.value("compile", "ok");
      rule.compile_log = r.value("compile_log", "");
      rule.sim = r.value("sim", "ok");
      rule.vcd = resolve(r.value("vcd", ""));
      rule.sim_log = r.value("sim_log", "");
      rule.exit_code = r.value("exit_code", 1);
      rules.push_back(std::move(rule));
    }
    return FakeToolchain(work_dir, resolve(j.value("golden_vcd", "")), std::move(rules));
  }

  CompileResult compile(const TestProgram& program) override {
    ++compile_calls;
    const Rule& rule = match(program.source);
    if (rule.compile == "toolnotfound") throw ToolNotFound("scripted: tool not found");
    CompileResult res;
    std::string base = work_dir_ + "/fake" + std::to_string(serial_++);
    res.source_path = base + (program.language == "asm" ? ".S" : ".c");
    write(res.source_path, program.source);
    res.log = rule.compile_log;
    if (rule.compile == "ok") {
      res.status = CompileResult::Ok;
      res.artifact = base + ".bin";
      write(res.artifact, "fake artifact\n");
      pending_rule_[res.artifact] = &rule;
    } else {
      res.status = CompileResult::Error;
    }
    return res;
  }

  SimulateResult simulate(const std::string& artifact) override {
    ++simulate_calls;
    SimulateResult res;
    auto it = pending_rule_.find(artifact);
    const Rule& rule = it != pending_rule_.end() ? *it->second : match("");
    res.log = rule.sim_log;
    if (rule.sim == "timeout") {
      res.status = SimulateResult::Timeout;
      res.elapsed_seconds = 120.0;
      ++terminations;  // the process-tree kill hook, observable in tests
    } else if (rule.sim == "crash") {
      res.status = SimulateResult::Crash;
      res.exit_code = rule.exit_code;
    } else {
      std::string vcd = work_dir_ + "/fake" + std::to_string(serial_++) + ".vcd";
      std::error_code ec;
      std::filesystem::copy_file(rule.vcd, vcd,
                                 std::filesystem::copy_options::overwrite_existing, ec);
      if (ec) {
        res.status = SimulateResult::Crash;
        res.exit_code = 66;
        res.log += "\n[fake: missing fixture " + rule.vcd + "]";
      } else {
        res.status = SimulateResult::Ok;
        res.vcd_path = vcd;
      }
    }
    return res;
  }

  std::string golden_trace() override {
    if (!golden_generated_) {
      ++golden_generations;
      golden_generated_ = true;
    }
    return golden_vcd_;
  }

  // observability for tests
  int compile_calls = 0;
  int simulate_calls = 0;
  int golden_generations = 0;
  int terminations = 0;

 private:
  const Rule& match(const std::string& source) const {
    for (const auto& r : rules_)
      if (r.match == "*" || source.find(r.match) != std::string::npos) return r;
    static Rule fallback;
    return fallback;
  }

  static void write(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    f << text;
  }

  std::string work_dir_;
  std::string golden_vcd_;
  std::vector<Rule> rules_;
  std::map<std::string, const Rule*> pending_rule_;
  int serial_ = 0;
  bool golden_generated_ = false;
};

}  // namespace rarecov::toolchain
