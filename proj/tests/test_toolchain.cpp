// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "rarecov/toolchain.hpp"
#include "rarecov/vcd.hpp"

using namespace rarecov;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& tag) {
  static int counter = 0;
  auto dir = fs::temp_directory_path() /
             ("rarecov_" + tag + "_" + std::to_string(getpid()) + "_" + std::to_string(counter++));
  fs::create_directories(dir);
  return dir.string();
}

std::string read_all(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

void write_all(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  f << text;
}

const char* kTinyVcd =
    "$timescale 1ns $end\n"
    "$scope module top $end\n"
    "$var wire 1 ! sig $end\n"
    "$upscope $end\n"
    "$enddefinitions $end\n"
    "#0\n0!\n#5\n1!\n";

toolchain::ToolchainConfig cp_config(const std::string& work) {
  toolchain::ToolchainConfig cfg;
  cfg.compile_cmd_template = "cp {src} {out}";
  cfg.simulate_cmd_template = "cp {bin} {vcd_out}";
  cfg.wall_budget = 10.0;
  cfg.work_dir = work;
  cfg.golden_cache = work + "/cache";
  return cfg;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config validation
// ---------------------------------------------------------------------------

TEST(ToolchainConfig, Validation) {
  auto cfg = cp_config(fresh_dir("cfg"));
  EXPECT_NO_THROW(cfg.validate());
  auto bad = cfg;
  bad.compile_cmd_template = "cc -o out {src}";  // missing {out}
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.simulate_cmd_template = "sim {bin}";  // missing {vcd_out}
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.wall_budget = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = cfg;
  bad.work_dir = "";
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(ToolchainConfig, WorkDirUnwritable) {
  auto cfg = cp_config("/dev/null/sub");
  cfg.golden_cache = "";
  EXPECT_THROW(toolchain::SubprocessToolchain tc(cfg), toolchain::WorkDirUnwritable);
}

// ---------------------------------------------------------------------------
// Subprocess path
// ---------------------------------------------------------------------------

TEST(SubprocessToolchain, CompileOkPersistsSourceAndArtifact) {
  auto work = fresh_dir("ok");
  toolchain::SubprocessToolchain tc(cp_config(work));
  toolchain::TestProgram prog{"p1", "int main(void) { return 42; }\n", "c"};
  auto res = tc.compile(prog);
  ASSERT_EQ(res.status, toolchain::CompileResult::Ok);
  EXPECT_TRUE(fs::exists(res.artifact));
  EXPECT_TRUE(fs::exists(res.source_path));
  EXPECT_TRUE(res.source_path.ends_with(".c"));
  EXPECT_EQ(read_all(res.source_path), prog.source);
  EXPECT_EQ(read_all(res.artifact), prog.source);  // cp is the "compiler"

  toolchain::TestProgram asm_prog{"p2", "l.nop\n", "asm"};
  auto res2 = tc.compile(asm_prog);
  ASSERT_EQ(res2.status, toolchain::CompileResult::Ok);
  EXPECT_TRUE(res2.source_path.ends_with(".S"));
}

TEST(SubprocessToolchain, CompileFailureCapturesLog) {
  auto work = fresh_dir("fail");
  auto cfg = cp_config(work);
  cfg.compile_cmd_template = "cat {src} >/dev/null && echo boom >&2 && false # {out}";
  toolchain::SubprocessToolchain tc(cfg);
  auto res = tc.compile({"p", "x", "c"});
  ASSERT_EQ(res.status, toolchain::CompileResult::Error);
  EXPECT_NE(res.log.find("boom"), std::string::npos);
  // source persisted for audit even on failure
  EXPECT_TRUE(fs::exists(res.source_path));
}

TEST(SubprocessToolchain, MissingCompilerIsToolNotFound) {
  auto work = fresh_dir("missing");
  auto cfg = cp_config(work);
  cfg.compile_cmd_template = "definitely_missing_xyz_tool {src} {out}";
  toolchain::SubprocessToolchain tc(cfg);
  try {
    tc.compile({"p", "x", "c"});
    FAIL() << "expected ToolNotFound";
  } catch (const toolchain::ToolNotFound& e) {
    EXPECT_NE(e.attempted_command.find("definitely_missing_xyz_tool"), std::string::npos);
  }
}

TEST(SubprocessToolchain, SimulateProducesParseableVcd) {
  auto work = fresh_dir("sim");
  toolchain::SubprocessToolchain tc(cp_config(work));
  std::string artifact = work + "/input.vcd";
  write_all(artifact, kTinyVcd);
  auto res = tc.simulate(artifact);
  ASSERT_EQ(res.status, toolchain::SimulateResult::Ok);
  auto db = vcd::parse_vcd(read_all(res.vcd_path));
  ASSERT_EQ(db.vars.size(), 1u);
  EXPECT_EQ(db.vars[0].hierarchical_name, "top.sig");
}

TEST(SubprocessToolchain, SimulateTimeoutKillsPromptly) {
  auto work = fresh_dir("timeout");
  auto cfg = cp_config(work);
  cfg.simulate_cmd_template = "sleep 5 && cp {bin} {vcd_out}";
  cfg.wall_budget = 0.3;
  toolchain::SubprocessToolchain tc(cfg);
  std::string artifact = work + "/a.bin";
  write_all(artifact, "x");
  auto res = tc.simulate(artifact);
  ASSERT_EQ(res.status, toolchain::SimulateResult::Timeout);
  EXPECT_GE(res.elapsed_seconds, 0.3);
  EXPECT_LT(res.elapsed_seconds, 4.0);  // the process group was killed, not waited out
}

TEST(SubprocessToolchain, SimulateCrashOnNonzeroExit) {
  auto work = fresh_dir("crash");
  auto cfg = cp_config(work);
  cfg.simulate_cmd_template = "exit 3 # {bin} {vcd_out}";
  toolchain::SubprocessToolchain tc(cfg);
  std::string artifact = work + "/a.bin";
  write_all(artifact, "x");
  auto res = tc.simulate(artifact);
  ASSERT_EQ(res.status, toolchain::SimulateResult::Crash);
  EXPECT_EQ(res.exit_code, 3);
}

TEST(SubprocessToolchain, SimulateCrashWhenNoVcdAppears) {
  auto work = fresh_dir("novcd");
  auto cfg = cp_config(work);
  cfg.simulate_cmd_template = "true # {bin} {vcd_out}";
  toolchain::SubprocessToolchain tc(cfg);
  std::string artifact = work + "/a.bin";
  write_all(artifact, "x");
  auto res = tc.simulate(artifact);
  EXPECT_EQ(res.status, toolchain::SimulateResult::Crash);
}

TEST(SubprocessToolchain, ArtifactNumberingMonotonicAndResumes) {
  auto work = fresh_dir("number");
  {
    toolchain::SubprocessToolchain tc(cp_config(work));
    auto r0 = tc.compile({"p", "a", "c"});
    auto r1 = tc.compile({"p", "b", "c"});
    EXPECT_NE(r0.artifact, r1.artifact);
    EXPECT_NE(r0.artifact.find("prog0000"), std::string::npos);
    EXPECT_NE(r1.artifact.find("prog0001"), std::string::npos);
    EXPECT_TRUE(fs::exists(r0.artifact));
    EXPECT_TRUE(fs::exists(r1.artifact));
  }
  // a new instance over the same work_dir never reuses numbers
  toolchain::SubprocessToolchain tc2(cp_config(work));
  auto r2 = tc2.compile({"p", "c", "c"});
  EXPECT_NE(r2.artifact.find("prog0002"), std::string::npos);
}

TEST(SubprocessToolchain, GoldenCacheHitsAndKeying) {
  auto work = fresh_dir("golden");
  auto cfg = cp_config(work);
  toolchain::SubprocessToolchain tc(cfg);
  auto count_artifacts = [&] {
    size_t n = 0;
    for (const auto& e : fs::directory_iterator(work))
      if (e.path().filename().string().rfind("prog", 0) == 0) ++n;
    return n;
  };
  std::string p1 = tc.golden_trace();
  EXPECT_TRUE(fs::exists(p1));
  EXPECT_NE(p1.find("golden_"), std::string::npos);
  size_t after_first = count_artifacts();
  std::string p2 = tc.golden_trace();
  EXPECT_EQ(p1, p2);
  EXPECT_EQ(count_artifacts(), after_first);  // no fresh subprocess work

  // different template digest, different cache entry
  auto cfg2 = cfg;
  cfg2.simulate_cmd_template = "cp {bin} {vcd_out} # v2";
  toolchain::SubprocessToolchain tc2(cfg2);
  std::string p3 = tc2.golden_trace();
  EXPECT_NE(p3, p1);
}

TEST(SubprocessToolchain, GoldenCompileFailureSurfacesAndCachesNothing) {
  auto work = fresh_dir("goldenfail");
  auto cfg = cp_config(work);
  cfg.compile_cmd_template = "echo nope >&2 && false # {src} {out}";
  toolchain::SubprocessToolchain tc(cfg);
  try {
    tc.golden_trace();
    FAIL() << "expected GoldenTraceError";
  } catch (const toolchain::GoldenTraceError& e) {
    EXPECT_NE(e.log.find("nope"), std::string::npos);
  }
  EXPECT_TRUE(fs::is_empty(cfg.golden_cache));
}

TEST(SubprocessToolchain, ConcurrencyCapIsEnforced) {
  auto work = fresh_dir("conc");
  std::string marker = work + "/marker.txt";
  auto cfg = cp_config(work);
  cfg.compile_cmd_template =
      "echo s >> " + marker + " ; sleep 0.15 ; echo e >> " + marker + " ; cp {src} {out}";
  cfg.max_concurrency = 2;
  toolchain::SubprocessToolchain tc(cfg);
  std::vector<std::thread> threads;
  for (int i = 0; i < 6; ++i)
    threads.emplace_back([&tc, i] {
      auto r = tc.compile({"p", "src" + std::to_string(i), "c"});
      EXPECT_EQ(r.status, toolchain::CompileResult::Ok);
    });
  for (auto& t : threads) t.join();

  int live = 0, peak = 0;
  std::ifstream f(marker);
  std::string line;
  int starts = 0;
  while (std::getline(f, line)) {
    if (line == "s") {
      ++starts;
      peak = std::max(peak, ++live);
    } else if (line == "e") {
      --live;
    }
  }
  EXPECT_EQ(starts, 6);
  EXPECT_LE(peak, 2);
}

// ---------------------------------------------------------------------------
// Scripted fake
// ---------------------------------------------------------------------------

TEST(FakeToolchain, ScriptedSuccessRoundTrip) {
  auto work = fresh_dir("fake");
  std::string fixture = work + "/hit.vcd";
  write_all(fixture, kTinyVcd);
  toolchain::FakeToolchain fake(work + "/run", fixture,
                                {{"*", "ok", "", "ok", fixture, "", 1}});
  auto comp = fake.compile({"p", "int main(){}", "c"});
  ASSERT_EQ(comp.status, toolchain::CompileResult::Ok);
  EXPECT_TRUE(fs::exists(comp.artifact));
  auto sim = fake.simulate(comp.artifact);
  ASSERT_EQ(sim.status, toolchain::SimulateResult::Ok);
  EXPECT_TRUE(vcd::parse_vcd(read_all(sim.vcd_path)) == vcd::parse_vcd(kTinyVcd));
  EXPECT_EQ(fake.compile_calls, 1);
  EXPECT_EQ(fake.simulate_calls, 1);
}

TEST(FakeToolchain, FirstMatchWinsAndLogsVerbatim) {
  auto work = fresh_dir("fakematch");
  std::string fixture = work + "/hit.vcd";
  write_all(fixture, kTinyVcd);
  toolchain::FakeToolchain fake(
      work + "/run", fixture,
      {{"BAD", "fail", "t.c:3: error: boom", "ok", fixture, "", 1},
       {"*", "ok", "", "ok", fixture, "", 1}});
  auto bad = fake.compile({"p", "// BAD program", "c"});
  ASSERT_EQ(bad.status, toolchain::CompileResult::Error);
  EXPECT_EQ(bad.log, "t.c:3: error: boom");
  auto good = fake.compile({"p", "// fine", "c"});
  EXPECT_EQ(good.status, toolchain::CompileResult::Ok);
}

TEST(FakeToolchain, TimeoutIncrementsTerminationHook) {
  auto work = fresh_dir("faketo");
  toolchain::FakeToolchain fake(work + "/run", "",
                                {{"*", "ok", "", "timeout", "", "", 1}});
  auto comp = fake.compile({"p", "x", "c"});
  auto sim = fake.simulate(comp.artifact);
  ASSERT_EQ(sim.status, toolchain::SimulateResult::Timeout);
  EXPECT_GE(sim.elapsed_seconds, 120.0);
  EXPECT_EQ(fake.terminations, 1);  // no zombie: the kill hook fired
}

TEST(FakeToolchain, CrashCarriesExitCode) {
  auto work = fresh_dir("fakecrash");
  toolchain::FakeToolchain fake(work + "/run", "",
                                {{"*", "ok", "", "crash", "", "sim blew up", 7}});
  auto comp = fake.compile({"p", "x", "c"});
  auto sim = fake.simulate(comp.artifact);
  ASSERT_EQ(sim.status, toolchain::SimulateResult::Crash);
  EXPECT_EQ(sim.exit_code, 7);
  EXPECT_EQ(sim.log, "sim blew up");
}

TEST(FakeToolchain, ScriptedToolNotFound) {
  auto work = fresh_dir("fakemissing");
  toolchain::FakeToolchain fake(work + "/run", "",
                                {{"*", "toolnotfound", "", "ok", "", "", 1}});
  EXPECT_THROW(fake.compile({"p", "x", "c"}), toolchain::ToolNotFound);
}

TEST(FakeToolchain, GoldenGeneratedOnce) {
  auto work = fresh_dir("fakegold");
  std::string fixture = work + "/golden.vcd";
  write_all(fixture, kTinyVcd);
  toolchain::FakeToolchain fake(work + "/run", fixture, {});
  std::string g1 = fake.golden_trace();
  std::string g2 = fake.golden_trace();
  EXPECT_EQ(g1, g2);
  EXPECT_EQ(g1, fixture);
  EXPECT_EQ(fake.golden_generations, 1);
}

TEST(FakeToolchain, LoadsScriptJson) {
  auto dir = fresh_dir("fakescript");
  write_all(dir + "/golden.vcd", kTinyVcd);
  write_all(dir + "/hit.vcd", kTinyVcd);
  write_all(dir + "/script.json", R"json({
    "golden_vcd": "golden.vcd",
    "rules": [
      {"match": "while(1)", "compile": "ok", "sim": "timeout"},
      {"match": "*", "compile": "ok", "sim": "ok", "vcd": "hit.vcd"}
    ]
  })json");
  auto fake = toolchain::FakeToolchain::from_script(dir + "/script.json", dir + "/run");
  EXPECT_EQ(fake.golden_trace(), dir + "/golden.vcd");
  auto loop = fake.compile({"p", "int main(){while(1);}", "c"});
  EXPECT_EQ(fake.simulate(loop.artifact).status, toolchain::SimulateResult::Timeout);
  auto fine = fake.compile({"p", "int main(){return 0;}", "c"});
  auto sim = fake.simulate(fine.artifact);
  ASSERT_EQ(sim.status, toolchain::SimulateResult::Ok);
  EXPECT_FALSE(vcd::parse_vcd(read_all(sim.vcd_path)).vars.empty());
}
