// SPDX-License-Identifier: Apache-2.0
//
// End-to-end tests that drive the installed binary the way a user would:
// every assertion goes through argv, exit codes, and files on disk. The
// committed golden outputs pin the full pipeline byte for byte.

#include <gtest/gtest.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& tag) {
  static int counter = 0;
  auto dir = fs::temp_directory_path() /
             ("rarecov_cli_" + tag + "_" + std::to_string(getpid()) + "_" +
              std::to_string(counter++));
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

struct RunResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr interleaved
};

RunResult run_cli(const std::string& args) {
  std::string cmd = std::string(RARECOV_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  RunResult res;
  if (!pipe) return res;
  char buf[4096];
  size_t n;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) res.output.append(buf, n);
  int status = pclose(pipe);
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

// One flat directory holding every input the fixture config references.
std::string make_bundle(const std::string& tag) {
  std::string dir = fresh_dir(tag);
  const std::string fx = RARECOV_FIXTURE_DIR;
  for (const char* rel :
       {"rtl/toy_core.v", "vcd/bench1.vcd", "vcd/bench2.vcd", "isa/isa_demo.json",
        "toolchain/fake.json", "toolchain/golden.vcd", "toolchain/flat.vcd",
        "toolchain/trig_ovf.vcd", "toolchain/trig_both.vcd", "agent/provider.json",
        "pipeline/config.json"})
    fs::copy_file(fx + "/" + rel, dir + "/" + fs::path(rel).filename().string());
  return dir;
}

std::string config_of(const std::string& bundle) { return bundle + "/config.json"; }

}  // namespace

// ---------------------------------------------------------------------------
// Full pipeline against committed goldens
// ---------------------------------------------------------------------------

TEST(CliPipeline, MatchesCommittedGoldensByteForByte) {
  std::string dir = make_bundle("golden");
  auto res = run_cli("pipeline --config " + config_of(dir));
  ASSERT_EQ(res.exit_code, 0) << res.output;

  const std::string golden = std::string(RARECOV_FIXTURE_DIR) + "/pipeline/golden";
  size_t compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(golden)) {
    if (!entry.is_regular_file()) continue;
    std::string rel = fs::relative(entry.path(), golden).string();
    std::string produced = dir + "/out/" + rel;
    ASSERT_TRUE(fs::exists(produced)) << "missing output " << rel;
    EXPECT_EQ(read_all(produced), read_all(entry.path().string())) << "differs: " << rel;
    ++compared;
  }
  EXPECT_GE(compared, 20u);
}

TEST(CliPipeline, RerunIsByteIdentical) {
  std::string a = make_bundle("rerun_a");
  std::string b = make_bundle("rerun_b");
  ASSERT_EQ(run_cli("pipeline --config " + config_of(a)).exit_code, 0);
  ASSERT_EQ(run_cli("pipeline --config " + config_of(b)).exit_code, 0);
  for (const auto& entry : fs::recursive_directory_iterator(a + "/out")) {
    if (!entry.is_regular_file()) continue;
    std::string rel = fs::relative(entry.path(), a + "/out").string();
    if (rel.rfind("toolchain/", 0) == 0) continue;  // scratch artifacts
    EXPECT_EQ(read_all(entry.path().string()), read_all(b + "/out/" + rel)) << rel;
  }
}

TEST(CliPipeline, CompletedStagesAreSkippedWithoutProviderAccess) {
  std::string dir = make_bundle("resume");
  ASSERT_EQ(run_cli("pipeline --config " + config_of(dir)).exit_code, 0);
  for (const char* stage : {"analyze", "trace", "events", "generate", "detect", "report"})
    EXPECT_TRUE(fs::exists(dir + "/out/.stage." + std::string(stage) + ".done")) << stage;

  // a rerun must not consult the provider: an empty transcript would fail
  // any attempted generation instantly
  write_all(dir + "/provider.json", "{\"entries\": []}");
  auto res = run_cli("pipeline --config " + config_of(dir));
  EXPECT_EQ(res.exit_code, 0) << res.output;
}

TEST(CliPipeline, MissingStageMarkerReplaysOnlyThatStage) {
  std::string dir = make_bundle("partial_resume");
  ASSERT_EQ(run_cli("pipeline --config " + config_of(dir)).exit_code, 0);
  std::string before = read_all(dir + "/out/table3.csv");
  fs::remove(dir + "/out/.stage.report.done");
  fs::remove(dir + "/out/table3.csv");
  ASSERT_EQ(run_cli("pipeline --config " + config_of(dir)).exit_code, 0);
  EXPECT_EQ(read_all(dir + "/out/table3.csv"), before);
}

// ---------------------------------------------------------------------------
// Individual commands
// ---------------------------------------------------------------------------

TEST(CliCommands, AnalyzeAloneWritesStatsAndPartition) {
  std::string dir = make_bundle("analyze");
  auto res = run_cli("analyze --config " + config_of(dir));
  ASSERT_EQ(res.exit_code, 0) << res.output;
  const std::string golden = std::string(RARECOV_FIXTURE_DIR) + "/pipeline/golden";
  EXPECT_EQ(read_all(dir + "/out/stats.json"), read_all(golden + "/stats.json"));
  EXPECT_EQ(read_all(dir + "/out/stats.csv"), read_all(golden + "/stats.csv"));
  EXPECT_EQ(read_all(dir + "/out/partition.json"), read_all(golden + "/partition.json"));
}

TEST(CliCommands, TraceReportsUnknownSignalsAsSkippedWithPartialExit) {
  std::string dir = make_bundle("trace_skip");
  ASSERT_EQ(run_cli("analyze --config " + config_of(dir)).exit_code, 0);
  auto res = run_cli("trace --config " + config_of(dir) +
                     " --signal toy_top.u_alu.ovf --signal ghost.net");
  EXPECT_EQ(res.exit_code, 1) << res.output;
  EXPECT_TRUE(fs::exists(dir + "/out/traces/toy_top.u_alu.ovf.json"));
  std::string skiplist = read_all(dir + "/out/skiplist.json");
  EXPECT_NE(skiplist.find("ghost.net"), std::string::npos);
}

TEST(CliCommands, ReportPrintsCsvTableWhenAsked) {
  std::string dir = make_bundle("report_csv");
  ASSERT_EQ(run_cli("pipeline --config " + config_of(dir)).exit_code, 0);
  auto res = run_cli("report --config " + config_of(dir) + " --format csv --verbosity 1");
  ASSERT_EQ(res.exit_code, 0);
  EXPECT_NE(res.output.find("theta,rare_events,triggered,percent"), std::string::npos);
  EXPECT_NE(res.output.find("0.05,2,1,50.00"), std::string::npos);
}

TEST(CliCommands, GenerateHonorsEventSelector) {
  std::string dir = make_bundle("gen_select");
  std::string cfg = config_of(dir);
  ASSERT_EQ(run_cli("analyze --config " + cfg).exit_code, 0);
  ASSERT_EQ(run_cli("trace --all-rare --config " + cfg).exit_code, 0);
  ASSERT_EQ(run_cli("events --config " + cfg).exit_code, 0);
  // only the decode event: the transcript's first entry triggers it
  auto res = run_cli("generate --config " + cfg + " --event 600306dd29c53c6f");
  ASSERT_EQ(res.exit_code, 0) << res.output;
  std::string summary = read_all(dir + "/out/generation_summary.json");
  EXPECT_NE(summary.find("600306dd29c53c6f"), std::string::npos);
  EXPECT_EQ(summary.find("c0181b1c3044d329"), std::string::npos);
}

// ---------------------------------------------------------------------------
// Exit codes
// ---------------------------------------------------------------------------

TEST(CliExitCodes, MissingConfigFileIsConfigError) {
  auto res = run_cli("analyze --config /nonexistent/cfg.json");
  EXPECT_EQ(res.exit_code, 2);
}

TEST(CliExitCodes, MalformedConfigIsConfigError) {
  std::string dir = fresh_dir("badcfg");
  write_all(dir + "/config.json", "{ not json");
  EXPECT_EQ(run_cli("analyze --config " + dir + "/config.json").exit_code, 2);
}

TEST(CliExitCodes, InvalidThresholdOrderIsConfigError) {
  std::string dir = make_bundle("badthr");
  std::string cfg = read_all(config_of(dir));
  auto pos = cfg.find("[0.05, 0.1, 0.2]");
  ASSERT_NE(pos, std::string::npos);
  cfg.replace(pos, std::string("[0.05, 0.1, 0.2]").size(), "[0.2, 0.1]");
  write_all(config_of(dir), cfg);
  auto res = run_cli("analyze --config " + config_of(dir));
  EXPECT_EQ(res.exit_code, 2);
  EXPECT_NE(res.output.find("thresholds"), std::string::npos);
}

TEST(CliExitCodes, UnknownSubcommandIsConfigError) {
  EXPECT_EQ(run_cli("frobnicate --config x.json").exit_code, 2);
}

TEST(CliExitCodes, BadFormatFlagIsConfigError) {
  std::string dir = make_bundle("badfmt");
  EXPECT_EQ(run_cli("analyze --config " + config_of(dir) + " --format xml").exit_code, 2);
}

TEST(CliExitCodes, StagesOutOfOrderAreConfigErrors) {
  std::string dir = make_bundle("order");
  std::string cfg = config_of(dir);
  auto res = run_cli("events --config " + cfg);  // needs analyze output
  EXPECT_EQ(res.exit_code, 2);
  EXPECT_NE(res.output.find("analyze"), std::string::npos);
  ASSERT_EQ(run_cli("analyze --config " + cfg).exit_code, 0);
  EXPECT_EQ(run_cli("detect --config " + cfg).exit_code, 2);   // needs events
  EXPECT_EQ(run_cli("report --config " + cfg).exit_code, 2);   // needs verdicts
}

TEST(CliExitCodes, UnknownEventSelectorIsConfigError) {
  std::string dir = make_bundle("badevent");
  std::string cfg = config_of(dir);
  ASSERT_EQ(run_cli("analyze --config " + cfg).exit_code, 0);
  ASSERT_EQ(run_cli("trace --all-rare --config " + cfg).exit_code, 0);
  ASSERT_EQ(run_cli("events --config " + cfg).exit_code, 0);
  auto res = run_cli("generate --config " + cfg + " --event no-such-event");
  EXPECT_EQ(res.exit_code, 2);
  EXPECT_NE(res.output.find("no-such-event"), std::string::npos);
}

TEST(CliExitCodes, UnreachableProviderIsEnvironmentError) {
  std::string dir = make_bundle("deadprov");
  std::string cfg = config_of(dir);
  ASSERT_EQ(run_cli("analyze --config " + cfg).exit_code, 0);
  ASSERT_EQ(run_cli("trace --all-rare --config " + cfg).exit_code, 0);
  ASSERT_EQ(run_cli("events --config " + cfg).exit_code, 0);
  std::string text = read_all(cfg);
  auto pos = text.find("\"provider\": \"scripted\"");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, std::string("\"provider\": \"scripted\"").size(),
               "\"provider\": \"http\", \"http\": {\"host\": \"127.0.0.1\", \"port\": 9,"
               " \"timeout_s\": 0.05}");
  write_all(cfg, text);
  auto res = run_cli("generate --config " + cfg);
  EXPECT_EQ(res.exit_code, 3) << res.output;
}

TEST(CliExitCodes, BrokenToolchainIsEnvironmentError) {
  std::string dir = make_bundle("deadtool");
  std::string cfg = config_of(dir);
  ASSERT_EQ(run_cli("analyze --config " + cfg).exit_code, 0);
  ASSERT_EQ(run_cli("trace --all-rare --config " + cfg).exit_code, 0);
  ASSERT_EQ(run_cli("events --config " + cfg).exit_code, 0);
  // every compile reports a missing tool
  write_all(dir + "/fake.json",
            "{\"golden_vcd\": \"golden.vcd\", \"rules\":"
            " [{\"match\": \"*\", \"compile\": \"toolnotfound\"}]}");
  auto res = run_cli("generate --config " + cfg);
  EXPECT_EQ(res.exit_code, 3) << res.output;
}
