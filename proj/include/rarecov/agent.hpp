// SPDX-License-Identifier: Apache-2.0
//
// State-driven test generation: query rewrite and classification, layered
// prompt assembly under four strategy tiers, the iterate-until-triggered
// loop against a toolchain, structured failure classification, and the
// feedback embedding that turns one iteration's failure into the next
// iteration's prompt. Everything here is deterministic given a scripted
// provider and a fake toolchain; no wall-clock values enter any output.

#pragma once

#include <algorithm>
#include <chrono>
#include <optional>
#include <ostream>
#include <regex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "rarecov/event_db.hpp"
#include "rarecov/jsonio.hpp"
#include "rarecov/toolchain.hpp"
#include "rarecov/util.hpp"
#include "rarecov/vcd.hpp"

namespace rarecov::agent {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct ProviderError : std::runtime_error {
  explicit ProviderError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NotAnEvent : std::runtime_error {
  std::string reason;
  explicit NotAnEvent(const std::string& r)
      : std::runtime_error("query rejected by classifier: " + r), reason(r) {}
};

struct NoMatch : std::runtime_error {
  std::string query;
  explicit NoMatch(const std::string& q)
      : std::runtime_error("no event matches query: " + q), query(q) {}
};

// ---------------------------------------------------------------------------
// Prompt types
// ---------------------------------------------------------------------------

struct PromptBundle {
  std::string system_text;
  std::string user_text;
  std::vector<std::string> attachments;  // document references by id
  std::vector<std::string> notes;        // assembly notes, excluded from digest

  std::string digest() const {
    std::string all = system_text;
    all += '\x1f';
    all += user_text;
    all += '\x1f';
    all += util::join(attachments, ",");
    return util::hex64(util::fnv1a64(all));
  }
};

enum class Tier { T1, T2, T3, T4 };

struct StrategyTier {
  Tier tier = Tier::T2;
  bool attach_isa_json = true;
  bool enforce_rules_and_repair = true;
  bool include_event_guidance = false;
  bool include_exemplars = false;
};

inline StrategyTier make_tier(Tier t) {
  switch (t) {
    case Tier::T1: return {t, false, false, false, false};
    case Tier::T2: return {t, true, true, false, false};
    case Tier::T3: return {t, true, true, true, false};
    case Tier::T4: return {t, true, true, true, true};
  }
  throw std::invalid_argument("bad tier");
}

inline StrategyTier parse_tier(const std::string& name) {
  if (name == "T1") return make_tier(Tier::T1);
  if (name == "T2") return make_tier(Tier::T2);
  if (name == "T3") return make_tier(Tier::T3);
  if (name == "T4") return make_tier(Tier::T4);
  throw std::invalid_argument("unknown strategy tier: " + name);
}

inline std::string tier_name(Tier t) {
  switch (t) {
    case Tier::T1: return "T1";
    case Tier::T2: return "T2";
    case Tier::T3: return "T3";
    case Tier::T4: return "T4";
  }
  return "T?";
}

// ---------------------------------------------------------------------------
// Program, verdict, failure
// ---------------------------------------------------------------------------

struct GeneratedProgram {
  std::string id;
  std::vector<std::string> target_event_ids;
  std::string language_kind;  // c_source | inline_assembly_in_c
  std::string source_text;    // exactly one code block's contents
  std::string origin_provider;
  std::string origin_tier;
  int origin_iteration = 0;

  toolchain::TestProgram to_toolchain() const { return {id, source_text, "c"}; }
};

inline std::string detect_language_kind(const std::string& source) {
  static const std::regex asm_marker(R"((__asm__|\basm\b|\.section\b|\bl\.[a-z]+\b))");
  return std::regex_search(source, asm_marker) ? "inline_assembly_in_c" : "c_source";
}

struct TriggerVerdict {
  bool triggered = false;
  std::vector<vcd::TransitionDelta> deltas;
  std::optional<uint64_t> first_extra_transition_time;
};

struct FailureCause {
  enum Kind { None, CompileError, SimulationTimeout, NotTriggered } kind = None;
  jsonio::json detail = jsonio::json::object();
};

inline std::string failure_kind_name(FailureCause::Kind k) {
  switch (k) {
    case FailureCause::None: return "none";
    case FailureCause::CompileError: return "compile-error";
    case FailureCause::SimulationTimeout: return "simulation-timeout";
    case FailureCause::NotTriggered: return "not-triggered";
  }
  return "?";
}

struct Iteration {
  PromptBundle prompt;
  GeneratedProgram program;
  TriggerVerdict verdict;
  FailureCause failure;
};

struct GenerationSession {
  std::string event_id;
  std::vector<Iteration> iterations;
  enum Status { Triggered, Exhausted, Aborted } final_status = Exhausted;
  int budget = 0;
  std::string abort_reason;
};

inline std::string status_name(GenerationSession::Status s) {
  switch (s) {
    case GenerationSession::Triggered: return "triggered";
    case GenerationSession::Exhausted: return "exhausted";
    case GenerationSession::Aborted: return "aborted";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Providers
// ---------------------------------------------------------------------------

class LLMProvider {
 public:
  virtual ~LLMProvider() = default;
  /// One completion round-trip. Throws ProviderError on transport or
  /// format failure; retry policy lives in the caller.
  virtual std::string submit(const PromptBundle& bundle) = 0;
  virtual std::string id() const = 0;
};

/// Deterministic transcript playback: an ordered list of responses, each
/// optionally pinned to the digest of the prompt it answers. Any drift
/// between the expected and actual prompt is a hard error, which is what
/// makes transcript tests byte-exact.
class ScriptedProvider : public LLMProvider {
 public:
  struct Entry {
    std::string expect_digest;  // empty: accept any prompt
    std::string response;
  };

  explicit ScriptedProvider(std::vector<Entry> entries) : entries_(std::move(entries)) {}

  static ScriptedProvider from_json(const jsonio::json& j) {
    std::vector<Entry> entries;
    for (const auto& e : j.value("entries", jsonio::json::array()))
      entries.push_back({e.value("expect_digest", ""), e.value("response", "")});
    return ScriptedProvider(std::move(entries));
  }

  static ScriptedProvider from_file(const std::string& path) {
    return from_json(jsonio::parse_checked(jsonio::read_file(path)));
  }

  std::string submit(const PromptBundle& bundle) override {
    ++calls;
    if (next_ >= entries_.size())
      throw ProviderError("script exhausted after " + std::to_string(entries_.size()) +
                          " responses");
    const Entry& e = entries_[next_++];
    if (!e.expect_digest.empty() && e.expect_digest != bundle.digest())
      throw ProviderError("prompt digest mismatch at entry " + std::to_string(next_ - 1) +
                          ": expected " + e.expect_digest + ", got " + bundle.digest());
    return e.response;
  }

  std::string id() const override { return "scripted"; }

  int calls = 0;

 private:
  std::vector<Entry> entries_;
  size_t next_ = 0;
};

// ---------------------------------------------------------------------------
// Prompt text building blocks
// ---------------------------------------------------------------------------

// Verbatim in every tier from T2 up; the monotonicity property tests
// compare against this exact text.
inline const char* rules_block() {
  return
      "Global rules:\n"
      "1. Respond with exactly one fenced code block and nothing else.\n"
      "2. Do not fabricate opcodes: use only instructions present in the attached ISA database.\n"
      "3. The program must terminate on its own.\n";
}

inline const char* analysis_procedure() {
  return
      "Analysis procedure:\n"
      "1. Read the event metadata and identify the hardware condition behind it.\n"
      "2. Select instructions from the ISA database that exercise that condition.\n"
      "3. Write a minimal program around those instructions.\n"
      "4. Re-check every rule before responding.\n";
}

inline const char* kshot_examples() {
  return
      "Working example (standard C):\n"
      "```c\n"
      "int main(void) {\n"
      "  volatile unsigned x = 51u;\n"
      "  x = x * 3u + 1u;\n"
      "  return 0;\n"
      "}\n"
      "```\n"
      "Working example (inline assembly):\n"
      "```c\n"
      "int main(void) {\n"
      "  __asm__ volatile(\"l.nop\");\n"
      "  return 0;\n"
      "}\n"
      "```\n";
}

// The checklist wording is original to this toolkit; configs carry a
// checklist_origin marker saying so.
inline const char* self_checklist() {
  return
      "Pre-generation self-checklist:\n"
      "- exactly one code block in the response\n"
      "- every opcode exists in the ISA database\n"
      "- the program terminates\n"
      "- the program plausibly reaches the event condition\n";
}

inline const char* output_structure() {
  return
      "Output structure: respond with exactly one fenced code block containing the\n"
      "complete program, and no prose outside the block.\n";
}

// ---------------------------------------------------------------------------
// Metadata retrieval
// ---------------------------------------------------------------------------

struct EventBrief {
  std::string event_id;
  std::string name;
  std::string description;
  std::string logical_summary;
  std::string stimulus_guidance;
  std::vector<std::string> instruction_categories;
  std::vector<std::string> source_signals;
  std::string module_stage;
  std::vector<events::IsaInstruction> shortlist;
};

inline EventBrief retrieve_metadata(const std::string& event_id, const events::EventDB& db,
                                    const events::IsaDB& isa) {
  const events::EventRecord& r = events::get_event(db, event_id);
  EventBrief b;
  b.event_id = r.id;
  b.name = r.name;
  b.description = r.description;
  b.logical_summary = r.logical_summary;
  b.stimulus_guidance = r.stimulus_guidance;
  b.instruction_categories = r.instruction_categories;
  b.source_signals = r.source_signals;
  b.module_stage = r.module_stage;
  b.shortlist = events::instruction_shortlist(isa, r.instruction_categories);
  return b;
}

// ---------------------------------------------------------------------------
// Exemplar pool
// ---------------------------------------------------------------------------

struct Exemplar {
  std::string event_id;
  std::vector<std::string> categories;
  std::string source_text;
  std::string language_kind;
  int64_t seq = 0;  // insertion order; larger is more recent
};

class ExemplarPool {
 public:
  void add(Exemplar e) {
    e.seq = next_seq_++;
    items_.push_back(std::move(e));
  }

  size_t size() const { return items_.size(); }

  /// Up to k exemplars ranked by instruction-category overlap with the
  /// target event (descending), recency breaking ties.
  std::vector<Exemplar> select(const std::vector<std::string>& categories, size_t k) const {
    std::vector<std::pair<int, const Exemplar*>> scored;
    for (const auto& e : items_) {
      int overlap = 0;
      for (const auto& c : e.categories)
        if (std::find(categories.begin(), categories.end(), c) != categories.end()) ++overlap;
      scored.push_back({overlap, &e});
    }
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second->seq > b.second->seq;
    });
    std::vector<Exemplar> out;
    for (const auto& [score, e] : scored) {
      if (out.size() >= k) break;
      out.push_back(*e);
    }
    return out;
  }

  jsonio::json to_json() const {
    jsonio::json arr = jsonio::json::array();
    for (const auto& e : items_)
      arr.push_back({{"event_id", e.event_id},
                     {"categories", e.categories},
                     {"source_text", e.source_text},
                     {"language_kind", e.language_kind},
                     {"seq", e.seq}});
    return jsonio::json{{"exemplars", arr}};
  }

  static ExemplarPool from_json(const jsonio::json& j) {
    ExemplarPool pool;
    for (const auto& e : j.value("exemplars", jsonio::json::array())) {
      Exemplar ex;
      ex.event_id = e.value("event_id", "");
      ex.categories = e.value("categories", std::vector<std::string>{});
      ex.source_text = e.value("source_text", "");
      ex.language_kind = e.value("language_kind", "c_source");
      ex.seq = e.value("seq", int64_t{0});
      pool.next_seq_ = std::max(pool.next_seq_, ex.seq + 1);
      pool.items_.push_back(std::move(ex));
    }
    return pool;
  }

 private:
  std::vector<Exemplar> items_;
  int64_t next_seq_ = 0;
};

// ---------------------------------------------------------------------------
// Prompt assembly
// ---------------------------------------------------------------------------

struct PromptInputs {
  EventBrief event;
  std::string constraints;  // user-defined constraints and objectives
  std::string isa_manual_ref = "isa_manual.pdf";
  std::string isa_json_ref = "isa.json";
};

namespace detail {

inline std::string shortlist_text(const std::vector<events::IsaInstruction>& shortlist) {
  std::string out = "Relevant instructions:\n";
  for (const auto& i : shortlist)
    out += "- " + i.id + ": " + i.syntax + " -- " + i.description + "\n";
  if (shortlist.empty()) out += "(none listed)\n";
  return out;
}

inline std::string deltas_json(const std::vector<vcd::TransitionDelta>& deltas) {
  jsonio::json arr = jsonio::json::array();
  for (const auto& d : deltas)
    arr.push_back({{"signal", d.hierarchical_name},
                   {"golden_transitions", d.golden_transitions},
                   {"test_transitions", d.test_transitions},
                   {"delta", d.delta}});
  return arr.dump(2);
}

inline std::string feedback_section(const std::vector<Iteration>& history,
                                    const std::vector<Exemplar>& exemplars) {
  const Iteration& last = history.back();
  std::string out = "## Feedback from previous attempts\n";
  out += "Attempt history:\n";
  for (size_t i = 0; i < history.size(); ++i)
    out += "- attempt " + std::to_string(i + 1) + ": " +
           failure_kind_name(history[i].failure.kind) + "\n";
  switch (last.failure.kind) {
    case FailureCause::CompileError:
      out += "The previous program failed to compile. Structured error report:\n";
      out += "```json\n" + last.failure.detail.dump(2) + "\n```\n";
      out += "Repair the program below rather than regenerating from scratch.\n";
      break;
    case FailureCause::SimulationTimeout:
      out += "The previous program exceeded the simulation budget";
      if (last.failure.detail.contains("elapsed_seconds"))
        out += " (" + last.failure.detail["elapsed_seconds"].dump() + " s)";
      out += ".\n";
      break;
    case FailureCause::NotTriggered:
      out += "The previous program compiled and ran but did not trigger the event.\n";
      out += "Transition deltas against the golden trace:\n";
      out += "```json\n" + last.failure.detail.dump(2) + "\n```\n";
      if (!exemplars.empty()) {
        out += "Successful programs for related events, for reference:\n";
        int n = 0;
        for (const auto& e : exemplars)
          out += "Example " + std::to_string(++n) + ":\n```\n" + e.source_text + "\n```\n";
      }
      break;
    case FailureCause::None:
      break;
  }
  if (!last.program.source_text.empty())
    out += "Previous program:\n```\n" + last.program.source_text + "\n```\n";
  return out;
}

}  // namespace detail

/// Deterministic layered prompt assembly. History drives the feedback
/// sections only from T2 up (T1 has no repair loop). Exemplars are a T4
/// feature; an empty pool under T4 degrades to T3 assembly with a note.
inline PromptBundle assemble_prompt(const PromptInputs& in, const StrategyTier& tier,
                                    const std::vector<Iteration>& history,
                                    const std::vector<Exemplar>& exemplars) {
  PromptBundle b;
  bool use_exemplars = tier.include_exemplars;
  if (tier.include_exemplars && exemplars.empty()) {
    use_exemplars = false;
    b.notes.push_back("exemplars unavailable; degraded to T3 assembly");
  }

  if (tier.tier == Tier::T1) {
    // minimal rule-setting, restricted to the user role
    b.system_text = "You are a helpful assistant.\n";
    b.user_text = "Event: " + in.event.name + "\n";
    b.user_text += "Summary: " + in.event.description + "\n";
    b.user_text +=
        "Write a small C program for this processor that causes the event. "
        "Reply with one code block.\n";
    b.attachments.push_back(in.isa_manual_ref);
    return b;
  }

  // system layer: role, global rules, analysis procedure, k-shot examples
  b.system_text = "You generate minimal C or inline-assembly test programs that trigger rare "
                  "microarchitectural events in a processor design.\n";
  if (use_exemplars)
    b.system_text += "Role for this run: specialist in triggering the event '" + in.event.name +
                     "' in the " + in.event.module_stage + " stage.\n";
  b.system_text += "\n";
  b.system_text += rules_block();
  b.system_text += "\n";
  b.system_text += analysis_procedure();
  b.system_text += "\n";
  b.system_text += kshot_examples();
  if (use_exemplars) {
    b.system_text += "\nPreviously successful programs for related events:\n";
    int n = 0;
    for (const auto& e : exemplars) {
      b.system_text += "Exemplar " + std::to_string(++n) + " (categories: " +
                       util::join(e.categories, ",") + "):\n```\n" + e.source_text + "\n```\n";
    }
  }
  if (tier.enforce_rules_and_repair && !history.empty() &&
      history.back().failure.kind == FailureCause::SimulationTimeout) {
    b.system_text +=
        "\nThe previous attempt timed out. Detect potential infinite loops, add "
        "termination conditions, and revise problematic inline assembly segments.\n";
  }

  // user layer: metadata, constraints, checklist, output structure, feedback
  b.user_text = "## Event metadata\n";
  b.user_text += "Name: " + in.event.name + "\n";
  b.user_text += "Description: " + in.event.description + "\n";
  b.user_text += "Pipeline stage: " + in.event.module_stage + "\n";
  if (tier.include_event_guidance) {
    b.user_text += "Logical summary: " + in.event.logical_summary + "\n";
    b.user_text += "Stimulus guidance: " + in.event.stimulus_guidance + "\n";
    b.user_text += "Instruction categories: " +
                   util::join(in.event.instruction_categories, ", ") + "\n";
    b.user_text += detail::shortlist_text(in.event.shortlist);
  }
  if (!in.constraints.empty())
    b.user_text += "## Constraints and objectives\n" + in.constraints + "\n";
  b.user_text += "## Checklist\n";
  b.user_text += self_checklist();
  b.user_text += "## Output\n";
  b.user_text += output_structure();
  if (tier.enforce_rules_and_repair && !history.empty()) {
    b.user_text += detail::feedback_section(history, use_exemplars ? exemplars
                                                                   : std::vector<Exemplar>{});
  }

  b.attachments.push_back(in.isa_manual_ref);
  if (tier.attach_isa_json) b.attachments.push_back(in.isa_json_ref);
  return b;
}

// ---------------------------------------------------------------------------
// Code block extraction
// ---------------------------------------------------------------------------

/// A response must contain exactly one fenced code block. Returns its
/// contents (language tag stripped); otherwise nullopt with the count of
/// complete blocks found in *blocks_found.
inline std::optional<std::string> extract_single_code_block(const std::string& response,
                                                            int* blocks_found = nullptr) {
  std::vector<size_t> fence_lines;
  std::vector<std::string> lines;
  size_t start = 0;
  while (start <= response.size()) {
    size_t nl = response.find('\n', start);
    std::string line = nl == std::string::npos ? response.substr(start)
                                               : response.substr(start, nl - start);
    if (util::trim(line).rfind("```", 0) == 0) fence_lines.push_back(lines.size());
    lines.push_back(line);
    if (nl == std::string::npos) break;
    start = nl + 1;
  }
  int blocks = static_cast<int>(fence_lines.size() / 2);
  if (blocks_found) *blocks_found = blocks;
  if (fence_lines.size() != 2) return std::nullopt;
  std::string body;
  for (size_t i = fence_lines[0] + 1; i < fence_lines[1]; ++i) {
    body += lines[i];
    body += '\n';
  }
  if (!body.empty()) body.pop_back();
  return body;
}

// ---------------------------------------------------------------------------
// Failure classification
// ---------------------------------------------------------------------------

namespace detail {

inline std::string error_type_of(const std::string& message) {
  std::string m = util::to_lower(message);
  if (m.find("unknown opcode") != std::string::npos ||
      m.find("no such instruction") != std::string::npos ||
      m.find("bad instruction") != std::string::npos ||
      m.find("unrecognized opcode") != std::string::npos)
    return "unknown-opcode";
  if (m.find("undefined reference") != std::string::npos) return "linker-error";
  if (m.find("undeclared") != std::string::npos || m.find("undefined") != std::string::npos)
    return "undeclared-identifier";
  if (m.find("expected") != std::string::npos) return "syntax-error";
  return "compile-error";
}

}  // namespace detail

/// Parse a compiler log into {errors: [{type, location, cause}], raw_context}.
/// Unknown lines are kept as raw context, never dropped.
inline jsonio::json parse_compile_log(const std::string& log) {
  static const std::regex opcode_at(R"(error:\s*(unknown opcode\s*'[^']*')\s*at\s*(\S+:\d+))");
  static const std::regex gnu_style(R"(^([^\s:]+:\d+(?::\d+)?):\s*(?:fatal )?[eE]rror:\s*(.+)$)");
  static const std::regex undef_ref(R"(undefined reference to\s*[`']([^`']+)')");

  jsonio::json errors = jsonio::json::array();
  std::vector<std::string> raw_context;
  size_t start = 0;
  while (start <= log.size()) {
    size_t nl = log.find('\n', start);
    std::string line =
        nl == std::string::npos ? log.substr(start) : log.substr(start, nl - start);
    std::string trimmed = util::trim(line);
    std::smatch m;
    if (!trimmed.empty()) {
      if (std::regex_search(trimmed, m, opcode_at)) {
        errors.push_back({{"type", "unknown-opcode"},
                          {"location", m[2].str()},
                          {"cause", m[1].str()}});
      } else if (std::regex_match(trimmed, m, gnu_style)) {
        errors.push_back({{"type", detail::error_type_of(m[2].str())},
                          {"location", m[1].str()},
                          {"cause", m[2].str()}});
      } else if (std::regex_search(trimmed, m, undef_ref)) {
        errors.push_back({{"type", "linker-error"},
                          {"location", ""},
                          {"cause", "undefined reference to '" + m[1].str() + "'"}});
      } else {
        raw_context.push_back(trimmed);
      }
    }
    if (nl == std::string::npos) break;
    start = nl + 1;
  }
  return jsonio::json{{"errors", errors}, {"raw_context", raw_context}};
}

/// Exactly one of the three inputs must be "active": a compile log (compile
/// failed), a simulate result with Timeout status, or a completed run whose
/// deltas decide NotTriggered.
inline FailureCause classify_failure(const std::optional<std::string>& compile_log,
                                     const std::optional<toolchain::SimulateResult>& sim,
                                     const std::vector<vcd::TransitionDelta>& deltas) {
  if ((compile_log ? 1 : 0) + (sim ? 1 : 0) != 1)
    throw std::invalid_argument("exactly one failure stage must be active");

  FailureCause f;
  if (compile_log) {
    f.kind = FailureCause::CompileError;
    f.detail = parse_compile_log(*compile_log);
    return f;
  }
  if (sim->status == toolchain::SimulateResult::Timeout) {
    f.kind = FailureCause::SimulationTimeout;
    f.detail = jsonio::json{{"elapsed_seconds", sim->elapsed_seconds}};
    return f;
  }
  if (sim->status == toolchain::SimulateResult::Crash) {
    // a crash is repair material, reported through the compile-error channel
    f.kind = FailureCause::CompileError;
    f.detail = jsonio::json{{"errors", jsonio::json::array({jsonio::json{
                                {"type", "simulator-crash"},
                                {"location", ""},
                                {"cause", "simulator exited with code " +
                                              std::to_string(sim->exit_code)}}})},
                            {"raw_context", std::vector<std::string>{sim->log}}};
    return f;
  }
  jsonio::json arr = jsonio::json::array();
  for (const auto& d : deltas)
    arr.push_back({{"signal", d.hierarchical_name},
                   {"golden_transitions", d.golden_transitions},
                   {"test_transitions", d.test_transitions},
                   {"delta", d.delta}});
  f.kind = FailureCause::NotTriggered;
  f.detail = jsonio::json{{"deltas", arr}};
  return f;
}

// ---------------------------------------------------------------------------
// Query rewrite and classification
// ---------------------------------------------------------------------------

namespace detail {

inline const events::EventRecord* match_query(const events::EventDB& db,
                                              const std::string& query, bool exact_only) {
  for (const auto& [id, r] : db.events)
    if (r.name == query) return &r;
  if (exact_only) return nullptr;
  std::string q = util::to_lower(util::trim(query));
  const events::EventRecord* unique = nullptr;
  int hits = 0;
  for (const auto& [id, r] : db.events) {
    std::string name = util::to_lower(r.name);
    if (name == q || name.find(q) != std::string::npos || q.find(name) != std::string::npos) {
      ++hits;
      unique = &r;
    }
  }
  return hits == 1 ? unique : nullptr;
}

}  // namespace detail

struct QueryResolution {
  std::string event_id;
  int rewrites = 0;
  std::string rewritten_query;  // equals the input when no rewrite ran
};

/// Exact queries short-circuit with zero provider calls; otherwise one
/// rewrite round, then the topic classifier gets the final word
/// (VALID/INVALID with a reason).
inline QueryResolution rewrite_and_classify(const std::string& query, const events::EventDB& db,
                                            LLMProvider& provider) {
  if (query.empty()) throw std::invalid_argument("query must be non-empty");
  if (const auto* r = detail::match_query(db, query, /*exact_only=*/true))
    return {r->id, 0, query};

  PromptBundle rewrite;
  rewrite.system_text =
      "Rewrite the user's event query to fix spelling and phrasing while preserving its "
      "intended semantics. Respond with the rewritten query only.\n";
  rewrite.user_text = query;
  std::string rewritten = util::trim(provider.submit(rewrite));

  const events::EventRecord* match = detail::match_query(db, rewritten, /*exact_only=*/false);

  PromptBundle classify;
  classify.system_text =
      "Decide whether the query names a microarchitectural event of a processor under its "
      "ISA. Respond with 'VALID: reason' or 'INVALID: reason'.\n";
  classify.user_text = rewritten;
  std::string verdict = util::trim(provider.submit(classify));
  if (verdict.rfind("VALID", 0) != 0) {
    std::string reason = verdict;
    auto colon = verdict.find(':');
    if (colon != std::string::npos) reason = util::trim(verdict.substr(colon + 1));
    throw NotAnEvent(reason);
  }
  if (!match) throw NoMatch(query);
  return {match->id, 1, rewritten};
}

// ---------------------------------------------------------------------------
// The generation loop
// ---------------------------------------------------------------------------

struct RunOptions {
  int budget = 6;
  std::string constraints;
  std::string isa_manual_ref = "isa_manual.pdf";
  std::string isa_json_ref = "isa.json";
  int provider_retries = 2;      // transport retries per iteration
  double backoff_base_s = 0.0;   // 0 disables sleeping (tests)
};

/// Run one event end to end: assemble, invoke, extract, compile, simulate,
/// diff against golden, classify, feed back. Stops on trigger or budget.
inline GenerationSession run_event(const std::string& event_id, const events::EventDB& db,
                                   const events::IsaDB& isa, const StrategyTier& tier,
                                   LLMProvider& provider, toolchain::Toolchain& tc,
                                   const RunOptions& opt, ExemplarPool* pool = nullptr) {
  if (opt.budget < 1) throw std::invalid_argument("budget must be >= 1");
  EventBrief brief = retrieve_metadata(event_id, db, isa);

  PromptInputs inputs;
  inputs.event = brief;
  inputs.constraints = opt.constraints;
  inputs.isa_manual_ref = opt.isa_manual_ref;
  inputs.isa_json_ref = opt.isa_json_ref;

  std::vector<Exemplar> exemplars;
  if (tier.include_exemplars && pool) exemplars = pool->select(brief.instruction_categories, 5);

  GenerationSession session;
  session.event_id = event_id;
  session.budget = opt.budget;

  for (int iter = 1; iter <= opt.budget; ++iter) {
    Iteration it;
    it.prompt = assemble_prompt(inputs, tier, session.iterations, exemplars);

    // provider call with transport retries; retries never consume budget
    std::string response;
    bool got = false;
    std::string last_error;
    for (int attempt = 0; attempt <= opt.provider_retries; ++attempt) {
      try {
        response = provider.submit(it.prompt);
        got = true;
        break;
      } catch (const ProviderError& e) {
        last_error = e.what();
        if (opt.backoff_base_s > 0)
          std::this_thread::sleep_for(std::chrono::duration<double>(
              opt.backoff_base_s * static_cast<double>(1 << attempt)));
      }
    }
    if (!got) {
      session.final_status = GenerationSession::Aborted;
      session.abort_reason = last_error;
      return session;
    }

    int blocks = 0;
    auto body = extract_single_code_block(response, &blocks);
    it.program.id = event_id + "-" + std::to_string(iter);
    it.program.target_event_ids = {event_id};
    it.program.origin_provider = provider.id();
    it.program.origin_tier = tier_name(tier.tier);
    it.program.origin_iteration = iter;

    if (!body) {
      // response format violation: a synthetic compile failure, fed back
      it.program.language_kind = "c_source";
      it.failure.kind = FailureCause::CompileError;
      it.failure.detail = jsonio::json{
          {"errors", jsonio::json::array(
                         {jsonio::json{{"type", "format-violation"},
                                       {"location", ""},
                                       {"cause", "expected exactly one code block, found " +
                                                     std::to_string(blocks)}}})},
          {"raw_context", std::vector<std::string>{response}}};
      session.iterations.push_back(std::move(it));
      continue;
    }
    it.program.source_text = *body;
    it.program.language_kind = detect_language_kind(*body);

    auto comp = tc.compile(it.program.to_toolchain());
    if (comp.status != toolchain::CompileResult::Ok) {
      it.failure = classify_failure(comp.log, std::nullopt, {});
      session.iterations.push_back(std::move(it));
      continue;
    }

    auto sim = tc.simulate(comp.artifact);
    if (sim.status != toolchain::SimulateResult::Ok) {
      it.failure = classify_failure(std::nullopt, sim, {});
      session.iterations.push_back(std::move(it));
      continue;
    }

    // trigger detection: transition deltas against the golden trace
    std::string golden_path = tc.golden_trace();
    auto golden_db = vcd::parse_vcd(jsonio::read_file(golden_path));
    auto test_db = vcd::parse_vcd(jsonio::read_file(sim.vcd_path));

    bool root_found = true;
    for (const auto& sig : brief.source_signals) {
      try {
        auto one = vcd::diff_transitions(test_db, golden_db, std::vector<std::string>{sig});
        it.verdict.deltas.push_back(one.front());
      } catch (const vcd::TargetNotFound&) {
        if (sig == brief.source_signals.front()) root_found = false;
      } catch (const vcd::AmbiguousTarget&) {
        if (sig == brief.source_signals.front()) root_found = false;
      }
    }
    if (!root_found) {
      it.failure.kind = FailureCause::NotTriggered;
      it.failure.detail =
          jsonio::json{{"deltas", jsonio::json::array()},
                       {"note", "target signal not found in trace: " + brief.source_signals.front()}};
      session.iterations.push_back(std::move(it));
      continue;
    }

    const auto& root_delta = it.verdict.deltas.front();
    if (root_delta.triggered()) {
      it.verdict.triggered = true;
      it.verdict.first_extra_transition_time =
          vcd::first_extra_transition_time(test_db, golden_db, brief.source_signals.front());
      it.failure.kind = FailureCause::None;
      if (pool) {
        Exemplar e;
        e.event_id = event_id;
        e.categories = brief.instruction_categories;
        e.source_text = it.program.source_text;
        e.language_kind = it.program.language_kind;
        pool->add(std::move(e));
      }
      session.iterations.push_back(std::move(it));
      session.final_status = GenerationSession::Triggered;
      return session;
    }

    it.failure = classify_failure(std::nullopt, sim, it.verdict.deltas);
    session.iterations.push_back(std::move(it));
  }
  session.final_status = GenerationSession::Exhausted;
  return session;
}

// ---------------------------------------------------------------------------
// Session log (JSON lines, one record per iteration, no wall-clock)
// ---------------------------------------------------------------------------

inline jsonio::json iteration_to_json(const Iteration& it, int index) {
  jsonio::json deltas = jsonio::json::array();
  for (const auto& d : it.verdict.deltas)
    deltas.push_back({{"signal", d.hierarchical_name},
                      {"golden_transitions", d.golden_transitions},
                      {"test_transitions", d.test_transitions},
                      {"delta", d.delta}});
  jsonio::json j{
      {"iteration", index},
      {"prompt_digest", it.prompt.digest()},
      {"program",
       {{"id", it.program.id},
        {"language_kind", it.program.language_kind},
        {"source_text", it.program.source_text},
        {"origin_tier", it.program.origin_tier}}},
      {"verdict", {{"triggered", it.verdict.triggered}, {"deltas", deltas}}},
      {"failure",
       {{"kind", failure_kind_name(it.failure.kind)}, {"detail", it.failure.detail}}}};
  if (it.verdict.first_extra_transition_time)
    j["verdict"]["first_extra_transition_time"] = *it.verdict.first_extra_transition_time;
  if (!it.prompt.notes.empty()) j["prompt_notes"] = it.prompt.notes;
  return j;
}

inline void write_session_log(std::ostream& os, const GenerationSession& session) {
  int index = 0;
  for (const auto& it : session.iterations) os << iteration_to_json(it, ++index).dump() << "\n";
}

}  // namespace rarecov::agent
