// SPDX-License-Identifier: Apache-2.0
//
// IEEE-1364 VCD parsing, per-signal activity statistics, rarity scoring,
// and golden-vs-test transition differencing.

#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rarecov/util.hpp"

namespace rarecov::vcd {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct VcdError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MalformedHeader : VcdError {
  explicit MalformedHeader(const std::string& what) : VcdError("malformed VCD header: " + what) {}
};

struct UnknownIdCode : VcdError {
  std::string id_code;
  size_t byte_offset;
  UnknownIdCode(std::string code, size_t offset)
      : VcdError("unknown id code '" + code + "' at byte offset " + std::to_string(offset)),
        id_code(std::move(code)),
        byte_offset(offset) {}
};

struct WidthMismatch : VcdError {
  std::string id_code;
  unsigned declared, got;
  WidthMismatch(std::string code, unsigned decl, unsigned value_bits)
      : VcdError("width mismatch for id '" + code + "': declared " + std::to_string(decl) +
                 " bits, change carries " + std::to_string(value_bits)),
        id_code(std::move(code)),
        declared(decl),
        got(value_bits) {}
};

struct NonMonotonicTime : VcdError {
  uint64_t previous, current;
  NonMonotonicTime(uint64_t prev, uint64_t cur)
      : VcdError("non-monotonic timestamp: #" + std::to_string(cur) + " after #" +
                 std::to_string(prev)),
        previous(prev),
        current(cur) {}
};

struct UnknownClockSignal : VcdError {
  explicit UnknownClockSignal(const std::string& name)
      : VcdError("clock signal not found in trace: " + name) {}
};

struct NoSamples : VcdError {
  explicit NoSamples(const std::string& why) : VcdError("no qualifying sample instants: " + why) {}
};

struct TargetNotFound : VcdError {
  std::string trace_label, target;
  TargetNotFound(std::string label, std::string name)
      : VcdError("target '" + name + "' not found in " + label + " trace"),
        trace_label(std::move(label)),
        target(std::move(name)) {}
};

struct AmbiguousTarget : VcdError {
  explicit AmbiguousTarget(const std::string& name)
      : VcdError("target '" + name + "' matches more than one signal") {}
};

// ---------------------------------------------------------------------------
// Trace model
// ---------------------------------------------------------------------------

enum class Bit : uint8_t { Zero = 0, One = 1, X = 2, Z = 3 };

inline char bit_char(Bit b) { return "01xz"[static_cast<int>(b)]; }

/// A sampled or recorded value: one Bit per declared bit, MSB first.
using Value = std::vector<Bit>;

inline bool value_known(const Value& v) {
  for (Bit b : v)
    if (b == Bit::X || b == Bit::Z) return false;
  return !v.empty();
}

enum class VarKind { Wire, Reg, Other };

struct VarDecl {
  std::string id_code;
  std::string hierarchical_name;
  unsigned width = 1;
  VarKind kind = VarKind::Wire;
  bool operator==(const VarDecl&) const = default;
};

struct Scope {
  std::string name;
  std::string kind;  // module, task, begin, ...
  std::vector<Scope> children;
  bool operator==(const Scope&) const = default;
};

struct Change {
  uint64_t time = 0;
  uint32_t id = 0;  // index into TraceDB::id_codes
  Value value;
  bool operator==(const Change&) const = default;
};

struct Timescale {
  int magnitude = 1;
  std::string unit = "ns";
  bool operator==(const Timescale&) const = default;
};

/// Immutable after parsing; safe to share read-only across workers.
struct TraceDB {
  Timescale timescale;
  Scope scope_root;  // synthetic root; top-level scopes are its children
  std::vector<VarDecl> vars;
  std::vector<std::string> id_codes;  // distinct id codes, in first-seen order
  std::vector<Change> changes;

  uint32_t id_index_of(std::string_view code) const {
    for (uint32_t i = 0; i < id_codes.size(); ++i)
      if (id_codes[i] == code) return i;
    return UINT32_MAX;
  }

  /// Structural equality: scopes, declarations, and the change sequence
  /// (compared through id-code strings, so index assignment is immaterial).
  bool operator==(const TraceDB& o) const {
    if (!(timescale == o.timescale) || !(scope_root == o.scope_root) || vars != o.vars ||
        changes.size() != o.changes.size())
      return false;
    for (size_t i = 0; i < changes.size(); ++i) {
      if (changes[i].time != o.changes[i].time || changes[i].value != o.changes[i].value ||
          id_codes[changes[i].id] != o.id_codes[o.changes[i].id])
        return false;
    }
    return true;
  }
};

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

namespace detail {

struct Token {
  std::string text;
  size_t offset = 0;  // byte offset of the first character
};

class Tokenizer {
 public:
  explicit Tokenizer(std::string_view text) : text_(text) {}

  std::optional<Token> next() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    if (pos_ >= text_.size()) return std::nullopt;
    size_t start = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    return Token{std::string(text_.substr(start, pos_ - start)), start};
  }

 private:
  std::string_view text_;
  size_t pos_ = 0;
};

inline Bit bit_of(char c) {
  switch (c) {
    case '0': return Bit::Zero;
    case '1': return Bit::One;
    case 'z':
    case 'Z': return Bit::Z;
    default: return Bit::X;
  }
}

/// Left-extend a vector value to the declared width per IEEE 1364: extend
/// with '0' when the leftmost bit is 0/1, else repeat the x/z bit.
inline Value extend_value(const Value& v, unsigned width, const std::string& code) {
  if (v.size() > width) throw WidthMismatch(code, width, static_cast<unsigned>(v.size()));
  if (v.size() == width) return v;
  Bit fill = Bit::Zero;
  if (!v.empty() && (v.front() == Bit::X || v.front() == Bit::Z)) fill = v.front();
  Value out(width - v.size(), fill);
  out.insert(out.end(), v.begin(), v.end());
  return out;
}

}  // namespace detail

/// Parse one VCD document. Declarations, the scope hierarchy, and every
/// value change (including those inside $dumpvars/$dumpon/$dumpoff/$dumpall
/// blocks) are captured. Bit-select references like "sig[3]" stay part of
/// the name; full-range references like "bus[7:0]" are dropped as redundant
/// with the declared width.
inline TraceDB parse_vcd(std::string_view text) {
  detail::Tokenizer tz(text);
  TraceDB db;
  db.scope_root.name = "";
  db.scope_root.kind = "root";

  std::vector<Scope*> scope_stack{&db.scope_root};
  std::vector<std::string> path;
  std::unordered_map<std::string, uint32_t> id_of;
  std::unordered_map<uint32_t, unsigned> width_of;
  bool header_done = false;
  uint64_t now = 0;
  bool saw_time = false;

  auto skip_until_end = [&](const char* section) {
    while (true) {
      auto t = tz.next();
      if (!t) throw MalformedHeader(std::string("unterminated ") + section);
      if (t->text == "$end") return;
    }
  };

  auto intern_id = [&](const std::string& code) -> uint32_t {
    auto it = id_of.find(code);
    if (it != id_of.end()) return it->second;
    uint32_t idx = static_cast<uint32_t>(db.id_codes.size());
    db.id_codes.push_back(code);
    id_of.emplace(code, idx);
    return idx;
  };

  auto record_change = [&](uint32_t id, Value v) {
    db.changes.push_back(Change{now, id, std::move(v)});
  };

  while (auto tok = tz.next()) {
    const std::string& t = tok->text;
    if (!header_done) {
      if (t == "$date" || t == "$version" || t == "$comment") {
        skip_until_end(t.c_str());
      } else if (t == "$timescale") {
        std::string body;
        while (true) {
          auto u = tz.next();
          if (!u) throw MalformedHeader("unterminated $timescale");
          if (u->text == "$end") break;
          body += u->text;
        }
        size_t i = 0;
        while (i < body.size() && std::isdigit(static_cast<unsigned char>(body[i]))) ++i;
        if (i == 0) throw MalformedHeader("bad $timescale: " + body);
        db.timescale.magnitude = std::stoi(body.substr(0, i));
        db.timescale.unit = body.substr(i);
      } else if (t == "$scope") {
        auto kind = tz.next();
        auto name = tz.next();
        if (!kind || !name) throw MalformedHeader("truncated $scope");
        auto end = tz.next();
        if (!end || end->text != "$end") throw MalformedHeader("missing $end after $scope");
        scope_stack.back()->children.push_back(Scope{name->text, kind->text, {}});
        scope_stack.push_back(&scope_stack.back()->children.back());
        path.push_back(name->text);
      } else if (t == "$upscope") {
        skip_until_end("$upscope");
        if (scope_stack.size() <= 1) throw MalformedHeader("$upscope without open scope");
        scope_stack.pop_back();
        path.pop_back();
      } else if (t == "$var") {
        auto type = tz.next();
        auto width_tok = tz.next();
        auto code = tz.next();
        if (!type || !width_tok || !code) throw MalformedHeader("truncated $var");
        std::string name;
        while (true) {
          auto u = tz.next();
          if (!u) throw MalformedHeader("unterminated $var");
          if (u->text == "$end") break;
          if (!u->text.empty() && u->text.front() == '[') {
            // reference token: keep single-bit selects, drop range references
            if (u->text.find(':') == std::string::npos) name += u->text;
          } else {
            name += name.empty() ? u->text : " " + u->text;
          }
        }
        if (name.empty()) throw MalformedHeader("$var without a name");
        unsigned width = 1;
        try {
          width = static_cast<unsigned>(std::stoul(width_tok->text));
        } catch (...) {
          throw MalformedHeader("bad $var width: " + width_tok->text);
        }
        VarKind kind = VarKind::Other;
        if (type->text == "wire") kind = VarKind::Wire;
        else if (type->text == "reg") kind = VarKind::Reg;
        uint32_t id = intern_id(code->text);
        width_of[id] = width;
        std::string hname = path.empty() ? name : util::join(path, ".") + "." + name;
        db.vars.push_back(VarDecl{code->text, hname, width, kind});
      } else if (t == "$enddefinitions") {
        skip_until_end("$enddefinitions");
        header_done = true;
      } else {
        throw MalformedHeader("unexpected token before $enddefinitions: " + t);
      }
      continue;
    }

    // --- value-change section ---
    if (t[0] == '#') {
      uint64_t ts = 0;
      try {
        ts = std::stoull(t.substr(1));
      } catch (...) {
        throw VcdError("bad timestamp token: " + t);
      }
      if (saw_time && ts < now) throw NonMonotonicTime(now, ts);
      now = ts;
      saw_time = true;
    } else if (t == "$dumpvars" || t == "$dumpon" || t == "$dumpoff" || t == "$dumpall") {
      // enclosed changes are handled by the ordinary cases below
    } else if (t == "$comment") {
      skip_until_end("$comment");
    } else if (t == "$end") {
      // closes a dump block
    } else if (t[0] == 'b' || t[0] == 'B') {
      Value v;
      for (size_t i = 1; i < t.size(); ++i) v.push_back(detail::bit_of(t[i]));
      auto code = tz.next();
      if (!code) throw VcdError("vector change without id code");
      auto it = id_of.find(code->text);
      if (it == id_of.end()) throw UnknownIdCode(code->text, code->offset);
      record_change(it->second, detail::extend_value(v, width_of[it->second], code->text));
    } else if (t[0] == 'r' || t[0] == 'R') {
      // real-valued vars fall outside the four-state model; record as all-x
      auto code = tz.next();
      if (!code) throw VcdError("real change without id code");
      auto it = id_of.find(code->text);
      if (it == id_of.end()) throw UnknownIdCode(code->text, code->offset);
      record_change(it->second, Value(width_of[it->second], Bit::X));
    } else if (t[0] == '0' || t[0] == '1' || t[0] == 'x' || t[0] == 'X' || t[0] == 'z' ||
               t[0] == 'Z') {
      std::string code = t.substr(1);
      if (code.empty()) throw VcdError("scalar change without id code: " + t);
      auto it = id_of.find(code);
      if (it == id_of.end()) throw UnknownIdCode(code, tok->offset + 1);
      if (width_of[it->second] != 1) throw WidthMismatch(code, width_of[it->second], 1);
      record_change(it->second, Value{detail::bit_of(t[0])});
    } else {
      throw VcdError("unrecognized token in change section: " + t);
    }
  }
  if (!header_done) throw MalformedHeader("missing $enddefinitions");
  return db;
}

inline TraceDB parse_vcd(std::istream& in) {
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();
  return parse_vcd(std::string_view(text));
}

// ---------------------------------------------------------------------------
// Re-emission (canonical form; parse -> emit -> parse is a fixpoint)
// ---------------------------------------------------------------------------

namespace detail {

inline void emit_scope(std::ostringstream& os, const Scope& s, const std::string& prefix,
                       const std::vector<VarDecl>& vars) {
  os << "$scope " << s.kind << " " << s.name << " $end\n";
  std::string here = prefix.empty() ? s.name : prefix + "." + s.name;
  for (const auto& v : vars) {
    auto dot = v.hierarchical_name.rfind('.');
    std::string dir = dot == std::string::npos ? "" : v.hierarchical_name.substr(0, dot);
    if (dir != here) continue;
    std::string leaf = v.hierarchical_name.substr(dot + 1);
    const char* kind = v.kind == VarKind::Wire ? "wire" : v.kind == VarKind::Reg ? "reg" : "integer";
    os << "$var " << kind << " " << v.width << " " << v.id_code << " " << leaf;
    if (v.width > 1) os << " [" << (v.width - 1) << ":0]";
    os << " $end\n";
  }
  for (const auto& c : s.children) emit_scope(os, c, here, vars);
  os << "$upscope $end\n";
}

}  // namespace detail

inline std::string emit_vcd(const TraceDB& db) {
  std::ostringstream os;
  os << "$timescale " << db.timescale.magnitude << db.timescale.unit << " $end\n";
  for (const auto& top : db.scope_root.children) detail::emit_scope(os, top, "", db.vars);
  // vars declared outside any scope (unusual but representable)
  for (const auto& v : db.vars) {
    if (v.hierarchical_name.find('.') != std::string::npos) continue;
    const char* kind = v.kind == VarKind::Wire ? "wire" : v.kind == VarKind::Reg ? "reg" : "integer";
    os << "$var " << kind << " " << v.width << " " << v.id_code << " " << v.hierarchical_name;
    if (v.width > 1) os << " [" << (v.width - 1) << ":0]";
    os << " $end\n";
  }
  os << "$enddefinitions $end\n";
  bool first = true;
  uint64_t cur = 0;
  for (const auto& ch : db.changes) {
    if (first || ch.time != cur) {
      os << "#" << ch.time << "\n";
      cur = ch.time;
      first = false;
    }
    if (ch.value.size() == 1) {
      os << bit_char(ch.value[0]) << db.id_codes[ch.id] << "\n";
    } else {
      os << "b";
      for (Bit b : ch.value) os << bit_char(b);
      os << " " << db.id_codes[ch.id] << "\n";
    }
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Name resolution (shared by sampling and differencing)
// ---------------------------------------------------------------------------

/// Exact hierarchical match first, else unique dot-boundary suffix match.
/// Returns indices into db.vars; empty when nothing matches, multiple when
/// the suffix is ambiguous.
inline std::vector<size_t> resolve_name(const TraceDB& db, std::string_view name) {
  std::vector<size_t> exact, suffix;
  for (size_t i = 0; i < db.vars.size(); ++i) {
    const std::string& h = db.vars[i].hierarchical_name;
    if (h == name) exact.push_back(i);
    else if (h.size() > name.size() && util::ends_with(h, name) &&
             h[h.size() - name.size() - 1] == '.')
      suffix.push_back(i);
  }
  if (!exact.empty()) return exact;
  return suffix;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

struct SamplingPolicy {
  enum Kind { ClockEdge, EveryTimestamp } kind = EveryTimestamp;
  std::string clock;
  bool rising = true;

  static SamplingPolicy clock_edge(std::string name, bool rising_edge = true) {
    return SamplingPolicy{ClockEdge, std::move(name), rising_edge};
  }
  static SamplingPolicy every_timestamp() { return SamplingPolicy{}; }
};

struct SampledTrace {
  std::vector<uint64_t> instants;
  // per var (parallel to TraceDB::vars), one value per instant
  std::vector<std::vector<Value>> samples;
};

/// Sample every declared var at each qualifying instant. Values are taken
/// after all changes at that timestamp have been applied; x/z samples are
/// kept as-is (flagged by value, not coerced).
inline SampledTrace sample_signals(const TraceDB& db, const SamplingPolicy& policy) {
  SampledTrace out;
  out.samples.resize(db.vars.size());

  size_t clock_var = SIZE_MAX;
  if (policy.kind == SamplingPolicy::ClockEdge) {
    auto m = resolve_name(db, policy.clock);
    if (m.empty()) throw UnknownClockSignal(policy.clock);
    clock_var = m.front();
    if (db.vars[clock_var].width != 1)
      throw UnknownClockSignal(policy.clock + " (not a single-bit signal)");
  }

  std::vector<uint32_t> var_id(db.vars.size());
  for (size_t v = 0; v < db.vars.size(); ++v) var_id[v] = db.id_index_of(db.vars[v].id_code);

  // current value per id code, initially all-x at declared width
  std::vector<Value> cur(db.id_codes.size(), Value{Bit::X});
  for (size_t v = 0; v < db.vars.size(); ++v) cur[var_id[v]] = Value(db.vars[v].width, Bit::X);
  uint32_t clock_id = clock_var == SIZE_MAX ? UINT32_MAX : var_id[clock_var];

  auto snapshot = [&](uint64_t t) {
    out.instants.push_back(t);
    for (size_t v = 0; v < db.vars.size(); ++v) out.samples[v].push_back(cur[var_id[v]]);
  };

  size_t i = 0;
  while (i < db.changes.size()) {
    uint64_t t = db.changes[i].time;
    Bit clk_before = clock_id == UINT32_MAX ? Bit::X : cur[clock_id][0];
    while (i < db.changes.size() && db.changes[i].time == t) {
      cur[db.changes[i].id] = db.changes[i].value;
      ++i;
    }
    if (policy.kind == SamplingPolicy::EveryTimestamp) {
      snapshot(t);
    } else {
      Bit clk_after = cur[clock_id][0];
      bool edge = policy.rising ? (clk_before == Bit::Zero && clk_after == Bit::One)
                                : (clk_before == Bit::One && clk_after == Bit::Zero);
      if (edge) snapshot(t);
    }
  }
  if (out.instants.empty())
    throw NoSamples(policy.kind == SamplingPolicy::ClockEdge
                        ? "no " + std::string(policy.rising ? "rising" : "falling") +
                              " edges of " + policy.clock
                        : "trace has no timestamps");
  return out;
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

enum class SignalKindTag { SingleBit, Bus };

struct SignalStats {
  std::string hierarchical_name;
  unsigned width = 1;
  uint64_t samples = 0;  // valid (non-x/z) samples
  double p0_hat = 0.0, p1_hat = 0.0;
  double toggle_rate = 0.0;
  double theta = 0.0;
  SignalKindTag kind = SignalKindTag::SingleBit;
  // raw change-stream transitions (value actually changed, initial value
  // excluded); distinguishes constant signals from ones that toggled only
  // between sampling instants
  uint64_t trace_transitions = 0;
  // merge support (sample-weighted merging across benchmark traces)
  uint64_t zeros = 0, ones = 0;
  uint64_t toggle_changes = 0, toggle_pairs = 0;
};

struct StatsReport {
  std::vector<SignalStats> stats;
  std::vector<std::string> unobserved;  // zero valid samples (all x/z)
};

/// Transition count per var: number of entries in the change stream whose
/// value differs from the var's previous recorded value. The first recorded
/// value (the $dumpvars initialization) is not a transition.
inline std::vector<uint64_t> transitions_by_var(const TraceDB& db) {
  std::vector<uint64_t> per_id(db.id_codes.size(), 0);
  std::vector<Value> last(db.id_codes.size());
  std::vector<bool> seen(db.id_codes.size(), false);
  for (const auto& ch : db.changes) {
    if (seen[ch.id] && last[ch.id] != ch.value) ++per_id[ch.id];
    last[ch.id] = ch.value;
    seen[ch.id] = true;
  }
  std::vector<uint64_t> out(db.vars.size(), 0);
  for (size_t v = 0; v < db.vars.size(); ++v) out[v] = per_id[db.id_index_of(db.vars[v].id_code)];
  return out;
}

/// Timestamps at which a var's value actually changed (initialization
/// excluded), in trace order.
inline std::vector<uint64_t> transition_times(const TraceDB& db, size_t var_idx) {
  uint32_t id = db.id_index_of(db.vars[var_idx].id_code);
  std::vector<uint64_t> out;
  Value last;
  bool seen = false;
  for (const auto& ch : db.changes) {
    if (ch.id != id) continue;
    if (seen && last != ch.value) out.push_back(ch.time);
    last = ch.value;
    seen = true;
  }
  return out;
}

/// Compute one signal's statistics from its sample sequence. Exposed so
/// property tests can drive the math directly.
inline SignalStats stats_from_samples(std::string name, unsigned width,
                                      const std::vector<Value>& seq,
                                      uint64_t trace_transitions) {
  SignalStats s;
  s.hierarchical_name = std::move(name);
  s.width = width;
  s.kind = width > 1 ? SignalKindTag::Bus : SignalKindTag::SingleBit;
  s.trace_transitions = trace_transitions;

  for (const auto& v : seq) {
    if (!value_known(v)) continue;
    ++s.samples;
    if (width == 1) {
      if (v[0] == Bit::Zero) ++s.zeros;
      else ++s.ones;
    }
  }
  // toggle pairs: adjacent samples, both valid; x/z breaks the pair
  for (size_t i = 0; i + 1 < seq.size(); ++i) {
    if (!value_known(seq[i]) || !value_known(seq[i + 1])) continue;
    ++s.toggle_pairs;
    if (seq[i] != seq[i + 1]) ++s.toggle_changes;
  }
  if (s.samples > 0) {
    if (width == 1) {
      s.p0_hat = static_cast<double>(s.zeros) / static_cast<double>(s.samples);
      s.p1_hat = static_cast<double>(s.ones) / static_cast<double>(s.samples);
    }
    s.toggle_rate =
        static_cast<double>(s.toggle_changes) / static_cast<double>(std::max<uint64_t>(1, s.toggle_pairs));
    s.theta = width == 1 ? std::min(s.p0_hat, s.p1_hat) : s.toggle_rate;
  }
  return s;
}

/// theta = min(p0_hat, p1_hat) for single-bit nets, normalized toggle rate
/// for buses. Signals whose samples are entirely x/z are reported in the
/// unobserved list rather than given fabricated statistics.
inline StatsReport compute_stats(const TraceDB& db, const SampledTrace& sampled) {
  StatsReport rep;
  auto transitions = transitions_by_var(db);
  for (size_t v = 0; v < db.vars.size(); ++v) {
    SignalStats s = stats_from_samples(db.vars[v].hierarchical_name, db.vars[v].width,
                                       sampled.samples[v], transitions[v]);
    if (s.samples == 0) rep.unobserved.push_back(db.vars[v].hierarchical_name);
    else rep.stats.push_back(std::move(s));
  }
  return rep;
}

/// Sample-weighted merge across benchmark traces: counters add per
/// hierarchical name, rates and theta are recomputed from the pooled
/// counters. A name unobserved in one run but observed in another is
/// observed in the merge; width disagreements are an error.
inline StatsReport merge_stats_reports(const std::vector<StatsReport>& runs) {
  StatsReport out;
  std::vector<std::string> order;
  std::map<std::string, SignalStats> pooled;
  std::map<std::string, bool> observed;

  for (const auto& run : runs) {
    for (const auto& s : run.stats) {
      auto it = pooled.find(s.hierarchical_name);
      if (it == pooled.end()) {
        order.push_back(s.hierarchical_name);
        pooled[s.hierarchical_name] = s;
        observed[s.hierarchical_name] = true;
        continue;
      }
      SignalStats& acc = it->second;
      if (acc.width != s.width)
        throw WidthMismatch(s.hierarchical_name, acc.width, s.width);
      acc.samples += s.samples;
      acc.zeros += s.zeros;
      acc.ones += s.ones;
      acc.toggle_changes += s.toggle_changes;
      acc.toggle_pairs += s.toggle_pairs;
      acc.trace_transitions += s.trace_transitions;
    }
    for (const auto& name : run.unobserved) {
      if (pooled.count(name) || observed.count(name)) continue;
      order.push_back(name);
      observed[name] = false;
    }
  }

  for (const auto& name : order) {
    auto it = pooled.find(name);
    if (it == pooled.end()) {
      out.unobserved.push_back(name);
      continue;
    }
    SignalStats& s = it->second;
    if (s.samples > 0 && s.width == 1) {
      s.p0_hat = static_cast<double>(s.zeros) / static_cast<double>(s.samples);
      s.p1_hat = static_cast<double>(s.ones) / static_cast<double>(s.samples);
    }
    s.toggle_rate = static_cast<double>(s.toggle_changes) /
                    static_cast<double>(std::max<uint64_t>(1, s.toggle_pairs));
    s.theta = s.width == 1 ? std::min(s.p0_hat, s.p1_hat) : s.toggle_rate;
    out.stats.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rarity classification
// ---------------------------------------------------------------------------

struct RarityPartition {
  std::vector<SignalStats> rare, common, unobserved;
};

/// rare: 0 < theta <= threshold, or theta == 0 with at least one raw-stream
/// transition (the signal crossed values off-sample). Signals that never
/// toggled at all are unobserved regardless of threshold.
inline RarityPartition classify_rare(const std::vector<SignalStats>& stats, double threshold) {
  if (threshold < 0.0 || threshold > 1.0)
    throw std::invalid_argument("rarity threshold must be in [0,1]");
  RarityPartition part;
  for (const auto& s : stats) {
    if (s.theta == 0.0 && s.trace_transitions == 0) part.unobserved.push_back(s);
    else if (s.theta <= threshold) part.rare.push_back(s);
    else part.common.push_back(s);
  }
  return part;
}

// ---------------------------------------------------------------------------
// Trace differencing
// ---------------------------------------------------------------------------

struct TransitionDelta {
  std::string hierarchical_name;
  uint64_t golden_transitions = 0;
  uint64_t test_transitions = 0;
  int64_t delta = 0;  // test - golden
  bool triggered() const { return delta > 0; }
  bool operator==(const TransitionDelta&) const = default;
};

namespace detail {

inline size_t resolve_or_throw(const TraceDB& db, const std::string& name,
                               const std::string& label) {
  auto m = resolve_name(db, name);
  if (m.empty()) throw TargetNotFound(label, name);
  if (m.size() > 1) throw AmbiguousTarget(name);
  return m.front();
}

}  // namespace detail

/// Per-target transition counts in each trace; delta > 0 means the test
/// program produced extra activity on that signal.
inline std::vector<TransitionDelta> diff_transitions(const TraceDB& test, const TraceDB& golden,
                                                     const std::vector<std::string>& targets) {
  std::vector<TransitionDelta> out;
  out.reserve(targets.size());
  for (const auto& name : targets) {
    size_t ti = detail::resolve_or_throw(test, name, "test");
    size_t gi = detail::resolve_or_throw(golden, name, "golden");
    TransitionDelta d;
    d.hierarchical_name = name;
    d.test_transitions = transition_times(test, ti).size();
    d.golden_transitions = transition_times(golden, gi).size();
    d.delta = static_cast<int64_t>(d.test_transitions) - static_cast<int64_t>(d.golden_transitions);
    out.push_back(std::move(d));
  }
  return out;
}

/// Timestamp of the first transition beyond the golden count, i.e. the
/// instant the test trace first shows activity the golden trace never had.
/// Empty when the target never exceeds its golden transition count.
inline std::optional<uint64_t> first_extra_transition_time(const TraceDB& test,
                                                           const TraceDB& golden,
                                                           const std::string& target) {
  size_t ti = detail::resolve_or_throw(test, target, "test");
  size_t gi = detail::resolve_or_throw(golden, target, "golden");
  auto times = transition_times(test, ti);
  size_t gcount = transition_times(golden, gi).size();
  if (times.size() <= gcount) return std::nullopt;
  return times[gcount];
}

// ---------------------------------------------------------------------------
// Serialization (JSON via nlohmann, CSV per the report column contract)
// ---------------------------------------------------------------------------

inline const char* kind_name(SignalKindTag k) {
  return k == SignalKindTag::Bus ? "bus" : "single_bit";
}

inline std::string stats_csv(const std::vector<SignalStats>& stats) {
  std::ostringstream os;
  os << "name,width,kind,samples,p0,p1,toggle_rate,theta\n";
  char buf[64];
  auto num = [&](double v) {
    snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  for (const auto& s : stats) {
    os << util::csv_field(s.hierarchical_name) << "," << s.width << "," << kind_name(s.kind) << ","
       << s.samples << "," << num(s.p0_hat) << "," << num(s.p1_hat) << "," << num(s.toggle_rate)
       << "," << num(s.theta) << "\n";
  }
  return os.str();
}

}  // namespace rarecov::vcd
