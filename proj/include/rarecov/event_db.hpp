// SPDX-License-Identifier: Apache-2.0
//
// Microarchitectural event database: records built from rare signals and
// their fan-in context, persisted as versioned JSON, queried by rarity,
// pipeline stage, and name.

#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "rarecov/jsonio.hpp"
#include "rarecov/util.hpp"
#include "rarecov/vcd.hpp"

namespace rarecov::events {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct AnnotationIncomplete : std::runtime_error {
  std::string missing_field;
  explicit AnnotationIncomplete(std::string field)
      : std::runtime_error("annotation missing mandatory field: " + field),
        missing_field(std::move(field)) {}
};

struct SignalMismatch : std::runtime_error {
  SignalMismatch(const std::string& stats_name, const std::string& root)
      : std::runtime_error("statistics are for '" + stats_name + "' but the traced root is '" +
                           root + "'") {}
};

struct SchemaViolation : std::runtime_error {
  std::string path, expected, found;
  SchemaViolation(std::string p, std::string e, std::string f)
      : std::runtime_error("schema violation at " + p + ": expected " + e + ", found " + f),
        path(std::move(p)),
        expected(std::move(e)),
        found(std::move(f)) {}
};

struct UnknownEvent : std::runtime_error {
  explicit UnknownEvent(const std::string& id) : std::runtime_error("unknown event id: " + id) {}
};

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

struct EventRecord {
  std::string id;                // stable hash of (design, root signal)
  std::string name;              // short title
  std::string description;       // one-sentence behavior
  std::string logical_summary;   // reasoning chain
  std::string stimulus_guidance; // test-generation hints
  std::vector<std::string> instruction_categories;
  std::vector<std::string> source_signals;  // root first, then key drivers
  double theta = 0.0;
  std::string module_stage = "other";  // fetch|decode|alu|lsu|ctrl|other
  bool incomplete = false;             // legacy import missing metadata
  bool operator==(const EventRecord&) const = default;
};

struct Provenance {
  std::string design;
  std::string isa;
  std::string created_at;
  std::string sampling_policy;
  bool operator==(const Provenance&) const = default;
};

/// Value type: mutation builds a new snapshot, safe to share read-only.
struct EventDB {
  std::map<std::string, EventRecord> events;  // id -> record
  Provenance provenance;
  bool operator==(const EventDB&) const = default;
};

/// Ordered glob -> stage rules; first match on the full hierarchical path
/// wins. Shipped as config because stage names are design-specific.
using StageMap = std::vector<std::pair<std::string, std::string>>;

inline StageMap default_stage_map() {
  return {{"*decode*", "decode"}, {"*fetch*", "fetch"}, {"*alu*", "alu"},
          {"*lsu*", "lsu"},       {"*ctrl*", "ctrl"}};
}

inline std::string infer_stage(const std::string& hierarchical_name, const StageMap& map) {
  std::string lower = util::to_lower(hierarchical_name);
  for (const auto& [pattern, stage] : map)
    if (util::glob_match(pattern, lower)) return stage;
  return "other";
}

inline std::string event_id_for(const std::string& design_name, const std::string& root_signal) {
  return util::hex64(util::fnv1a64(design_name + "\x1f" + root_signal));
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

struct Annotation {
  std::string name;
  std::string description;
  std::string logical_summary;
  std::string stimulus_guidance;
  std::vector<std::string> instruction_categories;
};

/// Build one record from a traced root signal, its direct drivers, the
/// provider's annotation, and the root's rarity statistics. The stats must
/// describe the root signal (exact name, or the root as a dot-boundary
/// suffix of the stats name).
inline EventRecord build_event(const std::string& design_name, const std::string& root_signal,
                               const std::vector<std::string>& driver_signals,
                               const Annotation& ann, const vcd::SignalStats& stats,
                               const StageMap& stages = default_stage_map()) {
  if (ann.name.empty()) throw AnnotationIncomplete("name");
  if (ann.description.empty()) throw AnnotationIncomplete("description");
  if (ann.logical_summary.empty()) throw AnnotationIncomplete("logical_summary");
  if (ann.stimulus_guidance.empty()) throw AnnotationIncomplete("stimulus_guidance");
  if (ann.instruction_categories.empty()) throw AnnotationIncomplete("instruction_categories");

  const std::string& sn = stats.hierarchical_name;
  bool match = sn == root_signal ||
               (sn.size() > root_signal.size() && util::ends_with(sn, root_signal) &&
                sn[sn.size() - root_signal.size() - 1] == '.') ||
               (root_signal.size() > sn.size() && util::ends_with(root_signal, sn) &&
                root_signal[root_signal.size() - sn.size() - 1] == '.');
  if (!match) throw SignalMismatch(sn, root_signal);

  EventRecord r;
  r.id = event_id_for(design_name, root_signal);
  r.name = ann.name;
  r.description = ann.description;
  r.logical_summary = ann.logical_summary;
  r.stimulus_guidance = ann.stimulus_guidance;
  r.instruction_categories = ann.instruction_categories;
  r.source_signals.push_back(root_signal);
  for (const auto& d : driver_signals)
    if (d != root_signal) r.source_signals.push_back(d);
  r.theta = stats.theta;
  r.module_stage = infer_stage(root_signal, stages);
  return r;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace detail {

using jsonio::json;

inline const json& require(const json& obj, const std::string& key, const std::string& path,
                           const char* type_name) {
  if (!obj.contains(key)) throw SchemaViolation(path + "." + key, type_name, "absent");
  return obj.at(key);
}

inline std::string require_string(const json& obj, const std::string& key,
                                  const std::string& path) {
  const json& v = require(obj, key, path, "string");
  if (!v.is_string()) throw SchemaViolation(path + "." + key, "string", v.type_name());
  return v.get<std::string>();
}

inline std::vector<std::string> require_string_list(const json& obj, const std::string& key,
                                                    const std::string& path) {
  const json& v = require(obj, key, path, "array of strings");
  if (!v.is_array()) throw SchemaViolation(path + "." + key, "array of strings", v.type_name());
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string()) throw SchemaViolation(path + "." + key, "array of strings", e.type_name());
    out.push_back(e.get<std::string>());
  }
  return out;
}

}  // namespace detail

inline jsonio::json to_json(const EventRecord& r) {
  jsonio::json j;
  j["id"] = r.id;
  j["name"] = r.name;
  j["description"] = r.description;
  j["logical_summary"] = r.logical_summary;
  j["stimulus_guidance"] = r.stimulus_guidance;
  j["instruction_categories"] = r.instruction_categories;
  j["source_signals"] = r.source_signals;
  j["theta"] = r.theta;
  j["module_stage"] = r.module_stage;
  if (r.incomplete) j["incomplete"] = true;
  return j;
}

inline std::string save_db(const EventDB& db) {
  jsonio::json j;
  j["schema_version"] = 1;
  j["provenance"] = {{"design", db.provenance.design},
                     {"isa", db.provenance.isa},
                     {"created_at", db.provenance.created_at},
                     {"sampling_policy", db.provenance.sampling_policy}};
  jsonio::json evs = jsonio::json::object();
  for (const auto& [id, rec] : db.events) evs[id] = to_json(rec);
  j["events"] = evs;
  return j.dump(2) + "\n";
}

inline EventDB load_db(const std::string& text) {
  using jsonio::json;
  json j;
  try {
    j = jsonio::parse_checked(text);
  } catch (const jsonio::DuplicateKey& e) {
    throw SchemaViolation("events." + e.key, "unique id", "duplicate");
  } catch (const json::parse_error& e) {
    throw SchemaViolation("$", "well-formed JSON", e.what());
  }
  if (!j.is_object()) throw SchemaViolation("$", "object", j.type_name());
  if (!j.contains("schema_version") || !j["schema_version"].is_number_integer() ||
      j["schema_version"].get<int>() != 1)
    throw SchemaViolation("schema_version", "1", j.contains("schema_version") ? j["schema_version"].dump() : "absent");
  if (!j.contains("provenance")) throw SchemaViolation("provenance", "object", "absent");
  const json& prov = j["provenance"];
  if (!prov.is_object()) throw SchemaViolation("provenance", "object", prov.type_name());

  EventDB db;
  db.provenance.design = detail::require_string(prov, "design", "provenance");
  db.provenance.isa = detail::require_string(prov, "isa", "provenance");
  db.provenance.created_at = detail::require_string(prov, "created_at", "provenance");
  db.provenance.sampling_policy = detail::require_string(prov, "sampling_policy", "provenance");

  const json& evs = detail::require(j, "events", "$", "object");
  if (!evs.is_object()) throw SchemaViolation("events", "object", evs.type_name());
  for (auto it = evs.begin(); it != evs.end(); ++it) {
    const std::string& key = it.key();
    const json& e = it.value();
    std::string path = "events." + key;
    if (!e.is_object()) throw SchemaViolation(path, "object", e.type_name());
    EventRecord r;
    r.id = detail::require_string(e, "id", path);
    if (r.id != key) throw SchemaViolation(path + ".id", key, r.id);
    r.name = detail::require_string(e, "name", path);
    r.description = detail::require_string(e, "description", path);
    r.logical_summary = detail::require_string(e, "logical_summary", path);
    r.stimulus_guidance = detail::require_string(e, "stimulus_guidance", path);
    r.instruction_categories = detail::require_string_list(e, "instruction_categories", path);
    r.source_signals = detail::require_string_list(e, "source_signals", path);
    if (r.source_signals.empty())
      throw SchemaViolation(path + ".source_signals", "non-empty array", "empty array");
    const json& th = detail::require(e, "theta", path, "number");
    if (!th.is_number()) throw SchemaViolation(path + ".theta", "number", th.type_name());
    r.theta = th.get<double>();
    if (r.theta < 0.0 || r.theta > 1.0)
      throw SchemaViolation(path + ".theta", "number in [0,1]", th.dump());
    r.module_stage = detail::require_string(e, "module_stage", path);
    if (e.contains("incomplete")) {
      if (!e["incomplete"].is_boolean())
        throw SchemaViolation(path + ".incomplete", "boolean", e["incomplete"].type_name());
      r.incomplete = e["incomplete"].get<bool>();
    }
    if (!r.incomplete &&
        (r.logical_summary.empty() || r.stimulus_guidance.empty() ||
         r.instruction_categories.empty()))
      throw SchemaViolation(path, "complete metadata or incomplete flag", "missing metadata");
    db.events.emplace(key, std::move(r));
  }
  return db;
}

// ---------------------------------------------------------------------------
// Query
// ---------------------------------------------------------------------------

struct EventFilter {
  std::optional<double> theta_max;
  std::optional<std::string> module_stage;
  std::optional<std::string> name_substring;  // matches name or any source signal
};

/// Conjunctive filter; results ordered by ascending theta, ties by id.
inline std::vector<EventRecord> query(const EventDB& db, const EventFilter& f = {}) {
  std::vector<EventRecord> out;
  std::string needle = f.name_substring ? util::to_lower(*f.name_substring) : "";
  for (const auto& [id, r] : db.events) {
    if (f.theta_max && r.theta > *f.theta_max) continue;
    if (f.module_stage && r.module_stage != *f.module_stage) continue;
    if (f.name_substring) {
      bool hit = util::to_lower(r.name).find(needle) != std::string::npos;
      for (const auto& s : r.source_signals)
        if (!hit && util::to_lower(s).find(needle) != std::string::npos) hit = true;
      if (!hit) continue;
    }
    out.push_back(r);
  }
  std::stable_sort(out.begin(), out.end(), [](const EventRecord& a, const EventRecord& b) {
    if (a.theta != b.theta) return a.theta < b.theta;
    return a.id < b.id;
  });
  return out;
}

inline const EventRecord& get_event(const EventDB& db, const std::string& id) {
  auto it = db.events.find(id);
  if (it == db.events.end()) throw UnknownEvent(id);
  return it->second;
}

// ---------------------------------------------------------------------------
// ISA instruction database (category-based shortlist resolution)
// ---------------------------------------------------------------------------

struct IsaInstruction {
  std::string id;           // mnemonic
  std::string syntax;
  std::string encoding;
  std::string example_hex;
  std::string description;
  std::vector<std::string> categories;
  bool operator==(const IsaInstruction&) const = default;
};

struct IsaDB {
  std::string name;
  std::vector<IsaInstruction> instructions;  // declaration order preserved
};

inline IsaDB load_isa(const std::string& text) {
  using jsonio::json;
  json j;
  try {
    j = jsonio::parse_checked(text);
  } catch (const json::parse_error& e) {
    throw SchemaViolation("$", "well-formed JSON", e.what());
  }
  if (!j.is_object()) throw SchemaViolation("$", "object", j.type_name());
  IsaDB db;
  db.name = detail::require_string(j, "name", "$");
  const json& list = detail::require(j, "instructions", "$", "array");
  if (!list.is_array()) throw SchemaViolation("instructions", "array", list.type_name());
  for (size_t i = 0; i < list.size(); ++i) {
    std::string path = "instructions[" + std::to_string(i) + "]";
    const json& e = list[i];
    if (!e.is_object()) throw SchemaViolation(path, "object", e.type_name());
    IsaInstruction ins;
    ins.id = detail::require_string(e, "id", path);
    ins.syntax = detail::require_string(e, "syntax", path);
    ins.encoding = detail::require_string(e, "encoding", path);
    ins.example_hex = detail::require_string(e, "example_hex", path);
    ins.description = detail::require_string(e, "description", path);
    ins.categories = detail::require_string_list(e, "categories", path);
    db.instructions.push_back(std::move(ins));
  }
  return db;
}

/// Instructions whose categories intersect the event's, in ISA declaration
/// order, deduplicated.
inline std::vector<IsaInstruction> instruction_shortlist(
    const IsaDB& isa, const std::vector<std::string>& categories) {
  std::vector<IsaInstruction> out;
  for (const auto& ins : isa.instructions) {
    bool hit = false;
    for (const auto& c : ins.categories)
      for (const auto& want : categories)
        if (c == want) hit = true;
    if (hit) out.push_back(ins);
  }
  return out;
}

}  // namespace rarecov::events
