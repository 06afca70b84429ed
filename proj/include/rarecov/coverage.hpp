// SPDX-License-Identifier: Apache-2.0
//
// Combinational and sequential trigger-coverage computation: threshold-sweep
// coverage tables, expected-coverage mathematics over trigger-probability
// incidence matrices, joint-rarity sequence sampling, and bucketed
// sequential-coverage reports.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "rarecov/event_db.hpp"
#include "rarecov/util.hpp"

namespace rarecov::coverage {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct UnknownEventId : std::runtime_error {
  std::string id;
  explicit UnknownEventId(std::string event_id)
      : std::runtime_error("unknown event id: " + event_id), id(std::move(event_id)) {}
};

struct EmptyInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BucketUnsatisfiable : std::runtime_error {
  explicit BucketUnsatisfiable(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// Coverage table (threshold sweep)
// ---------------------------------------------------------------------------

struct CoverageRow {
  double theta_threshold = 0.0;
  uint64_t rare_events = 0;
  uint64_t rare_triggered = 0;
  double percent = 0.0;         // 100 * triggered / rare, 0 when rare = 0
  std::string percent_text;     // two decimals, round-half-even
  bool empty = false;           // no rare events at this threshold
};

/// One row per threshold: events with theta <= threshold are rare; a rare
/// event counts as triggered when its verdict is present and true.
inline std::vector<CoverageRow> coverage_table(const events::EventDB& db,
                                               const std::map<std::string, bool>& verdicts,
                                               const std::vector<double>& thresholds) {
  for (const auto& [id, _] : verdicts)
    if (!db.events.count(id)) throw UnknownEventId(id);
  for (size_t i = 1; i < thresholds.size(); ++i)
    if (thresholds[i] < thresholds[i - 1])
      throw std::invalid_argument("thresholds must be sorted ascending");

  std::vector<CoverageRow> rows;
  for (double thr : thresholds) {
    CoverageRow row;
    row.theta_threshold = thr;
    for (const auto& [id, rec] : db.events) {
      if (rec.theta > thr) continue;
      ++row.rare_events;
      auto v = verdicts.find(id);
      if (v != verdicts.end() && v->second) ++row.rare_triggered;
    }
    if (row.rare_events == 0) {
      row.empty = true;
      row.percent = 0.0;
      row.percent_text = "0.00";
    } else {
      row.percent = 100.0 * static_cast<double>(row.rare_triggered) /
                    static_cast<double>(row.rare_events);
      row.percent_text = util::format_percent(row.rare_triggered, row.rare_events);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Expected-coverage mathematics
// ---------------------------------------------------------------------------

/// N events x T programs of independent trigger probabilities in [0,1).
/// targets[j] lists the programs directed at event j; only those entries
/// contribute to event j's union probability.
struct IncidenceMatrix {
  std::vector<std::string> events;    // N ids
  std::vector<std::string> programs;  // T ids
  std::vector<std::vector<double>> p; // N rows x T columns
  std::vector<std::vector<size_t>> targets;  // per event, program indices

  size_t n_events() const { return events.size(); }
  size_t n_programs() const { return programs.size(); }

  void validate() const {
    if (p.size() != events.size()) throw std::invalid_argument("matrix row count != event count");
    for (const auto& row : p) {
      if (row.size() != programs.size())
        throw std::invalid_argument("matrix column count != program count");
      for (double v : row)
        if (!(v >= 0.0 && v < 1.0)) throw std::invalid_argument("matrix entry outside [0,1)");
    }
    if (targets.size() != events.size())
      throw std::invalid_argument("target set count != event count");
    for (const auto& t : targets)
      for (size_t idx : t)
        if (idx >= programs.size()) throw std::invalid_argument("target index out of range");
  }

  /// All programs target all events.
  static IncidenceMatrix dense(std::vector<std::vector<double>> probs) {
    IncidenceMatrix m;
    m.p = std::move(probs);
    size_t cols = m.p.empty() ? 0 : m.p[0].size();
    for (size_t j = 0; j < m.p.size(); ++j) m.events.push_back("e" + std::to_string(j));
    for (size_t i = 0; i < cols; ++i) m.programs.push_back("t" + std::to_string(i));
    std::vector<size_t> all(cols);
    for (size_t i = 0; i < cols; ++i) all[i] = i;
    m.targets.assign(m.p.size(), all);
    m.validate();
    return m;
  }
};

/// Expected number of triggered events when each event has one targeting
/// program with success probability p_j.
inline double expected_triggers_indv(const std::vector<double>& p) {
  if (p.empty()) throw EmptyInput("no probabilities given");
  long double sum = 0.0L;
  for (double v : p) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("probability outside [0,1]");
    sum += v;
  }
  return static_cast<double>(sum);
}

/// Average per-event trigger probability: (1/N) * sum(p_j).
inline double expected_coverage_indv(const std::vector<double>& p) {
  return expected_triggers_indv(p) / static_cast<double>(p.size());
}

/// Probability the event fires under at least one of its targeting
/// programs: 1 - prod(1 - p_i). Long rows switch to log-complement
/// accumulation for numerical stability. An empty row contributes 0 and
/// sets the flag instead of throwing.
inline double union_trigger_prob(const std::vector<double>& row, bool* empty_flag = nullptr) {
  if (empty_flag) *empty_flag = row.empty();
  if (row.empty()) return 0.0;
  for (double v : row)
    if (!(v >= 0.0 && v < 1.0)) throw std::invalid_argument("probability outside [0,1)");
  if (row.size() > 50) {
    long double log_miss = 0.0L;
    for (double v : row) log_miss += std::log1p(static_cast<long double>(-v));
    return static_cast<double>(-std::expm1(log_miss));
  }
  long double miss = 1.0L;
  for (double v : row) miss *= (1.0L - static_cast<long double>(v));
  return static_cast<double>(1.0L - miss);
}

namespace detail {

inline std::vector<double> target_row(const IncidenceMatrix& m, size_t j) {
  std::vector<double> row;
  row.reserve(m.targets[j].size());
  for (size_t i : m.targets[j]) row.push_back(m.p[j][i]);
  return row;
}

}  // namespace detail

/// Expected number of events triggered by at least one targeting program.
inline double expected_triggers_comb(const IncidenceMatrix& m) {
  m.validate();
  if (m.n_events() == 0) throw EmptyInput("matrix has no events");
  long double sum = 0.0L;
  for (size_t j = 0; j < m.n_events(); ++j)
    sum += union_trigger_prob(detail::target_row(m, j));
  return static_cast<double>(sum);
}

/// (1/N) * sum over events of that event's union trigger probability.
inline double expected_coverage_comb(const IncidenceMatrix& m) {
  return expected_triggers_comb(m) / static_cast<double>(m.n_events());
}

// ---------------------------------------------------------------------------
// Sequential triggers
// ---------------------------------------------------------------------------

struct SequentialTrigger {
  std::vector<std::string> event_sequence;  // length >= 2
  double joint_theta = 0.0;                 // product of member thetas
  bool triggered = false;
};

/// joint_theta models the activation probability of the whole sequence
/// under event independence (the member rarities multiplied).
inline SequentialTrigger make_sequence(const events::EventDB& db,
                                       const std::vector<std::string>& event_ids) {
  if (event_ids.size() < 2)
    throw std::invalid_argument("a sequential trigger needs at least 2 events");
  SequentialTrigger s;
  s.event_sequence = event_ids;
  long double product = 1.0L;
  for (const auto& id : event_ids) {
    auto it = db.events.find(id);
    if (it == db.events.end()) throw UnknownEventId(id);
    product *= static_cast<long double>(it->second.theta);
  }
  s.joint_theta = static_cast<double>(product);
  return s;
}

/// Per program: the first instant each event showed activity beyond the
/// golden trace (absent = never triggered in that program's run).
using OccurrenceMap = std::map<std::string, std::map<std::string, uint64_t>>;

struct ThetaBucket {
  double lo = 0.0;
  double hi = 1.0;  // half-open [lo, hi)
  bool contains(double v) const { return v >= lo && v < hi; }
};

struct SequentialOptions {
  // strict first-trigger-timestamp order within one trace; simultaneous
  // timestamps break the sequence. false relaxes to mere co-occurrence.
  bool require_order = true;
};

/// True when one single program's trace shows every member event, in order.
inline bool sequence_triggered(const SequentialTrigger& s, const OccurrenceMap& traces,
                               const SequentialOptions& opt = {}) {
  for (const auto& [program, occurrences] : traces) {
    bool ok = true;
    uint64_t prev = 0;
    bool first = true;
    for (const auto& id : s.event_sequence) {
      auto it = occurrences.find(id);
      if (it == occurrences.end()) {
        ok = false;
        break;
      }
      if (opt.require_order && !first && it->second <= prev) {
        ok = false;
        break;
      }
      prev = it->second;
      first = false;
    }
    if (ok) return true;
  }
  return false;
}

struct BucketRow {
  ThetaBucket bucket;
  uint64_t sequences = 0;
  uint64_t triggered = 0;
  double percent = 0.0;
  std::string percent_text;
  bool empty = false;  // no sequence's joint_theta fell in this bucket
};

/// Bucketed sequential coverage: each sequence is assigned to the buckets
/// containing its joint_theta; percentage = triggered / total per bucket.
/// Empty buckets are reported with the flag set, never dropped.
inline std::vector<BucketRow> sequential_coverage(const events::EventDB& db,
                                                  const OccurrenceMap& traces,
                                                  std::vector<SequentialTrigger> sequences,
                                                  const std::vector<ThetaBucket>& theta_buckets,
                                                  const SequentialOptions& opt = {}) {
  for (const auto& s : sequences)
    for (const auto& id : s.event_sequence)
      if (!db.events.count(id)) throw UnknownEventId(id);

  for (auto& s : sequences) s.triggered = sequence_triggered(s, traces, opt);

  std::vector<BucketRow> rows;
  for (const auto& b : theta_buckets) {
    BucketRow row;
    row.bucket = b;
    for (const auto& s : sequences) {
      if (!b.contains(s.joint_theta)) continue;
      ++row.sequences;
      if (s.triggered) ++row.triggered;
    }
    if (row.sequences == 0) {
      row.empty = true;
      row.percent_text = "0.00";
    } else {
      row.percent =
          100.0 * static_cast<double>(row.triggered) / static_cast<double>(row.sequences);
      row.percent_text = util::format_percent(row.triggered, row.sequences);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

/// Rejection-sample `count` distinct ordered k-tuples of distinct events
/// whose joint_theta lies in the bucket. Deterministic under a fixed seed:
/// the candidate pool is the database's events sorted by id, the generator
/// is mt19937_64. The attempt cap is max(10000, 1000*count).
inline std::vector<SequentialTrigger> sample_sequences(const events::EventDB& db, size_t k,
                                                       const ThetaBucket& bucket, size_t count,
                                                       uint64_t seed) {
  if (k < 2) throw std::invalid_argument("sequence length must be >= 2");
  std::vector<const events::EventRecord*> pool;
  for (const auto& [id, rec] : db.events) pool.push_back(&rec);
  // std::map iteration is already id-sorted; keep the sort explicit anyway
  std::sort(pool.begin(), pool.end(),
            [](auto* a, auto* b) { return a->id < b->id; });
  if (pool.size() < k) throw BucketUnsatisfiable("fewer events than the sequence length");

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
  std::set<std::vector<std::string>> seen;
  std::vector<SequentialTrigger> out;
  const size_t cap = std::max<size_t>(10000, 1000 * count);
  for (size_t attempt = 0; attempt < cap && out.size() < count; ++attempt) {
    std::vector<size_t> idx;
    std::set<size_t> used;
    while (idx.size() < k) {
      size_t c = pick(rng);
      if (used.insert(c).second) idx.push_back(c);
    }
    SequentialTrigger s;
    long double product = 1.0L;
    for (size_t i : idx) {
      s.event_sequence.push_back(pool[i]->id);
      product *= static_cast<long double>(pool[i]->theta);
    }
    s.joint_theta = static_cast<double>(product);
    if (!bucket.contains(s.joint_theta)) continue;
    if (!seen.insert(s.event_sequence).second) continue;
    out.push_back(std::move(s));
  }
  if (out.size() < count)
    throw BucketUnsatisfiable("could not find " + std::to_string(count) +
                              " sequences with joint rarity in [" + std::to_string(bucket.lo) +
                              ", " + std::to_string(bucket.hi) + ") after " + std::to_string(cap) +
                              " attempts");
  return out;
}

// ---------------------------------------------------------------------------
// Stage summary (per-pipeline-stage event and rare-event counts)
// ---------------------------------------------------------------------------

struct StageRow {
  std::string stage;
  uint64_t signals = 0;  // analyzed signals mapped to this stage (0 if unknown)
  uint64_t events = 0;
  uint64_t rare = 0;  // theta <= threshold
};

inline const std::vector<std::string>& canonical_stage_order() {
  static const std::vector<std::string> order{"decode", "fetch", "alu", "lsu", "ctrl", "other"};
  return order;
}

/// Rows in canonical stage order; stages with no events are included only
/// when signal counts mention them.
inline std::vector<StageRow> stage_summary(const events::EventDB& db, double threshold,
                                           const std::map<std::string, uint64_t>& signal_counts = {}) {
  std::map<std::string, StageRow> by_stage;
  for (const auto& [id, rec] : db.events) {
    auto& row = by_stage[rec.module_stage];
    row.stage = rec.module_stage;
    ++row.events;
    if (rec.theta <= threshold) ++row.rare;
  }
  for (const auto& [stage, n] : signal_counts) {
    auto& row = by_stage[stage];
    row.stage = stage;
    row.signals = n;
  }
  std::vector<StageRow> rows;
  for (const auto& stage : canonical_stage_order()) {
    auto it = by_stage.find(stage);
    if (it != by_stage.end()) rows.push_back(it->second);
    by_stage.erase(stage);
  }
  for (const auto& [stage, row] : by_stage) rows.push_back(row);  // design-specific extras
  return rows;
}

}  // namespace rarecov::coverage
