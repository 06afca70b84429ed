// SPDX-License-Identifier: Apache-2.0
//
// Backward fan-in tracing over a parsed design: breadth-first driver
// expansion across module boundaries with depth bounds, glob stop sets,
// and cycle-cutting; plus the deterministic textual abstraction of the
// traced logic that seeds event inference.

#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "rarecov/event_db.hpp"
#include "rarecov/jsonio.hpp"
#include "rarecov/rtl.hpp"
#include "rarecov/util.hpp"

namespace rarecov::fanin {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct UnknownSignal : std::runtime_error {
  explicit UnknownSignal(const std::string& name)
      : std::runtime_error("signal not found in design: " + name) {}
};

struct AmbiguousName : std::runtime_error {
  explicit AmbiguousName(const std::string& name)
      : std::runtime_error("signal name matches more than one net: " + name) {}
};

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

struct TraceNode {
  std::string name;       // hierarchical: top.inst...local
  std::string construct;  // assign | always | port | primary-input
  int depth = 0;
  bool operator==(const TraceNode&) const = default;
};

struct TraceEdge {
  std::string driver, driven;
  std::string label;  // expression or condition linking them
  bool operator==(const TraceEdge&) const = default;
};

struct FanInTrace {
  std::string root;
  std::vector<TraceNode> nodes;      // BFS discovery order (depth-ordered)
  std::vector<TraceEdge> edges;      // acyclic after cycle-cut
  std::vector<TraceEdge> cut_edges;  // recorded back-edges
  int depth_reached = 0;
  bool truncated = false;
  std::vector<std::string> stop_hits;
};

struct TraceAbstraction {
  std::string root;
  std::vector<std::string> blocks;
  std::vector<std::string> referenced_signals;  // node names minus the root
};

struct FanInOptions {
  int max_depth = 8;
  std::vector<std::string> stop_set;  // glob patterns on hierarchical names
  // edge-qualified sensitivity signals (clocks, resets) flood traces with
  // no event value, so they are not drivers unless asked for
  bool include_sensitivity_signals = false;
};

// ---------------------------------------------------------------------------
// Design indexing
// ---------------------------------------------------------------------------

namespace detail {

struct GuardedAssign {
  const rtl::Stmt* stmt = nullptr;             // the assignment
  std::vector<std::string> conds;              // rendered conjuncts, outermost first
  std::vector<std::string> cond_idents;        // identifiers of all guards
  const rtl::AlwaysBlock* block = nullptr;
};

struct ModuleIndex {
  std::map<std::string, std::vector<const rtl::ContAssign*>> assigns;
  std::map<std::string, std::vector<GuardedAssign>> proc;
};

inline void index_stmts(const std::vector<rtl::StmtPtr>& stmts, std::vector<std::string>& conds,
                        std::vector<std::string>& idents, const rtl::AlwaysBlock* blk,
                        ModuleIndex& out) {
  for (const auto& sp : stmts) {
    const rtl::Stmt& s = *sp;
    switch (s.kind) {
      case rtl::Stmt::Assign: {
        GuardedAssign g;
        g.stmt = &s;
        g.conds = conds;
        g.cond_idents = idents;
        g.block = blk;
        out.proc[s.lhs_name].push_back(std::move(g));
        break;
      }
      case rtl::Stmt::If: {
        std::string cond_text = "(" + s.cond->src + ")";
        auto cond_ids = rtl::identifiers_of(*s.cond);
        size_t mark_c = conds.size(), mark_i = idents.size();
        conds.push_back(cond_text);
        idents.insert(idents.end(), cond_ids.begin(), cond_ids.end());
        index_stmts(s.then_body, conds, idents, blk, out);
        conds.resize(mark_c);
        conds.push_back("not " + cond_text);
        index_stmts(s.else_body, conds, idents, blk, out);
        conds.resize(mark_c);
        idents.resize(mark_i);
        break;
      }
      case rtl::Stmt::Case: {
        auto subj_ids = rtl::identifiers_of(*s.subject);
        for (const auto& item : s.items) {
          size_t mark_c = conds.size(), mark_i = idents.size();
          std::string labels;
          for (const auto& l : item.labels) {
            if (!labels.empty()) labels += ", ";
            labels += l->src;
            auto lids = rtl::identifiers_of(*l);
            idents.insert(idents.end(), lids.begin(), lids.end());
          }
          conds.push_back(labels.empty()
                              ? "no other " + s.subject->src + " label matches"
                              : s.subject->src + " matches " + labels);
          idents.insert(idents.end(), subj_ids.begin(), subj_ids.end());
          index_stmts(item.body, conds, idents, blk, out);
          conds.resize(mark_c);
          idents.resize(mark_i);
        }
        break;
      }
      case rtl::Stmt::Block:
        index_stmts(s.body, conds, idents, blk, out);
        break;
      case rtl::Stmt::Opaque:
        break;
    }
  }
}

inline ModuleIndex index_module(const rtl::Module& m) {
  ModuleIndex idx;
  for (const auto& a : m.assigns) idx.assigns[a.lhs_name].push_back(&a);
  for (const auto& blk : m.always_blocks) {
    std::vector<std::string> conds, idents;
    index_stmts(blk.body, conds, idents, &blk, idx);
  }
  return idx;
}

inline std::vector<std::string> edge_signals(const rtl::AlwaysBlock& blk) {
  std::vector<std::string> out;
  for (const auto& e : blk.sensitivity)
    if (e.edge != rtl::SensitivityEntry::None) out.push_back(e.signal);
  return out;
}

// hierarchical node identity: instance path (top module name first) + local
struct NodeKey {
  std::vector<std::string> path;
  std::string local;
  bool operator<(const NodeKey& o) const {
    if (path != o.path) return path < o.path;
    return local < o.local;
  }
  std::string str() const { return util::join(path, ".") + "." + local; }
};

struct DesignIndex {
  const rtl::DesignAST* design = nullptr;
  std::map<std::string, ModuleIndex> modules;

  const ModuleIndex& of(const std::string& module_name) {
    auto it = modules.find(module_name);
    if (it == modules.end()) it = modules.emplace(module_name, index_module(design->modules.at(module_name))).first;
    return it->second;
  }
};

/// Walk the instance tree collecting every (path, module) scope.
/// Depth-capped so recursive instantiation in malformed input terminates.
inline void collect_scopes(const rtl::DesignAST& d, const std::string& module_name,
                           std::vector<std::string> path,
                           std::vector<std::pair<std::vector<std::string>, const rtl::Module*>>& out) {
  if (path.size() > 32) return;
  auto it = d.modules.find(module_name);
  if (it == d.modules.end()) return;
  out.push_back({path, &it->second});
  for (const auto& inst : it->second.instances) {
    if (!d.modules.count(inst.module_name)) continue;
    auto child_path = path;
    child_path.push_back(inst.instance_name);
    collect_scopes(d, inst.module_name, std::move(child_path), out);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Root resolution
// ---------------------------------------------------------------------------

/// Exact hierarchical match first, else unique dot-boundary suffix match
/// (or bare-local match) over every net in the elaborated instance tree.
inline std::string resolve_signal(const rtl::DesignAST& design, const std::string& name) {
  if (design.top.empty()) throw UnknownSignal(name);
  std::vector<std::pair<std::vector<std::string>, const rtl::Module*>> scopes;
  detail::collect_scopes(design, design.top, {design.top}, scopes);
  std::vector<std::string> exact, suffix;
  for (const auto& [path, mod] : scopes) {
    std::string prefix = util::join(path, ".") + ".";
    for (const auto& [net_name, net] : mod->nets) {
      std::string full = prefix + net_name;
      if (full == name) exact.push_back(full);
      else if (full.size() > name.size() && util::ends_with(full, name) &&
               full[full.size() - name.size() - 1] == '.')
        suffix.push_back(full);
    }
  }
  if (!exact.empty()) return exact.front();
  if (suffix.size() == 1) return suffix.front();
  if (suffix.size() > 1) throw AmbiguousName(name);
  throw UnknownSignal(name);
}

// ---------------------------------------------------------------------------
// Fan-in trace
// ---------------------------------------------------------------------------

namespace detail {

struct Driver {
  NodeKey node;
  std::string label;
};

/// All direct drivers of (path, local), with the defining construct of the
/// driven signal. Construct precedence when multiply driven:
/// assign > always > port > primary-input.
inline std::pair<std::string, std::vector<Driver>> drivers_of(
    const rtl::DesignAST& d, DesignIndex& idx, const NodeKey& key, const FanInOptions& opt,
    const std::map<std::vector<std::string>, const rtl::Module*>& scope_of) {
  const rtl::Module& m = *scope_of.at(key.path);
  std::vector<Driver> drivers;
  std::string construct;
  auto add = [&](const NodeKey& nk, const std::string& label) {
    for (const auto& existing : drivers)
      if (!(existing.node < nk) && !(nk < existing.node)) return;  // dedup, keep first label
    drivers.push_back({nk, label});
  };

  const rtl::Port* port = m.find_port(key.local);
  if (port && port->dir == rtl::Port::In) {
    if (key.path.size() == 1) return {"primary-input", {}};
    // cross upward: the parent's connection expression drives this port
    std::vector<std::string> parent_path(key.path.begin(), key.path.end() - 1);
    const rtl::Module& parent = *scope_of.at(parent_path);
    for (const auto& inst : parent.instances) {
      if (inst.instance_name != key.path.back()) continue;
      for (const auto& conn : inst.connections) {
        if (conn.port != key.local || !conn.expr) continue;
        for (const auto& id : rtl::identifiers_of(*conn.expr))
          add({parent_path, id}, conn.expr->src);
      }
    }
    return {"port", drivers};
  }

  const ModuleIndex& mi = idx.of(m.name);
  auto ait = mi.assigns.find(key.local);
  if (ait != mi.assigns.end()) {
    construct = "assign";
    for (const auto* a : ait->second)
      for (const auto& id : rtl::identifiers_of(*a->rhs)) add({key.path, id}, a->rhs->src);
  }
  auto pit = mi.proc.find(key.local);
  if (pit != mi.proc.end()) {
    if (construct.empty()) construct = "always";
    for (const auto& g : pit->second) {
      std::set<std::string> excluded;
      if (!opt.include_sensitivity_signals)
        for (const auto& s : edge_signals(*g.block)) excluded.insert(s);
      for (const auto& id : rtl::identifiers_of(*g.stmt->rhs))
        if (!excluded.count(id)) add({key.path, id}, g.stmt->rhs->src);
      for (const auto& id : g.cond_idents)
        if (!excluded.count(id)) add({key.path, id}, util::join(g.conds, " and "));
      if (opt.include_sensitivity_signals)
        for (const auto& e : g.block->sensitivity)
          if (e.edge != rtl::SensitivityEntry::None)
            add({key.path, e.signal},
                std::string("@(") + (e.edge == rtl::SensitivityEntry::Pos ? "posedge " : "negedge ") +
                    e.signal + ")");
    }
  }
  // downward crossing: a child instance output port driving this net
  for (const auto& inst : m.instances) {
    auto child = d.modules.find(inst.module_name);
    if (child == d.modules.end()) continue;
    for (const auto& conn : inst.connections) {
      if (!conn.expr) continue;
      const rtl::Port* cp = child->second.find_port(conn.port);
      if (!cp || cp->dir == rtl::Port::In) continue;
      auto ids = rtl::identifiers_of(*conn.expr);
      bool hits = false;
      for (const auto& id : ids)
        if (id == key.local) hits = true;
      if (!hits) continue;
      auto child_path = key.path;
      child_path.push_back(inst.instance_name);
      add({child_path, conn.port},
          "output port " + conn.port + " of instance " + inst.instance_name);
      if (construct.empty()) construct = "port";
    }
  }
  if (construct.empty()) construct = "primary-input";  // undriven leaf
  return {construct, drivers};
}

}  // namespace detail

inline FanInTrace fanin_trace(const rtl::DesignAST& design, const std::string& root,
                              const FanInOptions& opt = {}) {
  if (opt.max_depth < 1) throw std::invalid_argument("max_depth must be >= 1");
  std::string resolved = resolve_signal(design, root);

  std::vector<std::pair<std::vector<std::string>, const rtl::Module*>> scopes;
  detail::collect_scopes(design, design.top, {design.top}, scopes);
  std::map<std::vector<std::string>, const rtl::Module*> scope_of;
  for (auto& [p, m] : scopes) scope_of[p] = m;

  detail::DesignIndex idx;
  idx.design = &design;

  // split resolved name back into (path, local)
  auto parts = util::split(resolved, '.');
  detail::NodeKey root_key;
  root_key.local = parts.back();
  root_key.path.assign(parts.begin(), parts.end() - 1);

  FanInTrace trace;
  trace.root = resolved;

  std::map<detail::NodeKey, size_t> node_index;
  std::set<std::pair<std::string, std::string>> edge_seen;
  std::vector<detail::NodeKey> order;  // parallel to trace.nodes

  auto add_node = [&](const detail::NodeKey& k, const std::string& construct, int depth) {
    node_index[k] = trace.nodes.size();
    trace.nodes.push_back({k.str(), construct, depth});
    order.push_back(k);
    trace.depth_reached = std::max(trace.depth_reached, depth);
  };

  std::vector<detail::NodeKey> frontier{root_key};
  {
    auto [construct, _] = detail::drivers_of(design, idx, root_key, opt, scope_of);
    add_node(root_key, construct, 0);
  }

  for (int depth = 0; depth <= opt.max_depth && !frontier.empty(); ++depth) {
    std::vector<detail::NodeKey> next;
    for (const auto& key : frontier) {
      auto [construct, drivers] = detail::drivers_of(design, idx, key, opt, scope_of);
      if (depth == opt.max_depth) {
        // depth bound reached: unexplored drivers mean the trace is cut short
        if (!drivers.empty()) trace.truncated = true;
        continue;
      }
      for (const auto& drv : drivers) {
        std::string drv_name = drv.node.str();
        bool is_new = !node_index.count(drv.node);
        if (is_new) {
          auto [dc, _] = detail::drivers_of(design, idx, drv.node, opt, scope_of);
          add_node(drv.node, dc, depth + 1);
        }
        auto edge_key = std::make_pair(drv_name, key.str());
        if (edge_seen.insert(edge_key).second)
          trace.edges.push_back({drv_name, key.str(), drv.label});
        if (is_new) {
          bool stopped = false;
          for (const auto& pat : opt.stop_set)
            if (util::glob_match(pat, drv_name)) stopped = true;
          if (stopped) trace.stop_hits.push_back(drv_name);
          else next.push_back(drv.node);
        }
      }
    }
    frontier = std::move(next);
  }

  // cycle cut: depth-first walk from the root in driven -> driver direction;
  // edges closing onto the active path are back-edges and get cut
  std::map<std::string, std::vector<std::pair<size_t, std::string>>> adj;
  for (size_t i = 0; i < trace.edges.size(); ++i)
    adj[trace.edges[i].driven].push_back({i, trace.edges[i].driver});
  std::map<std::string, int> state;  // 0 absent, 1 on stack, 2 done
  std::set<size_t> cut;
  for (const auto& start_node : trace.nodes) {
    if (state[start_node.name]) continue;
    std::vector<std::pair<std::string, size_t>> stack{{start_node.name, 0}};
    state[start_node.name] = 1;
    while (!stack.empty()) {
      auto& [name, child] = stack.back();
      auto& children = adj[name];
      if (child < children.size()) {
        auto [edge_idx, drv] = children[child++];
        int s = state[drv];
        if (s == 1) cut.insert(edge_idx);
        else if (s == 0) {
          state[drv] = 1;
          stack.push_back({drv, 0});
        }
      } else {
        state[name] = 2;
        stack.pop_back();
      }
    }
  }
  if (!cut.empty()) {
    std::vector<TraceEdge> kept;
    for (size_t i = 0; i < trace.edges.size(); ++i) {
      if (cut.count(i)) trace.cut_edges.push_back(trace.edges[i]);
      else kept.push_back(trace.edges[i]);
    }
    trace.edges = std::move(kept);
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Textual abstraction
// ---------------------------------------------------------------------------

inline TraceAbstraction abstract_trace(const FanInTrace& trace, const rtl::DesignAST& design) {
  TraceAbstraction abs;
  abs.root = trace.root;

  std::vector<std::pair<std::vector<std::string>, const rtl::Module*>> scopes;
  detail::collect_scopes(design, design.top, {design.top}, scopes);
  std::map<std::vector<std::string>, const rtl::Module*> scope_of;
  for (auto& [p, m] : scopes) scope_of[p] = m;

  detail::DesignIndex idx;
  idx.design = &design;

  for (const auto& node : trace.nodes) {
    auto parts = util::split(node.name, '.');
    std::string local = parts.back();
    std::vector<std::string> path(parts.begin(), parts.end() - 1);
    auto sit = scope_of.find(path);
    if (sit == scope_of.end()) continue;
    const rtl::Module& m = *sit->second;

    if (node.construct == "primary-input") {
      abs.blocks.push_back(local + " is a primary input");
      continue;
    }
    if (node.construct == "port") {
      const rtl::Port* port = m.find_port(local);
      if (port && port->dir == rtl::Port::In) {
        // connection expression lives in the parent scope
        std::string conn_text = "unconnected";
        if (path.size() > 1) {
          std::vector<std::string> parent_path(path.begin(), path.end() - 1);
          const rtl::Module& parent = *scope_of.at(parent_path);
          for (const auto& inst : parent.instances)
            if (inst.instance_name == path.back())
              for (const auto& conn : inst.connections)
                if (conn.port == local && conn.expr) conn_text = "(" + conn.expr->src + ")";
        }
        abs.blocks.push_back(local + " is an input port of module " + m.name + ", connected to " +
                             conn_text);
      } else {
        // net driven by a child instance's output
        std::string text = local + " is driven";
        for (const auto& inst : m.instances) {
          auto child = design.modules.find(inst.module_name);
          if (child == design.modules.end()) continue;
          for (const auto& conn : inst.connections) {
            if (!conn.expr) continue;
            const rtl::Port* cp = child->second.find_port(conn.port);
            if (!cp || cp->dir == rtl::Port::In) continue;
            for (const auto& id : rtl::identifiers_of(*conn.expr))
              if (id == local)
                text += " through port " + conn.port + " of instance " + inst.instance_name +
                        " (module " + inst.module_name + ")";
          }
        }
        abs.blocks.push_back(text);
      }
      continue;
    }
    if (node.construct == "assign") {
      const detail::ModuleIndex& mi = idx.of(m.name);
      auto ait = mi.assigns.find(local);
      if (ait != mi.assigns.end())
        for (const auto* a : ait->second)
          abs.blocks.push_back(local + " is driven combinationally by (" + a->rhs->src + ")");
      continue;
    }
    if (node.construct == "always") {
      const detail::ModuleIndex& mi = idx.of(m.name);
      auto pit = mi.proc.find(local);
      if (pit == mi.proc.end()) continue;
      std::string text = local + " is assigned in an always block:";
      for (const auto& g : pit->second) {
        text += "\n  " + g.stmt->lhs_text + (g.stmt->non_blocking ? " <= " : " = ") +
                g.stmt->rhs->src;
        if (g.conds.empty()) text += " unconditionally";
        else text += " when " + util::join(g.conds, " and ");
      }
      abs.blocks.push_back(text);
      continue;
    }
  }

  if (trace.truncated || !trace.stop_hits.empty()) {
    std::string text;
    if (trace.truncated)
      text = "trace truncated at depth " + std::to_string(trace.depth_reached);
    if (!trace.stop_hits.empty()) {
      if (!text.empty()) text += "; ";
      text += "tracing stopped at: " + util::join(trace.stop_hits, ", ");
    }
    abs.blocks.push_back(text);
  }

  for (const auto& node : trace.nodes)
    if (node.name != trace.root) abs.referenced_signals.push_back(node.name);
  return abs;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline jsonio::json to_json(const FanInTrace& trace, const TraceAbstraction& abs) {
  jsonio::json j;
  j["root"] = trace.root;
  j["depth_reached"] = trace.depth_reached;
  j["truncated"] = trace.truncated;
  j["stop_hits"] = trace.stop_hits;
  jsonio::json nodes = jsonio::json::array();
  for (const auto& n : trace.nodes)
    nodes.push_back({{"name", n.name}, {"construct", n.construct}, {"depth", n.depth}});
  j["nodes"] = nodes;
  jsonio::json edges = jsonio::json::array();
  for (const auto& e : trace.edges)
    edges.push_back({{"driver", e.driver}, {"driven", e.driven}, {"label", e.label}});
  j["edges"] = edges;
  jsonio::json cuts = jsonio::json::array();
  for (const auto& e : trace.cut_edges)
    cuts.push_back({{"driver", e.driver}, {"driven", e.driven}, {"label", e.label}});
  j["cut_edges"] = cuts;
  j["blocks"] = abs.blocks;
  j["referenced_signals"] = abs.referenced_signals;
  return j;
}

/// Event construction from a finished trace: the root plus its direct
/// (depth-1) drivers become the source signals.
inline events::EventRecord build_event(const std::string& design_name, const FanInTrace& trace,
                                       const TraceAbstraction&, const events::Annotation& ann,
                                       const vcd::SignalStats& stats,
                                       const events::StageMap& stages = events::default_stage_map()) {
  std::vector<std::string> drivers;
  for (const auto& n : trace.nodes)
    if (n.depth == 1) drivers.push_back(n.name);
  return events::build_event(design_name, trace.root, drivers, ann, stats, stages);
}

}  // namespace rarecov::fanin
