#pragma once

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "designc/graph.hpp"

// Graphical rewrite rules: an LHS pattern matched against the design graph by
// injective, type-conforming subgraph search, and an RHS replacement.
//
// Semantics: nodes bound to pids present only in the LHS are deleted together
// with all incident edges (dangling-edge deletion). Matched LHS edges between
// preserved nodes that do not reappear in the RHS are deleted. Pids present
// only in the RHS create nodes. RHS assignments are evaluated against the
// pre-application bindings, then written; RHS edges not already present are
// created.
//
// Rule document (JSON):
//   {"name": "...",
//    "lhs": {"nodes": [{"pid": "e", "class": "Engine", "where": "massFlow > 0"}],
//            "edges": [["e", "exhaustLine", "s"], ...]},
//    "rhs": {"nodes": [{"pid": "e", "class": "Engine",
//                       "assign": {"massFlow": "e.massFlow * 2"}}],
//            "edges": [...]},
//    "mode": "first" | "forall", "required": true|false}

namespace designc {

struct PatternNode {
  std::string pid;
  std::string cls;
  ExprPtr where;  // optional boolean predicate over the node's attributes
  std::string where_src;
};

struct PatternEdge {
  std::string src_pid;
  std::string assoc;
  std::string dst_pid;
};

struct Assignment {
  std::string attr;
  ExprPtr expr;  // over lhs bindings as pid.attr, plus bundle parameters
  std::string src;
};

struct RhsNode {
  std::string pid;
  std::string cls;
  std::vector<Assignment> assigns;
};

struct Rule {
  enum class Mode { first, forall };

  std::string name;
  std::vector<PatternNode> lhs_nodes;
  std::vector<PatternEdge> lhs_edges;
  std::vector<RhsNode> rhs_nodes;
  std::vector<PatternEdge> rhs_edges;
  Mode mode = Mode::first;
  bool required = false;

  const PatternNode* lhs_node(const std::string& pid) const {
    for (const auto& n : lhs_nodes)
      if (n.pid == pid) return &n;
    return nullptr;
  }
  const RhsNode* rhs_node(const std::string& pid) const {
    for (const auto& n : rhs_nodes)
      if (n.pid == pid) return &n;
    return nullptr;
  }
};

// An injective, type-conforming assignment of lhs pids to graph nodes.
// Bindings are kept sorted by pid; the canonical order of matches is
// lexicographic over the tuple of node ids in that pid order.
struct Match {
  std::vector<std::pair<std::string, NodeId>> bindings;

  NodeId at(const std::string& pid) const {
    for (const auto& [p, id] : bindings)
      if (p == pid) return id;
    throw Error("match has no binding for pid '" + pid + "'");
  }
  bool operator==(const Match&) const = default;
};

struct Delta {
  std::vector<std::pair<NodeId, std::string>> created_nodes;  // (id, class)
  std::vector<std::pair<NodeId, std::string>> deleted_nodes;
  std::vector<Edge> created_edges;
  std::vector<Edge> deleted_edges;
  std::vector<std::pair<NodeId, std::string>> updated_attrs;  // (id, attribute)

  void merge(const Delta& o) {
    created_nodes.insert(created_nodes.end(), o.created_nodes.begin(), o.created_nodes.end());
    deleted_nodes.insert(deleted_nodes.end(), o.deleted_nodes.begin(), o.deleted_nodes.end());
    created_edges.insert(created_edges.end(), o.created_edges.begin(), o.created_edges.end());
    deleted_edges.insert(deleted_edges.end(), o.deleted_edges.begin(), o.deleted_edges.end());
    updated_attrs.insert(updated_attrs.end(), o.updated_attrs.begin(), o.updated_attrs.end());
  }
};

// ---------------------------------------------------------------------------
// Loading and static validation

using ParamTypes = std::map<std::string, StaticType>;

namespace detail {

inline void load_pattern_side(const nlohmann::json& js, const char* side,
                              std::vector<PatternEdge>& edges, Diagnostics& diag,
                              const std::string& rule_name,
                              const std::function<void(const nlohmann::json&)>& on_node) {
  if (!js.is_object()) {
    diag.add("rule '" + rule_name + "': " + side + " must be an object with nodes and edges");
    return;
  }
  for (const auto& jn : js.value("nodes", nlohmann::json::array())) on_node(jn);
  for (const auto& je : js.value("edges", nlohmann::json::array())) {
    if (!je.is_array() || je.size() != 3 || !je[0].is_string() || !je[1].is_string() ||
        !je[2].is_string()) {
      diag.add("rule '" + rule_name + "': " + side + " edges must be [pid, assoc, pid] triples");
      continue;
    }
    edges.push_back({je[0].get<std::string>(), je[1].get<std::string>(), je[2].get<std::string>()});
  }
}

}  // namespace detail

// Parses and statically validates one rule. Parameter types, when provided,
// resolve bare identifiers inside predicates and assignments.
inline Rule load_rule(const std::string& json_text, const Schema& schema,
                      const ParamTypes& params = {}) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("rule: ") + e.what(), e.byte);
  }

  Diagnostics diag;
  Rule rule;
  rule.name = doc.value("name", "");
  if (rule.name.empty()) diag.add("rule: a non-empty \"name\" is required");
  const std::string rwhere = "rule '" + rule.name + "'";

  std::string mode = doc.value("mode", "first");
  if (mode == "first") rule.mode = Rule::Mode::first;
  else if (mode == "forall") rule.mode = Rule::Mode::forall;
  else diag.add(rwhere + ": mode must be \"first\" or \"forall\"");
  if (doc.contains("required")) {
    if (!doc["required"].is_boolean()) diag.add(rwhere + ": required must be a boolean");
    else rule.required = doc["required"].get<bool>();
  }

  auto param_ident = [&params](const std::string& name) -> std::optional<StaticType> {
    auto it = params.find(name);
    if (it == params.end()) return std::nullopt;
    return it->second;
  };

  detail::load_pattern_side(
      doc.value("lhs", nlohmann::json::object()), "lhs", rule.lhs_edges, diag, rule.name,
      [&](const nlohmann::json& jn) {
        PatternNode n;
        n.pid = jn.value("pid", "");
        n.cls = jn.value("class", "");
        if (n.pid.empty() || n.cls.empty()) {
          diag.add(rwhere + ": lhs nodes need \"pid\" and \"class\"");
          return;
        }
        if (!schema.find(n.cls)) {
          diag.add(rwhere + ": lhs pid '" + n.pid + "' has unknown class '" + n.cls + "'");
          return;
        }
        if (jn.contains("where")) {
          if (!jn["where"].is_string()) {
            diag.add(rwhere + ", pid '" + n.pid + "': where must be an expression string");
            rule.lhs_nodes.push_back(std::move(n));
            return;
          }
          n.where_src = jn["where"].get<std::string>();
          try {
            n.where = parse_expression(n.where_src);
            CheckScope scope;
            scope.ident = [&schema, &n, &param_ident](const std::string& name)
                -> std::optional<StaticType> {
              if (const AttributeDef* a = schema.find_attribute(n.cls, name))
                return StaticType{a->kind, a->dim};
              return param_ident(name);
            };
            StaticType t = check_expr(*n.where, scope);
            if (t.kind != ValKind::boolean)
              diag.add(rwhere + ", pid '" + n.pid + "': where-predicate must be boolean");
          } catch (const Error& e) {
            diag.add(rwhere + ", pid '" + n.pid + "' where \"" + n.where_src + "\": " + e.what());
          }
        }
        rule.lhs_nodes.push_back(std::move(n));
      });

  detail::load_pattern_side(
      doc.value("rhs", nlohmann::json::object()), "rhs", rule.rhs_edges, diag, rule.name,
      [&](const nlohmann::json& jn) {
        RhsNode n;
        n.pid = jn.value("pid", "");
        n.cls = jn.value("class", "");
        if (n.pid.empty() || n.cls.empty()) {
          diag.add(rwhere + ": rhs nodes need \"pid\" and \"class\"");
          return;
        }
        if (!schema.find(n.cls)) {
          diag.add(rwhere + ": rhs pid '" + n.pid + "' has unknown class '" + n.cls + "'");
          return;
        }
        for (const auto& [attr, jsrc] :
             jn.value("assign", nlohmann::json::object()).items()) {
          Assignment a;
          a.attr = attr;
          a.src = jsrc.is_string() ? jsrc.get<std::string>() : jsrc.dump();
          n.assigns.push_back(std::move(a));
        }
        std::sort(n.assigns.begin(), n.assigns.end(),
                  [](const Assignment& a, const Assignment& b) { return a.attr < b.attr; });
        rule.rhs_nodes.push_back(std::move(n));
      });

  // pid uniqueness per side
  auto check_unique = [&](const auto& nodes, const char* side) {
    std::set<std::string> seen;
    for (const auto& n : nodes)
      if (!seen.insert(n.pid).second)
        diag.add(rwhere + ": duplicate " + side + " pid '" + n.pid + "'");
  };
  check_unique(rule.lhs_nodes, "lhs");
  check_unique(rule.rhs_nodes, "rhs");

  // shared pids keep their class
  for (const auto& rn : rule.rhs_nodes)
    if (const PatternNode* ln = rule.lhs_node(rn.pid))
      if (ln->cls != rn.cls)
        diag.add(rwhere + ": pid '" + rn.pid + "' changes class from '" + ln->cls + "' to '" +
                 rn.cls + "'; preserved nodes keep their class");

  // edges reference their side's pids and respect the schema
  auto check_edges = [&](const std::vector<PatternEdge>& edges, const char* side,
                         const std::function<std::string(const std::string&)>& class_of) {
    for (const auto& e : edges) {
      std::string src_cls = class_of(e.src_pid);
      std::string dst_cls = class_of(e.dst_pid);
      if (src_cls.empty())
        diag.add(rwhere + ": " + side + " edge references unknown pid '" + e.src_pid + "'");
      if (dst_cls.empty())
        diag.add(rwhere + ": " + side + " edge references unknown pid '" + e.dst_pid + "'");
      if (src_cls.empty() || dst_cls.empty()) continue;
      const AssociationDef* assoc = schema.find_association(src_cls, e.assoc);
      if (!assoc) {
        diag.add(rwhere + ": class '" + src_cls + "' declares no association '" + e.assoc + "'");
        continue;
      }
      if (!schema.is_subtype(dst_cls, assoc->target))
        diag.add(rwhere + ": association '" + e.assoc + "' targets '" + assoc->target +
                 "' but pid '" + e.dst_pid + "' is a '" + dst_cls + "'");
    }
  };
  check_edges(rule.lhs_edges, "lhs", [&rule](const std::string& pid) -> std::string {
    const PatternNode* n = rule.lhs_node(pid);
    return n ? n->cls : "";
  });
  check_edges(rule.rhs_edges, "rhs", [&rule](const std::string& pid) -> std::string {
    const RhsNode* n = rule.rhs_node(pid);
    return n ? n->cls : "";
  });

  // assignments: declared target attribute, well-typed expression
  for (auto& rn : rule.rhs_nodes) {
    for (auto& a : rn.assigns) {
      const AttributeDef* target = schema.find_attribute(rn.cls, a.attr);
      if (!target) {
        diag.add(rwhere + ", pid '" + rn.pid + "': class '" + rn.cls + "' has no attribute '" +
                 a.attr + "'");
        continue;
      }
      try {
        ExprPtr expr = parse_expression(a.src);
        CheckScope scope;
        scope.ident = [&schema, &rule, &param_ident](const std::string& name)
            -> std::optional<StaticType> {
          auto dot = name.find('.');
          if (dot != std::string::npos) {
            const PatternNode* n = rule.lhs_node(name.substr(0, dot));
            if (!n) return std::nullopt;
            const AttributeDef* attr = schema.find_attribute(n->cls, name.substr(dot + 1));
            if (!attr) return std::nullopt;
            return StaticType{attr->kind, attr->dim};
          }
          return param_ident(name);
        };
        StaticType t = check_expr(*expr, scope);
        if (t.kind != target->kind) {
          diag.add(rwhere + ", pid '" + rn.pid + "', assignment '" + a.attr +
                   "': expression is " + val_kind_name(t.kind) + " but the attribute is " +
                   val_kind_name(target->kind));
        } else if (t.kind == ValKind::number && t.dim != target->dim) {
          diag.add(rwhere + ", pid '" + rn.pid + "', assignment '" + a.attr +
                   "': dimension mismatch, expression is " + t.dim.str() +
                   " but the attribute is " + target->dim.str());
        }
        a.expr = expr;
      } catch (const Error& e) {
        diag.add(rwhere + ", pid '" + rn.pid + "', assignment '" + a.attr + "' \"" + a.src +
                 "\": " + e.what());
      }
    }
  }

  diag.throw_if_any();
  return rule;
}

// ---------------------------------------------------------------------------
// Matching

namespace detail {

// Predicate filter during matching: an unset attribute makes the candidate
// fail the predicate rather than aborting the search.
inline bool where_holds(const PatternNode& pat, const DesignGraph& graph, NodeId id,
                        const EvalScope* outer) {
  if (!pat.where) return true;
  EvalScope scope = node_scope(graph, id, outer);
  try {
    Value v = eval_expr(*pat.where, scope);
    return v.is_bool() && v.boolean();
  } catch (const EvalError&) {
    return false;
  }
}

}  // namespace detail

// All injective, type-conforming morphisms of the rule's LHS into the graph,
// in canonical order: lexicographic over the tuple of matched node ids with
// pids sorted. An empty LHS yields exactly one empty match.
inline std::vector<Match> find_matches(const Rule& rule, const DesignGraph& graph,
                                       const EvalScope* outer = nullptr) {
  std::vector<const PatternNode*> order;
  for (const auto& n : rule.lhs_nodes) order.push_back(&n);
  std::sort(order.begin(), order.end(),
            [](const PatternNode* a, const PatternNode* b) { return a->pid < b->pid; });

  std::vector<Match> out;
  std::vector<std::pair<std::string, NodeId>> bound;  // parallel to order prefix

  auto edge_ok = [&](const std::string& pid, NodeId id) {
    auto resolve = [&](const std::string& p) -> std::optional<NodeId> {
      if (p == pid) return id;
      for (const auto& [q, nid] : bound)
        if (q == p) return nid;
      return std::nullopt;
    };
    for (const auto& e : rule.lhs_edges) {
      if (e.src_pid != pid && e.dst_pid != pid) continue;
      auto s = resolve(e.src_pid);
      auto d = resolve(e.dst_pid);
      if (!s || !d) continue;  // other endpoint not bound yet
      if (!graph.has_edge(Edge{*s, e.assoc, *d})) return false;
    }
    return true;
  };

  std::function<void(std::size_t)> descend = [&](std::size_t depth) {
    if (depth == order.size()) {
      Match m;
      m.bindings = bound;
      out.push_back(std::move(m));
      return;
    }
    const PatternNode& pat = *order[depth];
    for (const auto& [id, node] : graph.nodes()) {
      if (!graph.schema().is_subtype(node.cls, pat.cls)) continue;
      bool taken = false;
      for (const auto& [q, nid] : bound)
        if (nid == id) { taken = true; break; }
      if (taken) continue;
      if (!detail::where_holds(pat, graph, id, outer)) continue;
      if (!edge_ok(pat.pid, id)) continue;
      bound.emplace_back(pat.pid, id);
      descend(depth + 1);
      bound.pop_back();
    }
  };
  descend(0);
  return out;
}

// Re-checks a match against the current graph state.
inline bool match_still_valid(const Rule& rule, const Match& match, const DesignGraph& graph,
                              const EvalScope* outer = nullptr) {
  std::set<NodeId> used;
  for (const auto& pat : rule.lhs_nodes) {
    NodeId id = 0;
    bool found = false;
    for (const auto& [p, nid] : match.bindings)
      if (p == pat.pid) { id = nid; found = true; break; }
    if (!found) return false;
    const Node* node = graph.find_node(id);
    if (!node) return false;
    if (!graph.schema().is_subtype(node->cls, pat.cls)) return false;
    if (!used.insert(id).second) return false;
    if (!detail::where_holds(pat, graph, id, outer)) return false;
  }
  for (const auto& e : rule.lhs_edges)
    if (!graph.has_edge(Edge{match.at(e.src_pid), e.assoc, match.at(e.dst_pid)})) return false;
  return true;
}

// Applies the rule at the given match. Assignment expressions are evaluated
// against the pre-application state, then all writes are committed.
inline Delta apply_rule(const Rule& rule, const Match& match, DesignGraph& graph,
                        const EvalScope* outer = nullptr) {
  if (!match_still_valid(rule, match, graph, outer))
    throw GraphError("rule '" + rule.name + "': stale match rejected");

  std::set<std::string> lhs_pids, rhs_pids;
  for (const auto& n : rule.lhs_nodes) lhs_pids.insert(n.pid);
  for (const auto& n : rule.rhs_nodes) rhs_pids.insert(n.pid);

  // evaluate all assignments against the old state
  EvalScope assign_scope;
  assign_scope.ident = [&graph, &match, outer](const std::string& name)
      -> std::optional<Value> {
    auto dot = name.find('.');
    if (dot != std::string::npos) {
      for (const auto& [p, id] : match.bindings)
        if (p == name.substr(0, dot)) return graph.attr_value(id, name.substr(dot + 1));
      return std::nullopt;
    }
    if (outer && outer->ident) return outer->ident(name);
    return std::nullopt;
  };
  if (outer) assign_scope.queries = outer->queries;

  std::vector<std::pair<const RhsNode*, std::vector<std::pair<std::string, Value>>>> pending;
  for (const auto& rn : rule.rhs_nodes) {
    std::vector<std::pair<std::string, Value>> values;
    for (const auto& a : rn.assigns) {
      Value v;
      try {
        v = eval_expr(*a.expr, assign_scope);
      } catch (const EvalError& e) {
        throw GraphError("rule '" + rule.name + "', assignment '" + a.attr + " := " + a.src +
                         "': " + e.what());
      }
      if (v.is_number() && !std::isfinite(v.number()))
        throw GraphError("rule '" + rule.name + "', assignment '" + a.attr + " := " + a.src +
                         "': result is not finite");
      values.emplace_back(a.attr, std::move(v));
    }
    pending.emplace_back(&rn, std::move(values));
  }

  Delta delta;

  // delete nodes bound to pids that do not survive (dangling edges included)
  for (const auto& [pid, id] : match.bindings) {
    if (rhs_pids.count(pid)) continue;
    const Node& node = graph.node_at(id);
    delta.deleted_nodes.emplace_back(id, node.cls);
    auto removed = graph.erase_node(id);
    delta.deleted_edges.insert(delta.deleted_edges.end(), removed.begin(), removed.end());
  }

  // delete matched lhs edges between preserved nodes that the rhs drops
  auto rhs_has_edge = [&rule](const PatternEdge& e) {
    for (const auto& r : rule.rhs_edges)
      if (r.src_pid == e.src_pid && r.assoc == e.assoc && r.dst_pid == e.dst_pid) return true;
    return false;
  };
  for (const auto& e : rule.lhs_edges) {
    if (!rhs_pids.count(e.src_pid) || !rhs_pids.count(e.dst_pid)) continue;
    if (rhs_has_edge(e)) continue;
    Edge edge{match.at(e.src_pid), e.assoc, match.at(e.dst_pid)};
    if (graph.has_edge(edge)) {
      graph.erase_edge(edge);
      delta.deleted_edges.push_back(edge);
    }
  }

  // create rhs-only nodes
  std::map<std::string, NodeId> rhs_binding;
  for (const auto& [pid, id] : match.bindings)
    if (rhs_pids.count(pid)) rhs_binding[pid] = id;
  for (const auto& rn : rule.rhs_nodes) {
    if (lhs_pids.count(rn.pid)) continue;
    NodeId id = graph.instantiate(rn.cls);
    rhs_binding[rn.pid] = id;
    delta.created_nodes.emplace_back(id, rn.cls);
  }

  // commit assignments
  for (const auto& [rn, values] : pending) {
    NodeId id = rhs_binding.at(rn->pid);
    for (const auto& [attr, v] : values) {
      graph.set_attr(id, attr, AttrValue(v));
      delta.updated_attrs.emplace_back(id, attr);
    }
  }

  // create rhs edges that are not already present
  for (const auto& e : rule.rhs_edges) {
    Edge edge{rhs_binding.at(e.src_pid), e.assoc, rhs_binding.at(e.dst_pid)};
    if (graph.has_edge(edge)) continue;
    graph.connect(edge.source, edge.assoc, edge.target);
    delta.created_edges.push_back(edge);
  }

  return delta;
}

// One rule call as the production system executes it.
struct RuleRun {
  std::size_t matches_found = 0;
  std::size_t applied = 0;
  std::size_t skipped_stale = 0;
  Delta delta;
};

inline RuleRun run_rule(const Rule& rule, DesignGraph& graph, Rule::Mode mode,
                        const EvalScope* outer = nullptr) {
  RuleRun run;
  std::vector<Match> matches = find_matches(rule, graph, outer);
  run.matches_found = matches.size();
  if (matches.empty()) return run;
  if (mode == Rule::Mode::first) {
    run.delta = apply_rule(rule, matches.front(), graph, outer);
    run.applied = 1;
    return run;
  }
  // forall: all matches computed up front, applied in canonical order,
  // skipping matches invalidated by earlier applications
  for (const auto& m : matches) {
    if (!match_still_valid(rule, m, graph, outer)) {
      ++run.skipped_stale;
      continue;
    }
    run.delta.merge(apply_rule(rule, m, graph, outer));
    ++run.applied;
  }
  return run;
}

inline RuleRun run_rule(const Rule& rule, DesignGraph& graph, const EvalScope* outer = nullptr) {
  return run_rule(rule, graph, rule.mode, outer);
}

}  // namespace designc
