#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "designc/graph.hpp"

// Declarative constraint processing. The equation network is assembled from
// the instantiated design graph (class equations per node, one equality per
// association binding edge), then ordered without a user-defined solution
// sequence: a maximum bipartite matching assigns each unknown to an equation,
// strongly connected components of the induced dependency graph become
// simultaneous blocks, and the condensation is executed in topological order.
// Unmatched equations turn into post-solve residual checks.

namespace designc {

struct VarKey {
  NodeId node = 0;  // 0 for standalone (schema-free) networks
  std::string attr;
  auto operator<=>(const VarKey&) const = default;
  std::string str() const {
    return node == 0 ? attr : "n" + std::to_string(node) + "." + attr;
  }
};

struct Variable {
  VarKey key;
  Dimension dim;
  std::optional<double> value;    // known iff set
  std::optional<double> initial;  // declared default, used as a Newton guess
};

struct EquationInstance {
  std::string id;      // e.g. "SCRSystem.eq0@n2" or "exhaustLine@n1->n2[massFlow==inFlow]"
  std::string source;  // original equation text
  ExprPtr lhs;
  ExprPtr rhs;
  std::map<std::string, VarKey> binding;  // identifier as written -> variable
  std::vector<VarKey> vars;               // sorted, unique
};

struct ConstraintNetwork {
  std::map<VarKey, Variable> variables;
  std::vector<EquationInstance> equations;

  std::vector<VarKey> unknowns() const {
    std::vector<VarKey> out;
    for (const auto& [key, var] : variables)
      if (!var.value) out.push_back(key);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Network assembly

namespace detail {

inline void register_equation_vars(ConstraintNetwork& net, EquationInstance& inst,
                                   const std::function<Variable(const VarKey&)>& make_var) {
  std::set<VarKey> keys;
  for (const auto& [name, key] : inst.binding) keys.insert(key);
  inst.vars.assign(keys.begin(), keys.end());
  for (const auto& key : inst.vars)
    if (!net.variables.count(key)) net.variables.emplace(key, make_var(key));
}

}  // namespace detail

// One equation instance per (node, visible class equation), plus one equality
// per association-binding edge. Variables are partitioned into knowns (value
// set on the node) and unknowns.
inline ConstraintNetwork collect_network(const DesignGraph& graph) {
  const Schema& schema = graph.schema();
  ConstraintNetwork net;

  auto make_var = [&graph, &schema](const VarKey& key) {
    Variable var;
    var.key = key;
    const Node& node = graph.node_at(key.node);
    const AttributeDef* def = schema.find_attribute(node.cls, key.attr);
    if (!def || def->kind != ValKind::number)
      throw SolveError(SolveError::Kind::bad_network,
                       "equation references non-numeric attribute '" + key.attr + "' of '" +
                           node.cls + "'");
    var.dim = def->dim;
    if (def->default_value.is_set()) var.initial = def->default_value.number();
    auto it = node.attrs.find(key.attr);
    if (it != node.attrs.end()) var.value = it->second.number();
    return var;
  };

  for (const auto& [id, node] : graph.nodes()) {
    for (const ClassDef* cls : schema.chain(node.cls)) {
      for (std::size_t i = 0; i < cls->equations.size(); ++i) {
        const EquationDef& eq = cls->equations[i];
        EquationInstance inst;
        inst.id = cls->name + ".eq" + std::to_string(i) + "@n" + std::to_string(id);
        inst.source = eq.source;
        inst.lhs = eq.lhs;
        inst.rhs = eq.rhs;
        NodeId node_id = id;
        auto bind = [&inst, node_id](const std::string& name) {
          inst.binding.emplace(name, VarKey{node_id, name});
        };
        visit_identifiers(*eq.lhs, bind);
        visit_identifiers(*eq.rhs, bind);
        detail::register_equation_vars(net, inst, make_var);
        net.equations.push_back(std::move(inst));
      }
    }
  }

  for (const Edge& e : graph.edges()) {
    const Node& src = graph.node_at(e.source);
    const AssociationDef* assoc = schema.find_association(src.cls, e.assoc);
    if (!assoc) continue;  // unreachable for graphs built through connect
    for (const auto& b : assoc->bindings) {
      EquationInstance inst;
      inst.id = e.assoc + "@n" + std::to_string(e.source) + "->n" + std::to_string(e.target) +
                "[" + b.source_attr + "==" + b.target_attr + "]";
      inst.source = b.source_attr + " == " + b.target_attr;
      inst.lhs = Expr::make_ident("src." + b.source_attr);
      inst.rhs = Expr::make_ident("dst." + b.target_attr);
      inst.binding.emplace("src." + b.source_attr, VarKey{e.source, b.source_attr});
      inst.binding.emplace("dst." + b.target_attr, VarKey{e.target, b.target_attr});
      detail::register_equation_vars(net, inst, make_var);
      net.equations.push_back(std::move(inst));
    }
  }

  return net;
}

// Standalone network document, for solver-only use:
//   {"variables": [{"name": "x", "dimension": {...}, "value": 1.5}, ...],
//    "equations": ["expr == expr", ...]}
inline ConstraintNetwork load_network(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("network document: ") + e.what(), e.byte);
  }
  Diagnostics diag;
  ConstraintNetwork net;
  if (!doc.is_object() || !doc.contains("variables") || !doc.contains("equations")) {
    diag.add("network document needs \"variables\" and \"equations\"");
    diag.throw_if_any();
  }
  for (const auto& jv : doc["variables"]) {
    if (!jv.is_object() || !jv.contains("name") || !jv["name"].is_string()) {
      diag.add("network: every variable needs a string \"name\"");
      continue;
    }
    Variable var;
    var.key = VarKey{0, jv["name"].get<std::string>()};
    if (jv.contains("dimension")) {
      if (auto d = detail::parse_dimension_object(jv["dimension"], diag,
                                                  "variable '" + var.key.attr + "'"))
        var.dim = *d;
    }
    if (jv.contains("value")) {
      if (!jv["value"].is_number())
        diag.add("variable '" + var.key.attr + "': value must be a number");
      else
        var.value = jv["value"].get<double>();
    }
    if (jv.contains("initial")) {
      if (!jv["initial"].is_number())
        diag.add("variable '" + var.key.attr + "': initial must be a number");
      else
        var.initial = jv["initial"].get<double>();
    }
    if (!net.variables.emplace(var.key, var).second)
      diag.add("duplicate variable '" + var.key.attr + "'");
  }
  std::size_t index = 0;
  for (const auto& je : doc["equations"]) {
    std::string id = "eq" + std::to_string(index++);
    if (!je.is_string()) {
      diag.add(id + ": equations are strings of the form \"expr == expr\"");
      continue;
    }
    EquationInstance inst;
    inst.id = id;
    inst.source = je.get<std::string>();
    try {
      auto [lhs, rhs] = parse_equation(inst.source);
      inst.lhs = lhs;
      inst.rhs = rhs;
      CheckScope scope;
      scope.ident = [&net](const std::string& name) -> std::optional<StaticType> {
        auto it = net.variables.find(VarKey{0, name});
        if (it == net.variables.end()) return std::nullopt;
        return StaticType{ValKind::number, it->second.dim};
      };
      StaticType lt = check_expr(*inst.lhs, scope);
      StaticType rt = check_expr(*inst.rhs, scope);
      if (lt.dim != rt.dim) {
        diag.add(id + " \"" + inst.source + "\": dimension mismatch, left side is " +
                 lt.dim.str() + " but right side is " + rt.dim.str());
        continue;
      }
    } catch (const Error& e) {
      diag.add(id + " \"" + inst.source + "\": " + e.what());
      continue;
    }
    auto bind = [&inst](const std::string& name) { inst.binding.emplace(name, VarKey{0, name}); };
    visit_identifiers(*inst.lhs, bind);
    visit_identifiers(*inst.rhs, bind);
    std::set<VarKey> keys;
    for (const auto& [name, key] : inst.binding) keys.insert(key);
    inst.vars.assign(keys.begin(), keys.end());
    if (inst.vars.empty()) {
      diag.add(id + " \"" + inst.source + "\": equation references no variables");
      continue;
    }
    net.equations.push_back(std::move(inst));
  }
  diag.throw_if_any();
  return net;
}

// ---------------------------------------------------------------------------
// Planning

struct SolutionPlan {
  enum class Method { isolate, newton1d, newtonNd };

  struct Component {
    std::vector<std::size_t> equations;  // indices into network.equations
    std::vector<VarKey> outputs;         // matched unknowns, parallel to equations
    Method method = Method::newtonNd;
    ExprPtr isolated;  // for Method::isolate: closed form of the single output
  };

  std::vector<Component> components;
  std::vector<std::size_t> residual_checks;  // unmatched equation indices

  std::string str(const ConstraintNetwork& net) const {
    std::string out;
    for (std::size_t i = 0; i < components.size(); ++i) {
      const Component& c = components[i];
      out += std::to_string(i + 1) + ". ";
      if (c.equations.size() == 1) {
        const char* how = c.method == Method::isolate ? "isolate" : "newton-1d";
        out += std::string(how) + " " + c.outputs[0].str() + " from " +
               net.equations[c.equations[0]].id + "\n";
      } else {
        out += "newton block of " + std::to_string(c.equations.size()) + " equations {";
        for (std::size_t k = 0; k < c.equations.size(); ++k)
          out += (k ? ", " : "") + net.equations[c.equations[k]].id;
        out += "} solving {";
        for (std::size_t k = 0; k < c.outputs.size(); ++k)
          out += (k ? ", " : "") + c.outputs[k].str();
        out += "}\n";
      }
    }
    for (std::size_t e : residual_checks)
      out += "check residual of " + net.equations[e].id + "\n";
    return out;
  }
};

namespace detail {

// Occurrences of identifiers bound to a given variable.
inline std::size_t count_var_occurrences(const Expr& e, const EquationInstance& eq,
                                         const VarKey& key) {
  std::size_t n = 0;
  visit_identifiers(e, [&](const std::string& name) {
    auto it = eq.binding.find(name);
    if (it != eq.binding.end() && it->second == key) ++n;
  });
  return n;
}

// Inverts lhs == rhs for a variable occurring exactly once, provided every
// enclosing operator is invertible: + - * / ^const exp ln sqrt and unary
// minus. Returns nullptr when a non-invertible operator encloses the target.
inline ExprPtr isolate_var(const EquationInstance& eq, const VarKey& key) {
  auto contains = [&eq, &key](const ExprPtr& e) {
    return count_var_occurrences(*e, eq, key) > 0;
  };

  ExprPtr side = eq.lhs;
  ExprPtr other = eq.rhs;
  if (!contains(side)) std::swap(side, other);

  while (true) {
    if (side->kind == Expr::Kind::ident) {
      auto it = eq.binding.find(side->text);
      if (it != eq.binding.end() && it->second == key) return other;
      return nullptr;
    }
    switch (side->kind) {
      case Expr::Kind::unary: {
        if (side->un != UnOp::neg) return nullptr;
        other = Expr::make_unary(UnOp::neg, other);
        side = side->args[0];
        break;
      }
      case Expr::Kind::binary: {
        ExprPtr l = side->args[0];
        ExprPtr r = side->args[1];
        bool in_left = contains(l);
        switch (side->bin) {
          case BinOp::add:
            other = Expr::make_binary(BinOp::sub, other, in_left ? r : l);
            side = in_left ? l : r;
            break;
          case BinOp::sub:
            if (in_left) {
              other = Expr::make_binary(BinOp::add, other, r);
              side = l;
            } else {
              other = Expr::make_binary(BinOp::sub, l, other);
              side = r;
            }
            break;
          case BinOp::mul:
            other = Expr::make_binary(BinOp::div, other, in_left ? r : l);
            side = in_left ? l : r;
            break;
          case BinOp::div:
            if (in_left) {
              other = Expr::make_binary(BinOp::mul, other, r);
              side = l;
            } else {
              other = Expr::make_binary(BinOp::div, l, other);
              side = r;
            }
            break;
          case BinOp::pow: {
            if (!in_left) return nullptr;  // variable in the exponent
            auto c = fold_rational(*r);
            if (!c || *c == Rat(0)) return nullptr;
            other = Expr::make_binary(BinOp::pow, other,
                                      Expr::make_number(1.0 / rat_double(*c)));
            side = l;
            break;
          }
          default:
            return nullptr;
        }
        break;
      }
      case Expr::Kind::call: {
        if (side->args.size() != 1) return nullptr;
        if (side->text == "exp") {
          other = Expr::make_call("ln", {other});
        } else if (side->text == "ln") {
          other = Expr::make_call("exp", {other});
        } else if (side->text == "sqrt") {
          other = Expr::make_binary(BinOp::pow, other, Expr::make_number(2.0));
        } else {
          return nullptr;
        }
        side = side->args[0];
        break;
      }
      default:
        return nullptr;
    }
  }
}

}  // namespace detail

// Orders the network: maximum bipartite matching of equations to the unknowns
// occurring in them (augmenting paths), then strongly connected components of
// the induced dependency graph, topologically sorted. Throws an
// underdetermined SolveError naming every unmatched unknown together with the
// structurally deficient block.
inline SolutionPlan plan(const ConstraintNetwork& net) {
  std::vector<VarKey> unknowns = net.unknowns();
  std::map<VarKey, std::size_t> unknown_index;
  for (std::size_t i = 0; i < unknowns.size(); ++i) unknown_index.emplace(unknowns[i], i);

  const std::size_t n_eq = net.equations.size();
  std::vector<std::vector<std::size_t>> eq_unknowns(n_eq);
  for (std::size_t e = 0; e < n_eq; ++e)
    for (const auto& key : net.equations[e].vars)
      if (auto it = unknown_index.find(key); it != unknown_index.end())
        eq_unknowns[e].push_back(it->second);

  // Kuhn's augmenting-path maximum matching, deterministic by construction.
  constexpr std::size_t kNone = static_cast<std::size_t>(-1);
  std::vector<std::size_t> eq_of_unknown(unknowns.size(), kNone);
  std::vector<std::size_t> unknown_of_eq(n_eq, kNone);
  std::function<bool(std::size_t, std::vector<bool>&)> augment =
      [&](std::size_t e, std::vector<bool>& visited) {
        for (std::size_t u : eq_unknowns[e]) {
          if (visited[u]) continue;
          visited[u] = true;
          if (eq_of_unknown[u] == kNone || augment(eq_of_unknown[u], visited)) {
            eq_of_unknown[u] = e;
            unknown_of_eq[e] = u;
            return true;
          }
        }
        return false;
      };
  for (std::size_t e = 0; e < n_eq; ++e) {
    std::vector<bool> visited(unknowns.size(), false);
    augment(e, visited);
  }

  // Unmatched unknowns: underdetermined. Alternating reachability from the
  // unmatched unknowns delimits the deficient block (the part of a
  // Dulmage-Mendelsohn decomposition with more unknowns than equations).
  std::vector<std::size_t> unmatched;
  for (std::size_t u = 0; u < unknowns.size(); ++u)
    if (eq_of_unknown[u] == kNone) unmatched.push_back(u);
  if (!unmatched.empty()) {
    std::set<std::size_t> block_unknowns(unmatched.begin(), unmatched.end());
    std::set<std::size_t> block_eqs;
    std::vector<std::size_t> frontier = unmatched;
    while (!frontier.empty()) {
      std::size_t u = frontier.back();
      frontier.pop_back();
      for (std::size_t e = 0; e < n_eq; ++e) {
        if (block_eqs.count(e)) continue;
        bool touches = false;
        for (std::size_t v : eq_unknowns[e])
          if (v == u) { touches = true; break; }
        if (!touches) continue;
        block_eqs.insert(e);
        if (unknown_of_eq[e] != kNone && block_unknowns.insert(unknown_of_eq[e]).second)
          frontier.push_back(unknown_of_eq[e]);
      }
    }
    std::vector<std::string> details;
    std::string msg = "underdetermined system: no equation can be assigned to ";
    for (std::size_t i = 0; i < unmatched.size(); ++i) {
      details.push_back(unknowns[unmatched[i]].str());
      msg += (i ? ", " : "") + unknowns[unmatched[i]].str();
    }
    msg += "; deficient block has " + std::to_string(block_eqs.size()) + " equation(s) {";
    std::size_t k = 0;
    for (std::size_t e : block_eqs) msg += (k++ ? ", " : "") + net.equations[e].id;
    msg += "} over " + std::to_string(block_unknowns.size()) + " unknown(s) {";
    k = 0;
    for (std::size_t u : block_unknowns) msg += (k++ ? ", " : "") + unknowns[u].str();
    msg += "}";
    throw SolveError(SolveError::Kind::underdetermined, msg, details);
  }

  SolutionPlan out;
  for (std::size_t e = 0; e < n_eq; ++e)
    if (unknown_of_eq[e] == kNone) out.residual_checks.push_back(e);

  // Dependency graph over matched equations: the solver of input unknown v
  // must run before any equation consuming v.
  std::vector<std::size_t> matched;  // equation indices
  std::map<std::size_t, std::size_t> order_of_eq;
  for (std::size_t e = 0; e < n_eq; ++e)
    if (unknown_of_eq[e] != kNone) {
      order_of_eq[e] = matched.size();
      matched.push_back(e);
    }
  std::vector<std::vector<std::size_t>> succ(matched.size());
  for (std::size_t i = 0; i < matched.size(); ++i) {
    std::size_t e = matched[i];
    for (std::size_t v : eq_unknowns[e]) {
      if (v == unknown_of_eq[e]) continue;
      std::size_t producer = order_of_eq.at(eq_of_unknown[v]);
      succ[producer].push_back(i);
    }
  }

  // Tarjan SCC; the emitted component order is reverse-topological.
  std::vector<int> index(matched.size(), -1), low(matched.size(), 0);
  std::vector<bool> on_stack(matched.size(), false);
  std::vector<std::size_t> stack;
  std::vector<std::vector<std::size_t>> sccs;
  int counter = 0;
  std::function<void(std::size_t)> strongconnect = [&](std::size_t v) {
    index[v] = low[v] = counter++;
    stack.push_back(v);
    on_stack[v] = true;
    for (std::size_t w : succ[v]) {
      if (index[w] == -1) {
        strongconnect(w);
        low[v] = std::min(low[v], low[w]);
      } else if (on_stack[w]) {
        low[v] = std::min(low[v], index[w]);
      }
    }
    if (low[v] == index[v]) {
      std::vector<std::size_t> scc;
      while (true) {
        std::size_t w = stack.back();
        stack.pop_back();
        on_stack[w] = false;
        scc.push_back(w);
        if (w == v) break;
      }
      std::sort(scc.begin(), scc.end());
      sccs.push_back(std::move(scc));
    }
  };
  for (std::size_t v = 0; v < matched.size(); ++v)
    if (index[v] == -1) strongconnect(v);
  std::reverse(sccs.begin(), sccs.end());

  for (const auto& scc : sccs) {
    SolutionPlan::Component comp;
    for (std::size_t i : scc) {
      comp.equations.push_back(matched[i]);
      comp.outputs.push_back(unknowns[unknown_of_eq[matched[i]]]);
    }
    if (comp.equations.size() == 1) {
      const EquationInstance& eq = net.equations[comp.equations[0]];
      const VarKey& target = comp.outputs[0];
      std::size_t occurrences = detail::count_var_occurrences(*eq.lhs, eq, target) +
                                detail::count_var_occurrences(*eq.rhs, eq, target);
      if (occurrences == 1) comp.isolated = detail::isolate_var(eq, target);
      comp.method =
          comp.isolated ? SolutionPlan::Method::isolate : SolutionPlan::Method::newton1d;
    } else {
      comp.method = SolutionPlan::Method::newtonNd;
    }
    out.components.push_back(std::move(comp));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Execution

struct SolveOptions {
  double tolerance = 1e-9;   // relative residual |f| / (1 + |lhs| + |rhs|)
  int max_iterations = 100;  // Newton iterations per component
  double min_damping = 9.5367431640625e-07;  // 2^-20
  // Initial guesses, highest precedence first; falls back to the declared
  // attribute default and then to 1.0.
  std::map<VarKey, double> guess_by_var;
  std::map<std::string, double> guess_by_attr;
};

struct SolveReport {
  std::map<VarKey, double> values;  // knowns and solved unknowns
  double max_relative_residual = 0;
  std::vector<std::string> component_log;  // one line per executed component
};

namespace detail {

struct ResidualEval {
  const EquationInstance* eq;
  const std::map<VarKey, double>* values;

  // (relative residual denominator is 1 + |lhs| + |rhs|)
  std::pair<double, double> operator()() const {
    EvalScope scope;
    scope.ident = [this](const std::string& name) -> std::optional<Value> {
      auto it = eq->binding.find(name);
      if (it == eq->binding.end()) return std::nullopt;
      auto vt = values->find(it->second);
      if (vt == values->end()) return Value();  // declared but unset
      return Value(vt->second);
    };
    try {
      double l = eval_expr(*eq->lhs, scope).number();
      double r = eval_expr(*eq->rhs, scope).number();
      return {l - r, 1.0 + std::fabs(l) + std::fabs(r)};
    } catch (const EvalError&) {
      return {std::nan(""), 1.0};
    }
  }
};

inline double initial_guess(const ConstraintNetwork& net, const SolveOptions& opts,
                            const VarKey& key) {
  if (auto it = opts.guess_by_var.find(key); it != opts.guess_by_var.end()) return it->second;
  if (auto it = opts.guess_by_attr.find(key.attr); it != opts.guess_by_attr.end())
    return it->second;
  auto vt = net.variables.find(key);
  if (vt != net.variables.end() && vt->second.initial) return *vt->second.initial;
  return 1.0;
}

// Gaussian elimination with partial pivoting; false when singular.
inline bool solve_linear(std::vector<std::vector<double>>& a, std::vector<double>& b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
    if (!(std::fabs(a[piv][col]) > 1e-300)) return false;
    std::swap(a[col], a[piv]);
    std::swap(b[col], b[piv]);
    for (std::size_t r = col + 1; r < n; ++r) {
      double f = a[r][col] / a[col][col];
      if (f == 0) continue;
      for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
      b[r] -= f * b[col];
    }
  }
  for (std::size_t col = n; col-- > 0;) {
    double s = b[col];
    for (std::size_t c = col + 1; c < n; ++c) s -= a[col][c] * b[c];
    b[col] = s / a[col][col];
  }
  return true;
}

}  // namespace detail

// Executes the plan. Singleton components run their closed form when one was
// derived, else damped 1-D Newton; blocks run damped multivariate Newton with
// a forward-difference Jacobian. After all components every equation,
// including the unmatched residual checks, must sit within tolerance.
inline SolveReport solve(const SolutionPlan& plan, const ConstraintNetwork& net,
                         const SolveOptions& opts = {}) {
  SolveReport report;
  for (const auto& [key, var] : net.variables)
    if (var.value) report.values.emplace(key, *var.value);

  auto non_convergence = [](const std::string& what) {
    return SolveError(SolveError::Kind::non_convergence, what);
  };

  for (const auto& comp : plan.components) {
    if (comp.method == SolutionPlan::Method::isolate) {
      const EquationInstance& eq = net.equations[comp.equations[0]];
      EvalScope scope;
      scope.ident = [&eq, &report](const std::string& name) -> std::optional<Value> {
        auto it = eq.binding.find(name);
        if (it == eq.binding.end()) return std::nullopt;
        auto vt = report.values.find(it->second);
        if (vt == report.values.end()) return Value();
        return Value(vt->second);
      };
      bool isolated_ok = false;
      try {
        double v = eval_expr(*comp.isolated, scope).number();
        if (std::isfinite(v)) {
          report.values[comp.outputs[0]] = v;
          isolated_ok = true;
          report.component_log.push_back("isolate " + comp.outputs[0].str() + " = " +
                                         format_number(v) + " from " + eq.id);
        }
      } catch (const EvalError&) {
        isolated_ok = false;
      }
      if (isolated_ok) continue;
      // closed form failed to evaluate (e.g. division by zero); fall through
      // to Newton on the same component
    }

    if (comp.equations.size() == 1) {
      const EquationInstance& eq = net.equations[comp.equations[0]];
      const VarKey& out = comp.outputs[0];
      double x = detail::initial_guess(net, opts, out);
      report.values[out] = x;
      detail::ResidualEval residual{&eq, &report.values};

      auto f_at = [&](double v) {
        report.values[out] = v;
        return residual();
      };
      bool converged = false;
      auto [f, scale] = f_at(x);
      if (!std::isfinite(f))
        throw non_convergence("newton on " + eq.id + ": residual undefined at initial guess " +
                              format_number(x));
      for (int it = 0; it < opts.max_iterations; ++it) {
        if (std::fabs(f) / scale <= opts.tolerance) {
          converged = true;
          break;
        }
        double h = 1.4901161193847656e-08 * std::max(std::fabs(x), 1.0);
        auto [fh, sh] = f_at(x + h);
        double d = (fh - f) / h;
        report.values[out] = x;
        if (!std::isfinite(d) || d == 0)
          throw non_convergence("newton on " + eq.id + ": zero or undefined derivative at " +
                                format_number(x));
        double step = -f / d;
        double lambda = 1.0;
        bool accepted = false;
        while (lambda >= opts.min_damping) {
          auto [ft, st] = f_at(x + lambda * step);
          if (std::isfinite(ft) && std::fabs(ft) < std::fabs(f)) {
            x = x + lambda * step;
            f = ft;
            scale = st;
            accepted = true;
            break;
          }
          lambda /= 2;
        }
        if (!accepted)
          throw non_convergence("newton on " + eq.id + ": no progress at " + format_number(x) +
                                " (damping exhausted)");
      }
      report.values[out] = x;
      if (!converged && std::fabs(f) / scale > opts.tolerance)
        throw non_convergence("newton on " + eq.id + ": not converged after " +
                              std::to_string(opts.max_iterations) + " iterations");
      report.component_log.push_back("newton-1d " + out.str() + " = " + format_number(x) +
                                     " from " + eq.id);
      continue;
    }

    // simultaneous block
    const std::size_t n = comp.equations.size();
    std::vector<detail::ResidualEval> residuals;
    residuals.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
      residuals.push_back(detail::ResidualEval{&net.equations[comp.equations[i]], &report.values});
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = detail::initial_guess(net, opts, comp.outputs[i]);
      report.values[comp.outputs[i]] = x[i];
    }
    auto eval_all = [&](const std::vector<double>& v, std::vector<double>& f,
                        std::vector<double>& scale) {
      for (std::size_t i = 0; i < n; ++i) report.values[comp.outputs[i]] = v[i];
      bool finite = true;
      for (std::size_t i = 0; i < n; ++i) {
        auto [fi, si] = residuals[i]();
        f[i] = fi;
        scale[i] = si;
        finite = finite && std::isfinite(fi);
      }
      return finite;
    };
    auto merit = [&](const std::vector<double>& f, const std::vector<double>& scale) {
      double m = 0;
      for (std::size_t i = 0; i < n; ++i) m += (f[i] / scale[i]) * (f[i] / scale[i]);
      return 0.5 * m;
    };
    auto block_id = [&]() {
      std::string s;
      for (std::size_t i = 0; i < n; ++i)
        s += (i ? ", " : "") + net.equations[comp.equations[i]].id;
      return s;
    };

    std::vector<double> f(n), scale(n), ft(n), st(n);
    if (!eval_all(x, f, scale))
      throw non_convergence("newton block {" + block_id() + "}: residual undefined at initial guess");
    bool converged = false;
    for (int it = 0; it < opts.max_iterations && !converged; ++it) {
      double worst = 0;
      for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::fabs(f[i]) / scale[i]);
      if (worst <= opts.tolerance) {
        converged = true;
        break;
      }
      // forward-difference Jacobian
      std::vector<std::vector<double>> jac(n, std::vector<double>(n, 0.0));
      std::vector<double> xt = x;
      for (std::size_t j = 0; j < n; ++j) {
        double h = 1.4901161193847656e-08 * std::max(std::fabs(x[j]), 1.0);
        xt[j] = x[j] + h;
        if (!eval_all(xt, ft, st))
          throw non_convergence("newton block {" + block_id() + "}: residual undefined near iterate");
        for (std::size_t i = 0; i < n; ++i) jac[i][j] = (ft[i] - f[i]) / h;
        xt[j] = x[j];
      }
      std::vector<double> rhs(n);
      for (std::size_t i = 0; i < n; ++i) rhs[i] = -f[i];
      if (!detail::solve_linear(jac, rhs))
        throw non_convergence("newton block {" + block_id() + "}: singular Jacobian");
      double m0 = merit(f, scale);
      double lambda = 1.0;
      bool accepted = false;
      while (lambda >= opts.min_damping) {
        for (std::size_t i = 0; i < n; ++i) xt[i] = x[i] + lambda * rhs[i];
        if (eval_all(xt, ft, st) && merit(ft, st) < m0) {
          x = xt;
          f = ft;
          scale = st;
          accepted = true;
          break;
        }
        lambda /= 2;
      }
      if (!accepted)
        throw non_convergence("newton block {" + block_id() + "}: no progress (damping exhausted)");
    }
    {
      double worst = 0;
      for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::fabs(f[i]) / scale[i]);
      if (worst <= opts.tolerance) converged = true;
    }
    if (!converged)
      throw non_convergence("newton block {" + block_id() + "}: not converged after " +
                            std::to_string(opts.max_iterations) + " iterations");
    for (std::size_t i = 0; i < n; ++i) report.values[comp.outputs[i]] = x[i];
    report.component_log.push_back("newton block {" + block_id() + "} solved");
  }

  // Final sweep: every equation, including residual checks, within tolerance.
  for (std::size_t e = 0; e < net.equations.size(); ++e) {
    detail::ResidualEval residual{&net.equations[e], &report.values};
    auto [f, scale] = residual();
    double rel = std::fabs(f) / scale;
    if (!std::isfinite(f) || rel > opts.tolerance) {
      bool is_check = std::find(plan.residual_checks.begin(), plan.residual_checks.end(), e) !=
                      plan.residual_checks.end();
      std::string id = net.equations[e].id;
      if (is_check)
        throw SolveError(SolveError::Kind::residual_violation,
                         "inconsistent or overdetermined system: residual check failed for " + id +
                             " \"" + net.equations[e].source + "\" (relative residual " +
                             format_number(rel) + ")",
                         {id});
      throw SolveError(SolveError::Kind::residual_violation,
                       "residual above tolerance for " + id + " (relative residual " +
                           format_number(rel) + ")",
                       {id});
    }
    report.max_relative_residual = std::max(report.max_relative_residual, rel);
  }
  return report;
}

inline SolveReport plan_and_solve(const ConstraintNetwork& net, const SolveOptions& opts = {}) {
  return solve(plan(net), net, opts);
}

// d(output)/d(input) by central finite difference with step 1e-6*max(|x|,1):
// two full re-solves of the network at the perturbed input.
inline double sensitivity(const ConstraintNetwork& net, const VarKey& output, const VarKey& input,
                          const SolveOptions& opts = {}) {
  auto in_it = net.variables.find(input);
  if (in_it == net.variables.end() || !in_it->second.value)
    throw SolveError(SolveError::Kind::bad_network,
                     "sensitivity input " + input.str() + " must be a known variable");
  auto out_it = net.variables.find(output);
  if (out_it == net.variables.end() || out_it->second.value)
    throw SolveError(SolveError::Kind::bad_network,
                     "sensitivity output " + output.str() + " must be an unknown");
  double x0 = *in_it->second.value;
  double h = 1e-6 * std::max(std::fabs(x0), 1.0);

  auto solve_at = [&](double x) {
    ConstraintNetwork perturbed = net;
    perturbed.variables.at(input).value = x;
    SolveReport r = solve(plan(perturbed), perturbed, opts);
    return r.values.at(output);
  };
  double above = solve_at(x0 + h);
  double below = solve_at(x0 - h);
  return (above - below) / (2 * h);
}

// ---------------------------------------------------------------------------
// Graph validation (multiplicities and unset-but-referenced attributes)

struct ValidationReport {
  struct Item {
    enum class Kind { multiplicity, unknown_attr };
    Kind kind = Kind::multiplicity;
    bool violation = true;  // false: informational (the solver can determine it)
    std::string message;
  };
  std::vector<Item> items;

  bool valid() const {
    return std::none_of(items.begin(), items.end(), [](const Item& i) { return i.violation; });
  }
  std::string str() const {
    if (items.empty()) return "valid: no findings\n";
    std::string out;
    for (const auto& i : items)
      out += std::string(i.violation ? "violation: " : "note: ") + i.message + "\n";
    return out;
  }
};

// Lists every multiplicity violation and every unset attribute referenced by
// some equation. Unset attributes the solution path can determine are notes,
// not violations.
inline ValidationReport validate_graph(const DesignGraph& graph) {
  const Schema& schema = graph.schema();
  ValidationReport report;

  for (const auto& [id, node] : graph.nodes()) {
    for (const ClassDef* cls : schema.chain(node.cls)) {
      for (const auto& assoc : cls->associations) {
        std::size_t degree = graph.out_degree(id, assoc.name);
        if (degree < assoc.min || (assoc.max && degree > *assoc.max)) {
          std::string bound = assoc.max ? std::to_string(*assoc.max) : "*";
          report.items.push_back(
              {ValidationReport::Item::Kind::multiplicity, true,
               "node n" + std::to_string(id) + " (" + node.cls + "): association '" + assoc.name +
                   "' has " + std::to_string(degree) + " edge(s), allowed [" +
                   std::to_string(assoc.min) + ", " + bound + "]"});
        }
      }
    }
  }

  ConstraintNetwork net = collect_network(graph);
  std::vector<VarKey> unknowns = net.unknowns();
  if (!unknowns.empty()) {
    std::set<std::string> unsolvable;
    try {
      plan(net);
    } catch (const SolveError& e) {
      if (e.kind() != SolveError::Kind::underdetermined) throw;
      unsolvable.insert(e.details().begin(), e.details().end());
    }
    for (const auto& key : unknowns) {
      bool bad = unsolvable.count(key.str()) != 0;
      report.items.push_back({ValidationReport::Item::Kind::unknown_attr, bad,
                              "attribute " + key.str() +
                                  (bad ? " is referenced by equations but cannot be determined"
                                       : " is unset; the solution path can determine it")});
    }
  }
  return report;
}

}  // namespace designc
