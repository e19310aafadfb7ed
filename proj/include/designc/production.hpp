#pragma once

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "designc/chain.hpp"
#include "designc/network.hpp"
#include "designc/rules.hpp"

// The production system: the executable rule sequence. Activities hold rule
// calls, hierarchical sub-activities, chain calls, decisions, and bounded
// loops over the shared design graph. A built-in Solve step flushes the
// constraint network explicitly; the solver also runs before every decision
// or loop predicate so predicates see solved values.
//
// Production document (JSON):
//   {"main": "Main",
//    "activities": [{"name": "Main", "steps": [
//       {"rule": "Axiom"},
//       {"rule": "Grow", "mode": "forall", "required": false},
//       {"activity": "Sub"},
//       {"chain": "pressureLoss"},
//       {"if": "count(SCRSystem) == 0", "then": [...], "else": [...]},
//       {"while": "count(Seat) < 3", "body": [...], "maxIter": 100},
//       {"solve": true}]}]}

namespace designc {

struct Step;
using StepList = std::vector<Step>;

struct RuleCallStep {
  std::string rule;
  std::optional<Rule::Mode> mode;  // overrides the rule's own mode
  std::optional<bool> required;
};
struct SubActivityStep {
  std::string activity;
};
struct ChainCallStep {
  std::string chain;
};
struct DecisionStep {
  std::string predicate_src;
  ExprPtr predicate;
  StepList then_steps;
  StepList else_steps;
};
struct LoopStep {
  std::string predicate_src;
  ExprPtr predicate;
  StepList body;
  long long max_iter = 10000;
};
struct SolveStep {};

struct Step {
  std::variant<RuleCallStep, SubActivityStep, ChainCallStep, DecisionStep, LoopStep, SolveStep> v;
};

struct Activity {
  std::string name;
  StepList steps;
};

struct Production {
  std::map<std::string, Activity> activities;
  std::string main;

  const Activity& at(const std::string& name) const {
    auto it = activities.find(name);
    if (it == activities.end()) throw Error("unknown activity '" + name + "'");
    return it->second;
  }
};

// ---------------------------------------------------------------------------
// Trace

struct TraceEntry {
  nlohmann::json data;      // canonical payload, serialized to the trace file
  double elapsed_ms = 0.0;  // excluded from canonical output
};

struct Trace {
  std::vector<TraceEntry> entries;

  // Line-delimited JSON, deterministic: identical runs produce identical bytes.
  std::string to_jsonl() const {
    std::string out;
    for (const auto& e : entries) out += e.data.dump() + "\n";
    return out;
  }
};

// ---------------------------------------------------------------------------
// Execution context

struct ExecOptions {
  long long max_steps = 100000;  // global step budget
  SolveOptions solve;
};

struct ExecutionContext {
  const std::map<std::string, Rule>* rules = nullptr;
  const std::map<std::string, ChainSpec>* chains = nullptr;
  const Production* production = nullptr;
  std::map<std::string, Value> params;
  ExecOptions options;
};

// Query primitives over the design graph; class names match subtype-inclusively.
class GraphQueryHost : public QueryHost {
public:
  explicit GraphQueryHost(const DesignGraph& graph) : graph_(graph) {}

  double count_instances(const std::string& cls) const override {
    return static_cast<double>(instances(cls).size());
  }

  // Filter semantics match rule predicates: a node whose where-clause cannot
  // be evaluated (unset attribute) simply does not qualify.
  bool exists_instance(const std::string& cls, const ExprPtr& where,
                       const EvalScope& outer) const override {
    for (const Node* node : instances(cls)) {
      if (!where) return true;
      EvalScope scope = detail::node_scope(graph_, node->id, &outer);
      try {
        Value v = eval_expr(*where, scope);
        if (v.is_bool() && v.boolean()) return true;
      } catch (const EvalError&) {
      }
    }
    return false;
  }

  Value unique_attr(const std::string& cls, const std::string& attr) const override {
    std::vector<const Node*> nodes = instances(cls);
    if (nodes.size() != 1)
      throw EvalError("attr(" + cls + ", " + attr + "): expected exactly one instance, found " +
                      std::to_string(nodes.size()));
    auto v = graph_.attr_value(nodes[0]->id, attr);
    if (!v) throw EvalError("attr(" + cls + ", " + attr + "): no such attribute");
    if (!v->is_set()) throw EvalError("attr(" + cls + ", " + attr + "): attribute is unset");
    return *v;
  }

private:
  std::vector<const Node*> instances(const std::string& cls) const {
    try {
      return graph_.instances_of(cls);
    } catch (const Error& e) {
      throw EvalError(e.what());
    }
  }
  const DesignGraph& graph_;
};

// ---------------------------------------------------------------------------
// Loading

namespace detail {

inline StepList load_steps(const nlohmann::json& js, Diagnostics& diag, const std::string& where);

inline std::optional<Step> load_step(const nlohmann::json& j, Diagnostics& diag,
                                     const std::string& where) {
  if (!j.is_object()) {
    diag.add(where + ": steps must be objects");
    return std::nullopt;
  }
  int discriminators = static_cast<int>(j.contains("rule")) + j.contains("activity") +
                       j.contains("chain") + j.contains("if") + j.contains("while") +
                       j.contains("solve");
  if (discriminators != 1) {
    diag.add(where + ": a step must have exactly one of rule/activity/chain/if/while/solve");
    return std::nullopt;
  }

  Step step;
  if (j.contains("rule")) {
    RuleCallStep s;
    if (!j["rule"].is_string()) {
      diag.add(where + ": rule must be a rule name");
      return std::nullopt;
    }
    s.rule = j["rule"].get<std::string>();
    if (j.contains("mode")) {
      std::string mode = j["mode"].is_string() ? j["mode"].get<std::string>() : "";
      if (mode == "first") s.mode = Rule::Mode::first;
      else if (mode == "forall") s.mode = Rule::Mode::forall;
      else diag.add(where + ": mode must be \"first\" or \"forall\"");
    }
    if (j.contains("required")) {
      if (!j["required"].is_boolean()) diag.add(where + ": required must be a boolean");
      else s.required = j["required"].get<bool>();
    }
    step.v = std::move(s);
  } else if (j.contains("activity")) {
    if (!j["activity"].is_string()) {
      diag.add(where + ": activity must be an activity name");
      return std::nullopt;
    }
    step.v = SubActivityStep{j["activity"].get<std::string>()};
  } else if (j.contains("chain")) {
    if (!j["chain"].is_string()) {
      diag.add(where + ": chain must be a chain name");
      return std::nullopt;
    }
    step.v = ChainCallStep{j["chain"].get<std::string>()};
  } else if (j.contains("if")) {
    DecisionStep s;
    if (!j["if"].is_string()) {
      diag.add(where + ": if must be a predicate string");
      return std::nullopt;
    }
    s.predicate_src = j["if"].get<std::string>();
    s.then_steps = load_steps(j.value("then", nlohmann::json::array()), diag, where + " then");
    s.else_steps = load_steps(j.value("else", nlohmann::json::array()), diag, where + " else");
    step.v = std::move(s);
  } else if (j.contains("while")) {
    LoopStep s;
    if (!j["while"].is_string()) {
      diag.add(where + ": while must be a predicate string");
      return std::nullopt;
    }
    s.predicate_src = j["while"].get<std::string>();
    s.body = load_steps(j.value("body", nlohmann::json::array()), diag, where + " body");
    if (j.contains("maxIter")) {
      if (!j["maxIter"].is_number_integer() || j["maxIter"].get<long long>() <= 0)
        diag.add(where + ": maxIter must be a positive integer");
      else
        s.max_iter = j["maxIter"].get<long long>();
    }
    step.v = std::move(s);
  } else {
    step.v = SolveStep{};
  }
  return step;
}

inline StepList load_steps(const nlohmann::json& js, Diagnostics& diag, const std::string& where) {
  StepList out;
  if (!js.is_array()) {
    diag.add(where + ": steps must be an array");
    return out;
  }
  std::size_t i = 0;
  for (const auto& j : js) {
    auto s = load_step(j, diag, where + " step " + std::to_string(i++));
    if (s) out.push_back(std::move(*s));
  }
  return out;
}

struct ProductionChecker {
  const Schema& schema;
  const std::set<std::string>* rule_names;
  const std::set<std::string>* chain_names;
  const ParamTypes* params;
  Diagnostics& diag;
  Production& production;

  void check_pred(ExprPtr& slot, const std::string& src, const std::string& where) {
    try {
      ExprPtr e = parse_expression(src);
      CheckScope scope = schema.query_scope(
          [this](const std::string& name) -> std::optional<StaticType> {
            if (!params) return std::nullopt;
            auto it = params->find(name);
            if (it == params->end()) return std::nullopt;
            return it->second;
          });
      if (check_expr(*e, scope).kind != ValKind::boolean)
        diag.add(where + ": predicate \"" + src + "\" must be boolean");
      slot = e;
    } catch (const Error& e) {
      diag.add(where + ": predicate \"" + src + "\": " + e.what());
    }
  }

  void check_steps(StepList& steps, const std::string& where) {
    std::size_t i = 0;
    for (Step& step : steps) {
      std::string swhere = where + " step " + std::to_string(i++);
      if (auto* s = std::get_if<RuleCallStep>(&step.v)) {
        if (rule_names && !rule_names->count(s->rule))
          diag.add(swhere + ": unknown rule '" + s->rule + "'");
      } else if (auto* s = std::get_if<SubActivityStep>(&step.v)) {
        if (!production.activities.count(s->activity))
          diag.add(swhere + ": unknown activity '" + s->activity + "'");
      } else if (auto* s = std::get_if<ChainCallStep>(&step.v)) {
        if (chain_names && !chain_names->count(s->chain))
          diag.add(swhere + ": unknown chain '" + s->chain + "'");
      } else if (auto* s = std::get_if<DecisionStep>(&step.v)) {
        check_pred(s->predicate, s->predicate_src, swhere);
        check_steps(s->then_steps, swhere + " then");
        check_steps(s->else_steps, swhere + " else");
      } else if (auto* s = std::get_if<LoopStep>(&step.v)) {
        check_pred(s->predicate, s->predicate_src, swhere);
        check_steps(s->body, swhere + " body");
      }
    }
  }

  // no recursive activities: the call graph must be acyclic
  void check_acyclic() {
    enum class State { unseen, active, done };
    std::map<std::string, State> state;
    std::function<void(const std::string&, std::vector<std::string>&)> visit =
        [&](const std::string& name, std::vector<std::string>& path) {
          auto it = production.activities.find(name);
          if (it == production.activities.end()) return;
          State& st = state[name];
          if (st == State::done) return;
          if (st == State::active) {
            std::string cycle;
            for (const auto& p : path) cycle += p + " -> ";
            diag.add("recursive activities are not allowed: " + cycle + name);
            return;
          }
          st = State::active;
          path.push_back(name);
          visit_steps(it->second.steps, path, visit);
          path.pop_back();
          state[name] = State::done;
        };
    std::vector<std::string> path;
    for (const auto& [name, act] : production.activities) visit(name, path);
  }

  static void visit_steps(
      const StepList& steps, std::vector<std::string>& path,
      const std::function<void(const std::string&, std::vector<std::string>&)>& visit) {
    for (const Step& step : steps) {
      if (const auto* s = std::get_if<SubActivityStep>(&step.v)) {
        visit(s->activity, path);
      } else if (const auto* s = std::get_if<DecisionStep>(&step.v)) {
        visit_steps(s->then_steps, path, visit);
        visit_steps(s->else_steps, path, visit);
      } else if (const auto* s = std::get_if<LoopStep>(&step.v)) {
        visit_steps(s->body, path, visit);
      }
    }
  }
};

}  // namespace detail

// Parses and statically validates the production document. Rule and chain
// name sets, when provided, are used to resolve references; all unresolved
// references are reported together.
inline Production load_production(const std::string& json_text, const Schema& schema,
                                  const std::set<std::string>* rule_names = nullptr,
                                  const std::set<std::string>* chain_names = nullptr,
                                  const ParamTypes* params = nullptr) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("production: ") + e.what(), e.byte);
  }
  Diagnostics diag;
  Production production;
  if (!doc.is_object() || !doc.contains("activities") || !doc["activities"].is_array())
    diag.add("production: top-level key \"activities\" (array) is required");
  if (!doc.contains("main") || !doc["main"].is_string())
    diag.add("production: top-level key \"main\" (activity name) is required");
  diag.throw_if_any();
  production.main = doc["main"].get<std::string>();

  for (const auto& ja : doc["activities"]) {
    if (!ja.is_object() || !ja.contains("name") || !ja["name"].is_string()) {
      diag.add("production: every activity needs a string \"name\"");
      continue;
    }
    Activity act;
    act.name = ja["name"].get<std::string>();
    act.steps = detail::load_steps(ja.value("steps", nlohmann::json::array()), diag,
                                   "activity '" + act.name + "'");
    if (!production.activities.emplace(act.name, std::move(act)).second)
      diag.add("production: duplicate activity '" + act.name + "'");
  }
  if (!production.activities.count(production.main))
    diag.add("production: main activity '" + production.main + "' is not defined");

  detail::ProductionChecker checker{schema, rule_names, chain_names, params, diag, production};
  for (auto& [name, act] : production.activities)
    checker.check_steps(act.steps, "activity '" + name + "'");
  checker.check_acyclic();

  diag.throw_if_any();
  return production;
}

// ---------------------------------------------------------------------------
// Execution

namespace detail {

struct Executor {
  DesignGraph& graph;
  ExecutionContext& ctx;
  Trace& trace;
  long long budget;

  EvalScope param_scope(const QueryHost* host) const {
    EvalScope scope;
    const auto& params = ctx.params;
    scope.ident = [&params](const std::string& name) -> std::optional<Value> {
      auto it = params.find(name);
      if (it == params.end()) return std::nullopt;
      return it->second;
    };
    scope.queries = host;
    return scope;
  }

  void charge(const std::string& what) {
    if (--budget < 0)
      throw StepError("step budget exceeded (max-steps " + std::to_string(ctx.options.max_steps) +
                      ") at " + what);
  }

  static nlohmann::json delta_json(const Delta& d) {
    return nlohmann::json{{"created_nodes", d.created_nodes.size()},
                          {"deleted_nodes", d.deleted_nodes.size()},
                          {"created_edges", d.created_edges.size()},
                          {"deleted_edges", d.deleted_edges.size()},
                          {"updated_attrs", d.updated_attrs.size()}};
  }

  void push(nlohmann::json data, std::chrono::steady_clock::time_point started) {
    TraceEntry entry;
    entry.data = std::move(data);
    entry.elapsed_ms = std::chrono::duration<double, std::milli>(
                           std::chrono::steady_clock::now() - started)
                           .count();
    trace.entries.push_back(std::move(entry));
  }

  // Flush the constraint network into the graph. When `strict` is false an
  // underdetermined network is tolerated (values stay unset); inconsistency
  // and non-convergence always fail the step.
  std::string solve_flush(bool strict) {
    ConstraintNetwork net = collect_network(graph);
    if (net.equations.empty() && net.unknowns().empty()) return "empty network";
    try {
      SolutionPlan plan_ = plan(net);
      SolveReport report = solve(plan_, net, ctx.options.solve);
      std::size_t written = 0;
      for (const auto& key : net.unknowns()) {
        graph.set_attr(key.node, key.attr, AttrValue(report.values.at(key)));
        ++written;
      }
      return "solved " + std::to_string(written) + " unknown(s), " +
             std::to_string(plan_.components.size()) + " component(s), " +
             std::to_string(plan_.residual_checks.size()) + " residual check(s)";
    } catch (const SolveError& e) {
      if (!strict && e.kind() == SolveError::Kind::underdetermined)
        return std::string("deferred: ") + e.what();
      throw StepError(std::string("solve: ") + e.what());
    }
  }

  bool eval_predicate(const ExprPtr& predicate, const std::string& src) {
    std::string solve_note = solve_flush(false);
    GraphQueryHost host(graph);
    EvalScope scope = param_scope(&host);
    try {
      Value v = eval_expr(*predicate, scope);
      if (!v.is_bool()) throw StepError("predicate \"" + src + "\" did not yield a boolean");
      return v.boolean();
    } catch (const EvalError& e) {
      throw StepError("predicate \"" + src + "\": " + e.what());
    }
  }

  void run_steps(const StepList& steps) {
    for (const Step& step : steps) run_step(step);
  }

  void run_step(const Step& step) {
    auto started = std::chrono::steady_clock::now();

    if (const auto* s = std::get_if<RuleCallStep>(&step.v)) {
      charge("rule:" + s->rule);
      auto it = ctx.rules->find(s->rule);
      if (it == ctx.rules->end()) throw StepError("unknown rule '" + s->rule + "'");
      const Rule& rule = it->second;
      Rule::Mode mode = s->mode.value_or(rule.mode);
      bool required = s->required.value_or(rule.required);
      GraphQueryHost host(graph);
      EvalScope scope = param_scope(&host);
      RuleRun run;
      try {
        run = run_rule(rule, graph, mode, &scope);
      } catch (const Error& e) {
        throw StepError("rule '" + s->rule + "': " + e.what());
      }
      if (required && run.matches_found == 0)
        throw StepError("required rule '" + s->rule + "' found no match");
      push({{"step", "rule:" + s->rule},
            {"mode", mode == Rule::Mode::forall ? "forall" : "first"},
            {"matches", run.matches_found},
            {"applied", run.applied},
            {"skipped_stale", run.skipped_stale},
            {"delta", delta_json(run.delta)}},
           started);
      return;
    }

    if (const auto* s = std::get_if<SubActivityStep>(&step.v)) {
      charge("activity:" + s->activity);
      push({{"step", "activity:" + s->activity}}, started);
      run_steps(ctx.production->at(s->activity).steps);
      return;
    }

    if (const auto* s = std::get_if<ChainCallStep>(&step.v)) {
      charge("chain:" + s->chain);
      auto it = ctx.chains->find(s->chain);
      if (it == ctx.chains->end()) throw StepError("unknown chain '" + s->chain + "'");
      GraphQueryHost host(graph);
      EvalScope scope = param_scope(&host);
      ChainResult result;
      try {
        result = run_chain(it->second, graph, &scope);
      } catch (const ChainError& e) {
        throw StepError(e.what());
      }
      nlohmann::json outputs = nlohmann::json::object();
      for (const auto& [path, v] : result.parsed)
        outputs[path] = v.is_number() ? nlohmann::json(v.number())
                        : v.is_bool() ? nlohmann::json(v.boolean())
                                      : nlohmann::json(v.str());
      push({{"step", "chain:" + s->chain},
            {"exit_code", result.exit_code},
            {"writebacks", result.writebacks},
            {"outputs", outputs}},
           started);
      return;
    }

    if (const auto* s = std::get_if<DecisionStep>(&step.v)) {
      charge("decision");
      bool taken = eval_predicate(s->predicate, s->predicate_src);
      push({{"step", "decision"}, {"predicate", s->predicate_src}, {"result", taken},
            {"branch", taken ? "then" : "else"}},
           started);
      run_steps(taken ? s->then_steps : s->else_steps);
      return;
    }

    if (const auto* s = std::get_if<LoopStep>(&step.v)) {
      long long iteration = 0;
      while (true) {
        auto loop_started = std::chrono::steady_clock::now();
        charge("loop");
        bool again = eval_predicate(s->predicate, s->predicate_src);
        push({{"step", "loop"}, {"predicate", s->predicate_src}, {"iteration", iteration},
              {"result", again}},
             loop_started);
        if (!again) break;
        if (iteration >= s->max_iter)
          throw StepError("loop bound exceeded: predicate \"" + s->predicate_src +
                          "\" still true after maxIter " + std::to_string(s->max_iter) +
                          " iterations");
        run_steps(s->body);
        ++iteration;
      }
      return;
    }

    // SolveStep
    charge("solve");
    std::string note = solve_flush(true);
    push({{"step", "solve"}, {"result", note}}, started);
  }
};

}  // namespace detail

// Executes one activity over the graph. Steps run in order; decisions evaluate
// their predicate against the solved state of the current graph and run
// exactly one branch; loops re-evaluate before each iteration and error out
// at maxIter.
inline Trace execute_activity(const Activity& activity, DesignGraph& graph,
                              ExecutionContext& ctx) {
  Trace trace;
  detail::Executor exec{graph, ctx, trace, ctx.options.max_steps};
  exec.run_steps(activity.steps);
  return trace;
}

// Decision predicate evaluation against a graph snapshot (no solver flush).
inline bool eval_decision(const std::string& predicate, const DesignGraph& graph,
                          const std::map<std::string, Value>& params = {}) {
  ExprPtr e = parse_expression(predicate);
  {
    CheckScope scope = graph.schema().query_scope(
        [&params](const std::string& name) -> std::optional<StaticType> {
          auto it = params.find(name);
          if (it == params.end()) return std::nullopt;
          auto k = it->second.kind();
          if (!k) return std::nullopt;
          return StaticType{*k, {}};
        });
    if (check_expr(*e, scope).kind != ValKind::boolean)
      throw Error("predicate \"" + predicate + "\" is not boolean");
  }
  GraphQueryHost host(graph);
  EvalScope scope;
  scope.ident = [&params](const std::string& name) -> std::optional<Value> {
    auto it = params.find(name);
    if (it == params.end()) return std::nullopt;
    return it->second;
  };
  scope.queries = &host;
  return eval_expr(*e, scope).boolean();
}

struct ProductionRun {
  Trace trace;
  ValidationReport validation;
};

// Runs the production's main activity, then validates the final graph.
// Validation findings do not throw; the caller distinguishes a failed
// validation from step errors via the report.
inline ProductionRun run_production(DesignGraph& graph, ExecutionContext& ctx) {
  ProductionRun run;
  run.trace = execute_activity(ctx.production->at(ctx.production->main), graph, ctx);
  run.validation = validate_graph(graph);
  nlohmann::json entry{{"step", "validate"},
                       {"valid", run.validation.valid()},
                       {"findings", run.validation.items.size()}};
  run.trace.entries.push_back(TraceEntry{entry, 0.0});
  return run;
}

}  // namespace designc
