#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "designc/production.hpp"

// A language bundle is the digital blueprint of one design process: a
// directory holding the vocabulary, the rules, the production system, the
// chain specs, and optional parameters.
//
//   bundle/
//     vocabulary.json      required
//     production.json      required
//     params.json          optional: {"params": [{"name": "massFlow",
//                            "value": 0.5, "dimension": {"M": "1", "T": "-1"}}]}
//     rules/*.json         one rule per file
//     chains/*.json        chain specs; helper scripts live alongside and are
//                          reached via the {bundle} placeholder

namespace designc {

struct LanguageBundle {
  std::filesystem::path dir;
  std::shared_ptr<const Schema> schema;
  std::map<std::string, Rule> rules;
  std::map<std::string, ChainSpec> chains;
  Production production;
  std::map<std::string, Value> params;
  ParamTypes param_types;
};

namespace detail {

inline std::string read_text_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot read file: " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::vector<std::filesystem::path> sorted_json_files(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".json")
      out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace detail

// Loads and cross-checks a whole bundle. Every unresolved reference and every
// per-file issue is reported, not just the first.
inline LanguageBundle load_bundle(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw LoadError({"bundle directory not found: " + dir.string()});

  LanguageBundle bundle;
  bundle.dir = dir;
  Diagnostics diag;

  // vocabulary: everything else checks against it, so failures stop the load
  const fs::path vocab_path = dir / "vocabulary.json";
  try {
    bundle.schema = std::make_shared<Schema>(Schema::load(detail::read_text_file(vocab_path)));
  } catch (const LoadError& e) {
    std::vector<std::string> issues;
    for (const auto& issue : e.issues()) issues.push_back("vocabulary.json: " + issue);
    throw LoadError(std::move(issues));
  } catch (const Error& e) {
    throw LoadError({"vocabulary.json: " + std::string(e.what())});
  }

  // parameters
  const fs::path params_path = dir / "params.json";
  if (fs::exists(params_path)) {
    try {
      nlohmann::json doc = nlohmann::json::parse(detail::read_text_file(params_path));
      for (const auto& jp : doc.value("params", nlohmann::json::array())) {
        if (!jp.is_object() || !jp.contains("name") || !jp["name"].is_string() ||
            !jp.contains("value")) {
          diag.add("params.json: every parameter needs \"name\" and \"value\"");
          continue;
        }
        std::string name = jp["name"].get<std::string>();
        auto v = detail::parse_literal(jp["value"]);
        if (!v) {
          diag.add("params.json: parameter '" + name + "': value must be a literal");
          continue;
        }
        StaticType type{*v->kind(), {}};
        if (jp.contains("dimension")) {
          if (!v->is_number()) {
            diag.add("params.json: parameter '" + name + "': only numbers carry a dimension");
          } else if (auto d = detail::parse_dimension_object(jp["dimension"], diag,
                                                             "parameter '" + name + "'")) {
            type.dim = *d;
          }
        }
        if (bundle.params.count(name)) {
          diag.add("params.json: duplicate parameter '" + name + "'");
          continue;
        }
        bundle.params.emplace(name, *v);
        bundle.param_types.emplace(name, type);
      }
    } catch (const nlohmann::json::parse_error& e) {
      diag.add("params.json: " + std::string(e.what()));
    } catch (const Error& e) {
      diag.add("params.json: " + std::string(e.what()));
    }
  }

  // rules
  for (const auto& path : detail::sorted_json_files(dir / "rules")) {
    try {
      Rule rule = load_rule(detail::read_text_file(path), *bundle.schema, bundle.param_types);
      if (!bundle.rules.emplace(rule.name, std::move(rule)).second)
        diag.add(path.filename().string() + ": duplicate rule name");
    } catch (const LoadError& e) {
      for (const auto& issue : e.issues()) diag.add(path.filename().string() + ": " + issue);
    } catch (const Error& e) {
      diag.add(path.filename().string() + ": " + e.what());
    }
  }

  // chains
  for (const auto& path : detail::sorted_json_files(dir / "chains")) {
    try {
      ChainSpec spec =
          load_chain_spec(detail::read_text_file(path), *bundle.schema, path.parent_path());
      if (!bundle.chains.emplace(spec.name, std::move(spec)).second)
        diag.add(path.filename().string() + ": duplicate chain name");
    } catch (const LoadError& e) {
      for (const auto& issue : e.issues()) diag.add(path.filename().string() + ": " + issue);
    } catch (const Error& e) {
      diag.add(path.filename().string() + ": " + e.what());
    }
  }

  // production
  const fs::path production_path = dir / "production.json";
  std::set<std::string> rule_names, chain_names;
  for (const auto& [name, rule] : bundle.rules) rule_names.insert(name);
  for (const auto& [name, chain] : bundle.chains) chain_names.insert(name);
  try {
    bundle.production = load_production(detail::read_text_file(production_path), *bundle.schema,
                                        &rule_names, &chain_names, &bundle.param_types);
  } catch (const LoadError& e) {
    for (const auto& issue : e.issues()) diag.add("production.json: " + issue);
  } catch (const Error& e) {
    diag.add("production.json: " + std::string(e.what()));
  }

  diag.throw_if_any();
  return bundle;
}

// Applies --params overrides: every name must be declared in the bundle and
// the value kind must match.
inline std::map<std::string, Value> merge_params(const LanguageBundle& bundle,
                                                 const std::map<std::string, Value>& overrides) {
  Diagnostics diag;
  std::map<std::string, Value> merged = bundle.params;
  for (const auto& [name, v] : overrides) {
    auto it = bundle.param_types.find(name);
    if (it == bundle.param_types.end()) {
      diag.add("parameter override '" + name + "' is not declared in the bundle");
      continue;
    }
    if (v.kind() != it->second.kind) {
      diag.add("parameter override '" + name + "': expected " +
               val_kind_name(it->second.kind) + ", got " + v.repr());
      continue;
    }
    merged[name] = v;
  }
  diag.throw_if_any();
  return merged;
}

inline std::map<std::string, Value> parse_param_overrides(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("params override: ") + e.what(), e.byte);
  }
  if (!doc.is_object()) throw LoadError({"params override: expected a JSON object"});
  std::map<std::string, Value> out;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    auto v = detail::parse_literal(it.value());
    if (!v) throw LoadError({"params override '" + it.key() + "': value must be a literal"});
    out.emplace(it.key(), *v);
  }
  return out;
}

struct BundleRun {
  DesignGraph graph;
  Trace trace;
  ValidationReport validation;
};

// Executes the bundle's main activity on a fresh graph.
inline BundleRun run_bundle(const LanguageBundle& bundle,
                            const std::map<std::string, Value>& param_overrides = {},
                            const ExecOptions& options = {}) {
  ExecutionContext ctx;
  ctx.rules = &bundle.rules;
  ctx.chains = &bundle.chains;
  ctx.production = &bundle.production;
  ctx.params = merge_params(bundle, param_overrides);
  ctx.options = options;

  BundleRun run{DesignGraph(bundle.schema), {}, {}};
  ProductionRun result = run_production(run.graph, ctx);
  run.trace = std::move(result.trace);
  run.validation = std::move(result.validation);
  return run;
}

}  // namespace designc
