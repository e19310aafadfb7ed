#pragma once

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "designc/expr.hpp"

// Vocabulary of a design language: the class model (classes with typed
// attributes, equations, and associations) that design objects are
// instantiated from.
//
// Document format (JSON):
//   {"classes": [
//     {"name": "...", "parent": "...",
//      "attributes": [{"name": "...", "kind": "number|string|boolean",
//                      "dimension": {"M": "1", "L": "-2", ...}, "default": ...}],
//      "equations": ["expr == expr", ...],
//      "associations": [{"name": "...", "target": "...", "min": 0, "max": 1 | "*",
//                        "bindings": [["srcAttr", "dstAttr"], ...]}]}]}
//
// Dimension entries are rational strings (or integers) per SI base dimension
// symbol M L T I Th N J; omitted entries are zero.

namespace designc {

struct AttributeDef {
  std::string name;
  ValKind kind = ValKind::number;
  Dimension dim;        // numbers only
  Value default_value;  // unset if no default
};

struct BindingDef {
  std::string source_attr;
  std::string target_attr;
};

struct AssociationDef {
  std::string name;
  std::string target;
  std::size_t min = 0;
  std::optional<std::size_t> max;  // nullopt = unbounded
  std::vector<BindingDef> bindings;
};

struct EquationDef {
  std::string source;  // original text, used in diagnostics and equation ids
  ExprPtr lhs;
  ExprPtr rhs;
  Dimension dim;  // common dimension of both sides
};

struct ClassDef {
  std::string name;
  std::optional<std::string> parent;
  std::vector<AttributeDef> attributes;
  std::vector<EquationDef> equations;
  std::vector<AssociationDef> associations;
};

class Schema {
public:
  Schema() = default;

  static Schema load(const std::string& json_text);

  const std::map<std::string, ClassDef>& classes() const { return classes_; }

  const ClassDef* find(const std::string& name) const {
    auto it = classes_.find(name);
    return it == classes_.end() ? nullptr : &it->second;
  }

  const ClassDef& at(const std::string& name) const {
    const ClassDef* c = find(name);
    if (!c) throw Error("unknown class '" + name + "'");
    return *c;
  }

  // True iff super is reachable from sub by zero or more parent links.
  bool is_subtype(const std::string& sub, const std::string& super) const {
    at(super);
    const ClassDef* c = &at(sub);
    while (true) {
      if (c->name == super) return true;
      if (!c->parent) return false;
      c = &at(*c->parent);
    }
  }

  // Inheritance chain, root ancestor first, the class itself last.
  std::vector<const ClassDef*> chain(const std::string& name) const {
    std::vector<const ClassDef*> out;
    const ClassDef* c = &at(name);
    while (true) {
      out.push_back(c);
      if (!c->parent) break;
      c = &at(*c->parent);
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

  // Attribute visible on the class (own or inherited); nullptr if none.
  const AttributeDef* find_attribute(const std::string& cls, const std::string& attr) const {
    for (const ClassDef* c : chain(cls))
      for (const auto& a : c->attributes)
        if (a.name == attr) return &a;
    return nullptr;
  }

  const AssociationDef* find_association(const std::string& cls, const std::string& assoc) const {
    for (const ClassDef* c : chain(cls))
      for (const auto& a : c->associations)
        if (a.name == assoc) return &a;
    return nullptr;
  }

  std::vector<std::string> class_names() const {
    std::vector<std::string> names;
    names.reserve(classes_.size());
    for (const auto& [name, def] : classes_) names.push_back(name);
    return names;
  }

  // Static-checker scope over a class's visible attributes.
  CheckScope attr_scope(const std::string& cls) const {
    CheckScope scope;
    scope.ident = [this, cls](const std::string& name) -> std::optional<StaticType> {
      const AttributeDef* a = find_attribute(cls, name);
      if (!a) return std::nullopt;
      return StaticType{a->kind, a->dim};
    };
    return scope;
  }

  // Scope with query primitives typed against this schema; bare identifiers
  // resolve through `idents` (e.g. bundle parameters).
  CheckScope query_scope(
      const std::function<std::optional<StaticType>(const std::string&)>& idents = {}) const {
    CheckScope scope;
    scope.ident = idents;
    scope.has_class = [this](const std::string& cls) { return find(cls) != nullptr; };
    scope.class_attr = [this](const std::string& cls,
                              const std::string& attr) -> std::optional<StaticType> {
      const AttributeDef* a = find_attribute(cls, attr);
      if (!a) return std::nullopt;
      return StaticType{a->kind, a->dim};
    };
    return scope;
  }

private:
  std::map<std::string, ClassDef> classes_;
};

inline bool is_subtype(const Schema& schema, const std::string& sub, const std::string& super) {
  return schema.is_subtype(sub, super);
}

namespace detail {

inline std::optional<Dimension> parse_dimension_object(const nlohmann::json& j, Diagnostics& diag,
                                                       const std::string& where) {
  Dimension dim;
  if (!j.is_object()) {
    diag.add(where + ": dimension must be an object of exponents");
    return std::nullopt;
  }
  bool ok = true;
  for (auto it = j.begin(); it != j.end(); ++it) {
    auto axis = dimension_symbol_axis(it.key());
    if (!axis) {
      diag.add(where + ": unknown dimension symbol '" + it.key() + "' (use M L T I Th N J)");
      ok = false;
      continue;
    }
    std::optional<Rat> r;
    if (it.value().is_string()) {
      r = parse_rational(it.value().get<std::string>());
    } else if (it.value().is_number_integer()) {
      r = Rat(it.value().get<long long>());
    }
    if (!r) {
      diag.add(where + ": exponent for '" + it.key() + "' must be a rational string or integer");
      ok = false;
      continue;
    }
    dim[*axis] = *r;
  }
  if (!ok) return std::nullopt;
  return dim;
}

inline std::optional<Value> parse_literal(const nlohmann::json& j) {
  if (j.is_number()) return Value(j.get<double>());
  if (j.is_string()) return Value(j.get<std::string>());
  if (j.is_boolean()) return Value(j.get<bool>());
  return std::nullopt;
}

}  // namespace detail

inline Schema Schema::load(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("vocabulary: ") + e.what(), e.byte);
  }

  Diagnostics diag;
  Schema schema;

  if (!doc.is_object() || !doc.contains("classes") || !doc["classes"].is_array()) {
    diag.add("vocabulary: top-level key \"classes\" (array) is required");
    diag.throw_if_any();
  }

  // First pass: raw class shells, so later checks see forward references.
  for (const auto& jc : doc["classes"]) {
    if (!jc.is_object() || !jc.contains("name") || !jc["name"].is_string()) {
      diag.add("vocabulary: every class needs a string \"name\"");
      continue;
    }
    ClassDef cls;
    cls.name = jc["name"].get<std::string>();
    const std::string where = "class '" + cls.name + "'";
    if (jc.contains("parent")) {
      if (!jc["parent"].is_string()) {
        diag.add(where + ": parent must be a class name");
      } else {
        cls.parent = jc["parent"].get<std::string>();
      }
    }
    for (const auto& ja : jc.value("attributes", nlohmann::json::array())) {
      AttributeDef attr;
      if (!ja.is_object() || !ja.contains("name") || !ja["name"].is_string()) {
        diag.add(where + ": every attribute needs a string \"name\"");
        continue;
      }
      attr.name = ja["name"].get<std::string>();
      const std::string awhere = where + ", attribute '" + attr.name + "'";
      std::string kind = ja.value("kind", "number");
      if (kind == "number") attr.kind = ValKind::number;
      else if (kind == "string") attr.kind = ValKind::string;
      else if (kind == "boolean") attr.kind = ValKind::boolean;
      else {
        diag.add(awhere + ": kind must be number, string, or boolean");
        continue;
      }
      if (ja.contains("dimension")) {
        if (attr.kind != ValKind::number) {
          diag.add(awhere + ": only number attributes carry a dimension");
        } else if (auto d = detail::parse_dimension_object(ja["dimension"], diag, awhere)) {
          attr.dim = *d;
        }
      }
      if (ja.contains("default")) {
        auto v = detail::parse_literal(ja["default"]);
        if (!v) {
          diag.add(awhere + ": default must be a number, string, or boolean literal");
        } else if (v->kind() != attr.kind) {
          diag.add(awhere + ": default " + v->repr() + " does not match kind " +
                   val_kind_name(attr.kind));
        } else {
          attr.default_value = *v;
        }
      }
      cls.attributes.push_back(std::move(attr));
    }
    for (const auto& ja : jc.value("associations", nlohmann::json::array())) {
      AssociationDef assoc;
      if (!ja.is_object() || !ja.contains("name") || !ja.contains("target") ||
          !ja["name"].is_string() || !ja["target"].is_string()) {
        diag.add(where + ": every association needs string \"name\" and \"target\"");
        continue;
      }
      assoc.name = ja["name"].get<std::string>();
      assoc.target = ja["target"].get<std::string>();
      const std::string swhere = where + ", association '" + assoc.name + "'";
      if (ja.contains("min")) {
        if (!ja["min"].is_number_unsigned())
          diag.add(swhere + ": min must be a non-negative integer");
        else
          assoc.min = ja["min"].get<std::size_t>();
      }
      if (ja.contains("max")) {
        if (ja["max"].is_string() && ja["max"].get<std::string>() == "*") {
          assoc.max = std::nullopt;
        } else if (ja["max"].is_number_unsigned()) {
          assoc.max = ja["max"].get<std::size_t>();
        } else {
          diag.add(swhere + ": max must be a non-negative integer or \"*\"");
        }
      } else {
        assoc.max = std::nullopt;
      }
      if (assoc.max && *assoc.max < assoc.min)
        diag.add(swhere + ": min " + std::to_string(assoc.min) + " exceeds max " +
                 std::to_string(*assoc.max));
      for (const auto& jb : ja.value("bindings", nlohmann::json::array())) {
        if (!jb.is_array() || jb.size() != 2 || !jb[0].is_string() || !jb[1].is_string()) {
          diag.add(swhere + ": bindings must be [sourceAttr, targetAttr] pairs");
          continue;
        }
        assoc.bindings.push_back({jb[0].get<std::string>(), jb[1].get<std::string>()});
      }
      cls.associations.push_back(std::move(assoc));
    }
    // equations parsed in the second pass, once attribute visibility is known
    if (schema.classes_.count(cls.name)) {
      diag.add("duplicate class name '" + cls.name + "'");
      continue;
    }
    schema.classes_.emplace(cls.name, std::move(cls));
  }

  // Structural checks: parents resolve, inheritance is acyclic.
  for (const auto& [name, cls] : schema.classes_) {
    if (cls.parent && !schema.find(*cls.parent))
      diag.add("class '" + name + "': unresolved parent '" + *cls.parent + "'");
  }
  std::set<std::string> reported_cycles;
  for (const auto& [name, cls] : schema.classes_) {
    std::set<std::string> seen;
    const ClassDef* c = &cls;
    bool cycle = false;
    while (c->parent) {
      if (!seen.insert(c->name).second) {
        cycle = true;
        break;
      }
      const ClassDef* p = schema.find(*c->parent);
      if (!p) break;  // unresolved parent, already diagnosed
      c = p;
    }
    if (!cycle) continue;
    // c is on the cycle; walk it once to name exactly its members
    std::set<std::string> members;
    const ClassDef* w = c;
    do {
      members.insert(w->name);
      w = schema.find(*w->parent);
    } while (w && w->name != c->name);
    std::string joined;
    for (const auto& m : members) joined += (joined.empty() ? "" : ", ") + m;
    if (reported_cycles.insert(joined).second)
      diag.add("inheritance cycle involving: " + joined);
  }
  // A broken chain makes visibility lookups unreliable; report and stop here.
  diag.throw_if_any();

  // Duplicate names within a class, and shadowing of inherited names.
  // Redeclaring an inherited attribute is an error, not an override.
  for (const auto& [name, cls] : schema.classes_) {
    std::set<std::string> own_attrs, own_assocs;
    for (const auto& a : cls.attributes)
      if (!own_attrs.insert(a.name).second)
        diag.add("class '" + name + "': duplicate attribute '" + a.name + "'");
    for (const auto& a : cls.associations)
      if (!own_assocs.insert(a.name).second)
        diag.add("class '" + name + "': duplicate association '" + a.name + "'");
    if (!cls.parent || !schema.find(*cls.parent)) continue;
    for (const auto& a : cls.attributes)
      if (schema.find_attribute(*cls.parent, a.name))
        diag.add("class '" + name + "': attribute '" + a.name + "' shadows the declaration inherited via '" +
                 *cls.parent + "'");
    for (const auto& a : cls.associations)
      if (schema.find_association(*cls.parent, a.name))
        diag.add("class '" + name + "': association '" + a.name + "' shadows the declaration inherited via '" +
                 *cls.parent + "'");
  }

  // Associations: targets resolve, bindings couple attributes of equal dimension.
  for (auto& [name, cls] : schema.classes_) {
    for (const auto& assoc : cls.associations) {
      const std::string swhere = "class '" + name + "', association '" + assoc.name + "'";
      if (!schema.find(assoc.target)) {
        diag.add(swhere + ": unresolved target '" + assoc.target + "'");
        continue;
      }
      for (const auto& b : assoc.bindings) {
        const AttributeDef* src = schema.find_attribute(name, b.source_attr);
        const AttributeDef* dst = schema.find_attribute(assoc.target, b.target_attr);
        if (!src) diag.add(swhere + ": binding source attribute '" + b.source_attr + "' not found");
        if (!dst)
          diag.add(swhere + ": binding target attribute '" + b.target_attr + "' not found on '" +
                   assoc.target + "'");
        if (src && dst) {
          if (src->kind != ValKind::number || dst->kind != ValKind::number)
            diag.add(swhere + ": bindings couple number attributes only");
          else if (src->dim != dst->dim)
            diag.add(swhere + ": binding dimension mismatch, " + b.source_attr + " is " +
                     src->dim.str() + " but " + b.target_attr + " is " + dst->dim.str());
        }
      }
    }
  }

  // Equations: parse, check visibility, require dimensional homogeneity.
  for (const auto& jc : doc["classes"]) {
    if (!jc.is_object() || !jc.contains("name") || !jc["name"].is_string()) continue;
    const std::string name = jc["name"].get<std::string>();
    auto it = schema.classes_.find(name);
    if (it == schema.classes_.end()) continue;
    ClassDef& cls = it->second;
    std::size_t index = 0;
    for (const auto& je : jc.value("equations", nlohmann::json::array())) {
      const std::string ewhere =
          "class '" + name + "', equation " + std::to_string(index);
      ++index;
      if (!je.is_string()) {
        diag.add(ewhere + ": equations are strings of the form \"expr == expr\"");
        continue;
      }
      EquationDef eq;
      eq.source = je.get<std::string>();
      try {
        auto [lhs, rhs] = parse_equation(eq.source);
        eq.lhs = lhs;
        eq.rhs = rhs;
        CheckScope scope = schema.attr_scope(name);
        StaticType lt = check_expr(*eq.lhs, scope);
        StaticType rt = check_expr(*eq.rhs, scope);
        if (lt.kind != ValKind::number || rt.kind != ValKind::number) {
          diag.add(ewhere + " \"" + eq.source + "\": both sides must be numeric");
          continue;
        }
        if (lt.dim != rt.dim) {
          diag.add(ewhere + " \"" + eq.source + "\": dimension mismatch, left side is " +
                   lt.dim.str() + " but right side is " + rt.dim.str());
          continue;
        }
        eq.dim = lt.dim;
      } catch (const Error& e) {
        diag.add(ewhere + " \"" + eq.source + "\": " + e.what());
        continue;
      }
      cls.equations.push_back(std::move(eq));
    }
  }

  diag.throw_if_any();
  return schema;
}

inline Schema load_schema(const std::string& json_text) { return Schema::load(json_text); }

}  // namespace designc
