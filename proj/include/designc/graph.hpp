#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "designc/schema.hpp"

// The central design graph: the single instance model a production run grows.
// Typed nodes carry attribute values, typed edges follow the schema's
// associations. Exports are canonical so identical graphs serialize to
// identical bytes.

namespace designc {

using NodeId = std::uint64_t;

struct Node {
  NodeId id = 0;
  std::string cls;
  std::map<std::string, Value> attrs;  // only set attributes are present
};

struct Edge {
  NodeId source = 0;
  std::string assoc;
  NodeId target = 0;
  auto operator<=>(const Edge&) const = default;
};

// Attribute value handed to instantiate/set_attr. Numeric inputs may carry a
// dimension, which is checked against the declaration; untagged numbers adopt
// the declared dimension.
struct AttrValue {
  Value value;
  std::optional<Dimension> dim;

  AttrValue(double v) : value(v) {}
  AttrValue(int v) : value(static_cast<double>(v)) {}
  AttrValue(double v, Dimension d) : value(v), dim(std::move(d)) {}
  AttrValue(const char* s) : value(s) {}
  AttrValue(std::string s) : value(std::move(s)) {}
  AttrValue(bool b) : value(b) {}
  AttrValue(Value v) : value(std::move(v)) {}
};

// Plain serializable form of a graph, decoupled from any schema. The canonical
// writers below operate on this.
struct GraphDoc {
  struct NodeRec {
    NodeId id = 0;
    std::string cls;
    std::vector<std::pair<std::string, Value>> attrs;  // sorted by name
  };
  std::vector<NodeRec> nodes;  // sorted by id
  std::vector<Edge> edges;     // sorted by (source, assoc, target)
};

class DesignGraph {
public:
  explicit DesignGraph(std::shared_ptr<const Schema> schema) : schema_(std::move(schema)) {
    if (!schema_) throw GraphError("design graph requires a schema");
  }

  const Schema& schema() const { return *schema_; }
  const std::shared_ptr<const Schema>& schema_ptr() const { return schema_; }

  const std::map<NodeId, Node>& nodes() const { return nodes_; }
  const std::set<Edge>& edges() const { return edges_; }

  const Node* find_node(NodeId id) const {
    auto it = nodes_.find(id);
    return it == nodes_.end() ? nullptr : &it->second;
  }
  const Node& node_at(NodeId id) const {
    const Node* n = find_node(id);
    if (!n) throw GraphError("unknown node id " + std::to_string(id));
    return *n;
  }

  // Creates a node of the class. Unset attributes take declared defaults.
  // Node ids are assigned monotonically and never reused.
  NodeId instantiate(const std::string& cls,
                     const std::map<std::string, AttrValue>& attrs = {}) {
    const ClassDef* def = schema_->find(cls);
    if (!def) throw GraphError("instantiate: unknown class '" + cls + "'");
    Node node;
    node.id = next_id_++;
    node.cls = cls;
    for (const ClassDef* c : schema_->chain(cls))
      for (const auto& a : c->attributes)
        if (a.default_value.is_set()) node.attrs[a.name] = a.default_value;
    NodeId id = node.id;
    nodes_.emplace(id, std::move(node));
    try {
      for (const auto& [name, v] : attrs) set_attr(id, name, v);
    } catch (...) {
      erase_node(id);
      --next_id_;  // nothing observed this id
      throw;
    }
    return id;
  }

  // Sets one attribute, checking declaration, kind, and dimension.
  void set_attr(NodeId id, const std::string& attr, const AttrValue& v) {
    auto it = nodes_.find(id);
    if (it == nodes_.end()) throw GraphError("set_attr: unknown node id " + std::to_string(id));
    Node& node = it->second;
    const AttributeDef* def = schema_->find_attribute(node.cls, attr);
    if (!def)
      throw GraphError("class '" + node.cls + "' has no attribute '" + attr + "'");
    if (!v.value.is_set()) throw GraphError("cannot assign an unset value to '" + attr + "'");
    if (v.value.kind() != def->kind)
      throw GraphError("attribute '" + attr + "' of '" + node.cls + "' is " +
                       val_kind_name(def->kind) + ", got " + v.value.repr());
    if (def->kind == ValKind::number) {
      if (v.dim && *v.dim != def->dim)
        throw GraphError("attribute '" + attr + "' of '" + node.cls + "' has dimension " +
                         def->dim.str() + ", got " + v.dim->str());
      if (!std::isfinite(v.value.number()))
        throw GraphError("attribute '" + attr + "': value must be finite");
    }
    node.attrs[attr] = v.value;
  }

  std::optional<Value> attr_value(NodeId id, const std::string& attr) const {
    const Node& node = node_at(id);
    if (!schema_->find_attribute(node.cls, attr)) return std::nullopt;
    auto it = node.attrs.find(attr);
    return it == node.attrs.end() ? Value() : it->second;
  }

  // Adds a typed edge. Association bindings become equality constraints when
  // the constraint network is collected; nothing is copied eagerly.
  Edge connect(NodeId src, const std::string& assoc, NodeId dst) {
    const Node* s = find_node(src);
    const Node* d = find_node(dst);
    if (!s) throw GraphError("connect: unknown source node " + std::to_string(src));
    if (!d) throw GraphError("connect: unknown target node " + std::to_string(dst));
    const AssociationDef* def = schema_->find_association(s->cls, assoc);
    if (!def)
      throw GraphError("class '" + s->cls + "' declares no association '" + assoc + "'");
    if (!schema_->is_subtype(d->cls, def->target))
      throw GraphError("association '" + assoc + "' targets '" + def->target + "', node " +
                       std::to_string(dst) + " is a '" + d->cls + "'");
    Edge e{src, assoc, dst};
    if (!edges_.insert(e).second)
      throw GraphError("duplicate edge " + std::to_string(src) + " -" + assoc + "-> " +
                       std::to_string(dst));
    return e;
  }

  bool has_edge(const Edge& e) const { return edges_.count(e) != 0; }

  void erase_edge(const Edge& e) {
    if (!edges_.erase(e))
      throw GraphError("no such edge " + std::to_string(e.source) + " -" + e.assoc + "-> " +
                       std::to_string(e.target));
  }

  // Removes a node and every incident edge; returns the removed edges.
  std::vector<Edge> erase_node(NodeId id) {
    if (!nodes_.erase(id)) throw GraphError("erase: unknown node id " + std::to_string(id));
    std::vector<Edge> removed;
    for (auto it = edges_.begin(); it != edges_.end();) {
      if (it->source == id || it->target == id) {
        removed.push_back(*it);
        it = edges_.erase(it);
      } else {
        ++it;
      }
    }
    return removed;
  }

  // Nodes whose class is the given class or a subclass of it, in id order.
  std::vector<const Node*> instances_of(const std::string& cls) const {
    schema_->at(cls);
    std::vector<const Node*> out;
    for (const auto& [id, node] : nodes_)
      if (schema_->is_subtype(node.cls, cls)) out.push_back(&node);
    return out;
  }

  std::size_t out_degree(NodeId id, const std::string& assoc) const {
    std::size_t n = 0;
    for (auto it = edges_.lower_bound(Edge{id, "", 0});
         it != edges_.end() && it->source == id; ++it)
      if (it->assoc == assoc) ++n;
    return n;
  }

  NodeId peek_next_id() const { return next_id_; }

  GraphDoc to_doc() const {
    GraphDoc doc;
    for (const auto& [id, node] : nodes_) {
      GraphDoc::NodeRec rec;
      rec.id = id;
      rec.cls = node.cls;
      for (const auto& [name, v] : node.attrs) rec.attrs.emplace_back(name, v);
      doc.nodes.push_back(std::move(rec));
    }
    doc.edges.assign(edges_.begin(), edges_.end());
    return doc;
  }

  // Rebuilds a graph from a document, validating every node and edge against
  // the schema. Ids are preserved; the id counter resumes above the maximum.
  static DesignGraph from_doc(std::shared_ptr<const Schema> schema, const GraphDoc& doc) {
    DesignGraph g(std::move(schema));
    for (const auto& rec : doc.nodes) {
      const ClassDef* def = g.schema_->find(rec.cls);
      if (!def) throw GraphError("import: unknown class '" + rec.cls + "'");
      if (rec.id == 0) throw GraphError("import: node ids must be positive");
      Node node;
      node.id = rec.id;
      node.cls = rec.cls;
      if (!g.nodes_.emplace(rec.id, std::move(node)).second)
        throw GraphError("import: duplicate node id " + std::to_string(rec.id));
      if (rec.id >= g.next_id_) g.next_id_ = rec.id + 1;
      for (const auto& [name, v] : rec.attrs) g.set_attr(rec.id, name, AttrValue(v));
    }
    for (const auto& e : doc.edges) g.connect(e.source, e.assoc, e.target);
    return g;
  }

private:
  std::shared_ptr<const Schema> schema_;
  std::map<NodeId, Node> nodes_;
  std::set<Edge> edges_;
  NodeId next_id_ = 1;
};

namespace detail {

// Evaluation scope over one node: bare identifiers resolve to the node's
// attributes first, then fall back to the outer scope (e.g. parameters).
inline EvalScope node_scope(const DesignGraph& graph, NodeId id, const EvalScope* outer) {
  EvalScope scope;
  scope.ident = [&graph, id, outer](const std::string& name) -> std::optional<Value> {
    if (auto v = graph.attr_value(id, name)) return v;
    if (outer && outer->ident) return outer->ident(name);
    return std::nullopt;
  };
  if (outer) scope.queries = outer->queries;
  return scope;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Canonical serialization

namespace detail {

inline std::string json_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size() + 2);
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof buf, "\\u%04x", c);
          out += buf;
        } else {
          out += c;
        }
    }
  }
  return out;
}

inline std::string json_value(const Value& v) {
  if (v.is_number()) return format_number(v.number());
  if (v.is_bool()) return v.boolean() ? "true" : "false";
  if (v.is_string()) return "\"" + json_escape(v.str()) + "\"";
  return "null";
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

// Canonical JSON export: nodes sorted by id, attribute keys sorted, edges
// sorted by (source, assoc, target), numbers at 17 significant digits.
// Re-exporting an unchanged graph is byte-identical.
inline std::string write_json(const GraphDoc& doc) {
  std::string out = "{\n  \"nodes\": [";
  for (std::size_t i = 0; i < doc.nodes.size(); ++i) {
    const auto& n = doc.nodes[i];
    out += i ? ",\n    " : "\n    ";
    out += "{\"id\": " + std::to_string(n.id) + ", \"class\": \"" + detail::json_escape(n.cls) +
           "\", \"attrs\": {";
    for (std::size_t k = 0; k < n.attrs.size(); ++k) {
      if (k) out += ", ";
      out += "\"" + detail::json_escape(n.attrs[k].first) + "\": " +
             detail::json_value(n.attrs[k].second);
    }
    out += "}}";
  }
  out += doc.nodes.empty() ? "],\n" : "\n  ],\n";
  out += "  \"edges\": [";
  for (std::size_t i = 0; i < doc.edges.size(); ++i) {
    const auto& e = doc.edges[i];
    out += i ? ",\n    " : "\n    ";
    out += "{\"source\": " + std::to_string(e.source) + ", \"assoc\": \"" +
           detail::json_escape(e.assoc) + "\", \"target\": " + std::to_string(e.target) + "}";
  }
  out += doc.edges.empty() ? "]\n}\n" : "\n  ]\n}\n";
  return out;
}

inline std::string write_dot(const GraphDoc& doc) {
  std::string out = "digraph design {\n";
  for (const auto& n : doc.nodes) {
    std::string label = n.cls + " #" + std::to_string(n.id);
    out += "  n" + std::to_string(n.id) + " [label=\"" + label + "\"];\n";
  }
  for (const auto& e : doc.edges)
    out += "  n" + std::to_string(e.source) + " -> n" + std::to_string(e.target) + " [label=\"" +
           e.assoc + "\"];\n";
  out += "}\n";
  return out;
}

inline std::string write_graphml(const GraphDoc& doc) {
  std::set<std::string> attr_names;
  for (const auto& n : doc.nodes)
    for (const auto& [name, v] : n.attrs) attr_names.insert(name);

  std::string out =
      "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      "<graphml xmlns=\"http://graphml.graphdrawing.org/xmlns\">\n"
      "  <key id=\"class\" for=\"node\" attr.name=\"class\" attr.type=\"string\"/>\n"
      "  <key id=\"assoc\" for=\"edge\" attr.name=\"assoc\" attr.type=\"string\"/>\n";
  for (const auto& name : attr_names)
    out += "  <key id=\"a_" + detail::xml_escape(name) + "\" for=\"node\" attr.name=\"" +
           detail::xml_escape(name) + "\" attr.type=\"string\"/>\n";
  out += "  <graph id=\"design\" edgedefault=\"directed\">\n";
  for (const auto& n : doc.nodes) {
    out += "    <node id=\"n" + std::to_string(n.id) + "\">";
    out += "<data key=\"class\">" + detail::xml_escape(n.cls) + "</data>";
    for (const auto& [name, v] : n.attrs)
      out += "<data key=\"a_" + detail::xml_escape(name) + "\">" +
             detail::xml_escape(v.is_string() ? v.str() : v.repr()) + "</data>";
    out += "</node>\n";
  }
  for (const auto& e : doc.edges)
    out += "    <edge source=\"n" + std::to_string(e.source) + "\" target=\"n" +
           std::to_string(e.target) + "\"><data key=\"assoc\">" + detail::xml_escape(e.assoc) +
           "</data></edge>\n";
  out += "  </graph>\n</graphml>\n";
  return out;
}

enum class ExportFormat { json, dot, graphml };

inline std::string export_graph(const DesignGraph& graph, ExportFormat format) {
  GraphDoc doc = graph.to_doc();
  switch (format) {
    case ExportFormat::json: return write_json(doc);
    case ExportFormat::dot: return write_dot(doc);
    case ExportFormat::graphml: return write_graphml(doc);
  }
  throw Error("unknown export format");
}

inline GraphDoc parse_graph_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("graph document: ") + e.what(), e.byte);
  }
  GraphDoc doc;
  if (!j.is_object()) throw GraphError("graph document: expected a JSON object");
  for (const auto& jn : j.value("nodes", nlohmann::json::array())) {
    GraphDoc::NodeRec rec;
    if (!jn.contains("id") || !jn["id"].is_number_unsigned() || !jn.contains("class"))
      throw GraphError("graph document: every node needs an unsigned \"id\" and a \"class\"");
    rec.id = jn["id"].get<NodeId>();
    rec.cls = jn["class"].get<std::string>();
    const nlohmann::json attrs = jn.value("attrs", nlohmann::json::object());
    for (auto it = attrs.begin(); it != attrs.end(); ++it) {
      auto v = detail::parse_literal(it.value());
      if (!v)
        throw GraphError("graph document: node " + std::to_string(rec.id) + " attribute '" +
                         it.key() + "' must be a literal");
      rec.attrs.emplace_back(it.key(), *v);
    }
    std::sort(rec.attrs.begin(), rec.attrs.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    doc.nodes.push_back(std::move(rec));
  }
  for (const auto& je : j.value("edges", nlohmann::json::array())) {
    if (!je.contains("source") || !je.contains("assoc") || !je.contains("target"))
      throw GraphError("graph document: every edge needs source, assoc, target");
    doc.edges.push_back(
        {je["source"].get<NodeId>(), je["assoc"].get<std::string>(), je["target"].get<NodeId>()});
  }
  std::sort(doc.nodes.begin(), doc.nodes.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  std::sort(doc.edges.begin(), doc.edges.end());
  return doc;
}

}  // namespace designc
