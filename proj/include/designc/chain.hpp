#pragma once

#include <cctype>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <fcntl.h>
#include <signal.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

#include "designc/graph.hpp"

// Process chains: externally executed engineering tasks. A chain extracts the
// required information from the design graph into a file, runs a command in a
// fresh temporary working directory, parses the result file, and feeds the
// mapped values back into the design graph. Write-back is all-or-nothing: on
// any failure the graph is untouched.
//
// Chain document (JSON):
//   {"name": "...",
//    "command": ["sh", "{bundle}/run.sh", "{input}", "{output}"],
//    "extract": {"class": "SCRSystem", "attrs": ["inFlow"], "where": "..."},
//    "input_format": "json" | "csv",
//    "output_file": "output.csv",
//    "output_mapping": [{"path": "pressureLoss",
//                        "node": {"class": "SCRSystem", "where": "..."},
//                        "attr": "pressureLoss"}],
//    "timeout": 60}
//
// Placeholders in command elements: {input}, {output}, {workdir}, {bundle}.
// Output mapping paths are slash-separated field paths into a JSON result, or
// column names of a single-data-row CSV.

namespace designc {

struct NodeSelector {
  std::string cls;
  ExprPtr where;
  std::string where_src;
};

struct OutputMapping {
  std::string path;
  NodeSelector node;
  std::string attr;
};

struct ChainSpec {
  enum class Format { json, csv };

  std::string name;
  std::vector<std::string> command;
  NodeSelector extract;
  std::vector<std::string> extract_attrs;
  Format format = Format::json;  // governs both exchange files
  std::string output_file = "output.json";
  std::vector<OutputMapping> mappings;
  double timeout_seconds = 60;
  std::filesystem::path base_dir;  // resolves {bundle}
};

struct ChainResult {
  int exit_code = 0;
  std::map<std::string, Value> parsed;  // mapping path -> value read back
  std::size_t writebacks = 0;
  std::string stdout_tail;
  std::string stderr_tail;
};

// ---------------------------------------------------------------------------
// Loading

namespace detail {

inline NodeSelector load_selector(const nlohmann::json& j, const Schema& schema,
                                  Diagnostics& diag, const std::string& where) {
  NodeSelector sel;
  if (!j.is_object() || !j.contains("class") || !j["class"].is_string()) {
    diag.add(where + ": needs a \"class\"");
    return sel;
  }
  sel.cls = j["class"].get<std::string>();
  if (!schema.find(sel.cls)) {
    diag.add(where + ": unknown class '" + sel.cls + "'");
    return sel;
  }
  if (j.contains("where")) {
    if (!j["where"].is_string()) {
      diag.add(where + ": where must be an expression string");
      return sel;
    }
    sel.where_src = j["where"].get<std::string>();
    try {
      sel.where = parse_expression(sel.where_src);
      CheckScope scope;
      scope.ident = [&schema, &sel](const std::string& name) -> std::optional<StaticType> {
        const AttributeDef* a = schema.find_attribute(sel.cls, name);
        if (!a) return std::nullopt;
        return StaticType{a->kind, a->dim};
      };
      if (check_expr(*sel.where, scope).kind != ValKind::boolean)
        diag.add(where + ": where-predicate must be boolean");
    } catch (const Error& e) {
      diag.add(where + " where \"" + sel.where_src + "\": " + e.what());
    }
  }
  return sel;
}

}  // namespace detail

inline ChainSpec load_chain_spec(const std::string& json_text, const Schema& schema,
                                 const std::filesystem::path& base_dir = {}) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("chain: ") + e.what(), e.byte);
  }
  Diagnostics diag;
  ChainSpec spec;
  spec.base_dir = base_dir;
  spec.name = doc.value("name", "");
  if (spec.name.empty()) diag.add("chain: a non-empty \"name\" is required");
  const std::string cwhere = "chain '" + spec.name + "'";

  if (!doc.contains("command") || !doc["command"].is_array() || doc["command"].empty()) {
    diag.add(cwhere + ": \"command\" must be a non-empty argv array");
  } else {
    for (const auto& ja : doc["command"]) {
      if (!ja.is_string()) {
        diag.add(cwhere + ": command elements must be strings");
        break;
      }
      spec.command.push_back(ja.get<std::string>());
    }
  }

  if (!doc.contains("extract")) {
    diag.add(cwhere + ": an \"extract\" query is required");
  } else {
    spec.extract = detail::load_selector(doc["extract"], schema, diag, cwhere + " extract");
    for (const auto& ja : doc["extract"].value("attrs", nlohmann::json::array())) {
      if (!ja.is_string()) {
        diag.add(cwhere + ": extract attrs must be attribute names");
        continue;
      }
      std::string attr = ja.get<std::string>();
      if (!spec.extract.cls.empty() && !schema.find_attribute(spec.extract.cls, attr))
        diag.add(cwhere + ": class '" + spec.extract.cls + "' has no attribute '" + attr + "'");
      spec.extract_attrs.push_back(attr);
    }
  }

  std::string fmt = doc.value("input_format", "json");
  if (fmt == "json") spec.format = ChainSpec::Format::json;
  else if (fmt == "csv") spec.format = ChainSpec::Format::csv;
  else diag.add(cwhere + ": input_format must be \"json\" or \"csv\"");

  spec.output_file = doc.value("output_file", fmt == "csv" ? "output.csv" : "output.json");
  if (doc.contains("timeout")) {
    if (!doc["timeout"].is_number() || doc["timeout"].get<double>() <= 0)
      diag.add(cwhere + ": timeout must be a positive number of seconds");
    else
      spec.timeout_seconds = doc["timeout"].get<double>();
  }

  for (const auto& jm : doc.value("output_mapping", nlohmann::json::array())) {
    OutputMapping m;
    if (!jm.is_object() || !jm.contains("path") || !jm.contains("node") || !jm.contains("attr")) {
      diag.add(cwhere + ": every output mapping needs path, node, attr");
      continue;
    }
    m.path = jm["path"].get<std::string>();
    m.attr = jm["attr"].get<std::string>();
    m.node = detail::load_selector(jm["node"], schema, diag, cwhere + " mapping node");
    if (!m.node.cls.empty() && !schema.find_attribute(m.node.cls, m.attr))
      diag.add(cwhere + ": mapping target '" + m.node.cls + "' has no attribute '" + m.attr + "'");
    spec.mappings.push_back(std::move(m));
  }

  diag.throw_if_any();
  return spec;
}

// ---------------------------------------------------------------------------
// Subprocess execution

struct ProcessResult {
  int exit_code = -1;
  bool timed_out = false;
  std::string stdout_tail;
  std::string stderr_tail;
};

namespace detail {

inline std::string read_file_head(const std::filesystem::path& p, std::size_t limit = 8192) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return "";
  std::string out(limit, '\0');
  in.read(out.data(), static_cast<std::streamsize>(limit));
  out.resize(static_cast<std::size_t>(in.gcount()));
  return out;
}

inline ProcessResult run_process(const std::vector<std::string>& argv,
                                 const std::filesystem::path& cwd, double timeout_seconds) {
  std::filesystem::path out_log = cwd / "_designc_stdout.log";
  std::filesystem::path err_log = cwd / "_designc_stderr.log";

  pid_t pid = fork();
  if (pid < 0) throw ChainError("failed to fork chain process");
  if (pid == 0) {
    if (chdir(cwd.c_str()) != 0) _exit(126);
    int out_fd = open(out_log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    int err_fd = open(err_log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (out_fd >= 0) dup2(out_fd, 1);
    if (err_fd >= 0) dup2(err_fd, 2);
    std::vector<char*> cargv;
    cargv.reserve(argv.size() + 1);
    for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
    cargv.push_back(nullptr);
    execvp(cargv[0], cargv.data());
    dprintf(2, "exec failed: %s\n", cargv[0]);
    _exit(127);
  }

  ProcessResult result;
  auto deadline =
      std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_seconds);
  int status = 0;
  while (true) {
    pid_t r = waitpid(pid, &status, WNOHANG);
    if (r == pid) break;
    if (r < 0) throw ChainError("waitpid failed for chain process");
    if (std::chrono::steady_clock::now() >= deadline) {
      kill(pid, SIGKILL);
      waitpid(pid, &status, 0);
      result.timed_out = true;
      break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  if (WIFEXITED(status)) result.exit_code = WEXITSTATUS(status);
  else if (WIFSIGNALED(status)) result.exit_code = 128 + WTERMSIG(status);
  result.stdout_tail = read_file_head(out_log);
  result.stderr_tail = read_file_head(err_log);
  return result;
}

// ---------------------------------------------------------------------------
// CSV helpers (fields quoted with "" escaping when they contain , " or \n)

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  return out + "\"";
}

inline std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c == '\r') {
      // tolerate CRLF
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string placeholder_substitute(std::string s, const std::map<std::string, std::string>& subs) {
  for (const auto& [key, val] : subs) {
    std::string token = "{" + key + "}";
    std::size_t pos = 0;
    while ((pos = s.find(token, pos)) != std::string::npos) {
      s.replace(pos, token.size(), val);
      pos += val.size();
    }
  }
  return s;
}

inline std::vector<const Node*> select_nodes(const DesignGraph& graph, const NodeSelector& sel,
                                             const EvalScope* outer) {
  std::vector<const Node*> out;
  for (const Node* node : graph.instances_of(sel.cls)) {
    if (sel.where) {
      EvalScope scope = node_scope(graph, node->id, outer);
      Value v;
      try {
        v = eval_expr(*sel.where, scope);
      } catch (const EvalError&) {
        continue;
      }
      if (!v.is_bool() || !v.boolean()) continue;
    }
    out.push_back(node);
  }
  return out;
}

inline std::string write_extract(const ChainSpec& spec, const std::vector<const Node*>& nodes) {
  if (spec.format == ChainSpec::Format::csv) {
    std::string out;
    for (std::size_t i = 0; i < spec.extract_attrs.size(); ++i)
      out += (i ? "," : "") + csv_field(spec.extract_attrs[i]);
    out += "\n";
    for (const Node* n : nodes) {
      for (std::size_t i = 0; i < spec.extract_attrs.size(); ++i) {
        if (i) out += ",";
        auto it = n->attrs.find(spec.extract_attrs[i]);
        if (it == n->attrs.end()) continue;  // unset -> empty cell
        const Value& v = it->second;
        out += csv_field(v.is_string() ? v.str() : v.repr());
      }
      out += "\n";
    }
    return out;
  }
  // canonical json extract, same shape as the graph export
  GraphDoc doc;
  for (const Node* n : nodes) {
    GraphDoc::NodeRec rec;
    rec.id = n->id;
    rec.cls = n->cls;
    for (const auto& attr : spec.extract_attrs) {
      auto it = n->attrs.find(attr);
      if (it != n->attrs.end()) rec.attrs.emplace_back(attr, it->second);
    }
    doc.nodes.push_back(std::move(rec));
  }
  return write_json(doc);
}

inline Value json_path_lookup(const nlohmann::json& root, const std::string& path) {
  const nlohmann::json* cur = &root;
  std::size_t p = 0;
  while (p <= path.size()) {
    std::size_t q = path.find('/', p);
    std::string part = path.substr(p, q == std::string::npos ? std::string::npos : q - p);
    if (part.empty()) throw ChainError("empty segment in output path '" + path + "'");
    if (cur->is_array()) {
      bool digits = std::all_of(part.begin(), part.end(),
                                [](unsigned char c) { return std::isdigit(c); });
      if (!digits) throw ChainError("output path '" + path + "': '" + part + "' is not an array index");
      std::size_t idx = std::stoul(part);
      if (idx >= cur->size()) throw ChainError("output path '" + path + "': index " + part + " out of range");
      cur = &(*cur)[idx];
    } else if (cur->is_object()) {
      if (!cur->contains(part)) throw ChainError("output path '" + path + "': no field '" + part + "'");
      cur = &(*cur)[part];
    } else {
      throw ChainError("output path '" + path + "': cannot descend into a scalar at '" + part + "'");
    }
    if (q == std::string::npos) break;
    p = q + 1;
  }
  auto v = parse_literal(*cur);
  if (!v) throw ChainError("output path '" + path + "': value is not a scalar literal");
  return *v;
}

inline Value csv_to_value(const std::string& raw, ValKind kind) {
  if (kind == ValKind::string) return Value(raw);
  if (kind == ValKind::boolean) {
    if (raw == "true" || raw == "1") return Value(true);
    if (raw == "false" || raw == "0") return Value(false);
    throw ChainError("cannot read '" + raw + "' as a boolean");
  }
  char* endp = nullptr;
  double d = std::strtod(raw.c_str(), &endp);
  if (raw.empty() || endp != raw.c_str() + raw.size())
    throw ChainError("cannot read '" + raw + "' as a number");
  return Value(d);
}

}  // namespace detail

// Runs the chain: extract -> command in a fresh workdir -> parse -> write
// back. The graph is modified only if every step succeeds.
inline ChainResult run_chain(const ChainSpec& spec, DesignGraph& graph,
                             const EvalScope* outer = nullptr) {
  namespace fs = std::filesystem;

  // fresh working directory per invocation
  fs::path root;
  if (const char* env = std::getenv("DESIGNC_TMPDIR"); env && *env) root = env;
  else root = fs::temp_directory_path();
  fs::create_directories(root);
  std::string tmpl = (root / "designc-chain-XXXXXX").string();
  std::vector<char> buf(tmpl.begin(), tmpl.end());
  buf.push_back('\0');
  if (!mkdtemp(buf.data())) throw ChainError("chain '" + spec.name + "': cannot create workdir");
  fs::path workdir(buf.data());
  bool keep = false;
  if (const char* env = std::getenv("DESIGNC_KEEP_WORKDIR"); env && std::string(env) == "1")
    keep = true;
  struct Cleanup {
    fs::path dir;
    bool keep;
    ~Cleanup() {
      if (!keep) {
        std::error_code ec;
        fs::remove_all(dir, ec);
      }
    }
  } cleanup{workdir, keep};

  const bool csv = spec.format == ChainSpec::Format::csv;
  fs::path input_file = workdir / (csv ? "input.csv" : "input.json");
  fs::path output_file = workdir / spec.output_file;
  {
    // the chain reads and writes inside its own workdir only
    fs::path normal = output_file.lexically_normal();
    auto rel = normal.lexically_relative(workdir.lexically_normal());
    if (rel.empty() || rel.native().rfind("..", 0) == 0)
      throw ChainError("chain '" + spec.name + "': output_file escapes the workdir");
  }

  std::vector<const Node*> extracted = detail::select_nodes(graph, spec.extract, outer);
  {
    std::ofstream out(input_file, std::ios::binary);
    out << detail::write_extract(spec, extracted);
    if (!out) throw ChainError("chain '" + spec.name + "': cannot write " + input_file.string());
  }

  std::map<std::string, std::string> subs = {
      {"input", input_file.string()},
      {"output", output_file.string()},
      {"workdir", workdir.string()},
      {"bundle", spec.base_dir.string()},
  };
  std::vector<std::string> argv;
  argv.reserve(spec.command.size());
  for (const auto& c : spec.command) argv.push_back(detail::placeholder_substitute(c, subs));
  if (argv.empty()) throw ChainError("chain '" + spec.name + "': empty command");
  if (argv[0].find('/') != std::string::npos && !fs::exists(argv[0]))
    throw ChainError("chain '" + spec.name + "': command not found: " + argv[0]);

  detail::ProcessResult proc = detail::run_process(argv, workdir, spec.timeout_seconds);
  ChainResult result;
  result.exit_code = proc.exit_code;
  result.stdout_tail = proc.stdout_tail;
  result.stderr_tail = proc.stderr_tail;
  if (proc.timed_out)
    throw ChainError("chain '" + spec.name + "': timed out after " +
                     format_number(spec.timeout_seconds) + "s and was killed");
  if (proc.exit_code == 127)
    throw ChainError("chain '" + spec.name + "': command not found or not executable: " + argv[0] +
                     (proc.stderr_tail.empty() ? "" : "\nstderr: " + proc.stderr_tail));
  if (proc.exit_code != 0)
    throw ChainError("chain '" + spec.name + "': exited with status " +
                     std::to_string(proc.exit_code) +
                     (proc.stderr_tail.empty() ? "" : "\nstderr: " + proc.stderr_tail));

  if (!fs::exists(output_file))
    throw ChainError("chain '" + spec.name + "': produced no output file " + spec.output_file);

  // parse the result and stage the write-back on a copy
  DesignGraph updated = graph;
  if (csv) {
    std::ifstream in(output_file, std::ios::binary);
    std::string header_line, data_line, extra;
    if (!std::getline(in, header_line))
      throw ChainError("chain '" + spec.name + "': empty csv output");
    if (!std::getline(in, data_line))
      throw ChainError("chain '" + spec.name + "': csv output has no data row");
    while (std::getline(in, extra))
      if (!extra.empty())
        throw ChainError("chain '" + spec.name + "': csv output must have exactly one data row");
    std::vector<std::string> header = detail::csv_split(header_line);
    std::vector<std::string> data = detail::csv_split(data_line);
    for (const auto& m : spec.mappings) {
      auto it = std::find(header.begin(), header.end(), m.path);
      if (it == header.end())
        throw ChainError("chain '" + spec.name + "': csv output has no column '" + m.path + "'");
      std::size_t col = static_cast<std::size_t>(it - header.begin());
      if (col >= data.size())
        throw ChainError("chain '" + spec.name + "': csv data row is missing column '" + m.path + "'");
      const AttributeDef* def = graph.schema().find_attribute(m.node.cls, m.attr);
      if (!def)
        throw ChainError("chain '" + spec.name + "': mapping target '" + m.node.cls +
                         "' has no attribute '" + m.attr + "'");
      Value v = detail::csv_to_value(data[col], def->kind);
      result.parsed[m.path] = v;
    }
  } else {
    nlohmann::json out_doc;
    try {
      std::ifstream in(output_file, std::ios::binary);
      out_doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ChainError("chain '" + spec.name + "': output parse error: " + e.what());
    }
    for (const auto& m : spec.mappings) result.parsed[m.path] = detail::json_path_lookup(out_doc, m.path);
  }

  for (const auto& m : spec.mappings) {
    std::vector<const Node*> targets = detail::select_nodes(updated, m.node, outer);
    if (targets.size() != 1)
      throw ChainError("chain '" + spec.name + "': mapping '" + m.path + "' selector matched " +
                       std::to_string(targets.size()) + " node(s) of class '" + m.node.cls +
                       "', need exactly 1");
    try {
      updated.set_attr(targets[0]->id, m.attr, AttrValue(result.parsed.at(m.path)));
    } catch (const GraphError& e) {
      throw ChainError("chain '" + spec.name + "': write-back of '" + m.path + "': " + e.what());
    }
    ++result.writebacks;
  }

  graph = std::move(updated);
  return result;
}

}  // namespace designc
