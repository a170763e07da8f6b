#pragma once

// Curation Workflow Definition Language: JSON definitions for controllers,
// tasks and workflow templates, plus validation and compilation of templates
// into executable fan-out/fan-in graphs.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"

#include "cwm/report.hpp"

namespace cwm::cwdl {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

// Malformed JSON text.
struct ParseError : Error {
  using Error::Error;
};

// Well-formed JSON that does not match the wire schema. `path()` names the
// offending location ("$.connection.method").
struct SchemaError : Error {
  SchemaError(std::string path, const std::string& message)
      : Error(path + ": " + message), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

// Defensive check when compiling a template; well-formed trees cannot
// trigger it.
struct CompileError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

enum class ParamKind { parameter, header };
enum class ConnectionType { restapi };
enum class ComponentType { rabbitmqrestapi };
enum class CombinatorKind { split, waitcombiner };

// One "parameters"/"headers" entry. The wire key for `kind` is "type";
// it is renamed internally to avoid clashing with schema vocabulary.
struct ParamSpec {
  std::string name;
  ParamKind kind = ParamKind::parameter;
  std::optional<std::string> default_value;
  bool required = false;

  bool operator==(const ParamSpec&) const = default;
};

struct ConnectionSpec {
  ConnectionType connection_type = ConnectionType::restapi;
  std::string method;
  std::string endpoint_url;
  std::vector<ParamSpec> parameters;
  std::vector<ParamSpec> headers;
  std::string body_content_slot;  // empty: request carries no body

  bool operator==(const ConnectionSpec&) const = default;
};

struct QueueNames {
  std::string input_normal;
  std::string input_priority;

  bool operator==(const QueueNames&) const = default;
};

struct ControllerSpec {
  std::string controller_name;
  std::string service_id;
  std::string controller_id;
  QueueNames queues;
  ConnectionSpec connection;

  bool operator==(const ControllerSpec&) const = default;
};

struct TaskSpec {
  std::string task_name;
  std::string task_id;
  std::string controller_id;
  ComponentType component_type = ComponentType::rabbitmqrestapi;

  bool operator==(const TaskSpec&) const = default;
};

// Recursive workflow tree. Sibling lists keep wire order; execution order
// is ascending `order`, which must be unique among siblings.
struct TaskNode;

struct ServiceNode {
  int order = 0;
  std::string task_id;
};

struct ParallelBlock {
  int order = 0;
  CombinatorKind input_combinator = CombinatorKind::split;
  CombinatorKind output_combinator = CombinatorKind::waitcombiner;
  std::vector<TaskNode> children;
};

struct SequentialBlock {
  int order = 0;
  std::vector<TaskNode> children;
};

struct TaskNode {
  std::variant<ServiceNode, ParallelBlock, SequentialBlock> node;

  int order() const {
    return std::visit([](const auto& n) { return n.order; }, node);
  }
  bool is_service() const { return std::holds_alternative<ServiceNode>(node); }
};

struct WorkflowTemplate {
  std::string name;
  std::string id;
  std::string description;
  std::vector<TaskNode> tasks;  // implicit sequential composition
};

// ---------------------------------------------------------------------------
// Execution graph (compiled form of a template)
// ---------------------------------------------------------------------------

enum class NodeKind { source, sink, service, split, wait_combiner };

inline const char* to_string(NodeKind k) {
  switch (k) {
    case NodeKind::source: return "source";
    case NodeKind::sink: return "sink";
    case NodeKind::service: return "service";
    case NodeKind::split: return "split";
    case NodeKind::wait_combiner: return "waitcombiner";
  }
  return "?";
}

struct GraphNode {
  int id = 0;
  NodeKind kind = NodeKind::service;
  std::string task_id;  // set for service nodes only
};

struct ExecutionGraph {
  std::vector<GraphNode> nodes;             // ids are dense, 0..n-1
  std::vector<std::pair<int, int>> edges;   // directed (from, to)

  int source_id() const {
    for (const auto& n : nodes)
      if (n.kind == NodeKind::source) return n.id;
    return -1;
  }
  int sink_id() const {
    for (const auto& n : nodes)
      if (n.kind == NodeKind::sink) return n.id;
    return -1;
  }
  std::vector<int> successors(int id) const {
    std::vector<int> out;
    for (const auto& [a, b] : edges)
      if (a == id) out.push_back(b);
    return out;
  }
  std::vector<int> predecessors(int id) const {
    std::vector<int> out;
    for (const auto& [a, b] : edges)
      if (b == id) out.push_back(a);
    return out;
  }
  // Node ids in one fixed topological order (Kahn, smallest id first).
  // Throws CompileError when the edge set contains a cycle.
  std::vector<int> topological_order() const {
    std::map<int, int> indegree;
    for (const auto& n : nodes) indegree[n.id] = 0;
    for (const auto& [a, b] : edges) indegree[b]++;
    std::set<int> ready;
    for (const auto& [id, d] : indegree)
      if (d == 0) ready.insert(id);
    std::vector<int> order;
    while (!ready.empty()) {
      int id = *ready.begin();
      ready.erase(ready.begin());
      order.push_back(id);
      for (int s : successors(id))
        if (--indegree[s] == 0) ready.insert(s);
    }
    if (order.size() != nodes.size()) throw CompileError("cycle in execution graph");
    return order;
  }
};

// ---------------------------------------------------------------------------
// Parsing helpers
// ---------------------------------------------------------------------------

namespace detail {

inline std::string child(const std::string& path, const char* key) {
  return path + "." + key;
}
inline std::string at(const std::string& path, const char* key, std::size_t i) {
  return path + "." + key + "[" + std::to_string(i) + "]";
}

inline void expect_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw SchemaError(path, "expected a JSON object");
}

inline void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed,
                                const std::string& path) {
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* a : allowed)
      if (key == a) known = true;
    if (!known) throw SchemaError(child(path, key.c_str()), "unknown key");
  }
}

inline const json& require(const json& j, const char* key, const std::string& path) {
  auto it = j.find(key);
  if (it == j.end()) throw SchemaError(child(path, key), "missing required key");
  return *it;
}

inline std::string require_string(const json& j, const char* key, const std::string& path) {
  const json& v = require(j, key, path);
  if (!v.is_string()) throw SchemaError(child(path, key), "expected a string");
  return v.get<std::string>();
}

inline std::string require_identifier(const json& j, const char* key, const std::string& path) {
  std::string s = require_string(j, key, path);
  if (s.empty()) throw SchemaError(child(path, key), "empty identifier");
  return s;
}

inline bool require_bool(const json& j, const char* key, const std::string& path) {
  const json& v = require(j, key, path);
  if (!v.is_boolean()) throw SchemaError(child(path, key), "expected a boolean");
  return v.get<bool>();
}

inline int require_order(const json& j, const std::string& path) {
  const json& v = require(j, "order", path);
  if (!v.is_number_integer() || v.get<long long>() < 1)
    throw SchemaError(child(path, "order"), "expected a positive integer");
  return v.get<int>();
}

inline json parse_text(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("malformed JSON: ") + e.what());
  }
}

// Absolute http(s) URL check; `<name>` template placeholders are treated
// as opaque non-empty segments.
inline bool is_absolute_url_template(std::string_view url) {
  std::string flat;
  flat.reserve(url.size());
  for (std::size_t i = 0; i < url.size();) {
    if (url[i] == '<') {
      auto close = url.find('>', i);
      if (close == std::string_view::npos) return false;
      if (close == i + 1) return false;  // "<>"
      flat += "x";
      i = close + 1;
    } else {
      flat += url[i++];
    }
  }
  auto scheme_end = flat.find("://");
  if (scheme_end == std::string::npos) return false;
  std::string scheme = flat.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") return false;
  std::string rest = flat.substr(scheme_end + 3);
  auto host_end = rest.find_first_of("/?#");
  std::string host = rest.substr(0, host_end);
  return !host.empty();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Enumeration <-> wire strings
// ---------------------------------------------------------------------------

inline const char* to_string(ParamKind k) {
  return k == ParamKind::parameter ? "parameter" : "header";
}
inline const char* to_string(ConnectionType) { return "restapi"; }
inline const char* to_string(ComponentType) { return "rabbitmqrestapi"; }
inline const char* to_string(CombinatorKind k) {
  return k == CombinatorKind::split ? "split" : "waitcombiner";
}

inline CombinatorKind parse_combinator(const std::string& s, const std::string& path) {
  if (s == "split") return CombinatorKind::split;
  if (s == "waitcombiner") return CombinatorKind::waitcombiner;
  throw SchemaError(path, "unknown combinator '" + s + "'");
}

inline const std::set<std::string>& http_methods() {
  static const std::set<std::string> methods = {"GET", "POST", "PUT", "DELETE", "PATCH"};
  return methods;
}

// ---------------------------------------------------------------------------
// Parsers
// ---------------------------------------------------------------------------

namespace detail {

inline ParamSpec parse_param(const json& j, ParamKind expected_kind, const std::string& path) {
  expect_object(j, path);
  reject_unknown_keys(j, {"name", "type", "default_value", "required"}, path);
  ParamSpec p;
  p.name = require_identifier(j, "name", path);
  std::string type = require_string(j, "type", path);
  if (type == "parameter") {
    p.kind = ParamKind::parameter;
  } else if (type == "header") {
    p.kind = ParamKind::header;
  } else {
    throw SchemaError(child(path, "type"), "unknown param type '" + type + "'");
  }
  if (p.kind != expected_kind)
    throw SchemaError(child(path, "type"),
                      std::string("expected type '") + to_string(expected_kind) + "'");
  if (auto it = j.find("default_value"); it != j.end()) {
    if (!it->is_string()) throw SchemaError(child(path, "default_value"), "expected a string");
    p.default_value = it->get<std::string>();
  }
  p.required = require_bool(j, "required", path);
  return p;
}

inline std::vector<ParamSpec> parse_param_list(const json& j, const char* key,
                                               ParamKind kind, const std::string& path) {
  const json& arr = require(j, key, path);
  if (!arr.is_array()) throw SchemaError(child(path, key), "expected an array");
  std::vector<ParamSpec> out;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    ParamSpec p = parse_param(arr[i], kind, at(path, key, i));
    if (!seen.insert(p.name).second)
      throw SchemaError(at(path, key, i), "duplicate name '" + p.name + "'");
    out.push_back(std::move(p));
  }
  return out;
}

inline ConnectionSpec parse_connection(const json& j, const std::string& path) {
  expect_object(j, path);
  reject_unknown_keys(j, {"connection_type", "method", "endpoint_url", "parameters",
                          "body", "headers"},
                      path);
  ConnectionSpec c;
  std::string type = require_string(j, "connection_type", path);
  if (type != "restapi")
    throw SchemaError(child(path, "connection_type"), "unknown connection_type '" + type + "'");
  c.connection_type = ConnectionType::restapi;
  c.method = require_string(j, "method", path);
  if (!http_methods().contains(c.method))
    throw SchemaError(child(path, "method"), "unknown HTTP method '" + c.method + "'");
  c.endpoint_url = require_identifier(j, "endpoint_url", path);
  c.parameters = parse_param_list(j, "parameters", ParamKind::parameter, path);
  c.headers = parse_param_list(j, "headers", ParamKind::header, path);
  if (auto it = j.find("body"); it != j.end()) {
    expect_object(*it, child(path, "body"));
    reject_unknown_keys(*it, {"content"}, child(path, "body"));
    c.body_content_slot = require_identifier(*it, "content", child(path, "body"));
  }
  return c;
}

}  // namespace detail

inline ControllerSpec parse_controller(std::string_view text) {
  json j = detail::parse_text(text);
  const std::string path = "$";
  detail::expect_object(j, path);
  detail::reject_unknown_keys(
      j, {"controllerName", "serviceId", "controllerId", "queues", "connection"}, path);
  ControllerSpec c;
  c.controller_name = detail::require_string(j, "controllerName", path);
  c.service_id = detail::require_identifier(j, "serviceId", path);
  c.controller_id = detail::require_identifier(j, "controllerId", path);
  const json& q = detail::require(j, "queues", path);
  detail::expect_object(q, detail::child(path, "queues"));
  detail::reject_unknown_keys(q, {"nameInputNormal", "nameInputPriority"},
                              detail::child(path, "queues"));
  c.queues.input_normal =
      detail::require_identifier(q, "nameInputNormal", detail::child(path, "queues"));
  c.queues.input_priority =
      detail::require_identifier(q, "nameInputPriority", detail::child(path, "queues"));
  if (c.queues.input_normal == c.queues.input_priority)
    throw SchemaError(detail::child(path, "queues"),
                      "nameInputNormal and nameInputPriority must differ");
  c.connection = detail::parse_connection(detail::require(j, "connection", path),
                                          detail::child(path, "connection"));
  return c;
}

inline TaskSpec parse_task(std::string_view text) {
  json j = detail::parse_text(text);
  const std::string path = "$";
  detail::expect_object(j, path);
  detail::reject_unknown_keys(j, {"taskName", "taskId", "controllerId", "component_type"}, path);
  TaskSpec t;
  t.task_name = detail::require_string(j, "taskName", path);
  t.task_id = detail::require_identifier(j, "taskId", path);
  t.controller_id = detail::require_identifier(j, "controllerId", path);
  std::string component = detail::require_string(j, "component_type", path);
  if (component != "rabbitmqrestapi")
    throw SchemaError(detail::child(path, "component_type"),
                      "unknown component_type '" + component + "'");
  t.component_type = ComponentType::rabbitmqrestapi;
  return t;
}

namespace detail {

// Structural task names inside templates; not valid ids for TaskSpecs.
inline bool is_block_name(const std::string& task_id) {
  return task_id == "ParallelTask" || task_id == "SequentialTask";
}

inline std::vector<TaskNode> parse_node_list(const json& arr, const std::string& path);

inline TaskNode parse_task_node(const json& j, const std::string& path) {
  expect_object(j, path);
  reject_unknown_keys(j, {"order", "taskId", "features"}, path);
  int order = require_order(j, path);
  std::string task_id = require_identifier(j, "taskId", path);

  if (task_id == "ParallelTask") {
    const json& features = require(j, "features", path);
    const std::string fpath = child(path, "features");
    expect_object(features, fpath);
    reject_unknown_keys(features, {"input", "output", "tasks"}, fpath);

    auto combinator = [&](const char* key) {
      const json& c = require(features, key, fpath);
      const std::string cpath = child(fpath, key);
      expect_object(c, cpath);
      reject_unknown_keys(c, {"component_type"}, cpath);
      return parse_combinator(require_string(c, "component_type", cpath),
                              child(cpath, "component_type"));
    };
    ParallelBlock block;
    block.order = order;
    block.input_combinator = combinator("input");
    block.output_combinator = combinator("output");
    if (block.input_combinator != CombinatorKind::split)
      throw SchemaError(child(fpath, "input"), "input combinator must be 'split'");
    if (block.output_combinator != CombinatorKind::waitcombiner)
      throw SchemaError(child(fpath, "output"), "output combinator must be 'waitcombiner'");
    block.children = parse_node_list(require(features, "tasks", fpath), child(fpath, "tasks"));
    if (block.children.empty())
      throw SchemaError(child(fpath, "tasks"), "ParallelTask requires at least one child");
    return TaskNode{std::move(block)};
  }

  if (task_id == "SequentialTask") {
    const json& features = require(j, "features", path);
    const std::string fpath = child(path, "features");
    expect_object(features, fpath);
    reject_unknown_keys(features, {"tasks"}, fpath);
    SequentialBlock block;
    block.order = order;
    block.children = parse_node_list(require(features, "tasks", fpath), child(fpath, "tasks"));
    if (block.children.empty())
      throw SchemaError(child(fpath, "tasks"), "SequentialTask requires at least one child");
    return TaskNode{std::move(block)};
  }

  if (j.contains("features"))
    throw SchemaError(child(path, "features"), "only ParallelTask/SequentialTask take features");
  return TaskNode{ServiceNode{order, std::move(task_id)}};
}

inline std::vector<TaskNode> parse_node_list(const json& arr, const std::string& path) {
  if (!arr.is_array()) throw SchemaError(path, "expected an array");
  std::vector<TaskNode> out;
  std::set<int> orders;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    std::string epath = path + "[" + std::to_string(i) + "]";
    TaskNode node = parse_task_node(arr[i], epath);
    if (!orders.insert(node.order()).second)
      throw SchemaError(child(epath, "order"),
                        "duplicate order " + std::to_string(node.order()) + " among siblings");
    out.push_back(std::move(node));
  }
  return out;
}

}  // namespace detail

inline WorkflowTemplate parse_template(std::string_view text) {
  json j = detail::parse_text(text);
  const std::string path = "$";
  detail::expect_object(j, path);
  detail::reject_unknown_keys(j, {"workflowTemplateName", "workflowTemplateId",
                                  "workflowTemplateDescription", "tasks"},
                              path);
  WorkflowTemplate t;
  t.name = detail::require_string(j, "workflowTemplateName", path);
  t.id = detail::require_identifier(j, "workflowTemplateId", path);
  t.description = detail::require_string(j, "workflowTemplateDescription", path);
  t.tasks = detail::parse_node_list(detail::require(j, "tasks", path), detail::child(path, "tasks"));
  return t;
}

// ---------------------------------------------------------------------------
// Serializers (wire format, round-trip safe)
// ---------------------------------------------------------------------------

inline json to_json(const ParamSpec& p) {
  json j = {{"name", p.name}, {"type", to_string(p.kind)}, {"required", p.required}};
  if (p.default_value) j["default_value"] = *p.default_value;
  return j;
}

inline json to_json(const ConnectionSpec& c) {
  json params = json::array();
  for (const auto& p : c.parameters) params.push_back(to_json(p));
  json headers = json::array();
  for (const auto& h : c.headers) headers.push_back(to_json(h));
  json j = {{"connection_type", to_string(c.connection_type)},
            {"method", c.method},
            {"endpoint_url", c.endpoint_url},
            {"parameters", params},
            {"headers", headers}};
  if (!c.body_content_slot.empty()) j["body"] = {{"content", c.body_content_slot}};
  return j;
}

inline json to_json(const ControllerSpec& c) {
  return {{"controllerName", c.controller_name},
          {"serviceId", c.service_id},
          {"controllerId", c.controller_id},
          {"queues",
           {{"nameInputNormal", c.queues.input_normal},
            {"nameInputPriority", c.queues.input_priority}}},
          {"connection", to_json(c.connection)}};
}

inline json to_json(const TaskSpec& t) {
  return {{"taskName", t.task_name},
          {"taskId", t.task_id},
          {"controllerId", t.controller_id},
          {"component_type", to_string(t.component_type)}};
}

inline json to_json(const TaskNode& node);

inline json to_json(const std::vector<TaskNode>& nodes) {
  json arr = json::array();
  for (const auto& n : nodes) arr.push_back(to_json(n));
  return arr;
}

inline json to_json(const TaskNode& node) {
  return std::visit(
      [](const auto& n) -> json {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, ServiceNode>) {
          return {{"order", n.order}, {"taskId", n.task_id}};
        } else if constexpr (std::is_same_v<T, ParallelBlock>) {
          return {{"order", n.order},
                  {"taskId", "ParallelTask"},
                  {"features",
                   {{"input", {{"component_type", to_string(n.input_combinator)}}},
                    {"output", {{"component_type", to_string(n.output_combinator)}}},
                    {"tasks", to_json(n.children)}}}};
        } else {
          return {{"order", n.order},
                  {"taskId", "SequentialTask"},
                  {"features", {{"tasks", to_json(n.children)}}}};
        }
      },
      node.node);
}

inline json to_json(const WorkflowTemplate& t) {
  return {{"workflowTemplateName", t.name},
          {"workflowTemplateId", t.id},
          {"workflowTemplateDescription", t.description},
          {"tasks", to_json(t.tasks)}};
}

inline std::string serialize(const ControllerSpec& c) { return to_json(c).dump(1); }
inline std::string serialize(const TaskSpec& t) { return to_json(t).dump(1); }
inline std::string serialize(const WorkflowTemplate& t) { return to_json(t).dump(1); }

// All service task ids referenced by a template, in tree order.
inline void collect_task_ids(const std::vector<TaskNode>& nodes, std::vector<std::string>& out) {
  for (const auto& n : nodes) {
    std::visit(
        [&](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, ServiceNode>) {
            out.push_back(v.task_id);
          } else {
            collect_task_ids(v.children, out);
          }
        },
        n.node);
  }
}

inline std::vector<std::string> collect_task_ids(const WorkflowTemplate& t) {
  std::vector<std::string> out;
  collect_task_ids(t.tasks, out);
  return out;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

using ControllerRegistry = std::map<std::string, ControllerSpec>;
using TaskRegistry = std::map<std::string, TaskSpec>;

// Single-spec checks used when ingesting elements.
inline ValidationReport validate_controller(const ControllerSpec& c) {
  ValidationReport report;
  if (c.queues.input_normal == c.queues.input_priority)
    report.error("$.queues", "nameInputNormal and nameInputPriority must differ");
  if (!detail::is_absolute_url_template(c.connection.endpoint_url))
    report.error("$.connection.endpoint_url",
                 "not an absolute http(s) URL: '" + c.connection.endpoint_url + "'");
  return report;
}

inline ValidationReport validate_task(const TaskSpec& t, const ControllerRegistry& controllers) {
  ValidationReport report;
  if (!controllers.contains(t.controller_id))
    report.error("$.controllerId", "unresolved controllerId " + t.controller_id);
  return report;
}

namespace detail {

inline void validate_node(const TaskNode& node, const std::string& path,
                          const TaskRegistry& tasks, const ControllerRegistry& controllers,
                          const std::map<std::string, std::string>* execution_params,
                          ValidationReport& report) {
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, ServiceNode>) {
          auto task = tasks.find(n.task_id);
          if (task == tasks.end()) {
            report.error(child(path, "taskId"), "unresolved taskId " + n.task_id);
            return;
          }
          auto controller = controllers.find(task->second.controller_id);
          if (controller == controllers.end()) {
            report.error(child(path, "taskId"),
                         "unresolved controllerId " + task->second.controller_id +
                             " (referenced by task " + n.task_id + ")");
            return;
          }
          const ConnectionSpec& conn = controller->second.connection;
          if (conn.connection_type != ConnectionType::restapi)
            report.error(child(path, "taskId"),
                         "controller " + controller->first + " is not a restapi connection");
          if (!is_absolute_url_template(conn.endpoint_url))
            report.error(child(path, "taskId"),
                         "controller " + controller->first + " endpoint_url is not absolute: '" +
                             conn.endpoint_url + "'");
          for (const auto& list : {conn.parameters, conn.headers}) {
            for (const auto& p : list) {
              if (!p.required || p.default_value) continue;
              bool bound = execution_params && execution_params->contains(p.name);
              if (bound) continue;
              std::string msg = "required " + std::string(to_string(p.kind)) + " '" + p.name +
                                "' of controller " + controller->first + " has no default";
              if (execution_params) {
                report.error(child(path, "taskId"), msg + " and no execution-time value");
              } else {
                report.warning(child(path, "taskId"), msg + "; a value must be supplied at execution time");
              }
            }
          }
        } else if constexpr (std::is_same_v<T, ParallelBlock>) {
          if (n.input_combinator != CombinatorKind::split ||
              n.output_combinator != CombinatorKind::waitcombiner)
            report.error(child(path, "features"), "malformed combinator pairing");
          if (n.children.empty())
            report.error(child(path, "features"), "ParallelTask requires at least one child");
          for (std::size_t i = 0; i < n.children.size(); ++i)
            validate_node(n.children[i], at(path, "features.tasks", i), tasks, controllers,
                          execution_params, report);
        } else {
          for (std::size_t i = 0; i < n.children.size(); ++i)
            validate_node(n.children[i], at(path, "features.tasks", i), tasks, controllers,
                          execution_params, report);
        }
      },
      node.node);
}

}  // namespace detail

// Checks reference resolution, connection kinds and parameter bindings.
// With `execution_params` set (validate-before-execute), unbound required
// parameters are errors; without, they are warnings since a value may still
// be supplied at execution time.
inline ValidationReport validate(const WorkflowTemplate& t, const TaskRegistry& tasks,
                                 const ControllerRegistry& controllers,
                                 const std::map<std::string, std::string>* execution_params = nullptr) {
  ValidationReport report;
  for (std::size_t i = 0; i < t.tasks.size(); ++i)
    detail::validate_node(t.tasks[i], detail::at("$", "tasks", i), tasks, controllers,
                          execution_params, report);
  return report;
}

// ---------------------------------------------------------------------------
// Compilation
// ---------------------------------------------------------------------------

namespace detail {

struct GraphBuilder {
  ExecutionGraph g;

  int add(NodeKind kind, std::string task_id = {}) {
    int id = static_cast<int>(g.nodes.size());
    g.nodes.push_back({id, kind, std::move(task_id)});
    return id;
  }
  void edge(int from, int to) { g.edges.emplace_back(from, to); }

  // Sibling lists execute in ascending `order`.
  static std::vector<const TaskNode*> by_order(const std::vector<TaskNode>& nodes) {
    std::vector<const TaskNode*> sorted;
    sorted.reserve(nodes.size());
    for (const auto& n : nodes) sorted.push_back(&n);
    std::sort(sorted.begin(), sorted.end(),
              [](const TaskNode* a, const TaskNode* b) { return a->order() < b->order(); });
    return sorted;
  }

  // Returns (entry, exit) of the compiled subgraph.
  std::pair<int, int> compile_node(const TaskNode& node) {
    return std::visit(
        [&](const auto& n) -> std::pair<int, int> {
          using T = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<T, ServiceNode>) {
            int id = add(NodeKind::service, n.task_id);
            return {id, id};
          } else if constexpr (std::is_same_v<T, ParallelBlock>) {
            int split = add(NodeKind::split);
            int combiner = add(NodeKind::wait_combiner);
            for (const TaskNode* c : by_order(n.children)) {
              auto [entry, exit] = compile_node(*c);
              edge(split, entry);
              edge(exit, combiner);
            }
            return {split, combiner};
          } else {
            return compile_chain(n.children);
          }
        },
        node.node);
  }

  std::pair<int, int> compile_chain(const std::vector<TaskNode>& children) {
    int entry = -1, cursor = -1;
    for (const TaskNode* c : by_order(children)) {
      auto [e, x] = compile_node(*c);
      if (entry == -1) entry = e;
      if (cursor != -1) edge(cursor, e);
      cursor = x;
    }
    return {entry, cursor};
  }
};

}  // namespace detail

// Compiles a validated template into a Source -> ... -> Sink DAG.
// The top-level task list composes sequentially.
inline ExecutionGraph compile(const WorkflowTemplate& t) {
  detail::GraphBuilder b;
  int source = b.add(NodeKind::source);
  auto [entry, exit] = b.compile_chain(t.tasks);
  int sink = b.add(NodeKind::sink);
  if (entry == -1) {
    b.edge(source, sink);  // empty template: input flows straight through
  } else {
    b.edge(source, entry);
    b.edge(exit, sink);
  }
  b.g.topological_order();  // defensive cycle check
  return std::move(b.g);
}

}  // namespace cwm::cwdl
