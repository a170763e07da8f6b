#pragma once

// Workflow Execution Engine: instantiates templates as executions, walks
// the compiled graph, dispatches envelopes to controller queues, merges
// fan-in results and tracks per-node and per-execution state.
//
// All waiting is mediated by the broker; the engine itself never blocks on
// service latency. Per-execution mutations are serialized under one lock.

#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "cwm/broker.hpp"
#include "cwm/controller.hpp"
#include "cwm/cwdl.hpp"
#include "cwm/nif.hpp"
#include "cwm/registry.hpp"

namespace cwm {

struct UnknownTemplateError : Error {
  using Error::Error;
};
struct UnknownExecutionError : Error {
  using Error::Error;
};
struct IllegalStateError : Error {
  using Error::Error;
};
struct NotFinishedError : Error {
  using Error::Error;
};
struct UnknownCorrelationError : Error {
  using Error::Error;
};

// Template or input rejected before an execution is created.
struct ValidationError : Error {
  explicit ValidationError(ValidationReport report)
      : Error(summarize(report)), report_(std::move(report)) {}
  const ValidationReport& report() const { return report_; }

 private:
  static std::string summarize(const ValidationReport& r) {
    std::string msg = "validation failed with " + std::to_string(r.error_count()) + " error(s)";
    for (const auto& f : r.findings)
      if (f.severity == Severity::error) return msg + ": " + f.path + ": " + f.message;
    return msg;
  }
  ValidationReport report_;
};

struct ExecutionFailure {
  std::string node_id;
  int status = 0;
  std::string detail;
  int attempts = 0;

  nlohmann::json to_json() const {
    return {{"nodeId", node_id}, {"status", status}, {"detail", detail}, {"attempts", attempts}};
  }
};

struct FailedExecutionError : Error {
  explicit FailedExecutionError(ExecutionFailure failure)
      : Error("execution failed at node " + failure.node_id + ": " + failure.detail),
        failure_(std::move(failure)) {}
  const ExecutionFailure& failure() const { return failure_; }

 private:
  ExecutionFailure failure_;
};

enum class ExecState { pending, running, completed, failed, cancelled };
enum class NodeState { waiting, dispatched, done, errored };

inline const char* to_string(ExecState s) {
  switch (s) {
    case ExecState::pending: return "PENDING";
    case ExecState::running: return "RUNNING";
    case ExecState::completed: return "COMPLETED";
    case ExecState::failed: return "FAILED";
    case ExecState::cancelled: return "CANCELLED";
  }
  return "?";
}
inline const char* to_string(NodeState s) {
  switch (s) {
    case NodeState::waiting: return "WAITING";
    case NodeState::dispatched: return "DISPATCHED";
    case NodeState::done: return "DONE";
    case NodeState::errored: return "ERRORED";
  }
  return "?";
}

inline bool is_terminal(ExecState s) {
  return s == ExecState::completed || s == ExecState::failed || s == ExecState::cancelled;
}

namespace time_detail {

inline std::string iso8601(std::chrono::system_clock::time_point tp) {
  std::time_t t = std::chrono::system_clock::to_time_t(tp);
  std::tm tm{};
  gmtime_r(&t, &tm);
  auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(tp.time_since_epoch()) % 1000;
  char buf[80];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec,
                static_cast<int>(ms.count()));
  return buf;
}

}  // namespace time_detail

struct NodeStatus {
  int id = 0;
  cwdl::NodeKind kind = cwdl::NodeKind::service;
  std::string task_id;
  NodeState state = NodeState::waiting;
};

struct ExecutionStatus {
  std::string execution_id;
  std::string template_id;
  ExecState state = ExecState::pending;
  Priority priority = Priority::normal;
  std::vector<NodeStatus> nodes;
  std::chrono::system_clock::time_point created_at;
  std::optional<std::chrono::system_clock::time_point> finished_at;
  std::optional<ExecutionFailure> failure;

  nlohmann::json to_json() const {
    nlohmann::json node_list = nlohmann::json::array();
    for (const auto& n : nodes) {
      nlohmann::json j = {{"id", n.id},
                          {"kind", cwdl::to_string(n.kind)},
                          {"state", cwm::to_string(n.state)}};
      if (!n.task_id.empty()) j["taskId"] = n.task_id;
      node_list.push_back(std::move(j));
    }
    nlohmann::json out = {{"executionId", execution_id},
                          {"templateId", template_id},
                          {"state", cwm::to_string(state)},
                          {"priority", cwm::to_string(priority)},
                          {"nodes", node_list},
                          {"createdAt", time_detail::iso8601(created_at)}};
    if (finished_at) out["finishedAt"] = time_detail::iso8601(*finished_at);
    if (failure) out["failure"] = failure->to_json();
    return out;
  }
};

struct EngineMetrics {
  std::uint64_t late_replies = 0;
  std::uint64_t duplicate_replies = 0;
  std::uint64_t unknown_correlations = 0;
};

struct EngineOptions {
  std::string reply_queue = "cwm.replies";
  std::string base_uri = "http://cwm.local/documents/";
  // Inputs at or below this many bytes are promoted to the priority class
  // even when submitted as normal traffic.
  std::optional<std::size_t> priority_size_threshold;
  std::string event_log_path;  // empty: event log disabled
  std::chrono::milliseconds pump_wait{50};
};

class Engine {
 public:
  Engine(Broker& broker, Registry& registry, EngineOptions options = {})
      : broker_(broker), registry_(registry), options_(std::move(options)) {
    reply_pair_ =
        broker_.declare_queue_pair("engine", options_.reply_queue, options_.reply_queue + ".prio");
    if (!options_.event_log_path.empty())
      event_log_.open(options_.event_log_path, std::ios::app);
  }

  ~Engine() { stop_pump(); }

  const QueuePair& reply_queue_pair() const { return reply_pair_; }

  // Validates, compiles and registers a new execution in PENDING state.
  // Raw text input is wrapped into a fresh NIF context; turtle input must
  // parse as a NIF document.
  std::string create_execution(const std::string& template_id, const std::string& input,
                               const std::string& content_type, Priority priority,
                               std::map<std::string, std::string> param_overrides = {}) {
    auto tmpl = registry_.workflow_template(template_id);
    if (!tmpl) throw UnknownTemplateError("unknown template '" + template_id + "'");

    auto tasks = registry_.tasks();
    auto controllers = registry_.controllers();
    ValidationReport report = cwdl::validate(*tmpl, tasks, controllers, &param_overrides);
    if (!report.ok()) throw ValidationError(std::move(report));

    std::string payload;
    if (content_type.rfind("text/turtle", 0) == 0) {
      try {
        payload = nif::serialize(nif::parse(input));
      } catch (const Error& e) {
        ValidationReport r;
        r.error("$.input", std::string("input is not a valid NIF document: ") + e.what());
        throw ValidationError(std::move(r));
      }
    } else if (content_type.rfind("text/plain", 0) == 0 || content_type.empty()) {
      payload = nif::serialize(nif::make_context(input, options_.base_uri));
    } else {
      ValidationReport r;
      r.error("$.input", "unsupported input content type '" + content_type + "'");
      throw ValidationError(std::move(r));
    }

    Execution exec;
    exec.template_id = template_id;
    exec.graph = cwdl::compile(*tmpl);
    exec.priority = effective_priority(priority, input.size());
    exec.param_overrides = std::move(param_overrides);
    exec.created_at = std::chrono::system_clock::now();
    for (const auto& n : exec.graph.nodes) exec.node_states[n.id] = NodeState::waiting;
    exec.payloads[exec.graph.source_id()] = std::move(payload);

    exec.referenced.insert("templates/" + template_id);
    for (const auto& task_id : cwdl::collect_task_ids(*tmpl)) {
      const cwdl::TaskSpec& task = tasks.at(task_id);
      const cwdl::ControllerSpec& controller = controllers.at(task.controller_id);
      exec.task_queues[task_id] =
          QueuePair{controller.queues.input_normal, controller.queues.input_priority};
      exec.referenced.insert("tasks/" + task_id);
      exec.referenced.insert("controllers/" + task.controller_id);
    }

    std::lock_guard lock(mu_);
    std::string id = "ex-" + std::to_string(++next_execution_);
    exec.id = id;
    log_event(id, "", std::string("->") + cwm::to_string(ExecState::pending));
    executions_.emplace(id, std::move(exec));
    return id;
  }

  void start(const std::string& execution_id) {
    std::lock_guard lock(mu_);
    Execution& exec = find_locked(execution_id);
    if (exec.state != ExecState::pending)
      throw IllegalStateError("execution " + execution_id + " is " + cwm::to_string(exec.state) +
                              ", not PENDING");
    transition_locked(exec, ExecState::running);
    set_node_state_locked(exec, exec.graph.source_id(), NodeState::done);
    propagate_locked(exec);
  }

  // Applies one reply envelope. Replies to unknown executions raise
  // UnknownCorrelationError (the pump dead-letters them); replies to
  // terminal executions or DONE nodes are ignored idempotently.
  void handle_result(const Envelope& env) {
    std::lock_guard lock(mu_);
    auto it = executions_.find(env.execution_id);
    if (it == executions_.end()) {
      metrics_.unknown_correlations++;
      throw UnknownCorrelationError("no execution '" + env.execution_id + "'");
    }
    Execution& exec = it->second;
    if (is_terminal(exec.state)) {
      metrics_.late_replies++;
      return;
    }
    int node_id = -1;
    try {
      node_id = std::stoi(env.node_id);
    } catch (...) {
    }
    if (node_id < 0 || !exec.node_states.contains(node_id)) {
      metrics_.unknown_correlations++;
      throw UnknownCorrelationError("execution " + env.execution_id + " has no node '" +
                                    env.node_id + "'");
    }
    NodeState node_state = exec.node_states.at(node_id);
    if (node_state == NodeState::done) {
      metrics_.duplicate_replies++;
      return;
    }
    if (node_state != NodeState::dispatched) {
      metrics_.unknown_correlations++;
      throw UnknownCorrelationError("node " + env.node_id + " of execution " + env.execution_id +
                                    " was never dispatched");
    }

    if (env.content_type.rfind(kProblemContentType, 0) == 0) {
      ExecutionFailure failure;
      failure.node_id = env.node_id;
      try {
        nlohmann::json problem = nlohmann::json::parse(env.payload);
        failure.status = problem.value("status", 0);
        failure.detail = problem.value("detail", "");
        failure.attempts = problem.value("attempts", 0);
      } catch (...) {
        failure.detail = env.payload;
      }
      set_node_state_locked(exec, node_id, NodeState::errored);
      exec.failure = std::move(failure);
      transition_locked(exec, ExecState::failed);  // partial payloads stay inspectable
      return;
    }

    exec.payloads[node_id] = env.payload;
    set_node_state_locked(exec, node_id, NodeState::done);
    propagate_locked(exec);
  }

  ExecutionStatus status(const std::string& execution_id) const {
    std::lock_guard lock(mu_);
    const Execution& exec = find_locked(execution_id);
    ExecutionStatus s;
    s.execution_id = exec.id;
    s.template_id = exec.template_id;
    s.state = exec.state;
    s.priority = exec.priority;
    s.created_at = exec.created_at;
    s.finished_at = exec.finished_at;
    s.failure = exec.failure;
    for (const auto& n : exec.graph.nodes)
      s.nodes.push_back({n.id, n.kind, n.task_id, exec.node_states.at(n.id)});
    return s;
  }

  std::vector<std::string> execution_ids() const {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    for (const auto& [id, _] : executions_) out.push_back(id);
    return out;
  }

  bool exists(const std::string& execution_id) const {
    std::lock_guard lock(mu_);
    return executions_.contains(execution_id);
  }

  // Final NIF payload of a COMPLETED execution.
  std::string result(const std::string& execution_id) const {
    std::lock_guard lock(mu_);
    const Execution& exec = find_locked(execution_id);
    if (exec.state == ExecState::completed) return *exec.result;
    if (exec.state == ExecState::failed) throw FailedExecutionError(*exec.failure);
    throw NotFinishedError("execution " + execution_id + " is " + cwm::to_string(exec.state));
  }

  void cancel(const std::string& execution_id) {
    std::lock_guard lock(mu_);
    Execution& exec = find_locked(execution_id);
    if (is_terminal(exec.state))
      throw IllegalStateError("execution " + execution_id + " already " +
                              cwm::to_string(exec.state));
    transition_locked(exec, ExecState::cancelled);
  }

  // Removes a terminal execution's record.
  bool erase(const std::string& execution_id) {
    std::lock_guard lock(mu_);
    auto it = executions_.find(execution_id);
    if (it == executions_.end()) return false;
    if (!is_terminal(it->second.state))
      throw IllegalStateError("execution " + execution_id + " is still " +
                              cwm::to_string(it->second.state));
    executions_.erase(it);
    return true;
  }

  // Payloads produced so far, keyed by node id; kept for inspection after
  // failures and cancellations.
  std::map<int, std::string> branch_results(const std::string& execution_id) const {
    std::lock_guard lock(mu_);
    return find_locked(execution_id).payloads;
  }

  bool references(const std::string& kind, const std::string& id) const {
    std::lock_guard lock(mu_);
    for (const auto& [_, exec] : executions_) {
      if (is_terminal(exec.state)) continue;
      if (exec.referenced.contains(kind + "/" + id)) return true;
    }
    return false;
  }

  EngineMetrics metrics() const {
    std::lock_guard lock(mu_);
    return metrics_;
  }

  // Blocks until the execution reaches a terminal state.
  bool wait_terminal(const std::string& execution_id, std::chrono::milliseconds timeout) {
    std::unique_lock lock(mu_);
    return terminal_cv_.wait_for(lock, timeout, [&] {
      auto it = executions_.find(execution_id);
      return it != executions_.end() && is_terminal(it->second.state);
    });
  }

  // Reply consumer; one thread feeding handle_result.
  void start_pump() {
    if (pump_.joinable()) return;
    pump_ = std::jthread([this](std::stop_token st) {
      while (!st.stop_requested()) {
        std::optional<Delivery> d;
        try {
          d = broker_.consume_next(reply_pair_, options_.pump_wait);
        } catch (const Error&) {
          return;
        }
        if (!d) continue;
        try {
          handle_result(d->envelope);
          broker_.ack(d->tag);
        } catch (const UnknownCorrelationError& e) {
          std::fprintf(stderr, "[engine] %s\n", e.what());
          broker_.nack(d->tag, false);
        } catch (const Error& e) {
          std::fprintf(stderr, "[engine] reply handling failed: %s\n", e.what());
          broker_.nack(d->tag, false);
        }
      }
    });
  }

  void stop_pump() {
    if (!pump_.joinable()) return;
    pump_.request_stop();
    pump_.join();
  }

 private:
  struct Execution {
    std::string id;
    std::string template_id;
    ExecState state = ExecState::pending;
    Priority priority = Priority::normal;
    cwdl::ExecutionGraph graph;
    std::map<int, NodeState> node_states;
    std::map<int, std::string> payloads;
    std::map<std::string, QueuePair> task_queues;
    std::set<std::string> referenced;  // "kind/id" of elements this run uses
    std::map<std::string, std::string> param_overrides;
    std::optional<std::string> result;
    std::optional<ExecutionFailure> failure;
    std::chrono::system_clock::time_point created_at;
    std::optional<std::chrono::system_clock::time_point> finished_at;
  };

  Priority effective_priority(Priority requested, std::size_t input_bytes) const {
    if (requested == Priority::priority) return requested;
    if (options_.priority_size_threshold && input_bytes <= *options_.priority_size_threshold)
      return Priority::priority;
    return Priority::normal;
  }

  Execution& find_locked(const std::string& id) {
    auto it = executions_.find(id);
    if (it == executions_.end()) throw UnknownExecutionError("unknown execution '" + id + "'");
    return it->second;
  }
  const Execution& find_locked(const std::string& id) const {
    auto it = executions_.find(id);
    if (it == executions_.end()) throw UnknownExecutionError("unknown execution '" + id + "'");
    return it->second;
  }

  void log_event(const std::string& execution_id, const std::string& node_id,
                 const std::string& transition) {
    if (!event_log_.is_open()) return;
    nlohmann::json line = {{"ts", time_detail::iso8601(std::chrono::system_clock::now())},
                           {"executionId", execution_id},
                           {"nodeId", node_id},
                           {"transition", transition}};
    event_log_ << line.dump() << "\n";
    event_log_.flush();
  }

  void transition_locked(Execution& exec, ExecState next) {
    log_event(exec.id, "",
              std::string(cwm::to_string(exec.state)) + "->" + cwm::to_string(next));
    exec.state = next;
    if (is_terminal(next)) {
      exec.finished_at = std::chrono::system_clock::now();
      terminal_cv_.notify_all();
    }
  }

  void set_node_state_locked(Execution& exec, int node_id, NodeState next) {
    NodeState& current = exec.node_states.at(node_id);
    log_event(exec.id, std::to_string(node_id),
              std::string(cwm::to_string(current)) + "->" + cwm::to_string(next));
    current = next;
  }

  // Dispatches every node whose dependencies are satisfied; runs to a
  // fixpoint. Only meaningful while RUNNING (cancellation suppresses
  // pending dispatches by leaving this early).
  void propagate_locked(Execution& exec) {
    bool changed = true;
    while (changed && exec.state == ExecState::running) {
      changed = false;
      for (const auto& node : exec.graph.nodes) {
        if (exec.node_states.at(node.id) != NodeState::waiting) continue;
        auto preds = exec.graph.predecessors(node.id);
        bool ready = true;
        for (int p : preds)
          if (exec.node_states.at(p) != NodeState::done) ready = false;
        if (!ready) continue;

        switch (node.kind) {
          case cwdl::NodeKind::source:
            set_node_state_locked(exec, node.id, NodeState::done);
            break;
          case cwdl::NodeKind::service:
            dispatch_service_locked(exec, node, exec.payloads.at(preds.front()));
            break;
          case cwdl::NodeKind::split:
            // payload duplicates by value into each successor's envelope
            exec.payloads[node.id] = exec.payloads.at(preds.front());
            set_node_state_locked(exec, node.id, NodeState::done);
            break;
          case cwdl::NodeKind::wait_combiner: {
            try {
              std::vector<nif::NifDocument> docs;
              for (int p : preds) docs.push_back(nif::parse(exec.payloads.at(p)));
              exec.payloads[node.id] = nif::serialize(nif::merge(docs));
            } catch (const Error& e) {
              set_node_state_locked(exec, node.id, NodeState::errored);
              exec.failure = ExecutionFailure{std::to_string(node.id), 0,
                                              std::string("combiner failed: ") + e.what(), 0};
              transition_locked(exec, ExecState::failed);
              return;
            }
            set_node_state_locked(exec, node.id, NodeState::done);
            break;
          }
          case cwdl::NodeKind::sink:
            exec.payloads[node.id] = exec.payloads.at(preds.front());
            exec.result = exec.payloads.at(node.id);
            set_node_state_locked(exec, node.id, NodeState::done);
            transition_locked(exec, ExecState::completed);
            break;
        }
        changed = true;
      }
    }
  }

  void dispatch_service_locked(Execution& exec, const cwdl::GraphNode& node,
                               const std::string& payload) {
    const QueuePair& pair = exec.task_queues.at(node.task_id);
    Envelope env;
    env.message_id = broker_.next_message_id();
    env.execution_id = exec.id;
    env.node_id = std::to_string(node.id);
    env.reply_queue =
        exec.priority == Priority::priority ? reply_pair_.priority : reply_pair_.normal;
    env.priority = exec.priority;
    env.content_type = "text/turtle";
    env.payload = payload;
    env.param_overrides = exec.param_overrides;
    const std::string& queue = exec.priority == Priority::priority ? pair.priority : pair.normal;
    set_node_state_locked(exec, node.id, NodeState::dispatched);
    broker_.publish(queue, std::move(env));
  }

  Broker& broker_;
  Registry& registry_;
  EngineOptions options_;
  QueuePair reply_pair_;

  mutable std::mutex mu_;
  std::condition_variable_any terminal_cv_;
  std::map<std::string, Execution> executions_;
  std::uint64_t next_execution_ = 0;
  EngineMetrics metrics_;
  std::ofstream event_log_;
  std::jthread pump_;
};

// ---------------------------------------------------------------------------
// Reference interpreter (oracle)
// ---------------------------------------------------------------------------

// Executes the compiled graph strictly sequentially in one fixed
// topological order, applying nif::merge at combiners. Deterministic
// service behaviours make this the oracle for the concurrent engine.
inline std::string reference_interpreter(
    const cwdl::WorkflowTemplate& tmpl, const std::string& input_payload,
    const std::map<std::string, std::function<std::string(const std::string&)>>& service_fns) {
  cwdl::ExecutionGraph graph = cwdl::compile(tmpl);
  std::map<int, std::string> payloads;
  std::string final_payload;
  for (int id : graph.topological_order()) {
    const cwdl::GraphNode& node = graph.nodes.at(static_cast<std::size_t>(id));
    auto preds = graph.predecessors(id);
    switch (node.kind) {
      case cwdl::NodeKind::source:
        payloads[id] = input_payload;
        break;
      case cwdl::NodeKind::service:
        payloads[id] = service_fns.at(node.task_id)(payloads.at(preds.front()));
        break;
      case cwdl::NodeKind::split:
        payloads[id] = payloads.at(preds.front());
        break;
      case cwdl::NodeKind::wait_combiner: {
        std::vector<nif::NifDocument> docs;
        for (int p : preds) docs.push_back(nif::parse(payloads.at(p)));
        payloads[id] = nif::serialize(nif::merge(docs));
        break;
      }
      case cwdl::NodeKind::sink:
        final_payload = payloads.at(preds.front());
        break;
    }
  }
  return final_payload;
}

}  // namespace cwm
