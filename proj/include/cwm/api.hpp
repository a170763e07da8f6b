#pragma once

// REST management and execution surface. Twelve methods: init/stop the
// manager, CRUD over workflow elements, execute a workflow, query status,
// fetch results, cancel, plus an unauthenticated liveness probe. Every
// other endpoint requires a bearer token of an allowlisted user.

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "cwm/broker.hpp"
#include "cwm/controller.hpp"
#include "cwm/engine.hpp"
#include "cwm/registry.hpp"

namespace cwm {

struct Unauthenticated : Error {
  using Error::Error;
};
struct Forbidden : Error {
  using Error::Error;
};

struct Principal {
  std::string user_id;
};

struct User {
  std::string user_id;
  std::string token;
};

struct ServerConfig {
  std::string listen_address = "127.0.0.1";
  int port = 8080;  // 0 picks an ephemeral port
  std::filesystem::path data_dir;
  std::vector<User> allowlist;
  bool auto_init = true;
  BrokerConfig broker;
  EngineOptions engine;
  ControllerOptions controllers;

  static ServerConfig from_json(const nlohmann::json& j) {
    ServerConfig c;
    c.listen_address = j.value("listen", c.listen_address);
    c.port = j.value("port", c.port);
    if (j.contains("dataDir")) c.data_dir = j.at("dataDir").get<std::string>();
    for (const auto& u : j.value("allowlist", nlohmann::json::array()))
      c.allowlist.push_back({u.at("userId").get<std::string>(), u.at("token").get<std::string>()});
    c.auto_init = j.value("autoInit", true);
    if (j.contains("broker")) {
      const auto& b = j.at("broker");
      c.broker.visibility_timeout =
          std::chrono::milliseconds(b.value("visibilityTimeoutMs", 5000));
      c.broker.max_attempts = b.value("maxAttempts", 3);
      c.broker.max_payload_bytes = b.value("maxPayloadBytes", std::size_t{64} * 1024 * 1024);
    }
    if (j.contains("engine")) {
      const auto& e = j.at("engine");
      c.engine.base_uri = e.value("baseUri", c.engine.base_uri);
      c.engine.event_log_path = e.value("eventLog", "");
      if (e.contains("prioritySizeThreshold") && !e.at("prioritySizeThreshold").is_null())
        c.engine.priority_size_threshold = e.at("prioritySizeThreshold").get<std::size_t>();
    }
    if (j.contains("controllers")) {
      const auto& k = j.at("controllers");
      std::string mode = k.value("mode", "auto");
      c.controllers.mode = mode == "sync"    ? ExecMode::sync
                           : mode == "async" ? ExecMode::async_poll
                                             : ExecMode::auto_detect;
      c.controllers.request_timeout = std::chrono::milliseconds(k.value("requestTimeoutMs", 30000));
      c.controllers.poll.interval = std::chrono::milliseconds(k.value("pollIntervalMs", 200));
      c.controllers.poll.max_wait = std::chrono::milliseconds(k.value("pollMaxWaitMs", 10000));
    }
    return c;
  }

  static ServerConfig from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open config file " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw Error("malformed config file " + path.string() + ": " + e.what());
    }
    return from_json(j);
  }
};

namespace auth_detail {

// Constant-time comparison; length difference leaks only through the
// comparison against a same-length self-fold.
inline bool tokens_equal(std::string_view a, std::string_view b) {
  unsigned char diff = a.size() == b.size() ? 0 : 1;
  for (std::size_t i = 0; i < a.size(); ++i) {
    unsigned char other = i < b.size() ? static_cast<unsigned char>(b[i])
                                       : static_cast<unsigned char>(a[i]) ^ 0xFF;
    diff |= static_cast<unsigned char>(a[i]) ^ other;
  }
  return diff == 0;
}

}  // namespace auth_detail

// Token credentials plus a runtime-reloadable active-user set. A token that
// matches no user is Unauthenticated; a known user outside the active set
// is Forbidden.
class AccessControl {
 public:
  explicit AccessControl(std::vector<User> users) : users_(std::move(users)) {
    for (const auto& u : users_) active_.insert(u.user_id);
  }

  Principal check(std::string_view token) const {
    std::lock_guard lock(mu_);
    if (token.empty()) throw Unauthenticated("missing bearer token");
    const User* match = nullptr;
    for (const auto& u : users_) {
      if (auth_detail::tokens_equal(u.token, token)) match = &u;
    }
    if (!match) throw Unauthenticated("unknown token");
    if (!active_.contains(match->user_id))
      throw Forbidden("user '" + match->user_id + "' is not allowlisted");
    return Principal{match->user_id};
  }

  void set_allowlist(const std::vector<std::string>& user_ids) {
    std::lock_guard lock(mu_);
    active_ = {user_ids.begin(), user_ids.end()};
  }

 private:
  mutable std::mutex mu_;
  std::vector<User> users_;
  std::set<std::string> active_;
};

class ApiServer {
 public:
  explicit ApiServer(ServerConfig config)
      : config_(std::move(config)),
        registry_(config_.data_dir),
        broker_(config_.broker),
        access_(config_.allowlist) {
    registry_.load();
    engine_ = std::make_unique<Engine>(broker_, registry_, config_.engine);
    wire_routes();
  }

  ~ApiServer() { stop(); }

  void start() {
    if (listener_.joinable()) return;
    if (config_.port == 0) {
      port_ = server_.bind_to_any_port(config_.listen_address);
    } else {
      port_ = config_.port;
      if (!server_.bind_to_port(config_.listen_address, port_))
        throw Error("cannot bind " + config_.listen_address + ":" + std::to_string(port_));
    }
    listener_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    if (config_.auto_init) init();
  }

  void stop() {
    if (!listener_.joinable()) return;
    shutdown_runtime();
    server_.stop();
    listener_.join();
  }

  int port() const { return port_; }
  std::string base_url() const {
    return "http://" + config_.listen_address + ":" + std::to_string(port_);
  }

  AccessControl& access() { return access_; }
  Engine& engine() { return *engine_; }
  Registry& registry() { return registry_; }
  Broker& broker() { return broker_; }
  bool initialized() const {
    std::lock_guard lock(mu_);
    return initialized_;
  }

 private:
  using Request = httplib::Request;
  using Response = httplib::Response;

  // ---- lifecycle -----------------------------------------------------

  void init() {
    std::lock_guard lock(mu_);
    if (initialized_) return;
    for (const auto& [id, spec] : registry_.controllers()) {
      broker_.declare_queues(spec);
      start_controller_locked(spec);
    }
    engine_->start_pump();
    initialized_ = true;
  }

  void shutdown_runtime() {
    std::lock_guard lock(mu_);
    for (auto& [id, runtime] : runtimes_) runtime->stop();
    runtimes_.clear();
    engine_->stop_pump();
    initialized_ = false;
  }

  void start_controller_locked(const cwdl::ControllerSpec& spec) {
    auto runtime = std::make_unique<ControllerRuntime>(spec, broker_, config_.controllers);
    runtime->start();
    runtimes_[spec.controller_id] = std::move(runtime);
  }

  // ---- helpers -------------------------------------------------------

  static void reply_json(Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(2), "application/json");
  }

  static void reply_error(Response& res, int status, const std::string& message) {
    reply_json(res, status, {{"error", message}});
  }

  Principal authorize(const Request& req) const {
    std::string header = req.get_header_value("Authorization");
    const std::string scheme = "Bearer ";
    if (header.rfind(scheme, 0) != 0) throw Unauthenticated("missing bearer token");
    return access_.check(std::string_view(header).substr(scheme.size()));
  }

  // Wraps a handler with auth and uniform error mapping.
  template <typename Fn>
  auto guarded(Fn fn) {
    return [this, fn](const Request& req, Response& res) {
      try {
        Principal who = authorize(req);
        fn(who, req, res);
      } catch (const Unauthenticated& e) {
        reply_error(res, 401, e.what());
      } catch (const Forbidden& e) {
        reply_error(res, 403, e.what());
      } catch (const ValidationError& e) {
        reply_json(res, 400, e.report().to_json());
      } catch (const cwdl::ParseError& e) {
        ValidationReport r;
        r.error("$", e.what());
        reply_json(res, 400, r.to_json());
      } catch (const cwdl::SchemaError& e) {
        ValidationReport r;
        r.error(e.path(), e.what());
        reply_json(res, 400, r.to_json());
      } catch (const UnknownTemplateError& e) {
        reply_error(res, 404, e.what());
      } catch (const UnknownExecutionError& e) {
        reply_error(res, 404, e.what());
      } catch (const NotFinishedError& e) {
        reply_error(res, 409, e.what());
      } catch (const IllegalStateError& e) {
        reply_error(res, 409, e.what());
      } catch (const ConflictError& e) {
        reply_error(res, 409, e.what());
      } catch (const FailedExecutionError& e) {
        reply_json(res, 422, {{"error", e.what()}, {"failure", e.failure().to_json()}});
      } catch (const Error& e) {
        reply_error(res, 500, e.what());
      }
    };
  }

  static bool known_kind(const std::string& kind) {
    return kind == "controllers" || kind == "tasks" || kind == "templates" ||
           kind == "executions";
  }

  // ---- element CRUD --------------------------------------------------

  nlohmann::json element_json(const std::string& kind, const std::string& id) {
    if (kind == "controllers") {
      if (auto c = registry_.controller(id)) return cwdl::to_json(*c);
    } else if (kind == "tasks") {
      if (auto t = registry_.task(id)) return cwdl::to_json(*t);
    } else if (kind == "templates") {
      if (auto t = registry_.workflow_template(id)) return cwdl::to_json(*t);
    } else if (kind == "executions") {
      if (engine_->exists(id)) return engine_->status(id).to_json();
    }
    return nlohmann::json();
  }

  // Parses + validates one element body; returns its id. Throws cwdl
  // errors or ValidationError; never stores an invalid element.
  std::string ingest(const std::string& kind, const std::string& body, bool replace,
                     const std::string& expected_id) {
    if (kind == "controllers") {
      cwdl::ControllerSpec spec = cwdl::parse_controller(body);
      check_id(spec.controller_id, replace, expected_id, kind);
      ValidationReport report = cwdl::validate_controller(spec);
      if (!report.ok()) throw ValidationError(std::move(report));
      {
        std::lock_guard lock(mu_);
        broker_.declare_queues(spec);  // queue-name conflicts are caught up front
        if (initialized_) {
          if (auto it = runtimes_.find(spec.controller_id); it != runtimes_.end()) {
            it->second->stop();
            runtimes_.erase(it);
          }
          start_controller_locked(spec);
        }
      }
      registry_.put(spec);
      return spec.controller_id;
    }
    if (kind == "tasks") {
      cwdl::TaskSpec spec = cwdl::parse_task(body);
      check_id(spec.task_id, replace, expected_id, kind);
      ValidationReport report = cwdl::validate_task(spec, registry_.controllers());
      if (!report.ok()) throw ValidationError(std::move(report));
      registry_.put(spec);
      return spec.task_id;
    }
    cwdl::WorkflowTemplate tmpl = cwdl::parse_template(body);
    check_id(tmpl.id, replace, expected_id, kind);
    ValidationReport report = cwdl::validate(tmpl, registry_.tasks(), registry_.controllers());
    if (!report.ok()) throw ValidationError(std::move(report));
    registry_.put(tmpl);
    return tmpl.id;
  }

  void check_id(const std::string& id, bool replace, const std::string& expected_id,
                const std::string& kind) {
    if (replace) {
      if (id != expected_id) {
        ValidationReport r;
        r.error("$", "element id '" + id + "' does not match the path id '" + expected_id + "'");
        throw ValidationError(std::move(r));
      }
    } else if (registry_.contains(kind, id)) {
      throw ConflictError(kind + "/" + id + " already exists");
    }
  }

  // Static references between elements plus live references from
  // non-terminal executions.
  std::optional<std::string> referenced_by(const std::string& kind, const std::string& id) {
    if (engine_->references(kind, id))
      return "a non-terminal execution references " + kind + "/" + id;
    if (kind == "controllers") {
      for (const auto& [task_id, task] : registry_.tasks())
        if (task.controller_id == id) return "task '" + task_id + "' references controller '" + id + "'";
    }
    if (kind == "tasks") {
      for (const auto& [tmpl_id, tmpl] : registry_.templates()) {
        auto ids = cwdl::collect_task_ids(tmpl);
        if (std::find(ids.begin(), ids.end(), id) != ids.end())
          return "template '" + tmpl_id + "' references task '" + id + "'";
      }
    }
    return std::nullopt;
  }

  // ---- routes --------------------------------------------------------

  void wire_routes() {
    // (12) liveness, the only anonymous endpoint
    server_.Get("/health", [](const Request&, Response& res) {
      reply_json(res, 200, {{"status", "ok"}});
    });

    // (1) initialize: declare queues, start controllers and the engine
    server_.Post("/admin/init", guarded([this](const Principal&, const Request&, Response& res) {
      init();
      reply_json(res, 200, {{"status", "running"}});
    }));

    // (2) graceful stop: drain in-flight work, keep serving queries
    server_.Post("/admin/stop", guarded([this](const Principal&, const Request&, Response& res) {
      shutdown_runtime();
      reply_json(res, 200, {{"status", "stopped"}});
    }));

    // (3) list elements of a kind
    server_.Get("/elements/:kind", guarded([this](const Principal&, const Request& req, Response& res) {
      std::string kind = req.path_params.at("kind");
      if (!known_kind(kind)) return reply_error(res, 404, "unknown element kind '" + kind + "'");
      nlohmann::json out = nlohmann::json::array();
      if (kind == "controllers")
        for (const auto& [id, c] : registry_.controllers()) out.push_back(cwdl::to_json(c));
      if (kind == "tasks")
        for (const auto& [id, t] : registry_.tasks()) out.push_back(cwdl::to_json(t));
      if (kind == "templates")
        for (const auto& [id, t] : registry_.templates()) out.push_back(cwdl::to_json(t));
      if (kind == "executions")
        for (const auto& id : engine_->execution_ids())
          out.push_back(engine_->status(id).to_json());
      reply_json(res, 200, out);
    }));

    // (4) view one element
    server_.Get("/elements/:kind/:id", guarded([this](const Principal&, const Request& req, Response& res) {
      std::string kind = req.path_params.at("kind");
      std::string id = req.path_params.at("id");
      if (!known_kind(kind)) return reply_error(res, 404, "unknown element kind '" + kind + "'");
      nlohmann::json body = element_json(kind, id);
      if (body.is_null()) return reply_error(res, 404, kind + "/" + id + " not found");
      reply_json(res, 200, body);
    }));

    // (5) create an element from its CWDL definition
    server_.Post("/elements/:kind", guarded([this](const Principal&, const Request& req, Response& res) {
      std::string kind = req.path_params.at("kind");
      if (!known_kind(kind)) return reply_error(res, 404, "unknown element kind '" + kind + "'");
      if (kind == "executions")
        return reply_error(res, 405, "executions are created via POST /executions");
      std::string id = ingest(kind, req.body, false, "");
      reply_json(res, 201, {{"id", id}});
    }));

    // (6) modify an element; re-validated, refused while referenced
    server_.Put("/elements/:kind/:id", guarded([this](const Principal&, const Request& req, Response& res) {
      std::string kind = req.path_params.at("kind");
      std::string id = req.path_params.at("id");
      if (!known_kind(kind)) return reply_error(res, 404, "unknown element kind '" + kind + "'");
      if (kind == "executions") return reply_error(res, 405, "executions cannot be modified");
      if (!registry_.contains(kind, id))
        return reply_error(res, 404, kind + "/" + id + " not found");
      if (auto reason = referenced_by(kind, id))
        return reply_error(res, 409, *reason);
      ingest(kind, req.body, true, id);
      reply_json(res, 200, {{"id", id}});
    }));

    // (7) delete an element; refused while referenced
    server_.Delete("/elements/:kind/:id", guarded([this](const Principal&, const Request& req, Response& res) {
      std::string kind = req.path_params.at("kind");
      std::string id = req.path_params.at("id");
      if (!known_kind(kind)) return reply_error(res, 404, "unknown element kind '" + kind + "'");
      if (kind == "executions") {
        if (!engine_->exists(id)) return reply_error(res, 404, "executions/" + id + " not found");
        engine_->erase(id);  // throws IllegalStateError (409) when non-terminal
        res.status = 204;
        return;
      }
      if (!registry_.contains(kind, id))
        return reply_error(res, 404, kind + "/" + id + " not found");
      if (auto reason = referenced_by(kind, id))
        return reply_error(res, 409, *reason);
      if (kind == "controllers") {
        std::lock_guard lock(mu_);
        if (auto it = runtimes_.find(id); it != runtimes_.end()) {
          it->second->stop();
          runtimes_.erase(it);
        }
      }
      registry_.remove(kind, id);
      res.status = 204;
    }));

    // (8) execute a workflow
    server_.Post("/executions", guarded([this](const Principal&, const Request& req, Response& res) {
      if (!initialized()) return reply_error(res, 409, "manager is not initialized");
      nlohmann::json body;
      try {
        body = nlohmann::json::parse(req.body);
      } catch (const nlohmann::json::exception& e) {
        ValidationReport r;
        r.error("$", std::string("malformed JSON body: ") + e.what());
        throw ValidationError(std::move(r));
      }
      if (!body.contains("templateId") || !body.contains("input")) {
        ValidationReport r;
        r.error("$", "body requires templateId and input");
        throw ValidationError(std::move(r));
      }
      std::map<std::string, std::string> overrides;
      nlohmann::json overrides_json = body.value("paramOverrides", nlohmann::json::object());
      for (const auto& [k, v] : overrides_json.items()) overrides[k] = v.get<std::string>();
      Priority priority =
          body.value("priority", "normal") == "priority" ? Priority::priority : Priority::normal;
      std::string id = engine_->create_execution(
          body.at("templateId").get<std::string>(), body.at("input").get<std::string>(),
          body.value("inputType", "text/plain"), priority, std::move(overrides));
      engine_->start(id);
      reply_json(res, 201, {{"executionId", id}});
    }));

    // (9) status view
    server_.Get("/executions/:id/status", guarded([this](const Principal&, const Request& req, Response& res) {
      reply_json(res, 200, engine_->status(req.path_params.at("id")).to_json());
    }));

    // (10) result: 409 while unfinished, 422 for failures
    server_.Get("/executions/:id/result", guarded([this](const Principal&, const Request& req, Response& res) {
      std::string payload = engine_->result(req.path_params.at("id"));
      res.status = 200;
      res.set_content(payload, "text/turtle");
    }));

    // (11) cancel
    server_.Post("/executions/:id/cancel", guarded([this](const Principal&, const Request& req, Response& res) {
      engine_->cancel(req.path_params.at("id"));
      reply_json(res, 200, {{"status", "cancelled"}});
    }));
  }

  ServerConfig config_;
  Registry registry_;
  Broker broker_;
  AccessControl access_;
  std::unique_ptr<Engine> engine_;

  httplib::Server server_;
  std::thread listener_;
  int port_ = 0;

  mutable std::mutex mu_;
  bool initialized_ = false;
  std::map<std::string, std::unique_ptr<ControllerRuntime>> runtimes_;
};

}  // namespace cwm
