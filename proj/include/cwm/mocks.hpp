#pragma once

// Deterministic stand-ins for annotation micro-services: accept NIF over
// HTTP, add gazetteer matches, and support async polling, latency, pausing
// and failure injection. Only for tests and demos.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "cwm/nif.hpp"
#include "cwm/utf8.hpp"

namespace cwm::mocks {

struct GazetteerEntry {
  std::string surface;
  std::string entity_class;
  std::string ident_ref;  // empty: no identRef triple
};

struct MockServiceConfig {
  std::vector<GazetteerEntry> gazetteer;
  enum class Mode { sync, async } mode = Mode::sync;
  std::chrono::milliseconds latency{0};
  int fail_next_n = 0;
  int port = 0;  // 0: pick an ephemeral port
};

// Exact-string matching, leftmost then onward, non-overlapping per entry.
// Offsets are converted from bytes to code points.
inline nif::NifDocument apply_gazetteer(const nif::NifDocument& doc,
                                        const std::vector<GazetteerEntry>& gazetteer) {
  nif::NifDocument out = doc;
  for (const auto& entry : gazetteer) {
    if (entry.surface.empty()) continue;
    std::size_t pos = 0;
    while ((pos = doc.context_text.find(entry.surface, pos)) != std::string::npos) {
      std::size_t begin = utf8::code_point_index(doc.context_text, pos);
      std::size_t end = begin + utf8::length(entry.surface);
      out = nif::annotate(out, begin, end, entry.entity_class,
                          entry.ident_ref.empty() ? std::nullopt
                                                  : std::optional<std::string>(entry.ident_ref));
      pos += entry.surface.size();
    }
  }
  return out;
}

struct LogEntry {
  std::uint64_t seq = 0;
  std::int64_t ts = 0;  // milliseconds since epoch
  std::size_t body_hash = 0;
};

class MockService {
 public:
  explicit MockService(MockServiceConfig config) : config_(std::move(config)) {
    fail_remaining_ = config_.fail_next_n;
    wire_routes();
  }

  ~MockService() { stop(); }

  void start() {
    if (listener_.joinable()) return;
    if (config_.port == 0) {
      port_ = server_.bind_to_any_port("127.0.0.1");
    } else {
      port_ = config_.port;
      if (!server_.bind_to_port("127.0.0.1", port_))
        throw std::runtime_error("mock service cannot bind port " + std::to_string(port_));
    }
    listener_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  void stop() {
    if (!listener_.joinable()) return;
    resume();
    server_.stop();
    listener_.join();
  }

  int port() const { return port_; }
  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/"; }

  void set_fail_next(int n) { fail_remaining_ = n; }

  // Paused handlers hold requests until resume(); lets tests observe
  // mid-run engine state.
  void pause() {
    std::lock_guard lock(pause_mu_);
    paused_ = true;
  }
  void resume() {
    {
      std::lock_guard lock(pause_mu_);
      paused_ = false;
    }
    pause_cv_.notify_all();
  }

  std::vector<LogEntry> request_log() const {
    std::lock_guard lock(log_mu_);
    return log_;
  }

  // Sequence numbers are comparable across all mock instances in a process.
  static std::uint64_t current_seq() { return global_seq().load(); }

 private:
  static std::atomic<std::uint64_t>& global_seq() {
    static std::atomic<std::uint64_t> seq{0};
    return seq;
  }

  void wire_routes() {
    server_.Post("/", [this](const httplib::Request& req, httplib::Response& res) {
      handle_annotate(req, res);
    });
    server_.Get("/jobs/:id", [this](const httplib::Request& req, httplib::Response& res) {
      handle_job(req, res);
    });
    server_.Get("/log", [this](const httplib::Request&, httplib::Response& res) {
      nlohmann::json out = nlohmann::json::array();
      {
        std::lock_guard lock(log_mu_);
        for (const auto& e : log_)
          out.push_back({{"seq", e.seq}, {"ts", e.ts}, {"bodyHash", std::to_string(e.body_hash)}});
      }
      res.set_content(out.dump(), "application/json");
    });
  }

  void log_request(const std::string& body) {
    LogEntry e;
    e.seq = ++global_seq();
    e.ts = std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
               .count();
    e.body_hash = std::hash<std::string>{}(body);
    std::lock_guard lock(log_mu_);
    log_.push_back(e);
  }

  void wait_if_paused() {
    std::unique_lock lock(pause_mu_);
    pause_cv_.wait(lock, [this] { return !paused_; });
  }

  void handle_annotate(const httplib::Request& req, httplib::Response& res) {
    log_request(req.body);
    wait_if_paused();

    std::string content_type = req.get_header_value("Content-Type");
    if (content_type.rfind("text/turtle", 0) != 0) {
      res.status = 415;
      res.set_content("expected text/turtle", "text/plain");
      return;
    }
    int remaining = fail_remaining_.load();
    while (remaining > 0 && !fail_remaining_.compare_exchange_weak(remaining, remaining - 1)) {
    }
    if (remaining > 0) {
      res.status = 500;
      res.set_content("injected failure", "text/plain");
      return;
    }

    nif::NifDocument doc;
    try {
      doc = nif::parse(req.body);
    } catch (const Error& e) {
      res.status = 400;
      res.set_content(std::string("bad NIF document: ") + e.what(), "text/plain");
      return;
    }
    std::string result = nif::serialize(apply_gazetteer(doc, config_.gazetteer));

    if (config_.mode == MockServiceConfig::Mode::sync) {
      if (config_.latency.count() > 0) std::this_thread::sleep_for(config_.latency);
      res.set_content(result, "text/turtle");
      return;
    }
    std::string job_id;
    {
      std::lock_guard lock(jobs_mu_);
      job_id = std::to_string(++next_job_);
      jobs_[job_id] = Job{std::chrono::steady_clock::now() + config_.latency, std::move(result)};
    }
    res.status = 202;
    res.set_header("Location", "/jobs/" + job_id);
  }

  void handle_job(const httplib::Request& req, httplib::Response& res) {
    std::lock_guard lock(jobs_mu_);
    auto it = jobs_.find(req.path_params.at("id"));
    if (it == jobs_.end()) {
      res.status = 404;
      return;
    }
    if (std::chrono::steady_clock::now() < it->second.ready_at) {
      res.status = 202;
      res.set_header("Location", "/jobs/" + it->first);
      return;
    }
    res.set_content(it->second.result, "text/turtle");
  }

  struct Job {
    std::chrono::steady_clock::time_point ready_at;
    std::string result;
  };

  MockServiceConfig config_;
  httplib::Server server_;
  std::thread listener_;
  int port_ = 0;

  std::atomic<int> fail_remaining_{0};

  std::mutex pause_mu_;
  std::condition_variable pause_cv_;
  bool paused_ = false;

  mutable std::mutex log_mu_;
  std::vector<LogEntry> log_;

  std::mutex jobs_mu_;
  std::map<std::string, Job> jobs_;
  std::uint64_t next_job_ = 0;
};

}  // namespace cwm::mocks
