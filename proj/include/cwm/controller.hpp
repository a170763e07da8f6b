#pragma once

// Per-service proxy runtime: consumes envelopes from a controller's queue
// pair, turns them into HTTP requests per the controller's ConnectionSpec,
// executes them synchronously or via the 202+Location polling convention,
// and publishes the result to the envelope's reply queue.

#include <chrono>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "cwm/broker.hpp"
#include "cwm/cwdl.hpp"

namespace cwm {

using namespace std::chrono_literals;

struct MissingParameterError : Error {
  using Error::Error;
};
struct ConnectError : Error {
  using Error::Error;
};
struct TimeoutError : Error {
  using Error::Error;
};
struct ProtocolError : Error {
  using Error::Error;
};

// Non-2xx service response.
struct ServiceError : Error {
  ServiceError(int status, std::string body)
      : Error("service returned status " + std::to_string(status)),
        status_(status),
        body_(std::move(body)) {}
  int status() const { return status_; }
  const std::string& body() const { return body_; }

 private:
  int status_;
  std::string body_;
};

struct RequestDescription {
  std::string method;
  std::string url;  // absolute, with query parameters applied
  std::vector<std::pair<std::string, std::string>> headers;
  std::string body;
};

struct ServiceResponse {
  int status = 0;
  std::string content_type;
  std::string body;
  std::optional<std::string> location;
};

struct PollPolicy {
  std::chrono::milliseconds interval{200};
  std::chrono::milliseconds max_wait{10000};
};

// ---------------------------------------------------------------------------
// Request construction
// ---------------------------------------------------------------------------

namespace http_detail {

// Conservative query encoding; keeps sub-delimiters like ';' that the wire
// format uses inside values ("model_1;model_2").
inline std::string encode_query_value(std::string_view v) {
  static const char* hex = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : v) {
    bool safe = (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') ||
                std::string_view("-._~!$'()*,;:@/").find(static_cast<char>(c)) !=
                    std::string_view::npos;
    if (safe) {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(hex[c >> 4]);
      out.push_back(hex[c & 0xF]);
    }
  }
  return out;
}

struct ParsedUrl {
  std::string scheme;
  std::string host;
  int port = 80;
  std::string target;  // path + query, starting with '/'
};

inline ParsedUrl parse_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConnectError("not an absolute URL: '" + url + "'");
  ParsedUrl p;
  p.scheme = url.substr(0, scheme_end);
  if (p.scheme != "http")
    throw ConnectError("unsupported URL scheme '" + p.scheme + "' in '" + url + "'");
  std::string rest = url.substr(scheme_end + 3);
  auto path_start = rest.find('/');
  std::string hostport = path_start == std::string::npos ? rest : rest.substr(0, path_start);
  p.target = path_start == std::string::npos ? "/" : rest.substr(path_start);
  auto colon = hostport.rfind(':');
  if (colon == std::string::npos) {
    p.host = hostport;
  } else {
    p.host = hostport.substr(0, colon);
    try {
      p.port = std::stoi(hostport.substr(colon + 1));
    } catch (...) {
      throw ConnectError("bad port in URL '" + url + "'");
    }
  }
  if (p.host.empty()) throw ConnectError("no host in URL '" + url + "'");
  return p;
}

// Binding precedence: envelope override > default_value.
inline std::optional<std::string> bind(const cwdl::ParamSpec& p, const Envelope& env) {
  if (auto it = env.param_overrides.find(p.name); it != env.param_overrides.end())
    return it->second;
  return p.default_value;
}

}  // namespace http_detail

// Materializes a ConnectionSpec against one envelope: parameters become
// query parameters, headers become headers, `<name>` placeholders in the
// endpoint URL bind like parameters, and the body slot takes the payload
// verbatim.
inline RequestDescription build_request(const cwdl::ConnectionSpec& spec, const Envelope& env) {
  RequestDescription req;
  req.method = spec.method;

  auto lookup = [&](const std::string& name) -> std::optional<std::string> {
    if (auto it = env.param_overrides.find(name); it != env.param_overrides.end())
      return it->second;
    for (const auto& p : spec.parameters)
      if (p.name == name && p.default_value) return p.default_value;
    return std::nullopt;
  };

  // endpoint URL template
  std::string url;
  const std::string& tmpl = spec.endpoint_url;
  for (std::size_t i = 0; i < tmpl.size();) {
    if (tmpl[i] == '<') {
      auto close = tmpl.find('>', i);
      if (close == std::string::npos) throw MissingParameterError("unterminated '<' in endpoint_url");
      std::string name = tmpl.substr(i + 1, close - i - 1);
      auto value = lookup(name);
      if (!value)
        throw MissingParameterError("endpoint placeholder <" + name + "> is unbound");
      url += *value;
      i = close + 1;
    } else {
      url += tmpl[i++];
    }
  }

  // query parameters, in spec order
  std::string query;
  for (const auto& p : spec.parameters) {
    auto value = http_detail::bind(p, env);
    if (!value) {
      if (p.required)
        throw MissingParameterError("required parameter '" + p.name + "' is unbound");
      continue;
    }
    query += query.empty() ? "" : "&";
    query += http_detail::encode_query_value(p.name) + "=" + http_detail::encode_query_value(*value);
  }
  if (!query.empty()) url += (url.find('?') == std::string::npos ? "?" : "&") + query;
  req.url = std::move(url);

  for (const auto& h : spec.headers) {
    auto value = http_detail::bind(h, env);
    if (!value) {
      if (h.required) throw MissingParameterError("required header '" + h.name + "' is unbound");
      continue;
    }
    req.headers.emplace_back(h.name, *value);
  }

  if (!spec.body_content_slot.empty()) req.body = env.payload;
  return req;
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

namespace http_detail {

inline ServiceResponse send(const RequestDescription& req, std::chrono::milliseconds timeout) {
  ParsedUrl url = parse_url(req.url);
  httplib::Client client(url.host, url.port);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout) + 1s);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);

  httplib::Headers headers;
  std::string content_type = "application/octet-stream";
  for (const auto& [name, value] : req.headers) {
    std::string lower = name;
    for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (lower == "content-type") {
      content_type = value;
    } else {
      headers.emplace(name, value);
    }
  }

  httplib::Result result(nullptr, httplib::Error::Unknown);
  if (req.method == "GET") {
    result = client.Get(url.target, headers);
  } else if (req.method == "DELETE") {
    result = client.Delete(url.target, headers);
  } else if (req.method == "POST") {
    result = client.Post(url.target, headers, req.body, content_type);
  } else if (req.method == "PUT") {
    result = client.Put(url.target, headers, req.body, content_type);
  } else if (req.method == "PATCH") {
    result = client.Patch(url.target, headers, req.body, content_type);
  } else {
    throw ConnectError("unsupported HTTP method '" + req.method + "'");
  }

  if (!result) {
    switch (result.error()) {
      case httplib::Error::ConnectionTimeout:
      case httplib::Error::Read:
      case httplib::Error::Write:
        throw TimeoutError("request to " + req.url + " timed out");
      default:
        throw ConnectError("cannot reach " + req.url + " (" + httplib::to_string(result.error()) + ")");
    }
  }
  ServiceResponse resp;
  resp.status = result->status;
  resp.body = result->body;
  resp.content_type = result->get_header_value("Content-Type");
  if (result->has_header("Location")) resp.location = result->get_header_value("Location");
  return resp;
}

// Location may be relative; resolve against the request's origin.
inline std::string resolve_location(const std::string& request_url, const std::string& location) {
  if (location.rfind("http://", 0) == 0 || location.rfind("https://", 0) == 0) return location;
  ParsedUrl origin = parse_url(request_url);
  std::string prefix = origin.scheme + "://" + origin.host + ":" + std::to_string(origin.port);
  if (!location.empty() && location[0] == '/') return prefix + location;
  return prefix + "/" + location;
}

}  // namespace http_detail

// Waits for the service's response; 2xx bodies are results, anything else
// is a ServiceError.
inline ServiceResponse execute_sync(const RequestDescription& req,
                                    std::chrono::milliseconds timeout = 30s) {
  ServiceResponse resp = http_detail::send(req, timeout);
  if (resp.status < 200 || resp.status > 299) throw ServiceError(resp.status, resp.body);
  return resp;
}

// 202+Location responses are polled with GET every `interval` until the job
// finishes; an initial non-202 success degrades to sync semantics.
inline ServiceResponse execute_async(const RequestDescription& req, const PollPolicy& policy) {
  ServiceResponse initial = http_detail::send(req, policy.max_wait);
  if (initial.status == 202) {
    if (!initial.location) throw ProtocolError("202 response without a Location header");
    std::string poll_url = http_detail::resolve_location(req.url, *initial.location);
    RequestDescription poll;
    poll.method = "GET";
    poll.url = poll_url;
    auto deadline = std::chrono::steady_clock::now() + policy.max_wait;
    while (true) {
      if (std::chrono::steady_clock::now() >= deadline)
        throw TimeoutError("async job at " + poll_url + " did not finish within max_wait");
      std::this_thread::sleep_for(policy.interval);
      ServiceResponse status = http_detail::send(poll, policy.max_wait);
      if (status.status == 202) continue;
      if (status.status >= 200 && status.status <= 299) return status;
      throw ServiceError(status.status, status.body);
    }
  }
  if (initial.status < 200 || initial.status > 299) throw ServiceError(initial.status, initial.body);
  return initial;
}

// ---------------------------------------------------------------------------
// Runtime
// ---------------------------------------------------------------------------

enum class ExecMode { sync, async_poll, auto_detect };

struct ControllerOptions {
  ExecMode mode = ExecMode::auto_detect;
  std::chrono::milliseconds request_timeout{30000};
  PollPolicy poll;
  std::chrono::milliseconds consume_wait{50};
};

inline constexpr const char* kProblemContentType = "application/problem+json";

// One consuming loop per instance; run more instances on the same queue
// pair to scale out. Failures become structured error envelopes on the
// final attempt, never controller crashes.
class ControllerRuntime {
 public:
  ControllerRuntime(cwdl::ControllerSpec spec, Broker& broker, ControllerOptions options = {})
      : spec_(std::move(spec)), broker_(broker), options_(options) {}

  ~ControllerRuntime() { stop(); }

  const cwdl::ControllerSpec& spec() const { return spec_; }

  void start() {
    if (thread_.joinable()) return;
    thread_ = std::jthread([this](std::stop_token st) { run(st); });
  }

  // Drains in-flight work (the envelope being processed) and exits.
  void stop() {
    if (!thread_.joinable()) return;
    thread_.request_stop();
    thread_.join();
  }

  // Processes one delivery; exposed for single-step tests.
  void process(const Delivery& delivery) {
    const Envelope& env = delivery.envelope;
    bool final_attempt = env.attempt >= broker_.config().max_attempts - 1;
    try {
      RequestDescription req = build_request(spec_.connection, env);
      ServiceResponse resp = execute(req);
      reply(env, resp.content_type.empty() ? "application/octet-stream" : resp.content_type,
            resp.body);
      broker_.ack(delivery.tag);
    } catch (const MissingParameterError& e) {
      // not retryable: no attempt will ever bind the parameter
      reply_error(env, 0, e.what(), env.attempt + 1);
      broker_.ack(delivery.tag);
    } catch (const ServiceError& e) {
      fail(delivery, final_attempt, e.status(), e.what());
    } catch (const Error& e) {
      fail(delivery, final_attempt, 0, e.what());
    }
  }

 private:
  void run(std::stop_token st) {
    QueuePair pair{spec_.queues.input_normal, spec_.queues.input_priority};
    while (!st.stop_requested()) {
      std::optional<Delivery> d;
      try {
        d = broker_.consume_next(pair, options_.consume_wait);
      } catch (const Error&) {
        return;  // queues gone; broker shutting down
      }
      if (d) process(*d);
    }
  }

  ServiceResponse execute(const RequestDescription& req) {
    switch (options_.mode) {
      case ExecMode::sync:
        return execute_sync(req, options_.request_timeout);
      case ExecMode::async_poll:
      case ExecMode::auto_detect:
        return execute_async(req, options_.poll);
    }
    return {};
  }

  void fail(const Delivery& delivery, bool final_attempt, int status, const std::string& detail) {
    if (final_attempt) {
      reply_error(delivery.envelope, status, detail, delivery.envelope.attempt + 1);
      broker_.ack(delivery.tag);
    } else {
      broker_.nack(delivery.tag, true);
    }
  }

  void reply(const Envelope& request, const std::string& content_type, std::string payload) {
    if (request.reply_queue.empty()) return;
    Envelope out;
    out.message_id = broker_.next_message_id();
    out.execution_id = request.execution_id;
    out.node_id = request.node_id;
    out.priority = request.priority;
    out.content_type = content_type;
    out.payload = std::move(payload);
    try {
      broker_.publish(request.reply_queue, std::move(out));
    } catch (const Error& e) {
      std::fprintf(stderr, "[controller %s] reply to '%s' failed: %s\n",
                   spec_.controller_id.c_str(), request.reply_queue.c_str(), e.what());
    }
  }

  void reply_error(const Envelope& request, int status, const std::string& detail, int attempts) {
    nlohmann::json problem = {{"title", "service request failed"},
                              {"status", status},
                              {"detail", detail},
                              {"controllerId", spec_.controller_id},
                              {"executionId", request.execution_id},
                              {"nodeId", request.node_id},
                              {"attempts", attempts}};
    reply(request, kProblemContentType, problem.dump());
  }

  cwdl::ControllerSpec spec_;
  Broker& broker_;
  ControllerOptions options_;
  std::jthread thread_;
};

}  // namespace cwm
