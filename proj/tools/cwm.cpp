// cwm: operator client and server launcher for the curation workflow
// manager. Machine-readable JSON goes to stdout, diagnostics to stderr.
// Exit codes: 0 success, 1 validation/command failure, 2 transport or
// authentication errors.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "httplib.h"
#include "json.hpp"

#include "cwm/api.hpp"
#include "cwm/cwdl.hpp"
#include "cwm/registry.hpp"

using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitTransport = 2;

struct CliConfig {
  std::string server_url = "http://127.0.0.1:8080";
  std::string token;
  std::string output_format = "json";  // json | turtle | plain
};

std::string read_file_or_die(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    std::cerr << "cannot open " << path << "\n";
    std::exit(kExitFailure);
  }
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

// Precedence: explicit flag > environment > config file > default.
CliConfig resolve_config(const std::string& config_path, const std::string& flag_server,
                         const std::string& flag_token, const std::string& flag_output) {
  CliConfig c;
  if (!config_path.empty()) {
    try {
      json j = json::parse(read_file_or_die(config_path));
      c.server_url = j.value("serverUrl", c.server_url);
      c.token = j.value("token", c.token);
      c.output_format = j.value("outputFormat", c.output_format);
    } catch (const json::exception& e) {
      std::cerr << "malformed config " << config_path << ": " << e.what() << "\n";
      std::exit(kExitFailure);
    }
  }
  if (const char* env = std::getenv("CWM_URL"); env && *env) c.server_url = env;
  if (const char* env = std::getenv("CWM_TOKEN"); env && *env) c.token = env;
  if (!flag_server.empty()) c.server_url = flag_server;
  if (!flag_token.empty()) c.token = flag_token;
  if (!flag_output.empty()) c.output_format = flag_output;
  return c;
}

struct Api {
  explicit Api(const CliConfig& config) : client(config.server_url), token(config.token) {
    client.set_read_timeout(std::chrono::seconds(30));
    client.set_connection_timeout(std::chrono::seconds(5));
  }

  httplib::Headers auth() const {
    httplib::Headers h;
    if (!token.empty()) h.emplace("Authorization", "Bearer " + token);
    return h;
  }

  httplib::Result get(const std::string& path) { return client.Get(path, auth()); }
  httplib::Result post(const std::string& path, const std::string& body) {
    return client.Post(path, auth(), body, "application/json");
  }

  httplib::Client client;
  std::string token;
};

// Shared handling of transport errors and non-2xx responses; returns an
// exit code, or -1 when the response is a success the caller should print.
int check_response(const httplib::Result& res) {
  if (!res) {
    std::cerr << "transport error: " << httplib::to_string(res.error()) << "\n";
    return kExitTransport;
  }
  if (res->status >= 200 && res->status <= 299) return -1;
  std::cerr << res->body << "\n";
  return (res->status == 401 || res->status == 403) ? kExitTransport : kExitFailure;
}

std::atomic<bool> g_stop{false};
void handle_signal(int) { g_stop = true; }

int cmd_serve(const std::string& config_path) {
  cwm::ServerConfig config;
  try {
    config = cwm::ServerConfig::from_file(config_path);
  } catch (const cwm::Error& e) {
    std::cerr << e.what() << "\n";
    return kExitFailure;
  }
  try {
    cwm::ApiServer server(config);
    server.start();
    std::cout << "{\"listening\": \"" << server.base_url() << "\"}" << std::endl;
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "server failed: " << e.what() << "\n";
    return kExitFailure;
  }
}

std::string detect_kind(const json& j) {
  if (j.contains("workflowTemplateId")) return "templates";
  if (j.contains("controllerId") && j.contains("queues")) return "controllers";
  if (j.contains("taskId")) return "tasks";
  return "";
}

// Offline CWDL validation; shares the exact validation code the server
// runs, so the reports agree by construction.
int cmd_validate(const std::string& file, std::string kind, const std::string& registry_dir) {
  std::string text = read_file_or_die(file);
  cwm::ValidationReport report;
  try {
    if (kind.empty() || kind == "auto") {
      json j = json::parse(text);
      kind = detect_kind(j);
      if (kind.empty()) {
        std::cerr << "cannot detect the element kind; pass --kind\n";
        return kExitFailure;
      }
    }
    cwm::Registry registry(registry_dir.empty() ? std::filesystem::path{}
                                                : std::filesystem::path(registry_dir));
    registry.load();
    if (kind == "controllers") {
      report = cwm::cwdl::validate_controller(cwm::cwdl::parse_controller(text));
    } else if (kind == "tasks") {
      cwm::cwdl::TaskSpec task = cwm::cwdl::parse_task(text);
      if (!registry_dir.empty()) report = cwm::cwdl::validate_task(task, registry.controllers());
    } else if (kind == "templates") {
      report = cwm::cwdl::validate(cwm::cwdl::parse_template(text), registry.tasks(),
                                   registry.controllers());
    } else {
      std::cerr << "unknown kind '" << kind << "'\n";
      return kExitFailure;
    }
  } catch (const cwm::cwdl::SchemaError& e) {
    report.error(e.path(), e.what());
  } catch (const cwm::Error& e) {
    report.error("$", e.what());
  } catch (const json::exception& e) {
    report.error("$", std::string("malformed JSON: ") + e.what());
  }
  std::cout << report.to_json().dump(2) << std::endl;
  return report.ok() ? kExitOk : kExitFailure;
}

int cmd_register(Api& api, const std::string& kind, const std::string& file) {
  auto res = api.post("/elements/" + kind, read_file_or_die(file));
  if (int exit = check_response(res); exit != -1) return exit;
  std::cout << res->body << std::endl;
  return kExitOk;
}

int cmd_list(Api& api, const std::string& kind) {
  auto res = api.get("/elements/" + kind);
  if (int exit = check_response(res); exit != -1) return exit;
  std::cout << res->body << std::endl;
  return kExitOk;
}

int cmd_execute(Api& api, const CliConfig& config, const std::string& template_id,
                const std::string& input_file, std::string input_type, bool priority,
                const std::vector<std::string>& params) {
  if (input_type.empty()) {
    input_type = input_file.ends_with(".ttl") || input_file.ends_with(".turtle")
                     ? "text/turtle"
                     : "text/plain";
  }
  json overrides = json::object();
  for (const auto& p : params) {
    auto eq = p.find('=');
    if (eq == std::string::npos) {
      std::cerr << "--param expects key=value, got '" << p << "'\n";
      return kExitFailure;
    }
    overrides[p.substr(0, eq)] = p.substr(eq + 1);
  }
  json body = {{"templateId", template_id},
               {"input", read_file_or_die(input_file)},
               {"inputType", input_type},
               {"priority", priority ? "priority" : "normal"},
               {"paramOverrides", overrides}};
  auto res = api.post("/executions", body.dump());
  if (int exit = check_response(res); exit != -1) return exit;
  if (config.output_format == "plain") {
    std::cout << json::parse(res->body)["executionId"].get<std::string>() << std::endl;
  } else {
    std::cout << res->body << std::endl;
  }
  return kExitOk;
}

int cmd_status(Api& api, const CliConfig& config, const std::string& id) {
  auto res = api.get("/executions/" + id + "/status");
  if (int exit = check_response(res); exit != -1) return exit;
  if (config.output_format == "plain") {
    std::cout << json::parse(res->body)["state"].get<std::string>() << std::endl;
  } else {
    std::cout << res->body << std::endl;
  }
  return kExitOk;
}

int cmd_result(Api& api, const std::string& id, const std::string& out_file) {
  auto res = api.get("/executions/" + id + "/result");
  if (int exit = check_response(res); exit != -1) return exit;
  if (out_file.empty()) {
    std::cout << res->body;
  } else {
    std::ofstream out(out_file, std::ios::binary);
    if (!out) {
      std::cerr << "cannot write " << out_file << "\n";
      return kExitFailure;
    }
    out << res->body;
  }
  return kExitOk;
}

int cmd_cancel(Api& api, const std::string& id) {
  auto res = api.post("/executions/" + id + "/cancel", "");
  if (int exit = check_response(res); exit != -1) return exit;
  std::cout << res->body << std::endl;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"curation workflow manager client"};
  app.require_subcommand(1);

  std::string flag_server, flag_token, flag_output, cli_config_path;
  app.add_option("--server", flag_server, "server base URL (env CWM_URL)");
  app.add_option("--token", flag_token, "bearer token (env CWM_TOKEN)");
  app.add_option("--config", cli_config_path, "client config file (JSON)");
  app.add_option("--output", flag_output, "output format: json, turtle or plain")
      ->check(CLI::IsMember({"json", "turtle", "plain"}));

  auto* serve = app.add_subcommand("serve", "run the workflow manager server");
  std::string server_config_path;
  serve->add_option("--config", server_config_path, "server config file (JSON)")->required();

  auto* validate = app.add_subcommand("validate", "validate a CWDL file offline");
  std::string validate_file, validate_kind = "auto", registry_dir;
  validate->add_option("file", validate_file, "CWDL JSON file")->required();
  validate->add_option("--kind", validate_kind, "controllers, tasks, templates or auto");
  validate->add_option("--registry", registry_dir, "data directory for reference resolution");

  auto* reg = app.add_subcommand("register", "create an element on the server");
  std::string register_kind, register_file;
  reg->add_option("kind", register_kind, "controllers, tasks or templates")->required();
  reg->add_option("file", register_file, "CWDL JSON file")->required();

  auto* list = app.add_subcommand("list", "list elements of a kind");
  std::string list_kind;
  list->add_option("kind", list_kind, "controllers, tasks, templates or executions")->required();

  auto* execute = app.add_subcommand("execute", "run a workflow on an input document");
  std::string exec_template, exec_input, exec_input_type;
  bool exec_priority = false;
  std::vector<std::string> exec_params;
  execute->add_option("--template", exec_template, "workflow template id")->required();
  execute->add_option("--input", exec_input, "input file (.ttl is sent as text/turtle)")
      ->required();
  execute->add_option("--input-type", exec_input_type, "text/plain or text/turtle");
  execute->add_flag("--priority", exec_priority, "run on the priority queues");
  execute->add_option("--param", exec_params, "execution parameter key=value (repeatable)");

  auto* status = app.add_subcommand("status", "show an execution's status");
  std::string status_id;
  status->add_option("executionId", status_id)->required();

  auto* result = app.add_subcommand("result", "fetch a completed execution's NIF result");
  std::string result_id, result_out;
  result->add_option("executionId", result_id)->required();
  result->add_option("-o,--out", result_out, "write the turtle result to a file");

  auto* cancel = app.add_subcommand("cancel", "cancel a pending or running execution");
  std::string cancel_id;
  cancel->add_option("executionId", cancel_id)->required();

  CLI11_PARSE(app, argc, argv);

  if (serve->parsed()) return cmd_serve(server_config_path);
  if (validate->parsed()) return cmd_validate(validate_file, validate_kind, registry_dir);

  CliConfig config = resolve_config(cli_config_path, flag_server, flag_token, flag_output);
  Api api(config);
  if (reg->parsed()) return cmd_register(api, register_kind, register_file);
  if (list->parsed()) return cmd_list(api, list_kind);
  if (execute->parsed())
    return cmd_execute(api, config, exec_template, exec_input, exec_input_type, exec_priority,
                       exec_params);
  if (status->parsed()) return cmd_status(api, config, status_id);
  if (result->parsed()) return cmd_result(api, result_id, result_out);
  if (cancel->parsed()) return cmd_cancel(api, cancel_id);
  return kExitFailure;
}
