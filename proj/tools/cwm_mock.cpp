// cwm_mock: standalone launcher for the deterministic annotation mock
// service, for demos and scripted end-to-end tests.

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "cwm/mocks.hpp"

namespace {
std::atomic<bool> g_stop{false};
void handle_signal(int) { g_stop = true; }
}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deterministic mock annotation service"};

  cwm::mocks::MockServiceConfig config;
  std::string mode = "sync";
  int latency_ms = 0;
  std::string gazetteer_file;
  app.add_option("--port", config.port, "port to bind (0 picks one)");
  app.add_option("--mode", mode, "sync or async")->check(CLI::IsMember({"sync", "async"}));
  app.add_option("--latency-ms", latency_ms, "per-request processing latency");
  app.add_option("--fail-n", config.fail_next_n, "respond 500 to the next n requests");
  app.add_option("--gazetteer", gazetteer_file,
                 "JSON array of {surface, entityClass, identRef} entries")
      ->required();

  CLI11_PARSE(app, argc, argv);

  config.mode = mode == "async" ? cwm::mocks::MockServiceConfig::Mode::async
                                : cwm::mocks::MockServiceConfig::Mode::sync;
  config.latency = std::chrono::milliseconds(latency_ms);

  std::ifstream in(gazetteer_file);
  if (!in) {
    std::cerr << "cannot open " << gazetteer_file << "\n";
    return 1;
  }
  try {
    nlohmann::json entries;
    in >> entries;
    for (const auto& e : entries) {
      config.gazetteer.push_back({e.at("surface").get<std::string>(),
                                  e.at("entityClass").get<std::string>(),
                                  e.value("identRef", "")});
    }
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "malformed gazetteer: " << e.what() << "\n";
    return 1;
  }

  try {
    cwm::mocks::MockService service(config);
    service.start();
    std::cout << "{\"listening\": \"" << service.base_url() << "\"}" << std::endl;
    std::signal(SIGINT, handle_signal);
    std::signal(SIGTERM, handle_signal);
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    service.stop();
  } catch (const std::exception& e) {
    std::cerr << "mock failed: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
