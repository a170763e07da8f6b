#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace cwm {

// Root of every cwm exception type.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Severity { warning, error };

inline const char* to_string(Severity s) {
  return s == Severity::error ? "error" : "warning";
}

// One validation finding. `path` points at the offending location, e.g.
// "$.tasks[0].taskId".
struct Finding {
  Severity severity = Severity::error;
  std::string path;
  std::string message;

  bool operator==(const Finding&) const = default;
};

// Findings are data, not failures: an empty report (or warnings only)
// means the checked object is usable.
struct ValidationReport {
  std::vector<Finding> findings;

  void add(Severity severity, std::string path, std::string message) {
    findings.push_back({severity, std::move(path), std::move(message)});
  }
  void error(std::string path, std::string message) {
    add(Severity::error, std::move(path), std::move(message));
  }
  void warning(std::string path, std::string message) {
    add(Severity::warning, std::move(path), std::move(message));
  }
  void merge(const ValidationReport& other) {
    findings.insert(findings.end(), other.findings.begin(), other.findings.end());
  }

  std::size_t error_count() const {
    return static_cast<std::size_t>(
        std::count_if(findings.begin(), findings.end(),
                      [](const Finding& f) { return f.severity == Severity::error; }));
  }
  bool ok() const { return error_count() == 0; }

  nlohmann::json to_json() const {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& f : findings) {
      items.push_back({{"severity", to_string(f.severity)},
                       {"path", f.path},
                       {"message", f.message}});
    }
    return {{"ok", ok()}, {"findings", items}};
  }

  bool operator==(const ValidationReport&) const = default;
};

}  // namespace cwm
