#pragma once

// Store of workflow elements (controllers, tasks, templates) keyed by id,
// optionally persisted one JSON file per element under
// <dir>/<kind>/<id>.json. Writes are atomic (write-temp-then-rename).

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "cwm/cwdl.hpp"

namespace cwm {

class Registry {
 public:
  Registry() = default;
  explicit Registry(std::filesystem::path dir) : dir_(std::move(dir)) {}

  // Reads persisted elements from the data directory.
  void load() {
    if (dir_.empty()) return;
    std::unique_lock lock(mu_);
    for (const auto& [kind, _] : kinds()) {
      auto kind_dir = dir_ / kind;
      if (!std::filesystem::is_directory(kind_dir)) continue;
      for (const auto& entry : std::filesystem::directory_iterator(kind_dir)) {
        if (entry.path().extension() != ".json") continue;
        std::ifstream in(entry.path(), std::ios::binary);
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        if (kind == "controllers") {
          auto spec = cwdl::parse_controller(text);
          controllers_[spec.controller_id] = spec;
        } else if (kind == "tasks") {
          auto spec = cwdl::parse_task(text);
          tasks_[spec.task_id] = spec;
        } else {
          auto tmpl = cwdl::parse_template(text);
          templates_[tmpl.id] = tmpl;
        }
      }
    }
  }

  void put(const cwdl::ControllerSpec& spec) {
    std::unique_lock lock(mu_);
    controllers_[spec.controller_id] = spec;
    persist("controllers", spec.controller_id, cwdl::serialize(spec));
  }
  void put(const cwdl::TaskSpec& spec) {
    std::unique_lock lock(mu_);
    tasks_[spec.task_id] = spec;
    persist("tasks", spec.task_id, cwdl::serialize(spec));
  }
  void put(const cwdl::WorkflowTemplate& tmpl) {
    std::unique_lock lock(mu_);
    templates_[tmpl.id] = tmpl;
    persist("templates", tmpl.id, cwdl::serialize(tmpl));
  }

  std::optional<cwdl::ControllerSpec> controller(const std::string& id) const {
    std::shared_lock lock(mu_);
    auto it = controllers_.find(id);
    return it == controllers_.end() ? std::nullopt : std::optional(it->second);
  }
  std::optional<cwdl::TaskSpec> task(const std::string& id) const {
    std::shared_lock lock(mu_);
    auto it = tasks_.find(id);
    return it == tasks_.end() ? std::nullopt : std::optional(it->second);
  }
  std::optional<cwdl::WorkflowTemplate> workflow_template(const std::string& id) const {
    std::shared_lock lock(mu_);
    auto it = templates_.find(id);
    return it == templates_.end() ? std::nullopt : std::optional(it->second);
  }

  bool contains(const std::string& kind, const std::string& id) const {
    std::shared_lock lock(mu_);
    if (kind == "controllers") return controllers_.contains(id);
    if (kind == "tasks") return tasks_.contains(id);
    return templates_.contains(id);
  }

  bool remove(const std::string& kind, const std::string& id) {
    std::unique_lock lock(mu_);
    bool erased = false;
    if (kind == "controllers") erased = controllers_.erase(id) > 0;
    else if (kind == "tasks") erased = tasks_.erase(id) > 0;
    else erased = templates_.erase(id) > 0;
    if (erased && !dir_.empty()) {
      std::error_code ec;
      std::filesystem::remove(dir_ / kind / (id + ".json"), ec);
    }
    return erased;
  }

  cwdl::ControllerRegistry controllers() const {
    std::shared_lock lock(mu_);
    return controllers_;
  }
  cwdl::TaskRegistry tasks() const {
    std::shared_lock lock(mu_);
    return tasks_;
  }
  std::map<std::string, cwdl::WorkflowTemplate> templates() const {
    std::shared_lock lock(mu_);
    return templates_;
  }

 private:
  static const std::map<std::string, int>& kinds() {
    static const std::map<std::string, int> k = {{"controllers", 0}, {"tasks", 1}, {"templates", 2}};
    return k;
  }

  void persist(const std::string& kind, const std::string& id, const std::string& text) {
    if (dir_.empty()) return;
    auto kind_dir = dir_ / kind;
    std::filesystem::create_directories(kind_dir);
    auto tmp = kind_dir / (id + ".json.tmp");
    auto final_path = kind_dir / (id + ".json");
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out << text;
    }
    std::filesystem::rename(tmp, final_path);
  }

  std::filesystem::path dir_;
  mutable std::shared_mutex mu_;
  cwdl::ControllerRegistry controllers_;
  cwdl::TaskRegistry tasks_;
  std::map<std::string, cwdl::WorkflowTemplate> templates_;
};

}  // namespace cwm
