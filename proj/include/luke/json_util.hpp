// Strict JSON object reading: every key must be known, and all problems are
// collected instead of stopping at the first one.
#pragma once

#include <set>
#include <string>
#include <vector>

#include "json.hpp"

namespace luke {

class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string path, std::vector<std::string>& problems)
      : j_(j), path_(std::move(path)), problems_(problems) {
    if (!j_.is_object()) problems_.push_back(where() + "must be a JSON object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.is_object() && j_.contains(key);
  }

  template <typename U>
  void get(const std::string& key, U& out) {
    if (!has(key)) return;
    try {
      out = j_.at(key).get<U>();
    } catch (const nlohmann::json::exception&) {
      problems_.push_back(where() + key + ": wrong type (" + j_.at(key).dump() + ")");
    }
  }

  const nlohmann::json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  // Reports keys that no get()/has() asked for.
  void finish() {
    if (!j_.is_object()) return;
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) problems_.push_back(where() + "unknown key '" + key + "'");
    }
  }

  std::vector<std::string>& problems() { return problems_; }
  std::string child_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string where() const { return path_.empty() ? "" : path_ + ": "; }

  const nlohmann::json& j_;
  std::string path_;
  std::vector<std::string>& problems_;
  std::set<std::string> seen_;
};

}  // namespace luke
