#pragma once

#include <initializer_list>
#include <string>

#include "json.hpp"
#include "wrtsam/tensor.hpp"

namespace wrtsam {

/// Rejects any key of `j` outside `allowed` (typos must not pass silently).
inline void require_known_keys(const nlohmann::json& j,
                               std::initializer_list<const char*> allowed,
                               const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

/// Reads j[key] into `out` when present; type errors become ConfigError.
template <class T>
void read_key(const nlohmann::json& j, const char* key, T& out,
              const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace wrtsam
