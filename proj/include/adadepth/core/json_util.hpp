#pragma once

#include <algorithm>
#include <initializer_list>
#include <string>

#include <nlohmann/json.hpp>

#include "adadepth/core/error.hpp"

namespace adadepth::jsonu {

using json = nlohmann::json;

/// Throws ConfigError when `j` is not an object or carries a key outside `allowed`.
inline void require_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* k) { return it.key() == k; }))
      throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

/// Reads `j[key]` into `out` when present; type errors become ConfigError.
template <typename V>
void read(const json& j, const char* key, V& out, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<V>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for '" + std::string(key) + "' in " + where + ": " + it->dump());
  }
}

}  // namespace adadepth::jsonu
