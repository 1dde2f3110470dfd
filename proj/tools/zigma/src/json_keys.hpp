#pragma once

#include <algorithm>
#include <initializer_list>
#include <string>

#include <nlohmann/json.hpp>

#include "zigma/model/config.hpp"

namespace zigma::app::detail {

inline void require_object(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) throw model::ConfigError(where + ": expected a JSON object");
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                           const std::string& where) {
  require_object(j, where);
  for (const auto& item : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* k) { return item.key() == k; });
    if (!known) throw model::ConfigError(where + ": unknown key '" + item.key() + "'");
  }
}

// Reads j[key] into out when present, with a readable error on type mismatch.
template <class T>
void read(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw model::ConfigError(where + ": bad value for '" + key + "'");
  }
}

}  // namespace zigma::app::detail
