#pragma once

#include <json.hpp>

#include "flexclip/generation.hpp"
#include "flexclip/projection.hpp"

namespace flexclip {

nlohmann::json to_json(const generation::GenHyperParams& hp);
nlohmann::json to_json(const projection::ProjHyperParams& hp);

/// Overlays the keys present in `j` onto `base`. Unknown keys and values of
/// the wrong type throw ConfigError naming the key.
generation::GenHyperParams gen_hparams_from_json(const nlohmann::json& j,
                                                 generation::GenHyperParams base = {});
projection::ProjHyperParams proj_hparams_from_json(const nlohmann::json& j,
                                                   projection::ProjHyperParams base = {});

/// Throws ConfigError if `j` is not an object or has a key outside `allowed`.
void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const std::string& section);

/// Reads j[key] into `out` when present; a type mismatch is a ConfigError.
template <class T>
void read_key(const nlohmann::json& j, const char* key, T& out, const std::string& section) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(section + "." + key + ": wrong value type (" + it->dump() + ")");
  }
}

}  // namespace flexclip
