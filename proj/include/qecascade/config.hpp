#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qecascade/core.hpp"
#include "qecascade/costmodel.hpp"
#include "qecascade/gateway.hpp"

namespace qecascade {

/// Contents of the JSON run configuration:
///
///   {
///     "default_profile": "tower-7b+kiwi22",
///     "profiles": {"name": {"n_small": 7e9, "n_large": 70e9, "n_qe": 0.5e9,
///                           "d_small": 1, "d_large": 1}},
///     "orientations": {"quality_small": "lower_better", ...},
///     "cache_dir": ".qecascade-cache",
///     "endpoints": {"small": {...}, "qe": {...}, "large": {...}}
///   }
///
/// Every key is optional. Secrets never live here: endpoints name the
/// environment variable holding their token (`auth_token_env`).
struct AppConfig {
  std::string default_profile = "tower-7b+kiwi22";
  std::map<std::string, CostModel> profiles;
  std::vector<ScoreOrientation> orientations;
  std::filesystem::path cache_dir = ".qecascade-cache";
  std::map<std::string, EndpointConfig> endpoints;

  /// Config profiles shadow the built-in ones.
  CostModel cost_profile(const std::string& name) const;
  /// Throws ConfigurationError unless small, qe and large are all defined.
  LiveEndpoints live_endpoints() const;
};

AppConfig parse_config(const std::string& text);
AppConfig load_config(const std::filesystem::path& path);

Direction parse_direction(const std::string& text);

}  // namespace qecascade
