#include "qecascade/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace qecascade {

using nlohmann::json;

namespace {

// Keys that would put a credential in the file instead of the environment.
constexpr const char* kSecretKeys[] = {"auth_token", "api_key", "token", "password"};

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigurationError(std::string("config key '") + key + "': " + e.what());
  }
}

EndpointConfig parse_endpoint(const std::string& role, const json& obj) {
  if (!obj.is_object()) throw ConfigurationError("endpoint '" + role + "' must be an object");
  for (const char* key : kSecretKeys) {
    if (obj.contains(key)) {
      throw ConfigurationError("endpoint '" + role + "' sets '" + key +
                               "'; credentials are read from the variable named by auth_token_env");
    }
  }
  EndpointConfig ep;
  ep.base_url = get_or<std::string>(obj, "base_url", "");
  ep.path = get_or<std::string>(obj, "path", "");
  ep.model_name = get_or<std::string>(obj, "model", "");
  ep.auth_token_env = get_or<std::string>(obj, "auth_token_env", "");
  ep.timeout_seconds = get_or<double>(obj, "timeout_seconds", ep.timeout_seconds);
  ep.max_retries = get_or<std::size_t>(obj, "max_retries", ep.max_retries);
  ep.max_in_flight = get_or<std::size_t>(obj, "max_in_flight", ep.max_in_flight);
  ep.retry_backoff_ms = get_or<std::size_t>(obj, "retry_backoff_ms", ep.retry_backoff_ms);
  ep.prompt_template = get_or<std::string>(obj, "prompt_template", "");
  ep.greedy = get_or<bool>(obj, "greedy", ep.greedy);
  ep.score_direction =
      parse_direction(get_or<std::string>(obj, "score_direction", "higher_better"));
  ep.validate();
  return ep;
}

CostModel parse_profile(const std::string& name, const json& obj) {
  CostModel cost;
  cost.name = name;
  cost.n_small = get_or<double>(obj, "n_small", 0.0);
  cost.n_large = get_or<double>(obj, "n_large", 0.0);
  cost.n_qe = get_or<double>(obj, "n_qe", 0.0);
  cost.d_small = get_or<double>(obj, "d_small", 1.0);
  cost.d_large = get_or<double>(obj, "d_large", 1.0);
  try {
    cost.validate();
  } catch (const DomainError& e) {
    throw ConfigurationError("profile '" + name + "': " + e.what());
  }
  return cost;
}

}  // namespace

Direction parse_direction(const std::string& text) {
  if (text == "higher_better") return Direction::higher_better;
  if (text == "lower_better") return Direction::lower_better;
  throw ConfigurationError("score direction must be higher_better or lower_better, got '" +
                           text + "'");
}

CostModel AppConfig::cost_profile(const std::string& name) const {
  if (auto it = profiles.find(name); it != profiles.end()) return it->second;
  try {
    return builtin_cost_profile(name);
  } catch (const ValidationError&) {
    throw ConfigurationError("unknown cost profile '" + name + "'");
  }
}

LiveEndpoints AppConfig::live_endpoints() const {
  auto get = [&](const char* role) {
    auto it = endpoints.find(role);
    if (it == endpoints.end()) {
      throw ConfigurationError(std::string("config defines no '") + role + "' endpoint");
    }
    return it->second;
  };
  return LiveEndpoints{get("small"), get("qe"), get("large")};
}

AppConfig parse_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigurationError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigurationError("config must be a JSON object");

  AppConfig config;
  config.default_profile = get_or<std::string>(doc, "default_profile", config.default_profile);
  config.cache_dir = get_or<std::string>(doc, "cache_dir", config.cache_dir.string());
  if (doc.contains("profiles")) {
    for (const auto& [name, obj] : doc["profiles"].items()) {
      config.profiles[name] = parse_profile(name, obj);
    }
  }
  if (doc.contains("orientations")) {
    for (const auto& [column, dir] : doc["orientations"].items()) {
      if (!dir.is_string()) throw ConfigurationError("orientation for '" + column + "' must be a string");
      config.orientations.push_back({column, parse_direction(dir.get<std::string>())});
    }
  }
  if (doc.contains("endpoints")) {
    for (const auto& [role, obj] : doc["endpoints"].items()) {
      config.endpoints[role] = parse_endpoint(role, obj);
    }
  }
  return config;
}

AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigurationError("cannot open config file '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

}  // namespace qecascade
