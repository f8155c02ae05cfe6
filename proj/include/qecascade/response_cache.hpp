#pragma once

#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

namespace qecascade {

struct CacheEntry {
  std::string key;
  std::string response;
  std::string created_at;  // UTC, ISO 8601
};

/// Content-addressed response store: one JSON file per request under
/// <dir>/<key[0:2]>/<key>.json. Safe to share between worker threads.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);

  /// Hex SHA-256 over (endpoint identity, model, request payload).
  static std::string make_key(std::string_view endpoint, std::string_view model,
                              std::string_view payload);

  std::optional<CacheEntry> lookup(const std::string& key) const;
  void store(const std::string& key, const std::string& response);

  const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  std::filesystem::path entry_path(const std::string& key) const;

  std::filesystem::path dir_;
  mutable std::mutex mutex_;
};

/// Hex SHA-256 of arbitrary bytes.
std::string sha256_hex(std::string_view bytes);

}  // namespace qecascade
