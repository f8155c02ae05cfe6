#include "qecascade/response_cache.hpp"

#include <array>
#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>

#include <json.hpp>
#include <openssl/evp.h>

#include "qecascade/core.hpp"

namespace qecascade {

namespace fs = std::filesystem;

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 0xF];
  }
  return out;
}

ResponseCache::ResponseCache(fs::path dir) : dir_(std::move(dir)) {
  fs::create_directories(dir_);
}

std::string ResponseCache::make_key(std::string_view endpoint, std::string_view model,
                                    std::string_view payload) {
  // Length-prefixed fields so ("ab", "c") and ("a", "bc") hash apart.
  std::string material;
  for (auto part : {endpoint, model, payload}) {
    material += std::to_string(part.size());
    material += ':';
    material += part;
  }
  return sha256_hex(material);
}

fs::path ResponseCache::entry_path(const std::string& key) const {
  return dir_ / key.substr(0, 2) / (key + ".json");
}

std::optional<CacheEntry> ResponseCache::lookup(const std::string& key) const {
  std::lock_guard lock(mutex_);
  std::ifstream in(entry_path(key), std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream buf;
  buf << in.rdbuf();
  auto doc = nlohmann::json::parse(buf.str(), nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded() || !doc.contains("response") || doc.value("key", "") != key) {
    return std::nullopt;  // torn or foreign file: treat as a miss
  }
  return CacheEntry{key, doc["response"].get<std::string>(), doc.value("created_at", "")};
}

void ResponseCache::store(const std::string& key, const std::string& response) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm utc{};
  gmtime_r(&now, &utc);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &utc);

  nlohmann::ordered_json doc;
  doc["key"] = key;
  doc["created_at"] = stamp;
  doc["response"] = response;

  std::lock_guard lock(mutex_);
  const auto path = entry_path(key);
  fs::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write cache entry '" + tmp.string() + "'");
    out << doc.dump();
  }
  fs::rename(tmp, path);
}

}  // namespace qecascade
