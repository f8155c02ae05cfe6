#pragma once

// Shared test helpers: record builders, temp directories, an in-process mock
// inference server, and brute-force oracles that deliberately avoid the
// library's own code paths.

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <unistd.h>

#include <httplib.h>
#include <json.hpp>

#include "qecascade/core.hpp"
#include "qecascade/deferral.hpp"
#include "qecascade/gateway.hpp"

namespace fixtures {

namespace fs = std::filesystem;

inline qecascade::TranslationRecord record(std::string id) {
  qecascade::TranslationRecord r;
  r.id = std::move(id);
  r.source = "src " + r.id;
  return r;
}

/// Batch whose records carry the given qe_small scores.
inline qecascade::Batch qe_batch(const std::vector<double>& qe) {
  qecascade::Batch b;
  b.name = "qe";
  for (std::size_t i = 0; i < qe.size(); ++i) {
    auto r = record("s" + std::to_string(i));
    r.qe_small = qe[i];
    b.records.push_back(r);
  }
  return b;
}

/// Batch with quality_small / quality_large columns.
inline qecascade::Batch quality_batch(const std::vector<double>& small,
                                      const std::vector<double>& large) {
  qecascade::Batch b;
  b.name = "quality";
  for (std::size_t i = 0; i < small.size(); ++i) {
    auto r = record("s" + std::to_string(i));
    r.quality_small = small[i];
    r.quality_large = large[i];
    b.records.push_back(r);
  }
  return b;
}

/// Fully populated random batch: every rule can run on it. `levels` > 0
/// quantizes scores so ties occur.
inline qecascade::Batch random_full_batch(std::size_t n, std::mt19937_64& rng, int levels = 0) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> len(1, 60);
  std::uniform_int_distribution<int> level(0, std::max(levels - 1, 0));
  auto draw = [&] { return levels > 0 ? level(rng) / 4.0 : normal(rng); };
  qecascade::Batch b;
  b.name = "random";
  for (std::size_t i = 0; i < n; ++i) {
    auto r = record("r" + std::to_string(i));
    r.qe_small = draw();
    r.quality_small = draw();
    r.quality_large = draw();
    r.hyp_token_len = len(rng);
    r.logprob_small = -std::fabs(draw()) * static_cast<double>(*r.hyp_token_len);
    r.src_token_len = levels > 0 ? 1 + level(rng) : len(rng);
    b.records.push_back(r);
  }
  return b;
}

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("qecascade-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

  fs::path write(const std::string& name, const std::string& text) const {
    auto p = path_ / name;
    std::ofstream(p, std::ios::binary) << text;
    return p;
  }

 private:
  fs::path path_;
};

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// --- brute-force oracles ----------------------------------------------------

/// Priority recomputed from raw fields, independent of qecascade::priority.
inline double naive_priority(const qecascade::TranslationRecord& r, qecascade::RuleKind kind) {
  using qecascade::RuleKind;
  switch (kind) {
    case RuleKind::qe: return -r.qe_small.value();
    case RuleKind::logprobs:
      return -r.logprob_small.value() / static_cast<double>(r.hyp_token_len.value());
    case RuleKind::length_shortest: return -static_cast<double>(r.src_token_len.value());
    case RuleKind::length_longest: return static_cast<double>(r.src_token_len.value());
    case RuleKind::oracle: return r.quality_large.value() - r.quality_small.value();
    default: throw std::logic_error("no priority");
  }
}

/// Full sort of (priority desc, index asc) pairs, take k.
inline std::vector<std::size_t> naive_deferred(const qecascade::Batch& b, qecascade::RuleKind kind,
                                               std::size_t k) {
  std::vector<std::pair<double, std::size_t>> keyed;
  for (std::size_t i = 0; i < b.size(); ++i) keyed.emplace_back(-naive_priority(b.records[i], kind), i);
  std::sort(keyed.begin(), keyed.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(keyed[i].second);
  std::sort(out.begin(), out.end());
  return out;
}

/// Max over all C(B, k) subsets of mean realized quality.
inline double best_subset_mean(const std::vector<double>& small, const std::vector<double>& large,
                               std::size_t k) {
  const std::size_t n = small.size();
  double best = -INFINITY;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(std::popcount(mask)) != k) continue;
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += (mask >> i & 1u) ? large[i] : small[i];
    best = std::max(best, sum / static_cast<double>(n));
  }
  return best;
}

/// Exact two-sided sign-flip p-value by full 2^n enumeration of mean diffs.
inline double enumerate_p_value(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t n = a.size();
  double observed = 0.0;
  for (std::size_t i = 0; i < n; ++i) observed += a[i] - b[i];
  observed = std::fabs(observed / static_cast<double>(n));
  std::size_t hits = 0;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += ((mask >> i) & 1u ? -1.0 : 1.0) * (a[i] - b[i]);
    if (std::fabs(s / static_cast<double>(n)) >= observed - 1e-9) ++hits;
  }
  return static_cast<double>(hits) / std::ldexp(1.0, static_cast<int>(n));
}

/// Spearman rank correlation (average ranks for ties).
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      for (std::size_t t = i; t <= j; ++t) r[idx[t]] = (static_cast<double>(i + j) / 2.0) + 1.0;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

/// Synthetic stand-in for a WMT-style test set.
///
/// True small-model quality s ~ U(-8, -1) (MetricX-like, already negated so
/// higher is better). The large model is steadily good: l = -2.5 + N(0, 0.5),
/// so deferring poor small outputs helps and deferring good ones can hurt.
/// The QE score is a noisy read of s: qe = s + N(0, 1.2), which gives a
/// Spearman correlation with s of roughly 0.8.
inline qecascade::Batch synthetic_wmt_batch(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> small_quality(-8.0, -1.0);
  std::normal_distribution<double> large_noise(0.0, 0.5);
  std::normal_distribution<double> qe_noise(0.0, 1.2);
  qecascade::Batch b;
  b.name = "synthetic";
  for (std::size_t i = 0; i < n; ++i) {
    auto r = record("seg-" + std::to_string(i));
    const double s = small_quality(rng);
    r.quality_small = s;
    r.quality_large = -2.5 + large_noise(rng);
    r.qe_small = s + qe_noise(rng);
    b.records.push_back(r);
  }
  return b;
}

// --- mock inference server ---------------------------------------------------

/// Translation: replies with the uppercased "source" found after the last
/// ": " of the prompt's second line (the default template), i.e. the source
/// text. QE: scores come from `qe_scores` keyed by hypothesis, otherwise
/// hypothesis length / 100. Hypotheses listed in `fail_hyps` always get 500.
class MockServer {
 public:
  MockServer() {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      enter();
      const auto body = nlohmann::json::parse(req.body);
      const auto model = body.value("model", "");
      const auto prompt = body["messages"][0]["content"].get<std::string>();
      const auto source = extract_source(prompt);
      {
        std::lock_guard lock(mutex_);
        translate_calls[model].push_back(source);
      }
      std::string out = source;
      std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::toupper(c); });
      if (model == "large") out = "[L] " + out;
      nlohmann::json reply = {{"choices", {{{"message", {{"role", "assistant"}, {"content", out}}}}}}};
      res.set_content(reply.dump(), "application/json");
      leave();
    });
    server_.Post("/score", [this](const httplib::Request& req, httplib::Response& res) {
      enter();
      const auto body = nlohmann::json::parse(req.body);
      const auto hyp = body["hypothesis"].get<std::string>();
      bool fail = false;
      double score = static_cast<double>(hyp.size()) / 100.0;
      {
        std::lock_guard lock(mutex_);
        ++score_calls;
        fail = std::find(fail_hyps.begin(), fail_hyps.end(), hyp) != fail_hyps.end();
        if (auto it = qe_scores.find(hyp); it != qe_scores.end()) score = it->second;
        if (!required_auth.empty() && req.get_header_value("Authorization") != "Bearer " + required_auth) {
          res.status = 401;
          leave();
          return;
        }
      }
      if (fail) {
        res.status = 500;
      } else {
        res.set_content(nlohmann::json{{"score", score}}.dump(), "application/json");
      }
      leave();
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~MockServer() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

  std::size_t total_requests() const { return requests_.load(); }
  std::size_t max_in_flight() const { return max_in_flight_.load(); }

  std::size_t translations_for(const std::string& model) {
    std::lock_guard lock(mutex_);
    return translate_calls[model].size();
  }
  std::vector<std::string> sources_for(const std::string& model) {
    std::lock_guard lock(mutex_);
    auto v = translate_calls[model];
    std::sort(v.begin(), v.end());
    return v;
  }

  std::mutex mutex_;
  std::map<std::string, std::vector<std::string>> translate_calls;
  std::map<std::string, double> qe_scores;
  std::vector<std::string> fail_hyps;
  std::string required_auth;
  std::size_t score_calls = 0;
  std::chrono::milliseconds delay{0};

 private:
  static std::string extract_source(const std::string& prompt) {
    const auto first_nl = prompt.find('\n');
    const auto second_nl = prompt.find('\n', first_nl + 1);
    const auto line = prompt.substr(first_nl + 1, second_nl - first_nl - 1);
    const auto colon = line.find(": ");
    return colon == std::string::npos ? line : line.substr(colon + 2);
  }

  void enter() {
    ++requests_;
    const auto now = ++in_flight_;
    auto prev = max_in_flight_.load();
    while (now > prev && !max_in_flight_.compare_exchange_weak(prev, now)) {
    }
    if (delay.count() > 0) std::this_thread::sleep_for(delay);
  }
  void leave() { --in_flight_; }

  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<std::size_t> requests_{0};
  std::atomic<std::size_t> in_flight_{0};
  std::atomic<std::size_t> max_in_flight_{0};
};

inline qecascade::EndpointConfig endpoint(const MockServer& server, const std::string& model) {
  qecascade::EndpointConfig ep;
  ep.base_url = server.url();
  ep.model_name = model;
  ep.timeout_seconds = 5.0;
  ep.max_retries = 1;
  ep.retry_backoff_ms = 0;
  ep.max_in_flight = 4;
  return ep;
}

}  // namespace fixtures
