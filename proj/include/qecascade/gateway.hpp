#pragma once

#include <atomic>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qecascade/core.hpp"
#include "qecascade/costmodel.hpp"
#include "qecascade/deferral.hpp"
#include "qecascade/response_cache.hpp"

namespace qecascade {

/// Auth variable named by an endpoint is unset, or the endpoint is unusable.
class ConfigurationError : public Error {
 public:
  using Error::Error;
};

/// A remote service.
///
/// Translation endpoints speak a chat-completions style protocol: the
/// prompt is rendered from `prompt_template` ({source}, {src_lang},
/// {tgt_lang}, {lang_pair} are substituted) and the reply is read from
/// choices[0].message.content. QE endpoints take {model, source, hypothesis}
/// and answer {score}; `score_direction` says which way that score points.
struct EndpointConfig {
  std::string base_url;  // scheme://host[:port]
  std::string path;      // defaults per role when empty
  std::string model_name;
  std::string auth_token_env;  // empty: no Authorization header
  double timeout_seconds = 60.0;
  std::size_t max_retries = 2;
  std::size_t max_in_flight = 4;
  std::size_t retry_backoff_ms = 200;
  std::string prompt_template;  // empty: default_prompt_template()
  bool greedy = true;
  Direction score_direction = Direction::higher_better;

  void validate() const;
};

std::string default_prompt_template();
std::string render_prompt(const std::string& tmpl, const std::string& source,
                          const std::string& lang_pair);

/// Counters shared by all workers of a call.
struct GatewayStats {
  std::atomic<std::size_t> network_requests{0};
  std::atomic<std::size_t> cache_hits{0};
};

template <typename T>
struct ItemResult {
  std::optional<T> value;
  std::string error;
  std::size_t attempts = 0;  // network attempts; 0 for cache hits
  bool from_cache = false;

  bool ok() const noexcept { return value.has_value(); }
};

struct SourceSegment {
  std::string id;
  std::string source;
  std::string lang_pair;
  std::optional<std::int64_t> src_token_len;
};

/// One hypothesis per source, in input order. A null cache disables caching.
std::vector<ItemResult<std::string>> translate_batch(std::span<const SourceSegment> sources,
                                                     const EndpointConfig& endpoint,
                                                     ResponseCache* cache,
                                                     GatewayStats* stats = nullptr);

struct ScoreRequest {
  std::string source;
  std::string hypothesis;
};

/// One higher-is-better QE score per pair, in input order.
std::vector<ItemResult<double>> score_batch(std::span<const ScoreRequest> pairs,
                                            const EndpointConfig& endpoint, ResponseCache* cache,
                                            GatewayStats* stats = nullptr);

struct LiveEndpoints {
  EndpointConfig small;
  EndpointConfig qe;
  EndpointConfig large;
};

struct ItemFailure {
  std::string id;
  std::string stage;  // translate_small | score_qe | translate_large
  std::string message;
};

struct LiveRunResult {
  Batch batch;  // successfully scored sources, input order
  DeferralDecision decision;
  std::optional<CostReport> cost;  // absent when nothing was scored
  std::vector<ItemFailure> failures;
};

/// Small model translates everything, QE scores everything, the lowest-scored
/// share `budget` goes to the large model.
LiveRunResult run_cascade_live(std::span<const SourceSegment> sources,
                               const LiveEndpoints& endpoints, DeferralBudget budget,
                               const CostModel& cost, ResponseCache* cache,
                               GatewayStats* stats = nullptr);

std::string failures_to_json(std::span<const ItemFailure> failures);

/// Reads {id, source, lang_pair?, src_token_len?} lines.
std::vector<SourceSegment> load_sources(const std::filesystem::path& path);

}  // namespace qecascade
