#include "qecascade/gateway.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <thread>

#include <httplib.h>
#include <json.hpp>

namespace qecascade {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr const char* kDefaultTranslatePath = "/v1/chat/completions";
constexpr const char* kDefaultScorePath = "/score";

void replace_all(std::string& text, std::string_view from, const std::string& to) {
  std::size_t pos = 0;
  while ((pos = text.find(from, pos)) != std::string::npos) {
    text.replace(pos, from.size(), to);
    pos += to.size();
  }
}

std::optional<std::string> resolve_token(const EndpointConfig& endpoint) {
  if (endpoint.auth_token_env.empty()) return std::nullopt;
  const char* value = std::getenv(endpoint.auth_token_env.c_str());
  if (value == nullptr || *value == '\0') {
    throw ConfigurationError("environment variable '" + endpoint.auth_token_env +
                             "' (auth for " + endpoint.base_url + ") is not set");
  }
  return std::string(value);
}

// Sends every payload to `path`, consulting the cache first, with at most
// max_in_flight requests outstanding. `parse` turns a response body into a
// value and throws on anything unusable; such responses are retried and
// never cached.
template <typename T>
std::vector<ItemResult<T>> dispatch(const std::vector<std::string>& payloads,
                                    const EndpointConfig& endpoint, const std::string& path,
                                    ResponseCache* cache, GatewayStats* stats,
                                    const std::function<T(const std::string&)>& parse) {
  endpoint.validate();
  std::vector<ItemResult<T>> results(payloads.size());
  std::vector<std::string> keys(payloads.size());
  std::vector<std::size_t> misses;

  const std::string identity = endpoint.base_url + path;
  for (std::size_t i = 0; i < payloads.size(); ++i) {
    keys[i] = ResponseCache::make_key(identity, endpoint.model_name, payloads[i]);
    if (cache) {
      if (auto entry = cache->lookup(keys[i])) {
        try {
          results[i].value = parse(entry->response);
          results[i].from_cache = true;
          if (stats) ++stats->cache_hits;
          continue;
        } catch (const std::exception&) {
          // Unparseable cached body: fall through and refetch.
        }
      }
    }
    misses.push_back(i);
  }
  if (misses.empty()) return results;

  const auto token = resolve_token(endpoint);
  httplib::Headers headers;
  if (token) headers.emplace("Authorization", "Bearer " + *token);

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    httplib::Client client(endpoint.base_url);
    const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
        std::chrono::duration<double>(endpoint.timeout_seconds));
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    for (std::size_t m = next++; m < misses.size(); m = next++) {
      const std::size_t i = misses[m];
      auto& result = results[i];
      for (std::size_t attempt = 0; attempt <= endpoint.max_retries; ++attempt) {
        if (attempt > 0 && endpoint.retry_backoff_ms > 0) {
          std::this_thread::sleep_for(std::chrono::milliseconds(endpoint.retry_backoff_ms * attempt));
        }
        ++result.attempts;
        if (stats) ++stats->network_requests;
        auto response = client.Post(path, headers, payloads[i], "application/json");
        if (!response) {
          result.error = "request failed: " + httplib::to_string(response.error());
          continue;
        }
        if (response->status != 200) {
          result.error = "HTTP " + std::to_string(response->status);
          continue;
        }
        try {
          result.value = parse(response->body);
        } catch (const std::exception& e) {
          result.error = std::string("bad response: ") + e.what();
          continue;
        }
        result.error.clear();
        if (cache) {
          try {
            cache->store(keys[i], response->body);
          } catch (const std::exception&) {
            // A read-only cache must not fail the request itself.
          }
        }
        break;
      }
    }
  };

  const std::size_t workers = std::min(endpoint.max_in_flight, misses.size());
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  return results;
}

std::string parse_completion(const std::string& body) {
  const auto doc = json::parse(body);
  return doc.at("choices").at(0).at("message").at("content").get<std::string>();
}

double parse_score(const std::string& body) {
  const auto doc = json::parse(body);
  const auto& score = doc.at("score");
  if (!score.is_number()) throw std::runtime_error("score is not a number");
  const double v = score.get<double>();
  if (!std::isfinite(v)) throw std::runtime_error("score is not finite");
  return v;
}

}  // namespace

void EndpointConfig::validate() const {
  if (base_url.empty()) throw ConfigurationError("endpoint base_url is empty");
  if (!(timeout_seconds > 0.0)) throw ConfigurationError("endpoint timeout must be > 0");
  if (max_in_flight < 1) throw ConfigurationError("endpoint max_in_flight must be >= 1");
}

std::string default_prompt_template() {
  return "Translate the following text from {src_lang} into {tgt_lang}.\n"
         "{src_lang}: {source}\n"
         "{tgt_lang}:";
}

std::string render_prompt(const std::string& tmpl, const std::string& source,
                          const std::string& lang_pair) {
  std::string src_lang = lang_pair, tgt_lang;
  if (auto dash = lang_pair.find('-'); dash != std::string::npos) {
    src_lang = lang_pair.substr(0, dash);
    tgt_lang = lang_pair.substr(dash + 1);
  }
  std::string out = tmpl.empty() ? default_prompt_template() : tmpl;
  // Source text goes in last so braces inside it are left alone.
  replace_all(out, "{src_lang}", src_lang);
  replace_all(out, "{tgt_lang}", tgt_lang);
  replace_all(out, "{lang_pair}", lang_pair);
  const auto pos = out.find("{source}");
  if (pos != std::string::npos) out.replace(pos, 8, source);
  return out;
}

std::vector<ItemResult<std::string>> translate_batch(std::span<const SourceSegment> sources,
                                                     const EndpointConfig& endpoint,
                                                     ResponseCache* cache, GatewayStats* stats) {
  std::vector<std::string> payloads;
  payloads.reserve(sources.size());
  for (const auto& s : sources) {
    ordered_json body;
    body["model"] = endpoint.model_name;
    body["messages"] = ordered_json::array(
        {{{"role", "user"}, {"content", render_prompt(endpoint.prompt_template, s.source, s.lang_pair)}}});
    if (endpoint.greedy) body["temperature"] = 0.0;
    payloads.push_back(body.dump());
  }
  const std::string path = endpoint.path.empty() ? kDefaultTranslatePath : endpoint.path;
  return dispatch<std::string>(payloads, endpoint, path, cache, stats, parse_completion);
}

std::vector<ItemResult<double>> score_batch(std::span<const ScoreRequest> pairs,
                                            const EndpointConfig& endpoint, ResponseCache* cache,
                                            GatewayStats* stats) {
  std::vector<std::string> payloads;
  payloads.reserve(pairs.size());
  for (const auto& p : pairs) {
    ordered_json body;
    body["model"] = endpoint.model_name;
    body["source"] = p.source;
    body["hypothesis"] = p.hypothesis;
    payloads.push_back(body.dump());
  }
  const std::string path = endpoint.path.empty() ? kDefaultScorePath : endpoint.path;
  auto results = dispatch<double>(payloads, endpoint, path, cache, stats, parse_score);
  if (endpoint.score_direction == Direction::lower_better) {
    for (auto& r : results) {
      if (r.value) *r.value = -*r.value;
    }
  }
  return results;
}

LiveRunResult run_cascade_live(std::span<const SourceSegment> sources,
                               const LiveEndpoints& endpoints, DeferralBudget budget,
                               const CostModel& cost, ResponseCache* cache, GatewayStats* stats) {
  // Fail on configuration before any traffic.
  endpoints.small.validate();
  endpoints.qe.validate();
  endpoints.large.validate();
  cost.validate();

  LiveRunResult run;
  run.batch.name = "live";

  const auto small = translate_batch(sources, endpoints.small, cache, stats);
  std::vector<std::size_t> translated;
  std::vector<ScoreRequest> pairs;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    if (!small[i].ok()) {
      run.failures.push_back({sources[i].id, "translate_small", small[i].error});
      continue;
    }
    translated.push_back(i);
    pairs.push_back({sources[i].source, *small[i].value});
  }

  const auto scores = score_batch(pairs, endpoints.qe, cache, stats);
  std::vector<std::size_t> source_of_record;
  for (std::size_t j = 0; j < translated.size(); ++j) {
    const auto& src = sources[translated[j]];
    if (!scores[j].ok()) {
      run.failures.push_back({src.id, "score_qe", scores[j].error});
      continue;
    }
    TranslationRecord record;
    record.id = src.id;
    record.lang_pair = src.lang_pair;
    record.source = src.source;
    record.src_token_len = src.src_token_len;
    record.hyp_small = pairs[j].hypothesis;
    record.qe_small = *scores[j].value;
    run.batch.records.push_back(std::move(record));
    source_of_record.push_back(translated[j]);
  }

  run.decision = select_deferrals(run.batch, DeferralRule::qe(), budget);

  std::vector<SourceSegment> escalated;
  for (auto i : run.decision.deferred) escalated.push_back(sources[source_of_record[i]]);
  const auto large = translate_batch(escalated, endpoints.large, cache, stats);
  for (std::size_t j = 0; j < escalated.size(); ++j) {
    auto& record = run.batch.records[run.decision.deferred[j]];
    if (large[j].ok()) {
      record.hyp_large = *large[j].value;
    } else {
      run.failures.push_back({record.id, "translate_large", large[j].error});
    }
  }

  if (!run.batch.empty()) {
    run.cost = cascade_flops(cost, run.decision.eta_effective,
                             static_cast<double>(run.batch.size()));
  }
  return run;
}

std::string failures_to_json(std::span<const ItemFailure> failures) {
  auto out = ordered_json::array();
  for (const auto& f : failures) {
    out.push_back(ordered_json{{"id", f.id}, {"stage", f.stage}, {"message", f.message}});
  }
  return out.dump(2) + "\n";
}

std::vector<SourceSegment> load_sources(const std::filesystem::path& path) {
  const auto batch = load_batch(path);
  std::vector<SourceSegment> sources;
  sources.reserve(batch.size());
  for (const auto& r : batch.records) {
    sources.push_back({r.id, r.source, r.lang_pair, r.src_token_len});
  }
  return sources;
}

}  // namespace qecascade
