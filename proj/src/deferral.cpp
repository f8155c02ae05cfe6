#include "qecascade/deferral.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "qecascade/random.hpp"

namespace qecascade {

std::string_view rule_name(RuleKind kind) {
  switch (kind) {
    case RuleKind::qe: return "qe";
    case RuleKind::random: return "random";
    case RuleKind::length_shortest: return "length";
    case RuleKind::length_longest: return "-length";
    case RuleKind::logprobs: return "logprobs";
    case RuleKind::oracle: return "oracle";
  }
  return "unknown";
}

RuleKind parse_rule_kind(std::string_view name) {
  if (name == "qe") return RuleKind::qe;
  if (name == "random") return RuleKind::random;
  if (name == "length" || name == "length-shortest") return RuleKind::length_shortest;
  if (name == "-length" || name == "length-longest") return RuleKind::length_longest;
  if (name == "logprobs") return RuleKind::logprobs;
  if (name == "oracle") return RuleKind::oracle;
  throw ValidationError("unknown deferral rule '" + std::string(name) + "'");
}

namespace {

std::vector<std::string> required_columns(const DeferralRule& rule) {
  switch (rule.kind) {
    case RuleKind::qe: return {"qe_small"};
    case RuleKind::random: return {};
    case RuleKind::length_shortest:
    case RuleKind::length_longest: return {"src_token_len"};
    case RuleKind::logprobs: return {"logprob_small", "hyp_token_len"};
    case RuleKind::oracle: return {rule.oracle_columns.small, rule.oracle_columns.large};
  }
  return {};
}

bool has_column(const TranslationRecord& r, const std::string& column) {
  if (column == "src_token_len") return r.src_token_len.has_value();
  if (column == "hyp_token_len") return r.hyp_token_len.has_value();
  return r.score(column).has_value();
}

}  // namespace

std::vector<std::string> ValidationReport::record_ids() const {
  std::vector<std::string> ids;
  ids.reserve(missing.size());
  for (const auto& m : missing) ids.push_back(m.record_id);
  return ids;
}

std::string ValidationReport::describe() const {
  std::string out;
  for (const auto& m : missing) {
    out += "record '" + m.record_id + "' missing:";
    for (const auto& c : m.columns) out += " " + c;
    out += '\n';
  }
  return out;
}

ValidationReport validate_for_rule(const Batch& batch, const DeferralRule& rule) {
  ValidationReport report;
  const auto needed = required_columns(rule);
  for (const auto& r : batch.records) {
    MissingColumns entry{r.id, {}};
    for (const auto& column : needed) {
      if (!has_column(r, column)) entry.columns.push_back(column);
    }
    if (!entry.columns.empty()) report.missing.push_back(std::move(entry));
  }
  return report;
}

DeferralBudget::DeferralBudget(double eta) : eta_(eta) {
  if (!(eta >= 0.0 && eta <= 1.0)) {
    throw DomainError("deferral budget eta must lie in [0, 1], got " + std::to_string(eta));
  }
}

bool DeferralDecision::contains(std::size_t index) const {
  return std::binary_search(deferred.begin(), deferred.end(), index);
}

std::size_t deferral_count(double eta, std::size_t batch_size) {
  if (!(eta >= 0.0 && eta <= 1.0)) throw DomainError("eta must lie in [0, 1]");
  // The slack absorbs products such as 0.35 * 10 = 3.4999999999999996 so grid
  // points written in decimal round the way they read.
  const double scaled = eta * static_cast<double>(batch_size);
  auto k = static_cast<std::size_t>(std::floor(scaled + 0.5 + 1e-9 * std::max(1.0, scaled)));
  return std::min(k, batch_size);
}

double priority(const TranslationRecord& r, const DeferralRule& rule) {
  switch (rule.kind) {
    case RuleKind::qe:
      return -r.require_score("qe_small");
    case RuleKind::logprobs: {
      const double logprob = r.require_score("logprob_small");
      if (!r.hyp_token_len) throw MissingColumnError(r.id, "hyp_token_len");
      return -(logprob / static_cast<double>(*r.hyp_token_len));
    }
    case RuleKind::length_shortest:
      if (!r.src_token_len) throw MissingColumnError(r.id, "src_token_len");
      return -static_cast<double>(*r.src_token_len);
    case RuleKind::length_longest:
      if (!r.src_token_len) throw MissingColumnError(r.id, "src_token_len");
      return static_cast<double>(*r.src_token_len);
    case RuleKind::oracle:
      return r.require_score(rule.oracle_columns.large) -
             r.require_score(rule.oracle_columns.small);
    case RuleKind::random:
      break;
  }
  throw std::invalid_argument("the random rule has no per-record priority");
}

DeferralDecision select_deferrals(const Batch& batch, const DeferralRule& rule,
                                  DeferralBudget budget) {
  const std::size_t n = batch.size();
  const std::size_t k = deferral_count(budget.eta(), n);

  DeferralDecision decision;
  decision.rule = rule;
  decision.eta_requested = budget.eta();
  decision.eta_effective = n == 0 ? 0.0 : static_cast<double>(k) / static_cast<double>(n);

  if (rule.kind == RuleKind::random) {
    auto perm = seeded_permutation(n, rule.seed);
    decision.deferred.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(k));
  } else {
    // Priorities are computed for every record, even at k = 0, so a missing
    // column is reported regardless of budget.
    std::vector<double> prio(n);
    for (std::size_t i = 0; i < n; ++i) prio[i] = priority(batch.records[i], rule);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return prio[a] > prio[b]; });
    decision.deferred.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  }
  std::sort(decision.deferred.begin(), decision.deferred.end());
  return decision;
}

std::vector<double> apply_decision(const Batch& batch, const DeferralDecision& decision,
                                   const QualityColumns& columns) {
  std::vector<char> deferred(batch.size(), 0);
  for (auto i : decision.deferred) {
    if (i >= batch.size()) throw DomainError("deferred index out of range");
    deferred[i] = 1;
  }
  std::vector<double> realized;
  realized.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    realized.push_back(batch.records[i].require_score(deferred[i] ? columns.large : columns.small));
  }
  return realized;
}

std::string decision_to_json(const Batch& batch, const DeferralDecision& decision) {
  nlohmann::ordered_json out;
  out["rule"] = std::string(rule_name(decision.rule.kind));
  if (decision.rule.kind == RuleKind::random) out["seed"] = decision.rule.seed;
  if (decision.rule.kind == RuleKind::oracle) {
    out["oracle_columns"] = {decision.rule.oracle_columns.small,
                             decision.rule.oracle_columns.large};
  }
  out["eta_requested"] = decision.eta_requested;
  out["eta_effective"] = decision.eta_effective;
  auto ids = nlohmann::ordered_json::array();
  for (auto i : decision.deferred) ids.push_back(batch.records.at(i).id);
  out["deferred_ids"] = std::move(ids);
  return out.dump(2) + "\n";
}

}  // namespace qecascade
