#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "qecascade/core.hpp"

namespace qecascade {

enum class RuleKind { qe, random, length_shortest, length_longest, logprobs, oracle };

/// Which inputs get escalated to the large model.
///
/// `seed` is only meaningful for RuleKind::random and `oracle_columns` only for
/// RuleKind::oracle (they name the ground-truth quality pair, automatic metric
/// or human scores).
struct DeferralRule {
  RuleKind kind = RuleKind::qe;
  std::uint64_t seed = 0;
  QualityColumns oracle_columns;

  static DeferralRule qe() { return {RuleKind::qe, 0, {}}; }
  static DeferralRule random(std::uint64_t seed) { return {RuleKind::random, seed, {}}; }
  static DeferralRule length_shortest() { return {RuleKind::length_shortest, 0, {}}; }
  static DeferralRule length_longest() { return {RuleKind::length_longest, 0, {}}; }
  static DeferralRule logprobs() { return {RuleKind::logprobs, 0, {}}; }
  static DeferralRule oracle(QualityColumns columns = {}) {
    return {RuleKind::oracle, 0, std::move(columns)};
  }

  /// Score-based rules rank by a fixed per-record priority; random does not.
  bool score_based() const noexcept { return kind != RuleKind::random; }

  bool operator==(const DeferralRule&) const = default;
};

/// "qe", "random", "length", "-length", "logprobs", "oracle".
std::string_view rule_name(RuleKind kind);
/// Accepts the names above plus "length-shortest" / "length-longest".
RuleKind parse_rule_kind(std::string_view name);

/// Per-record report entry: a record id and the columns it lacks.
struct MissingColumns {
  std::string record_id;
  std::vector<std::string> columns;
};

struct ValidationReport {
  std::vector<MissingColumns> missing;
  bool ok() const noexcept { return missing.empty(); }
  std::vector<std::string> record_ids() const;
  std::string describe() const;
};

/// Reports every record lacking a column `rule` needs. Never throws.
ValidationReport validate_for_rule(const Batch& batch, const DeferralRule& rule);

/// Fraction of the batch processed by the large model, in [0, 1].
class DeferralBudget {
 public:
  explicit DeferralBudget(double eta);
  double eta() const noexcept { return eta_; }

 private:
  double eta_;
};

struct DeferralDecision {
  std::vector<std::size_t> deferred;  // ascending, unique
  double eta_requested = 0.0;
  double eta_effective = 0.0;
  DeferralRule rule;

  bool contains(std::size_t index) const;
  bool operator==(const DeferralDecision&) const = default;
};

/// k = round_half_up(eta * B), clamped to [0, B].
std::size_t deferral_count(double eta, std::size_t batch_size);

/// Larger means more deserving of deferral. Throws MissingColumnError.
/// Not defined for the random rule (throws std::invalid_argument).
double priority(const TranslationRecord& record, const DeferralRule& rule);

/// Picks the k highest-priority records (ties: lower index first). The random
/// rule takes the first k entries of a seeded Fisher-Yates permutation.
DeferralDecision select_deferrals(const Batch& batch, const DeferralRule& rule,
                                  DeferralBudget budget);

/// Quality of the cascade output per record: large-side score if deferred,
/// small-side score otherwise.
std::vector<double> apply_decision(const Batch& batch, const DeferralDecision& decision,
                                   const QualityColumns& columns);

/// {rule, seed?, eta_requested, eta_effective, deferred_ids}
std::string decision_to_json(const Batch& batch, const DeferralDecision& decision);

}  // namespace qecascade
