#include <doctest.h>

#include <numeric>
#include <random>
#include <set>

#include "fixtures.hpp"
#include "qecascade/deferral.hpp"
#include "qecascade/evaluation.hpp"
#include "qecascade/random.hpp"

using namespace qecascade;

TEST_CASE("priority per rule") {
  auto r = fixtures::record("p");
  r.qe_small = 0.8;
  CHECK(priority(r, DeferralRule::qe()) == -0.8);

  r.logprob_small = -12.0;
  r.hyp_token_len = 6;
  CHECK(priority(r, DeferralRule::logprobs()) == 2.0);

  r.quality_small = -3.0;
  r.quality_large = -2.5;
  CHECK(priority(r, DeferralRule::oracle()) == 0.5);

  r.src_token_len = 17;
  CHECK(priority(r, DeferralRule::length_shortest()) == -17.0);
  CHECK(priority(r, DeferralRule::length_longest()) == 17.0);

  CHECK_THROWS_AS(priority(r, DeferralRule::random(1)), std::invalid_argument);

  auto bare = fixtures::record("bare");
  try {
    priority(bare, DeferralRule::qe());
    FAIL("expected MissingColumnError");
  } catch (const MissingColumnError& e) {
    CHECK(e.record_id() == "bare");
    CHECK(e.column() == "qe_small");
  }
  CHECK_THROWS_AS(priority(bare, DeferralRule::length_longest()), MissingColumnError);
  CHECK_THROWS_AS(priority(bare, DeferralRule::oracle()), MissingColumnError);
}

TEST_CASE("budget domain and deferral count rounding") {
  CHECK_THROWS_AS(DeferralBudget(-0.01), DomainError);
  CHECK_THROWS_AS(DeferralBudget(1.01), DomainError);
  CHECK_THROWS_AS(DeferralBudget(std::nan("")), DomainError);
  CHECK(deferral_count(0.5, 4) == 2);
  CHECK(deferral_count(0.25, 10) == 3);  // 2.5 rounds half up
  CHECK(deferral_count(0.35, 10) == 4);  // 3.4999999999999996 in binary
  CHECK(deferral_count(0.24, 10) == 2);
  CHECK(deferral_count(1.0, 7) == 7);
  CHECK(deferral_count(0.0, 7) == 0);
  CHECK(deferral_count(0.3, 0) == 0);
  for (int i = 0; i <= 10; ++i) CHECK(deferral_count(i / 10.0, 200) == static_cast<std::size_t>(20 * i));
}

TEST_CASE("select_deferrals examples") {
  const auto b = fixtures::qe_batch({0.9, 0.2, 0.5, 0.7});

  SUBCASE("eta 0 defers nothing, eta 1 everything") {
    for (auto rule : {DeferralRule::qe(), DeferralRule::random(5)}) {
      auto none = select_deferrals(b, rule, DeferralBudget(0.0));
      CHECK(none.deferred.empty());
      CHECK(none.eta_effective == 0.0);
      auto all = select_deferrals(b, rule, DeferralBudget(1.0));
      CHECK(all.deferred == std::vector<std::size_t>{0, 1, 2, 3});
      CHECK(all.eta_effective == 1.0);
    }
  }
  SUBCASE("QE defers the two lowest-scored") {
    auto d = select_deferrals(b, DeferralRule::qe(), DeferralBudget(0.5));
    CHECK(d.deferred == std::vector<std::size_t>{1, 2});
    CHECK(d.eta_requested == 0.5);
    CHECK(d.eta_effective == 0.5);
  }
  SUBCASE("oracle ties break by index") {
    auto q = fixtures::quality_batch({0.0, 0.0, 0.0, 0.0}, {-0.1, 0.4, 0.0, 0.4});
    auto d = select_deferrals(q, DeferralRule::oracle(), DeferralBudget(0.5));
    CHECK(d.deferred == std::vector<std::size_t>{1, 3});
    auto one = select_deferrals(q, DeferralRule::oracle(), DeferralBudget(0.25));
    CHECK(one.deferred == std::vector<std::size_t>{1});
  }
  SUBCASE("oracle fills every slot even with negative gains") {
    auto q = fixtures::quality_batch({0.0, 0.0}, {1.0, -1.0});
    auto d = select_deferrals(q, DeferralRule::oracle(), DeferralBudget(1.0));
    CHECK(d.deferred.size() == 2);
  }
  SUBCASE("empty batch") {
    auto d = select_deferrals(Batch{}, DeferralRule::qe(), DeferralBudget(0.7));
    CHECK(d.deferred.empty());
    CHECK(d.eta_effective == 0.0);
  }
  SUBCASE("missing column propagates even at eta 0") {
    auto partial = b;
    partial.records[2].qe_small.reset();
    CHECK_THROWS_AS(select_deferrals(partial, DeferralRule::qe(), DeferralBudget(0.0)),
                    MissingColumnError);
  }
}

TEST_CASE("random rule uses a seeded Fisher-Yates permutation") {
  // Golden value: mt19937_64 is fully specified, so this must not drift across
  // compilers or standard libraries.
  auto perm = seeded_permutation(10, 42);
  CHECK(perm == std::vector<std::size_t>{1, 7, 9, 0, 3, 8, 4, 2, 5, 6});
  std::vector<std::size_t> sorted = perm;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> iota(10);
  std::iota(iota.begin(), iota.end(), 0);
  CHECK(sorted == iota);
  CHECK(seeded_permutation(10, 42) == perm);
  CHECK(seeded_permutation(10, 43) != perm);

  const auto b = fixtures::qe_batch(std::vector<double>(10, 0.0));
  auto d = select_deferrals(b, DeferralRule::random(42), DeferralBudget(0.3));
  std::vector<std::size_t> expected(perm.begin(), perm.begin() + 3);
  std::sort(expected.begin(), expected.end());
  CHECK(d.deferred == expected);
}

TEST_CASE("uniform_index is unbiased enough and within bounds") {
  std::mt19937_64 rng(1);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) {
    auto v = uniform_index(rng, 6);
    REQUIRE(v <= 6);
    ++counts[v];
  }
  for (int c : counts) CHECK(std::abs(c - 10000) < 500);
  CHECK(uniform_index(rng, 0) == 0);
}

TEST_CASE("apply_decision realizes the cascade output") {
  const auto b = fixtures::quality_batch({1, 2}, {5, 0});
  DeferralDecision d;
  d.deferred = {0};
  CHECK(apply_decision(b, d, QualityColumns{}) == std::vector<double>{5, 2});
  d.deferred = {};
  CHECK(apply_decision(b, d, QualityColumns{}) == std::vector<double>{1, 2});
  d.deferred = {0, 1};
  CHECK(apply_decision(b, d, QualityColumns{}) == std::vector<double>{5, 0});
  d.deferred = {5};
  CHECK_THROWS_AS(apply_decision(b, d, QualityColumns{}), DomainError);

  auto missing = b;
  missing.records[1].quality_large.reset();
  d.deferred = {1};
  CHECK_THROWS_AS(apply_decision(missing, d, QualityColumns{}), MissingColumnError);
  d.deferred = {0};
  CHECK_NOTHROW(apply_decision(missing, d, QualityColumns{}));
}

TEST_CASE("deferral properties over random batches") {
  std::mt19937_64 rng(2024);
  const std::vector<RuleKind> score_rules = {RuleKind::qe, RuleKind::logprobs,
                                             RuleKind::length_shortest, RuleKind::length_longest,
                                             RuleKind::oracle};
  for (int trial = 0; trial < 150; ++trial) {
    const std::size_t n = 1 + rng() % 30;
    const auto batch = fixtures::random_full_batch(n, rng, trial % 2 == 0 ? 5 : 0);
    for (auto kind : score_rules) {
      DeferralRule rule{kind, 0, {}};
      std::vector<std::size_t> previous;
      for (int g = 0; g <= 20; ++g) {
        const double eta = g / 20.0;
        const auto d = select_deferrals(batch, rule, DeferralBudget(eta));
        // Invariant: size and uniqueness.
        REQUIRE(d.deferred.size() == deferral_count(eta, n));
        REQUIRE(std::set<std::size_t>(d.deferred.begin(), d.deferred.end()).size() == d.deferred.size());
        // Agreement with a naive full sort.
        REQUIRE(d.deferred == fixtures::naive_deferred(batch, kind, d.deferred.size()));
        // Monotone nesting.
        REQUIRE(std::includes(d.deferred.begin(), d.deferred.end(), previous.begin(), previous.end()));
        previous = d.deferred;
        // Determinism.
        REQUIRE(select_deferrals(batch, rule, DeferralBudget(eta)) == d);
      }
    }
  }
}

TEST_CASE("shuffling the batch defers the same ids when priorities are distinct") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    const auto batch = fixtures::random_full_batch(25, rng);
    auto shuffled = batch;
    std::shuffle(shuffled.records.begin(), shuffled.records.end(), rng);
    for (auto kind : {RuleKind::qe, RuleKind::logprobs, RuleKind::oracle}) {
      DeferralRule rule{kind, 0, {}};
      auto ids = [&](const Batch& b) {
        std::set<std::string> out;
        for (auto i : select_deferrals(b, rule, DeferralBudget(0.4)).deferred) out.insert(b.records[i].id);
        return out;
      };
      CHECK(ids(batch) == ids(shuffled));
    }
  }
}

TEST_CASE("oracle dominates every rule (brute force over subsets)") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng() % 10;
    const auto batch = fixtures::random_full_batch(n, rng);
    std::vector<double> small, large;
    for (const auto& r : batch.records) {
      small.push_back(*r.quality_small);
      large.push_back(*r.quality_large);
    }
    for (std::size_t k = 0; k <= n; ++k) {
      const double eta = static_cast<double>(k) / static_cast<double>(n);
      const auto oracle = select_deferrals(batch, DeferralRule::oracle(), DeferralBudget(eta));
      const double oracle_mean = mean_quality(apply_decision(batch, oracle, {}));
      CHECK(oracle_mean == doctest::Approx(fixtures::best_subset_mean(small, large, k)).epsilon(1e-12));
      for (auto rule : {DeferralRule::qe(), DeferralRule::logprobs(), DeferralRule::length_longest(),
                        DeferralRule::length_shortest(), DeferralRule::random(trial)}) {
        const auto d = select_deferrals(batch, rule, DeferralBudget(eta));
        CHECK(mean_quality(apply_decision(batch, d, {})) <= oracle_mean + 1e-12);
      }
    }
  }
}

TEST_CASE("random rule is linear in expectation") {
  std::mt19937_64 rng(31337);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> small, large;
  for (int i = 0; i < 100; ++i) {
    small.push_back(normal(rng));
    large.push_back(normal(rng) + 0.7);
  }
  const auto batch = fixtures::quality_batch(small, large);
  const double ms = std::accumulate(small.begin(), small.end(), 0.0) / 100.0;
  const double ml = std::accumulate(large.begin(), large.end(), 0.0) / 100.0;
  for (double eta : {0.2, 0.5, 0.8}) {
    double sum = 0.0, sum_sq = 0.0;
    const int seeds = 1000;
    for (int s = 0; s < seeds; ++s) {
      const auto d = select_deferrals(batch, DeferralRule::random(s), DeferralBudget(eta));
      const double m = mean_quality(apply_decision(batch, d, {}));
      sum += m;
      sum_sq += m * m;
    }
    const double avg = sum / seeds;
    const double se = std::sqrt((sum_sq / seeds - avg * avg) / (seeds - 1));
    CHECK(std::fabs(avg - ((1 - eta) * ms + eta * ml)) <= 3 * se);
  }
}

TEST_CASE("decision JSON") {
  const auto b = fixtures::qe_batch({0.9, 0.2, 0.5, 0.7});
  const auto d = select_deferrals(b, DeferralRule::qe(), DeferralBudget(0.5));
  const auto doc = nlohmann::json::parse(decision_to_json(b, d));
  CHECK(doc["rule"] == "qe");
  CHECK_FALSE(doc.contains("seed"));
  CHECK(doc["eta_requested"] == 0.5);
  CHECK(doc["eta_effective"] == 0.5);
  CHECK(doc["deferred_ids"] == nlohmann::json::array({"s1", "s2"}));

  const auto r = select_deferrals(b, DeferralRule::random(9), DeferralBudget(0.25));
  const auto rdoc = nlohmann::json::parse(decision_to_json(b, r));
  CHECK(rdoc["rule"] == "random");
  CHECK(rdoc["seed"] == 9);
}

TEST_CASE("rule names") {
  for (auto kind : {RuleKind::qe, RuleKind::random, RuleKind::length_shortest,
                    RuleKind::length_longest, RuleKind::logprobs, RuleKind::oracle}) {
    CHECK(parse_rule_kind(rule_name(kind)) == kind);
  }
  CHECK(parse_rule_kind("length-longest") == RuleKind::length_longest);
  CHECK_THROWS_AS(parse_rule_kind("threshold"), ValidationError);
}
