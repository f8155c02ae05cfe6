#include "qecascade/evaluation.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <random>
#include <thread>

#include <json.hpp>

#include "qecascade/random.hpp"

namespace qecascade {

namespace {

std::string format_number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

void require_same_length(std::size_t a, std::size_t b) {
  if (a != b) {
    throw DomainError("paired samples differ in length (" + std::to_string(a) + " vs " +
                      std::to_string(b) + ")");
  }
}

// Monte Carlo sign flips run in a fixed number of independently seeded
// streams so the p-value does not depend on how many threads execute them.
constexpr std::size_t kPermutationStreams = 16;

// Exact enumeration beyond this is not feasible.
constexpr std::size_t kMaxEnumerableN = 40;

std::size_t monte_carlo_hits(std::span<const double> diffs, double threshold,
                             std::size_t iterations, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::size_t hits = 0;
  const std::size_t n = diffs.size();
  for (std::size_t it = 0; it < iterations; ++it) {
    double sum = 0.0;
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (i % 64 == 0) bits = rng();
      sum += (bits & 1u) ? -diffs[i] : diffs[i];
      bits >>= 1;
    }
    if (std::fabs(sum) >= threshold) ++hits;
  }
  return hits;
}

}  // namespace

std::vector<double> default_eta_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 10; ++i) grid.push_back(i / 10.0);
  return grid;
}

double mean_quality(std::span<const double> realized) {
  if (realized.empty()) throw DomainError("mean of an empty quality list");
  double sum = 0.0;
  for (double v : realized) sum += v;
  return sum / static_cast<double>(realized.size());
}

double mean_quality(const Batch& batch, std::span<const double> realized) {
  if (realized.size() != batch.size()) {
    throw DomainError("realized quality list does not match batch size");
  }
  return mean_quality(realized);
}

double column_mean(const Batch& batch, const std::string& column) {
  std::vector<double> values;
  values.reserve(batch.size());
  for (const auto& r : batch.records) values.push_back(r.require_score(column));
  return mean_quality(values);
}

WinTieLoss win_tie_loss(std::span<const double> a, std::span<const double> b, double threshold) {
  require_same_length(a.size(), b.size());
  if (!(threshold >= 0.0)) throw DomainError("tie threshold must be >= 0");
  if (a.empty()) throw DomainError("win/tie/loss over an empty batch");

  std::size_t wins = 0, ties = 0, losses = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (std::fabs(d) < threshold) {
      ++ties;
    } else if (d >= threshold) {
      ++wins;
    } else {
      ++losses;
    }
  }
  const auto n = static_cast<double>(a.size());
  return WinTieLoss{wins / n, ties / n, losses / n, threshold, a.size()};
}

WinTieLoss win_tie_loss(const Batch& batch, const std::string& col_a, const std::string& col_b,
                        double threshold) {
  std::vector<double> a, b;
  for (const auto& r : batch.records) {
    a.push_back(r.require_score(col_a));
    b.push_back(r.require_score(col_b));
  }
  return win_tie_loss(a, b, threshold);
}

std::vector<CurvePoint> deferral_curve(const Batch& batch, const DeferralRule& rule,
                                       std::span<const double> grid, const CostModel& cost,
                                       const QualityColumns& columns) {
  const auto report = validate_for_rule(batch, rule);
  if (!report.ok()) {
    const auto& first = report.missing.front();
    throw MissingColumnError(first.record_id, first.columns.front());
  }
  std::vector<CurvePoint> curve;
  curve.reserve(grid.size());
  for (double eta : grid) {
    const auto decision = select_deferrals(batch, rule, DeferralBudget(eta));
    const auto realized = apply_decision(batch, decision, columns);
    const auto cost_report =
        cascade_flops(cost, decision.eta_effective, static_cast<double>(batch.size()));
    curve.push_back(CurvePoint{eta, decision.eta_effective, mean_quality(batch, realized),
                               cost_report.flops, cost_report.relative_cost_x, rule});
  }
  return curve;
}

std::vector<CurvePoint> aggregate_curves(std::span<const std::vector<CurvePoint>> curves,
                                         std::span<const double> batch_sizes,
                                         const CostModel& cost) {
  if (curves.empty()) throw DomainError("no curves to aggregate");
  require_same_length(curves.size(), batch_sizes.size());
  const std::size_t points = curves.front().size();
  double always_large = 0.0;
  for (double b : batch_sizes) always_large += single_model_flops(cost.n_large, cost.d_large, b);
  double total_b = 0.0;
  for (double b : batch_sizes) total_b += b;

  std::vector<CurvePoint> out;
  for (std::size_t p = 0; p < points; ++p) {
    CurvePoint agg;
    agg.eta = curves.front()[p].eta;
    agg.rule = curves.front()[p].rule;
    double deferred = 0.0;
    for (std::size_t c = 0; c < curves.size(); ++c) {
      if (curves[c].size() != points || curves[c][p].eta != agg.eta) {
        throw DomainError("curves to aggregate must share one grid");
      }
      agg.mean_quality += curves[c][p].mean_quality;
      agg.flops += curves[c][p].flops;
      deferred += curves[c][p].eta_effective * batch_sizes[c];
    }
    agg.mean_quality /= static_cast<double>(curves.size());
    agg.eta_effective = deferred / total_b;
    agg.relative_cost_x = agg.flops / always_large;
    out.push_back(agg);
  }
  return out;
}

std::optional<double> crossover_budget(std::span<const CurvePoint> curve, double target) {
  if (curve.empty()) throw DomainError("crossover of an empty curve");
  for (const auto& point : curve) {
    if (point.mean_quality >= target) return point.eta;
  }
  return std::nullopt;
}

PermutationTestResult paired_permutation_test(std::span<const double> a,
                                              std::span<const double> b,
                                              const PermutationTestOptions& options) {
  require_same_length(a.size(), b.size());
  if (a.empty()) throw DomainError("permutation test needs at least one pair");
  if (options.iterations == 0) throw DomainError("permutation test needs iterations >= 1");

  const std::size_t n = a.size();
  std::vector<double> diffs(n);
  double observed_sum = 0.0;
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    diffs[i] = a[i] - b[i];
    observed_sum += diffs[i];
    scale += std::fabs(diffs[i]);
  }
  // Sign vectors whose statistic equals the observed one in exact arithmetic
  // can land an ulp below it after summation; they still count as hits.
  const double threshold = std::fabs(observed_sum) - 1e-12 * scale;

  PermutationTestResult result;
  result.observed_stat = std::fabs(observed_sum) / static_cast<double>(n);
  result.n_pairs = n;

  if (n <= options.max_exact_n) {
    if (n > kMaxEnumerableN) {
      throw DomainError("exact enumeration requested for " + std::to_string(n) + " pairs");
    }
    // Flipping every sign negates the sum, so fix the last sign and double.
    const std::uint64_t half = std::uint64_t{1} << (n - 1);
    std::uint64_t hits = 0;
    for (std::uint64_t mask = 0; mask < half; ++mask) {
      double sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) sum += ((mask >> i) & 1u) ? -diffs[i] : diffs[i];
      if (std::fabs(sum) >= threshold) ++hits;
    }
    result.mode = PermutationTestResult::Mode::exact;
    result.p_value = static_cast<double>(hits) / static_cast<double>(half);
    return result;
  }

  std::array<std::size_t, kPermutationStreams> stream_hits{};
  auto run_stream = [&](std::size_t s) {
    const std::size_t share = options.iterations / kPermutationStreams +
                              (s < options.iterations % kPermutationStreams ? 1 : 0);
    stream_hits[s] = monte_carlo_hits(diffs, threshold, share,
                                      splitmix64(options.seed ^ splitmix64(s + 1)));
  };
  const std::size_t workers =
      std::clamp<std::size_t>(std::thread::hardware_concurrency(), 1, kPermutationStreams);
  if (workers == 1) {
    for (std::size_t s = 0; s < kPermutationStreams; ++s) run_stream(s);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t s = w; s < kPermutationStreams; s += workers) run_stream(s);
      });
    }
  }
  std::size_t hits = 0;
  for (auto h : stream_hits) hits += h;

  result.mode = PermutationTestResult::Mode::monte_carlo;
  result.iterations = options.iterations;
  result.seed = options.seed;
  result.p_value =
      static_cast<double>(1 + hits) / static_cast<double>(options.iterations + 1);
  return result;
}

std::vector<SignificancePoint> significance_band(const Batch& batch, const DeferralRule& rule,
                                                 std::span<const double> grid,
                                                 const QualityColumns& columns,
                                                 const std::string& reference_column,
                                                 double alpha,
                                                 const PermutationTestOptions& options) {
  std::vector<double> reference;
  reference.reserve(batch.size());
  for (const auto& r : batch.records) reference.push_back(r.require_score(reference_column));

  std::vector<SignificancePoint> band;
  for (double eta : grid) {
    const auto decision = select_deferrals(batch, rule, DeferralBudget(eta));
    const auto realized = apply_decision(batch, decision, columns);
    const auto test = paired_permutation_test(realized, reference, options);
    band.push_back(SignificancePoint{eta, test.p_value, test.p_value >= alpha});
  }
  return band;
}

std::string curves_to_csv(std::span<const std::vector<CurvePoint>> curves) {
  std::string out = "rule,eta,mean_quality,flops,relative_cost_x\n";
  for (const auto& curve : curves) {
    for (const auto& p : curve) {
      out += std::string(rule_name(p.rule.kind)) + ',' + format_number(p.eta) + ',' +
             format_number(p.mean_quality) + ',' + format_number(p.flops) + ',' +
             format_number(p.relative_cost_x) + '\n';
    }
  }
  return out;
}

std::string permutation_result_to_json(const PermutationTestResult& result, double alpha) {
  nlohmann::ordered_json out;
  out["p_value"] = result.p_value;
  out["observed_stat"] = result.observed_stat;
  if (result.mode == PermutationTestResult::Mode::exact) {
    out["mode"] = "exact";
  } else {
    out["mode"] = "monte_carlo";
    out["iterations"] = result.iterations;
    out["seed"] = result.seed;
  }
  out["n_pairs"] = result.n_pairs;
  out["alpha"] = alpha;
  out["significant"] = result.p_value < alpha;
  return out.dump(2) + "\n";
}

std::string win_tie_loss_to_json(const WinTieLoss& wtl, const std::string& col_a,
                                 const std::string& col_b) {
  nlohmann::ordered_json out;
  out["a"] = col_a;
  out["b"] = col_b;
  out["wins"] = wtl.wins;
  out["ties"] = wtl.ties;
  out["losses"] = wtl.losses;
  out["threshold"] = wtl.threshold;
  out["n"] = wtl.n;
  return out.dump(2) + "\n";
}

}  // namespace qecascade
