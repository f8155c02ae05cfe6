#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qecascade/core.hpp"
#include "qecascade/costmodel.hpp"
#include "qecascade/deferral.hpp"

namespace qecascade {

/// Segment-level difference below which two systems count as tied on MetricX.
inline constexpr double kDefaultTieThreshold = 0.122;
inline constexpr double kDefaultAlpha = 0.01;
inline constexpr std::size_t kDefaultMaxExactN = 20;

/// 0.0, 0.1, ..., 1.0
std::vector<double> default_eta_grid();

double mean_quality(std::span<const double> realized);
/// Checks realized.size() == batch.size() before averaging.
double mean_quality(const Batch& batch, std::span<const double> realized);

/// Mean of `column` over the batch; throws MissingColumnError.
double column_mean(const Batch& batch, const std::string& column);

struct WinTieLoss {
  double wins = 0.0;
  double ties = 0.0;
  double losses = 0.0;
  double threshold = 0.0;
  std::size_t n = 0;
};

/// Per record d = a - b: |d| < threshold ties, otherwise a win or loss for A.
WinTieLoss win_tie_loss(const Batch& batch, const std::string& col_a, const std::string& col_b,
                        double threshold = kDefaultTieThreshold);
WinTieLoss win_tie_loss(std::span<const double> a, std::span<const double> b, double threshold);

struct CurvePoint {
  double eta = 0.0;
  double eta_effective = 0.0;
  double mean_quality = 0.0;
  double flops = 0.0;
  double relative_cost_x = 0.0;
  DeferralRule rule;
};

/// select -> apply -> mean for every grid eta, with the cascade cost of the
/// realized deferral count attached. Points come back in grid order.
std::vector<CurvePoint> deferral_curve(const Batch& batch, const DeferralRule& rule,
                                       std::span<const double> grid, const CostModel& cost,
                                       const QualityColumns& columns);

/// Averages curves computed on several batches (e.g. one per language pair)
/// point by point: unweighted mean of per-batch means, summed FLOPs, and X
/// relative to the summed always-large cost.
std::vector<CurvePoint> aggregate_curves(std::span<const std::vector<CurvePoint>> curves,
                                         std::span<const double> batch_sizes,
                                         const CostModel& cost);

/// Smallest eta whose mean quality reaches `target`; nullopt if never.
std::optional<double> crossover_budget(std::span<const CurvePoint> curve, double target);

struct PermutationTestResult {
  enum class Mode { exact, monte_carlo };

  double p_value = 1.0;
  double observed_stat = 0.0;
  Mode mode = Mode::exact;
  std::size_t iterations = 0;  // monte carlo only
  std::uint64_t seed = 0;      // monte carlo only
  std::size_t n_pairs = 0;
};

struct PermutationTestOptions {
  std::size_t max_exact_n = kDefaultMaxExactN;
  std::size_t iterations = 10000;
  std::uint64_t seed = 0;
};

/// Two-sided paired sign-flip test on |mean(a - b)|. Enumerates all 2^n sign
/// vectors when n <= max_exact_n, else draws `iterations` seeded sign vectors
/// and reports (1 + hits) / (iterations + 1).
PermutationTestResult paired_permutation_test(std::span<const double> a,
                                              std::span<const double> b,
                                              const PermutationTestOptions& options = {});

struct SignificancePoint {
  double eta = 0.0;
  double p_value = 1.0;
  /// p >= alpha: not distinguishable from the reference system.
  bool indistinguishable = true;
};

/// For each grid eta, tests the cascade's realized quality against the
/// reference column (usually the large model's scores).
std::vector<SignificancePoint> significance_band(const Batch& batch, const DeferralRule& rule,
                                                 std::span<const double> grid,
                                                 const QualityColumns& columns,
                                                 const std::string& reference_column,
                                                 double alpha = kDefaultAlpha,
                                                 const PermutationTestOptions& options = {});

// Serialization for the plotting hand-off.
std::string curves_to_csv(std::span<const std::vector<CurvePoint>> curves);
std::string permutation_result_to_json(const PermutationTestResult& result, double alpha);
std::string win_tie_loss_to_json(const WinTieLoss& wtl, const std::string& col_a,
                                 const std::string& col_b);

}  // namespace qecascade
