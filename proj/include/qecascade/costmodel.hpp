#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace qecascade {

// FLOPs accounting under the 2*N*D approximation for transformer inference:
// generating D tokens with an N-parameter model costs 2*N*D per example.

/// Parameter counts (N) and generated tokens per example (D) for the small
/// model, the large model and the QE scorer.
struct CostModel {
  std::string name;
  double n_small = 0.0;
  double n_large = 0.0;
  double n_qe = 0.0;
  double d_small = 1.0;
  double d_large = 1.0;

  /// Throws DomainError unless every count is positive and finite.
  void validate() const;
  bool operator==(const CostModel&) const = default;
};

struct CostBreakdown {
  double small_generation = 0.0;
  double qe_scoring = 0.0;
  double large_generation = 0.0;
};

struct CostReport {
  double flops = 0.0;
  /// flops relative to always running the large model, 2*B*D_L*N_L.
  double relative_cost_x = 0.0;
  CostBreakdown breakdown;
  /// Set when D_S != D_L: X then compares against 2*B*D_L*N_L while the
  /// closed forms for parity assume equal token counts.
  bool token_count_mismatch = false;
};

/// 2 * B * D * N. Throws DomainError on non-positive input.
double single_model_flops(double n_params, double d_tokens, double batch);

/// Cascade cost 2*B*D_S*(N_S + N_QE) + 2*eta*B*D_L*N_L.
CostReport cascade_flops(const CostModel& cost, double eta, double batch);

struct ParityResult {
  double eta_star = 0.0;
  /// eta_star <= 0: cascading can never undercut the large model alone.
  bool cascade_never_cheaper = false;
};

/// eta* = 1 - (N_S + N_QE) / N_L, reported as-is even when <= 0.
ParityResult parity_fraction(const CostModel& cost);

/// Best-of-K reranking with the small model: 2*B*D_S*K*(N_S + N_QE).
CostReport reranking_flops(const CostModel& cost, std::size_t k_hypotheses, double batch);

/// Cascade budget with the same cost as K-hypothesis reranking,
/// (K - 1) * (N_S + N_QE) / N_L. May exceed 1.
double cascade_equivalent_eta(const CostModel& cost, std::size_t k_hypotheses);

/// Largest K whose reranking X stays <= 1 (0 if even K = 1 exceeds it).
std::size_t reranking_parity_k(const CostModel& cost);

/// Built-in profiles for the model pairings studied with this approach.
const std::vector<CostModel>& builtin_cost_profiles();
/// Throws ValidationError for unknown names.
const CostModel& builtin_cost_profile(const std::string& name);

std::string cost_report_to_json(const CostReport& report, const CostModel& cost, double eta,
                                double batch);

}  // namespace qecascade
