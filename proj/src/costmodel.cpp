#include "qecascade/costmodel.hpp"

#include <cmath>

#include <json.hpp>

#include "qecascade/core.hpp"

namespace qecascade {

namespace {

bool positive(double v) { return std::isfinite(v) && v > 0.0; }

void require_positive(double v, const char* what) {
  if (!positive(v)) throw DomainError(std::string(what) + " must be positive and finite");
}

// Slack for X <= 1 comparisons; K = 4 with a 17.5B/70B ratio is exactly 1.
constexpr double kParityTolerance = 1e-12;

}  // namespace

void CostModel::validate() const {
  require_positive(n_small, "n_small");
  require_positive(n_large, "n_large");
  require_positive(n_qe, "n_qe");
  require_positive(d_small, "d_small");
  require_positive(d_large, "d_large");
}

double single_model_flops(double n_params, double d_tokens, double batch) {
  require_positive(n_params, "parameter count");
  require_positive(d_tokens, "token count");
  require_positive(batch, "batch size");
  return 2.0 * batch * d_tokens * n_params;
}

CostReport cascade_flops(const CostModel& cost, double eta, double batch) {
  cost.validate();
  require_positive(batch, "batch size");
  if (!(eta >= 0.0 && eta <= 1.0)) throw DomainError("eta must lie in [0, 1]");

  CostReport report;
  report.breakdown.small_generation = 2.0 * batch * cost.d_small * cost.n_small;
  report.breakdown.qe_scoring = 2.0 * batch * cost.d_small * cost.n_qe;
  report.breakdown.large_generation = 2.0 * eta * batch * cost.d_large * cost.n_large;
  report.flops = report.breakdown.small_generation + report.breakdown.qe_scoring +
                 report.breakdown.large_generation;
  report.relative_cost_x = report.flops / single_model_flops(cost.n_large, cost.d_large, batch);
  report.token_count_mismatch = cost.d_small != cost.d_large;
  return report;
}

ParityResult parity_fraction(const CostModel& cost) {
  ParityResult result;
  result.eta_star = 1.0 - (cost.n_small + cost.n_qe) / cost.n_large;
  result.cascade_never_cheaper = !(result.eta_star > 0.0);
  return result;
}

CostReport reranking_flops(const CostModel& cost, std::size_t k_hypotheses, double batch) {
  cost.validate();
  require_positive(batch, "batch size");
  if (k_hypotheses == 0) throw DomainError("reranking needs at least one hypothesis");

  const auto k = static_cast<double>(k_hypotheses);
  CostReport report;
  report.breakdown.small_generation = 2.0 * batch * cost.d_small * k * cost.n_small;
  report.breakdown.qe_scoring = 2.0 * batch * cost.d_small * k * cost.n_qe;
  report.flops = report.breakdown.small_generation + report.breakdown.qe_scoring;
  report.relative_cost_x = report.flops / single_model_flops(cost.n_large, cost.d_large, batch);
  report.token_count_mismatch = cost.d_small != cost.d_large;
  return report;
}

double cascade_equivalent_eta(const CostModel& cost, std::size_t k_hypotheses) {
  if (k_hypotheses == 0) throw DomainError("reranking needs at least one hypothesis");
  return static_cast<double>(k_hypotheses - 1) * (cost.n_small + cost.n_qe) / cost.n_large;
}

std::size_t reranking_parity_k(const CostModel& cost) {
  cost.validate();
  // X(K) = K * (N_S + N_QE) / N_L in the equal-token-count form.
  const double ratio = (cost.n_small + cost.n_qe) / cost.n_large;
  auto k = static_cast<std::size_t>(std::floor(1.0 / ratio));
  while (static_cast<double>(k + 1) * ratio <= 1.0 + kParityTolerance) ++k;
  while (k > 0 && static_cast<double>(k) * ratio > 1.0 + kParityTolerance) --k;
  return k;
}

const std::vector<CostModel>& builtin_cost_profiles() {
  static const std::vector<CostModel> profiles = {
      {"tower-7b+kiwi22", 7e9, 70e9, 0.5e9, 1.0, 1.0},
      {"tower-7b+kiwi-xxl", 7e9, 70e9, 10.5e9, 1.0, 1.0},
      {"eurollm-1.7b+kiwi22", 1.7e9, 70e9, 0.5e9, 1.0, 1.0},
      {"eurollm-9b+kiwi22", 9e9, 70e9, 0.5e9, 1.0, 1.0},
  };
  return profiles;
}

const CostModel& builtin_cost_profile(const std::string& name) {
  for (const auto& p : builtin_cost_profiles()) {
    if (p.name == name) return p;
  }
  throw ValidationError("unknown cost profile '" + name + "'");
}

std::string cost_report_to_json(const CostReport& report, const CostModel& cost, double eta,
                                double batch) {
  nlohmann::ordered_json out;
  out["profile"] = cost.name;
  out["eta"] = eta;
  out["batch"] = batch;
  out["flops"] = report.flops;
  out["relative_cost_x"] = report.relative_cost_x;
  out["breakdown"] = {{"small_generation", report.breakdown.small_generation},
                      {"qe_scoring", report.breakdown.qe_scoring},
                      {"large_generation", report.breakdown.large_generation}};
  out["token_count_mismatch"] = report.token_count_mismatch;
  return out.dump(2) + "\n";
}

}  // namespace qecascade
