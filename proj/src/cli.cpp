#include "qecascade/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "qecascade/config.hpp"
#include "qecascade/core.hpp"
#include "qecascade/costmodel.hpp"
#include "qecascade/deferral.hpp"
#include "qecascade/evaluation.hpp"
#include "qecascade/gateway.hpp"

namespace qecascade::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

/// Everything needed to rerun a command; written as <out>/manifest.json.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::string config_path;
  std::vector<std::string> inputs;
  std::vector<std::uint64_t> seeds;
  std::vector<double> grid;
  std::optional<CostModel> cost;
  std::vector<std::string> outputs;
};

/// Bad usage detected after flag parsing.
class UsageError : public Error {
 public:
  using Error::Error;
};

ordered_json cost_to_json(const CostModel& c) {
  return ordered_json{{"name", c.name},       {"n_small", c.n_small}, {"n_large", c.n_large},
                      {"n_qe", c.n_qe},       {"d_small", c.d_small}, {"d_large", c.d_large}};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << text;
}

void write_manifest(const fs::path& out_dir, const RunManifest& m) {
  ordered_json doc;
  doc["tool"] = "qecascade";
  doc["tool_version"] = QECASCADE_VERSION;
  doc["command"] = m.command;
  doc["argv"] = m.argv;
  doc["config"] = m.config_path;
  doc["inputs"] = m.inputs;
  doc["seeds"] = m.seeds;
  doc["grid"] = m.grid;
  doc["cost_profile"] = m.cost ? cost_to_json(*m.cost) : ordered_json(nullptr);
  doc["outputs"] = m.outputs;
  write_text(out_dir / "manifest.json", doc.dump(2) + "\n");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto b = item.find_first_not_of(" \t");
    auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) items.push_back(item.substr(b, e - b + 1));
  }
  return items;
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> grid;
  for (const auto& item : split_list(text)) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw UsageError("bad grid value '" + item + "'");
    if (!(v >= 0.0 && v <= 1.0)) throw UsageError("grid value " + item + " outside [0, 1]");
    grid.push_back(v);
  }
  if (grid.empty()) throw UsageError("empty grid");
  return grid;
}

struct Common {
  std::string config_path;
  std::vector<std::string> lower_better;

  AppConfig load() const {
    std::string path = config_path;
    if (path.empty()) {
      if (const char* env = std::getenv(kConfigEnvVar)) path = env;
    }
    AppConfig config = path.empty() ? AppConfig{} : load_config(path);
    for (const auto& column : lower_better) {
      config.orientations.push_back({column, Direction::lower_better});
    }
    return config;
  }

  std::string resolved_config_path() const {
    if (!config_path.empty()) return config_path;
    if (const char* env = std::getenv(kConfigEnvVar)) return env;
    return {};
  }

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file (or $QECASCADE_CONFIG)");
    cmd->add_option("--lower-better", lower_better,
                    "Score columns whose raw values are lower-is-better (negated on load)")
        ->delimiter(',');
  }
};

DeferralRule make_rule(const std::string& name, std::uint64_t seed, const std::string& oracle_family) {
  DeferralRule rule;
  rule.kind = parse_rule_kind(name);
  rule.seed = seed;
  rule.oracle_columns = QualityColumns::family(oracle_family);
  return rule;
}

void require_valid(const Batch& batch, const DeferralRule& rule) {
  const auto report = validate_for_rule(batch, rule);
  if (!report.ok()) {
    throw ValidationError("rule '" + std::string(rule_name(rule.kind)) +
                          "' cannot run on this batch:\n" + report.describe());
  }
}

fs::path prepare_out(const std::string& out) {
  if (out.empty()) throw UsageError("--out is required");
  fs::create_directories(out);
  return fs::path(out);
}

// --- commands ---------------------------------------------------------------

struct DeferArgs {
  Common common;
  std::string batch_file;
  std::string rule = "qe";
  double eta = 0.0;
  std::uint64_t seed = 0;
  std::string oracle_col = "quality";
  std::string out;
};

int cmd_defer(const DeferArgs& a, const std::vector<std::string>& argv, std::ostream& os) {
  const auto config = a.common.load();
  const DeferralBudget budget(a.eta);
  const auto rule = make_rule(a.rule, a.seed, a.oracle_col);
  const auto batch = load_batch(a.batch_file, config.orientations);
  require_valid(batch, rule);
  const auto decision = select_deferrals(batch, rule, budget);

  const auto dir = prepare_out(a.out);
  write_text(dir / "decision.json", decision_to_json(batch, decision));
  RunManifest m{"defer", argv, a.common.resolved_config_path(), {a.batch_file}, {}, {a.eta},
                std::nullopt, {"decision.json"}};
  if (rule.kind == RuleKind::random) m.seeds.push_back(a.seed);
  write_manifest(dir, m);
  os << "deferred " << decision.deferred.size() << " of " << batch.size() << " records\n";
  return kSuccess;
}

struct CurveArgs {
  Common common;
  std::vector<std::string> batch_files;
  std::string rules = "qe,random,oracle";
  std::string grid;
  std::string cost_profile;
  std::string quality_col = "quality";
  std::string oracle_col;
  std::uint64_t seed = 0;
  double significance_alpha = -1.0;
  std::string reference_col;
  std::size_t iterations = 10000;
  std::size_t max_exact_n = kDefaultMaxExactN;
  std::string out;
};

int cmd_curve(const CurveArgs& a, const std::vector<std::string>& argv, std::ostream& os) {
  const auto config = a.common.load();
  const auto grid = a.grid.empty() ? default_eta_grid() : parse_grid(a.grid);
  const auto cost = config.cost_profile(a.cost_profile.empty() ? config.default_profile : a.cost_profile);
  const auto columns = QualityColumns::family(a.quality_col);
  const auto oracle_family = a.oracle_col.empty() ? a.quality_col : a.oracle_col;
  const auto reference = a.reference_col.empty() ? columns.large : a.reference_col;
  const bool with_significance = a.significance_alpha >= 0.0;
  if (with_significance && a.significance_alpha > 1.0) throw UsageError("alpha must lie in [0, 1]");

  std::vector<DeferralRule> rules;
  for (const auto& name : split_list(a.rules)) rules.push_back(make_rule(name, a.seed, oracle_family));
  if (rules.empty()) throw UsageError("no rules given");

  std::vector<Batch> batches;
  std::vector<double> sizes;
  for (const auto& file : a.batch_files) {
    batches.push_back(load_batch(file, config.orientations));
    if (batches.back().empty()) throw ValidationError("batch '" + file + "' is empty");
    sizes.push_back(static_cast<double>(batches.back().size()));
    for (const auto& rule : rules) require_valid(batches.back(), rule);
  }

  double small_mean = 0.0, large_mean = 0.0;
  for (const auto& b : batches) {
    small_mean += column_mean(b, columns.small);
    large_mean += column_mean(b, columns.large);
  }
  small_mean /= static_cast<double>(batches.size());
  large_mean /= static_cast<double>(batches.size());

  PermutationTestOptions test_options{a.max_exact_n, a.iterations, a.seed};
  std::vector<std::vector<CurvePoint>> curves;
  auto curves_json = ordered_json::array();
  for (const auto& rule : rules) {
    std::vector<std::vector<CurvePoint>> per_batch;
    std::vector<std::vector<SignificancePoint>> bands;
    for (const auto& b : batches) {
      per_batch.push_back(deferral_curve(b, rule, grid, cost, columns));
      if (with_significance) {
        bands.push_back(significance_band(b, rule, grid, columns, reference, a.significance_alpha,
                                          test_options));
      }
    }
    auto curve = per_batch.size() == 1 ? per_batch.front() : aggregate_curves(per_batch, sizes, cost);

    ordered_json entry;
    entry["rule"] = std::string(rule_name(rule.kind));
    if (rule.kind == RuleKind::random) entry["seed"] = rule.seed;
    auto points = ordered_json::array();
    for (std::size_t p = 0; p < curve.size(); ++p) {
      ordered_json point{{"eta", curve[p].eta},
                         {"eta_effective", curve[p].eta_effective},
                         {"mean_quality", curve[p].mean_quality},
                         {"flops", curve[p].flops},
                         {"relative_cost_x", curve[p].relative_cost_x}};
      if (with_significance) {
        // Per batch: one test per language pair, flagged only if all agree.
        auto p_values = ordered_json::array();
        bool indistinguishable = true;
        for (const auto& band : bands) {
          p_values.push_back(band[p].p_value);
          indistinguishable = indistinguishable && band[p].indistinguishable;
        }
        point["p_values"] = std::move(p_values);
        point["indistinguishable_from_reference"] = indistinguishable;
      }
      points.push_back(std::move(point));
    }
    entry["points"] = std::move(points);
    if (auto cross = crossover_budget(curve, large_mean)) {
      entry["crossover_eta"] = *cross;
    } else {
      entry["crossover_eta"] = nullptr;
    }
    curves_json.push_back(std::move(entry));
    curves.push_back(std::move(curve));
  }

  ordered_json doc;
  doc["batches"] = a.batch_files;
  doc["quality_columns"] = {columns.small, columns.large};
  doc["cost_profile"] = cost_to_json(cost);
  doc["small_mean"] = small_mean;
  doc["large_mean"] = large_mean;
  if (with_significance) {
    doc["significance"] = {{"reference", reference}, {"alpha", a.significance_alpha}};
  }
  doc["curves"] = std::move(curves_json);

  const auto dir = prepare_out(a.out);
  write_text(dir / "curves.csv", curves_to_csv(curves));
  write_text(dir / "curves.json", doc.dump(2) + "\n");
  RunManifest m{"curve", argv, a.common.resolved_config_path(), a.batch_files, {a.seed}, grid, cost,
                {"curves.csv", "curves.json"}};
  write_manifest(dir, m);
  os << "wrote " << curves.size() << " curves over " << grid.size() << " budgets\n";
  return kSuccess;
}

struct ParityArgs {
  Common common;
  std::string cost_profile;
  std::size_t k_max = 0;
  std::string out;
};

int cmd_parity(const ParityArgs& a, const std::vector<std::string>& argv, std::ostream& os,
               std::ostream& es) {
  const auto config = a.common.load();
  const auto cost = config.cost_profile(a.cost_profile.empty() ? config.default_profile : a.cost_profile);
  cost.validate();
  const auto parity = parity_fraction(cost);
  const auto k_parity = reranking_parity_k(cost);
  const std::size_t k_max = a.k_max > 0 ? a.k_max : std::max<std::size_t>(10, k_parity + 1);

  ordered_json doc;
  doc["cost_profile"] = cost_to_json(cost);
  doc["eta_star"] = parity.eta_star;
  doc["cascade_never_cheaper"] = parity.cascade_never_cheaper;
  doc["reranking_parity_k"] = k_parity;
  auto table = ordered_json::array();

  os << "profile " << cost.name << "\n";
  os << "eta* = " << parity.eta_star << "\n";
  if (parity.cascade_never_cheaper) {
    es << "warning: N_S + N_QE >= N_L; cascading never costs less than the large model alone\n";
  }
  if (cost.d_small != cost.d_large) {
    es << "warning: d_small != d_large; closed forms assume equal generated token counts\n";
  }
  os << "reranking parity K = " << k_parity << "\n";
  os << "K\tX_rerank\tcascade_eta\n";
  for (std::size_t k = 1; k <= k_max; ++k) {
    const double x = reranking_flops(cost, k, 1.0).relative_cost_x;
    const double eta = cascade_equivalent_eta(cost, k);
    os << k << '\t' << x << '\t' << eta << "\n";
    table.push_back(ordered_json{{"k", k}, {"reranking_x", x}, {"cascade_equivalent_eta", eta}});
  }
  doc["table"] = std::move(table);

  if (!a.out.empty()) {
    const auto dir = prepare_out(a.out);
    write_text(dir / "parity.json", doc.dump(2) + "\n");
    write_manifest(dir, RunManifest{"parity", argv, a.common.resolved_config_path(), {}, {}, {},
                                    cost, {"parity.json"}});
  }
  return kSuccess;
}

struct PairArgs {
  Common common;
  std::string batch_file;
  std::string col_a;
  std::string col_b;
  double threshold = kDefaultTieThreshold;
  double alpha = kDefaultAlpha;
  std::size_t iterations = 10000;
  std::size_t max_exact_n = kDefaultMaxExactN;
  std::uint64_t seed = 0;
  std::string out;
};

std::vector<double> column_values(const Batch& batch, const std::string& column) {
  std::vector<double> values;
  values.reserve(batch.size());
  for (const auto& r : batch.records) values.push_back(r.require_score(column));
  return values;
}

int cmd_wtl(const PairArgs& a, const std::vector<std::string>& argv, std::ostream& os) {
  const auto config = a.common.load();
  const auto batch = load_batch(a.batch_file, config.orientations);
  const auto wtl = win_tie_loss(batch, a.col_a, a.col_b, a.threshold);
  const auto text = win_tie_loss_to_json(wtl, a.col_a, a.col_b);
  os << text;
  if (!a.out.empty()) {
    const auto dir = prepare_out(a.out);
    write_text(dir / "wtl.json", text);
    write_manifest(dir, RunManifest{"wtl", argv, a.common.resolved_config_path(), {a.batch_file},
                                    {}, {}, std::nullopt, {"wtl.json"}});
  }
  return kSuccess;
}

int cmd_permtest(const PairArgs& a, const std::vector<std::string>& argv, std::ostream& os) {
  const auto config = a.common.load();
  if (!(a.alpha >= 0.0 && a.alpha <= 1.0)) throw UsageError("alpha must lie in [0, 1]");
  const auto batch = load_batch(a.batch_file, config.orientations);
  const auto result = paired_permutation_test(column_values(batch, a.col_a),
                                              column_values(batch, a.col_b),
                                              {a.max_exact_n, a.iterations, a.seed});
  const auto text = permutation_result_to_json(result, a.alpha);
  os << text;
  if (!a.out.empty()) {
    const auto dir = prepare_out(a.out);
    write_text(dir / "permtest.json", text);
    write_manifest(dir, RunManifest{"permtest", argv, a.common.resolved_config_path(),
                                    {a.batch_file}, {a.seed}, {}, std::nullopt,
                                    {"permtest.json"}});
  }
  return kSuccess;
}

struct LiveArgs {
  Common common;
  std::string sources_file;
  double eta = 0.0;
  std::string cost_profile;
  std::string cache_dir;
  bool no_cache = false;
  std::string out;
};

int cmd_run_live(const LiveArgs& a, const std::vector<std::string>& argv, std::ostream& os,
                 std::ostream& es) {
  const auto config = a.common.load();
  const DeferralBudget budget(a.eta);
  const auto cost = config.cost_profile(a.cost_profile.empty() ? config.default_profile : a.cost_profile);
  const auto endpoints = config.live_endpoints();
  const auto sources = load_sources(a.sources_file);
  const auto dir = prepare_out(a.out);

  std::optional<ResponseCache> cache;
  if (!a.no_cache) cache.emplace(a.cache_dir.empty() ? config.cache_dir : fs::path(a.cache_dir));
  GatewayStats stats;
  const auto run = run_cascade_live(sources, endpoints, budget, cost, cache ? &*cache : nullptr, &stats);

  write_batch(run.batch, dir / "batch.jsonl");
  write_text(dir / "decision.json", decision_to_json(run.batch, run.decision));
  write_text(dir / "cost.json",
             run.cost ? cost_report_to_json(*run.cost, cost, run.decision.eta_effective,
                                            static_cast<double>(run.batch.size()))
                      : std::string("null\n"));
  write_text(dir / "failures.json", failures_to_json(run.failures));
  write_manifest(dir, RunManifest{"run-live", argv, a.common.resolved_config_path(),
                                  {a.sources_file}, {}, {a.eta}, cost,
                                  {"batch.jsonl", "decision.json", "cost.json", "failures.json"}});

  os << "translated " << run.batch.size() << " of " << sources.size() << ", deferred "
     << run.decision.deferred.size() << " (" << stats.network_requests << " requests, "
     << stats.cache_hits << " cache hits)\n";
  if (!run.failures.empty()) {
    for (const auto& f : run.failures) es << f.stage << " " << f.id << ": " << f.message << "\n";
    return kRemoteError;
  }
  return kSuccess;
}

int dispatch(const std::vector<std::string>& args, std::ostream& os, std::ostream& es);

int cmd_replay(const std::string& manifest_path, std::ostream& os, std::ostream& es) {
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw UsageError("cannot open manifest '" + manifest_path + "'");
  const auto doc = nlohmann::json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded() || !doc.contains("argv") || !doc["argv"].is_array()) {
    throw UsageError("'" + manifest_path + "' is not a run manifest");
  }
  const auto argv = doc["argv"].get<std::vector<std::string>>();
  if (!argv.empty() && argv.front() == "replay") throw UsageError("manifest replays itself");
  return dispatch(argv, os, es);
}

int dispatch(const std::vector<std::string>& args, std::ostream& os, std::ostream& es) {
  CLI::App app{"Quality-estimation based model cascading for machine translation", "qecascade"};
  app.require_subcommand(1);
  app.set_version_flag("--version", QECASCADE_VERSION);

  DeferArgs defer;
  auto* c_defer = app.add_subcommand("defer", "Pick the records to send to the large model");
  c_defer->add_option("batch", defer.batch_file, "JSONL batch")->required();
  c_defer->add_option("--rule", defer.rule, "qe | random | length | -length | logprobs | oracle");
  c_defer->add_option("--eta", defer.eta, "Fraction of the batch to defer")->required();
  c_defer->add_option("--seed", defer.seed, "Seed for the random rule");
  c_defer->add_option("--oracle-col", defer.oracle_col, "Quality column family for the oracle rule");
  c_defer->add_option("--out", defer.out, "Output directory")->required();
  defer.common.add_to(c_defer);

  CurveArgs curve;
  auto* c_curve = app.add_subcommand("curve", "Quality and cost as the deferral budget varies");
  c_curve->add_option("batches", curve.batch_files, "JSONL batches (one per language pair)")->required();
  c_curve->add_option("--rules", curve.rules, "Comma-separated rule names");
  c_curve->add_option("--grid", curve.grid, "Comma-separated budgets (default 0,0.1,...,1)");
  c_curve->add_option("--cost-profile", curve.cost_profile, "Cost profile name");
  c_curve->add_option("--quality-col", curve.quality_col, "Quality column family (<name>_small/<name>_large)");
  c_curve->add_option("--oracle-col", curve.oracle_col, "Ground-truth family for the oracle rule");
  c_curve->add_option("--seed", curve.seed, "Seed for the random rule and Monte Carlo tests");
  c_curve->add_option("--significance-alpha", curve.significance_alpha,
                      "Flag budgets not significantly different from the reference");
  c_curve->add_option("--reference-col", curve.reference_col, "Reference column (default <family>_large)");
  c_curve->add_option("--iterations", curve.iterations, "Monte Carlo iterations");
  c_curve->add_option("--max-exact-n", curve.max_exact_n, "Largest n tested by full enumeration");
  c_curve->add_option("--out", curve.out, "Output directory")->required();
  curve.common.add_to(c_curve);

  ParityArgs parity;
  auto* c_parity = app.add_subcommand("parity", "Compute-parity budget and reranking equivalents");
  c_parity->add_option("--cost-profile", parity.cost_profile, "Cost profile name");
  c_parity->add_option("--k-max", parity.k_max, "Largest K in the reranking table");
  c_parity->add_option("--out", parity.out, "Output directory");
  parity.common.add_to(c_parity);

  PairArgs wtl;
  auto* c_wtl = app.add_subcommand("wtl", "Segment-level win/tie/loss rates of column A vs B");
  c_wtl->add_option("batch", wtl.batch_file, "JSONL batch")->required();
  c_wtl->add_option("--a", wtl.col_a, "Column A")->required();
  c_wtl->add_option("--b", wtl.col_b, "Column B")->required();
  c_wtl->add_option("--threshold", wtl.threshold, "Tie threshold");
  c_wtl->add_option("--out", wtl.out, "Output directory");
  wtl.common.add_to(c_wtl);

  PairArgs perm;
  auto* c_perm = app.add_subcommand("permtest", "Paired permutation test of column A vs B");
  c_perm->add_option("batch", perm.batch_file, "JSONL batch")->required();
  c_perm->add_option("--a", perm.col_a, "Column A")->required();
  c_perm->add_option("--b", perm.col_b, "Column B")->required();
  c_perm->add_option("--alpha", perm.alpha, "Significance level");
  c_perm->add_option("--iterations", perm.iterations, "Monte Carlo iterations");
  c_perm->add_option("--max-exact-n", perm.max_exact_n, "Largest n tested by full enumeration");
  c_perm->add_option("--seed", perm.seed, "Monte Carlo seed");
  c_perm->add_option("--out", perm.out, "Output directory");
  perm.common.add_to(c_perm);

  LiveArgs live;
  auto* c_live = app.add_subcommand("run-live", "Run the cascade against remote endpoints");
  c_live->add_option("sources", live.sources_file, "JSONL sources {id, source, lang_pair}")->required();
  c_live->add_option("--eta", live.eta, "Fraction of the batch to defer")->required();
  c_live->add_option("--cost-profile", live.cost_profile, "Cost profile name");
  c_live->add_option("--cache-dir", live.cache_dir, "Response cache directory");
  c_live->add_flag("--no-cache", live.no_cache, "Disable the response cache");
  c_live->add_option("--out", live.out, "Output directory")->required();
  live.common.add_to(c_live);

  std::string manifest_path;
  auto* c_replay = app.add_subcommand("replay", "Re-run the command recorded in a manifest");
  c_replay->add_option("manifest", manifest_path, "manifest.json")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, os, es);
    return code == 0 ? kSuccess : kUsageError;
  }

  if (c_defer->parsed()) return cmd_defer(defer, args, os);
  if (c_curve->parsed()) return cmd_curve(curve, args, os);
  if (c_parity->parsed()) return cmd_parity(parity, args, os, es);
  if (c_wtl->parsed()) return cmd_wtl(wtl, args, os);
  if (c_perm->parsed()) return cmd_permtest(perm, args, os);
  if (c_live->parsed()) return cmd_run_live(live, args, os, es);
  if (c_replay->parsed()) return cmd_replay(manifest_path, os, es);
  return kUsageError;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return dispatch(args, out, err);
  } catch (const Error& e) {
    // Parse, validation, domain, missing-column, configuration and usage
    // problems all land here.
    err << "error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kUsageError;
  }
}

}  // namespace qecascade::cli
