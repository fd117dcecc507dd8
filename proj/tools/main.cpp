#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "causalfuse/dataset.hpp"
#include "causalfuse/design.hpp"
#include "causalfuse/estimators.hpp"
#include "causalfuse/fusion.hpp"
#include "causalfuse/report.hpp"
#include "causalfuse/sim.hpp"

namespace cf = causalfuse;

namespace {

cf::Method parse_method(const std::string& s) {
  if (s == "reg") return cf::Method::RegImputation;
  if (s == "ipw") return cf::Method::IPW;
  if (s == "aipw") return cf::Method::AIPW;
  if (s == "match" || s == "mat") return cf::Method::Matching;
  throw cf::DataError("unknown method '" + s +
                      "'; choose from reg, ipw, aipw, match");
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::vector<cf::Method> parse_method_list(const std::string& csv) {
  std::vector<cf::Method> out;
  for (const std::string& tok : split(csv, ','))
    if (!tok.empty()) out.push_back(parse_method(tok));
  if (out.empty()) throw cf::DataError("empty method list");
  return out;
}

cf::BootstrapScheme parse_scheme(const std::string& s) {
  if (s == "joint") return cf::BootstrapScheme::JointResample;
  if (s == "stratified") return cf::BootstrapScheme::StratifiedResample;
  if (s == "weighted") return cf::BootstrapScheme::WeightedExpansion;
  throw cf::DataError("unknown bootstrap scheme '" + s +
                      "'; choose from joint, stratified, weighted");
}

nlohmann::json parse_json_file(const std::string& path, const char* what) {
  std::ifstream f(path);
  if (!f) throw cf::DataError(std::string("cannot open ") + what + ": " + path);
  try {
    nlohmann::json j;
    f >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw cf::DataError(std::string(what) + " is not valid JSON: " + e.what());
  }
}

cf::DatasetSchema load_schema(const std::string& path) {
  const nlohmann::json j = parse_json_file(path, "schema file");
  cf::DatasetSchema s;
  for (const auto& [key, val] : j.items()) {
    if (key == "id") s.id = val.get<std::string>();
    else if (key == "treatment") s.treatment = val.get<std::string>();
    else if (key == "outcome") s.outcome = val.get<std::string>();
    else if (key == "validation") s.validation = val.get<std::string>();
    else if (key == "pi") s.pi = val.get<std::string>();
    else if (key == "x") s.x = val.get<std::vector<std::string>>();
    else if (key == "u") s.u = val.get<std::vector<std::string>>();
    else
      throw cf::DataError("unknown schema key '" + key +
                          "'; expected id, treatment, outcome, x, u, "
                          "validation, pi");
  }
  return s;
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw cf::DataError("cannot write to " + path);
  f << text;
}

// Flags shared by estimate and sensitivity.
struct EstimateFlags {
  std::string data, schema, method = "aipw", ep_methods, variance = "analytic";
  std::string boot_scheme, regime = "srs", estimand = "ate", out;
  int boot_reps = 2000;
  std::uint64_t seed = 0;
  bool seed_given = false;
  double level = 0.95;
  bool binary_outcome = false;
  bool ignore_main = false;
  int matches = 1;
  int threads = 1;
};

void add_estimate_flags(CLI::App* cmd, EstimateFlags& f) {
  cmd->add_option("--data", f.data, "input CSV")->required();
  cmd->add_option("--schema", f.schema, "JSON column-role mapping");
  cmd->add_option("--method", f.method,
                  "initial estimator: reg, ipw, aipw, match");
  cmd->add_option("--ep-methods", f.ep_methods,
                  "comma list of error-prone methods (default: --method)");
  cmd->add_option("--variance", f.variance, "analytic or bootstrap");
  cmd->add_option("--boot-reps", f.boot_reps, "bootstrap replicates");
  cmd->add_option("--boot-scheme", f.boot_scheme,
                  "joint, stratified, or weighted (default by regime)");
  cmd->add_flag("--ignore-main-uncertainty", f.ignore_main,
                "treat the main sample as infinite in the bootstrap");
  cmd->add_option("--seed", f.seed, "RNG seed (required for the bootstrap)");
  cmd->add_option("--level", f.level, "confidence level");
  cmd->add_option("--estimand", f.estimand, "ate, logcrr, or logcor");
  cmd->add_option("--regime", f.regime, "srs or known-pi");
  cmd->add_flag("--binary-outcome", f.binary_outcome,
                "outcome is 0/1; fit logistic outcome models");
  cmd->add_option("--matches", f.matches, "matches per unit");
  cmd->add_option("--threads", f.threads, "worker cap for the bootstrap");
  cmd->add_option("--out", f.out, "output path (default: stdout)");
}

struct BuiltEstimate {
  cf::FusedDataset data;
  cf::FusionInputs inputs;
  cf::VarianceSpec vs;
  cf::MenuEntry entry;
  nlohmann::json config;
};

// Everything up to the fuse call; sensitivity reuses it.
BuiltEstimate build_estimate(const EstimateFlags& f, const char* command) {
  BuiltEstimate b;
  cf::DatasetSchema schema;
  if (!f.schema.empty()) schema = load_schema(f.schema);
  b.data = cf::load_csv(f.data, schema);

  cf::WeightRegime want = f.regime == "known-pi"
                              ? cf::WeightRegime::KnownInclusion
                              : cf::WeightRegime::SimpleRandom;
  if (f.regime != "srs" && f.regime != "known-pi")
    throw cf::DataError("unknown regime '" + f.regime +
                        "'; choose srs or known-pi");
  if (b.data.design == cf::SamplingDesign::KnownInclusion &&
      want == cf::WeightRegime::SimpleRandom)
    throw cf::DataError("inclusion probabilities require known-inclusion regime");
  if (b.data.design == cf::SamplingDesign::SimpleRandom &&
      want == cf::WeightRegime::KnownInclusion)
    throw cf::DataError(
        "known-inclusion regime requires an inclusion-probability column");

  if (f.estimand != "ate" && f.estimand != "logcrr" && f.estimand != "logcor")
    throw cf::DataError("unknown estimand '" + f.estimand +
                        "'; choose ate, logcrr, or logcor");
  if (f.estimand == "logcor" && !f.binary_outcome)
    throw cf::DataError("the log odds ratio needs --binary-outcome");

  cf::EstimatorOptions opt;
  opt.regime = want;
  opt.matches = f.matches;
  if (f.binary_outcome) opt.outcome_kind = cf::ModelKind::OutcomeLogistic;

  b.entry.initial = parse_method(f.method);
  b.entry.error_prone =
      f.ep_methods.empty() ? std::vector<cf::Method>{b.entry.initial}
                           : parse_method_list(f.ep_methods);

  b.inputs.tau2 = cf::initial_estimate(b.data, b.entry.initial, opt);
  for (cf::Method m : b.entry.error_prone)
    b.inputs.ep_pairs.push_back(cf::error_prone_pair(b.data, m, opt));
  b.inputs.regime = want;
  b.inputs.data = &b.data;

  if (f.variance == "bootstrap") {
    b.vs.source = cf::VarianceSource::Bootstrap;
    if (!f.seed_given)
      throw cf::DataError("a seed is required for the bootstrap; pass --seed");
    b.vs.bootstrap.replicates = f.boot_reps;
    b.vs.bootstrap.seed = f.seed;
    b.vs.bootstrap.scheme =
        f.boot_scheme.empty()
            ? (want == cf::WeightRegime::KnownInclusion
                   ? cf::BootstrapScheme::WeightedExpansion
                   : cf::BootstrapScheme::JointResample)
            : parse_scheme(f.boot_scheme);
    b.vs.bootstrap.ignore_main_uncertainty = f.ignore_main;
    b.vs.bootstrap.threads = f.threads;
  } else if (f.variance != "analytic") {
    throw cf::DataError("unknown variance source '" + f.variance +
                        "'; choose analytic or bootstrap");
  }

  std::vector<std::string> ep_names;
  for (cf::Method m : b.entry.error_prone)
    ep_names.push_back(cf::method_name(m));
  b.config = nlohmann::json{{"command", command},
                            {"data", f.data},
                            {"schema", f.schema},
                            {"method", cf::method_name(b.entry.initial)},
                            {"ep_methods", ep_names},
                            {"variance", f.variance},
                            {"level", f.level},
                            {"estimand", f.estimand},
                            {"regime", cf::regime_name(want)},
                            {"binary_outcome", f.binary_outcome},
                            {"matches", f.matches},
                            {"threads", f.threads}};
  if (f.variance == "bootstrap") {
    b.config["boot_reps"] = f.boot_reps;
    b.config["boot_scheme"] = cf::scheme_name(b.vs.bootstrap.scheme);
    b.config["ignore_main_uncertainty"] = f.ignore_main;
    b.config["seed"] = f.seed;
  }
  return b;
}

// Per-member point on the reporting scale of the chosen estimand.
double point_on_scale(const cf::EstimateWithExpansion& e,
                      const std::string& estimand) {
  if (estimand == "ate") return e.point;
  const double m1 = e.arm_mean[1], m0 = e.arm_mean[0];
  if (estimand == "logcrr") return std::log(m1) - std::log(m0);
  return std::log(m1 / (1.0 - m1)) - std::log(m0 / (1.0 - m0));
}

int cmd_estimate(const EstimateFlags& f) {
  BuiltEstimate b = build_estimate(f, "estimate");
  cf::FusionResult res;
  if (f.estimand == "ate")
    res = cf::fuse(b.inputs, b.vs, f.level);
  else
    res = cf::fuse_ratio_estimand(b.inputs,
                                  f.estimand == "logcrr"
                                      ? cf::RatioEstimand::LogCRR
                                      : cf::RatioEstimand::LogCOR,
                                  b.vs, f.level);

  nlohmann::json pairs = nlohmann::json::array();
  for (const cf::EpPair& p : b.inputs.ep_pairs)
    pairs.push_back(
        {{"method", cf::method_name(p.first.kind.method)},
         {"main", point_on_scale(p.first, f.estimand)},
         {"validation", point_on_scale(p.second, f.estimand)},
         {"trimmed", {p.first.trimmed, p.second.trimmed}}});

  nlohmann::json body{{"command", "estimate"},
                      {"config", b.config},
                      {"data_warnings", b.data.load_warnings},
                      {"result",
                       {{"label", cf::entry_label(b.entry)},
                        {"error_prone", pairs},
                        {"trimmed_initial", b.inputs.tau2.trimmed},
                        {"fusion", res}}}};
  emit(f.out, cf::finalize_report(std::move(body)));
  return 0;
}

int cmd_sensitivity(const EstimateFlags& f, const std::string& grid_spec,
                    const std::string& csv_path) {
  BuiltEstimate b = build_estimate(f, "sensitivity");
  if (f.estimand != "ate")
    throw cf::DataError("sensitivity curves are defined for the ate estimand");

  const std::vector<std::string> parts = split(grid_spec, ':');
  if (parts.size() != 3)
    throw cf::DataError("--delta-grid wants a:b:step, e.g. -0.5:0.5:0.1");
  double lo, hi, step;
  try {
    lo = std::stod(parts[0]);
    hi = std::stod(parts[1]);
    step = std::stod(parts[2]);
  } catch (const std::exception&) {
    throw cf::DataError("--delta-grid values must be numbers");
  }
  if (step <= 0.0 || hi < lo)
    throw cf::DataError("--delta-grid needs a <= b and step > 0");

  const int L = static_cast<int>(b.inputs.ep_pairs.size());
  std::vector<Eigen::VectorXd> grid;
  const int count = static_cast<int>((hi - lo) / step + 1e-9) + 1;
  for (int k = 0; k < count; ++k)
    grid.push_back(Eigen::VectorXd::Constant(L, lo + k * step));

  const std::vector<cf::SensitivityPoint> pts =
      cf::sensitivity_curve(b.inputs, grid, b.vs, f.level);

  b.config["delta_grid"] = grid_spec;
  nlohmann::json rows = nlohmann::json::array();
  for (const cf::SensitivityPoint& p : pts)
    rows.push_back({{"delta", p.delta(0)},
                    {"tau_adj", p.tau_adj},
                    {"ci", {p.ci_lo, p.ci_hi}}});
  nlohmann::json body{{"command", "sensitivity"},
                      {"config", b.config},
                      {"rows", rows}};
  emit(f.out, cf::finalize_report(std::move(body)));
  if (!csv_path.empty()) emit(csv_path, cf::sensitivity_csv(pts));
  return 0;
}

cf::SimConfig sim_config_from_json(const nlohmann::json& j) {
  cf::SimConfig c;
  for (const auto& [key, val] : j.items()) {
    if (key == "n1") c.n1 = val.get<int>();
    else if (key == "n2") c.n2 = val.get<int>();
    else if (key == "reps") c.reps = val.get<int>();
    else if (key == "seed") c.seed = val.get<std::uint64_t>();
    else if (key == "analytic_variance") c.analytic_variance = val.get<bool>();
    else if (key == "bootstrap_replicates") c.bootstrap_replicates = val.get<int>();
    else if (key == "scheme") c.scheme = parse_scheme(val.get<std::string>());
    else if (key == "outcome_dependent_inclusion")
      c.outcome_dependent_inclusion = val.get<bool>();
    else if (key == "misspecification") {
      const std::string m = val.get<std::string>();
      if (m == "none") c.misspecification = cf::Misspecification::None;
      else if (m == "wrong_outcome")
        c.misspecification = cf::Misspecification::WrongOutcome;
      else if (m == "wrong_propensity")
        c.misspecification = cf::Misspecification::WrongPropensity;
      else
        throw cf::DataError("unknown misspecification '" + m + "'");
    } else if (key == "full_corrections") {
      c.corrections = val.get<bool>() ? cf::ScoreCorrections::Full
                                      : cf::ScoreCorrections::BaseOnly;
    } else if (key == "matches") c.matches = val.get<int>();
    else if (key == "ci_level") c.ci_level = val.get<double>();
    else if (key == "threads") c.threads = val.get<int>();
    else if (key == "menu") {
      for (const nlohmann::json& e : val) {
        cf::MenuEntry entry;
        entry.initial = parse_method(e.at("initial").get<std::string>());
        entry.error_prone.clear();
        for (const nlohmann::json& m : e.at("error_prone"))
          entry.error_prone.push_back(parse_method(m.get<std::string>()));
        c.menu.push_back(std::move(entry));
      }
    } else {
      throw cf::DataError("unknown simulate config key '" + key + "'");
    }
  }
  return c;
}

void print_sim_summary(const cf::SimReport& r) {
  std::cout << "true tau " << cf::format_double(r.tau_true) << ", n1 "
            << r.config.n1 << ", reps " << r.config.reps << "\n";
  for (const cf::EstimatorSummary& s : r.rows)
    std::cout << "  " << s.label << " [" << cf::variance_source_name(s.source)
              << "] bias " << cf::format_double(s.bias_fused) << ", mse drop "
              << cf::format_double(s.mse_reduction_pct) << "%, coverage "
              << cf::format_double(100.0 * s.coverage_fused) << "%"
              << (s.failures > 0
                      ? ", failures " + std::to_string(s.failures)
                      : std::string())
              << "\n";
  if (r.flagged)
    std::cout << "  flagged: a row lost more than 1% of replicates\n";
}

int cmd_simulate(const std::string& preset, const std::string& config_path,
                 std::uint64_t seed, bool seed_given, int reps_flag,
                 int boot_flag, int threads_flag, const std::string& out) {
  std::vector<cf::SimConfig> runs;
  std::vector<std::string> tags;
  if (!preset.empty() && !config_path.empty())
    throw cf::DataError("choose either --preset or --config, not both");
  if (preset.empty() && config_path.empty())
    throw cf::DataError("pass --preset benchmark or --config FILE");
  if (!preset.empty()) {
    if (preset != "benchmark")
      throw cf::DataError("unknown preset '" + preset + "'; only benchmark");
    if (!seed_given)
      throw cf::DataError("a seed is required: pass --seed");
    for (int n2 : {200, 500}) {
      cf::SimConfig c;
      c.n1 = 1000;
      c.n2 = n2;
      c.reps = reps_flag > 0 ? reps_flag : 2000;
      c.seed = seed;
      c.bootstrap_replicates = boot_flag >= 0 ? boot_flag : 500;
      c.threads = threads_flag;
      runs.push_back(c);
      tags.push_back("_n" + std::to_string(n2));
    }
  } else {
    const nlohmann::json jc = parse_json_file(config_path, "simulate config");
    cf::SimConfig c = sim_config_from_json(jc);
    const bool file_has_seed = jc.contains("seed");
    if (seed_given) c.seed = seed;
    else if (!file_has_seed)
      throw cf::DataError(
          "a seed is required: pass --seed or put one in the config file");
    if (reps_flag > 0) c.reps = reps_flag;
    if (boot_flag >= 0) c.bootstrap_replicates = boot_flag;
    if (threads_flag > 0) c.threads = threads_flag;
    runs.push_back(c);
    tags.push_back("");
  }
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const cf::SimReport r = cf::run_monte_carlo(runs[i]);
    emit(out + tags[i] + ".json", cf::sim_report_json(r));
    emit(out + tags[i] + ".csv", cf::sim_report_csv(r));
    print_sim_summary(r);
  }
  return 0;
}

int cmd_plan(double c1, double c2, double budget, double r2,
             const std::string& out) {
  cf::AllocationProblem p;
  p.c1 = c1;
  p.c2 = c2;
  p.budget = budget;
  p.r_squared = r2;
  const cf::Allocation a = cf::optimal_allocation(p);
  nlohmann::json body{
      {"command", "plan"}, {"config", p}, {"allocation", a}};
  emit(out, cf::finalize_report(std::move(body)));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "causal effect estimation fusing a large main dataset with a smaller "
      "fully observed validation subset"};
  app.require_subcommand(1);

  EstimateFlags ef;
  CLI::App* est = app.add_subcommand(
      "estimate", "fuse estimators on a dataset and report the result");
  add_estimate_flags(est, ef);

  EstimateFlags sf;
  std::string grid_spec, sens_csv;
  CLI::App* sens = app.add_subcommand(
      "sensitivity", "sweep a bias offset over the error-prone contrast");
  add_estimate_flags(sens, sf);
  sens->add_option("--delta-grid", grid_spec, "a:b:step sweep of the offset")
      ->required();
  sens->add_option("--csv", sens_csv, "also write the curve as CSV");

  std::string preset, sim_config_path, sim_out = "simulation";
  std::uint64_t sim_seed = 0;
  int sim_reps = 0, sim_boot = -1, sim_threads = 1;
  CLI::App* sim = app.add_subcommand(
      "simulate", "Monte Carlo study of the fused estimators");
  sim->add_option("--preset", preset, "named study: benchmark");
  sim->add_option("--config", sim_config_path, "JSON run configuration");
  CLI::Option* sim_seed_opt =
      sim->add_option("--seed", sim_seed, "RNG seed");
  sim->add_option("--reps", sim_reps, "override replication count");
  sim->add_option("--boot-reps", sim_boot, "override bootstrap replicates");
  sim->add_option("--threads", sim_threads, "worker cap");
  sim->add_option("--out", sim_out, "output prefix (json + csv)");

  double p_c1 = 1.0, p_c2 = 1.0, p_budget = 0.0, p_r2 = 0.0;
  std::string plan_out;
  CLI::App* plan = app.add_subcommand(
      "plan", "cost-optimal split of a budget between the two samples");
  plan->add_option("--c1", p_c1, "unit cost of a main-only observation")
      ->required();
  plan->add_option("--c2", p_c2, "added cost of validating a unit")
      ->required();
  plan->add_option("--budget", p_budget, "total budget")->required();
  plan->add_option("--r2", p_r2,
                   "squared correlation between fused and initial estimator")
      ->required();
  plan->add_option("--out", plan_out, "output path (default: stdout)");

  CLI::Option* est_seed_opt = est->get_option("--seed");
  CLI::Option* sens_seed_opt = sens->get_option("--seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*est) {
      ef.seed_given = est_seed_opt->count() > 0;
      return cmd_estimate(ef);
    }
    if (*sens) {
      sf.seed_given = sens_seed_opt->count() > 0;
      return cmd_sensitivity(sf, grid_spec, sens_csv);
    }
    if (*sim)
      return cmd_simulate(preset, sim_config_path, sim_seed,
                          sim_seed_opt->count() > 0, sim_reps, sim_boot,
                          sim_threads, sim_out);
    if (*plan) return cmd_plan(p_c1, p_c2, p_budget, p_r2, plan_out);
  } catch (const cf::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const cf::NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
