#include "causalfuse/report.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>

namespace causalfuse {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t h) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string misspecification_name(Misspecification m) {
  switch (m) {
    case Misspecification::None: return "none";
    case Misspecification::WrongOutcome: return "wrong_outcome";
    case Misspecification::WrongPropensity: return "wrong_propensity";
  }
  return "?";
}

std::string scheme_name(BootstrapScheme s) {
  switch (s) {
    case BootstrapScheme::JointResample: return "joint";
    case BootstrapScheme::StratifiedResample: return "stratified";
    case BootstrapScheme::WeightedExpansion: return "weighted";
  }
  return "?";
}

std::string regime_name(WeightRegime r) {
  return r == WeightRegime::KnownInclusion ? "known-pi" : "srs";
}

namespace {

nlohmann::json vec_json(const Eigen::VectorXd& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

nlohmann::json mat_json(const Eigen::MatrixXd& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

// JSON has no infinity; a non-finite condition number becomes a string.
nlohmann::json finite_or_string(double v) {
  if (std::isfinite(v)) return v;
  return format_double(v);
}

}  // namespace

void to_json(nlohmann::json& j, const FusionDiagnostics& d) {
  j = nlohmann::json{{"v_condition", finite_or_string(d.v_condition)},
                     {"fallback", d.fallback},
                     {"dropped_components", d.dropped_components},
                     {"bootstrap_redraws", d.bootstrap_redraws}};
}

void to_json(nlohmann::json& j, const FusionResult& r) {
  j = nlohmann::json{{"tau_hat", r.tau_hat},
                     {"tau2", r.tau2},
                     {"ep_diff", vec_json(r.ep_diff)},
                     {"gamma", vec_json(r.gamma)},
                     {"v_matrix", mat_json(r.v_mat)},
                     {"coefficient", vec_json(r.coefficient)},
                     {"v2", r.v2},
                     {"v_hat", r.v_hat},
                     {"ci", {r.ci_lo, r.ci_hi}},
                     {"ci_level", r.ci_level},
                     {"variance_reduction_pct", 100.0 * r.variance_reduction},
                     {"diagnostics", r.diagnostics}};
}

void to_json(nlohmann::json& j, const MenuEntry& e) {
  std::vector<std::string> ep;
  for (Method m : e.error_prone) ep.push_back(method_name(m));
  j = nlohmann::json{{"initial", method_name(e.initial)}, {"error_prone", ep}};
}

void to_json(nlohmann::json& j, const SimConfig& c) {
  j = nlohmann::json{
      {"n1", c.n1},
      {"n2", c.n2},
      {"reps", c.reps},
      {"seed", c.seed},
      {"menu", c.menu},
      {"analytic_variance", c.analytic_variance},
      {"bootstrap_replicates", c.bootstrap_replicates},
      {"scheme", scheme_name(c.scheme)},
      {"outcome_dependent_inclusion", c.outcome_dependent_inclusion},
      {"misspecification", misspecification_name(c.misspecification)},
      {"full_corrections", c.corrections == ScoreCorrections::Full},
      {"matches", c.matches},
      {"ci_level", c.ci_level},
      {"threads", c.threads}};
}

void to_json(nlohmann::json& j, const EstimatorSummary& s) {
  j = nlohmann::json{{"label", s.label},
                     {"entry", s.entry},
                     {"source", variance_source_name(s.source)},
                     {"used", s.used},
                     {"failures", s.failures},
                     {"mean_initial", s.mean_initial},
                     {"bias_initial", s.bias_initial},
                     {"var_initial", s.var_initial},
                     {"mse_initial", s.mse_initial},
                     {"mean_fused", s.mean_fused},
                     {"bias_fused", s.bias_fused},
                     {"var_fused", s.var_fused},
                     {"mse_fused", s.mse_fused},
                     {"mse_reduction_pct", s.mse_reduction_pct},
                     {"mse_diff_mean", s.mse_diff_mean},
                     {"mse_diff_se", s.mse_diff_se},
                     {"coverage_fused", s.coverage_fused},
                     {"coverage_initial", s.coverage_initial},
                     {"mean_v_hat", s.mean_v_hat}};
}

void to_json(nlohmann::json& j, const SimReport& r) {
  j = nlohmann::json{{"command", "simulate"},
                     {"config", r.config},
                     {"tau_true", r.tau_true},
                     {"rows", r.rows},
                     {"total_failures", r.total_failures},
                     {"flagged", r.flagged}};
}

void to_json(nlohmann::json& j, const AllocationProblem& p) {
  j = nlohmann::json{{"c1", p.c1},
                     {"c2", p.c2},
                     {"budget", p.budget},
                     {"r_squared", p.r_squared}};
}

void to_json(nlohmann::json& j, const Allocation& a) {
  j = nlohmann::json{{"rho_star", a.rho_star},
                     {"n1", a.n1},
                     {"n2", a.n2},
                     {"clamped", a.clamped},
                     {"warning", a.warning}};
}

std::string finalize_report(nlohmann::json body) {
  body["version"] = kArtifactVersion;
  body["config_hash"] = hex64(fnv1a(body.at("config").dump()));
  return body.dump(2) + "\n";
}

std::string sim_report_json(const SimReport& r) {
  return finalize_report(nlohmann::json(r));
}

std::string sim_report_csv(const SimReport& r) {
  std::string out =
      "label,source,used,failures,mean_initial,bias_initial,var_initial,"
      "mse_initial,mean_fused,bias_fused,var_fused,mse_fused,"
      "mse_reduction_pct,mse_diff_mean,mse_diff_se,coverage_fused,"
      "coverage_initial,mean_v_hat\n";
  for (const EstimatorSummary& s : r.rows) {
    out += s.label;
    out += ',';
    out += variance_source_name(s.source);
    out += ',';
    out += std::to_string(s.used);
    out += ',';
    out += std::to_string(s.failures);
    for (double v : {s.mean_initial, s.bias_initial, s.var_initial,
                     s.mse_initial, s.mean_fused, s.bias_fused, s.var_fused,
                     s.mse_fused, s.mse_reduction_pct, s.mse_diff_mean,
                     s.mse_diff_se, s.coverage_fused, s.coverage_initial,
                     s.mean_v_hat}) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  return out;
}

std::string sensitivity_csv(const std::vector<SensitivityPoint>& pts) {
  std::string out = "delta,tau_adj,ci_lo,ci_hi\n";
  for (const SensitivityPoint& p : pts) {
    // components share one delta value on the grid the front end builds
    out += format_double(p.delta.size() > 0 ? p.delta(0) : 0.0);
    out += ',';
    out += format_double(p.tau_adj);
    out += ',';
    out += format_double(p.ci_lo);
    out += ',';
    out += format_double(p.ci_hi);
    out += '\n';
  }
  return out;
}

}  // namespace causalfuse
