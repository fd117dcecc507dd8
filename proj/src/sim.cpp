#include "causalfuse/sim.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "causalfuse/parallel.hpp"
#include "causalfuse/rng.hpp"

namespace causalfuse {

namespace {

constexpr std::uint64_t kDataTag = 0x64617461;  // per-replicate dataset stream
constexpr std::uint64_t kBootTag = 0x73696d62;  // per-replicate bootstrap seed

double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Adaptive Simpson with Richardson correction; eps splits across halves.
double simpson_rec(const std::function<double(double)>& f, double a, double b,
                   double fa, double fm, double fb, double whole, double eps,
                   int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::fabs(delta) <= 15.0 * eps)
    return left + right + delta / 15.0;
  return simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1) +
         simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1);
}

double integrate(const std::function<double(double)>& f, double a, double b,
                 double eps) {
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson_rec(f, a, b, fa, fm, fb, whole, eps, 48);
}

struct Cell {
  bool ok = false;
  double tau2 = 0.0, fused = 0.0, v_hat = 0.0;
  bool cov_fused = false, cov_initial = false;
};

bool has_matching(const MenuEntry& e) {
  if (e.initial == Method::Matching) return true;
  return std::find(e.error_prone.begin(), e.error_prone.end(),
                   Method::Matching) != e.error_prone.end();
}

}  // namespace

double latent_confounder_mean(double x) {
  return 0.5 + 0.5 * x - 2.0 * std::sin(x) + 2.0 * sgn(std::sin(5.0 * x));
}

std::string method_name(Method m) {
  switch (m) {
    case Method::RegImputation: return "reg";
    case Method::IPW: return "ipw";
    case Method::AIPW: return "aipw";
    case Method::Matching: return "mat";
  }
  return "?";
}

std::string entry_label(const MenuEntry& e) {
  std::string s = method_name(e.initial);
  s += '&';
  for (std::size_t i = 0; i < e.error_prone.size(); ++i) {
    if (i > 0) s += '+';
    s += method_name(e.error_prone[i]);
  }
  return s;
}

std::string variance_source_name(VarianceSource s) {
  return s == VarianceSource::Analytic ? "analytic" : "bootstrap";
}

double true_tau() {
  const double pi = 3.14159265358979323846;
  const double cuts[] = {0.0, pi / 5.0, 2.0 * pi / 5.0, 3.0 * pi / 5.0, 2.0};
  CompensatedSum total;
  for (int k = 0; k + 1 < 5; ++k) {
    const double a = cuts[k], b = cuts[k + 1];
    const double s = sgn(std::sin(5.0 * 0.5 * (a + b)));
    auto f = [s](double x) {
      return 0.5 + 0.5 * x - 2.0 * std::sin(x) + 2.0 * s;
    };
    total.add(integrate(f, a, b, 1e-13));
  }
  return 5.0 * total.value() / 2.0;  // 1/2 is the Unif(0,2) density
}

FusedDataset generate(const SimConfig& cfg, int rep) {
  if (cfg.n1 < 2) throw DataError("main sample size must be at least 2");
  if (!cfg.outcome_dependent_inclusion &&
      (cfg.n2 < 2 || cfg.n2 >= cfg.n1))
    throw DataError("validation size must satisfy 2 <= n2 < n1");
  Rng rng(mix_key(cfg.seed, kDataTag, static_cast<std::uint64_t>(rep)));
  const int n = cfg.n1;
  FusedDataset d;
  d.ids.resize(n);
  d.a.resize(n);
  d.y.resize(n);
  d.x.resize(n, 1);
  d.u.resize(n, 1);
  d.in_validation.assign(n, 0);
  std::vector<double> u_all(n);
  for (int i = 0; i < n; ++i) {
    const double x = rng.uniform(0.0, 2.0);
    const double u = latent_confounder_mean(x) + rng.uniform(-0.5, 0.5);
    const double y0 = -x - u + rng.normal();
    const double y1 = -x + 4.0 * u + rng.normal();
    const double a = rng.uniform() < expit(1.0 - 0.5 * x - 0.5 * u) ? 1.0 : 0.0;
    d.ids[i] = std::to_string(i + 1);
    d.x(i, 0) = x;
    u_all[i] = u;
    d.a(i) = a;
    d.y(i) = a > 0.5 ? y1 : y0;
  }
  if (cfg.outcome_dependent_inclusion) {
    d.design = SamplingDesign::KnownInclusion;
    d.pi.resize(n);
    for (int i = 0; i < n; ++i) {
      const double p = d.y(i) > -1.0 ? 0.9 : 0.1;
      d.pi(i) = p;
      d.in_validation[i] = rng.uniform() < p ? 1 : 0;
    }
  } else {
    d.design = SamplingDesign::SimpleRandom;
    for (int idx : rng.sample_without_replacement(n, cfg.n2))
      d.in_validation[idx] = 1;
  }
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int i = 0; i < n; ++i)
    d.u(i, 0) = d.in_validation[i] ? u_all[i] : nan;
  d.validate();  // a degenerate draw (empty validation arm) throws here
  return d;
}

SimReport run_monte_carlo(const SimConfig& cfg) {
  if (cfg.reps < 1) throw DataError("at least one replication is required");
  if (cfg.ci_level <= 0.0 || cfg.ci_level >= 1.0)
    throw DataError("confidence level must lie in (0, 1)");
  std::vector<MenuEntry> menu = cfg.menu;
  if (menu.empty()) {
    for (Method m : {Method::RegImputation, Method::IPW, Method::AIPW,
                     Method::Matching})
      menu.push_back(MenuEntry{m, {m}});
  }
  for (const MenuEntry& e : menu)
    if (e.error_prone.empty())
      throw DataError("each menu entry needs an error-prone method");
  const bool boot = cfg.bootstrap_replicates > 0;
  if (boot && cfg.bootstrap_replicates < 2)
    throw DataError("bootstrap replicates must be at least 2");
  if (!cfg.analytic_variance && !boot)
    throw DataError("at least one variance source is required");
  if (cfg.scheme == BootstrapScheme::WeightedExpansion &&
      !cfg.outcome_dependent_inclusion)
    throw DataError(
        "the weighted-expansion bootstrap requires the known-inclusion "
        "design");
  const BootstrapScheme scheme = cfg.outcome_dependent_inclusion
                                     ? BootstrapScheme::WeightedExpansion
                                     : cfg.scheme;

  // One row per (entry, source); analytic rows are impossible for matching
  // entries, whose moment estimates exist only through the bootstrap.
  std::vector<std::pair<int, VarianceSource>> rows_def;
  for (int ei = 0; ei < static_cast<int>(menu.size()); ++ei) {
    const bool mat = has_matching(menu[ei]);
    if (cfg.analytic_variance && !mat)
      rows_def.emplace_back(ei, VarianceSource::Analytic);
    if (boot) rows_def.emplace_back(ei, VarianceSource::Bootstrap);
    if (mat && !boot)
      throw DataError(
          "matching pairs need the bootstrap variance source; enable "
          "bootstrap replicates");
  }
  const int R = static_cast<int>(rows_def.size());

  const double tau = true_tau();
  const double z = normal_quantile(0.5 + cfg.ci_level / 2.0);

  std::vector<Cell> cells(static_cast<std::size_t>(cfg.reps) * R);
  parallel_for(cfg.reps, cfg.threads, [&](int r) {
    Cell* out = &cells[static_cast<std::size_t>(r) * R];
    FusedDataset d;
    try {
      d = generate(cfg, r);
    } catch (const std::exception&) {
      return;  // every cell of this replicate stays excluded
    }
    EstimatorOptions opt;
    opt.regime = d.design == SamplingDesign::KnownInclusion
                     ? WeightRegime::KnownInclusion
                     : WeightRegime::SimpleRandom;
    opt.corrections = cfg.corrections;
    opt.matches = cfg.matches;
    if (cfg.misspecification == Misspecification::WrongOutcome)
      opt.outcome_covariates = CovariateSet::XOnly;
    if (cfg.misspecification == Misspecification::WrongPropensity)
      opt.propensity_covariates = CovariateSet::XOnly;
    const int n2 = d.n2();
    for (int ei = 0; ei < static_cast<int>(menu.size()); ++ei) {
      FusionInputs in;
      bool built = false;
      try {
        in.tau2 = initial_estimate(d, menu[ei].initial, opt);
        for (Method m : menu[ei].error_prone)
          in.ep_pairs.push_back(error_prone_pair(d, m, opt));
        in.regime = opt.regime;
        in.data = &d;
        built = true;
      } catch (const std::exception&) {
      }
      for (int ri = 0; ri < R; ++ri) {
        if (rows_def[ri].first != ei || !built) continue;
        try {
          VarianceSpec vs;
          vs.source = rows_def[ri].second;
          vs.bootstrap.replicates = cfg.bootstrap_replicates;
          vs.bootstrap.seed =
              mix_key(cfg.seed, kBootTag, static_cast<std::uint64_t>(r));
          vs.bootstrap.scheme = scheme;
          vs.bootstrap.threads = 1;  // parallelism lives at the replicate level
          const FusionResult f = fuse(in, vs, cfg.ci_level);
          Cell c;
          c.ok = true;
          c.tau2 = f.tau2;
          c.fused = f.tau_hat;
          c.v_hat = f.v_hat;
          c.cov_fused = f.ci_lo <= tau && tau <= f.ci_hi;
          const double var2 =
              in.regime == WeightRegime::SimpleRandom ? f.v2 / n2 : f.v2;
          const double half = z * std::sqrt(std::max(0.0, var2));
          c.cov_initial = f.tau2 - half <= tau && tau <= f.tau2 + half;
          out[ri] = c;
        } catch (const std::exception&) {
        }
      }
    }
  });

  SimReport rep;
  rep.config = cfg;
  rep.tau_true = tau;
  for (int ri = 0; ri < R; ++ri) {
    const MenuEntry& e = menu[rows_def[ri].first];
    EstimatorSummary s;
    s.label = entry_label(e);
    s.entry = e;
    s.source = rows_def[ri].second;
    CompensatedSum sum_i, sum_f;
    int used = 0;
    for (int r = 0; r < cfg.reps; ++r) {
      const Cell& c = cells[static_cast<std::size_t>(r) * R + ri];
      if (!c.ok) continue;
      ++used;
      sum_i.add(c.tau2);
      sum_f.add(c.fused);
    }
    s.used = used;
    s.failures = cfg.reps - used;
    if (used > 0) {
      s.mean_initial = sum_i.value() / used;
      s.mean_fused = sum_f.value() / used;
      s.bias_initial = s.mean_initial - tau;
      s.bias_fused = s.mean_fused - tau;
      CompensatedSum var_i, var_f, mse_i, mse_f, dsum, cov_f, cov_i, vh;
      for (int r = 0; r < cfg.reps; ++r) {
        const Cell& c = cells[static_cast<std::size_t>(r) * R + ri];
        if (!c.ok) continue;
        const double ei2 = (c.tau2 - tau) * (c.tau2 - tau);
        const double ef2 = (c.fused - tau) * (c.fused - tau);
        var_i.add((c.tau2 - s.mean_initial) * (c.tau2 - s.mean_initial));
        var_f.add((c.fused - s.mean_fused) * (c.fused - s.mean_fused));
        mse_i.add(ei2);
        mse_f.add(ef2);
        dsum.add(ei2 - ef2);
        cov_f.add(c.cov_fused ? 1.0 : 0.0);
        cov_i.add(c.cov_initial ? 1.0 : 0.0);
        vh.add(c.v_hat);
      }
      s.var_initial = var_i.value() / used;
      s.var_fused = var_f.value() / used;
      s.mse_initial = mse_i.value() / used;
      s.mse_fused = mse_f.value() / used;
      s.mse_diff_mean = dsum.value() / used;
      if (used > 1) {
        CompensatedSum dvar;
        for (int r = 0; r < cfg.reps; ++r) {
          const Cell& c = cells[static_cast<std::size_t>(r) * R + ri];
          if (!c.ok) continue;
          const double di = (c.tau2 - tau) * (c.tau2 - tau) -
                            (c.fused - tau) * (c.fused - tau) -
                            s.mse_diff_mean;
          dvar.add(di * di);
        }
        s.mse_diff_se = std::sqrt(dvar.value() / (used - 1.0) / used);
      }
      if (s.mse_initial > 0.0)
        s.mse_reduction_pct = 100.0 * (1.0 - s.mse_fused / s.mse_initial);
      s.coverage_fused = cov_f.value() / used;
      s.coverage_initial = cov_i.value() / used;
      s.mean_v_hat = vh.value() / used;
    }
    if (s.failures > 0.01 * cfg.reps) rep.flagged = true;
    rep.total_failures += s.failures;
    rep.rows.push_back(std::move(s));
  }
  return rep;
}

}  // namespace causalfuse
