#include "causalfuse/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "causalfuse/parallel.hpp"
#include "causalfuse/rng.hpp"

namespace causalfuse {

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw DataError("quantile level must lie strictly between 0 and 1");
  const bool upper = p >= 0.5;
  const double tail = upper ? 1.0 - p : p;
  const double t = std::sqrt(-2.0 * std::log(tail));
  double z = t - (2.30753 + 0.27061 * t) / (1.0 + t * (0.99229 + 0.04481 * t));
  if (!upper) z = -z;
  for (int it = 0; it < 4; ++it) {
    const double err = 0.5 * std::erfc(-z * 0.70710678118654752440) - p;
    const double dens = 0.39894228040143267794 * std::exp(-0.5 * z * z);
    if (dens <= 0.0) break;
    z -= err / dens;
  }
  return z;
}

namespace {

int checked_sizes(const FusionInputs& in) {
  if (in.ep_pairs.empty()) throw DataError("fusion needs at least one error-prone pair");
  const int n2 = static_cast<int>(in.tau2.expansion.size());
  if (n2 == 0) throw DataError("initial estimate carries no expansion");
  if (in.tau2.regime != in.regime)
    throw DataError("initial estimate was built under a different weight regime");
  const int n1 = static_cast<int>(in.ep_pairs.front().first.expansion.size());
  for (const EpPair& p : in.ep_pairs) {
    if (p.first.kind.method != p.second.kind.method)
      throw DataError("error-prone pair members use different methods");
    if (static_cast<int>(p.second.expansion.size()) != n2)
      throw DataError("validation-side expansion length does not match the initial estimate");
    if (static_cast<int>(p.first.expansion.size()) != n1)
      throw DataError("main-side expansion lengths differ across pairs");
  }
  if (n1 < n2) throw DataError("main data smaller than validation data");
  return n2;
}

// Expansions flattened for resampling: psi over S2, phi2 over S2, phi1 over
// S1, plus the S2 -> S1 row map and inverse inclusion probabilities.
struct ExpansionPack {
  Eigen::VectorXd psi;
  Eigen::MatrixXd phi2;  // n2 x L
  Eigen::MatrixXd phi1;  // n1 x L
  std::vector<int> val_rows;
  std::vector<int> nonval_rows;
  std::vector<int> val_index;  // per S1 row: index into S2 order, or -1
  Eigen::VectorXd inv_pi;      // per S2 unit; empty unless known-inclusion
  Eigen::VectorXd a_val;       // treatment flag per S2 unit
  int n1 = 0, n2 = 0, L = 0;
};

ExpansionPack pack_expansions(const FusionInputs& in) {
  if (in.data == nullptr)
    throw DataError("this variance path needs the dataset row geometry");
  const FusedDataset& d = *in.data;
  ExpansionPack p;
  p.n2 = checked_sizes(in);
  p.L = static_cast<int>(in.ep_pairs.size());
  p.n1 = static_cast<int>(in.ep_pairs.front().first.expansion.size());
  if (d.n1() != p.n1 || d.n2() != p.n2)
    throw DataError("dataset row geometry does not match the expansions");
  p.psi = in.tau2.expansion;
  p.phi2.resize(p.n2, p.L);
  p.phi1.resize(p.n1, p.L);
  for (int l = 0; l < p.L; ++l) {
    p.phi2.col(l) = in.ep_pairs[l].second.expansion;
    p.phi1.col(l) = in.ep_pairs[l].first.expansion;
  }
  p.val_rows = d.validation_rows();
  p.val_index.assign(p.n1, -1);
  for (int j = 0; j < p.n2; ++j) p.val_index[p.val_rows[j]] = j;
  for (int i = 0; i < p.n1; ++i)
    if (p.val_index[i] < 0) p.nonval_rows.push_back(i);
  p.a_val.resize(p.n2);
  for (int j = 0; j < p.n2; ++j) p.a_val[j] = d.a[p.val_rows[j]];
  if (in.regime == WeightRegime::KnownInclusion) {
    if (d.design != SamplingDesign::KnownInclusion)
      throw DataError("known-inclusion regime requested on a simple-random dataset");
    p.inv_pi.resize(p.n2);
    for (int j = 0; j < p.n2; ++j) p.inv_pi[j] = 1.0 / d.pi[p.val_rows[j]];
  }
  return p;
}

void refuse_matching(const FusionInputs& in) {
  bool mat = in.tau2.kind.method == Method::Matching;
  for (const EpPair& p : in.ep_pairs)
    mat = mat || p.first.kind.method == Method::Matching ||
          p.second.kind.method == Method::Matching;
  if (mat)
    throw NumericError(
        "matching estimators have no closed-form covariance path; use the bootstrap");
}

}  // namespace

GammaV analytic_gamma_v(const FusionInputs& in) {
  refuse_matching(in);
  const int n2 = checked_sizes(in);
  const int L = static_cast<int>(in.ep_pairs.size());
  GammaV gv;
  gv.gamma.resize(L);
  gv.v.resize(L, L);
  if (in.regime == WeightRegime::SimpleRandom) {
    const int n1 = static_cast<int>(in.ep_pairs.front().first.expansion.size());
    const double f = 1.0 - static_cast<double>(n2) / static_cast<double>(n1);
    gv.v2 = in.tau2.expansion.squaredNorm() / n2;
    for (int l = 0; l < L; ++l)
      gv.gamma[l] = f * in.tau2.expansion.dot(in.ep_pairs[l].second.expansion) / n2;
    for (int l = 0; l < L; ++l)
      for (int m = l; m < L; ++m) {
        const double c =
            f * in.ep_pairs[l].first.expansion.dot(in.ep_pairs[m].first.expansion) / n1;
        gv.v(l, m) = c;
        gv.v(m, l) = c;
      }
    return gv;
  }
  // Known inclusion: plug-in moments of the inclusion-indicator linearization,
  // already on the variance scale of the estimators (no later /n2).
  const ExpansionPack p = pack_expansions(in);
  const double n1sq = static_cast<double>(p.n1) * static_cast<double>(p.n1);
  CompensatedSum v2;
  for (int j = 0; j < p.n2; ++j) {
    const double t = p.inv_pi[j] * p.psi[j];
    v2.add(t * t);
  }
  gv.v2 = v2.value() / n1sq;
  Eigen::MatrixXd z(p.n2, p.L);  // per-unit inclusion contrast pi^{-1}phi2 - phi1
  for (int l = 0; l < p.L; ++l)
    for (int j = 0; j < p.n2; ++j)
      z(j, l) = p.inv_pi[j] * p.phi2(j, l) - p.phi1(p.val_rows[j], l);
  for (int l = 0; l < p.L; ++l) {
    CompensatedSum g;
    for (int j = 0; j < p.n2; ++j) g.add(p.inv_pi[j] * p.psi[j] * z(j, l));
    gv.gamma[l] = g.value() / n1sq;
  }
  for (int l = 0; l < p.L; ++l)
    for (int m = l; m < p.L; ++m) {
      CompensatedSum s;
      for (int j = 0; j < p.n2; ++j) s.add(z(j, l) * z(j, m));
      for (int i : p.nonval_rows) s.add(p.phi1(i, l) * p.phi1(i, m));
      gv.v(l, m) = s.value() / n1sq;
      gv.v(m, l) = gv.v(l, m);
    }
  return gv;
}

GammaV bootstrap_gamma_v(const FusionInputs& in, const BootstrapSpec& spec) {
  if (spec.replicates < 2) throw DataError("bootstrap needs at least 2 replicates");
  const ExpansionPack p = pack_expansions(in);
  const bool known_pi = in.regime == WeightRegime::KnownInclusion;
  if (known_pi && spec.scheme != BootstrapScheme::WeightedExpansion)
    throw DataError("the known-inclusion regime requires the weighted bootstrap scheme");
  if (!known_pi && spec.scheme == BootstrapScheme::WeightedExpansion)
    throw DataError("the weighted bootstrap scheme needs known inclusion probabilities");
  if (known_pi && spec.ignore_main_uncertainty)
    throw DataError("the small-rho shortcut applies to the simple-random regime only");
  const int B = spec.replicates;
  const int L = p.L;
  constexpr std::uint64_t kTag = 0x626f6f74;  // stream domain for resampling
  constexpr int kMaxAttempts = 1000;

  Eigen::VectorXd t(B);
  Eigen::MatrixXd d(B, L);
  std::vector<int> redraws(B, 0);

  auto replicate = [&](int b) {
    std::vector<CompensatedSum> s2(1 + L);  // psi, then phi2 per component
    std::vector<CompensatedSum> s1(L);      // phi1 per component
    if (spec.ignore_main_uncertainty) {
      Rng r(mix_key(spec.seed, kTag, static_cast<std::uint64_t>(b), 0));
      for (int k = 0; k < p.n2; ++k) {
        const int j = static_cast<int>(r.below(p.n2));
        s2[0].add(p.psi[j]);
        for (int l = 0; l < L; ++l) s2[1 + l].add(p.phi2(j, l));
      }
      t[b] = s2[0].value() / p.n2;
      for (int l = 0; l < L; ++l) d(b, l) = s2[1 + l].value() / p.n2;
      return;
    }
    switch (spec.scheme) {
      case BootstrapScheme::JointResample: {
        for (int attempt = 0;; ++attempt) {
          if (attempt == kMaxAttempts)
            throw NumericError(
                "a bootstrap replicate could not populate both validation arms; "
                "use the stratified resampling scheme");
          Rng r(mix_key(spec.seed, kTag, static_cast<std::uint64_t>(b),
                        static_cast<std::uint64_t>(attempt)));
          for (auto& s : s2) s = CompensatedSum();
          for (auto& s : s1) s = CompensatedSum();
          int arm[2] = {0, 0};
          for (int k = 0; k < p.n1; ++k) {
            const int row = static_cast<int>(r.below(p.n1));
            const int j = p.val_index[row];
            if (j >= 0) {
              ++arm[p.a_val[j] > 0.5 ? 1 : 0];
              s2[0].add(p.psi[j]);
              for (int l = 0; l < L; ++l) s2[1 + l].add(p.phi2(j, l));
            }
            for (int l = 0; l < L; ++l) s1[l].add(p.phi1(row, l));
          }
          if (arm[0] > 0 && arm[1] > 0) break;
          ++redraws[b];
        }
        break;
      }
      case BootstrapScheme::StratifiedResample: {
        Rng r(mix_key(spec.seed, kTag, static_cast<std::uint64_t>(b), 0));
        for (int k = 0; k < p.n2; ++k) {
          const int j = static_cast<int>(r.below(p.n2));
          s2[0].add(p.psi[j]);
          for (int l = 0; l < L; ++l) s2[1 + l].add(p.phi2(j, l));
          for (int l = 0; l < L; ++l) s1[l].add(p.phi1(p.val_rows[j], l));
        }
        const int extra = p.n1 - p.n2;
        for (int k = 0; k < extra; ++k) {
          const int row = p.nonval_rows[static_cast<int>(r.below(extra))];
          for (int l = 0; l < L; ++l) s1[l].add(p.phi1(row, l));
        }
        break;
      }
      case BootstrapScheme::WeightedExpansion: {
        Rng r(mix_key(spec.seed, kTag, static_cast<std::uint64_t>(b), 0));
        for (int k = 0; k < p.n1; ++k) {
          const int row = static_cast<int>(r.below(p.n1));
          const int j = p.val_index[row];
          if (j >= 0) {
            s2[0].add(p.inv_pi[j] * p.psi[j]);
            for (int l = 0; l < L; ++l) s2[1 + l].add(p.inv_pi[j] * p.phi2(j, l));
          }
          for (int l = 0; l < L; ++l) s1[l].add(p.phi1(row, l));
        }
        break;
      }
    }
    // Weighted replicates are normalized by n1 throughout; the others use
    // the original n2 for validation sums (the replicate subset size varies
    // under joint resampling, the divisor does not).
    const double div2 = known_pi ? p.n1 : p.n2;
    t[b] = s2[0].value() / div2;
    for (int l = 0; l < L; ++l)
      d(b, l) = s2[1 + l].value() / div2 - s1[l].value() / p.n1;
  };
  parallel_for(B, spec.threads, replicate);

  GammaV gv;
  gv.bootstrap_redraws = std::accumulate(redraws.begin(), redraws.end(), 0);
  if (spec.scheme == BootstrapScheme::JointResample && gv.bootstrap_redraws > B / 2)
    throw NumericError(
        "more than half the joint-resampling replicates hit an empty validation arm; "
        "use the stratified resampling scheme");

  // Empirical covariances across replicates, divisor B - 1. The simple-random
  // pieces are rescaled by n2 to the same asymptotic scale as the closed
  // forms; known-inclusion pieces stay on the raw variance scale.
  const double scale = known_pi ? 1.0 : static_cast<double>(p.n2);
  CompensatedSum tmean;
  for (int b = 0; b < B; ++b) tmean.add(t[b]);
  const double tbar = tmean.value() / B;
  Eigen::VectorXd dbar(L);
  for (int l = 0; l < L; ++l) {
    CompensatedSum m;
    for (int b = 0; b < B; ++b) m.add(d(b, l));
    dbar[l] = m.value() / B;
  }
  CompensatedSum v2;
  for (int b = 0; b < B; ++b) v2.add((t[b] - tbar) * (t[b] - tbar));
  gv.v2 = scale * v2.value() / (B - 1);
  gv.gamma.resize(L);
  for (int l = 0; l < L; ++l) {
    CompensatedSum g;
    for (int b = 0; b < B; ++b) g.add((t[b] - tbar) * (d(b, l) - dbar[l]));
    gv.gamma[l] = scale * g.value() / (B - 1);
  }
  gv.v.resize(L, L);
  for (int l = 0; l < L; ++l)
    for (int m = l; m < L; ++m) {
      CompensatedSum s;
      for (int b = 0; b < B; ++b) s.add((d(b, l) - dbar[l]) * (d(b, m) - dbar[m]));
      gv.v(l, m) = scale * s.value() / (B - 1);
      gv.v(m, l) = gv.v(l, m);
    }
  return gv;
}

FusionResult fuse_given(double tau2, const Eigen::VectorXd& ep_diff, const GammaV& gv,
                        int n2, WeightRegime regime, double ci_level) {
  const int L = static_cast<int>(ep_diff.size());
  if (gv.gamma.size() != L || gv.v.rows() != L || gv.v.cols() != L)
    throw DataError("covariance dimensions do not match the error-prone components");
  if (!(ci_level > 0.0 && ci_level < 1.0))
    throw DataError("confidence level must lie strictly between 0 and 1");
  FusionResult r;
  r.tau2 = tau2;
  r.ep_diff = ep_diff;
  r.gamma = gv.gamma;
  r.v_mat = 0.5 * (gv.v + gv.v.transpose());
  r.v2 = gv.v2;
  r.ci_level = ci_level;
  r.diagnostics.bootstrap_redraws = gv.bootstrap_redraws;

  // Greedy conditioning guard: while the active block is not comfortably
  // positive definite, drop the component loading heaviest on the softest
  // eigendirection. Dropping everything reduces to the initial estimate.
  constexpr double kCondMax = 1e12;
  std::vector<int> act(L);
  std::iota(act.begin(), act.end(), 0);
  bool first = true;
  Eigen::MatrixXd va;
  while (!act.empty()) {
    const int m = static_cast<int>(act.size());
    va.resize(m, m);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) va(i, j) = r.v_mat(act[i], act[j]);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(va);
    const double lmin = es.eigenvalues()(0);
    const double lmax = es.eigenvalues()(m - 1);
    if (first) {
      r.diagnostics.v_condition =
          lmin > 0.0 ? lmax / lmin : std::numeric_limits<double>::infinity();
      first = false;
    }
    if (lmin > 0.0 && lmax / lmin <= kCondMax) break;
    const Eigen::VectorXd soft = es.eigenvectors().col(0);
    int k = 0;
    for (int i = 1; i < m; ++i)
      if (std::abs(soft[i]) > std::abs(soft[k])) k = i;
    r.diagnostics.dropped_components.push_back(act[k]);
    r.diagnostics.fallback = true;
    act.erase(act.begin() + k);
  }

  r.coefficient = Eigen::VectorXd::Zero(L);
  double q = 0.0;
  if (!act.empty()) {
    const int m = static_cast<int>(act.size());
    Eigen::VectorXd ga(m);
    for (int i = 0; i < m; ++i) ga[i] = r.gamma[act[i]];
    const Eigen::VectorXd c = va.ldlt().solve(ga);
    q = ga.dot(c);
    if (q < 0.0) q = 0.0;
    for (int i = 0; i < m; ++i) r.coefficient[act[i]] = c[i];
  }
  r.tau_hat = tau2 - r.coefficient.dot(ep_diff);
  double v = r.v2 - q;
  if (v < 0.0) v = 0.0;
  if (regime == WeightRegime::SimpleRandom) v /= n2;
  r.v_hat = v;
  r.variance_reduction = r.v2 > 0.0 ? std::min(q / r.v2, 1.0) : 0.0;
  const double half = normal_quantile(0.5 * (1.0 + ci_level)) * std::sqrt(r.v_hat);
  r.ci_lo = r.tau_hat - half;
  r.ci_hi = r.tau_hat + half;
  return r;
}

FusionResult fuse(const FusionInputs& in, const VarianceSpec& vs, double ci_level) {
  const int n2 = checked_sizes(in);
  const GammaV gv = vs.source == VarianceSource::Analytic
                        ? analytic_gamma_v(in)
                        : bootstrap_gamma_v(in, vs.bootstrap);
  const int L = static_cast<int>(in.ep_pairs.size());
  Eigen::VectorXd diff(L);
  for (int l = 0; l < L; ++l)
    diff[l] = in.ep_pairs[l].second.point - in.ep_pairs[l].first.point;
  return fuse_given(in.tau2.point, diff, gv, n2, in.regime, ci_level);
}

FusionResult fuse_multi(const EstimateWithExpansion& tau_full,
                        const std::vector<EpPair>& pairs, const FusedDataset& data,
                        const VarianceSpec& vs, double ci_level) {
  FusionInputs in;
  in.tau2 = tau_full;
  in.ep_pairs = pairs;
  in.regime = data.design == SamplingDesign::KnownInclusion
                  ? WeightRegime::KnownInclusion
                  : WeightRegime::SimpleRandom;
  in.data = &data;
  return fuse(in, vs, ci_level);
}

namespace {

void to_log_ratio(EstimateWithExpansion& e, RatioEstimand which) {
  const double m0 = e.arm_mean[0];
  const double m1 = e.arm_mean[1];
  if (static_cast<int>(e.arm_expansion[0].size()) != e.expansion.size() ||
      static_cast<int>(e.arm_expansion[1].size()) != e.expansion.size())
    throw DataError("estimate carries no per-arm expansions");
  if (which == RatioEstimand::LogCRR) {
    if (!(m0 > 0.0) || !(m1 > 0.0))
      throw DataError("arm means must be positive for the risk ratio");
    e.point = std::log(m1) - std::log(m0);
    e.expansion = e.arm_expansion[1] / m1 - e.arm_expansion[0] / m0;
  } else {
    if (!(m0 > 0.0 && m0 < 1.0 && m1 > 0.0 && m1 < 1.0))
      throw DataError("arm means must lie strictly between 0 and 1 for the odds ratio");
    e.point = std::log(m1 / (1.0 - m1)) - std::log(m0 / (1.0 - m0));
    e.expansion = e.arm_expansion[1] / (m1 * (1.0 - m1)) -
                  e.arm_expansion[0] / (m0 * (1.0 - m0));
  }
}

}  // namespace

FusionResult fuse_ratio_estimand(const FusionInputs& in, RatioEstimand estimand,
                                 const VarianceSpec& vs, double ci_level) {
  FusionInputs tr = in;
  to_log_ratio(tr.tau2, estimand);
  for (EpPair& p : tr.ep_pairs) {
    to_log_ratio(p.first, estimand);
    to_log_ratio(p.second, estimand);
  }
  return fuse(tr, vs, ci_level);
}

std::vector<SensitivityPoint> sensitivity_curve(
    const FusionInputs& in, const std::vector<Eigen::VectorXd>& delta_grid,
    const VarianceSpec& vs, double ci_level) {
  const FusionResult base = fuse(in, vs, ci_level);
  const double half = normal_quantile(0.5 * (1.0 + ci_level)) * std::sqrt(base.v_hat);
  std::vector<SensitivityPoint> curve;
  curve.reserve(delta_grid.size());
  for (const Eigen::VectorXd& delta : delta_grid) {
    if (delta.size() != base.ep_diff.size())
      throw DataError("sensitivity grid dimension does not match the error-prone components");
    SensitivityPoint pt;
    pt.delta = delta;
    pt.tau_adj = base.tau2 - base.coefficient.dot(base.ep_diff - delta);
    pt.ci_lo = pt.tau_adj - half;
    pt.ci_hi = pt.tau_adj + half;
    curve.push_back(std::move(pt));
  }
  return curve;
}

}  // namespace causalfuse
