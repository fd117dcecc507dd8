#include "causalfuse/matching.hpp"

#include <cmath>

#include "causalfuse/rng.hpp"

namespace causalfuse {

MatchResult find_matches(const DataView& view, CovariateSet matching_vars, int M,
                         DistanceScaling scaling) {
  const int n = view.size();
  if (M < 1) throw DataError("match count M must be at least 1");
  Eigen::MatrixXd v = design_matrix(view, matching_vars, /*intercept=*/false);
  if (scaling == DistanceScaling::Standardized) {
    for (int c = 0; c < v.cols(); ++c) {
      const double mean = v.col(c).mean();
      const double ss = (v.col(c).array() - mean).square().sum();
      const double sd = std::sqrt(ss / (n - 1));
      if (sd == 0.0)
        throw DataError("zero-variance matching variable " + std::to_string(c + 1));
      v.col(c) /= sd;
    }
  }
  int n_treated = 0;
  for (int i = 0; i < n; ++i) n_treated += view.a(i) == 1.0;
  if (n_treated < M || n - n_treated < M)
    throw DataError("an arm has fewer than M = " + std::to_string(M) + " units");

  MatchResult res;
  res.matching_vars = matching_vars;
  res.M = M;
  res.match_sets.assign(n, {});
  res.counts = Eigen::VectorXd::Zero(n);
  std::vector<double> best_d(M);
  std::vector<int> best_i(M);
  for (int j = 0; j < n; ++j) {
    const double opp = 1.0 - view.a(j);
    int filled = 0;
    for (int l = 0; l < n; ++l) {
      if (view.a(l) != opp) continue;
      const double d = (v.row(l) - v.row(j)).squaredNorm();
      // keep the M smallest (distance, index) pairs, lexicographic
      int pos = filled;
      while (pos > 0 && (d < best_d[pos - 1] || (d == best_d[pos - 1] && l < best_i[pos - 1])))
        --pos;
      if (pos >= M) continue;
      const int last = filled < M ? filled : M - 1;
      for (int s = last; s > pos; --s) {
        best_d[s] = best_d[s - 1];
        best_i[s] = best_i[s - 1];
      }
      best_d[pos] = d;
      best_i[pos] = l;
      if (filled < M) ++filled;
    }
    res.match_sets[j].assign(best_i.begin(), best_i.begin() + M);
    for (int s = 0; s < M; ++s) res.counts[best_i[s]] += 1.0;
  }
  return res;
}

Eigen::VectorXd weighted_counts(const MatchResult& matches, const Eigen::VectorXd& weights) {
  const int n = static_cast<int>(matches.match_sets.size());
  Eigen::VectorXd k = Eigen::VectorXd::Zero(n);
  for (int j = 0; j < n; ++j)
    for (int l : matches.match_sets[j]) k[l] += weights[j];
  for (int j = 0; j < n; ++j) k[j] /= weights[j];
  return k;
}

double matching_estimate_raw(const DataView& view, const MatchResult& matches,
                             const Eigen::VectorXd& weights, WeightRegime regime) {
  const int n = view.size();
  CompensatedSum num;
  double wsum = 0.0;
  for (int j = 0; j < n; ++j) {
    double ybar = 0.0;
    for (int l : matches.match_sets[j]) ybar += view.y(l);
    ybar /= matches.M;
    num.add(weights[j] * (2.0 * view.a(j) - 1.0) * (view.y(j) - ybar));
    wsum += weights[j];
  }
  const double norm = regime == WeightRegime::KnownInclusion ? wsum : static_cast<double>(n);
  return num.value() / norm;
}

double bias_correction(const DataView& view, const MatchResult& matches,
                       const ModelFit& mu0, const ModelFit& mu1,
                       const Eigen::VectorXd& weights, WeightRegime regime) {
  const int n = view.size();
  CompensatedSum num;
  for (int j = 0; j < n; ++j) {
    const ModelFit& opp_fit = view.a(j) == 1.0 ? mu0 : mu1;
    double disc = 0.0;
    for (int l : matches.match_sets[j]) disc += opp_fit.predict_row(j) - opp_fit.predict_row(l);
    num.add(weights[j] * (2.0 * view.a(j) - 1.0) * disc / matches.M);
  }
  const double norm = regime == WeightRegime::KnownInclusion
                          ? static_cast<double>(view.data->n1())
                          : static_cast<double>(n);
  return num.value() / norm;
}

}  // namespace causalfuse
