#include "causalfuse/estimators.hpp"

#include <cmath>

#include "causalfuse/rng.hpp"

namespace causalfuse {

namespace {

constexpr double kTrim = 1e-6;

struct Block {
  const ModelFit* fit;
  Eigen::MatrixXd dtau;  // view rows x k: per-unit d(base_j)/d(theta)
};

struct ArmTerms {
  Eigen::VectorXd base;
  std::vector<Block> blocks;
};

double normalizer(const Eigen::VectorXd& w, WeightRegime regime) {
  return regime == WeightRegime::KnownInclusion ? w.sum()
                                                : static_cast<double>(w.size());
}

// point = weighted mean of base; expansion_j = (base_j - point) plus the
// stacked-sandwich projections H_b^T (-bread_b)^{-1} S_{b,j}. The weighted
// expansion mean is exactly zero because each fit's weighted score sum is.
void assemble_arm(const ArmTerms& terms, const Eigen::VectorXd& w, WeightRegime regime,
                  ScoreCorrections corrections, double& point, Eigen::VectorXd& expansion) {
  const int n = static_cast<int>(terms.base.size());
  const double norm = normalizer(w, regime);
  point = w.dot(terms.base) / norm;
  expansion = terms.base.array() - point;
  if (corrections == ScoreCorrections::BaseOnly) return;
  const double wsum = w.sum();
  for (const Block& b : terms.blocks) {
    const Eigen::VectorXd h = b.dtau.transpose() * w / wsum;
    const Eigen::VectorXd c =
        Eigen::FullPivLU<Eigen::MatrixXd>(-b.fit->bread.transpose()).solve(h);
    expansion.noalias() += b.fit->scores * c;
  }
  (void)n;
}

void check_form(EstimatorForm form, WeightRegime regime) {
  if (regime == WeightRegime::KnownInclusion && form == EstimatorForm::HorvitzThompson)
    throw NumericError(
        "the known-inclusion regime uses the Hajek normalization; "
        "Horvitz-Thompson is not defined here");
}

Eigen::VectorXd clamped_propensity(const ModelFit& e, int n, int& trimmed) {
  Eigen::VectorXd eh(n);
  trimmed = 0;
  for (int i = 0; i < n; ++i) {
    double v = e.predict_row(i);
    if (v < kTrim || v > 1.0 - kTrim) {
      v = std::min(std::max(v, kTrim), 1.0 - kTrim);
      ++trimmed;
    }
    eh[i] = v;
  }
  return eh;
}

EstimateWithExpansion finish(ArmTerms arm0, ArmTerms arm1, const Eigen::VectorXd& w,
                             WeightRegime regime, ScoreCorrections corrections) {
  EstimateWithExpansion est;
  est.regime = regime;
  assemble_arm(arm0, w, regime, corrections, est.arm_mean[0], est.arm_expansion[0]);
  assemble_arm(arm1, w, regime, corrections, est.arm_mean[1], est.arm_expansion[1]);
  est.point = est.arm_mean[1] - est.arm_mean[0];
  est.expansion = est.arm_expansion[1] - est.arm_expansion[0];
  return est;
}

}  // namespace

EstimateWithExpansion reg_imputation(const DataView& view, const ModelFit& mu0,
                                     const ModelFit& mu1, const Eigen::VectorXd& weights,
                                     WeightRegime regime, ScoreCorrections corrections) {
  const int n = view.size();
  ArmTerms t0, t1;
  t0.base.resize(n);
  t1.base.resize(n);
  Eigen::MatrixXd d0(n, mu0.k()), d1(n, mu1.k());
  for (int j = 0; j < n; ++j) {
    t0.base[j] = mu0.predict_row(j);
    t1.base[j] = mu1.predict_row(j);
    d0.row(j) = mu0.mean_grad_row(j);
    d1.row(j) = mu1.mean_grad_row(j);
  }
  t0.blocks.push_back({&mu0, std::move(d0)});
  t1.blocks.push_back({&mu1, std::move(d1)});
  auto est = finish(std::move(t0), std::move(t1), weights, regime, corrections);
  est.kind.method = Method::RegImputation;
  est.model_fits = {mu0, mu1};
  return est;
}

EstimateWithExpansion ipw(const DataView& view, const ModelFit& e,
                          const Eigen::VectorXd& weights, EstimatorForm form,
                          WeightRegime regime, ScoreCorrections corrections) {
  check_form(form, regime);
  const int n = view.size();
  int trimmed = 0;
  const Eigen::VectorXd eh = clamped_propensity(e, n, trimmed);
  ArmTerms t0, t1;
  t0.base.resize(n);
  t1.base.resize(n);
  Eigen::MatrixXd d0(n, e.k()), d1(n, e.k());
  for (int j = 0; j < n; ++j) {
    const double a = view.a(j), y = view.y(j);
    const Eigen::VectorXd edot = e.mean_grad_row(j);
    t1.base[j] = a * y / eh[j];
    t0.base[j] = (1.0 - a) * y / (1.0 - eh[j]);
    d1.row(j) = (-a * y / (eh[j] * eh[j])) * edot;
    d0.row(j) = ((1.0 - a) * y / ((1.0 - eh[j]) * (1.0 - eh[j]))) * edot;
  }
  t0.blocks.push_back({&e, std::move(d0)});
  t1.blocks.push_back({&e, std::move(d1)});
  auto est = finish(std::move(t0), std::move(t1), weights, regime, corrections);
  est.kind.method = Method::IPW;
  est.model_fits = {e};
  est.trimmed = trimmed;
  return est;
}

EstimateWithExpansion aipw(const DataView& view, const ModelFit& e, const ModelFit& mu0,
                           const ModelFit& mu1, const Eigen::VectorXd& weights,
                           EstimatorForm form, WeightRegime regime,
                           ScoreCorrections corrections) {
  check_form(form, regime);
  const int n = view.size();
  int trimmed = 0;
  const Eigen::VectorXd eh = clamped_propensity(e, n, trimmed);
  ArmTerms t0, t1;
  t0.base.resize(n);
  t1.base.resize(n);
  Eigen::MatrixXd de0(n, e.k()), de1(n, e.k());
  Eigen::MatrixXd dm0(n, mu0.k()), dm1(n, mu1.k());
  for (int j = 0; j < n; ++j) {
    const double a = view.a(j), y = view.y(j);
    const double m0 = mu0.predict_row(j), m1 = mu1.predict_row(j);
    const Eigen::VectorXd edot = e.mean_grad_row(j);
    t1.base[j] = a * (y - m1) / eh[j] + m1;
    t0.base[j] = (1.0 - a) * (y - m0) / (1.0 - eh[j]) + m0;
    de1.row(j) = (-a * (y - m1) / (eh[j] * eh[j])) * edot;
    de0.row(j) = ((1.0 - a) * (y - m0) / ((1.0 - eh[j]) * (1.0 - eh[j]))) * edot;
    dm1.row(j) = (1.0 - a / eh[j]) * mu1.mean_grad_row(j);
    dm0.row(j) = (1.0 - (1.0 - a) / (1.0 - eh[j])) * mu0.mean_grad_row(j);
  }
  t1.blocks.push_back({&e, std::move(de1)});
  t1.blocks.push_back({&mu1, std::move(dm1)});
  t0.blocks.push_back({&e, std::move(de0)});
  t0.blocks.push_back({&mu0, std::move(dm0)});
  auto est = finish(std::move(t0), std::move(t1), weights, regime, corrections);
  est.kind.method = Method::AIPW;
  est.model_fits = {e, mu0, mu1};
  est.trimmed = trimmed;
  return est;
}

EstimateWithExpansion matching_bias_corrected(const DataView& view, int M,
                                              const Eigen::VectorXd& weights,
                                              CovariateSet matching_vars,
                                              WeightRegime regime, DistanceScaling scaling) {
  const int n = view.size();
  const MatchResult matches = find_matches(view, matching_vars, M, scaling);
  ModelSpec ms;
  ms.kind = ModelKind::OutcomeLinear;
  ms.covariates = matching_vars;
  ms.arm = 0;
  const ModelFit mu0 = fit_outcome(view, ms, weights);
  ms.arm = 1;
  const ModelFit mu1 = fit_outcome(view, ms, weights);

  const Eigen::VectorXd k = regime == WeightRegime::KnownInclusion
                                ? weighted_counts(matches, weights)
                                : matches.counts;
  const double norm = normalizer(weights, regime);
  const double cnorm = regime == WeightRegime::KnownInclusion
                           ? static_cast<double>(view.data->n1())
                           : static_cast<double>(n);

  EstimateWithExpansion est;
  est.regime = regime;
  est.kind.method = Method::Matching;
  for (int a = 0; a < 2; ++a) {
    const ModelFit& mu_a = a == 0 ? mu0 : mu1;
    CompensatedSum raw, corr;
    Eigen::VectorXd uncentered(n);
    for (int j = 0; j < n; ++j) {
      const bool own_arm = view.a(j) == static_cast<double>(a);
      double imputed;
      if (own_arm) {
        imputed = view.y(j);
      } else {
        double ybar = 0.0, disc = 0.0;
        for (int l : matches.match_sets[j]) {
          ybar += view.y(l);
          disc += mu_a.predict_row(j) - mu_a.predict_row(l);
        }
        imputed = ybar / M;
        corr.add(weights[j] * disc / M);
      }
      raw.add(weights[j] * imputed);
      const double m_aj = mu_a.predict_row(j);
      uncentered[j] = m_aj + (own_arm ? (1.0 + k[j] / M) * (view.y(j) - m_aj) : 0.0);
    }
    est.arm_mean[a] = raw.value() / norm + corr.value() / cnorm;
    est.arm_expansion[a] = uncentered.array() - est.arm_mean[a];
  }
  est.point = est.arm_mean[1] - est.arm_mean[0];
  est.expansion = est.arm_expansion[1] - est.arm_expansion[0];
  est.model_fits = {mu0, mu1};
  return est;
}

namespace {

EstimateWithExpansion dispatch(const DataView& view, Method method,
                               const EstimatorOptions& opt, WeightRegime regime,
                               CovariateSet prop_covs, CovariateSet out_covs,
                               CovariateSet match_covs) {
  const EstimatorForm form = regime == WeightRegime::KnownInclusion
                                 ? EstimatorForm::Hajek
                                 : opt.form;
  const Eigen::VectorXd& w = view.weights;
  switch (method) {
    case Method::RegImputation: {
      ModelSpec ms{opt.outcome_kind, out_covs, 0, true};
      const ModelFit mu0 = fit_outcome(view, ms, w);
      ms.arm = 1;
      const ModelFit mu1 = fit_outcome(view, ms, w);
      return reg_imputation(view, mu0, mu1, w, regime, opt.corrections);
    }
    case Method::IPW: {
      const ModelSpec ps{ModelKind::PropensityLogistic, prop_covs, std::nullopt, true};
      return ipw(view, fit_logistic_propensity(view, ps, w), w, form, regime,
                 opt.corrections);
    }
    case Method::AIPW: {
      const ModelSpec ps{ModelKind::PropensityLogistic, prop_covs, std::nullopt, true};
      const ModelFit e = fit_logistic_propensity(view, ps, w);
      ModelSpec ms{opt.outcome_kind, out_covs, 0, true};
      const ModelFit mu0 = fit_outcome(view, ms, w);
      ms.arm = 1;
      const ModelFit mu1 = fit_outcome(view, ms, w);
      return aipw(view, e, mu0, mu1, w, form, regime, opt.corrections);
    }
    case Method::Matching:
      return matching_bias_corrected(view, opt.matches, w, match_covs, regime,
                                     opt.scaling);
  }
  throw NumericError("unknown method");
}

}  // namespace

EstimateWithExpansion initial_estimate(const FusedDataset& d, Method method,
                                       const EstimatorOptions& opt) {
  if (opt.regime != d.design)
    throw DataError("estimator regime does not match the dataset design");
  const DataView view = validation_view(d);
  auto est = dispatch(view, method, opt, opt.regime, opt.propensity_covariates,
                      opt.outcome_covariates, CovariateSet::XU);
  est.kind = {method, CovariateSet::XU, WhichData::Validation};
  return est;
}

std::pair<EstimateWithExpansion, EstimateWithExpansion> error_prone_pair(
    const FusedDataset& d, Method method, const EstimatorOptions& opt) {
  if (opt.regime != d.design)
    throw DataError("estimator regime does not match the dataset design");
  // S1 member: the plain unweighted procedure over the full main data.
  const DataView mview = main_view(d);
  auto on_main = dispatch(mview, method, opt, WeightRegime::SimpleRandom,
                          CovariateSet::XOnly, CovariateSet::XOnly, CovariateSet::XOnly);
  on_main.kind = {method, CovariateSet::XOnly, WhichData::Main};
  const DataView vview = validation_view(d);
  auto on_val = dispatch(vview, method, opt, opt.regime, CovariateSet::XOnly,
                         CovariateSet::XOnly, CovariateSet::XOnly);
  on_val.kind = {method, CovariateSet::XOnly, WhichData::Validation};
  return {std::move(on_main), std::move(on_val)};
}

}  // namespace causalfuse
