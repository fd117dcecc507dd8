#pragma once

#include <Eigen/Dense>
#include <utility>
#include <vector>

#include "causalfuse/dataset.hpp"
#include "causalfuse/estimating.hpp"
#include "causalfuse/matching.hpp"

namespace causalfuse {

enum class Method { RegImputation, IPW, AIPW, Matching };
enum class WhichData { Validation, Main };
enum class EstimatorForm { HorvitzThompson, Hajek };

// Test-only switch: BaseOnly drops the nuisance-score projection terms from
// the expansion, leaving the centered per-unit terms. The full expansion is
// the correct one; BaseOnly exists to demonstrate the variance it misses.
enum class ScoreCorrections { Full, BaseOnly };

struct EstimatorKind {
  Method method = Method::AIPW;
  CovariateSet covariates = CovariateSet::XU;
  WhichData dataset = WhichData::Validation;
};

// A point estimate with its per-unit linear expansion (psi-hat over S2 or
// phi-hat_d over S_d), the object the fusion layer consumes. Expansions are
// exactly centered in the simple-random regime: their weighted mean is zero
// by the estimating-equation and match-count identities.
// Per-arm pieces (potential-outcome means E{Y(a)}) feed the ratio estimands.
struct EstimateWithExpansion {
  EstimatorKind kind;
  WeightRegime regime = WeightRegime::SimpleRandom;
  double point = 0.0;
  Eigen::VectorXd expansion;
  double arm_mean[2] = {0.0, 0.0};
  Eigen::VectorXd arm_expansion[2];
  std::vector<ModelFit> model_fits;
  int trimmed = 0;  // propensity values clamped to [1e-6, 1-1e-6]
};

EstimateWithExpansion reg_imputation(const DataView& view, const ModelFit& mu0,
                                     const ModelFit& mu1, const Eigen::VectorXd& weights,
                                     WeightRegime regime = WeightRegime::SimpleRandom,
                                     ScoreCorrections corrections = ScoreCorrections::Full);

EstimateWithExpansion ipw(const DataView& view, const ModelFit& e,
                          const Eigen::VectorXd& weights, EstimatorForm form,
                          WeightRegime regime = WeightRegime::SimpleRandom,
                          ScoreCorrections corrections = ScoreCorrections::Full);

EstimateWithExpansion aipw(const DataView& view, const ModelFit& e, const ModelFit& mu0,
                           const ModelFit& mu1, const Eigen::VectorXd& weights,
                           EstimatorForm form,
                           WeightRegime regime = WeightRegime::SimpleRandom,
                           ScoreCorrections corrections = ScoreCorrections::Full);

EstimateWithExpansion matching_bias_corrected(
    const DataView& view, int M, const Eigen::VectorXd& weights,
    CovariateSet matching_vars, WeightRegime regime = WeightRegime::SimpleRandom,
    DistanceScaling scaling = DistanceScaling::Raw);

struct EstimatorOptions {
  WeightRegime regime = WeightRegime::SimpleRandom;
  EstimatorForm form = EstimatorForm::HorvitzThompson;
  int matches = 1;
  DistanceScaling scaling = DistanceScaling::Raw;
  ModelKind outcome_kind = ModelKind::OutcomeLinear;
  ScoreCorrections corrections = ScoreCorrections::Full;
  // Initial-estimator model covariates; XOnly drops U from that nuisance
  // model, the misspecification exercised by the robustness studies.
  CovariateSet propensity_covariates = CovariateSet::XU;
  CovariateSet outcome_covariates = CovariateSet::XU;
};

// The initial estimator: validation data, supplementary covariates available.
EstimateWithExpansion initial_estimate(const FusedDataset& d, Method method,
                                       const EstimatorOptions& opt = {});

// The same X-only procedure applied to the main data (first) and the
// validation data (second); models refit independently per dataset. In the
// known-inclusion regime the S1 member is unweighted and the S2 member is
// the pi^{-1}-weighted Hajek form.
std::pair<EstimateWithExpansion, EstimateWithExpansion> error_prone_pair(
    const FusedDataset& d, Method method, const EstimatorOptions& opt = {});

}  // namespace causalfuse
