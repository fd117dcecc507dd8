#pragma once

#include <Eigen/Dense>
#include <vector>

#include "causalfuse/dataset.hpp"
#include "causalfuse/estimating.hpp"

namespace causalfuse {

using WeightRegime = SamplingDesign;

enum class DistanceScaling { Raw, Standardized };

// M nearest opposite-arm neighbors per unit, with replacement.
// counts[j] = number of times j is used as a match (unweighted K_j).
struct MatchResult {
  std::vector<std::vector<int>> match_sets;
  Eigen::VectorXd counts;
  CovariateSet matching_vars = CovariateSet::XOnly;
  int M = 1;
};

// Euclidean distance on the matching variables; exact ties by lower row index.
MatchResult find_matches(const DataView& view, CovariateSet matching_vars, int M,
                         DistanceScaling scaling = DistanceScaling::Raw);

// K_j = (1/w_j) sum_{l: j in J_l} w_l; reduces to counts when w is constant 1.
Eigen::VectorXd weighted_counts(const MatchResult& matches, const Eigen::VectorXd& weights);

// tau-hat^0: plain mean of (2A_j - 1)(Y_j - M^{-1} sum_{l in J_j} Y_l) in the
// simple-random regime, its Hajek-weighted form in the known-inclusion regime.
double matching_estimate_raw(const DataView& view, const MatchResult& matches,
                             const Eigen::VectorXd& weights, WeightRegime regime);

// The subtrahend of the bias-corrected estimator tau-hat_mat = tau-hat^0 - correction:
// the mean matching discrepancy of the opposite-arm regression fits. In the
// known-inclusion regime the sum is pi^{-1}-weighted and normalized by n1.
double bias_correction(const DataView& view, const MatchResult& matches,
                       const ModelFit& mu0, const ModelFit& mu1,
                       const Eigen::VectorXd& weights, WeightRegime regime);

}  // namespace causalfuse
