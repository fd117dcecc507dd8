#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "causalfuse/dataset.hpp"

namespace causalfuse {

enum class ModelKind { PropensityLogistic, OutcomeLinear, OutcomeLogistic };
enum class CovariateSet { XU, XOnly };

struct ModelSpec {
  ModelKind kind = ModelKind::PropensityLogistic;
  CovariateSet covariates = CovariateSet::XOnly;
  std::optional<int> arm;  // outcome models only
  bool include_intercept = true;
};

// Solved estimating equation sum_j w_j S_j(theta-hat) = 0 over a view.
// scores row j holds S_j (zero when the row is outside the fitting arm);
// bread is the weighted empirical mean of dS_j/dtheta^T over the view,
// the quantity the influence-function lemmas consume.
struct ModelFit {
  ModelSpec spec;
  Eigen::VectorXd coef;
  Eigen::MatrixXd design;   // view rows x k
  Eigen::VectorXd weights;  // weights used in the estimating equation
  Eigen::VectorXd in_eq;    // 1 when the row enters the equation
  Eigen::MatrixXd scores;   // view rows x k
  Eigen::MatrixXd bread;    // k x k
  std::vector<std::string> labels;
  bool converged = false;
  int iterations = 0;
  bool separation = false;  // fitted probability within 1e-10 of 0/1

  int k() const { return static_cast<int>(coef.size()); }
  double linear_predictor(int i) const { return design.row(i).dot(coef); }
  double predict_row(int i) const;
  // d(mean)/d(theta) at row i: z for identity link, mu(1-mu) z for logistic
  Eigen::VectorXd mean_grad_row(int i) const;
};

Eigen::MatrixXd design_matrix(const DataView& view, CovariateSet covs, bool intercept);
std::vector<std::string> design_labels(const DataView& view, CovariateSet covs,
                                       bool intercept);

ModelFit fit_logistic_propensity(const DataView& view, const ModelSpec& spec,
                                 const Eigen::VectorXd& weights);
ModelFit fit_outcome(const DataView& view, const ModelSpec& spec,
                     const Eigen::VectorXd& weights);

// covariates in the order of the fit's covariate set, without the intercept
double predict(const ModelFit& fit, const Eigen::VectorXd& covariates);

inline double expit(double t) {
  if (t >= 0.0) {
    const double z = std::exp(-t);
    return 1.0 / (1.0 + z);
  }
  const double z = std::exp(t);
  return z / (1.0 + z);
}

}  // namespace causalfuse
