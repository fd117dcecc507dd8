#include "causalfuse/estimating.hpp"

#include <cmath>
#include <cstdio>

namespace causalfuse {

namespace {

constexpr double kScoreTol = 1e-8;
// A line search can stall on the double-precision likelihood plateau with
// the mean score slightly above kScoreTol; such fits are converged for any
// statistical purpose. Only a stall above this cap is a genuine failure.
constexpr double kScoreLoose = 1e-5;
constexpr int kMaxIter = 100;
constexpr double kSeparationEps = 1e-10;

void check_rank(const Eigen::MatrixXd& wz, const std::vector<std::string>& labels) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(wz);
  qr.setThreshold(1e-10);
  const int rank = static_cast<int>(qr.rank());
  const int k = static_cast<int>(wz.cols());
  if (rank < k) {
    const auto perm = qr.colsPermutation().indices();
    std::string names;
    for (int j = rank; j < k; ++j) {
      if (!names.empty()) names += ", ";
      names += labels[perm[j]];
    }
    throw NumericError("rank-deficient design; collinear columns: " + names);
  }
}

}  // namespace

Eigen::MatrixXd design_matrix(const DataView& view, CovariateSet covs, bool intercept) {
  const int n = view.size();
  const int p = view.p();
  const int q = covs == CovariateSet::XU ? view.q() : 0;
  const int k = (intercept ? 1 : 0) + p + q;
  Eigen::MatrixXd z(n, k);
  for (int i = 0; i < n; ++i) {
    int c = 0;
    if (intercept) z(i, c++) = 1.0;
    z.row(i).segment(c, p) = view.x(i);
    c += p;
    if (q > 0) z.row(i).segment(c, q) = view.u(i);
  }
  return z;
}

std::vector<std::string> design_labels(const DataView& view, CovariateSet covs,
                                       bool intercept) {
  std::vector<std::string> labels;
  if (intercept) labels.push_back("intercept");
  for (int j = 1; j <= view.p(); ++j) labels.push_back("x" + std::to_string(j));
  if (covs == CovariateSet::XU)
    for (int j = 1; j <= view.q(); ++j) labels.push_back("u" + std::to_string(j));
  return labels;
}

double ModelFit::predict_row(int i) const {
  const double lp = linear_predictor(i);
  return spec.kind == ModelKind::OutcomeLinear ? lp : expit(lp);
}

Eigen::VectorXd ModelFit::mean_grad_row(int i) const {
  if (spec.kind == ModelKind::OutcomeLinear) return design.row(i).transpose();
  const double m = expit(linear_predictor(i));
  return m * (1.0 - m) * design.row(i).transpose();
}

namespace {

// Damped Newton-Raphson for a weighted logistic estimating equation
// sum_j w_j m_j (r_j - expit(z_j theta)) z_j = 0.
ModelFit solve_logistic(ModelFit fit, const Eigen::VectorXd& response) {
  const Eigen::MatrixXd& z = fit.design;
  const int n = static_cast<int>(z.rows());
  const int k = static_cast<int>(z.cols());
  const Eigen::VectorXd wm = fit.weights.cwiseProduct(fit.in_eq);

  auto loglik = [&](const Eigen::VectorXd& theta) {
    double ll = 0.0;
    for (int i = 0; i < n; ++i) {
      if (wm[i] == 0.0) continue;
      const double t = z.row(i).dot(theta);
      // log e and log(1-e) in a stable split
      const double log_e = t >= 0.0 ? -std::log1p(std::exp(-t)) : t - std::log1p(std::exp(t));
      const double log_1me = log_e - t;
      ll += wm[i] * (response[i] * log_e + (1.0 - response[i]) * log_1me);
    }
    return ll;
  };
  auto score_sum = [&](const Eigen::VectorXd& theta) {
    Eigen::VectorXd s = Eigen::VectorXd::Zero(k);
    for (int i = 0; i < n; ++i) {
      if (wm[i] == 0.0) continue;
      const double e = expit(z.row(i).dot(theta));
      s += wm[i] * (response[i] - e) * z.row(i).transpose();
    }
    return s;
  };

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(k);
  double ll = loglik(theta);
  int iter = 0;
  // Tolerance on the weighted mean score, so the criterion is sample-size
  // free; the raw sum plateaus against double precision long before 1e-8.
  const double score_scale = std::max(1.0, wm.sum());
  for (; iter < kMaxIter; ++iter) {
    const Eigen::VectorXd grad = score_sum(theta);
    if (grad.lpNorm<Eigen::Infinity>() < kScoreTol * score_scale) break;
    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(k, k);
    for (int i = 0; i < n; ++i) {
      if (wm[i] == 0.0) continue;
      const double e = expit(z.row(i).dot(theta));
      hess.noalias() += wm[i] * e * (1.0 - e) * z.row(i).transpose() * z.row(i);
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(hess);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
      check_rank(fit.weights.cwiseSqrt().cwiseProduct(fit.in_eq).asDiagonal() * z, fit.labels);
      throw NumericError("singular Hessian in logistic fit");
    }
    const Eigen::VectorXd step = ldlt.solve(grad);
    double scale = 1.0;
    bool accepted = false;
    for (int h = 0; h < 40; ++h) {
      const Eigen::VectorXd cand = theta + scale * step;
      const double cand_ll = loglik(cand);
      if (cand_ll > ll || (cand_ll == ll && score_sum(cand).lpNorm<Eigen::Infinity>() <
                                                grad.lpNorm<Eigen::Infinity>())) {
        theta = cand;
        ll = cand_ll;
        accepted = true;
        break;
      }
      scale *= 0.5;
    }
    if (!accepted) break;  // objective cannot improve; convergence judged below
  }
  const double mean_score =
      score_sum(theta).lpNorm<Eigen::Infinity>() / score_scale;
  fit.converged = mean_score < kScoreLoose;
  fit.iterations = iter;
  if (!fit.converged) {
    char s[32];
    std::snprintf(s, sizeof s, "%.3g", mean_score);
    throw NumericError("logistic fit failed to converge after " +
                       std::to_string(iter) + " iterations (mean score sup-norm " +
                       s + ")");
  }
  fit.coef = theta;
  fit.scores.resize(n, k);
  fit.bread = Eigen::MatrixXd::Zero(k, k);
  double wsum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double e = expit(z.row(i).dot(theta));
    if (e < kSeparationEps || e > 1.0 - kSeparationEps) fit.separation = true;
    fit.scores.row(i) = fit.in_eq[i] * (response[i] - e) * z.row(i);
    if (fit.in_eq[i] != 0.0)
      fit.bread.noalias() -= fit.weights[i] * e * (1.0 - e) * z.row(i).transpose() * z.row(i);
    wsum += fit.weights[i];
  }
  fit.bread /= wsum;
  return fit;
}

}  // namespace

ModelFit fit_logistic_propensity(const DataView& view, const ModelSpec& spec,
                                 const Eigen::VectorXd& weights) {
  if (spec.kind != ModelKind::PropensityLogistic)
    throw NumericError("fit_logistic_propensity requires a PropensityLogistic spec");
  if (spec.arm.has_value())
    throw NumericError("propensity model must not name an arm");
  const int n = view.size();
  if (weights.size() != n) throw NumericError("weight length mismatch");
  if ((weights.array() <= 0.0).any()) throw NumericError("weights must be strictly positive");
  ModelFit fit;
  fit.spec = spec;
  fit.design = design_matrix(view, spec.covariates, spec.include_intercept);
  fit.labels = design_labels(view, spec.covariates, spec.include_intercept);
  fit.weights = weights;
  fit.in_eq = Eigen::VectorXd::Ones(n);
  Eigen::VectorXd response(n);
  for (int i = 0; i < n; ++i) response[i] = view.a(i);
  return solve_logistic(std::move(fit), response);
}

ModelFit fit_outcome(const DataView& view, const ModelSpec& spec,
                     const Eigen::VectorXd& weights) {
  if (spec.kind == ModelKind::PropensityLogistic)
    throw NumericError("fit_outcome requires an outcome spec");
  if (!spec.arm.has_value()) throw NumericError("outcome model must name an arm");
  const int n = view.size();
  if (weights.size() != n) throw NumericError("weight length mismatch");
  if ((weights.array() <= 0.0).any()) throw NumericError("weights must be strictly positive");

  ModelFit fit;
  fit.spec = spec;
  fit.design = design_matrix(view, spec.covariates, spec.include_intercept);
  fit.labels = design_labels(view, spec.covariates, spec.include_intercept);
  fit.weights = weights;
  fit.in_eq.resize(n);
  Eigen::VectorXd response(n);
  int arm_count = 0;
  for (int i = 0; i < n; ++i) {
    fit.in_eq[i] = view.a(i) == static_cast<double>(*spec.arm) ? 1.0 : 0.0;
    response[i] = view.y(i);
    arm_count += fit.in_eq[i] != 0.0;
  }
  const int k = static_cast<int>(fit.design.cols());
  if (arm_count < k)
    throw DataError("arm " + std::to_string(*spec.arm) + " has " +
                    std::to_string(arm_count) + " units, fewer than " +
                    std::to_string(k) + " coefficients");

  if (spec.kind == ModelKind::OutcomeLogistic) {
    for (int i = 0; i < n; ++i)
      if (fit.in_eq[i] != 0.0 && response[i] != 0.0 && response[i] != 1.0)
        throw DataError("logistic outcome model requires a binary outcome");
    return solve_logistic(std::move(fit), response);
  }

  // weighted least squares on the arm rows
  const Eigen::VectorXd wm = fit.weights.cwiseProduct(fit.in_eq);
  const Eigen::MatrixXd sz = wm.cwiseSqrt().asDiagonal() * fit.design;
  check_rank(sz, fit.labels);
  const Eigen::MatrixXd xtwx = fit.design.transpose() * wm.asDiagonal() * fit.design;
  const Eigen::VectorXd xtwy = fit.design.transpose() * (wm.cwiseProduct(response));
  fit.coef = Eigen::LDLT<Eigen::MatrixXd>(xtwx).solve(xtwy);
  fit.converged = true;
  fit.iterations = 0;
  fit.scores.resize(n, k);
  fit.bread = Eigen::MatrixXd::Zero(k, k);
  double wsum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double resid = response[i] - fit.design.row(i).dot(fit.coef);
    fit.scores.row(i) = fit.in_eq[i] * resid * fit.design.row(i);
    if (fit.in_eq[i] != 0.0)
      fit.bread.noalias() -= fit.weights[i] * fit.design.row(i).transpose() * fit.design.row(i);
    wsum += fit.weights[i];
  }
  fit.bread /= wsum;
  return fit;
}

double predict(const ModelFit& fit, const Eigen::VectorXd& covariates) {
  const int expected = fit.k() - (fit.spec.include_intercept ? 1 : 0);
  if (static_cast<int>(covariates.size()) != expected)
    throw NumericError("predict: covariate dimension " + std::to_string(covariates.size()) +
                       ", expected " + std::to_string(expected));
  double lp = 0.0;
  int c = 0;
  if (fit.spec.include_intercept) lp += fit.coef[c++];
  lp += covariates.dot(fit.coef.segment(c, expected));
  return fit.spec.kind == ModelKind::OutcomeLinear ? lp : expit(lp);
}

}  // namespace causalfuse
