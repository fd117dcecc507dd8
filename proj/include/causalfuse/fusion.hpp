#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>
#include <vector>

#include "causalfuse/estimators.hpp"

namespace causalfuse {

enum class BootstrapScheme { JointResample, StratifiedResample, WeightedExpansion };
enum class VarianceSource { Analytic, Bootstrap };

struct BootstrapSpec {
  int replicates = 2000;
  std::uint64_t seed = 0;
  BootstrapScheme scheme = BootstrapScheme::JointResample;
  // Small-rho shortcut: hold the main-data error-prone estimate fixed and
  // resample the validation units only. Simple-random regime only.
  bool ignore_main_uncertainty = false;
  int threads = 1;
};

// One error-prone pairing: the same X-only procedure on the main data
// (first) and on the validation data (second).
using EpPair = std::pair<EstimateWithExpansion, EstimateWithExpansion>;

struct FusionInputs {
  EstimateWithExpansion tau2;
  std::vector<EpPair> ep_pairs;
  WeightRegime regime = WeightRegime::SimpleRandom;
  // Row geometry (validation flags, inclusion probabilities). Required by
  // the bootstrap and by the known-inclusion analytic forms; the
  // simple-random analytic path works from the expansions alone.
  const FusedDataset* data = nullptr;
};

struct GammaV {
  Eigen::VectorXd gamma;
  Eigen::MatrixXd v;
  double v2 = 0.0;
  int bootstrap_redraws = 0;
};

struct FusionDiagnostics {
  double v_condition = 0.0;            // condition number of the full V-hat
  bool fallback = false;               // one or more components dropped
  std::vector<int> dropped_components;
  int bootstrap_redraws = 0;
};

struct FusionResult {
  double tau_hat = 0.0;
  double tau2 = 0.0;
  Eigen::VectorXd ep_diff;
  Eigen::VectorXd gamma;
  Eigen::MatrixXd v_mat;
  // V-hat^{-1} Gamma-hat with zeros in dropped components; tau_hat equals
  // tau2 - coefficient . ep_diff exactly.
  Eigen::VectorXd coefficient;
  double v2 = 0.0;
  double v_hat = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double ci_level = 0.95;
  double variance_reduction = 0.0;
  FusionDiagnostics diagnostics;
};

struct VarianceSpec {
  VarianceSource source = VarianceSource::Analytic;
  BootstrapSpec bootstrap;
};

double normal_quantile(double p);

// Covariance pieces from the closed-form sample analogs. Refuses matching
// estimators (no plug-in variance path; use the bootstrap).
GammaV analytic_gamma_v(const FusionInputs& in);

// Covariance pieces from resampling the frozen per-unit expansions; models
// are never refit. Replicate b draws from a stream keyed by (seed, b), so
// results do not depend on the worker count.
GammaV bootstrap_gamma_v(const FusionInputs& in, const BootstrapSpec& spec);

// Core combination step on precomputed pieces. n2 enters only through the
// simple-random variance normalization v = (v2 - q) / n2; the
// known-inclusion pieces are already on the variance scale.
FusionResult fuse_given(double tau2, const Eigen::VectorXd& ep_diff, const GammaV& gv,
                        int n2, WeightRegime regime, double ci_level);

FusionResult fuse(const FusionInputs& in, const VarianceSpec& vs, double ci_level = 0.95);

// Stacks several error-prone pairings over the same two-dataset structure
// into one combined adjustment; identical algebra on the longer vector.
FusionResult fuse_multi(const EstimateWithExpansion& tau_full,
                        const std::vector<EpPair>& pairs, const FusedDataset& data,
                        const VarianceSpec& vs, double ci_level = 0.95);

enum class RatioEstimand { LogCRR, LogCOR };

// Delta-method transform of the per-arm means to a log ratio scale, then
// the standard combination algebra.
FusionResult fuse_ratio_estimand(const FusionInputs& in, RatioEstimand estimand,
                                 const VarianceSpec& vs, double ci_level = 0.95);

struct SensitivityPoint {
  Eigen::VectorXd delta;
  double tau_adj = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
};

// tau_adj(delta) = tau2 - coefficient . (ep_diff - delta); affine in delta
// with the variance held fixed.
std::vector<SensitivityPoint> sensitivity_curve(
    const FusionInputs& in, const std::vector<Eigen::VectorXd>& delta_grid,
    const VarianceSpec& vs, double ci_level = 0.95);

}  // namespace causalfuse
