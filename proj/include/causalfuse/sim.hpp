#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "causalfuse/dataset.hpp"
#include "causalfuse/estimators.hpp"
#include "causalfuse/fusion.hpp"

namespace causalfuse {

// Which nuisance model of the initial estimator is deliberately deprived of
// the supplementary covariate. The error-prone members are X-only by
// construction, so these switches affect the initial estimator alone.
enum class Misspecification { None, WrongOutcome, WrongPropensity };

// One fused estimator: an initial method on the validation data plus one or
// more error-prone methods whose main/validation contrasts drive the
// correction. "aipw&aipw" is the single same-type pairing.
struct MenuEntry {
  Method initial = Method::AIPW;
  std::vector<Method> error_prone = {Method::AIPW};
};

struct SimConfig {
  int n1 = 1000;
  int n2 = 200;
  int reps = 1000;
  std::uint64_t seed = 1;
  std::vector<MenuEntry> menu;  // empty: the four same-type pairings
  bool analytic_variance = true;
  int bootstrap_replicates = 0;  // >= 2 enables the bootstrap source
  BootstrapScheme scheme = BootstrapScheme::JointResample;
  // Two-stratum known-inclusion design: pi = 0.9 when Y > -1, 0.1 otherwise,
  // inclusion drawn independently per unit. n2 is then random and the
  // configured n2 is ignored. Forces the weighted-expansion bootstrap.
  bool outcome_dependent_inclusion = false;
  Misspecification misspecification = Misspecification::None;
  ScoreCorrections corrections = ScoreCorrections::Full;
  int matches = 1;
  double ci_level = 0.95;
  int threads = 1;
};

// X ~ Unif(0,2); U = 0.5 + 0.5X - 2 sin X + 2 sgn(sin 5X) + Unif(-1/2,1/2);
// A ~ Bernoulli(expit(1 - 0.5X - 0.5U));
// Y(0) = -X - U + N(0,1), Y(1) = -X + 4U + N(0,1); sgn(0) = 0.
// U is recorded on validation rows only. The replicate index selects an
// independent substream of the seed, so datasets are reproducible per
// (seed, rep) and independent of evaluation order.
FusedDataset generate(const SimConfig& cfg, int rep);

// E(U | X = x) = 0.5 + 0.5x - 2 sin x + 2 sgn(sin 5x); the noise is mean
// zero. sgn(0) = 0, so at x = pi/5 exactly the jump term contributes 0.
double latent_confounder_mean(double x);

// 5 E(U): adaptive quadrature of E(U | X = x) over the pieces of (0,2) on
// which sgn(sin 5x) is constant, with the piece's sign folded into the
// integrand so no evaluation lands on a discontinuity.
double true_tau();

struct EstimatorSummary {
  std::string label;  // e.g. "aipw&aipw"
  MenuEntry entry;
  VarianceSource source = VarianceSource::Analytic;
  int used = 0;      // replicates contributing to this row
  int failures = 0;  // replicates excluded (generation or estimation threw)
  double mean_initial = 0, bias_initial = 0, var_initial = 0, mse_initial = 0;
  double mean_fused = 0, bias_fused = 0, var_fused = 0, mse_fused = 0;
  double mse_reduction_pct = 0;  // 100 (1 - mse_fused / mse_initial)
  // Paired per-replicate squared-error difference (initial - fused): its
  // mean and Monte Carlo standard error, for one-sided dominance checks.
  double mse_diff_mean = 0;
  double mse_diff_se = 0;
  double coverage_fused = 0;    // fraction of CIs containing the truth
  double coverage_initial = 0;  // CI built from v2 alone
  double mean_v_hat = 0;
};

struct SimReport {
  SimConfig config;
  double tau_true = 0;
  std::vector<EstimatorSummary> rows;
  int total_failures = 0;  // excluded (replicate, row) cells
  bool flagged = false;    // some row lost more than 1% of replicates
};

// Runs the replications, fusing every menu entry under every enabled
// variance source. Fused points differ across sources because the
// correction coefficient depends on the estimated moments. Matching
// entries appear under the bootstrap source only. Results are bit-identical
// across thread counts: replicates write to per-index slots and the
// reduction runs in replicate order.
SimReport run_monte_carlo(const SimConfig& cfg);

std::string method_name(Method m);
std::string entry_label(const MenuEntry& e);
std::string variance_source_name(VarianceSource s);

}  // namespace causalfuse
