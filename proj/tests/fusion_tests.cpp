#include "doctest.h"

#include <cmath>
#include <vector>

#include "causalfuse/dataset.hpp"
#include "causalfuse/estimators.hpp"
#include "causalfuse/fusion.hpp"
#include "causalfuse/rng.hpp"

using namespace causalfuse;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

GammaV scalar_gv(double gamma, double v, double v2) {
  GammaV gv;
  gv.gamma = VectorXd::Constant(1, gamma);
  gv.v = MatrixXd::Constant(1, 1, v);
  gv.v2 = v2;
  return gv;
}

EstimateWithExpansion hand_estimate(WhichData where, double point,
                                    const VectorXd& expansion,
                                    Method method = Method::AIPW) {
  EstimateWithExpansion e;
  e.kind.method = method;
  e.kind.dataset = where;
  e.kind.covariates = where == WhichData::Validation ? CovariateSet::XU
                                                     : CovariateSet::XOnly;
  e.point = point;
  e.expansion = expansion;
  return e;
}

// Row geometry for the bootstrap paths: n1 rows, the first n2 flagged.
FusedDataset geometry(int n1, int n2, const std::vector<double>& a_val) {
  FusedDataset d;
  d.a = VectorXd::Zero(n1);
  for (int i = 0; i < n2; ++i) d.a[i] = a_val[i];
  for (int i = n2; i < n1; ++i) d.a[i] = i % 2;
  d.y = VectorXd::LinSpaced(n1, 0.0, 1.0);
  d.x = MatrixXd::Zero(n1, 1);
  d.x.col(0) = VectorXd::LinSpaced(n1, 0.0, 2.0);
  d.u = MatrixXd::Zero(n1, 0);
  d.ids.resize(n1);
  for (int i = 0; i < n1; ++i) d.ids[i] = "g" + std::to_string(i + 1);
  d.in_validation.assign(n1, 0);
  for (int i = 0; i < n2; ++i) d.in_validation[i] = 1;
  d.validate();
  return d;
}

FusionInputs hand_inputs(const FusedDataset& d, const VectorXd& psi,
                         const VectorXd& phi1, const VectorXd& phi2,
                         double tau2 = 1.0, double ep1 = 0.3, double ep2 = 0.1) {
  FusionInputs in;
  in.tau2 = hand_estimate(WhichData::Validation, tau2, psi);
  in.ep_pairs.push_back({hand_estimate(WhichData::Main, ep1, phi1),
                         hand_estimate(WhichData::Validation, ep2, phi2)});
  in.data = &d;
  return in;
}

}  // namespace

TEST_CASE("scalar combination reproduces the direct substitution") {
  const VectorXd diff = VectorXd::Constant(1, 0.4);
  const FusionResult f = fuse_given(1.0, diff, scalar_gv(0.5, 2.0, 2.0), 100,
                                    WeightRegime::SimpleRandom, 0.95);
  CHECK(f.tau_hat == doctest::Approx(0.9).epsilon(1e-14));
  CHECK(f.v_hat == doctest::Approx(0.01875).epsilon(1e-14));
  CHECK(f.variance_reduction == doctest::Approx(0.0625).epsilon(1e-14));
  CHECK(f.ci_lo == doctest::Approx(0.9 - normal_quantile(0.975) * std::sqrt(0.01875))
                       .epsilon(1e-12));
  CHECK_FALSE(f.diagnostics.fallback);
}

TEST_CASE("zero covariance falls through to the initial estimate bitwise") {
  const VectorXd diff = VectorXd::Constant(1, 0.7);
  const FusionResult f = fuse_given(1.25, diff, scalar_gv(0.0, 2.0, 3.0), 50,
                                    WeightRegime::SimpleRandom, 0.95);
  CHECK(f.tau_hat == 1.25);
  CHECK(f.v_hat == 3.0 / 50);
  CHECK(f.variance_reduction == 0.0);
}

TEST_CASE("two-component combination matches an explicit 2x2 solve") {
  GammaV gv;
  gv.gamma = VectorXd(2);
  gv.gamma << 0.5, -0.3;
  gv.v = MatrixXd(2, 2);
  gv.v << 2.0, 0.4, 0.4, 1.5;
  gv.v2 = 2.5;
  VectorXd diff(2);
  diff << 0.4, -0.2;
  const FusionResult f =
      fuse_given(1.0, diff, gv, 80, WeightRegime::SimpleRandom, 0.95);

  const double det = 2.0 * 1.5 - 0.4 * 0.4;
  const double c0 = (1.5 * 0.5 - 0.4 * -0.3) / det;
  const double c1 = (-0.4 * 0.5 + 2.0 * -0.3) / det;
  CHECK(f.tau_hat == doctest::Approx(1.0 - c0 * 0.4 - c1 * -0.2).epsilon(1e-14));
  const double q = c0 * 0.5 + c1 * -0.3;
  CHECK(f.v_hat == doctest::Approx((2.5 - q) / 80).epsilon(1e-14));
  CHECK(f.coefficient[0] == doctest::Approx(c0).epsilon(1e-13));
  CHECK(f.coefficient[1] == doctest::Approx(c1).epsilon(1e-13));
}

TEST_CASE("known-inclusion pieces stay on the variance scale") {
  const VectorXd diff = VectorXd::Constant(1, 0.4);
  const FusionResult f = fuse_given(1.0, diff, scalar_gv(0.5, 2.0, 2.0), 100,
                                    WeightRegime::KnownInclusion, 0.95);
  CHECK(f.tau_hat == doctest::Approx(0.9).epsilon(1e-14));
  // no final /n2: the raw-sum forms already carry the sample sizes
  CHECK(f.v_hat == doctest::Approx(2.0 - 0.125).epsilon(1e-14));
}

TEST_CASE("a second component never hurts and never helps negatively") {
  Rng rng(3301);
  for (int it = 0; it < 1000; ++it) {
    MatrixXd a(2, 2);
    for (int i = 0; i < 4; ++i) a(i / 2, i % 2) = rng.normal();
    GammaV two;
    two.v = a * a.transpose() + 1e-3 * MatrixXd::Identity(2, 2);
    two.gamma = VectorXd(2);
    two.gamma << rng.normal(), rng.normal();
    two.v2 = 5.0;
    GammaV one = scalar_gv(two.gamma[0], two.v(0, 0), 5.0);

    VectorXd d2(2);
    d2 << 0.1, 0.2;
    const FusionResult f2 =
        fuse_given(1.0, d2, two, 40, WeightRegime::SimpleRandom, 0.95);
    const FusionResult f1 = fuse_given(1.0, VectorXd::Constant(1, 0.1), one, 40,
                                       WeightRegime::SimpleRandom, 0.95);
    CHECK(f2.variance_reduction >= f1.variance_reduction - 1e-10);
    CHECK(f2.v_hat <= f1.v_hat + 1e-12);
    CHECK(f2.v_hat <= two.v2 / 40 + 1e-12);
    CHECK(f2.variance_reduction >= 0.0);
  }
}

TEST_CASE("closed-form pieces match direct sums on a small fixture") {
  const int n1 = 10, n2 = 4;
  const auto d = geometry(n1, n2, {1, 0, 1, 0});
  VectorXd psi(n2), phi2(n2), phi1(n1);
  psi << 0.6, -0.4, 0.9, -1.1;
  phi2 << 0.3, 0.2, -0.8, 0.3;
  phi1 << 0.5, -0.2, 0.4, -0.7, 0.1, 0.3, -0.5, 0.6, -0.4, -0.1;
  phi1 *= 2.0;  // keeps the correlation ratio below one further down
  const FusionInputs in = hand_inputs(d, psi, phi1, phi2);
  const GammaV gv = analytic_gamma_v(in);

  const double rho = double(n2) / n1;
  const double gamma = (1.0 - rho) / n2 * psi.dot(phi2);
  const double v = (1.0 - rho) / n1 * phi1.squaredNorm();
  const double v2 = psi.squaredNorm() / n2;
  CHECK(gv.gamma[0] == doctest::Approx(gamma).epsilon(1e-14));
  CHECK(gv.v(0, 0) == doctest::Approx(v).epsilon(1e-14));
  CHECK(gv.v2 == doctest::Approx(v2).epsilon(1e-14));

  // identical psi and phi2 make the correlation diagnostic a pure ratio
  FusionInputs same = in;
  same.ep_pairs[0].second.expansion = psi;
  const GammaV gs = analytic_gamma_v(same);
  const FusionResult f = fuse_given(1.0, VectorXd::Constant(1, 0.2), gs, n2,
                                    WeightRegime::SimpleRandom, 0.95);
  const double expect =
      std::min((1.0 - rho) * v2 / (phi1.squaredNorm() / n1), 1.0);
  CHECK(f.variance_reduction == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("orthogonal expansions give exactly zero covariance") {
  const auto d = geometry(8, 4, {1, 0, 1, 0});
  VectorXd psi(4), phi2(4), phi1(8);
  psi << 1, -1, 1, -1;
  phi2 << 1, 1, 1, 1;  // products cancel pairwise in the compensated sum
  phi1 << 0.5, -0.5, 0.25, -0.25, 0.125, -0.125, 1, -1;
  const GammaV gv = analytic_gamma_v(hand_inputs(d, psi, phi1, phi2));
  CHECK(gv.gamma[0] == 0.0);
  const FusionResult f = fuse_given(2.0, VectorXd::Constant(1, 0.3), gv, 4,
                                    WeightRegime::SimpleRandom, 0.95);
  CHECK(f.tau_hat == 2.0);
}

TEST_CASE("coincident samples carry no extra information") {
  const auto d = geometry(4, 4, {1, 0, 1, 0});
  VectorXd psi(4), phi(4);
  psi << 0.6, -0.4, 0.9, -1.1;
  phi << 0.3, 0.2, -0.8, 0.3;
  const GammaV gv = analytic_gamma_v(hand_inputs(d, psi, phi, phi));
  CHECK(gv.gamma[0] == 0.0);
  CHECK(gv.v(0, 0) == 0.0);
  FusionInputs in = hand_inputs(d, psi, phi, phi);
  VarianceSpec vs;
  const FusionResult f = fuse(in, vs);
  CHECK(f.tau_hat == in.tau2.point);
  CHECK(f.diagnostics.fallback);
  CHECK(f.v_hat == doctest::Approx(gv.v2 / 4).epsilon(1e-14));
}

TEST_CASE("singular covariance drops a component and flags the fallback") {
  GammaV gv;
  gv.gamma = VectorXd(2);
  gv.gamma << 0.5, 0.5;
  gv.v = MatrixXd(2, 2);
  gv.v << 1.0, 1.0, 1.0, 1.0;  // rank one: duplicated information
  gv.v2 = 2.0;
  VectorXd diff(2);
  diff << 0.4, 0.4;
  const FusionResult f =
      fuse_given(1.0, diff, gv, 100, WeightRegime::SimpleRandom, 0.95);
  CHECK(f.diagnostics.fallback);
  // the surviving component carries the whole adjustment
  const FusionResult single = fuse_given(1.0, VectorXd::Constant(1, 0.4),
                                         scalar_gv(0.5, 1.0, 2.0), 100,
                                         WeightRegime::SimpleRandom, 0.95);
  CHECK(f.tau_hat == doctest::Approx(single.tau_hat).epsilon(1e-12));
  CHECK(f.v_hat == doctest::Approx(single.v_hat).epsilon(1e-12));
}

TEST_CASE("analytic path refuses matching expansions") {
  const auto d = geometry(8, 4, {1, 0, 1, 0});
  VectorXd psi(4), phi2(4), phi1(8);
  psi.setConstant(0.1);
  phi2.setConstant(0.1);
  phi1.setConstant(0.1);
  FusionInputs in = hand_inputs(d, psi, phi1, phi2);
  in.ep_pairs[0].first.kind.method = Method::Matching;
  in.ep_pairs[0].second.kind.method = Method::Matching;
  CHECK_THROWS_AS(analytic_gamma_v(in), NumericError);
}

TEST_CASE("mismatched pair members are rejected") {
  const auto d = geometry(8, 4, {1, 0, 1, 0});
  VectorXd psi(4), phi2(4), phi1(8);
  psi.setConstant(0.1);
  phi2.setConstant(0.2);
  phi1.setConstant(0.3);
  FusionInputs in = hand_inputs(d, psi, phi1, phi2);
  in.ep_pairs[0].first.kind.method = Method::IPW;
  CHECK_THROWS_AS(analytic_gamma_v(in), DataError);
}

TEST_CASE("constant expansions bootstrap to zero variance") {
  // fixed per-stratum draw counts are what collapse the sums; the joint
  // scheme would leave them varying with the resampled validation count
  const auto d = geometry(10, 4, {1, 0, 1, 0});
  const VectorXd psi = VectorXd::Constant(4, 3.0);
  const VectorXd phi2 = VectorXd::Constant(4, -1.0);
  const VectorXd phi1 = VectorXd::Constant(10, 2.0);
  FusionInputs in = hand_inputs(d, psi, phi1, phi2);
  BootstrapSpec spec;
  spec.scheme = BootstrapScheme::StratifiedResample;
  spec.replicates = 16;
  spec.seed = 99;
  const GammaV gv = bootstrap_gamma_v(in, spec);
  CHECK(gv.v2 == 0.0);
  CHECK(gv.gamma[0] == 0.0);
  CHECK(gv.v(0, 0) == 0.0);
}

TEST_CASE("resampling replicates are deterministic in the seed") {
  const auto d = geometry(12, 4, {1, 0, 1, 0});
  Rng rng(3302);
  VectorXd psi(4), phi2(4), phi1(12);
  for (int i = 0; i < 4; ++i) psi[i] = rng.normal();
  for (int i = 0; i < 4; ++i) phi2[i] = rng.normal();
  for (int i = 0; i < 12; ++i) phi1[i] = rng.normal();
  FusionInputs in = hand_inputs(d, psi, phi1, phi2);
  BootstrapSpec spec;
  spec.replicates = 64;
  spec.seed = 424242;
  const GammaV a = bootstrap_gamma_v(in, spec);
  const GammaV b = bootstrap_gamma_v(in, spec);
  CHECK(a.v2 == b.v2);
  CHECK(a.gamma[0] == b.gamma[0]);
  CHECK(a.v(0, 0) == b.v(0, 0));
  spec.threads = 4;
  const GammaV c = bootstrap_gamma_v(in, spec);
  CHECK(a.v2 == c.v2);
  CHECK(a.gamma[0] == c.gamma[0]);
  CHECK(a.v(0, 0) == c.v(0, 0));
  spec.seed = 424243;
  const GammaV e = bootstrap_gamma_v(in, spec);
  CHECK(a.v2 != e.v2);
}

TEST_CASE("stratified resampling preserves the validation count") {
  // one treated validation unit: joint resampling redraws often, the
  // stratified scheme never does
  FusedDataset d = geometry(12, 2, {1, 0});
  VectorXd psi(2), phi2(2), phi1(12);
  psi << 1.0, -0.5;
  phi2 << 0.4, 0.2;
  phi1 = VectorXd::LinSpaced(12, -1.0, 1.0);
  FusionInputs in = hand_inputs(d, psi, phi1, phi2);
  BootstrapSpec spec;
  spec.replicates = 200;
  spec.seed = 7;
  spec.scheme = BootstrapScheme::JointResample;
  CHECK_THROWS_WITH_AS(
      bootstrap_gamma_v(in, spec),
      "more than half the joint-resampling replicates hit an empty validation "
      "arm; use the stratified resampling scheme",
      NumericError);
  spec.scheme = BootstrapScheme::StratifiedResample;
  const GammaV gv = bootstrap_gamma_v(in, spec);
  CHECK(gv.bootstrap_redraws == 0);
  CHECK(std::isfinite(gv.v2));
}

TEST_CASE("scheme and regime combinations are guarded") {
  const auto d = geometry(10, 4, {1, 0, 1, 0});
  VectorXd psi(4), phi2(4), phi1(10);
  psi.setConstant(0.1);
  phi2.setConstant(0.2);
  phi1.setConstant(0.3);
  FusionInputs in = hand_inputs(d, psi, phi1, phi2);
  BootstrapSpec spec;
  spec.replicates = 8;
  spec.seed = 5;
  spec.scheme = BootstrapScheme::WeightedExpansion;
  CHECK_THROWS_AS(bootstrap_gamma_v(in, spec), DataError);
  spec.scheme = BootstrapScheme::JointResample;
  spec.ignore_main_uncertainty = true;
  CHECK_NOTHROW(bootstrap_gamma_v(in, spec));
  CHECK_THROWS_AS(bootstrap_gamma_v(FusionInputs{}, spec), DataError);
}

TEST_CASE("stacked pairings with duplicated information reduce to one") {
  const auto d = geometry(10, 4, {1, 0, 1, 0});
  VectorXd psi(4), phi2(4), phi1(10);
  psi << 0.6, -0.4, 0.9, -1.1;
  phi2 << 0.3, 0.2, -0.8, 0.3;
  phi1 << 0.5, -0.2, 0.4, -0.7, 0.1, 0.3, -0.5, 0.6, -0.4, -0.1;
  FusionInputs in = hand_inputs(d, psi, phi1, phi2);
  VarianceSpec vs;
  const FusionResult one = fuse(in, vs);

  const FusionResult via_multi = fuse_multi(in.tau2, in.ep_pairs, d, vs);
  CHECK(via_multi.tau_hat == one.tau_hat);
  CHECK(via_multi.v_hat == one.v_hat);

  std::vector<EpPair> twice = in.ep_pairs;
  twice.push_back(in.ep_pairs[0]);
  const FusionResult dup = fuse_multi(in.tau2, twice, d, vs);
  CHECK(dup.diagnostics.fallback);
  CHECK(dup.tau_hat == doctest::Approx(one.tau_hat).epsilon(1e-12));
  CHECK(dup.v_hat == doctest::Approx(one.v_hat).epsilon(1e-12));
}

TEST_CASE("log ratio transforms agree with finite differences") {
  const int n1 = 10, n2 = 6;
  FusedDataset d = geometry(n1, n2, {1, 0, 1, 0, 1, 0});
  Rng rng(3303);
  auto with_arms = [&](WhichData where, double m1, double m0, int n) {
    EstimateWithExpansion e =
        hand_estimate(where, m1 - m0, VectorXd::Zero(n));
    e.arm_mean[0] = m0;
    e.arm_mean[1] = m1;
    for (int arm = 0; arm < 2; ++arm) {
      e.arm_expansion[arm] = VectorXd(n);
      for (int i = 0; i < n; ++i) e.arm_expansion[arm][i] = 0.1 * rng.normal();
      e.arm_expansion[arm].array() -= e.arm_expansion[arm].mean();
    }
    e.expansion = e.arm_expansion[1] - e.arm_expansion[0];
    return e;
  };
  FusionInputs in;
  in.tau2 = with_arms(WhichData::Validation, 0.4, 0.2, n2);
  in.ep_pairs.push_back({with_arms(WhichData::Main, 0.35, 0.25, n1),
                         with_arms(WhichData::Validation, 0.45, 0.15, n2)});
  in.data = &d;
  VarianceSpec vs;

  const FusionResult crr = fuse_ratio_estimand(in, RatioEstimand::LogCRR, vs);
  CHECK(crr.tau2 == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  const FusionResult cor = fuse_ratio_estimand(in, RatioEstimand::LogCOR, vs);
  const double logit04 = std::log(0.4 / 0.6), logit02 = std::log(0.2 / 0.8);
  CHECK(cor.tau2 == doctest::Approx(logit04 - logit02).epsilon(1e-14));

  // v2 after the transform equals the finite-difference propagation of the
  // per-unit arm expansions through the log contrast
  const double h = 1e-6;
  auto crr_of = [](double m1, double m0) { return std::log(m1 / m0); };
  const double g1 = (crr_of(0.4 + h, 0.2) - crr_of(0.4 - h, 0.2)) / (2 * h);
  const double g0 = (crr_of(0.4, 0.2 + h) - crr_of(0.4, 0.2 - h)) / (2 * h);
  const VectorXd psi_log = g1 * in.tau2.arm_expansion[1] +
                           g0 * in.tau2.arm_expansion[0];
  CHECK(crr.v2 == doctest::Approx(psi_log.squaredNorm() / n2).epsilon(1e-5));

  // equal arm means sit at zero on both scales
  FusionInputs null_in = in;
  null_in.tau2.arm_mean[0] = null_in.tau2.arm_mean[1] = 0.3;
  CHECK(fuse_ratio_estimand(null_in, RatioEstimand::LogCRR, vs).tau2 ==
        doctest::Approx(0.0).epsilon(1e-14));
  CHECK(fuse_ratio_estimand(null_in, RatioEstimand::LogCOR, vs).tau2 ==
        doctest::Approx(0.0).epsilon(1e-14));

  FusionInputs bad = in;
  bad.tau2.arm_mean[0] = 0.0;
  CHECK_THROWS_AS(fuse_ratio_estimand(bad, RatioEstimand::LogCRR, vs), DataError);
  bad.tau2.arm_mean[0] = 1.0;
  CHECK_THROWS_AS(fuse_ratio_estimand(bad, RatioEstimand::LogCOR, vs), DataError);
}

TEST_CASE("sensitivity curve is affine with the fusion coefficient as slope") {
  const auto d = geometry(10, 4, {1, 0, 1, 0});
  VectorXd psi(4), phi2(4), phi1(10);
  psi << 0.6, -0.4, 0.9, -1.1;
  phi2 << 0.3, 0.2, -0.8, 0.3;
  phi1 << 0.5, -0.2, 0.4, -0.7, 0.1, 0.3, -0.5, 0.6, -0.4, -0.1;
  FusionInputs in = hand_inputs(d, psi, phi1, phi2);
  VarianceSpec vs;
  const FusionResult f = fuse(in, vs);

  std::vector<VectorXd> grid;
  for (const double v : {0.0, 0.1, 0.25}) grid.push_back(VectorXd::Constant(1, v));
  grid.push_back(f.ep_diff);
  const auto curve = sensitivity_curve(in, grid, vs);
  REQUIRE(curve.size() == 4);
  CHECK(curve[0].tau_adj == f.tau_hat);
  CHECK(curve[3].tau_adj == doctest::Approx(in.tau2.point).epsilon(1e-14));
  const double s1 = (curve[1].tau_adj - curve[0].tau_adj) / 0.1;
  const double s2 = (curve[2].tau_adj - curve[1].tau_adj) / 0.15;
  CHECK(s1 == doctest::Approx(f.coefficient[0]).epsilon(1e-10));
  CHECK(s2 == doctest::Approx(f.coefficient[0]).epsilon(1e-10));
  // the interval width never depends on the shift
  CHECK(curve[2].ci_hi - curve[2].ci_lo ==
        doctest::Approx(f.ci_hi - f.ci_lo).epsilon(1e-12));

  std::vector<VectorXd> bad{VectorXd::Zero(2)};
  CHECK_THROWS_AS(sensitivity_curve(in, bad, vs), DataError);
}

TEST_CASE("quantile function matches reference values") {
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(normal_quantile(0.025) ==
        doctest::Approx(-1.959963984540054).epsilon(1e-12));
  CHECK(normal_quantile(0.995) == doctest::Approx(2.5758293035489004).epsilon(1e-11));
  CHECK_THROWS_AS(normal_quantile(0.0), DataError);
}
