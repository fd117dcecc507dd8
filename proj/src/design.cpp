#include "causalfuse/design.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "causalfuse/dataset.hpp"

namespace causalfuse {

Allocation optimal_allocation(const AllocationProblem& p) {
  if (!(p.c1 > 0.0) || !(p.c2 > 0.0)) throw DataError("unit costs must be positive");
  if (!(p.budget > 0.0)) throw DataError("budget must be positive");
  if (!(p.r_squared >= 0.0 && p.r_squared <= 1.0))
    throw DataError("squared correlation must lie in [0, 1]");
  Allocation a;
  const double r2 = p.r_squared;
  // The ratio diverges as r2 -> 0 (error-prone data useless, put everything
  // into validation) and vanishes at r2 = 1 (validation adds nothing).
  double rho = r2 <= 0.0 ? std::numeric_limits<double>::infinity()
                         : std::sqrt((1.0 - r2) / r2 * (p.c1 / p.c2));
  if (rho > 1.0) {
    rho = 1.0;
    a.clamped = true;
    a.warning = "cost-optimal validation fraction exceeds 1; capped at the main size";
  }
  if (r2 >= 1.0) {
    a.clamped = true;
    a.warning =
        "error-prone estimators explain the initial estimator completely; "
        "validation data add no information, minimum validation size used";
  }
  a.rho_star = rho;
  // A validation unit is also a main unit, so each of the n2 units costs
  // c1 + c2 and the largest feasible subset size bounds the search.
  const long long pair_max =
      static_cast<long long>(std::floor(p.budget / (p.c1 + p.c2)));
  if (pair_max < 2)
    throw DataError("budget too small for a validation subset of two units");
  if (r2 <= 0.0) {
    // only the validation term is left; extra main-only units buy nothing
    a.n1 = a.n2 = pair_max;
    return a;
  }
  if (r2 >= 1.0) {
    a.n2 = 2;
    a.n1 = static_cast<long long>(std::floor((p.budget - 2.0 * p.c2) / p.c1));
    return a;
  }
  // Integer optimum sits on the exhausted-budget frontier n1(n2); the
  // frontier objective is convex in n2 up to floor jitter, so an exhaustive
  // scan (windowed around the stationary point for enormous budgets) finds it.
  long long lo = 2, hi = pair_max;
  constexpr long long kScanMax = 2000000;
  if (hi - lo > kScanMax) {
    const double n1_star = p.budget / (p.c1 + rho * p.c2);
    const long long center = std::llround(
        std::min(std::max(rho * n1_star, static_cast<double>(lo)),
                 static_cast<double>(hi)));
    lo = std::max(lo, center - kScanMax / 2);
    hi = std::min(hi, center + kScanMax / 2);
  }
  long long best_n1 = 0, best_n2 = 0;
  double best = std::numeric_limits<double>::infinity();
  for (long long n2 = lo; n2 <= hi; ++n2) {
    const long long n1 = static_cast<long long>(
        std::floor((p.budget - static_cast<double>(n2) * p.c2) / p.c1));
    const double value = (1.0 - r2) / static_cast<double>(n2) +
                         r2 / static_cast<double>(n1);
    if (value < best) {
      best = value;
      best_n1 = n1;
      best_n2 = n2;
    }
  }
  a.n1 = best_n1;
  a.n2 = best_n2;
  return a;
}

}  // namespace causalfuse
