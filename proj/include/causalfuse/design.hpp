#pragma once

#include <string>

namespace causalfuse {

struct AllocationProblem {
  double c1 = 1.0;       // per-unit cost of collecting (A, X, Y)
  double c2 = 1.0;       // per-unit cost of collecting U
  double budget = 0.0;
  double r_squared = 0.0;  // squared multiple correlation of psi on phi
};

struct Allocation {
  // Cost-optimal validation fraction n2/n1 from the continuous problem,
  // capped at 1 (the validation subset cannot outgrow the main sample).
  double rho_star = 0.0;
  long long n1 = 0;
  long long n2 = 0;
  bool clamped = false;
  std::string warning;
};

// Minimizes the fused-estimator variance profile (1 - R^2)/n2 + R^2/n1 over
// the budget line n1*c1 + n2*c2 <= budget, with integer sizes, n2 >= 2 and
// n2 <= n1. Stationarity gives n2/n1 = {(1 - R^2)/R^2 * c1/c2}^{1/2}; the
// integer optimum is found by scanning the exhausted-budget frontier n1(n2).
Allocation optimal_allocation(const AllocationProblem& p);

}  // namespace causalfuse
