#include "doctest.h"

#include <cmath>

#include "causalfuse/dataset.hpp"
#include "causalfuse/design.hpp"
#include "causalfuse/rng.hpp"

using namespace causalfuse;

namespace {

double objective(double r2, long long n1, long long n2) {
  return (1.0 - r2) / static_cast<double>(n2) + r2 / static_cast<double>(n1);
}

struct BruteResult {
  long long n1 = 0, n2 = 0;
  double value = 1e300;
};

BruteResult brute_force(const AllocationProblem& p) {
  BruteResult best;
  const long long n1_max =
      static_cast<long long>(std::floor((p.budget - 2.0 * p.c2) / p.c1));
  for (long long n1 = 2; n1 <= n1_max; ++n1) {
    const long long cap = static_cast<long long>(
        std::floor((p.budget - static_cast<double>(n1) * p.c1) / p.c2));
    const long long n2_max = std::min(n1, cap);
    for (long long n2 = 2; n2 <= n2_max; ++n2) {
      const double v = objective(p.r_squared, n1, n2);
      if (v < best.value) best = {n1, n2, v};
    }
  }
  return best;
}

}  // namespace

TEST_CASE("moderate correlation splits the budget at the stationary ratio") {
  const Allocation a = optimal_allocation({1.0, 1.0, 1000.0, 0.75});
  CHECK(a.rho_star == doctest::Approx(std::sqrt(1.0 / 3.0)).epsilon(1e-14));
  CHECK(a.n1 == 634);
  CHECK(a.n2 == 366);
  CHECK_FALSE(a.clamped);
  CHECK(a.n1 * 1.0 + a.n2 * 1.0 <= 1000.0);

  const BruteResult b = brute_force({1.0, 1.0, 1000.0, 0.75});
  CHECK(std::llabs(a.n1 - b.n1) <= 1);
  CHECK(std::llabs(a.n2 - b.n2) <= 1);
  CHECK(objective(0.75, a.n1, a.n2) == doctest::Approx(b.value).epsilon(1e-12));
}

TEST_CASE("useless error-prone data push everything into validation") {
  const Allocation a = optimal_allocation({1.0, 4.0, 100.0, 0.0});
  CHECK(a.rho_star == 1.0);
  CHECK(a.clamped);
  CHECK_FALSE(a.warning.empty());
  CHECK(a.n1 == a.n2);
  // the capped ratio beats the unclamped stationary point: compare with the
  // allocation a naive ratio of one half would produce on the same budget
  const double capped = objective(0.0, a.n1, a.n2);
  const long long naive_n1 = static_cast<long long>(std::floor(100.0 / 3.0));
  const long long naive_n2 = naive_n1 / 2;
  CHECK(capped < objective(0.0, naive_n1, naive_n2));
  const BruteResult b = brute_force({1.0, 4.0, 100.0, 0.0});
  CHECK(capped == doctest::Approx(b.value).epsilon(1e-12));
}

TEST_CASE("perfect correlation keeps the validation subset minimal") {
  const Allocation a = optimal_allocation({1.0, 1.0, 100.0, 1.0});
  CHECK(a.clamped);
  CHECK(a.n2 == 2);
  CHECK(a.n1 == 98);
  CHECK(a.warning.find("no information") != std::string::npos);
}

TEST_CASE("infeasible budgets are refused") {
  CHECK_THROWS_AS(optimal_allocation({1.0, 10.0, 5.0, 0.5}), DataError);
  CHECK_THROWS_AS(optimal_allocation({0.0, 1.0, 100.0, 0.5}), DataError);
  CHECK_THROWS_AS(optimal_allocation({1.0, 1.0, 0.0, 0.5}), DataError);
  CHECK_THROWS_AS(optimal_allocation({1.0, 1.0, 100.0, 1.5}), DataError);
}

TEST_CASE("allocations stay feasible and ordered") {
  Rng rng(4401);
  for (int it = 0; it < 200; ++it) {
    AllocationProblem p;
    p.c1 = rng.uniform(0.5, 3.0);
    p.c2 = rng.uniform(0.5, 3.0);
    p.budget = rng.uniform(50.0, 500.0);
    p.r_squared = rng.uniform(0.0, 1.0);
    Allocation a;
    try {
      a = optimal_allocation(p);
    } catch (const DataError&) {
      continue;  // tiny budgets may not admit two validation units
    }
    CHECK(static_cast<double>(a.n1) * p.c1 + static_cast<double>(a.n2) * p.c2 <=
          p.budget + 1e-9);
    CHECK(a.n2 >= 2);
    CHECK(a.n2 <= a.n1);
    CHECK(a.rho_star > 0.0);
    CHECK(a.rho_star <= 1.0);
  }
}

TEST_CASE("the stationary ratio falls with correlation and validation cost") {
  double prev = 2.0;
  for (const double r2 : {0.6, 0.7, 0.8, 0.9}) {
    const Allocation a = optimal_allocation({1.0, 1.0, 500.0, r2});
    CHECK(a.rho_star < prev);
    prev = a.rho_star;
  }
  prev = 2.0;
  for (const double c2 : {0.5, 1.0, 2.0, 4.0}) {
    const Allocation a = optimal_allocation({1.0, c2, 500.0, 0.6});
    CHECK(a.rho_star < prev);
    prev = a.rho_star;
  }
}

TEST_CASE("returned allocations sit at the grid optimum on small problems") {
  Rng rng(4402);
  for (int it = 0; it < 25; ++it) {
    AllocationProblem p;
    p.c1 = rng.uniform(0.5, 2.0);
    p.c2 = rng.uniform(0.5, 2.0);
    p.budget = rng.uniform(40.0, 200.0);
    p.r_squared = rng.uniform(0.05, 0.95);
    Allocation a;
    try {
      a = optimal_allocation(p);
    } catch (const DataError&) {
      continue;
    }
    const BruteResult b = brute_force(p);
    CHECK(std::llabs(a.n1 - b.n1) <= 1);
    CHECK(std::llabs(a.n2 - b.n2) <= 1);
  }
}
