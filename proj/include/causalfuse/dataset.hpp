#pragma once

#include <Eigen/Dense>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace causalfuse {

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class SamplingDesign { SimpleRandom, KnownInclusion };

// Column-name mapping for load_csv. Defaults follow the canonical layout
// id,a,y,x1..xp,u1..uq,validation[,pi]; x/u lists may name arbitrary columns.
struct DatasetSchema {
  std::string id = "id";
  std::string treatment = "a";
  std::string outcome = "y";
  std::vector<std::string> x;  // empty: infer columns named x1..xp from header
  std::vector<std::string> u;  // empty: infer columns named u1..uq from header
  std::string validation = "validation";
  std::string pi = "pi";  // optional column; presence selects KnownInclusion
};

// Main sample S1 with its validation subset S2 (rows flagged in_validation).
// Column storage; u rows are defined only where in_validation is set.
// Immutable after load; shared read-only across workers.
struct FusedDataset {
  std::vector<std::string> ids;
  Eigen::VectorXd a;      // treatment, {0,1}
  Eigen::VectorXd y;      // outcome
  Eigen::MatrixXd x;      // n1 x p
  Eigen::MatrixXd u;      // n1 x q, NaN outside the validation subset
  std::vector<char> in_validation;
  Eigen::VectorXd pi;     // size n1 when design = KnownInclusion, else size 0
  SamplingDesign design = SamplingDesign::SimpleRandom;
  std::vector<std::string> load_warnings;

  int n1() const { return static_cast<int>(a.size()); }
  int n2() const {
    int c = 0;
    for (char f : in_validation) c += (f != 0);
    return c;
  }
  int p() const { return static_cast<int>(x.cols()); }
  int q() const { return static_cast<int>(u.cols()); }

  std::vector<int> validation_rows() const {
    std::vector<int> r;
    for (int i = 0; i < n1(); ++i)
      if (in_validation[i]) r.push_back(i);
    return r;
  }

  void validate() const;  // throws DataError on any invariant violation
};

// Read-only window over a subset of rows. U access is compiled against
// expose_u so the main view cannot reach the supplementary covariates.
// weights carry the estimating weights (1, or pi^{-1} in the known-pi regime).
struct DataView {
  const FusedDataset* data = nullptr;
  std::vector<int> rows;
  bool expose_u = false;
  Eigen::VectorXd weights;

  int size() const { return static_cast<int>(rows.size()); }
  double a(int i) const { return data->a[rows[i]]; }
  double y(int i) const { return data->y[rows[i]]; }
  Eigen::RowVectorXd x(int i) const { return data->x.row(rows[i]); }
  Eigen::RowVectorXd u(int i) const {
    if (!expose_u) throw DataError("U is not accessible through this view");
    return data->u.row(rows[i]);
  }
  double pi(int i) const { return data->pi[rows[i]]; }
  int p() const { return data->p(); }
  int q() const { return data->q(); }
};

DataView validation_view(const FusedDataset& d);
DataView main_view(const FusedDataset& d);

FusedDataset load_csv(const std::string& path, const DatasetSchema& schema = {});
void save_csv(const FusedDataset& d, const std::string& path,
              const DatasetSchema& schema = {});

}  // namespace causalfuse
