#pragma once

#include <string>
#include <vector>

#include "dbce/common.hpp"

namespace dbce {

// Immutable-by-convention observational table: covariates x (n rows, K
// columns), binary treatment d, outcome y. Construct through make() so the
// row-count, finiteness and two-group invariants hold everywhere downstream.
struct Dataset {
  MatrixXd x;
  VectorXi d;
  VectorXd y;

  int n() const { return static_cast<int>(y.size()); }
  int k() const { return static_cast<int>(x.cols()); }
  int n_treated() const;
  int n_control() const { return n() - n_treated(); }

  static Dataset make(MatrixXd x, VectorXi d, VectorXd y);

  Dataset subset(const std::vector<int>& rows) const;
};

// CSV schema: header `y,d,x1,...,xK`, UTF-8, `.` decimal, one unit per row.
// Rejects missing values, non-numeric cells, d outside {0,1}, and
// single-group data.
Dataset load_csv(const std::string& path);
void write_csv(const Dataset& data, const std::string& path);

}  // namespace dbce
