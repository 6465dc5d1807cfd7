#pragma once

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <string>

namespace dbce {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Eigen::VectorXi;

// Neumaier-compensated accumulator. Risk differences near an optimum are
// tiny relative to the per-sample terms, so plain summation loses them
// for large n.
class StableSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

inline double stable_sum(const VectorXd& v) {
  StableSum s;
  for (Eigen::Index i = 0; i < v.size(); ++i) s.add(v[i]);
  return s.value();
}

inline double stable_mean(const VectorXd& v) {
  if (v.size() == 0) return 0.0;
  return stable_sum(v) / static_cast<double>(v.size());
}

inline double sigmoid(double t) {
  if (t >= 0.0) {
    return 1.0 / (1.0 + std::exp(-t));
  }
  const double e = std::exp(t);
  return e / (1.0 + e);
}

}  // namespace dbce
