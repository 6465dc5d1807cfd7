#include "dbce/bregman.hpp"

#include <cmath>
#include <stdexcept>

namespace dbce {

namespace {

double ls_g(double r) { return r * r; }
double ls_dg(double r) { return 2.0 * r; }
double ls_d2g(double) { return 2.0; }

double ukl_g(double r) { return r * std::log(r) - r; }
double ukl_dg(double r) { return std::log(r); }
double ukl_d2g(double r) { return 1.0 / r; }

double eb_g(double r) { return (r - 1.0) * std::log(r - 1.0) - r; }
double eb_dg(double r) { return std::log(r - 1.0); }
double eb_d2g(double r) { return 1.0 / (r - 1.0); }

const BregmanGenerator kLeastSquares{"ls", ls_g, ls_dg, ls_d2g, 1.0};
const BregmanGenerator kUnnormalizedKl{"ukl", ukl_g, ukl_dg, ukl_d2g, 1.0};
const BregmanGenerator kEmpiricalBalancing{"eb", eb_g, eb_dg, eb_d2g, 1.0};

void check_domain(const BregmanGenerator& gen, double r, Eigen::Index row, int arm) {
  if (!(r > gen.domain_min + kDomainEps)) {
    throw std::domain_error("generator '" + gen.name + "': r(" + std::to_string(arm) +
                            ", x) = " + std::to_string(r) +
                            " at or below domain minimum at row " + std::to_string(row));
  }
}

// Per-sample loss for one arm: 1[match](-g(r) + g'(r) r) - g'(r).
inline double arm_loss(const BregmanGenerator& gen, bool match, double r) {
  const double dgr = gen.dg(r);
  double v = -dgr;
  if (match) v += -gen.g(r) + dgr * r;
  return v;
}

}  // namespace

const BregmanGenerator& least_squares() { return kLeastSquares; }
const BregmanGenerator& unnormalized_kl() { return kUnnormalizedKl; }
const BregmanGenerator& empirical_balancing() { return kEmpiricalBalancing; }

const BregmanGenerator& generator_by_name(std::string_view name) {
  if (name == "ls") return kLeastSquares;
  if (name == "ukl") return kUnnormalizedKl;
  if (name == "eb") return kEmpiricalBalancing;
  throw std::invalid_argument("unknown Bregman generator '" + std::string(name) +
                              "' (expected ls, ukl or eb)");
}

RiskValue empirical_risk_values(const BregmanGenerator& gen, const VectorXi& d,
                                const VectorXd& r1, const VectorXd& r0,
                                double penalty) {
  const Eigen::Index n = d.size();
  if (r1.size() != n || r0.size() != n) {
    throw std::invalid_argument("empirical_risk: value vectors must have length n");
  }
  RiskValue out;
  out.per_sample.resize(n);
  StableSum acc;
  for (Eigen::Index i = 0; i < n; ++i) {
    check_domain(gen, r1[i], i, 1);
    check_domain(gen, r0[i], i, 0);
    const double li =
        arm_loss(gen, d[i] == 1, r1[i]) + arm_loss(gen, d[i] == 0, r0[i]);
    out.per_sample[i] = li;
    acc.add(li);
  }
  out.penalty = penalty;
  out.value = acc.value() / static_cast<double>(n) + penalty;
  return out;
}

RiskValue empirical_risk(const BregmanGenerator& gen, const Dataset& data,
                         const CorrectionFn& r, double penalty) {
  const int n = data.n();
  VectorXd r1(n), r0(n);
  for (int i = 0; i < n; ++i) {
    const VectorXd xi = data.x.row(i).transpose();
    r1[i] = r(1, xi);
    r0[i] = r(0, xi);
  }
  return empirical_risk_values(gen, data.d, r1, r0, penalty);
}

double risk_value_gradient(const BregmanGenerator& gen, bool indicator, double r_val) {
  check_domain(gen, r_val, -1, indicator ? 1 : 0);
  return gen.d2g(r_val) * ((indicator ? r_val : 0.0) - 1.0);
}

double oracle_divergence(const BregmanGenerator& gen, const SyntheticTruth& truth,
                         const Dataset& data, const CorrectionFn& r) {
  const int n = data.n();
  StableSum acc;
  for (int i = 0; i < n; ++i) {
    const VectorXd xi = data.x.row(i).transpose();
    const double e = truth.e0(xi);
    for (int d = 0; d <= 1; ++d) {
      const double rv = r(d, xi);
      check_domain(gen, rv, i, d);
      const double r0v = truth.r0(d, xi);
      check_domain(gen, r0v, i, d);
      const double w = d == 1 ? e : 1.0 - e;
      acc.add(w * (gen.g(r0v) - gen.g(rv) - gen.dg(rv) * (r0v - rv)));
    }
  }
  return acc.value() / static_cast<double>(n);
}

double conditional_risk(const BregmanGenerator& gen, const SyntheticTruth& truth,
                        const Dataset& data, const CorrectionFn& r) {
  const int n = data.n();
  StableSum acc;
  for (int i = 0; i < n; ++i) {
    const VectorXd xi = data.x.row(i).transpose();
    const double e = truth.e0(xi);
    for (int d = 0; d <= 1; ++d) {
      const double rv = r(d, xi);
      check_domain(gen, rv, i, d);
      const double w = d == 1 ? e : 1.0 - e;
      const double dgr = gen.dg(rv);
      acc.add(w * (-gen.g(rv) + dgr * rv) - dgr);
    }
  }
  return acc.value() / static_cast<double>(n);
}

}  // namespace dbce
