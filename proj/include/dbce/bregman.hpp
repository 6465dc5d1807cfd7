#pragma once

#include <functional>
#include <string>
#include <string_view>

#include "dbce/common.hpp"
#include "dbce/dataset.hpp"
#include "dbce/dgp.hpp"

namespace dbce {

// Strictly convex generator g on (1, inf) with analytic first and second
// derivatives. Each generator induces one estimation loss for the
// bias-correction term.
struct BregmanGenerator {
  std::string name;
  double (*g)(double);
  double (*dg)(double);
  double (*d2g)(double);
  double domain_min = 1.0;
};

// g(r) = r^2: squared-error loss (least-squares importance fitting).
const BregmanGenerator& least_squares();
// g(r) = r log r - r: unnormalized KL.
const BregmanGenerator& unnormalized_kl();
// g(r) = (r-1) log(r-1) - r: empirical balancing loss.
const BregmanGenerator& empirical_balancing();

// Lookup by name "ls" | "ukl" | "eb"; throws std::invalid_argument otherwise.
const BregmanGenerator& generator_by_name(std::string_view name);

// Generators are evaluated only for r > domain_min + kDomainEps; the
// propensity parameterization keeps r above 1, the guard catches underflow.
inline constexpr double kDomainEps = 1e-9;

struct RiskValue {
  double value = 0.0;       // mean per-sample loss + penalty
  VectorXd per_sample;      // loss contribution of each row
  double penalty = 0.0;
};

// Evaluable correction model r(d, x), d in {0,1}, values in (1, inf).
using CorrectionFn = std::function<double(int d, const VectorXd& x)>;

// Empirical Bregman risk
//   sum_{d in {1,0}} (1/n) sum_i ( 1[D_i=d](-g(r(d,X_i)) + g'(r(d,X_i)) r(d,X_i))
//                                  - g'(r(d,X_i)) ).
// Throws std::domain_error naming the offending row if any r is at or below
// the domain guard.
RiskValue empirical_risk(const BregmanGenerator& gen, const Dataset& data,
                         const CorrectionFn& r, double penalty = 0.0);

// Same risk on precomputed value vectors r1[i] = r(1, X_i), r0[i] = r(0, X_i).
RiskValue empirical_risk_values(const BregmanGenerator& gen, const VectorXi& d,
                                const VectorXd& r1, const VectorXd& r0,
                                double penalty = 0.0);

// Derivative of the per-sample loss in the value r: g''(r) (1[match] r - 1),
// where `indicator` says whether the sample's treatment matches the arm
// being differentiated.
double risk_value_gradient(const BregmanGenerator& gen, bool indicator, double r_val);

// Average Bregman divergence from the true correction, in its
// conditional-expectation form (synthetic runs only):
//   sum_d (1/n) sum_i e0(d|X_i) [ g(r0) - g(r) - g'(r)(r0 - r) ].
double oracle_divergence(const BregmanGenerator& gen, const SyntheticTruth& truth,
                         const Dataset& data, const CorrectionFn& r);

// Empirical risk with the treatment indicator replaced by its conditional
// expectation e0(d|X_i). Differs from oracle_divergence by a constant that
// does not depend on r.
double conditional_risk(const BregmanGenerator& gen, const SyntheticTruth& truth,
                        const Dataset& data, const CorrectionFn& r);

}  // namespace dbce
