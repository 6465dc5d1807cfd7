#pragma once

#include <functional>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "dbce/dataset.hpp"
#include "dbce/dgp.hpp"
#include "dbce/fit.hpp"

namespace dbce {

enum class Estimand { Ate, Att };
enum class Method { Dm, Ipw, Aipw };

Method method_by_name(const std::string& name);
std::string method_name(Method m);

struct BalanceReport {
  double treated_weight_mean = 0.0;  // (1/n) sum 1[D=1] r(1,X)
  double control_weight_mean = 0.0;  // (1/n) sum 1[D=0] r(0,X)
  std::optional<double> oracle_l2;   // weighted L2 error, synthetic runs only
};

struct EstimateReport {
  Estimand estimand = Estimand::Ate;
  Method method = Method::Ipw;
  double tau_hat = 0.0;
  double variance_hat = 0.0;  // per-observation influence-function variance
  std::pair<double, double> ci95{0.0, 0.0};
  int n = 0;
  std::optional<BalanceReport> diagnostics;

  nlohmann::json to_json() const;
};

using MuFn = std::function<double(int d, const VectorXd& x)>;
using WeightFn = std::function<double(const VectorXd& x)>;

// Direct method: mean of mu(1,X_i) - mu(0,X_i).
EstimateReport estimate_dm(const Dataset& data, const MuFn& mu);
EstimateReport estimate_dm(const Dataset& data, const NuisanceTable& nuisances);

// IPW with a fitted (or oracle) correction: mean of h(D_i,X_i) Y_i.
EstimateReport estimate_ipw(const Dataset& data, const FittedCorrection& corr);
EstimateReport estimate_ipw_values(const Dataset& data, const VectorXd& h_at_obs);

// AIPW / doubly robust estimator over a per-row nuisance table.
EstimateReport estimate_aipw(const Dataset& data, const NuisanceTable& nuisances);

// Fitted treated-vs-control odds weight w(x) ~ e0/(1-e0), parameterized as
// w(x) = exp(f(x)).
struct AttWeights {
  ScoreModel model;
  double lambda = 0.0;
  bool converged = false;
  double w(const VectorXd& x) const { return std::exp(model.eval_f(x)); }
  VectorXd w_batch(const MatrixXd& x) const;

  nlohmann::json to_json() const;
  static AttWeights from_json(const nlohmann::json& j);
};

AttWeights fit_att_weights(const Dataset& data, const FamilySpec& family, double lambda,
                           int max_iters = 10000, double tol = 1e-8, uint64_t seed = 0);

// ATT estimators with pi estimated by n1/n. IPW ignores mu0_hat; AIPW
// requires it.
EstimateReport estimate_att(const Dataset& data, const WeightFn& w, const MuFn& mu0_hat,
                            Method method);

// Weight-mean balance diagnostics; with truth, the empirical weighted L2
// error (1/n) sum_i [ e0 (r1-r01)^2 + (1-e0) (r0-r00)^2 ].
BalanceReport diagnostics(const Dataset& data, const FittedCorrection& corr,
                          const SyntheticTruth* truth = nullptr);

}  // namespace dbce
