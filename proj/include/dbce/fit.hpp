#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "dbce/bregman.hpp"
#include "dbce/dataset.hpp"
#include "dbce/model.hpp"

namespace dbce {

enum class StepRule { Backtracking, FixedStep };

struct FitConfig {
  std::string generator = "ls";  // ls | ukl | eb, or "logistic" for the MLE baseline
  FamilySpec family{};
  double lambda = 1e-4;
  bool lambda_auto = false;  // kernel: lambda = 1e-3 * n^{-1/2}
  int max_iters = 10000;
  double tol = 1e-8;         // gradient sup-norm stopping threshold
  StepRule step_rule = StepRule::Backtracking;
  double step_size = 0.5;    // initial step (FixedStep: base of the decaying schedule)
  uint64_t seed = 0;

  void validate() const;
  double effective_lambda(int n) const;
};

// Family defaults: Linear/Kernel stop at 1e-8 with up to 10000 iterations,
// Mlp at 1e-5 with up to 2000.
FitConfig default_fit_config(Family family);

// Loss as a function of the model score f per row. Implementations must be
// pure; `value` may throw std::domain_error, which the line search treats as
// an infinite-risk trial.
class ScalarLoss {
 public:
  virtual ~ScalarLoss() = default;
  virtual double value(const VectorXd& f) const = 0;
  // d(value)/df_i
  virtual VectorXd grad_f(const VectorXd& f) const = 0;
};

// Bregman risk of the correction induced by f (r(1)=1+exp(-f), r(0)=1+exp(f)).
class CorrectionLoss final : public ScalarLoss {
 public:
  CorrectionLoss(const BregmanGenerator& gen, const VectorXi& d);
  double value(const VectorXd& f) const override;
  VectorXd grad_f(const VectorXd& f) const override;

 private:
  const BregmanGenerator& gen_;
  const VectorXi& d_;
};

class MseLoss final : public ScalarLoss {
 public:
  explicit MseLoss(const VectorXd& y) : y_(y) {}
  double value(const VectorXd& f) const override;
  VectorXd grad_f(const VectorXd& f) const override;

 private:
  const VectorXd& y_;
};

// Negative Bernoulli log-likelihood of D given e(x) = sigmoid(f(x)).
class LogisticNllLoss final : public ScalarLoss {
 public:
  explicit LogisticNllLoss(const VectorXi& d) : d_(d) {}
  double value(const VectorXd& f) const override;
  VectorXd grad_f(const VectorXd& f) const override;

 private:
  const VectorXi& d_;
};

// Squared-error risk of the treated-vs-control odds weight w(x) = exp(f(x)):
//   (1/n) sum_i ( -2 1[D_i=1] w(X_i) + 1[D_i=0] w(X_i)^2 ).
class OddsWeightLoss final : public ScalarLoss {
 public:
  explicit OddsWeightLoss(const VectorXi& d) : d_(d) {}
  double value(const VectorXd& f) const override;
  VectorXd grad_f(const VectorXd& f) const override;

 private:
  const VectorXi& d_;
};

struct MinimizeResult {
  VectorXd loss_trace;  // penalized risk per accepted iteration (incl. start)
  bool converged = false;
  double grad_norm = 0.0;
  int iterations = 0;
};

// Full-batch first-order minimization of loss(f(X; theta)) + lambda J(theta).
// Backtracking uses Armijo with shrink 0.5 and slope factor 1e-4; FixedStep
// uses step_size / sqrt(1 + t).
MinimizeResult minimize(ScoreModel& model, const MatrixXd& x, const ScalarLoss& loss,
                        double lambda, const FitConfig& cfg);

// Fitted bias-correction term: evaluable r(d,.) and h(d,x) with fit metadata.
struct FittedCorrection {
  ScoreModel model;
  std::string generator;
  double lambda = 0.0;
  VectorXd loss_trace;
  bool converged = false;
  double grad_norm = 0.0;

  double r(int d, const VectorXd& x) const { return model.eval_r(d, x); }
  // h(1,x) = r(1,x), h(0,x) = -r(0,x)
  double h(int d, const VectorXd& x) const;
  VectorXd r_batch(int d, const MatrixXd& x) const;
  // h(D_i, X_i) row-wise
  VectorXd h_at(const VectorXi& d, const MatrixXd& x) const;

  nlohmann::json to_json() const;
  static FittedCorrection from_json(const nlohmann::json& j);
};

FittedCorrection fit_correction(const Dataset& data, const FitConfig& cfg);

// Per-arm outcome regressions sharing the score families: Linear is ridge
// least squares in closed form, Kernel is kernel ridge, Mlp is gradient
// descent on the MSE.
struct OutcomeFit {
  ScoreModel m1;
  ScoreModel m0;
  double mu(int d, const VectorXd& x) const;
  VectorXd mu_batch(int d, const MatrixXd& x) const;
};

OutcomeFit fit_outcome(const Dataset& data, const FamilySpec& family, double lambda,
                         int max_iters = 2000, double tol = 1e-5, uint64_t seed = 0);

struct FoldPlan {
  int k_folds = 0;
  VectorXi assignment;  // fold id per row
  uint64_t seed = 0;
};

// Stratified-by-treatment partition; fold sizes within each arm differ by at
// most one. Requires each arm to have at least k units.
FoldPlan make_folds(int n, const VectorXi& d, int k, uint64_t seed);

// Row-wise nuisance values. fold_id[i] is the fold whose held-out model
// produced row i, or -1 for full-sample fits.
struct NuisanceTable {
  VectorXd h_hat;  // h(D_i, X_i)
  VectorXd mu1;
  VectorXd mu0;
  VectorXi fold_id;
};

// For each fold, fits the correction and the outcome model on the complement
// and evaluates the held-out rows.
NuisanceTable crossfit_nuisances(const Dataset& data, const FitConfig& corr_cfg,
                                 const FamilySpec& outcome_family, double outcome_lambda,
                                 const FoldPlan& folds);

NuisanceTable full_sample_nuisances(const Dataset& data, const FitConfig& corr_cfg,
                                    const FamilySpec& outcome_family,
                                    double outcome_lambda);

}  // namespace dbce
