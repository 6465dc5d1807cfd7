#pragma once

#include <cstdint>
#include <utility>

#include "dbce/common.hpp"
#include "dbce/dataset.hpp"
#include "dbce/rng.hpp"

namespace dbce {

enum class OutcomeModel { Model1 = 1, Model2 = 2 };

struct DgpConfig {
  int k = 3;                                      // covariate dimension, >= 3
  OutcomeModel outcome_model = OutcomeModel::Model1;
  int n = 3000;                                   // sample size, >= 10
  uint64_t seed = 0;
  double coef_scale = 0.5;                        // variance of alpha/beta/gamma draws

  void validate() const;
};

// Coefficients of one synthetic replication. alpha/beta/gamma drive the
// treatment score on the first three covariates; beta_out drives the outcome.
struct DgpCoefs {
  Eigen::Vector3d alpha;
  Eigen::Vector3d beta;
  Eigen::Vector3d gamma;
  VectorXd beta_out;  // length K
};

// Ground truth of a synthetic draw: exact propensity, conditional outcome
// means, and the ATE (5.0 for these designs). Immutable, shareable.
struct SyntheticTruth {
  DgpCoefs coefs;
  OutcomeModel outcome_model = OutcomeModel::Model1;
  double tau0 = 5.0;
  uint64_t dgp_seed = 0;

  double score(const VectorXd& x) const;     // treatment log-odds h(x)
  double e0(const VectorXd& x) const;        // true propensity, in (0,1)
  double mu0(int d, const VectorXd& x) const;
  double r0(int d, const VectorXd& x) const;  // 1/e0 or 1/(1-e0)

  VectorXd e0_batch(const MatrixXd& x) const;
  VectorXd mu0_batch(int d, const MatrixXd& x) const;
  VectorXd r0_batch(int d, const MatrixXd& x) const;
};

// Draw order is pinned (alpha, beta, gamma, beta_out, then X rows, D, eps)
// so datasets are bit-reproducible for a fixed seed.
DgpCoefs draw_coefs(const DgpConfig& cfg, Rng& rng);

std::pair<Dataset, SyntheticTruth> generate_dgp(const DgpConfig& cfg);
// Same draw protocol but with coefficients supplied by the caller (they are
// not redrawn; the data stream still starts from cfg.seed).
std::pair<Dataset, SyntheticTruth> generate_dgp(const DgpConfig& cfg, const DgpCoefs& coefs);

// Signed inverse-propensity weight 1[d=1]/e0 - 1[d=0]/(1-e0).
double oracle_h(const SyntheticTruth& truth, int d, const VectorXd& x);

}  // namespace dbce
