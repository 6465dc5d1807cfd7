#include "dbce/dgp.hpp"

#include <cmath>
#include <stdexcept>

namespace dbce {

void DgpConfig::validate() const {
  if (k < 3) throw std::invalid_argument("dgp: k must be >= 3 (score uses x1..x3)");
  if (n < 10) throw std::invalid_argument("dgp: n must be >= 10");
  if (coef_scale <= 0.0) throw std::invalid_argument("dgp: coef_scale must be > 0");
}

double SyntheticTruth::score(const VectorXd& x) const {
  double h = 0.0;
  for (int j = 0; j < 3; ++j) {
    h += coefs.alpha[j] * x[j] + coefs.beta[j] * x[j] * x[j];
  }
  h += coefs.gamma[0] * x[0] * x[1] + coefs.gamma[1] * x[1] * x[2] +
       coefs.gamma[2] * x[0] * x[2];
  return h;
}

double SyntheticTruth::e0(const VectorXd& x) const { return sigmoid(score(x)); }

double SyntheticTruth::mu0(int d, const VectorXd& x) const {
  const double lin = coefs.beta_out.dot(x);
  double m = lin * lin + 1.1 + tau0 * d;
  if (outcome_model == OutcomeModel::Model2) {
    m += lin + 3.0 * std::sin(x[0]);
  }
  return m;
}

double SyntheticTruth::r0(int d, const VectorXd& x) const {
  // 1/e0 = 1 + exp(-h), 1/(1-e0) = 1 + exp(h); this form never divides by a
  // propensity that rounded to 0 or 1.
  const double h = score(x);
  return d == 1 ? 1.0 + std::exp(-h) : 1.0 + std::exp(h);
}

VectorXd SyntheticTruth::e0_batch(const MatrixXd& x) const {
  VectorXd out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = e0(x.row(i).transpose());
  return out;
}

VectorXd SyntheticTruth::mu0_batch(int d, const MatrixXd& x) const {
  VectorXd out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = mu0(d, x.row(i).transpose());
  return out;
}

VectorXd SyntheticTruth::r0_batch(int d, const MatrixXd& x) const {
  VectorXd out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = r0(d, x.row(i).transpose());
  return out;
}

DgpCoefs draw_coefs(const DgpConfig& cfg, Rng& rng) {
  const double sd = std::sqrt(cfg.coef_scale);
  DgpCoefs c;
  for (int j = 0; j < 3; ++j) c.alpha[j] = sd * rng.normal();
  for (int j = 0; j < 3; ++j) c.beta[j] = sd * rng.normal();
  for (int j = 0; j < 3; ++j) c.gamma[j] = sd * rng.normal();
  c.beta_out.resize(cfg.k);
  for (int j = 0; j < cfg.k; ++j) c.beta_out[j] = rng.normal();
  return c;
}

namespace {

std::pair<Dataset, SyntheticTruth> generate_body(const DgpConfig& cfg, DgpCoefs coefs,
                                                 Rng& rng) {
  SyntheticTruth truth;
  truth.coefs = std::move(coefs);
  truth.outcome_model = cfg.outcome_model;
  truth.tau0 = 5.0;
  truth.dgp_seed = cfg.seed;

  MatrixXd x(cfg.n, cfg.k);
  for (int i = 0; i < cfg.n; ++i) {
    for (int j = 0; j < cfg.k; ++j) x(i, j) = rng.normal();
  }
  VectorXi d(cfg.n);
  for (int i = 0; i < cfg.n; ++i) {
    d[i] = rng.bernoulli(truth.e0(x.row(i).transpose()));
  }
  VectorXd y(cfg.n);
  for (int i = 0; i < cfg.n; ++i) {
    y[i] = truth.mu0(d[i], x.row(i).transpose()) + rng.normal();
  }
  // A degenerate single-group draw is astronomically unlikely at n >= 10 but
  // Dataset::make would reject it; resample D once in that case.
  int n1 = 0;
  for (int i = 0; i < cfg.n; ++i) n1 += d[i];
  if (n1 == 0 || n1 == cfg.n) {
    const int flip = static_cast<int>(rng.below(static_cast<uint64_t>(cfg.n)));
    d[flip] = 1 - d[flip];
    y[flip] = truth.mu0(d[flip], x.row(flip).transpose()) + rng.normal();
  }
  return {Dataset::make(std::move(x), std::move(d), std::move(y)), std::move(truth)};
}

}  // namespace

std::pair<Dataset, SyntheticTruth> generate_dgp(const DgpConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  DgpCoefs coefs = draw_coefs(cfg, rng);
  return generate_body(cfg, std::move(coefs), rng);
}

std::pair<Dataset, SyntheticTruth> generate_dgp(const DgpConfig& cfg,
                                                const DgpCoefs& coefs) {
  cfg.validate();
  if (coefs.beta_out.size() != cfg.k) {
    throw std::invalid_argument("dgp: beta_out length must equal k");
  }
  Rng rng(cfg.seed);
  return generate_body(cfg, coefs, rng);
}

double oracle_h(const SyntheticTruth& truth, int d, const VectorXd& x) {
  const double e = truth.e0(x);
  if (!(e > 0.0 && e < 1.0)) {
    throw std::domain_error("oracle_h: propensity outside (0,1)");
  }
  return d == 1 ? truth.r0(1, x) : -truth.r0(0, x);
}

}  // namespace dbce
