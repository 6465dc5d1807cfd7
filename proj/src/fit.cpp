#include "dbce/fit.hpp"

#include <Eigen/Cholesky>
#include <Eigen/QR>

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "dbce/rng.hpp"

namespace dbce {

using nlohmann::json;

void FitConfig::validate() const {
  if (lambda < 0.0) throw std::invalid_argument("fit: lambda must be >= 0");
  if (tol <= 0.0) throw std::invalid_argument("fit: tol must be > 0");
  if (max_iters < 1) throw std::invalid_argument("fit: max_iters must be >= 1");
  if (step_size <= 0.0) throw std::invalid_argument("fit: step_size must be > 0");
  if (generator != "ls" && generator != "ukl" && generator != "eb" &&
      generator != "logistic") {
    throw std::invalid_argument("fit: unknown generator '" + generator + "'");
  }
}

double FitConfig::effective_lambda(int n) const {
  if (lambda_auto && family.family == Family::Kernel) {
    return 1e-3 / std::sqrt(static_cast<double>(n));
  }
  return lambda;
}

FitConfig default_fit_config(Family family) {
  FitConfig cfg;
  cfg.family.family = family;
  switch (family) {
    case Family::Linear:
      cfg.lambda = 1e-4;
      cfg.tol = 1e-8;
      cfg.max_iters = 10000;
      break;
    case Family::Kernel:
      cfg.lambda = 1e-4;
      cfg.lambda_auto = true;
      cfg.tol = 1e-8;
      cfg.max_iters = 10000;
      break;
    case Family::Mlp:
      cfg.lambda = 1e-4;
      cfg.tol = 1e-5;
      cfg.max_iters = 2000;
      break;
  }
  return cfg;
}

// ---- losses ----------------------------------------------------------------

CorrectionLoss::CorrectionLoss(const BregmanGenerator& gen, const VectorXi& d)
    : gen_(gen), d_(d) {}

double CorrectionLoss::value(const VectorXd& f) const {
  const VectorXd r1 = 1.0 + (-f.array()).exp();
  const VectorXd r0 = 1.0 + f.array().exp();
  return empirical_risk_values(gen_, d_, r1, r0).value;
}

VectorXd CorrectionLoss::grad_f(const VectorXd& f) const {
  const Eigen::Index n = f.size();
  VectorXd g(n);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double em = std::exp(-f[i]);
    const double ep = std::exp(f[i]);
    const double r1 = 1.0 + em;
    const double r0 = 1.0 + ep;
    const double u1 = gen_.d2g(r1) * ((d_[i] == 1 ? r1 : 0.0) - 1.0);
    const double u0 = gen_.d2g(r0) * ((d_[i] == 0 ? r0 : 0.0) - 1.0);
    g[i] = (u1 * (-em) + u0 * ep) * inv_n;
  }
  return g;
}

double MseLoss::value(const VectorXd& f) const {
  return (f - y_).squaredNorm() / static_cast<double>(f.size());
}

VectorXd MseLoss::grad_f(const VectorXd& f) const {
  return 2.0 / static_cast<double>(f.size()) * (f - y_);
}

double LogisticNllLoss::value(const VectorXd& f) const {
  StableSum acc;
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    // log(1 + e^f) - d f, evaluated without overflow
    const double sp = f[i] > 0.0 ? f[i] + std::log1p(std::exp(-f[i]))
                                 : std::log1p(std::exp(f[i]));
    acc.add(sp - (d_[i] == 1 ? f[i] : 0.0));
  }
  return acc.value() / static_cast<double>(f.size());
}

VectorXd LogisticNllLoss::grad_f(const VectorXd& f) const {
  VectorXd g(f.size());
  const double inv_n = 1.0 / static_cast<double>(f.size());
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    g[i] = (sigmoid(f[i]) - (d_[i] == 1 ? 1.0 : 0.0)) * inv_n;
  }
  return g;
}

double OddsWeightLoss::value(const VectorXd& f) const {
  StableSum acc;
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    const double w = std::exp(f[i]);
    if (!std::isfinite(w)) throw std::domain_error("odds weight overflow");
    acc.add(d_[i] == 1 ? -2.0 * w : w * w);
  }
  return acc.value() / static_cast<double>(f.size());
}

VectorXd OddsWeightLoss::grad_f(const VectorXd& f) const {
  VectorXd g(f.size());
  const double inv_n = 1.0 / static_cast<double>(f.size());
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    const double w = std::exp(f[i]);
    g[i] = (d_[i] == 1 ? -2.0 * w : 2.0 * w * w) * inv_n;
  }
  return g;
}

// ---- minimizer -------------------------------------------------------------

namespace {

constexpr double kArmijoSlope = 1e-4;
constexpr double kShrink = 0.5;
constexpr int kMaxTrials = 60;

struct Evaluator {
  ScoreModel& model;
  const MatrixXd& x;
  const ScalarLoss& loss;
  double lambda;

  bool linear = false;
  MatrixXd phi;                  // feature matrix, linear-in-params families
  ScoreModel::Workspace ws;      // mlp activations at the current params
  VectorXd f;

  explicit Evaluator(ScoreModel& m, const MatrixXd& xin, const ScalarLoss& l, double lam)
      : model(m), x(xin), loss(l), lambda(lam), linear(m.linear_in_params()) {
    if (linear) phi = model.feature_matrix(x);
  }

  // Risk at parameter vector p; +inf on domain violations so the line search
  // backs off. Leaves model params and cached activations at p.
  double risk_at(const VectorXd& p) {
    model.set_params(p);
    if (linear) {
      f.noalias() = phi * p;
    } else {
      f = model.forward(x, ws);
    }
    double v;
    try {
      v = loss.value(f);
    } catch (const std::domain_error&) {
      return std::numeric_limits<double>::infinity();
    }
    if (lambda > 0.0) v += lambda * model.penalty_value();
    return v;
  }

  VectorXd gradient() {
    const VectorXd gf = loss.grad_f(f);
    VectorXd g = linear ? VectorXd(phi.transpose() * gf)
                        : model.backward_weighted(x, ws, gf);
    if (lambda > 0.0) g += lambda * model.penalty_gradient();
    return g;
  }
};

}  // namespace

MinimizeResult minimize(ScoreModel& model, const MatrixXd& x, const ScalarLoss& loss,
                        double lambda, const FitConfig& cfg) {
  Evaluator ev(model, x, loss, lambda);
  VectorXd theta = model.params();
  double risk = ev.risk_at(theta);
  if (!std::isfinite(risk)) {
    throw std::runtime_error("fit: non-finite risk at the starting point (parameter norm " +
                             std::to_string(theta.norm()) + ")");
  }

  std::vector<double> trace{risk};
  MinimizeResult res;
  double step = cfg.step_size;

  int t = 0;
  for (; t < cfg.max_iters; ++t) {
    const VectorXd grad = ev.gradient();
    if (!grad.allFinite()) {
      throw std::runtime_error("fit: non-finite gradient at iteration " +
                               std::to_string(t) + " (parameter norm " +
                               std::to_string(theta.norm()) + ")");
    }
    const double gnorm = grad.lpNorm<Eigen::Infinity>();
    res.grad_norm = gnorm;
    if (gnorm <= cfg.tol) {
      res.converged = true;
      break;
    }

    if (cfg.step_rule == StepRule::Backtracking) {
      const double gsq = grad.squaredNorm();
      double alpha = std::min(step * 2.0, 1e6);
      bool accepted = false;
      for (int trial = 0; trial < kMaxTrials; ++trial) {
        const VectorXd cand = theta - alpha * grad;
        const double cand_risk = ev.risk_at(cand);
        if (cand_risk <= risk - kArmijoSlope * alpha * gsq) {
          theta = cand;
          risk = cand_risk;
          step = alpha;
          accepted = true;
          break;
        }
        alpha *= kShrink;
      }
      if (!accepted) {
        // Line search stalled: gradient-direction progress is below float
        // resolution. Restore state at theta and stop.
        ev.risk_at(theta);
        break;
      }
    } else {
      const double alpha = cfg.step_size / std::sqrt(1.0 + static_cast<double>(t));
      theta -= alpha * grad;
      risk = ev.risk_at(theta);
      if (!std::isfinite(risk)) {
        throw std::runtime_error("fit: non-finite risk at iteration " + std::to_string(t) +
                                 " (parameter norm " + std::to_string(theta.norm()) + ")");
      }
    }
    trace.push_back(risk);
  }

  res.iterations = t;
  res.loss_trace = Eigen::Map<const VectorXd>(trace.data(),
                                              static_cast<Eigen::Index>(trace.size()));
  model.set_params(std::move(theta));
  return res;
}

// ---- correction fitting ----------------------------------------------------

double FittedCorrection::h(int d, const VectorXd& x) const {
  return d == 1 ? model.eval_r(1, x) : -model.eval_r(0, x);
}

VectorXd FittedCorrection::r_batch(int d, const MatrixXd& x) const {
  const VectorXd f = model.eval_f_batch(x);
  if (d == 1) return (1.0 + (-f.array()).exp()).matrix();
  return (1.0 + f.array().exp()).matrix();
}

VectorXd FittedCorrection::h_at(const VectorXi& d, const MatrixXd& x) const {
  const VectorXd f = model.eval_f_batch(x);
  VectorXd out(f.size());
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    out[i] = d[i] == 1 ? 1.0 + std::exp(-f[i]) : -(1.0 + std::exp(f[i]));
  }
  return out;
}

json FittedCorrection::to_json() const {
  json j;
  j["model"] = model.to_json();
  j["generator"] = generator;
  j["lambda"] = lambda;
  j["converged"] = converged;
  j["grad_norm"] = grad_norm;
  j["loss_trace"] = std::vector<double>(loss_trace.data(),
                                        loss_trace.data() + loss_trace.size());
  return j;
}

FittedCorrection FittedCorrection::from_json(const json& j) {
  FittedCorrection c{ScoreModel::from_json(j.at("model")),
                     j.at("generator").get<std::string>(),
                     j.at("lambda").get<double>(),
                     {},
                     j.at("converged").get<bool>(),
                     j.at("grad_norm").get<double>()};
  const auto trace = j.at("loss_trace").get<std::vector<double>>();
  c.loss_trace = Eigen::Map<const VectorXd>(trace.data(),
                                            static_cast<Eigen::Index>(trace.size()));
  return c;
}

FittedCorrection fit_correction(const Dataset& data, const FitConfig& cfg) {
  cfg.validate();
  ScoreModel model = ScoreModel::make(cfg.family, data.x, cfg.seed);
  const double lambda = cfg.effective_lambda(data.n());

  MinimizeResult res;
  if (cfg.generator == "logistic") {
    LogisticNllLoss loss(data.d);
    res = minimize(model, data.x, loss, lambda, cfg);
  } else {
    CorrectionLoss loss(generator_by_name(cfg.generator), data.d);
    res = minimize(model, data.x, loss, lambda, cfg);
  }
  return FittedCorrection{std::move(model), cfg.generator, lambda,
                          std::move(res.loss_trace), res.converged, res.grad_norm};
}

// ---- outcome regression ----------------------------------------------------

namespace {

ScoreModel fit_arm_regression(const MatrixXd& x, const VectorXd& y,
                              const FamilySpec& family, double lambda, int max_iters,
                              double tol, uint64_t seed) {
  switch (family.family) {
    case Family::Linear: {
      ScoreModel m = ScoreModel::linear(static_cast<int>(x.cols()),
                                        family.linear.intercept_only);
      const MatrixXd phi = m.feature_matrix(x);
      const double n = static_cast<double>(x.rows());
      MatrixXd a = phi.transpose() * phi / n;
      if (lambda > 0.0 && !family.linear.intercept_only) {
        // intercept stays unpenalized
        for (Eigen::Index j = 0; j + 1 < a.cols(); ++j) a(j, j) += lambda;
      }
      const VectorXd b = phi.transpose() * y / n;
      Eigen::LDLT<MatrixXd> ldlt(a);
      VectorXd beta = ldlt.solve(b);
      if (ldlt.info() != Eigen::Success || !beta.allFinite()) {
        beta = a.colPivHouseholderQr().solve(b);
      }
      m.set_params(std::move(beta));
      return m;
    }
    case Family::Kernel: {
      FamilySpec anchor_spec = family;
      ScoreModel m = ScoreModel::make(anchor_spec, x, seed);
      const MatrixXd phi = m.feature_matrix(x);
      const double n = static_cast<double>(x.rows());
      // (1/n)||y - K a||^2 + lambda a' K a  =>  (K + n lambda I) a = y for the
      // square full-anchor case; with subsampled anchors solve the normal form.
      MatrixXd a;
      VectorXd b;
      if (phi.rows() == phi.cols()) {
        a = phi;
        for (Eigen::Index j = 0; j < a.cols(); ++j) a(j, j) += n * lambda;
        b = y;
      } else {
        a = phi.transpose() * phi / n + lambda * m.anchor_gram();
        b = phi.transpose() * y / n;
      }
      Eigen::LDLT<MatrixXd> ldlt(a);
      VectorXd alpha = ldlt.solve(b);
      if (ldlt.info() != Eigen::Success || !alpha.allFinite()) {
        alpha = a.colPivHouseholderQr().solve(b);
      }
      m.set_params(std::move(alpha));
      return m;
    }
    case Family::Mlp: {
      ScoreModel m = ScoreModel::make(family, x, seed);
      FitConfig cfg = default_fit_config(Family::Mlp);
      cfg.family = family;
      cfg.lambda = lambda;
      cfg.max_iters = max_iters;
      cfg.tol = tol;
      MseLoss loss(y);
      minimize(m, x, loss, lambda, cfg);
      return m;
    }
  }
  throw std::logic_error("unreachable family");
}

}  // namespace

double OutcomeFit::mu(int d, const VectorXd& x) const {
  return d == 1 ? m1.eval_f(x) : m0.eval_f(x);
}

VectorXd OutcomeFit::mu_batch(int d, const MatrixXd& x) const {
  return d == 1 ? m1.eval_f_batch(x) : m0.eval_f_batch(x);
}

OutcomeFit fit_outcome(const Dataset& data, const FamilySpec& family, double lambda,
                         int max_iters, double tol, uint64_t seed) {
  std::vector<int> rows1, rows0;
  for (int i = 0; i < data.n(); ++i) (data.d[i] == 1 ? rows1 : rows0).push_back(i);
  if (rows1.empty() || rows0.empty()) {
    throw std::invalid_argument("fit_outcome: both treatment groups must be non-empty");
  }
  MatrixXd x1(static_cast<Eigen::Index>(rows1.size()), data.k());
  VectorXd y1(static_cast<Eigen::Index>(rows1.size()));
  for (size_t i = 0; i < rows1.size(); ++i) {
    x1.row(static_cast<Eigen::Index>(i)) = data.x.row(rows1[i]);
    y1[static_cast<Eigen::Index>(i)] = data.y[rows1[i]];
  }
  MatrixXd x0(static_cast<Eigen::Index>(rows0.size()), data.k());
  VectorXd y0(static_cast<Eigen::Index>(rows0.size()));
  for (size_t i = 0; i < rows0.size(); ++i) {
    x0.row(static_cast<Eigen::Index>(i)) = data.x.row(rows0[i]);
    y0[static_cast<Eigen::Index>(i)] = data.y[rows0[i]];
  }
  return OutcomeFit{
      fit_arm_regression(x1, y1, family, lambda, max_iters, tol, derive_seed(seed, 1)),
      fit_arm_regression(x0, y0, family, lambda, max_iters, tol, derive_seed(seed, 2))};
}

// ---- folds and cross-fitting -----------------------------------------------

FoldPlan make_folds(int n, const VectorXi& d, int k, uint64_t seed) {
  if (k < 2) throw std::invalid_argument("make_folds: k must be >= 2");
  if (d.size() != n) throw std::invalid_argument("make_folds: d length mismatch");
  std::vector<int> treated, control;
  for (int i = 0; i < n; ++i) (d[i] == 1 ? treated : control).push_back(i);
  if (static_cast<int>(treated.size()) < k || static_cast<int>(control.size()) < k) {
    throw std::invalid_argument("make_folds: each arm needs at least k units (treated " +
                                std::to_string(treated.size()) + ", control " +
                                std::to_string(control.size()) + ", k " +
                                std::to_string(k) + ")");
  }
  Rng rng(seed);
  rng.shuffle(treated);
  rng.shuffle(control);
  FoldPlan plan;
  plan.k_folds = k;
  plan.seed = seed;
  plan.assignment.resize(n);
  // one round-robin counter across both arms keeps overall fold sizes within
  // one of each other as well
  int fold = 0;
  for (int row : treated) {
    plan.assignment[row] = fold;
    fold = (fold + 1) % k;
  }
  for (int row : control) {
    plan.assignment[row] = fold;
    fold = (fold + 1) % k;
  }
  return plan;
}

NuisanceTable crossfit_nuisances(const Dataset& data, const FitConfig& corr_cfg,
                                 const FamilySpec& outcome_family, double outcome_lambda,
                                 const FoldPlan& folds) {
  if (folds.assignment.size() != data.n()) {
    throw std::invalid_argument("crossfit: fold plan does not match dataset");
  }
  NuisanceTable table;
  table.h_hat.resize(data.n());
  table.mu1.resize(data.n());
  table.mu0.resize(data.n());
  table.fold_id.resize(data.n());

  for (int f = 0; f < folds.k_folds; ++f) {
    std::vector<int> train, held;
    for (int i = 0; i < data.n(); ++i) {
      (folds.assignment[i] == f ? held : train).push_back(i);
    }
    if (held.empty()) throw std::invalid_argument("crossfit: empty fold " + std::to_string(f));
    try {
      const Dataset sub = data.subset(train);
      FitConfig cfg = corr_cfg;
      cfg.seed = derive_seed(corr_cfg.seed, 1000 + static_cast<uint64_t>(f));
      const FittedCorrection corr = fit_correction(sub, cfg);
      const OutcomeFit outcome =
          fit_outcome(sub, outcome_family, outcome_lambda, 2000, 1e-5, cfg.seed);

      MatrixXd xh(static_cast<Eigen::Index>(held.size()), data.k());
      VectorXi dh(static_cast<Eigen::Index>(held.size()));
      for (size_t i = 0; i < held.size(); ++i) {
        xh.row(static_cast<Eigen::Index>(i)) = data.x.row(held[i]);
        dh[static_cast<Eigen::Index>(i)] = data.d[held[i]];
      }
      const VectorXd h = corr.h_at(dh, xh);
      const VectorXd m1 = outcome.mu_batch(1, xh);
      const VectorXd m0 = outcome.mu_batch(0, xh);
      for (size_t i = 0; i < held.size(); ++i) {
        const int row = held[i];
        table.h_hat[row] = h[static_cast<Eigen::Index>(i)];
        table.mu1[row] = m1[static_cast<Eigen::Index>(i)];
        table.mu0[row] = m0[static_cast<Eigen::Index>(i)];
        table.fold_id[row] = f;
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("crossfit fold " + std::to_string(f) + ": " + e.what());
    }
  }
  return table;
}

NuisanceTable full_sample_nuisances(const Dataset& data, const FitConfig& corr_cfg,
                                    const FamilySpec& outcome_family,
                                    double outcome_lambda) {
  const FittedCorrection corr = fit_correction(data, corr_cfg);
  const OutcomeFit outcome =
      fit_outcome(data, outcome_family, outcome_lambda, 2000, 1e-5, corr_cfg.seed);
  NuisanceTable table;
  table.h_hat = corr.h_at(data.d, data.x);
  table.mu1 = outcome.mu_batch(1, data.x);
  table.mu0 = outcome.mu_batch(0, data.x);
  table.fold_id = VectorXi::Constant(data.n(), -1);
  return table;
}

}  // namespace dbce
