#include <doctest.h>

#include <cmath>
#include <numeric>

#include "dbce/dgp.hpp"
#include "dbce/estimators.hpp"
#include "dbce/fit.hpp"
#include "dbce/rng.hpp"

using namespace dbce;

namespace {

Dataset small_dataset(int n, int n_treated, int k = 2, uint64_t seed = 3) {
  Rng rng(seed);
  MatrixXd x(n, k);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < k; ++j) x(i, j) = rng.normal();
  }
  VectorXi d = VectorXi::Zero(n);
  for (int i = 0; i < n_treated; ++i) d[i] = 1;
  VectorXd y(n);
  for (int i = 0; i < n; ++i) y[i] = rng.normal();
  return Dataset::make(std::move(x), std::move(d), std::move(y));
}

FitConfig intercept_only_config(const std::string& generator) {
  FitConfig cfg = default_fit_config(Family::Linear);
  cfg.generator = generator;
  cfg.family.linear.intercept_only = true;
  cfg.lambda = 0.0;
  cfg.tol = 1e-9;
  return cfg;
}

}  // namespace

TEST_CASE("intercept-only fits hit the closed-form constants") {
  // n1 = 2 of n = 5: r(1) = n/n1 = 2.5, r(0) = n/n0 = 5/3 for both generators,
  // and for the logistic MLE baseline.
  const Dataset data = small_dataset(5, 2);
  const VectorXd x0 = VectorXd::Zero(2);
  for (const std::string gen : {"ls", "ukl", "eb", "logistic"}) {
    CAPTURE(gen);
    const FittedCorrection corr = fit_correction(data, intercept_only_config(gen));
    CHECK(corr.converged);
    CHECK(corr.r(1, x0) == doctest::Approx(2.5).epsilon(1e-6));
    CHECK(corr.r(0, x0) == doctest::Approx(5.0 / 3.0).epsilon(1e-6));
  }
}

TEST_CASE("silverman balance holds at the UKL optimum") {
  const Dataset data = small_dataset(40, 17);
  FitConfig cfg = intercept_only_config("ukl");
  cfg.tol = 1e-11;
  const FittedCorrection corr = fit_correction(data, cfg);
  const BalanceReport bal = diagnostics(data, corr);
  CHECK(bal.treated_weight_mean == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(bal.control_weight_mean == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("loss trace is non-increasing under backtracking") {
  DgpConfig dcfg;
  dcfg.k = 3;
  dcfg.n = 400;
  dcfg.seed = 8;
  dcfg.coef_scale = 0.3;
  const auto [data, truth] = generate_dgp(dcfg);
  FitConfig cfg = default_fit_config(Family::Linear);
  cfg.generator = "ls";
  cfg.max_iters = 200;
  const FittedCorrection corr = fit_correction(data, cfg);
  for (Eigen::Index i = 1; i < corr.loss_trace.size(); ++i) {
    CHECK(corr.loss_trace[i] <= corr.loss_trace[i - 1] + 1e-14);
  }
}

TEST_CASE("assembled risk gradient matches finite differences") {
  Rng rng(1009);
  const Dataset data = small_dataset(60, 25, 3, 19);
  for (const std::string gen_name : {"ls", "ukl", "eb"}) {
    for (Family family : {Family::Linear, Family::Kernel, Family::Mlp}) {
      CAPTURE(gen_name);
      CAPTURE(family_name(family));
      FamilySpec spec;
      spec.family = family;
      spec.mlp = {2, 5, Activation::Elu};
      ScoreModel model = ScoreModel::make(spec, data.x, rng.next_u64());
      VectorXd p(model.num_params());
      for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = 0.2 * rng.normal();
      model.set_params(p);

      const double lambda = 0.01;
      const CorrectionLoss loss(generator_by_name(gen_name), data.d);
      const auto risk = [&](const VectorXd& theta) {
        ScoreModel m = model;
        m.set_params(theta);
        return loss.value(m.eval_f_batch(data.x)) + lambda * m.penalty_value();
      };
      const VectorXd gf = loss.grad_f(model.eval_f_batch(data.x));
      const VectorXd grad =
          model.weighted_grad_f(data.x, gf) + lambda * model.penalty_gradient();

      double worst = 0.0;
      for (Eigen::Index j = 0; j < p.size(); ++j) {
        VectorXd tp = p, tm = p;
        tp[j] += 1e-6;
        tm[j] -= 1e-6;
        const double fd = (risk(tp) - risk(tm)) / 2e-6;
        worst = std::max(worst, std::abs(fd - grad[j]) /
                                    std::max({1.0, std::abs(fd), std::abs(grad[j])}));
      }
      CHECK(worst <= 1e-5);
    }
  }
}

TEST_CASE("linear-score recovery at n = 20000") {
  // beta = gamma = 0 makes the true score linear, so the linear family
  // contains r0; lambda = 0 per the linear-model analysis.
  DgpConfig dcfg;
  dcfg.k = 3;
  dcfg.n = 20000;
  dcfg.seed = 10101;
  DgpCoefs coefs;
  coefs.alpha << 0.6, -0.4, 0.3;
  coefs.beta.setZero();
  coefs.gamma.setZero();
  coefs.beta_out = VectorXd::Ones(3);
  const auto [data, truth] = generate_dgp(dcfg, coefs);

  FitConfig cfg = default_fit_config(Family::Linear);
  cfg.generator = "ls";
  cfg.lambda = 0.0;
  cfg.tol = 1e-10;
  const FittedCorrection corr = fit_correction(data, cfg);

  VectorXd theta0(4);
  theta0 << coefs.alpha[0], coefs.alpha[1], coefs.alpha[2], 0.0;
  CHECK((corr.model.params() - theta0).norm() <= 0.15);

  // basic inequality: the fitted risk is no worse than the truth's risk
  const SyntheticTruth& tr = truth;
  const CorrectionFn r_true = [&tr](int d, const VectorXd& x) { return tr.r0(d, x); };
  const CorrectionFn r_fit = [&corr](int d, const VectorXd& x) { return corr.r(d, x); };
  const double risk_fit = empirical_risk(least_squares(), data, r_fit).value;
  const double risk_true = empirical_risk(least_squares(), data, r_true).value;
  CHECK(risk_fit <= risk_true + 1e-10);
}

TEST_CASE("fitting is invariant to row permutation") {
  DgpConfig dcfg;
  dcfg.k = 3;
  dcfg.n = 500;
  dcfg.seed = 33;
  dcfg.coef_scale = 0.2;
  const auto [data, truth] = generate_dgp(dcfg);

  std::vector<int> perm(static_cast<size_t>(data.n()));
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(77);
  rng.shuffle(perm);
  const Dataset shuffled = data.subset(perm);

  FitConfig cfg = default_fit_config(Family::Linear);
  cfg.generator = "ukl";
  cfg.tol = 1e-11;
  const FittedCorrection a = fit_correction(data, cfg);
  const FittedCorrection b = fit_correction(shuffled, cfg);
  CHECK((a.model.params() - b.model.params()).lpNorm<Eigen::Infinity>() <= 1e-6);
}

TEST_CASE("fixed-step rule also reaches the constant optimum") {
  const Dataset data = small_dataset(50, 20);
  FitConfig cfg = intercept_only_config("ls");
  cfg.step_rule = StepRule::FixedStep;
  cfg.step_size = 0.3;
  cfg.max_iters = 4000;
  const FittedCorrection corr = fit_correction(data, cfg);
  CHECK(corr.r(1, VectorXd::Zero(2)) == doctest::Approx(50.0 / 20.0).epsilon(1e-4));
}

TEST_CASE("outcome regression closed forms") {
  SUBCASE("constant outcome in both arms") {
    Dataset data = small_dataset(30, 12);
    data.y.setConstant(3.25);
    FamilySpec linear;
    const OutcomeFit om = fit_outcome(data, linear, 1e-4);
    for (int i = 0; i < 5; ++i) {
      const VectorXd xi = data.x.row(i).transpose();
      CHECK(om.mu(1, xi) == doctest::Approx(3.25).epsilon(1e-8));
      CHECK(om.mu(0, xi) == doctest::Approx(3.25).epsilon(1e-8));
    }
  }
  SUBCASE("noiseless linear outcome is recovered exactly") {
    Dataset data = small_dataset(40, 15);
    for (int i = 0; i < data.n(); ++i) {
      data.y[i] = 2.0 * data.x(i, 0) + 5.0 * data.d[i];
    }
    FamilySpec linear;
    const OutcomeFit om = fit_outcome(data, linear, 0.0);
    for (int i = 0; i < 10; ++i) {
      const VectorXd xi = data.x.row(i).transpose();
      CHECK(om.mu(1, xi) - om.mu(0, xi) == doctest::Approx(5.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("mlp outcome fit handles the nonlinear design") {
  DgpConfig dcfg;
  dcfg.k = 3;
  dcfg.n = 3000;
  dcfg.seed = 2024;
  dcfg.outcome_model = OutcomeModel::Model2;
  const auto [data, truth] = generate_dgp(dcfg);

  std::vector<int> first, second;
  for (int i = 0; i < data.n(); ++i) (i % 2 == 0 ? first : second).push_back(i);
  const Dataset train = data.subset(first);
  const Dataset held = data.subset(second);

  FamilySpec linear;
  FamilySpec mlp;
  mlp.family = Family::Mlp;
  mlp.mlp = {2, 50, Activation::Elu};
  const OutcomeFit lin_fit = fit_outcome(train, linear, 1e-4);
  const OutcomeFit mlp_fit = fit_outcome(train, mlp, 1e-4, 400, 1e-5, 5);

  const auto held_mse = [&](const OutcomeFit& om) {
    double acc = 0.0;
    for (int i = 0; i < held.n(); ++i) {
      const VectorXd xi = held.x.row(i).transpose();
      const double err = held.y[i] - om.mu(held.d[i], xi);
      acc += err * err;
    }
    return acc / held.n();
  };
  CHECK(held_mse(mlp_fit) <= 1.5 * held_mse(lin_fit));
}

TEST_CASE("make_folds stratifies and is deterministic") {
  VectorXi d(10);
  d << 1, 1, 1, 1, 1, 0, 0, 0, 0, 0;
  const FoldPlan plan = make_folds(10, d, 2, 99);
  const FoldPlan again = make_folds(10, d, 2, 99);
  CHECK((plan.assignment - again.assignment).cwiseAbs().maxCoeff() == 0);

  int sizes[2] = {0, 0};
  int treated[2] = {0, 0};
  for (int i = 0; i < 10; ++i) {
    sizes[plan.assignment[i]]++;
    if (d[i] == 1) treated[plan.assignment[i]]++;
  }
  CHECK(sizes[0] == 5);
  CHECK(sizes[1] == 5);
  CHECK(treated[0] >= 1);
  CHECK(treated[1] >= 1);

  SUBCASE("fold sizes within an arm differ by at most one") {
    Rng rng(5);
    VectorXi d2(23);
    for (int i = 0; i < 23; ++i) d2[i] = rng.bernoulli(0.4);
    d2[0] = 1;
    d2[1] = 1;
    d2[2] = 1;
    const FoldPlan p = make_folds(23, d2, 3, 4);
    int arm_fold[2][3] = {};
    for (int i = 0; i < 23; ++i) arm_fold[d2[i]][p.assignment[i]]++;
    for (int arm = 0; arm < 2; ++arm) {
      int lo = arm_fold[arm][0], hi = arm_fold[arm][0];
      for (int f = 1; f < 3; ++f) {
        lo = std::min(lo, arm_fold[arm][f]);
        hi = std::max(hi, arm_fold[arm][f]);
      }
      CHECK(hi - lo <= 1);
    }
  }

  SUBCASE("an arm smaller than k is rejected") {
    VectorXi d3(6);
    d3 << 1, 1, 0, 0, 0, 0;
    CHECK_THROWS_AS(make_folds(6, d3, 3, 1), std::invalid_argument);
  }
}

TEST_CASE("cross-fitting on a mirrored dataset equals the full-sample fit") {
  DgpConfig dcfg;
  dcfg.k = 3;
  dcfg.n = 250;
  dcfg.seed = 404;
  dcfg.coef_scale = 0.2;
  const auto [half, truth] = generate_dgp(dcfg);

  // two identical copies; the folds are the copies themselves
  std::vector<int> rows;
  for (int rep = 0; rep < 2; ++rep) {
    for (int i = 0; i < half.n(); ++i) rows.push_back(i);
  }
  const Dataset data = half.subset(rows);
  FoldPlan plan;
  plan.k_folds = 2;
  plan.seed = 0;
  plan.assignment.resize(data.n());
  for (int i = 0; i < data.n(); ++i) plan.assignment[i] = i < half.n() ? 0 : 1;

  FitConfig cfg = default_fit_config(Family::Linear);
  cfg.generator = "ls";
  cfg.tol = 1e-11;
  FamilySpec outcome;
  const NuisanceTable crossed = crossfit_nuisances(data, cfg, outcome, 1e-4, plan);
  const NuisanceTable full = full_sample_nuisances(data, cfg, outcome, 1e-4);

  CHECK((crossed.h_hat - full.h_hat).lpNorm<Eigen::Infinity>() <= 1e-5);
  CHECK((crossed.mu1 - full.mu1).lpNorm<Eigen::Infinity>() <= 1e-6);
  CHECK((crossed.mu0 - full.mu0).lpNorm<Eigen::Infinity>() <= 1e-6);

  // provenance: held-out rows carry the id of the fold that produced them
  for (int i = 0; i < data.n(); ++i) CHECK(crossed.fold_id[i] == plan.assignment[i]);
  CHECK(full.fold_id[0] == -1);
}

TEST_CASE("kernel correction fits a nonlinear score better than linear") {
  DgpConfig dcfg;
  dcfg.k = 3;
  dcfg.n = 600;
  dcfg.seed = 515;
  dcfg.coef_scale = 0.4;
  const auto [data, truth] = generate_dgp(dcfg);

  FitConfig lin_cfg = default_fit_config(Family::Linear);
  lin_cfg.generator = "ls";
  FitConfig ker_cfg = default_fit_config(Family::Kernel);
  ker_cfg.generator = "ls";
  // flexible families need a real penalty here: the empirical risk is
  // unbounded below once isolated units can be carved out
  ker_cfg.lambda = 1e-2;
  ker_cfg.lambda_auto = false;
  ker_cfg.max_iters = 500;
  ker_cfg.tol = 1e-7;

  const FittedCorrection lin = fit_correction(data, lin_cfg);
  const FittedCorrection ker = fit_correction(data, ker_cfg);
  const BalanceReport lin_bal = diagnostics(data, lin, &truth);
  const BalanceReport ker_bal = diagnostics(data, ker, &truth);
  REQUIRE(lin_bal.oracle_l2.has_value());
  REQUIRE(ker_bal.oracle_l2.has_value());
  CHECK(*ker_bal.oracle_l2 < *lin_bal.oracle_l2);
}

TEST_CASE("fit rejects invalid configurations") {
  FitConfig cfg;
  cfg.lambda = -1.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = FitConfig{};
  cfg.generator = "nope";
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = FitConfig{};
  cfg.tol = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("correction round trip restores evaluations bitwise") {
  const Dataset data = small_dataset(80, 30, 3, 21);
  FitConfig cfg = default_fit_config(Family::Linear);
  cfg.generator = "ls";
  const FittedCorrection corr = fit_correction(data, cfg);
  const FittedCorrection back =
      FittedCorrection::from_json(nlohmann::json::parse(corr.to_json().dump()));
  for (int i = 0; i < data.n(); ++i) {
    const VectorXd xi = data.x.row(i).transpose();
    CHECK(corr.r(1, xi) == back.r(1, xi));
    CHECK(corr.r(0, xi) == back.r(0, xi));
    CHECK(corr.h(data.d[i], xi) == back.h(data.d[i], xi));
  }
  CHECK(back.generator == "ls");
  CHECK(back.lambda == corr.lambda);
}
