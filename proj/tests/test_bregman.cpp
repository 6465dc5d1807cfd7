#include <doctest.h>

#include <cmath>
#include <vector>

#include "dbce/bregman.hpp"
#include "dbce/dgp.hpp"
#include "dbce/model.hpp"
#include "dbce/rng.hpp"

using namespace dbce;

namespace {

Dataset tiny_dataset(int n, int n_treated, int k = 1, uint64_t seed = 5) {
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

CorrectionFn constant_r(double a, double b) {
  return [a, b](int d, const VectorXd&) { return d == 1 ? a : b; };
}

const BregmanGenerator* kGenerators[3] = {&least_squares(), &unnormalized_kl(),
                                          &empirical_balancing()};

}  // namespace

TEST_CASE("least-squares risk on the worked two-row example") {
  // D = (1,0), r(d,x) = 2 everywhere: each sample contributes -2*2 - 2*2 + 4.
  const Dataset data = tiny_dataset(2, 1);
  const RiskValue v = empirical_risk(least_squares(), data, constant_r(2.0, 2.0));
  CHECK(v.value == doctest::Approx(-4.0).epsilon(1e-14));
  CHECK(v.per_sample[0] == doctest::Approx(-4.0));
  CHECK(v.per_sample[1] == doctest::Approx(-4.0));
}

TEST_CASE("unnormalized KL risk matches the constant-model formula") {
  // treated fraction p: value = -log a - log b + p a + (1-p) b
  const Dataset data = tiny_dataset(5, 2);  // p = 0.4
  const double a = 2.5, b = 5.0 / 3.0;
  const RiskValue v = empirical_risk(unnormalized_kl(), data, constant_r(a, b));
  CHECK(v.value ==
        doctest::Approx(-std::log(a) - std::log(b) + 1.0 + 1.0).epsilon(1e-14));
}

TEST_CASE("least-squares risk equals the independent reformulation") {
  // (1/n) sum( -2 r1 - 2 r0 + 1[D=1] r1^2 + 1[D=0] r0^2 ), computed separately.
  Rng rng(99);
  const Dataset data = tiny_dataset(257, 101, 2, 31);
  for (int trial = 0; trial < 5; ++trial) {
    VectorXd r1(data.n()), r0(data.n());
    for (int i = 0; i < data.n(); ++i) {
      r1[i] = 1.05 + 4.0 * rng.uniform01();
      r0[i] = 1.05 + 4.0 * rng.uniform01();
    }
    const RiskValue v = empirical_risk_values(least_squares(), data.d, r1, r0);
    double direct = 0.0;
    for (int i = 0; i < data.n(); ++i) {
      direct += -2.0 * r1[i] - 2.0 * r0[i] + (data.d[i] == 1 ? r1[i] * r1[i] : 0.0) +
                (data.d[i] == 0 ? r0[i] * r0[i] : 0.0);
    }
    direct /= data.n();
    CHECK(v.value == doctest::Approx(direct).epsilon(1e-12));
    CHECK(v.value ==
          doctest::Approx(v.per_sample.mean() + v.penalty).epsilon(1e-12));
  }
}

TEST_CASE("generator derivatives match finite differences") {
  const auto close = [](double a, double b, double tol) {
    return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
  };
  for (const auto* gen : kGenerators) {
    CAPTURE(gen->name);
    // log-spaced grid over (1 + 1e-6, 1e6)
    for (double t = -5.5; t <= 6.0; t += 0.25) {
      const double r = 1.0 + std::pow(10.0, t);
      // the balancing generator blows up at r = 1, so its step must shrink
      // with the distance to the boundary
      const double hstep =
          gen->name == "eb" ? 1e-5 * (r - 1.0) : 1e-6 * std::max(1.0, r);
      const double rp = r + hstep;
      const double rm = r - hstep;
      const double twoh = rp - rm;  // the realized step, not the intended one
      const double fd_dg = (gen->g(rp) - gen->g(rm)) / twoh;
      const double fd_d2g = (gen->dg(rp) - gen->dg(rm)) / twoh;
      CAPTURE(r);
      CHECK(close(gen->dg(r), fd_dg, 1e-6));
      CHECK(close(gen->d2g(r), fd_d2g, 1e-5));
      CHECK(gen->d2g(r) > 0.0);
    }
  }
}

TEST_CASE("risk_value_gradient closed forms") {
  CHECK(risk_value_gradient(least_squares(), true, 3.0) == doctest::Approx(4.0));
  CHECK(risk_value_gradient(least_squares(), false, 3.0) == doctest::Approx(-2.0));
  // d2g(r) (1[match] r - 1) for the others
  CHECK(risk_value_gradient(unnormalized_kl(), true, 2.0) ==
        doctest::Approx(0.5 * (2.0 - 1.0)));
  CHECK(risk_value_gradient(empirical_balancing(), false, 3.0) ==
        doctest::Approx(-0.5));
}

TEST_CASE("population value-gradient vanishes at the constant optimum") {
  // At r = 1/p on the matching arm, E[d2g(r)(1[D=d] r - 1)] = 0.
  Rng rng(1234);
  const double p = 0.35;
  const int n = 50000;
  for (const auto* gen : kGenerators) {
    CAPTURE(gen->name);
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
      const int d = rng.bernoulli(p);
      const double g = risk_value_gradient(*gen, d == 1, 1.0 / p);
      sum += g;
      sumsq += g * g;
    }
    const double mean = sum / n;
    const double se = std::sqrt((sumsq / n - mean * mean) / n);
    CHECK(std::abs(mean) <= 3.0 * se);
  }
}

TEST_CASE("domain guard names the offending row") {
  const Dataset data = tiny_dataset(3, 1);
  VectorXd r1 = VectorXd::Constant(3, 2.0);
  VectorXd r0 = VectorXd::Constant(3, 2.0);
  r1[1] = 1.0;  // exactly at the boundary
  CHECK_THROWS_WITH_AS(empirical_risk_values(empirical_balancing(), data.d, r1, r0),
                       doctest::Contains("row 1"), std::domain_error);
  r1[1] = 1.0 + 1e-12;  // below the underflow guard
  CHECK_THROWS_AS(empirical_risk_values(least_squares(), data.d, r1, r0),
                  std::domain_error);
}

TEST_CASE("oracle divergence is zero at the truth and positive elsewhere") {
  DgpConfig cfg;
  cfg.k = 3;
  cfg.n = 400;
  cfg.seed = 77;
  cfg.coef_scale = 0.2;
  const auto [data, truth] = generate_dgp(cfg);
  const SyntheticTruth& tr = truth;
  const CorrectionFn r_true = [&tr](int d, const VectorXd& x) { return tr.r0(d, x); };
  for (const auto* gen : kGenerators) {
    CAPTURE(gen->name);
    CHECK(oracle_divergence(*gen, truth, data, r_true) == doctest::Approx(0.0));
    CHECK(oracle_divergence(*gen, truth, data, constant_r(2.3, 1.9)) > 0.0);
  }
}

TEST_CASE("pointwise least-squares divergence is the squared distance") {
  const auto& gen = least_squares();
  // br(3 | 2) = g(3) - g(2) - g'(2)(3 - 2) = 9 - 4 - 4 = 1 = (3-2)^2
  CHECK(gen.g(3.0) - gen.g(2.0) - gen.dg(2.0) * (3.0 - 2.0) == doctest::Approx(1.0));
}

TEST_CASE("divergence and conditional risk differ by an r-independent constant") {
  DgpConfig cfg;
  cfg.k = 3;
  cfg.n = 300;
  cfg.seed = 101;
  cfg.coef_scale = 0.15;
  const auto [data, truth] = generate_dgp(cfg);
  Rng rng(55);
  for (const auto* gen : kGenerators) {
    CAPTURE(gen->name);
    std::vector<double> constants;
    for (int cand = 0; cand < 10; ++cand) {
      // piecewise-constant candidates keyed on the sign of x1
      const double a1 = 1.2 + 3.0 * rng.uniform01();
      const double a2 = 1.2 + 3.0 * rng.uniform01();
      const double b1 = 1.2 + 3.0 * rng.uniform01();
      const double b2 = 1.2 + 3.0 * rng.uniform01();
      const CorrectionFn r = [a1, a2, b1, b2](int d, const VectorXd& x) {
        if (d == 1) return x[0] > 0.0 ? a1 : a2;
        return x[0] > 0.0 ? b1 : b2;
      };
      constants.push_back(oracle_divergence(*gen, truth, data, r) -
                          conditional_risk(*gen, truth, data, r));
    }
    double lo = constants[0], hi = constants[0];
    for (double c : constants) {
      lo = std::min(lo, c);
      hi = std::max(hi, c);
    }
    CHECK(hi - lo <= 1e-10);
  }
}

TEST_CASE("empirical balancing: reciprocity and the two risk forms agree") {
  Rng rng(7);
  ScoreModel model = ScoreModel::linear(2);
  VectorXd theta(3);
  theta << 0.8, -0.5, 0.2;
  model.set_params(theta);

  // r(1,x) - 1 = 1 / (r(0,x) - 1) whenever r is induced by a propensity model
  for (int i = 0; i < 1000; ++i) {
    VectorXd x(2);
    x << rng.normal(), rng.normal();
    const double r1 = model.eval_r(1, x);
    const double r0 = model.eval_r(0, x);
    CHECK(std::abs((r1 - 1.0) - 1.0 / (r0 - 1.0)) <= 1e-12 * std::max(1.0, r1 - 1.0));
  }

  const Dataset data = tiny_dataset(400, 170, 2, 13);
  const CorrectionFn r = [&model](int d, const VectorXd& x) { return model.eval_r(d, x); };
  const RiskValue general = empirical_risk(empirical_balancing(), data, r);
  // tailored-loss form: (1/n) sum 1[D=1](log(r1-1) + r1) + 1[D=0](log(r0-1) + r0)
  StableSum tailored;
  for (int i = 0; i < data.n(); ++i) {
    const VectorXd xi = data.x.row(i).transpose();
    if (data.d[i] == 1) {
      const double r1 = model.eval_r(1, xi);
      tailored.add(std::log(r1 - 1.0) + r1);
    } else {
      const double r0 = model.eval_r(0, xi);
      tailored.add(std::log(r0 - 1.0) + r0);
    }
  }
  CHECK(general.value == doctest::Approx(tailored.value() / data.n()).epsilon(1e-10));
}

TEST_CASE("surrogate and oracle MSE share their grid argmin over constant models") {
  // Conditional-expectation surrogate risk vs E[(h(r0) - h(r))^2], both with
  // the oracle propensity, over the (a, b) grid {1.1, 1.2, ..., 6}^2.
  for (uint64_t seed : {201u, 202u}) {
    DgpConfig cfg;
    cfg.k = 3;
    cfg.n = 500;
    cfg.seed = seed;
    cfg.coef_scale = 0.3;
    const auto [data, truth] = generate_dgp(cfg);
    const VectorXd e = truth.e0_batch(data.x);
    const VectorXd r01 = truth.r0_batch(1, data.x);
    const VectorXd r00 = truth.r0_batch(0, data.x);

    int best_sur = -1, best_mse = -1;
    double sur_min = 0.0, mse_min = 0.0;
    int idx = 0;
    for (int ia = 0; ia <= 49; ++ia) {
      const double a = 1.1 + 0.1 * ia;
      for (int ib = 0; ib <= 49; ++ib, ++idx) {
        const double b = 1.1 + 0.1 * ib;
        double sur = 0.0, mse = 0.0;
        for (int i = 0; i < data.n(); ++i) {
          sur += -2.0 * a - 2.0 * b + e[i] * a * a + (1.0 - e[i]) * b * b;
          const double d1 = r01[i] - a;
          const double d0 = r00[i] - b;
          mse += e[i] * d1 * d1 + (1.0 - e[i]) * d0 * d0;
        }
        if (best_sur < 0 || sur < sur_min) {
          sur_min = sur;
          best_sur = idx;
        }
        if (best_mse < 0 || mse < mse_min) {
          mse_min = mse;
          best_mse = idx;
        }
      }
    }
    CHECK(best_sur == best_mse);
  }
}
