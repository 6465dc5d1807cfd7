#include "dbce/estimators.hpp"

#include <cmath>
#include <stdexcept>

namespace dbce {

using nlohmann::json;

Method method_by_name(const std::string& name) {
  if (name == "dm") return Method::Dm;
  if (name == "ipw") return Method::Ipw;
  if (name == "aipw") return Method::Aipw;
  throw std::invalid_argument("unknown method '" + name + "' (expected dm, ipw or aipw)");
}

std::string method_name(Method m) {
  switch (m) {
    case Method::Dm: return "dm";
    case Method::Ipw: return "ipw";
    case Method::Aipw: return "aipw";
  }
  return "?";
}

json EstimateReport::to_json() const {
  json j;
  j["estimand"] = estimand == Estimand::Ate ? "ate" : "att";
  j["method"] = method_name(method);
  j["tau_hat"] = tau_hat;
  j["variance_hat"] = variance_hat;
  j["ci95"] = {ci95.first, ci95.second};
  j["n"] = n;
  if (diagnostics) {
    json d;
    d["treated_weight_mean"] = diagnostics->treated_weight_mean;
    d["control_weight_mean"] = diagnostics->control_weight_mean;
    if (diagnostics->oracle_l2) d["oracle_l2"] = *diagnostics->oracle_l2;
    j["diagnostics"] = d;
  }
  return j;
}

namespace {

// Point estimate and influence variance from per-unit contributions.
EstimateReport from_contributions(const VectorXd& psi, Estimand estimand, Method method) {
  EstimateReport rep;
  rep.estimand = estimand;
  rep.method = method;
  rep.n = static_cast<int>(psi.size());
  rep.tau_hat = stable_mean(psi);
  StableSum sq;
  for (Eigen::Index i = 0; i < psi.size(); ++i) {
    const double dev = psi[i] - rep.tau_hat;
    sq.add(dev * dev);
  }
  rep.variance_hat = sq.value() / static_cast<double>(psi.size());
  const double half = 1.96 * std::sqrt(rep.variance_hat / static_cast<double>(psi.size()));
  rep.ci95 = {rep.tau_hat - half, rep.tau_hat + half};
  return rep;
}

}  // namespace

EstimateReport estimate_dm(const Dataset& data, const MuFn& mu) {
  VectorXd psi(data.n());
  for (int i = 0; i < data.n(); ++i) {
    const VectorXd xi = data.x.row(i).transpose();
    psi[i] = mu(1, xi) - mu(0, xi);
  }
  return from_contributions(psi, Estimand::Ate, Method::Dm);
}

EstimateReport estimate_dm(const Dataset&, const NuisanceTable& nuisances) {
  return from_contributions(nuisances.mu1 - nuisances.mu0, Estimand::Ate, Method::Dm);
}

EstimateReport estimate_ipw_values(const Dataset& data, const VectorXd& h_at_obs) {
  if (h_at_obs.size() != data.n()) {
    throw std::invalid_argument("estimate_ipw: h values must have length n");
  }
  VectorXd psi(data.n());
  for (int i = 0; i < data.n(); ++i) psi[i] = h_at_obs[i] * data.y[i];
  return from_contributions(psi, Estimand::Ate, Method::Ipw);
}

EstimateReport estimate_ipw(const Dataset& data, const FittedCorrection& corr) {
  return estimate_ipw_values(data, corr.h_at(data.d, data.x));
}

EstimateReport estimate_aipw(const Dataset& data, const NuisanceTable& nuisances) {
  if (nuisances.h_hat.size() != data.n()) {
    throw std::invalid_argument("estimate_aipw: nuisance table must have length n");
  }
  VectorXd psi(data.n());
  for (int i = 0; i < data.n(); ++i) {
    const double mu_obs = data.d[i] == 1 ? nuisances.mu1[i] : nuisances.mu0[i];
    psi[i] = nuisances.h_hat[i] * (data.y[i] - mu_obs) + nuisances.mu1[i] - nuisances.mu0[i];
  }
  return from_contributions(psi, Estimand::Ate, Method::Aipw);
}

VectorXd AttWeights::w_batch(const MatrixXd& x) const {
  return model.eval_f_batch(x).array().exp().matrix();
}

json AttWeights::to_json() const {
  return json{{"model", model.to_json()}, {"lambda", lambda}, {"converged", converged}};
}

AttWeights AttWeights::from_json(const json& j) {
  return AttWeights{ScoreModel::from_json(j.at("model")), j.at("lambda").get<double>(),
                    j.at("converged").get<bool>()};
}

AttWeights fit_att_weights(const Dataset& data, const FamilySpec& family, double lambda,
                           int max_iters, double tol, uint64_t seed) {
  FitConfig cfg;
  cfg.family = family;
  cfg.lambda = lambda;
  cfg.max_iters = max_iters;
  cfg.tol = tol;
  cfg.seed = seed;
  ScoreModel model = ScoreModel::make(family, data.x, seed);
  OddsWeightLoss loss(data.d);
  const MinimizeResult res = minimize(model, data.x, loss, lambda, cfg);
  return AttWeights{std::move(model), lambda, res.converged};
}

EstimateReport estimate_att(const Dataset& data, const WeightFn& w, const MuFn& mu0_hat,
                            Method method) {
  const int n1 = data.n_treated();
  if (n1 == 0) throw std::invalid_argument("estimate_att: no treated units");
  if (method == Method::Dm) {
    throw std::invalid_argument("estimate_att: method must be ipw or aipw");
  }
  const double pi_hat = static_cast<double>(n1) / static_cast<double>(data.n());
  VectorXd psi(data.n());
  for (int i = 0; i < data.n(); ++i) {
    const VectorXd xi = data.x.row(i).transpose();
    const double wt = data.d[i] == 1 ? 1.0 / pi_hat : -w(xi) / pi_hat;
    if (method == Method::Ipw) {
      psi[i] = wt * data.y[i];
    } else {
      psi[i] = wt * (data.y[i] - mu0_hat(0, xi));
    }
  }
  EstimateReport rep = from_contributions(psi, Estimand::Att, method);
  return rep;
}

BalanceReport diagnostics(const Dataset& data, const FittedCorrection& corr,
                          const SyntheticTruth* truth) {
  const VectorXd r1 = corr.r_batch(1, data.x);
  const VectorXd r0 = corr.r_batch(0, data.x);
  StableSum t_mean, c_mean;
  for (int i = 0; i < data.n(); ++i) {
    t_mean.add(data.d[i] == 1 ? r1[i] : 0.0);
    c_mean.add(data.d[i] == 0 ? r0[i] : 0.0);
  }
  BalanceReport rep;
  rep.treated_weight_mean = t_mean.value() / static_cast<double>(data.n());
  rep.control_weight_mean = c_mean.value() / static_cast<double>(data.n());
  if (truth != nullptr) {
    StableSum l2;
    for (int i = 0; i < data.n(); ++i) {
      const VectorXd xi = data.x.row(i).transpose();
      const double e = truth->e0(xi);
      const double d1 = r1[i] - truth->r0(1, xi);
      const double d0 = r0[i] - truth->r0(0, xi);
      l2.add(e * d1 * d1 + (1.0 - e) * d0 * d0);
    }
    rep.oracle_l2 = l2.value() / static_cast<double>(data.n());
  }
  return rep;
}

}  // namespace dbce
