#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "dbce/bench.hpp"
#include "dbce/config.hpp"
#include "dbce/dataset.hpp"
#include "dbce/estimators.hpp"
#include "dbce/fit.hpp"

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw dbce::ConfigError("cannot open " + path);
  json j;
  in >> j;
  return j;
}

void write_json_file(const json& j, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

// Family spec matching an already-fitted model, for per-fold refits.
dbce::FamilySpec spec_of(const dbce::ScoreModel& model) {
  dbce::FamilySpec spec;
  spec.family = model.family();
  switch (model.family()) {
    case dbce::Family::Linear:
      spec.linear.intercept_only = model.intercept_only();
      break;
    case dbce::Family::Kernel:
      spec.kernel.bandwidth = model.bandwidth();
      spec.kernel.max_anchors = static_cast<int>(model.anchors().rows());
      break;
    case dbce::Family::Mlp:
      spec.mlp = model.mlp_spec();
      break;
  }
  return spec;
}

struct SimulateArgs {
  std::string config_path;
  std::optional<std::string> out;
  std::optional<uint64_t> seed;
  std::optional<int> threads;
};

int run_simulate(const SimulateArgs& args) {
  dbce::BenchConfig cfg;
  try {
    cfg = dbce::bench_config_from_kv(dbce::KeyValueConfig::from_file(args.config_path));
    if (args.out) cfg.out_csv = *args.out;
    if (args.seed) cfg.master_seed = *args.seed;
    if (args.threads) cfg.threads = *args.threads;
    cfg.validate();
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  try {
    const dbce::BenchResult res = dbce::run_bench(cfg);
    dbce::write_bench_csv(cfg, res, cfg.out_csv);
    dbce::write_bench_json(cfg, res, cfg.out_csv + ".json");
    std::cout << "wrote " << cfg.out_csv << " (" << res.cells.size() << " cells, "
              << cfg.replications << " replications, " << res.runtime_seconds << " s)\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "simulate failed: " << e.what() << "\n";
    return kExitRuntime;
  }
}

struct FitArgs {
  std::string data_path;
  std::string config_path;
  std::string out_path = "correction.json";
  std::optional<uint64_t> seed;
};

int run_fit(const FitArgs& args) {
  dbce::Dataset data;
  dbce::FitConfig cfg;
  try {
    cfg = args.config_path.empty()
              ? dbce::default_fit_config(dbce::Family::Linear)
              : dbce::fit_config_from_kv(dbce::KeyValueConfig::from_file(args.config_path));
    if (args.seed) cfg.seed = *args.seed;
    data = dbce::load_csv(args.data_path);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
  try {
    const dbce::FittedCorrection corr = dbce::fit_correction(data, cfg);
    write_json_file(corr.to_json(), args.out_path);
    const dbce::BalanceReport bal = dbce::diagnostics(data, corr);
    std::cout << "generator " << corr.generator << ", lambda " << corr.lambda
              << (corr.converged ? ", converged" : ", NOT converged") << " (grad norm "
              << corr.grad_norm << ", " << corr.loss_trace.size() - 1 << " iterations)\n"
              << "final risk " << corr.loss_trace[corr.loss_trace.size() - 1] << "\n"
              << "treated weight mean " << bal.treated_weight_mean
              << ", control weight mean " << bal.control_weight_mean << "\n"
              << "wrote " << args.out_path << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "fit failed: " << e.what() << "\n";
    return kExitRuntime;
  }
}

struct EstimateArgs {
  std::string data_path;
  std::string method = "ipw";
  std::string estimand = "ate";
  std::string correction_path;
  std::string weights_path;
  std::string fit_weights_family;
  std::string mu = "zero";  // zero | fit
  std::string outcome_family = "linear";
  double outcome_lambda = 1e-4;
  int crossfit = 0;
  std::optional<uint64_t> seed;
};

int run_estimate(const EstimateArgs& args) {
  dbce::Dataset data;
  dbce::Method method;
  bool att = false;
  std::optional<dbce::FittedCorrection> corr;
  std::optional<dbce::AttWeights> weights;
  dbce::FamilySpec outcome_spec;
  const uint64_t seed = args.seed.value_or(0);
  try {
    data = dbce::load_csv(args.data_path);
    method = dbce::method_by_name(args.method);
    if (args.estimand != "ate" && args.estimand != "att") {
      throw dbce::ConfigError("estimand must be ate or att");
    }
    att = args.estimand == "att";
    if (args.mu != "zero" && args.mu != "fit") {
      throw dbce::ConfigError("--mu must be zero or fit");
    }
    outcome_spec.family = dbce::family_by_name(args.outcome_family);
    if (!args.correction_path.empty()) {
      corr = dbce::FittedCorrection::from_json(load_json_file(args.correction_path));
      if (corr->model.input_dim() != data.k()) {
        throw dbce::ConfigError("correction expects " +
                                std::to_string(corr->model.input_dim()) +
                                " covariates, dataset has " + std::to_string(data.k()));
      }
    }
    if (!args.weights_path.empty()) {
      weights = dbce::AttWeights::from_json(load_json_file(args.weights_path));
      if (weights->model.input_dim() != data.k()) {
        throw dbce::ConfigError("weights expect " +
                                std::to_string(weights->model.input_dim()) +
                                " covariates, dataset has " + std::to_string(data.k()));
      }
    }
    if (att) {
      if (method == dbce::Method::Dm) throw dbce::ConfigError("att supports ipw and aipw");
      if (!weights && args.fit_weights_family.empty()) {
        throw dbce::ConfigError("att needs --weights or --fit-weights");
      }
    } else {
      if (method != dbce::Method::Dm && !corr) {
        throw dbce::ConfigError(args.method + " needs --correction");
      }
      if ((method == dbce::Method::Dm) && args.mu != "fit") {
        throw dbce::ConfigError("dm needs --mu fit");
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    dbce::EstimateReport report;
    if (att) {
      if (!weights) {
        dbce::FamilySpec wspec;
        wspec.family = dbce::family_by_name(args.fit_weights_family);
        weights = dbce::fit_att_weights(data, wspec, args.outcome_lambda, 10000, 1e-8, seed);
      }
      dbce::MuFn mu0 = [](int, const dbce::VectorXd&) { return 0.0; };
      std::optional<dbce::OutcomeFit> om;
      if (args.mu == "fit") {
        om = dbce::fit_outcome(data, outcome_spec, args.outcome_lambda, 2000, 1e-5, seed);
        mu0 = [&om](int d, const dbce::VectorXd& x) { return om->mu(d, x); };
      }
      const auto wfn = [&](const dbce::VectorXd& x) { return weights->w(x); };
      report = dbce::estimate_att(data, wfn, mu0, method);
    } else if (method == dbce::Method::Dm) {
      const dbce::OutcomeFit om =
          dbce::fit_outcome(data, outcome_spec, args.outcome_lambda, 2000, 1e-5, seed);
      report = dbce::estimate_dm(
          data, [&om](int d, const dbce::VectorXd& x) { return om.mu(d, x); });
    } else if (method == dbce::Method::Ipw) {
      report = dbce::estimate_ipw(data, *corr);
    } else {
      dbce::NuisanceTable table;
      if (args.crossfit >= 2) {
        dbce::FitConfig fc = dbce::default_fit_config(corr->model.family());
        fc.family = spec_of(corr->model);
        fc.generator = corr->generator;
        fc.lambda = corr->lambda;
        fc.seed = seed;
        const dbce::FoldPlan folds =
            dbce::make_folds(data.n(), data.d, args.crossfit, dbce::derive_seed(seed, 29));
        table = dbce::crossfit_nuisances(data, fc, outcome_spec, args.outcome_lambda, folds);
      } else {
        table.h_hat = corr->h_at(data.d, data.x);
        table.fold_id = dbce::VectorXi::Constant(data.n(), -1);
        if (args.mu == "fit") {
          const dbce::OutcomeFit om =
              dbce::fit_outcome(data, outcome_spec, args.outcome_lambda, 2000, 1e-5, seed);
          table.mu1 = om.mu_batch(1, data.x);
          table.mu0 = om.mu_batch(0, data.x);
        } else {
          table.mu1 = dbce::VectorXd::Zero(data.n());
          table.mu0 = dbce::VectorXd::Zero(data.n());
        }
      }
      report = dbce::estimate_aipw(data, table);
    }
    if (corr) report.diagnostics = dbce::diagnostics(data, *corr);
    std::cout << report.to_json().dump(2) << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    std::cerr << "estimate failed: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ATE estimation through direct bias-correction term fitting"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "run the synthetic benchmark grid");
  simulate->add_option("--config", sim.config_path, "key = value configuration file")
      ->required();
  std::string sim_out;
  uint64_t sim_seed = 0;
  int sim_threads = 0;
  simulate->add_option("--out", sim_out, "benchmark CSV path (overrides config)");
  simulate->add_option("--seed", sim_seed, "master seed (overrides config)");
  simulate->add_option("--threads", sim_threads, "worker threads (overrides config)");

  FitArgs fit;
  auto* fitc = app.add_subcommand("fit", "fit a bias-correction term to a CSV dataset");
  fitc->add_option("data", fit.data_path, "dataset CSV (y,d,x1..xK)")->required();
  fitc->add_option("--config", fit.config_path, "fit configuration file");
  fitc->add_option("--out", fit.out_path, "output correction JSON");
  uint64_t fit_seed = 0;
  fitc->add_option("--seed", fit_seed, "fit seed (model init, anchor subsample)");

  EstimateArgs est;
  auto* estc = app.add_subcommand("estimate", "compute an effect estimate");
  estc->add_option("data", est.data_path, "dataset CSV (y,d,x1..xK)")->required();
  estc->add_option("--method", est.method, "dm | ipw | aipw");
  estc->add_option("--estimand", est.estimand, "ate | att");
  estc->add_option("--correction", est.correction_path, "fitted correction JSON");
  estc->add_option("--weights", est.weights_path, "fitted att weights JSON");
  estc->add_option("--fit-weights", est.fit_weights_family,
                   "fit att weights in-process with this family");
  estc->add_option("--mu", est.mu, "outcome nuisance: zero | fit");
  estc->add_option("--outcome-family", est.outcome_family, "linear | kernel | mlp");
  estc->add_option("--outcome-lambda", est.outcome_lambda, "outcome ridge penalty");
  estc->add_option("--crossfit", est.crossfit, "cross-fitting folds for aipw (0 = off)");
  uint64_t est_seed = 0;
  estc->add_option("--seed", est_seed, "seed for in-process fits");

  auto* print = app.add_subcommand("print-config", "print all config keys with defaults");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  if (simulate->parsed()) {
    if (simulate->count("--out")) sim.out = sim_out;
    if (simulate->count("--seed")) sim.seed = sim_seed;
    if (simulate->count("--threads")) sim.threads = sim_threads;
    return run_simulate(sim);
  }
  if (fitc->parsed()) {
    if (fitc->count("--seed")) fit.seed = fit_seed;
    return run_fit(fit);
  }
  if (estc->parsed()) {
    if (estc->count("--seed")) est.seed = est_seed;
    return run_estimate(est);
  }
  if (print->parsed()) {
    std::cout << "# ---- simulate ----\n"
              << dbce::default_bench_config_text() << "\n# ---- fit ----\n"
              << dbce::default_fit_config_text();
    return kExitOk;
  }
  return kExitConfig;
}
