#include "dbce/bench.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <thread>

#include <nlohmann/json.hpp>

namespace dbce {

using nlohmann::json;

std::string GridCell::label() const {
  return family.empty() ? nuisance : nuisance + ":" + family;
}

GridCell parse_grid_cell(const std::string& text) {
  const size_t c1 = text.find(':');
  const size_t c2 = text.find(':', c1 == std::string::npos ? c1 : c1 + 1);
  if (c1 == std::string::npos || c2 == std::string::npos) {
    throw ConfigError("grid cell '" + text + "': expected nuisance:family:estimator");
  }
  GridCell cell;
  cell.nuisance = text.substr(0, c1);
  cell.family = text.substr(c1 + 1, c2 - c1 - 1);
  const std::string est = text.substr(c2 + 1);
  try {
    cell.est = method_by_name(est);
  } catch (const std::exception& e) {
    throw ConfigError("grid cell '" + text + "': " + e.what());
  }

  const bool fitted = cell.nuisance == "ls" || cell.nuisance == "ukl" ||
                      cell.nuisance == "eb" || cell.nuisance == "logistic";
  if (!fitted && cell.nuisance != "oracle" && cell.nuisance != "none") {
    throw ConfigError("grid cell '" + text + "': unknown nuisance '" + cell.nuisance + "'");
  }
  if (fitted && cell.family.empty()) {
    throw ConfigError("grid cell '" + text + "': fitted nuisances need a model family");
  }
  if (!fitted && !cell.family.empty()) {
    throw ConfigError("grid cell '" + text + "': '" + cell.nuisance +
                      "' takes no model family");
  }
  if (cell.nuisance == "none" && cell.est != Method::Dm) {
    throw ConfigError("grid cell '" + text + "': 'none' supports only the dm estimator");
  }
  if (fitted && cell.est == Method::Dm) {
    throw ConfigError("grid cell '" + text + "': dm does not use a fitted correction");
  }
  if (!cell.family.empty()) family_by_name(cell.family);  // validates
  return cell;
}

void BenchConfig::validate() const {
  dgp.validate();
  if (replications < 1) throw ConfigError("bench: replications must be >= 1");
  if (grid.empty()) throw ConfigError("bench: estimator grid must be non-empty");
  if (threads < 1) throw ConfigError("bench: threads must be >= 1");
  if (crossfit_k == 1 || crossfit_k < 0) {
    throw ConfigError("bench: crossfit must be 0 (off) or >= 2 folds");
  }
}

FamilySpec BenchConfig::family_spec(const std::string& family_name_str) const {
  FamilySpec spec;
  spec.family = family_by_name(family_name_str);
  spec.mlp = mlp;
  spec.kernel = kernel;
  return spec;
}

FitConfig BenchConfig::correction_config(const GridCell& cell, uint64_t seed) const {
  FamilySpec spec = family_spec(cell.family);
  FitConfig cfg = default_fit_config(spec.family);
  cfg.family = spec;
  cfg.generator = cell.nuisance;
  cfg.seed = seed;
  if (fit_lambda >= 0.0) {
    cfg.lambda = fit_lambda;
    cfg.lambda_auto = false;
  }
  if (fit_max_iters > 0) cfg.max_iters = fit_max_iters;
  if (fit_tol > 0.0) cfg.tol = fit_tol;
  if (fit_step_size > 0.0) cfg.step_size = fit_step_size;
  if (!fit_step_rule.empty()) {
    if (fit_step_rule == "backtracking") {
      cfg.step_rule = StepRule::Backtracking;
    } else if (fit_step_rule == "fixed") {
      cfg.step_rule = StepRule::FixedStep;
    } else {
      throw ConfigError("fit.step_rule must be 'backtracking' or 'fixed'");
    }
  }
  return cfg;
}

namespace {

// All estimates of one replication, in grid order.
void run_replication(const BenchConfig& cfg, int rep, uint64_t seed,
                     const DgpCoefs* shared_coefs, double* tau_out) {
  DgpConfig dgp = cfg.dgp;
  dgp.seed = seed;
  auto [data, truth] =
      shared_coefs != nullptr ? generate_dgp(dgp, *shared_coefs) : generate_dgp(dgp);

  std::map<std::string, FittedCorrection> corr_cache;
  std::map<std::string, NuisanceTable> table_cache;
  std::optional<OutcomeFit> outcome;
  std::optional<NuisanceTable> oracle_table;

  const auto get_corr = [&](const GridCell& cell) -> const FittedCorrection& {
    const std::string key = cell.label();
    auto it = corr_cache.find(key);
    if (it == corr_cache.end()) {
      const FitConfig fc = cfg.correction_config(cell, derive_seed(seed, 17));
      it = corr_cache.emplace(key, fit_correction(data, fc)).first;
    }
    return it->second;
  };
  const auto get_outcome = [&]() -> const OutcomeFit& {
    if (!outcome) {
      outcome = fit_outcome(data, cfg.outcome_family, cfg.outcome_lambda,
                            cfg.outcome_max_iters, cfg.outcome_tol, derive_seed(seed, 23));
    }
    return *outcome;
  };
  const auto get_oracle_table = [&]() -> const NuisanceTable& {
    if (!oracle_table) {
      NuisanceTable t;
      t.h_hat.resize(data.n());
      t.mu1 = truth.mu0_batch(1, data.x);
      t.mu0 = truth.mu0_batch(0, data.x);
      t.fold_id = VectorXi::Constant(data.n(), -1);
      for (int i = 0; i < data.n(); ++i) {
        t.h_hat[i] = oracle_h(truth, data.d[i], data.x.row(i).transpose());
      }
      oracle_table = std::move(t);
    }
    return *oracle_table;
  };
  // Full nuisance table for AIPW cells: cross-fitted when configured, shared
  // full-sample fits otherwise.
  const auto get_table = [&](const GridCell& cell) -> const NuisanceTable& {
    const std::string key = cell.label();
    auto it = table_cache.find(key);
    if (it == table_cache.end()) {
      const FitConfig fc = cfg.correction_config(cell, derive_seed(seed, 17));
      NuisanceTable t;
      if (cfg.crossfit_k >= 2) {
        const FoldPlan folds =
            make_folds(data.n(), data.d, cfg.crossfit_k, derive_seed(seed, 29));
        t = crossfit_nuisances(data, fc, cfg.outcome_family, cfg.outcome_lambda, folds);
      } else {
        const FittedCorrection& corr = get_corr(cell);
        const OutcomeFit& om = get_outcome();
        t.h_hat = corr.h_at(data.d, data.x);
        t.mu1 = om.mu_batch(1, data.x);
        t.mu0 = om.mu_batch(0, data.x);
        t.fold_id = VectorXi::Constant(data.n(), -1);
      }
      it = table_cache.emplace(key, std::move(t)).first;
    }
    return it->second;
  };

  for (size_t c = 0; c < cfg.grid.size(); ++c) {
    const GridCell& cell = cfg.grid[c];
    EstimateReport rep_out;
    if (cell.nuisance == "oracle") {
      const NuisanceTable& t = get_oracle_table();
      switch (cell.est) {
        case Method::Dm: rep_out = estimate_dm(data, t); break;
        case Method::Ipw: rep_out = estimate_ipw_values(data, t.h_hat); break;
        case Method::Aipw: rep_out = estimate_aipw(data, t); break;
      }
    } else if (cell.nuisance == "none") {
      NuisanceTable t;
      const OutcomeFit& om = get_outcome();
      t.mu1 = om.mu_batch(1, data.x);
      t.mu0 = om.mu_batch(0, data.x);
      rep_out = estimate_dm(data, t);
    } else if (cell.est == Method::Ipw) {
      rep_out = estimate_ipw(data, get_corr(cell));
    } else {
      rep_out = estimate_aipw(data, get_table(cell));
    }
    tau_out[c] = rep_out.tau_hat;
  }
  (void)rep;
}

}  // namespace

BenchResult run_bench(const BenchConfig& cfg) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();

  const int reps = cfg.replications;
  const int ncells = static_cast<int>(cfg.grid.size());
  BenchResult res;
  res.tau.resize(reps, ncells);
  res.rep_seeds.resize(static_cast<size_t>(reps));
  for (int r = 0; r < reps; ++r) res.rep_seeds[static_cast<size_t>(r)] = derive_seed(cfg.master_seed, static_cast<uint64_t>(r));

  std::optional<DgpCoefs> shared_coefs;
  if (cfg.fix_coefs) {
    Rng rng(derive_seed(cfg.master_seed, 0xC0EF));
    shared_coefs = draw_coefs(cfg.dgp, rng);
  }

  std::atomic<int> next{0};
  std::vector<std::string> errors(static_cast<size_t>(reps));
  std::vector<char> failed(static_cast<size_t>(reps), 0);

  const auto worker = [&]() {
    for (;;) {
      const int r = next.fetch_add(1);
      if (r >= reps) return;
      try {
        run_replication(cfg, r, res.rep_seeds[static_cast<size_t>(r)],
                        shared_coefs ? &*shared_coefs : nullptr, res.tau.row(r).data());
      } catch (const std::exception& e) {
        failed[static_cast<size_t>(r)] = 1;
        errors[static_cast<size_t>(r)] = e.what();
      }
    }
  };

  const int nthreads = std::min(cfg.threads, reps);
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(nthreads));
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  for (int r = 0; r < reps; ++r) {
    if (failed[static_cast<size_t>(r)]) {
      throw std::runtime_error("replication " + std::to_string(r) + " (seed " +
                               std::to_string(res.rep_seeds[static_cast<size_t>(r)]) +
                               ") failed: " + errors[static_cast<size_t>(r)]);
    }
  }

  res.tau0 = 5.0;
  for (int c = 0; c < ncells; ++c) {
    StableSum err, err2;
    for (int r = 0; r < reps; ++r) {
      const double e = res.tau(r, c) - res.tau0;
      err.add(e);
      err2.add(e * e);
    }
    const double bias = err.value() / reps;
    const double mse = err2.value() / reps;
    const double var = std::max(0.0, mse - bias * bias) * reps / std::max(1, reps - 1);
    CellStats stats;
    stats.method = cfg.grid[static_cast<size_t>(c)].label();
    stats.estimator = method_name(cfg.grid[static_cast<size_t>(c)].est);
    stats.mse = mse;
    stats.bias = bias;
    stats.mc_se = std::sqrt(var / reps);
    res.cells.push_back(std::move(stats));
  }

  res.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

namespace {

std::string fmt17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

json config_to_json(const BenchConfig& cfg) {
  json j;
  j["dgp"] = {{"k", cfg.dgp.k},
              {"model", cfg.dgp.outcome_model == OutcomeModel::Model1 ? 1 : 2},
              {"n", cfg.dgp.n},
              {"coef_scale", cfg.dgp.coef_scale}};
  j["replications"] = cfg.replications;
  std::vector<std::string> cells;
  for (const auto& cell : cfg.grid) {
    cells.push_back(cell.nuisance + ":" + cell.family + ":" + method_name(cell.est));
  }
  j["grid"] = cells;
  j["master_seed"] = cfg.master_seed;
  j["threads"] = cfg.threads;
  j["crossfit"] = cfg.crossfit_k;
  j["fix_coefs"] = cfg.fix_coefs;
  j["out"] = cfg.out_csv;
  j["mlp"] = {{"hidden_layers", cfg.mlp.hidden_layers},
              {"width", cfg.mlp.width},
              {"activation", cfg.mlp.activation == Activation::Elu ? "elu" : "relu"}};
  j["kernel"] = {{"bandwidth", cfg.kernel.bandwidth},
                 {"max_anchors", cfg.kernel.max_anchors}};
  j["fit"] = {{"lambda", cfg.fit_lambda},
              {"max_iters", cfg.fit_max_iters},
              {"tol", cfg.fit_tol},
              {"step_size", cfg.fit_step_size},
              {"step_rule", cfg.fit_step_rule}};
  j["outcome"] = {{"family", family_name(cfg.outcome_family.family)},
                  {"lambda", cfg.outcome_lambda},
                  {"max_iters", cfg.outcome_max_iters},
                  {"tol", cfg.outcome_tol}};
  return j;
}

}  // namespace

void write_bench_csv(const BenchConfig& cfg, const BenchResult& res,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "model,k,method,estimator,mse,bias,mc_se\n";
  const std::string model = cfg.dgp.outcome_model == OutcomeModel::Model1 ? "model1" : "model2";
  for (const auto& cell : res.cells) {
    out << model << ',' << cfg.dgp.k << ',' << cell.method << ',' << cell.estimator << ','
        << fmt17(cell.mse) << ',' << fmt17(cell.bias) << ',' << fmt17(cell.mc_se) << "\n";
  }
  if (!out) throw std::runtime_error("failed writing " + path);
}

void write_bench_json(const BenchConfig& cfg, const BenchResult& res,
                      const std::string& path) {
  json j;
  j["config"] = config_to_json(cfg);
  j["rep_seeds"] = res.rep_seeds;
  j["tau0"] = res.tau0;
  j["runtime_seconds"] = res.runtime_seconds;
  json cells = json::array();
  for (const auto& cell : res.cells) {
    cells.push_back({{"method", cell.method},
                     {"estimator", cell.estimator},
                     {"mse", cell.mse},
                     {"bias", cell.bias},
                     {"mc_se", cell.mc_se}});
  }
  j["cells"] = cells;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

BenchConfig bench_config_from_kv(const KeyValueConfig& kv) {
  static const std::set<std::string> known = {
      "dgp.k",           "dgp.model",        "dgp.n",          "dgp.coef_scale",
      "replications",    "grid",             "master_seed",    "threads",
      "crossfit",        "fix_coefs",        "out",            "mlp.hidden_layers",
      "mlp.width",       "mlp.activation",   "kernel.bandwidth",
      "kernel.max_anchors", "fit.lambda",    "fit.max_iters",  "fit.tol",
      "fit.step_size",   "fit.step_rule",    "outcome.family", "outcome.lambda",
      "outcome.max_iters", "outcome.tol"};
  kv.check_known(known);

  BenchConfig cfg;
  cfg.dgp.k = kv.get_int("dgp.k", 3);
  const int model = kv.get_int("dgp.model", 1);
  if (model != 1 && model != 2) throw ConfigError("dgp.model must be 1 or 2");
  cfg.dgp.outcome_model = model == 1 ? OutcomeModel::Model1 : OutcomeModel::Model2;
  cfg.dgp.n = kv.get_int("dgp.n", 3000);
  cfg.dgp.coef_scale = kv.get_double("dgp.coef_scale", 0.5);
  cfg.replications = kv.get_int("replications", 100);
  cfg.master_seed = kv.get_u64("master_seed", 1);
  cfg.threads = kv.get_int("threads", 1);
  cfg.crossfit_k = kv.get_int("crossfit", 0);
  cfg.fix_coefs = kv.get_bool("fix_coefs", false);
  cfg.out_csv = kv.get_str("out", "bench.csv");

  const std::string grid = kv.get_str("grid", "ls:mlp:aipw,ls:mlp:ipw,oracle::aipw");
  size_t start = 0;
  while (start <= grid.size()) {
    size_t comma = grid.find(',', start);
    if (comma == std::string::npos) comma = grid.size();
    std::string cell = grid.substr(start, comma - start);
    const size_t a = cell.find_first_not_of(" \t");
    const size_t b = cell.find_last_not_of(" \t");
    if (a != std::string::npos) {
      cfg.grid.push_back(parse_grid_cell(cell.substr(a, b - a + 1)));
    }
    start = comma + 1;
  }

  cfg.mlp.hidden_layers = kv.get_int("mlp.hidden_layers", 3);
  cfg.mlp.width = kv.get_int("mlp.width", 100);
  const std::string act = kv.get_str("mlp.activation", "elu");
  if (act != "elu" && act != "relu") throw ConfigError("mlp.activation must be elu or relu");
  cfg.mlp.activation = act == "elu" ? Activation::Elu : Activation::Relu;
  cfg.kernel.bandwidth = kv.get_double("kernel.bandwidth", 0.0);
  cfg.kernel.max_anchors = kv.get_int("kernel.max_anchors", 2000);

  cfg.fit_lambda = kv.get_double("fit.lambda", -1.0);
  cfg.fit_max_iters = kv.get_int("fit.max_iters", -1);
  cfg.fit_tol = kv.get_double("fit.tol", -1.0);
  cfg.fit_step_size = kv.get_double("fit.step_size", -1.0);
  cfg.fit_step_rule = kv.get_str("fit.step_rule", "");

  cfg.outcome_family = cfg.family_spec(kv.get_str("outcome.family", "mlp"));
  cfg.outcome_lambda = kv.get_double("outcome.lambda", 1e-4);
  cfg.outcome_max_iters = kv.get_int("outcome.max_iters", 2000);
  cfg.outcome_tol = kv.get_double("outcome.tol", 1e-5);

  cfg.validate();
  return cfg;
}

FitConfig fit_config_from_kv(const KeyValueConfig& kv) {
  static const std::set<std::string> known = {
      "generator",       "family",          "lambda",       "lambda_auto",
      "max_iters",       "tol",             "step_rule",    "step_size",
      "linear.intercept_only", "mlp.hidden_layers", "mlp.width", "mlp.activation",
      "kernel.bandwidth", "kernel.max_anchors"};
  kv.check_known(known);

  FamilySpec spec;
  spec.family = family_by_name(kv.get_str("family", "linear"));
  spec.linear.intercept_only = kv.get_bool("linear.intercept_only", false);
  spec.mlp.hidden_layers = kv.get_int("mlp.hidden_layers", 3);
  spec.mlp.width = kv.get_int("mlp.width", 100);
  const std::string act = kv.get_str("mlp.activation", "elu");
  if (act != "elu" && act != "relu") throw ConfigError("mlp.activation must be elu or relu");
  spec.mlp.activation = act == "elu" ? Activation::Elu : Activation::Relu;
  spec.kernel.bandwidth = kv.get_double("kernel.bandwidth", 0.0);
  spec.kernel.max_anchors = kv.get_int("kernel.max_anchors", 2000);

  FitConfig cfg = default_fit_config(spec.family);
  cfg.family = spec;
  cfg.generator = kv.get_str("generator", "ls");
  if (kv.has("lambda")) {
    cfg.lambda = kv.get_double("lambda", cfg.lambda);
    cfg.lambda_auto = false;
  }
  if (kv.has("lambda_auto")) cfg.lambda_auto = kv.get_bool("lambda_auto", cfg.lambda_auto);
  cfg.max_iters = kv.get_int("max_iters", cfg.max_iters);
  cfg.tol = kv.get_double("tol", cfg.tol);
  cfg.step_size = kv.get_double("step_size", cfg.step_size);
  const std::string rule = kv.get_str("step_rule", "backtracking");
  if (rule == "backtracking") {
    cfg.step_rule = StepRule::Backtracking;
  } else if (rule == "fixed") {
    cfg.step_rule = StepRule::FixedStep;
  } else {
    throw ConfigError("step_rule must be 'backtracking' or 'fixed'");
  }
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

std::string default_fit_config_text() {
  return R"(# dbce fit configuration (all keys with their defaults)
generator = ls            # ls | ukl | eb | logistic
family = linear           # linear | kernel | mlp
lambda = 1e-4             # family default if omitted; kernel fits use lambda_auto
lambda_auto = 0           # kernel only: lambda = 1e-3 / sqrt(n)
max_iters = 10000         # family default: 10000 (linear/kernel), 2000 (mlp)
tol = 1e-8                # family default: 1e-8 (linear/kernel), 1e-5 (mlp)
step_rule = backtracking  # backtracking | fixed
step_size = 0.5
linear.intercept_only = 0
mlp.hidden_layers = 3
mlp.width = 100
mlp.activation = elu
kernel.bandwidth = 0
kernel.max_anchors = 2000
)";
}

std::string default_bench_config_text() {
  return R"(# dbce simulate configuration (all keys with their defaults)

# synthetic design
dgp.k = 3                 # covariate dimension (>= 3)
dgp.model = 1             # outcome model: 1 or 2
dgp.n = 3000              # sample size per replication
dgp.coef_scale = 0.5      # variance of the score coefficient draws

# replication protocol
replications = 100
master_seed = 1
threads = 1
fix_coefs = 0             # 1 = one coefficient draw shared by all replications
out = bench.csv           # CSV path; a .json sidecar is written next to it

# estimator grid: comma-separated nuisance:family:estimator cells.
# nuisance: ls | ukl | eb | logistic | oracle | none
# family:   linear | kernel | mlp (empty for oracle/none)
# estimator: dm | ipw | aipw
grid = ls:mlp:aipw,ls:mlp:ipw,oracle::aipw

# cross-fitting for AIPW nuisances: 0 = off, otherwise the number of folds
crossfit = 0

# model structure
mlp.hidden_layers = 3
mlp.width = 100
mlp.activation = elu      # elu | relu
kernel.bandwidth = 0      # 0 = median pairwise distance heuristic
kernel.max_anchors = 2000

# correction fit overrides (negative / empty = per-family default:
# linear/kernel: lambda 1e-4, tol 1e-8, max_iters 10000;
# mlp: lambda 1e-4, tol 1e-5, max_iters 2000; kernel uses lambda 1e-3/sqrt(n))
fit.lambda = -1
fit.max_iters = -1
fit.tol = -1
fit.step_size = -1
fit.step_rule =           # backtracking | fixed

# outcome regressions (shared by dm and aipw cells)
outcome.family = mlp
outcome.lambda = 1e-4
outcome.max_iters = 2000
outcome.tol = 1e-5
)";
}

}  // namespace dbce
