#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dbce/config.hpp"
#include "dbce/dgp.hpp"
#include "dbce/estimators.hpp"
#include "dbce/fit.hpp"

namespace dbce {

// One benchmark cell: how the nuisances are produced x the effect estimator.
// nuisance is a Bregman generator name ("ls", "ukl", "eb"), "logistic" (MLE
// baseline), "oracle" (true e0 and mu0), or "none" (outcome regression only).
struct GridCell {
  std::string nuisance;
  std::string family;  // model family for the correction; empty for oracle/none
  Method est = Method::Aipw;

  std::string label() const;
};

// Cell syntax `nuisance:family:estimator`, e.g. "ls:mlp:aipw", "oracle::ipw".
GridCell parse_grid_cell(const std::string& text);

struct BenchConfig {
  DgpConfig dgp;
  int replications = 100;
  std::vector<GridCell> grid;
  uint64_t master_seed = 1;
  int threads = 1;
  int crossfit_k = 0;      // 0 = full-sample nuisances for AIPW
  bool fix_coefs = false;  // share one coefficient draw across replications
  std::string out_csv = "bench.csv";

  MlpSpec mlp;
  KernelSpec kernel;
  // Correction-fit overrides on top of the per-family defaults; <0 / empty
  // means "use the family default".
  double fit_lambda = -1.0;
  int fit_max_iters = -1;
  double fit_tol = -1.0;
  double fit_step_size = -1.0;
  std::string fit_step_rule;

  FamilySpec outcome_family;
  double outcome_lambda = 1e-4;
  int outcome_max_iters = 2000;
  double outcome_tol = 1e-5;

  void validate() const;
  FamilySpec family_spec(const std::string& family_name_str) const;
  FitConfig correction_config(const GridCell& cell, uint64_t seed) const;
};

struct CellStats {
  std::string method;     // grid cell label without the estimator
  std::string estimator;  // dm | ipw | aipw
  double mse = 0.0;
  double bias = 0.0;
  double mc_se = 0.0;
};

struct BenchResult {
  std::vector<CellStats> cells;
  MatrixXd tau;  // replications x cells
  std::vector<uint64_t> rep_seeds;
  double tau0 = 5.0;
  double runtime_seconds = 0.0;
};

// Runs the replication grid on a worker pool. Each replication owns a seed
// derived from (master_seed, index), so output is identical for any thread
// count and earlier replications keep their seeds when the count changes.
BenchResult run_bench(const BenchConfig& cfg);

void write_bench_csv(const BenchConfig& cfg, const BenchResult& res,
                     const std::string& path);
// JSON sidecar with the resolved config and all per-replication seeds.
void write_bench_json(const BenchConfig& cfg, const BenchResult& res,
                      const std::string& path);

BenchConfig bench_config_from_kv(const KeyValueConfig& kv);
// Every key with its default, as accepted by `simulate --config`.
std::string default_bench_config_text();

// Configuration for `fit --config` (single-correction fits).
FitConfig fit_config_from_kv(const KeyValueConfig& kv);
std::string default_fit_config_text();

}  // namespace dbce
