#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dbce/bench.hpp"
#include "dbce/bregman.hpp"
#include "dbce/dataset.hpp"
#include "dbce/dgp.hpp"
#include "dbce/estimators.hpp"
#include "dbce/fit.hpp"

namespace py = pybind11;
using namespace dbce;

namespace {

FamilySpec make_family_spec(const std::string& family, bool intercept_only,
                            double bandwidth, int max_anchors, int hidden_layers,
                            int width, const std::string& activation) {
  FamilySpec spec;
  spec.family = family_by_name(family);
  spec.linear.intercept_only = intercept_only;
  spec.kernel.bandwidth = bandwidth;
  spec.kernel.max_anchors = max_anchors;
  spec.mlp.hidden_layers = hidden_layers;
  spec.mlp.width = width;
  spec.mlp.activation = activation == "relu" ? Activation::Relu : Activation::Elu;
  return spec;
}

}  // namespace

PYBIND11_MODULE(_dbce, m) {
  m.doc() = "ATE estimation through direct bias-correction term fitting";

  py::class_<Dataset>(m, "Dataset")
      .def(py::init([](MatrixXd x, VectorXi d, VectorXd y) {
             return Dataset::make(std::move(x), std::move(d), std::move(y));
           }),
           py::arg("x"), py::arg("d"), py::arg("y"))
      .def_readonly("x", &Dataset::x)
      .def_readonly("d", &Dataset::d)
      .def_readonly("y", &Dataset::y)
      .def_property_readonly("n", &Dataset::n)
      .def_property_readonly("k", &Dataset::k)
      .def("n_treated", &Dataset::n_treated)
      .def("n_control", &Dataset::n_control);

  m.def("load_csv", &load_csv, py::arg("path"));
  m.def("write_csv", &write_csv, py::arg("data"), py::arg("path"));

  py::class_<DgpConfig>(m, "DgpConfig")
      .def(py::init([](int k, int model, int n, uint64_t seed, double coef_scale) {
             DgpConfig cfg;
             cfg.k = k;
             cfg.outcome_model = model == 2 ? OutcomeModel::Model2 : OutcomeModel::Model1;
             cfg.n = n;
             cfg.seed = seed;
             cfg.coef_scale = coef_scale;
             return cfg;
           }),
           py::arg("k") = 3, py::arg("model") = 1, py::arg("n") = 3000,
           py::arg("seed") = 0, py::arg("coef_scale") = 0.5)
      .def_readwrite("k", &DgpConfig::k)
      .def_readwrite("n", &DgpConfig::n)
      .def_readwrite("seed", &DgpConfig::seed)
      .def_readwrite("coef_scale", &DgpConfig::coef_scale);

  py::class_<SyntheticTruth>(m, "SyntheticTruth")
      .def_readonly("tau0", &SyntheticTruth::tau0)
      .def_readonly("dgp_seed", &SyntheticTruth::dgp_seed)
      .def("e0", &SyntheticTruth::e0, py::arg("x"))
      .def("mu0", &SyntheticTruth::mu0, py::arg("d"), py::arg("x"))
      .def("r0", &SyntheticTruth::r0, py::arg("d"), py::arg("x"))
      .def("e0_batch", &SyntheticTruth::e0_batch, py::arg("x"))
      .def("mu0_batch", &SyntheticTruth::mu0_batch, py::arg("d"), py::arg("x"))
      .def("r0_batch", &SyntheticTruth::r0_batch, py::arg("d"), py::arg("x"));

  m.def(
      "generate_dgp",
      [](const DgpConfig& cfg) { return generate_dgp(cfg); },
      py::arg("config"));
  m.def("oracle_h", &oracle_h, py::arg("truth"), py::arg("d"), py::arg("x"));

  m.def(
      "empirical_risk",
      [](const std::string& generator, const Dataset& data, const CorrectionFn& r) {
        const RiskValue v = empirical_risk(generator_by_name(generator), data, r);
        return py::make_tuple(v.value, v.per_sample);
      },
      py::arg("generator"), py::arg("data"), py::arg("r"),
      "Empirical Bregman risk of an evaluable r(d, x); returns (value, per_sample)");
  m.def(
      "risk_value_gradient",
      [](const std::string& generator, bool indicator, double r_val) {
        return risk_value_gradient(generator_by_name(generator), indicator, r_val);
      },
      py::arg("generator"), py::arg("indicator"), py::arg("r_val"));
  m.def(
      "oracle_divergence",
      [](const std::string& generator, const SyntheticTruth& truth, const Dataset& data,
         const CorrectionFn& r) {
        return oracle_divergence(generator_by_name(generator), truth, data, r);
      },
      py::arg("generator"), py::arg("truth"), py::arg("data"), py::arg("r"));

  m.def("family_spec", &make_family_spec, py::arg("family") = "linear",
        py::arg("intercept_only") = false, py::arg("bandwidth") = 0.0,
        py::arg("max_anchors") = 2000, py::arg("hidden_layers") = 3,
        py::arg("width") = 100, py::arg("activation") = "elu");
  py::class_<FamilySpec>(m, "FamilySpec");

  py::class_<FitConfig>(m, "FitConfig")
      .def(py::init([](const std::string& generator, const FamilySpec& family,
                       double lambda, int max_iters, double tol, uint64_t seed) {
             FitConfig cfg = default_fit_config(family.family);
             cfg.generator = generator;
             cfg.family = family;
             if (lambda >= 0.0) {
               cfg.lambda = lambda;
               cfg.lambda_auto = false;
             }
             if (max_iters > 0) cfg.max_iters = max_iters;
             if (tol > 0.0) cfg.tol = tol;
             cfg.seed = seed;
             return cfg;
           }),
           py::arg("generator") = "ls", py::arg("family") = FamilySpec{},
           py::arg("lambda") = -1.0, py::arg("max_iters") = -1, py::arg("tol") = -1.0,
           py::arg("seed") = 0)
      .def_readwrite("generator", &FitConfig::generator)
      .def_readwrite("lambda_", &FitConfig::lambda)
      .def_readwrite("max_iters", &FitConfig::max_iters)
      .def_readwrite("tol", &FitConfig::tol)
      .def_readwrite("seed", &FitConfig::seed);

  py::class_<ScoreModel>(m, "ScoreModel")
      .def("eval_f", &ScoreModel::eval_f, py::arg("x"))
      .def("eval_e", &ScoreModel::eval_e, py::arg("x"))
      .def("eval_r", &ScoreModel::eval_r, py::arg("d"), py::arg("x"))
      .def("eval_f_batch", &ScoreModel::eval_f_batch, py::arg("x"))
      .def("grad_params", &ScoreModel::grad_params, py::arg("d"), py::arg("x"))
      .def_property_readonly("params", &ScoreModel::params)
      .def("to_json", [](const ScoreModel& s) { return s.to_json().dump(); })
      .def_static("from_json", [](const std::string& text) {
        return ScoreModel::from_json(nlohmann::json::parse(text));
      });

  py::class_<FittedCorrection>(m, "FittedCorrection")
      .def_readonly("model", &FittedCorrection::model)
      .def_readonly("generator", &FittedCorrection::generator)
      .def_readonly("lambda_", &FittedCorrection::lambda)
      .def_readonly("converged", &FittedCorrection::converged)
      .def_readonly("loss_trace", &FittedCorrection::loss_trace)
      .def("r", &FittedCorrection::r, py::arg("d"), py::arg("x"))
      .def("h", &FittedCorrection::h, py::arg("d"), py::arg("x"))
      .def("r_batch", &FittedCorrection::r_batch, py::arg("d"), py::arg("x"))
      .def("h_at", &FittedCorrection::h_at, py::arg("d"), py::arg("x"))
      .def("to_json", [](const FittedCorrection& c) { return c.to_json().dump(); })
      .def_static("from_json", [](const std::string& text) {
        return FittedCorrection::from_json(nlohmann::json::parse(text));
      });

  m.def("fit_correction", &fit_correction, py::arg("data"), py::arg("config"));

  py::class_<OutcomeFit>(m, "OutcomeFit")
      .def("mu", &OutcomeFit::mu, py::arg("d"), py::arg("x"))
      .def("mu_batch", &OutcomeFit::mu_batch, py::arg("d"), py::arg("x"));
  m.def("fit_outcome", &fit_outcome, py::arg("data"), py::arg("family"),
        py::arg("lambda"), py::arg("max_iters") = 2000, py::arg("tol") = 1e-5,
        py::arg("seed") = 0);

  py::class_<FoldPlan>(m, "FoldPlan")
      .def_readonly("k_folds", &FoldPlan::k_folds)
      .def_readonly("assignment", &FoldPlan::assignment)
      .def_readonly("seed", &FoldPlan::seed);
  m.def("make_folds", &make_folds, py::arg("n"), py::arg("d"), py::arg("k"),
        py::arg("seed"));

  py::class_<NuisanceTable>(m, "NuisanceTable")
      .def(py::init([](VectorXd h_hat, VectorXd mu1, VectorXd mu0) {
             NuisanceTable t;
             t.fold_id = VectorXi::Constant(h_hat.size(), -1);
             t.h_hat = std::move(h_hat);
             t.mu1 = std::move(mu1);
             t.mu0 = std::move(mu0);
             return t;
           }),
           py::arg("h_hat"), py::arg("mu1"), py::arg("mu0"))
      .def_readonly("h_hat", &NuisanceTable::h_hat)
      .def_readonly("mu1", &NuisanceTable::mu1)
      .def_readonly("mu0", &NuisanceTable::mu0)
      .def_readonly("fold_id", &NuisanceTable::fold_id);
  m.def("crossfit_nuisances", &crossfit_nuisances, py::arg("data"), py::arg("fit_config"),
        py::arg("outcome_family"), py::arg("outcome_lambda"), py::arg("folds"));
  m.def("full_sample_nuisances", &full_sample_nuisances, py::arg("data"),
        py::arg("fit_config"), py::arg("outcome_family"), py::arg("outcome_lambda"));

  py::class_<BalanceReport>(m, "BalanceReport")
      .def_readonly("treated_weight_mean", &BalanceReport::treated_weight_mean)
      .def_readonly("control_weight_mean", &BalanceReport::control_weight_mean)
      .def_property_readonly("oracle_l2", [](const BalanceReport& b) {
        return b.oracle_l2 ? py::cast(*b.oracle_l2) : py::none().cast<py::object>();
      });

  py::class_<EstimateReport>(m, "EstimateReport")
      .def_readonly("tau_hat", &EstimateReport::tau_hat)
      .def_readonly("variance_hat", &EstimateReport::variance_hat)
      .def_readonly("ci95", &EstimateReport::ci95)
      .def_readonly("n", &EstimateReport::n)
      .def_property_readonly("method",
                             [](const EstimateReport& r) { return method_name(r.method); })
      .def_property_readonly(
          "estimand",
          [](const EstimateReport& r) { return r.estimand == Estimand::Ate ? "ate" : "att"; })
      .def("to_json", [](const EstimateReport& r) { return r.to_json().dump(); });

  m.def("estimate_dm",
        py::overload_cast<const Dataset&, const NuisanceTable&>(&estimate_dm),
        py::arg("data"), py::arg("nuisances"));
  m.def("estimate_ipw", &estimate_ipw, py::arg("data"), py::arg("correction"));
  m.def("estimate_ipw_values", &estimate_ipw_values, py::arg("data"), py::arg("h_at_obs"));
  m.def("estimate_aipw", &estimate_aipw, py::arg("data"), py::arg("nuisances"));

  py::class_<AttWeights>(m, "AttWeights")
      .def_readonly("model", &AttWeights::model)
      .def_readonly("converged", &AttWeights::converged)
      .def("w", &AttWeights::w, py::arg("x"))
      .def("w_batch", &AttWeights::w_batch, py::arg("x"))
      .def("to_json", [](const AttWeights& w) { return w.to_json().dump(); })
      .def_static("from_json", [](const std::string& text) {
        return AttWeights::from_json(nlohmann::json::parse(text));
      });
  m.def("fit_att_weights", &fit_att_weights, py::arg("data"), py::arg("family"),
        py::arg("lambda"), py::arg("max_iters") = 10000, py::arg("tol") = 1e-8,
        py::arg("seed") = 0);
  m.def(
      "estimate_att",
      [](const Dataset& data, const WeightFn& w, const MuFn& mu0, const std::string& method) {
        return estimate_att(data, w, mu0, method_by_name(method));
      },
      py::arg("data"), py::arg("w"), py::arg("mu0"), py::arg("method"));

  m.def(
      "diagnostics",
      [](const Dataset& data, const FittedCorrection& corr, const SyntheticTruth* truth) {
        return diagnostics(data, corr, truth);
      },
      py::arg("data"), py::arg("correction"), py::arg("truth") = nullptr);
}
