#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dbce/common.hpp"
#include "dbce/rng.hpp"

namespace dbce {

enum class Family { Linear, Kernel, Mlp };
enum class Activation { Elu, Relu };

struct LinearSpec {
  bool intercept_only = false;  // constant score f(x) = theta0
};

struct KernelSpec {
  double bandwidth = 0.0;  // Gaussian kernel scale; 0 = median-distance heuristic
  int max_anchors = 2000;  // O(n^2) memory cap; subsample above this
};

struct MlpSpec {
  int hidden_layers = 3;
  int width = 100;
  Activation activation = Activation::Elu;
};

struct FamilySpec {
  Family family = Family::Linear;
  LinearSpec linear{};
  KernelSpec kernel{};
  MlpSpec mlp{};
};

Family family_by_name(const std::string& name);
std::string family_name(Family f);

// Score function f(x; theta) inducing e(x) = 1/(1+exp(-f(x))),
// r(1,x) = 1+exp(-f(x)) and r(0,x) = 1+exp(f(x)). Evaluation is const and
// thread-safe; fitting mutates the parameter vector through set_params.
class ScoreModel {
 public:
  static ScoreModel linear(int input_dim, bool intercept_only = false);
  static ScoreModel kernel(MatrixXd anchors, double bandwidth);
  static ScoreModel mlp(int input_dim, const MlpSpec& spec, uint64_t init_seed);
  // Family-spec constructor; x_train supplies kernel anchors (and the
  // bandwidth heuristic) and the input dimension.
  static ScoreModel make(const FamilySpec& spec, const MatrixXd& x_train, uint64_t seed);

  Family family() const { return family_; }
  int input_dim() const { return input_dim_; }
  Eigen::Index num_params() const { return params_.size(); }
  const VectorXd& params() const { return params_; }
  void set_params(VectorXd p);

  double eval_f(const VectorXd& x) const;
  VectorXd eval_f_batch(const MatrixXd& x) const;
  double eval_e(const VectorXd& x) const { return sigmoid(eval_f(x)); }
  double eval_r(int d, const VectorXd& x) const;

  // dr(d,x)/dtheta, exact.
  VectorXd grad_params(int d, const VectorXd& x) const;
  // d( sum_i w_i f(x_i) )/dtheta; the one backward pass the fit engine needs.
  VectorXd weighted_grad_f(const MatrixXd& x, const VectorXd& w) const;

  // Linear and Kernel scores are linear in theta: f = feature_matrix(X) * theta.
  bool linear_in_params() const { return family_ != Family::Mlp; }
  MatrixXd feature_matrix(const MatrixXd& x) const;

  // Family penalty J: squared non-intercept weights (Linear), RKHS norm
  // alpha' K alpha (Kernel), squared weights excluding biases (Mlp).
  double penalty_value() const;
  VectorXd penalty_gradient() const;

  // Paired fast path for iterative fitting (avoids recomputing activations).
  struct Workspace {
    std::vector<MatrixXd> z;  // pre-activations per layer
    std::vector<MatrixXd> a;  // post-activations per hidden layer
  };
  VectorXd forward(const MatrixXd& x, Workspace& ws) const;
  VectorXd backward_weighted(const MatrixXd& x, const Workspace& ws,
                             const VectorXd& w) const;

  // Kernel metadata.
  const MatrixXd& anchors() const { return anchors_; }
  double bandwidth() const { return bandwidth_; }
  const MatrixXd& anchor_gram() const { return anchor_gram_; }
  const MlpSpec& mlp_spec() const { return mlp_spec_; }
  bool intercept_only() const { return intercept_only_; }

  nlohmann::json to_json() const;
  static ScoreModel from_json(const nlohmann::json& j);

 private:
  ScoreModel() = default;

  Family family_ = Family::Linear;
  int input_dim_ = 0;
  VectorXd params_;

  bool intercept_only_ = false;

  MatrixXd anchors_;
  double bandwidth_ = 1.0;
  MatrixXd anchor_gram_;

  MlpSpec mlp_spec_{};
  std::vector<int> layer_dims_;
};

// dr(d,x)/df at score value f: -(r(1)-1) for d=1, r(0)-1 for d=0.
double dr_df(int d, double f);

// Median pairwise Euclidean distance (strided subsample above 1024 rows).
double median_pairwise_distance(const MatrixXd& x);

}  // namespace dbce
