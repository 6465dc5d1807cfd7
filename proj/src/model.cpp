#include "dbce/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace dbce {

using nlohmann::json;

Family family_by_name(const std::string& name) {
  if (name == "linear") return Family::Linear;
  if (name == "kernel") return Family::Kernel;
  if (name == "mlp") return Family::Mlp;
  throw std::invalid_argument("unknown model family '" + name + "'");
}

std::string family_name(Family f) {
  switch (f) {
    case Family::Linear: return "linear";
    case Family::Kernel: return "kernel";
    case Family::Mlp: return "mlp";
  }
  return "?";
}

double dr_df(int d, double f) {
  return d == 1 ? -std::exp(-f) : std::exp(f);
}

namespace {

double elu(double z) { return z > 0.0 ? z : std::expm1(z); }
double elu_grad(double z) { return z > 0.0 ? 1.0 : std::exp(z); }
double relu(double z) { return z > 0.0 ? z : 0.0; }
double relu_grad(double z) { return z > 0.0 ? 1.0 : 0.0; }

void apply_activation(Activation act, const MatrixXd& z, MatrixXd& a) {
  a.resizeLike(z);
  if (act == Activation::Elu) {
    a = z.unaryExpr([](double v) { return elu(v); });
  } else {
    a = z.unaryExpr([](double v) { return relu(v); });
  }
}

MatrixXd activation_grad(Activation act, const MatrixXd& z) {
  if (act == Activation::Elu) {
    return z.unaryExpr([](double v) { return elu_grad(v); });
  }
  return z.unaryExpr([](double v) { return relu_grad(v); });
}

// Squared Euclidean distances between rows of a and rows of b.
MatrixXd pairwise_sqdist(const MatrixXd& a, const MatrixXd& b) {
  const VectorXd an = a.rowwise().squaredNorm();
  const VectorXd bn = b.rowwise().squaredNorm();
  MatrixXd d = -2.0 * (a * b.transpose());
  d.colwise() += an;
  d.rowwise() += bn.transpose();
  return d.cwiseMax(0.0);
}

}  // namespace

double median_pairwise_distance(const MatrixXd& x) {
  const Eigen::Index n = x.rows();
  MatrixXd sub;
  if (n > 1024) {
    const Eigen::Index stride = (n + 1023) / 1024;
    const Eigen::Index m = (n + stride - 1) / stride;
    sub.resize(m, x.cols());
    for (Eigen::Index i = 0, r = 0; i < n && r < m; i += stride, ++r) {
      sub.row(r) = x.row(i);
    }
  } else {
    sub = x;
  }
  const Eigen::Index m = sub.rows();
  std::vector<double> dists;
  dists.reserve(static_cast<size_t>(m) * (m - 1) / 2);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = i + 1; j < m; ++j) {
      dists.push_back((sub.row(i) - sub.row(j)).norm());
    }
  }
  if (dists.empty()) return 1.0;
  const size_t mid = dists.size() / 2;
  std::nth_element(dists.begin(), dists.begin() + static_cast<long>(mid), dists.end());
  const double med = dists[mid];
  return med > 0.0 ? med : 1.0;
}

ScoreModel ScoreModel::linear(int input_dim, bool intercept_only) {
  if (input_dim < 1) throw std::invalid_argument("linear model: input_dim must be >= 1");
  ScoreModel m;
  m.family_ = Family::Linear;
  m.input_dim_ = input_dim;
  m.intercept_only_ = intercept_only;
  m.params_ = VectorXd::Zero(intercept_only ? 1 : input_dim + 1);
  return m;
}

ScoreModel ScoreModel::kernel(MatrixXd anchors, double bandwidth) {
  if (anchors.rows() < 1) throw std::invalid_argument("kernel model: no anchors");
  if (!(bandwidth > 0.0)) throw std::invalid_argument("kernel model: bandwidth must be > 0");
  ScoreModel m;
  m.family_ = Family::Kernel;
  m.input_dim_ = static_cast<int>(anchors.cols());
  m.bandwidth_ = bandwidth;
  m.anchors_ = std::move(anchors);
  m.params_ = VectorXd::Zero(m.anchors_.rows());
  m.anchor_gram_ = m.feature_matrix(m.anchors_);
  return m;
}

ScoreModel ScoreModel::mlp(int input_dim, const MlpSpec& spec, uint64_t init_seed) {
  if (input_dim < 1) throw std::invalid_argument("mlp model: input_dim must be >= 1");
  if (spec.hidden_layers < 1 || spec.width < 1) {
    throw std::invalid_argument("mlp model: hidden_layers and width must be >= 1");
  }
  ScoreModel m;
  m.family_ = Family::Mlp;
  m.input_dim_ = input_dim;
  m.mlp_spec_ = spec;
  m.layer_dims_.push_back(input_dim);
  for (int l = 0; l < spec.hidden_layers; ++l) m.layer_dims_.push_back(spec.width);
  m.layer_dims_.push_back(1);

  Eigen::Index total = 0;
  for (size_t l = 0; l + 1 < m.layer_dims_.size(); ++l) {
    total += m.layer_dims_[l] * m.layer_dims_[l + 1] + m.layer_dims_[l + 1];
  }
  m.params_ = VectorXd::Zero(total);

  // Fan-in-scaled centered weights, zero biases.
  Rng rng(init_seed);
  Eigen::Index off = 0;
  for (size_t l = 0; l + 1 < m.layer_dims_.size(); ++l) {
    const Eigen::Index wsize = m.layer_dims_[l] * m.layer_dims_[l + 1];
    const double sd = 1.0 / std::sqrt(static_cast<double>(m.layer_dims_[l]));
    for (Eigen::Index i = 0; i < wsize; ++i) m.params_[off + i] = sd * rng.normal();
    off += wsize + m.layer_dims_[l + 1];  // biases stay zero
  }
  return m;
}

ScoreModel ScoreModel::make(const FamilySpec& spec, const MatrixXd& x_train,
                            uint64_t seed) {
  const int k = static_cast<int>(x_train.cols());
  switch (spec.family) {
    case Family::Linear:
      return linear(k, spec.linear.intercept_only);
    case Family::Kernel: {
      MatrixXd anchors;
      if (x_train.rows() <= spec.kernel.max_anchors) {
        anchors = x_train;
      } else {
        std::vector<int> idx(static_cast<size_t>(x_train.rows()));
        std::iota(idx.begin(), idx.end(), 0);
        Rng rng(seed);
        rng.shuffle(idx);
        idx.resize(static_cast<size_t>(spec.kernel.max_anchors));
        std::sort(idx.begin(), idx.end());
        anchors.resize(spec.kernel.max_anchors, x_train.cols());
        for (int i = 0; i < spec.kernel.max_anchors; ++i) {
          anchors.row(i) = x_train.row(idx[static_cast<size_t>(i)]);
        }
      }
      const double bw = spec.kernel.bandwidth > 0.0 ? spec.kernel.bandwidth
                                                    : median_pairwise_distance(anchors);
      return kernel(std::move(anchors), bw);
    }
    case Family::Mlp:
      return mlp(k, spec.mlp, seed);
  }
  throw std::logic_error("unreachable family");
}

void ScoreModel::set_params(VectorXd p) {
  if (p.size() != params_.size()) {
    throw std::invalid_argument("set_params: size mismatch");
  }
  params_ = std::move(p);
}

MatrixXd ScoreModel::feature_matrix(const MatrixXd& x) const {
  if (x.cols() != input_dim_) throw std::invalid_argument("covariate dimension mismatch");
  switch (family_) {
    case Family::Linear: {
      if (intercept_only_) return MatrixXd::Ones(x.rows(), 1);
      MatrixXd phi(x.rows(), input_dim_ + 1);
      phi.leftCols(input_dim_) = x;
      phi.col(input_dim_).setOnes();
      return phi;
    }
    case Family::Kernel: {
      MatrixXd d2 = pairwise_sqdist(x, anchors_);
      const double inv = -0.5 / (bandwidth_ * bandwidth_);
      return (d2 * inv).array().exp().matrix();
    }
    case Family::Mlp:
      throw std::logic_error("mlp has no feature matrix");
  }
  throw std::logic_error("unreachable family");
}

VectorXd ScoreModel::forward(const MatrixXd& x, Workspace& ws) const {
  if (x.cols() != input_dim_) throw std::invalid_argument("covariate dimension mismatch");
  if (family_ != Family::Mlp) {
    return feature_matrix(x) * params_;
  }
  const size_t layers = layer_dims_.size() - 1;
  ws.z.resize(layers);
  ws.a.resize(layers);
  const MatrixXd* cur = &x;
  Eigen::Index off = 0;
  for (size_t l = 0; l < layers; ++l) {
    const Eigen::Index in = layer_dims_[l];
    const Eigen::Index out = layer_dims_[l + 1];
    const Eigen::Map<const MatrixXd> w(params_.data() + off, in, out);
    const Eigen::Map<const VectorXd> b(params_.data() + off + in * out, out);
    off += in * out + out;
    ws.z[l].noalias() = (*cur) * w;
    ws.z[l].rowwise() += b.transpose();
    if (l + 1 < layers) {
      apply_activation(mlp_spec_.activation, ws.z[l], ws.a[l]);
      cur = &ws.a[l];
    }
  }
  return ws.z[layers - 1].col(0);
}

VectorXd ScoreModel::backward_weighted(const MatrixXd& x, const Workspace& ws,
                                       const VectorXd& w) const {
  if (family_ != Family::Mlp) {
    return feature_matrix(x).transpose() * w;
  }
  const size_t layers = layer_dims_.size() - 1;
  VectorXd grad = VectorXd::Zero(params_.size());

  std::vector<Eigen::Index> offsets(layers);
  Eigen::Index off = 0;
  for (size_t l = 0; l < layers; ++l) {
    offsets[l] = off;
    off += layer_dims_[l] * layer_dims_[l + 1] + layer_dims_[l + 1];
  }

  MatrixXd delta = w;  // n x 1 at the output layer
  for (size_t l = layers; l-- > 0;) {
    const Eigen::Index in = layer_dims_[l];
    const Eigen::Index out = layer_dims_[l + 1];
    const MatrixXd& input = l == 0 ? x : ws.a[l - 1];
    Eigen::Map<MatrixXd> gw(grad.data() + offsets[l], in, out);
    Eigen::Map<VectorXd> gb(grad.data() + offsets[l] + in * out, out);
    gw.noalias() = input.transpose() * delta;
    gb = delta.colwise().sum().transpose();
    if (l > 0) {
      const Eigen::Map<const MatrixXd> wmat(params_.data() + offsets[l], in, out);
      MatrixXd next = delta * wmat.transpose();
      delta = next.cwiseProduct(activation_grad(mlp_spec_.activation, ws.z[l - 1]));
    }
  }
  return grad;
}

VectorXd ScoreModel::eval_f_batch(const MatrixXd& x) const {
  Workspace ws;
  return forward(x, ws);
}

double ScoreModel::eval_f(const VectorXd& x) const {
  if (x.size() != input_dim_) throw std::invalid_argument("covariate dimension mismatch");
  if (family_ == Family::Linear) {
    if (intercept_only_) return params_[0];
    return x.dot(params_.head(input_dim_)) + params_[input_dim_];
  }
  Workspace ws;
  return forward(x.transpose(), ws)[0];
}

double ScoreModel::eval_r(int d, const VectorXd& x) const {
  const double f = eval_f(x);
  return d == 1 ? 1.0 + std::exp(-f) : 1.0 + std::exp(f);
}

VectorXd ScoreModel::weighted_grad_f(const MatrixXd& x, const VectorXd& w) const {
  if (w.size() != x.rows()) throw std::invalid_argument("weight length mismatch");
  Workspace ws;
  forward(x, ws);
  return backward_weighted(x, ws, w);
}

VectorXd ScoreModel::grad_params(int d, const VectorXd& x) const {
  const double f = eval_f(x);
  VectorXd g = weighted_grad_f(x.transpose(), VectorXd::Ones(1));
  return dr_df(d, f) * g;
}

double ScoreModel::penalty_value() const {
  switch (family_) {
    case Family::Linear:
      if (intercept_only_) return 0.0;
      return params_.head(input_dim_).squaredNorm();
    case Family::Kernel:
      return params_.dot(anchor_gram_ * params_);
    case Family::Mlp: {
      double v = 0.0;
      Eigen::Index off = 0;
      for (size_t l = 0; l + 1 < layer_dims_.size(); ++l) {
        const Eigen::Index wsize = layer_dims_[l] * layer_dims_[l + 1];
        v += params_.segment(off, wsize).squaredNorm();
        off += wsize + layer_dims_[l + 1];
      }
      return v;
    }
  }
  throw std::logic_error("unreachable family");
}

VectorXd ScoreModel::penalty_gradient() const {
  VectorXd g = VectorXd::Zero(params_.size());
  switch (family_) {
    case Family::Linear:
      if (!intercept_only_) g.head(input_dim_) = 2.0 * params_.head(input_dim_);
      return g;
    case Family::Kernel:
      g.noalias() = 2.0 * (anchor_gram_ * params_);
      return g;
    case Family::Mlp: {
      Eigen::Index off = 0;
      for (size_t l = 0; l + 1 < layer_dims_.size(); ++l) {
        const Eigen::Index wsize = layer_dims_[l] * layer_dims_[l + 1];
        g.segment(off, wsize) = 2.0 * params_.segment(off, wsize);
        off += wsize + layer_dims_[l + 1];
      }
      return g;
    }
  }
  throw std::logic_error("unreachable family");
}

json ScoreModel::to_json() const {
  json j;
  j["family"] = family_name(family_);
  j["params"] = std::vector<double>(params_.data(), params_.data() + params_.size());
  json meta;
  meta["input_dim"] = input_dim_;
  switch (family_) {
    case Family::Linear:
      meta["intercept_only"] = intercept_only_;
      break;
    case Family::Kernel: {
      meta["bandwidth"] = bandwidth_;
      std::vector<std::vector<double>> rows(static_cast<size_t>(anchors_.rows()));
      for (Eigen::Index i = 0; i < anchors_.rows(); ++i) {
        rows[static_cast<size_t>(i)].resize(static_cast<size_t>(anchors_.cols()));
        for (Eigen::Index c = 0; c < anchors_.cols(); ++c) {
          rows[static_cast<size_t>(i)][static_cast<size_t>(c)] = anchors_(i, c);
        }
      }
      meta["anchors"] = rows;
      break;
    }
    case Family::Mlp:
      meta["hidden_layers"] = mlp_spec_.hidden_layers;
      meta["width"] = mlp_spec_.width;
      meta["activation"] = mlp_spec_.activation == Activation::Elu ? "elu" : "relu";
      break;
  }
  j["meta"] = meta;
  return j;
}

ScoreModel ScoreModel::from_json(const json& j) {
  const std::string fam = j.at("family").get<std::string>();
  const auto pv = j.at("params").get<std::vector<double>>();
  VectorXd params = Eigen::Map<const VectorXd>(pv.data(), static_cast<Eigen::Index>(pv.size()));
  const json& meta = j.at("meta");
  ScoreModel m = [&] {
    if (fam == "linear") {
      return linear(meta.at("input_dim").get<int>(),
                    meta.value("intercept_only", false));
    }
    if (fam == "kernel") {
      const auto rows = meta.at("anchors").get<std::vector<std::vector<double>>>();
      if (rows.empty()) throw std::invalid_argument("kernel model json: no anchors");
      MatrixXd anchors(static_cast<Eigen::Index>(rows.size()),
                       static_cast<Eigen::Index>(rows[0].size()));
      for (size_t i = 0; i < rows.size(); ++i) {
        anchors.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(
            rows[i].data(), static_cast<Eigen::Index>(rows[i].size()));
      }
      return kernel(std::move(anchors), meta.at("bandwidth").get<double>());
    }
    if (fam == "mlp") {
      MlpSpec spec;
      spec.hidden_layers = meta.at("hidden_layers").get<int>();
      spec.width = meta.at("width").get<int>();
      spec.activation = meta.at("activation").get<std::string>() == "relu"
                            ? Activation::Relu
                            : Activation::Elu;
      return mlp(meta.at("input_dim").get<int>(), spec, 0);
    }
    throw std::invalid_argument("unknown model family '" + fam + "' in json");
  }();
  m.set_params(std::move(params));
  return m;
}

}  // namespace dbce
