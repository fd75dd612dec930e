#include "uqbench/tinynet.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "uqbench/error.hpp"

namespace uqbench::nn {

void Gradients::scale(double s) {
  for (auto& w : weight) w *= s;
  for (auto& b : bias) b *= s;
}

double Gradients::squared_norm() const {
  double total = 0.0;
  for (const auto& w : weight) total += w.squaredNorm();
  for (const auto& b : bias) total += b.squaredNorm();
  return total;
}

bool Gradients::all_finite() const {
  return std::all_of(weight.begin(), weight.end(), [](const Matrix& m) { return m.allFinite(); }) &&
         std::all_of(bias.begin(), bias.end(), [](const Vector& v) { return v.allFinite(); });
}

RectifiedMoments rectified_gaussian(double mu, double var) {
  RectifiedMoments r;
  if (!(var > 1e-300)) {
    // Degenerate input: the rectifier acts pointwise.
    const bool on = mu > 0.0;
    r.mean = on ? mu : 0.0;
    r.dmean_dmu = on ? 1.0 : 0.0;
    r.dvar_dvar = on ? 1.0 : 0.0;
    return r;
  }
  const double sd = std::sqrt(var);
  const double z = mu / sd;
  const double pdf = std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
  const double cdf = 0.5 * std::erfc(-z / std::numbers::sqrt2);
  // E[relu] = mu Phi + sd phi; Var written to avoid cancellation when |z| is large.
  r.mean = mu * cdf + sd * pdf;
  const double v_std = z * z * cdf * (1.0 - cdf) + cdf + z * pdf * (1.0 - 2.0 * cdf) - pdf * pdf;
  r.variance = std::max(0.0, var * v_std);
  r.dmean_dmu = cdf;
  r.dmean_dvar = pdf / (2.0 * sd);
  r.dvar_dmu = 2.0 * r.mean * (1.0 - cdf);
  r.dvar_dvar = cdf - r.mean * pdf / sd;
  return r;
}

Mlp::Mlp(std::vector<int> layer_sizes, double dropout_rate) : sizes_(std::move(layer_sizes)) {
  if (sizes_.size() < 2) throw ShapeError("an MLP needs at least an input and an output size");
  for (const int s : sizes_) {
    if (s < 1) throw ShapeError("layer sizes must be positive");
  }
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    layers_.push_back({Matrix::Zero(sizes_[l + 1], sizes_[l]), Vector::Zero(sizes_[l + 1])});
  }
  set_dropout_rate(dropout_rate);
}

void Mlp::set_dropout_rate(double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ParameterError("dropout rate must lie in [0, 1)");
  dropout_rate_ = rate;
}

void Mlp::init(rand::Stream& rng) {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    auto& layer = layers_[l];
    const double fan_in = static_cast<double>(layer.weight.cols());
    const bool last = l + 1 == layers_.size();
    const double sd = std::sqrt((last ? 1.0 : 2.0) / fan_in);
    for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) {
      for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) layer.weight(i, j) = sd * rng.normal();
    }
    layer.bias.setZero();
  }
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += static_cast<std::size_t>(layer.weight.size() + layer.bias.size());
  return n;
}

std::vector<double> Mlp::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (const auto& layer : layers_) {
    out.insert(out.end(), layer.weight.data(), layer.weight.data() + layer.weight.size());
    out.insert(out.end(), layer.bias.data(), layer.bias.data() + layer.bias.size());
  }
  return out;
}

void Mlp::unflatten(std::span<const double> values) {
  if (values.size() != parameter_count()) throw ShapeError("parameter vector has the wrong length");
  auto it = values.begin();
  for (auto& layer : layers_) {
    std::copy_n(it, layer.weight.size(), layer.weight.data());
    it += layer.weight.size();
    std::copy_n(it, layer.bias.size(), layer.bias.data());
    it += layer.bias.size();
  }
}

void Mlp::check_input(Eigen::Index rows) const {
  if (rows != input_size()) throw ShapeError("input dimension does not match the first layer");
}

Vector Mlp::forward(const Vector& x) const {
  check_input(x.size());
  Vector a = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Vector z = layers_[l].weight * a + layers_[l].bias;
    a = l + 1 < layers_.size() ? Vector(z.cwiseMax(0.0)) : z;
  }
  return a;
}

Matrix Mlp::forward(const Matrix& x) const { return forward(x, nullptr, nullptr); }

Matrix Mlp::forward(const Matrix& x, const DropoutMasks* masks, Tape* tape) const {
  check_input(x.rows());
  if (tape) {
    tape->inputs.clear();
    tape->pre.clear();
    tape->masks = masks;
  }
  Matrix a = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Matrix z = (layers_[l].weight * a).colwise() + layers_[l].bias;
    if (tape) {
      tape->inputs.push_back(a);
      tape->pre.push_back(z);
    }
    if (l + 1 < layers_.size()) {
      a = z.cwiseMax(0.0);
      if (masks) a.array() *= (*masks)[l].array();
    } else {
      a = std::move(z);
    }
  }
  return a;
}

Gradients Mlp::zero_gradients() const {
  Gradients g;
  for (const auto& layer : layers_) {
    g.weight.push_back(Matrix::Zero(layer.weight.rows(), layer.weight.cols()));
    g.bias.push_back(Vector::Zero(layer.bias.size()));
  }
  return g;
}

Gradients Mlp::backward(const Tape& tape, const Matrix& grad_out) const {
  Gradients g = zero_gradients();
  Matrix delta = grad_out;  // dL/d(pre) of the current layer
  for (std::size_t l = layers_.size(); l-- > 0;) {
    g.weight[l] = delta * tape.inputs[l].transpose();
    g.bias[l] = delta.rowwise().sum();
    if (l == 0) break;
    Matrix upstream = layers_[l].weight.transpose() * delta;  // dL/d(activation l-1)
    if (tape.masks) upstream.array() *= (*tape.masks)[l - 1].array();
    delta = upstream.array() * (tape.pre[l - 1].array() > 0.0).cast<double>();
  }
  return g;
}

DropoutMasks Mlp::sample_masks(rand::Stream& rng, int batch) const {
  DropoutMasks masks;
  const double keep_scale = 1.0 / (1.0 - dropout_rate_);
  for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
    Matrix m(layers_[l].weight.rows(), batch);
    if (dropout_rate_ == 0.0) {
      m.setOnes();
    } else {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
          m(i, j) = rng.uniform() < dropout_rate_ ? 0.0 : keep_scale;
        }
      }
    }
    masks.push_back(std::move(m));
  }
  return masks;
}

GaussianActivation Mlp::forward_adf(const Vector& mean, const Vector& var, const DropoutMasks* masks) const {
  auto out = forward_adf(Matrix(mean), Matrix(var), masks, nullptr);
  return {out.mean.col(0), out.variance.col(0)};
}

GaussianBatch Mlp::forward_adf(const Matrix& mean, const Matrix& var, const DropoutMasks* masks,
                               AdfTape* tape) const {
  check_input(mean.rows());
  if (var.rows() != mean.rows() || var.cols() != mean.cols()) throw ShapeError("mean/variance shape mismatch");
  if ((var.array() < 0.0).any()) throw DomainError("input variance must be non-negative");
  if (tape) {
    *tape = AdfTape{};
    tape->masks = masks;
  }
  Matrix m = mean, v = var;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    Matrix zm = (layer.weight * m).colwise() + layer.bias;
    Matrix zv = layer.weight.array().square().matrix() * v;
    if (tape) {
      tape->in_mean.push_back(m);
      tape->in_var.push_back(v);
      tape->pre_mean.push_back(zm);
      tape->pre_var.push_back(zv);
    }
    if (l + 1 == layers_.size()) return {std::move(zm), std::move(zv)};
    m.resize(zm.rows(), zm.cols());
    v.resize(zv.rows(), zv.cols());
    for (Eigen::Index j = 0; j < zm.cols(); ++j) {
      for (Eigen::Index i = 0; i < zm.rows(); ++i) {
        const auto r = rectified_gaussian(zm(i, j), zv(i, j));
        m(i, j) = r.mean;
        v(i, j) = r.variance;
      }
    }
    if (masks) {
      const auto& mk = (*masks)[l];
      m.array() *= mk.array();
      v.array() *= mk.array().square();
    }
  }
  return {m, v};  // unreachable for non-empty networks
}

Gradients Mlp::backward_adf(const AdfTape& tape, const Matrix& grad_mean, const Matrix& grad_var) const {
  Gradients g = zero_gradients();
  Matrix gm = grad_mean, gv = grad_var;  // w.r.t. pre-activation moments of layer l
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const auto& w = layers_[l].weight;
    g.weight[l] = gm * tape.in_mean[l].transpose() +
                  (2.0 * w.array() * (gv * tape.in_var[l].transpose()).array()).matrix();
    g.bias[l] = gm.rowwise().sum();
    if (l == 0) break;
    Matrix up_m = w.transpose() * gm;
    Matrix up_v = w.array().square().matrix().transpose() * gv;
    if (tape.masks) {
      const auto& mk = (*tape.masks)[l - 1];
      up_m.array() *= mk.array();
      up_v.array() *= mk.array().square();
    }
    const auto& pm = tape.pre_mean[l - 1];
    const auto& pv = tape.pre_var[l - 1];
    gm.resize(pm.rows(), pm.cols());
    gv.resize(pm.rows(), pm.cols());
    for (Eigen::Index j = 0; j < pm.cols(); ++j) {
      for (Eigen::Index i = 0; i < pm.rows(); ++i) {
        const auto r = rectified_gaussian(pm(i, j), pv(i, j));
        gm(i, j) = up_m(i, j) * r.dmean_dmu + up_v(i, j) * r.dvar_dmu;
        gv(i, j) = up_m(i, j) * r.dmean_dvar + up_v(i, j) * r.dvar_dvar;
      }
    }
  }
  return g;
}

double loss_nll(double b_true, double b_hat, double log_var) {
  const double r = b_true - b_hat;
  return 0.5 * std::exp(-log_var) * r * r + 0.5 * log_var;
}

double nll_batch(const Matrix& out, std::span<const double> target, Matrix* grad) {
  if (out.rows() != 2 || static_cast<std::size_t>(out.cols()) != target.size()) {
    throw ShapeError("nll_batch expects a (2 x batch) output and one target per column");
  }
  const auto n = static_cast<double>(target.size());
  if (grad) grad->setZero(2, out.cols());
  double total = 0.0;
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    const double s_raw = out(1, j);
    const double s = std::clamp(s_raw, kMinLogVar, kMaxLogVar);
    const double r = target[static_cast<std::size_t>(j)] - out(0, j);
    const double prec = std::exp(-s);
    total += 0.5 * prec * r * r + 0.5 * s;
    if (grad) {
      (*grad)(0, j) = -prec * r / n;
      (*grad)(1, j) = (s_raw == s) ? (0.5 - 0.5 * prec * r * r) / n : 0.0;
    }
  }
  return total / n;
}

double adf_nll_batch(const GaussianBatch& out, std::span<const double> target, Matrix* grad_mean,
                     Matrix* grad_var) {
  if (out.mean.rows() != 2 || static_cast<std::size_t>(out.mean.cols()) != target.size()) {
    throw ShapeError("adf_nll_batch expects a (2 x batch) output and one target per column");
  }
  const auto n = static_cast<double>(target.size());
  if (grad_mean) grad_mean->setZero(2, out.mean.cols());
  if (grad_var) grad_var->setZero(2, out.mean.cols());
  double total = 0.0;
  for (Eigen::Index j = 0; j < out.mean.cols(); ++j) {
    const double s_raw = out.mean(1, j);
    const double s = std::clamp(s_raw, kMinLogVar, kMaxLogVar);
    const double head = std::exp(s);
    const double var = out.variance(0, j) + head;
    const double r = target[static_cast<std::size_t>(j)] - out.mean(0, j);
    total += 0.5 * r * r / var + 0.5 * std::log(var);
    const double dvar = (0.5 / var - 0.5 * r * r / (var * var)) / n;
    if (grad_mean) {
      (*grad_mean)(0, j) = -r / var / n;
      (*grad_mean)(1, j) = (s_raw == s) ? dvar * head : 0.0;
    }
    if (grad_var) (*grad_var)(0, j) = dvar;
  }
  return total / n;
}

Matrix softmax(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double mx = logits.col(j).maxCoeff();
    p.col(j) = (logits.col(j).array() - mx).exp();
    p.col(j) /= p.col(j).sum();
  }
  return p;
}

double softmax_cross_entropy(const Matrix& logits, const Matrix& targets, Matrix* grad) {
  if (logits.rows() != targets.rows() || logits.cols() != targets.cols()) {
    throw ShapeError("logits and targets must have the same shape");
  }
  const auto n = static_cast<double>(logits.cols());
  double total = 0.0;
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double mx = logits.col(j).maxCoeff();
    const double lse = mx + std::log((logits.col(j).array() - mx).exp().sum());
    for (Eigen::Index k = 0; k < logits.rows(); ++k) {
      if (targets(k, j) > 0.0) total -= targets(k, j) * (logits(k, j) - lse);
    }
  }
  if (grad) *grad = (softmax(logits) - targets) / n;
  return total / n;
}

Optimizer::Optimizer(const Mlp& net, OptimizerConfig config)
    : config_(config), first_(net.zero_gradients()), second_(net.zero_gradients()) {}

void Optimizer::step(Mlp& net, Gradients grad) {
  if (config_.clip_norm > 0.0) {
    const double norm = std::sqrt(grad.squared_norm());
    if (norm > config_.clip_norm) grad.scale(config_.clip_norm / norm);
  }
  ++t_;
  auto& layers = net.layers();
  const double lr = config_.learning_rate;
  if (config_.kind == OptimizerConfig::Kind::sgd_momentum) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      first_.weight[l] = config_.momentum * first_.weight[l] + grad.weight[l];
      first_.bias[l] = config_.momentum * first_.bias[l] + grad.bias[l];
      layers[l].weight -= lr * first_.weight[l];
      layers[l].bias -= lr * first_.bias[l];
    }
    return;
  }
  const double b1 = config_.momentum, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double step = lr * std::sqrt(c2) / c1;
  const auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
    param.array() -= step * m.array() / (v.array().sqrt() + config_.epsilon);
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    update(layers[l].weight, first_.weight[l], second_.weight[l], grad.weight[l]);
    update(layers[l].bias, first_.bias[l], second_.bias[l], grad.bias[l]);
  }
}

TrainStats fit(Mlp& net, std::size_t n, const TrainConfig& config, rand::Seed seed,
               const BatchObjective& objective) {
  TrainStats stats;
  if (config.epochs <= 0 || n == 0) return stats;
  if (config.batch_size < 1) throw ParameterError("batch size must be positive");

  rand::Stream order_rng(seed, "train.order");
  rand::Stream mask_rng(seed, "train.dropout");
  Optimizer opt(net, config.optimizer);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch = static_cast<std::size_t>(config.batch_size);
  double lr = config.optimizer.learning_rate;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (epoch > 0) {
      lr *= config.lr_decay;
      opt.set_learning_rate(lr);
    }
    rand::shuffle(order, order_rng);
    double epoch_total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t len = std::min(batch, n - start);
      const std::span<const std::size_t> idx(order.data() + start, len);
      const auto masks = net.sample_masks(mask_rng, static_cast<int>(len));
      Gradients grad = net.zero_gradients();
      const double loss = objective(net, idx, masks, grad);
      if (!std::isfinite(loss) || !grad.all_finite()) {
        throw TrainingError("non-finite loss during training", stats.steps);
      }
      opt.step(net, std::move(grad));
      ++stats.steps;
      epoch_total += loss;
      ++batches;
      if (epoch == 0) stats.first_epoch_batches.push_back(loss);
    }
    stats.epoch_loss.push_back(epoch_total / static_cast<double>(batches));
  }
  return stats;
}

}  // namespace uqbench::nn
