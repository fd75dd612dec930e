#pragma once

// A small fully-connected network: affine layers with rectifiers on hidden
// layers and identity on the output, trained by exact backpropagation.
//
// Besides the ordinary point forward pass the network supports
//  * inverted dropout on hidden activations via explicit keep-masks, and
//  * assumed density filtering (ADF): (mean, variance) pairs are pushed
//    through every layer, with exact rectified-Gaussian moments.
//
// Batches are stored column-wise: an input batch is (input_size x batch).

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "uqbench/randkit.hpp"

namespace uqbench::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Layer {
  Matrix weight;  // out x in
  Vector bias;    // out
};

/// Per-unit diagonal Gaussian description of an activation vector.
struct GaussianActivation {
  Vector mean;
  Vector variance;
};

/// Column-batched GaussianActivation.
struct GaussianBatch {
  Matrix mean;
  Matrix variance;
};

/// One mask per hidden layer, (units x batch), entries 0 or 1/(1 - rate).
using DropoutMasks = std::vector<Matrix>;

struct Gradients {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;

  void scale(double s);
  double squared_norm() const;
  bool all_finite() const;
};

/// Moments of max(0, X) for X ~ N(mean, variance), with partial derivatives.
struct RectifiedMoments {
  double mean = 0.0;
  double variance = 0.0;
  double dmean_dmu = 0.0;
  double dmean_dvar = 0.0;
  double dvar_dmu = 0.0;
  double dvar_dvar = 0.0;
};

RectifiedMoments rectified_gaussian(double mu, double var);

class Mlp {
 public:
  /// Cached intermediate values of a point forward pass.
  struct Tape {
    std::vector<Matrix> inputs;  // input to each layer
    std::vector<Matrix> pre;     // affine output of each layer
    const DropoutMasks* masks = nullptr;
  };

  /// Cached intermediate values of an ADF forward pass.
  struct AdfTape {
    std::vector<Matrix> in_mean, in_var;
    std::vector<Matrix> pre_mean, pre_var;
    const DropoutMasks* masks = nullptr;
  };

  Mlp() = default;
  /// Zero-initialised network; sizes = {inputs, hidden..., outputs}.
  explicit Mlp(std::vector<int> layer_sizes, double dropout_rate = 0.0);

  const std::vector<int>& layer_sizes() const noexcept { return sizes_; }
  int input_size() const noexcept { return sizes_.front(); }
  int output_size() const noexcept { return sizes_.back(); }
  std::size_t layer_count() const noexcept { return layers_.size(); }
  std::vector<Layer>& layers() noexcept { return layers_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }

  double dropout_rate() const noexcept { return dropout_rate_; }
  void set_dropout_rate(double rate);

  /// He-normal weights for rectifier layers, Glorot-like for the output, zero biases.
  void init(rand::Stream& rng);

  std::size_t parameter_count() const;
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> values);

  /// Deterministic forward pass (no dropout).
  Vector forward(const Vector& x) const;
  Matrix forward(const Matrix& x) const;
  /// Forward pass with optional dropout masks, optionally recording a tape.
  Matrix forward(const Matrix& x, const DropoutMasks* masks, Tape* tape) const;

  /// Gradients of sum_over_batch(loss) given dLoss/dOutput (outputs x batch).
  Gradients backward(const Tape& tape, const Matrix& grad_out) const;

  /// Draws keep-masks for every hidden layer. With rate 0 all entries are 1.
  DropoutMasks sample_masks(rand::Stream& rng, int batch) const;

  /// Moment propagation for a single input. Throws DomainError on negative variance.
  GaussianActivation forward_adf(const Vector& mean, const Vector& var,
                                 const DropoutMasks* masks = nullptr) const;
  GaussianBatch forward_adf(const Matrix& mean, const Matrix& var, const DropoutMasks* masks,
                            AdfTape* tape) const;
  Gradients backward_adf(const AdfTape& tape, const Matrix& grad_mean, const Matrix& grad_var) const;

  Gradients zero_gradients() const;

 private:
  void check_input(Eigen::Index rows) const;

  std::vector<int> sizes_;
  std::vector<Layer> layers_;
  double dropout_rate_ = 0.0;
};

/// Heteroscedastic negative log-likelihood of one sample in log-variance form:
/// 0.5 exp(-log_var) (b_true - b_hat)^2 + 0.5 log_var.
double loss_nll(double b_true, double b_hat, double log_var);

/// Log-variance values are clamped to this range inside the losses.
inline constexpr double kMinLogVar = -25.0;
inline constexpr double kMaxLogVar = 25.0;

/// Mean NLL over a batch for a two-output (mean, log-variance) head.
/// Writes dLoss/dOutput into grad (2 x batch) when non-null.
double nll_batch(const Matrix& out, std::span<const double> target, Matrix* grad);

/// Mean NLL for an ADF head: total variance = propagated variance of output 0
/// plus exp(mean of output 1). Writes gradients w.r.t. output means/variances.
double adf_nll_batch(const GaussianBatch& out, std::span<const double> target, Matrix* grad_mean,
                     Matrix* grad_var);

/// Column-wise softmax.
Matrix softmax(const Matrix& logits);

/// Mean over the batch of -sum_k y_k log p_k with p = softmax(logits); targets
/// are probability columns. Gradient w.r.t. logits is (p - y) / batch.
double softmax_cross_entropy(const Matrix& logits, const Matrix& targets, Matrix* grad);

struct OptimizerConfig {
  enum class Kind { sgd_momentum, adam };
  Kind kind = Kind::adam;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Rescales the gradient when its norm exceeds this; 0 disables.
  double clip_norm = 0.0;
};

class Optimizer {
 public:
  Optimizer(const Mlp& net, OptimizerConfig config);
  void step(Mlp& net, Gradients grad);
  void set_learning_rate(double lr) noexcept { config_.learning_rate = lr; }

 private:
  OptimizerConfig config_;
  Gradients first_, second_;
  long long t_ = 0;
};

struct TrainConfig {
  int epochs = 60;
  int batch_size = 64;
  OptimizerConfig optimizer{};
  /// Learning rate is multiplied by this factor at the start of each epoch
  /// after the first (1 keeps it constant).
  double lr_decay = 1.0;
};

struct TrainStats {
  std::vector<double> epoch_loss;
  /// Loss of every minibatch of the first epoch, in order.
  std::vector<double> first_epoch_batches;
  std::size_t steps = 0;
};

/// Computes the mean loss over `batch` and writes its gradient into `grad`
/// (pre-sized by the caller). `masks` carries a fresh set of dropout masks
/// sized to the batch.
using BatchObjective = std::function<double(const Mlp& net, std::span<const std::size_t> batch,
                                            const DropoutMasks& masks, Gradients& grad)>;

/// Minibatch training over indices [0, n). Throws TrainingError when the loss
/// or gradient turns non-finite. Deterministic given seed.
TrainStats fit(Mlp& net, std::size_t n, const TrainConfig& config, rand::Seed seed,
               const BatchObjective& objective);

}  // namespace uqbench::nn
