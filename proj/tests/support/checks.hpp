#pragma once

// Independent oracles shared by the unit tests and the acceptance binary:
// central finite differences for the two training losses and Monte-Carlo
// propagation through affine networks.

#include <algorithm>
#include <cmath>
#include <vector>

#include "uqbench/label_uq.hpp"
#include "uqbench/randkit.hpp"
#include "uqbench/tinynet.hpp"

namespace checks {

using uqbench::nn::DropoutMasks;
using uqbench::nn::Gradients;
using uqbench::nn::Matrix;
using uqbench::nn::Mlp;

inline std::vector<double> flatten(const Gradients& g) {
  std::vector<double> out;
  for (std::size_t l = 0; l < g.weight.size(); ++l) {
    out.insert(out.end(), g.weight[l].data(), g.weight[l].data() + g.weight[l].size());
    out.insert(out.end(), g.bias[l].data(), g.bias[l].data() + g.bias[l].size());
  }
  return out;
}

struct GradientComparison {
  double worst_relative = 0.0;
  bool pass = true;
};

/// Relative tolerance with an absolute floor.
inline GradientComparison compare(const std::vector<double>& analytic, const std::vector<double>& numeric,
                                  double rel = 1e-4, double abs_floor = 1e-6) {
  GradientComparison c;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double diff = std::abs(analytic[i] - numeric[i]);
    const double scale = std::max(std::abs(analytic[i]), std::abs(numeric[i]));
    if (scale > abs_floor) c.worst_relative = std::max(c.worst_relative, diff / scale);
    if (diff > abs_floor && diff > rel * scale) c.pass = false;
  }
  return c;
}

template <typename Loss>
std::vector<double> numeric_gradient(Mlp net, Loss loss, double h = 1e-6) {
  auto params = net.flatten();
  std::vector<double> g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + h;
    net.unflatten(params);
    const double up = loss(net);
    params[i] = keep - h;
    net.unflatten(params);
    const double down = loss(net);
    params[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

/// A random small network with random biases.
inline Mlp random_net(uqbench::rand::Stream& rng, int inputs, int outputs, double dropout = 0.0) {
  std::vector<int> sizes{inputs};
  const int hidden = 1 + static_cast<int>(rng.below(3));
  for (int l = 0; l < hidden; ++l) sizes.push_back(2 + static_cast<int>(rng.below(7)));
  sizes.push_back(outputs);
  Mlp net(sizes, dropout);
  net.init(rng);
  for (auto& layer : net.layers()) {
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = 0.3 * rng.normal();
  }
  return net;
}

inline Matrix random_matrix(uqbench::rand::Stream& rng, Eigen::Index rows, Eigen::Index cols, double sd = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = sd * rng.normal();
  }
  return m;
}

/// Heteroscedastic NLL gradient check on one random configuration.
inline GradientComparison check_nll_gradient(std::uint64_t seed) {
  uqbench::rand::Stream rng({seed}, "gradcheck.nll");
  const int inputs = 1 + static_cast<int>(rng.below(4));
  const int batch = 1 + static_cast<int>(rng.below(8));
  const bool with_dropout = rng.bernoulli(0.5);
  const Mlp net = random_net(rng, inputs, 2, with_dropout ? 0.2 : 0.0);
  const Matrix x = random_matrix(rng, inputs, batch);
  std::vector<double> t(static_cast<std::size_t>(batch));
  for (auto& v : t) v = rng.normal();
  const DropoutMasks masks = net.sample_masks(rng, batch);
  const auto loss = [&](const Mlp& n) { return uqbench::nn::nll_batch(n.forward(x, &masks, nullptr), t, nullptr); };
  Mlp::Tape tape;
  Matrix g;
  uqbench::nn::nll_batch(net.forward(x, &masks, &tape), t, &g);
  return compare(flatten(net.backward(tape, g)), numeric_gradient(net, loss));
}

/// Mean KL(y || softmax(net(x))) gradient check with random vote distributions.
inline GradientComparison check_kl_gradient(std::uint64_t seed) {
  uqbench::rand::Stream rng({seed}, "gradcheck.kl");
  const int inputs = 1 + static_cast<int>(rng.below(5));
  const int classes = 2 + static_cast<int>(rng.below(6));
  const int batch = 1 + static_cast<int>(rng.below(8));
  const Mlp net = random_net(rng, inputs, classes);
  const Matrix x = random_matrix(rng, inputs, batch);
  std::vector<std::vector<double>> y;
  for (int j = 0; j < batch; ++j) {
    uqbench::label::VoteLabel v{std::vector<int>(static_cast<std::size_t>(classes), 0)};
    for (int m = 0; m < 10; ++m) ++v.counts[rng.below(static_cast<std::uint64_t>(classes))];
    y.push_back(uqbench::label::to_distributional(v));
  }
  const auto loss = [&](const Mlp& n) {
    const Matrix p = uqbench::nn::softmax(n.forward(x));
    double total = 0.0;
    for (int j = 0; j < batch; ++j) {
      std::vector<double> pj(p.col(j).data(), p.col(j).data() + classes);
      total += uqbench::label::kl_loss(y[static_cast<std::size_t>(j)], pj);
    }
    return total / batch;
  };
  Mlp::Tape tape;
  const Matrix z = net.forward(x, nullptr, &tape);
  Matrix g(classes, batch);
  for (int j = 0; j < batch; ++j) {
    std::vector<double> zj(z.col(j).data(), z.col(j).data() + classes);
    const auto gj = uqbench::label::kl_gradient_logits(y[static_cast<std::size_t>(j)], zj);
    for (int k = 0; k < classes; ++k) g(k, j) = gj[static_cast<std::size_t>(k)] / batch;
  }
  return compare(flatten(net.backward(tape, g)), numeric_gradient(net, loss));
}

struct AdfMcComparison {
  double worst_z = 0.0;  // largest |ADF - MC| in MC standard errors
  bool pass = true;
};

/// Purely affine network (one layer, no rectifier): ADF moments against the
/// sample moments of `samples` Gaussian inputs pushed through forward().
inline AdfMcComparison check_affine_adf(std::uint64_t seed, int samples = 100000) {
  uqbench::rand::Stream rng({seed}, "adfcheck");
  const int inputs = 1 + static_cast<int>(rng.below(4));
  const int outputs = 1 + static_cast<int>(rng.below(3));
  Mlp net({inputs, outputs});
  net.init(rng);
  for (auto& layer : net.layers()) {
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = rng.normal();
  }
  uqbench::nn::Vector mu(inputs), var(inputs);
  for (int i = 0; i < inputs; ++i) {
    mu(i) = 2.0 * rng.normal();
    var(i) = 0.1 + 2.0 * rng.uniform();
  }
  const auto adf = net.forward_adf(mu, var);
  Matrix x(inputs, samples);
  for (int s = 0; s < samples; ++s) {
    for (int i = 0; i < inputs; ++i) x(i, s) = mu(i) + std::sqrt(var(i)) * rng.normal();
  }
  const Matrix y = net.forward(x);
  AdfMcComparison c;
  for (int o = 0; o < outputs; ++o) {
    const double m = y.row(o).mean();
    const double v = (y.row(o).array() - m).square().sum() / (samples - 1);
    const double se_mean = std::sqrt(v / samples);
    const double se_var = v * std::sqrt(2.0 / (samples - 1));
    const double z_mean = std::abs(adf.mean(o) - m) / se_mean;
    const double z_var = std::abs(adf.variance(o) - v) / se_var;
    c.worst_z = std::max({c.worst_z, z_mean, z_var});
  }
  c.pass = c.worst_z <= 3.0;
  return c;
}

}  // namespace checks
