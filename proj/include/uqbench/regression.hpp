#pragma once

// Heteroscedastic biomass regressor built on nn::Mlp.
//
// Output 0 is the predicted biomass, output 1 the predicted log-variance,
// both in standardized target units. Two flavours share the topology:
//  * heteroscedastic: point forward pass, Gaussian NLL on (mean, log-var);
//  * adf: the input noise variance is fed in as the variance of the input
//    moments and propagated through the network; the predictive variance is
//    the propagated variance of output 0 plus exp(output 1).

#include <filesystem>
#include <string>
#include <vector>

#include "uqbench/biomass.hpp"
#include "uqbench/tinynet.hpp"

namespace uqbench::regression {

enum class Method { heteroscedastic, adf };

std::string to_string(Method m);
Method parse_method(const std::string& s);

/// Affine standardization of (d, h) and of the biomass target, fitted on the train split.
struct Standardizer {
  double d_mean = 0.0, d_scale = 1.0;
  double h_mean = 0.0, h_scale = 1.0;
  double b_mean = 0.0, b_scale = 1.0;

  static Standardizer fit(const std::vector<biomass::TreeSample>& train);
  nn::Vector inputs(double d, double h) const;
  /// Raw-unit input variances (var_d, var_h) mapped to standardized units.
  nn::Vector input_variance(double var_d, double var_h) const;
};

struct RegressionConfig {
  Method method = Method::heteroscedastic;
  std::vector<int> hidden{64, 64, 64};
  double dropout_rate = 0.10;
  nn::TrainConfig train{};
  /// Epochs at the start of training where the log-variance output is held
  /// at zero (plain squared error on the mean).
  int warmup_epochs = 5;
};

struct RegressionModel {
  nn::Mlp net;
  Standardizer scaler;
  RegressionConfig config;
  /// Noise level used to build input variances (alpha x)^2 for the ADF flavour.
  double alpha = 0.0;
};

/// Builds an initialised model for a dataset: fits the standardizer on the
/// train split and draws initial weights from `seed`.
RegressionModel make_model(const biomass::RegressionDataset& dataset, const RegressionConfig& config,
                           rand::Seed seed);

/// Trains on the train split of `dataset`. Zero epochs leaves the model
/// unchanged. Throws TrainingError on divergence.
nn::TrainStats train(RegressionModel& model, const biomass::RegressionDataset& dataset,
                     const nn::TrainConfig& hyper, rand::Seed seed);

/// Same as above over an explicit sample list (all treated as training data).
nn::TrainStats train(RegressionModel& model, const std::vector<biomass::TreeSample>& samples,
                     const nn::TrainConfig& hyper, rand::Seed seed);

/// Deterministic prediction (no dropout): (b_hat, sigma_hat) in kg.
struct PointPrediction {
  double b_hat = 0.0;
  double sigma = 0.0;
};
PointPrediction predict_point(const RegressionModel& model, double d, double h);

/// Mean NLL (standardized units) of the model over the given samples.
double evaluate_loss(const RegressionModel& model, const std::vector<biomass::TreeSample>& samples);

void save_checkpoint(const RegressionModel& model, const std::filesystem::path& path);
RegressionModel load_checkpoint(const std::filesystem::path& path);

}  // namespace uqbench::regression
