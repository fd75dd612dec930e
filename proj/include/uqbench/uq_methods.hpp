#pragma once

// Inference-time uncertainty procedures for the biomass regressor:
// heteroscedastic MC dropout, ADF moment propagation with MC dropout, and
// test-time augmentation.
//
// Aleatoric and epistemic parts are combined from T stochastic passes as
//   sigma_a^2 = mean_i var_i,   sigma_e^2 = mean_i b_i^2 - (mean_i b_i)^2.

#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "uqbench/regression.hpp"

namespace uqbench::uq {

struct PredictionRecord {
  double b_hat = 0.0;
  double sigma_a = 0.0;
  double sigma_e = 0.0;
  int t_samples = 0;
};

/// Output of one stochastic pass, in kg and kg^2.
struct PassOutput {
  double b_hat = 0.0;
  double variance = 0.0;
};

/// Combines passes into a record. The epistemic term is computed around the
/// pass mean, which equals the moment form above but is exact for identical passes.
PredictionRecord combine_passes(std::span<const PassOutput> passes);

/// T passes with dropout active. Requires T >= 2.
std::vector<PassOutput> mc_dropout_passes(const regression::RegressionModel& model, double d, double h, int T,
                                          rand::Seed seed);

PredictionRecord predict_mc_dropout(const regression::RegressionModel& model, double d, double h, int T,
                                    rand::Seed seed);

/// ADF forward with input variances (var_d, var_h) in raw units, repeated over
/// T dropout masks. The aleatoric part of each pass is the propagated variance
/// of the biomass output plus the log-variance head.
PredictionRecord predict_adf(const regression::RegressionModel& model, double d, double h, double var_d,
                             double var_h, int T, rand::Seed seed);

/// Mean and per-output variance of a deterministic model under Gaussian input
/// augmentation with per-dimension stddev `noise_sd`.
struct TtaStatistics {
  nn::Vector mean;
  nn::Vector variance;
};
TtaStatistics tta_statistics(const std::function<nn::Vector(const nn::Vector&)>& model, const nn::Vector& x,
                             const nn::Vector& noise_sd, int T, rand::Seed seed);

/// Test-time augmentation with the benchmark noise model N(0, (alpha x)^2)
/// on (d, h); sigma_a is the spread of the deterministic outputs, sigma_e = 0.
PredictionRecord predict_tta(const regression::RegressionModel& model, double d, double h, double alpha, int T,
                             rand::Seed seed);

/// Predicts every sample with the model's own method (MC dropout for the
/// heteroscedastic head, ADF + MC dropout for the ADF head). Inputs are the
/// samples' noisy coordinates, which equal the true ones on the test split.
std::vector<PredictionRecord> predict_batch(const regression::RegressionModel& model,
                                            const std::vector<biomass::TreeSample>& samples, int T,
                                            rand::Seed seed);

// CSV columns: d,h,b_true,b_hat,sigma_a,sigma_e
void write_predictions_csv(const std::vector<biomass::TreeSample>& samples,
                           const std::vector<PredictionRecord>& predictions, const std::filesystem::path& path);

}  // namespace uqbench::uq
