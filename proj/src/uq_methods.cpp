#include "uqbench/uq_methods.hpp"

#include <algorithm>
#include <cmath>

#include "uqbench/error.hpp"
#include "uqbench/io.hpp"

namespace uqbench::uq {

using regression::Method;
using regression::RegressionModel;

namespace {

void require_passes(int T) {
  if (T < 2) throw ParameterError("at least two stochastic passes are required");
}

double head_variance(double log_var) {
  return std::exp(std::clamp(log_var, nn::kMinLogVar, nn::kMaxLogVar));
}

// One pass for every column of (x, var) under a fresh set of masks; writes kg / kg^2.
void stochastic_pass(const RegressionModel& model, const nn::Matrix& x, const nn::Matrix& var, rand::Stream& rng,
                     std::vector<PassOutput>& out) {
  const auto& s = model.scaler;
  const auto masks = model.net.sample_masks(rng, static_cast<int>(x.cols()));
  out.resize(static_cast<std::size_t>(x.cols()));
  if (model.config.method == Method::adf) {
    const auto moments = model.net.forward_adf(x, var, &masks, nullptr);
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double v = moments.variance(0, j) + head_variance(moments.mean(1, j));
      out[static_cast<std::size_t>(j)] = {moments.mean(0, j) * s.b_scale + s.b_mean, v * s.b_scale * s.b_scale};
    }
  } else {
    const auto y = model.net.forward(x, &masks, nullptr);
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      out[static_cast<std::size_t>(j)] = {y(0, j) * s.b_scale + s.b_mean,
                                          head_variance(y(1, j)) * s.b_scale * s.b_scale};
    }
  }
}

}  // namespace

PredictionRecord combine_passes(std::span<const PassOutput> passes) {
  if (passes.size() < 2) throw ParameterError("at least two stochastic passes are required");
  const auto T = static_cast<double>(passes.size());
  double mean_b = 0.0, mean_var = 0.0;
  for (const auto& p : passes) {
    mean_b += p.b_hat;
    mean_var += p.variance;
  }
  mean_b /= T;
  mean_var /= T;
  double spread = 0.0;
  for (const auto& p : passes) spread += (p.b_hat - mean_b) * (p.b_hat - mean_b);
  spread /= T;
  return {mean_b, std::sqrt(std::max(0.0, mean_var)), std::sqrt(spread), static_cast<int>(passes.size())};
}

std::vector<PassOutput> mc_dropout_passes(const RegressionModel& model, double d, double h, int T, rand::Seed seed) {
  require_passes(T);
  const nn::Matrix x = model.scaler.inputs(d, h);
  const nn::Matrix var = nn::Matrix::Zero(2, 1);
  rand::Stream rng(seed, "uq.mc_dropout");
  std::vector<PassOutput> passes, one;
  for (int t = 0; t < T; ++t) {
    stochastic_pass(model, x, var, rng, one);
    passes.push_back(one.front());
  }
  return passes;
}

PredictionRecord predict_mc_dropout(const RegressionModel& model, double d, double h, int T, rand::Seed seed) {
  // MC dropout on an ADF model without input variance reduces to its head.
  const auto passes = mc_dropout_passes(model, d, h, T, seed);
  return combine_passes(passes);
}

PredictionRecord predict_adf(const RegressionModel& model, double d, double h, double var_d, double var_h, int T,
                             rand::Seed seed) {
  require_passes(T);
  if (!(var_d >= 0.0) || !(var_h >= 0.0)) throw DomainError("input variance must be non-negative");
  const nn::Matrix x = model.scaler.inputs(d, h);
  const nn::Matrix var = model.scaler.input_variance(var_d, var_h);
  const auto& s = model.scaler;
  rand::Stream rng(seed, "uq.adf");
  std::vector<PassOutput> passes;
  for (int t = 0; t < T; ++t) {
    const auto masks = model.net.sample_masks(rng, 1);
    const auto m = model.net.forward_adf(x, var, &masks, nullptr);
    const double v = m.variance(0, 0) + head_variance(m.mean(1, 0));
    passes.push_back({m.mean(0, 0) * s.b_scale + s.b_mean, v * s.b_scale * s.b_scale});
  }
  return combine_passes(passes);
}

TtaStatistics tta_statistics(const std::function<nn::Vector(const nn::Vector&)>& model, const nn::Vector& x,
                             const nn::Vector& noise_sd, int T, rand::Seed seed) {
  require_passes(T);
  if (noise_sd.size() != x.size()) throw ShapeError("augmentation stddev must match the input dimension");
  rand::Stream rng(seed, "uq.tta");
  std::vector<nn::Vector> outs;
  outs.reserve(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    nn::Vector xa = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) xa(i) += noise_sd(i) * rng.normal();
    outs.push_back(model(xa));
  }
  TtaStatistics st{nn::Vector::Zero(outs.front().size()), nn::Vector::Zero(outs.front().size())};
  for (const auto& o : outs) st.mean += o;
  st.mean /= static_cast<double>(T);
  for (const auto& o : outs) st.variance += (o - st.mean).cwiseAbs2();
  st.variance /= static_cast<double>(T);
  return st;
}

PredictionRecord predict_tta(const RegressionModel& model, double d, double h, double alpha, int T,
                             rand::Seed seed) {
  if (!(alpha >= 0.0)) throw ParameterError("augmentation noise level must be non-negative");
  const auto fn = [&model](const nn::Vector& xa) {
    const auto p = regression::predict_point(model, std::max(0.0, xa(0)), std::max(0.0, xa(1)));
    nn::Vector out(1);
    out << p.b_hat;
    return out;
  };
  nn::Vector x(2), sd(2);
  x << d, h;
  sd << alpha * d, alpha * h;
  const auto st = tta_statistics(fn, x, sd, T, seed);
  return {st.mean(0), std::sqrt(st.variance(0)), 0.0, T};
}

std::vector<PredictionRecord> predict_batch(const RegressionModel& model,
                                            const std::vector<biomass::TreeSample>& samples, int T,
                                            rand::Seed seed) {
  require_passes(T);
  const auto n = static_cast<Eigen::Index>(samples.size());
  nn::Matrix x(2, n), var(2, n);
  const double a2 = model.alpha * model.alpha;
  const bool adf = model.config.method == Method::adf;
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& t = samples[static_cast<std::size_t>(j)];
    x.col(j) = model.scaler.inputs(t.d_noisy, t.h_noisy);
    var.col(j) = adf ? model.scaler.input_variance(a2 * t.d_noisy * t.d_noisy, a2 * t.h_noisy * t.h_noisy)
                     : nn::Vector::Zero(2);
  }
  rand::Stream rng(seed, "uq.batch");
  std::vector<std::vector<PassOutput>> per_point(samples.size());
  std::vector<PassOutput> pass;
  for (int t = 0; t < T; ++t) {
    stochastic_pass(model, x, var, rng, pass);
    for (std::size_t j = 0; j < samples.size(); ++j) per_point[j].push_back(pass[j]);
  }
  std::vector<PredictionRecord> out;
  out.reserve(samples.size());
  for (const auto& passes : per_point) out.push_back(combine_passes(passes));
  return out;
}

void write_predictions_csv(const std::vector<biomass::TreeSample>& samples,
                           const std::vector<PredictionRecord>& predictions, const std::filesystem::path& path) {
  if (samples.size() != predictions.size()) throw ShapeError("one prediction per sample expected");
  auto out = io::open_for_write(path);
  out << "d,h,b_true,b_hat,sigma_a,sigma_e\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& t = samples[i];
    const auto& p = predictions[i];
    out << io::csv_line({io::fmt_double(t.d_true), io::fmt_double(t.h_true), io::fmt_double(t.b_true),
                         io::fmt_double(p.b_hat), io::fmt_double(p.sigma_a), io::fmt_double(p.sigma_e)});
  }
}

}  // namespace uqbench::uq
