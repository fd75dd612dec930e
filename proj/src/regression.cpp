#include "uqbench/regression.hpp"

#include <cmath>

#include "uqbench/error.hpp"
#include "uqbench/io.hpp"

namespace uqbench::regression {

std::string to_string(Method m) { return m == Method::heteroscedastic ? "mc_dropout" : "adf"; }

Method parse_method(const std::string& s) {
  if (s == "mc_dropout" || s == "heteroscedastic") return Method::heteroscedastic;
  if (s == "adf") return Method::adf;
  throw ConfigError("unknown regression method '" + s + "'");
}

Standardizer Standardizer::fit(const std::vector<biomass::TreeSample>& train) {
  if (train.empty()) throw ParameterError("cannot standardize an empty training set");
  const auto moments = [&](auto field) {
    double sum = 0.0, sum_sq = 0.0;
    for (const auto& t : train) {
      const double x = field(t);
      sum += x;
      sum_sq += x * x;
    }
    const double n = static_cast<double>(train.size());
    const double mean = sum / n;
    const double var = std::max(0.0, sum_sq / n - mean * mean);
    return std::pair{mean, var > 0.0 ? std::sqrt(var) : 1.0};
  };
  Standardizer s;
  std::tie(s.d_mean, s.d_scale) = moments([](const biomass::TreeSample& t) { return t.d_noisy; });
  std::tie(s.h_mean, s.h_scale) = moments([](const biomass::TreeSample& t) { return t.h_noisy; });
  std::tie(s.b_mean, s.b_scale) = moments([](const biomass::TreeSample& t) { return t.b_true; });
  return s;
}

nn::Vector Standardizer::inputs(double d, double h) const {
  nn::Vector x(2);
  x << (d - d_mean) / d_scale, (h - h_mean) / h_scale;
  return x;
}

nn::Vector Standardizer::input_variance(double var_d, double var_h) const {
  nn::Vector v(2);
  v << var_d / (d_scale * d_scale), var_h / (h_scale * h_scale);
  return v;
}

RegressionModel make_model(const biomass::RegressionDataset& dataset, const RegressionConfig& config,
                           rand::Seed seed) {
  const auto train_samples = dataset.subset(biomass::Split::train);
  if (train_samples.empty()) throw ParameterError("dataset has no train split");
  std::vector<int> sizes{2};
  sizes.insert(sizes.end(), config.hidden.begin(), config.hidden.end());
  sizes.push_back(2);
  RegressionModel model{nn::Mlp(sizes, config.dropout_rate), Standardizer::fit(train_samples), config,
                        dataset.config.alpha};
  rand::Stream rng(seed, "regression.init");
  model.net.init(rng);
  return model;
}

namespace {

struct Prepared {
  nn::Matrix x;    // 2 x n
  nn::Matrix var;  // 2 x n
  std::vector<double> y;
};

Prepared prepare(const RegressionModel& model, const std::vector<biomass::TreeSample>& samples) {
  const auto n = static_cast<Eigen::Index>(samples.size());
  Prepared p{nn::Matrix(2, n), nn::Matrix(2, n), std::vector<double>(samples.size())};
  const auto& s = model.scaler;
  const double a2 = model.alpha * model.alpha;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& t = samples[static_cast<std::size_t>(i)];
    p.x.col(i) = s.inputs(t.d_noisy, t.h_noisy);
    p.var.col(i) = s.input_variance(a2 * t.d_noisy * t.d_noisy, a2 * t.h_noisy * t.h_noisy);
    p.y[static_cast<std::size_t>(i)] = (t.b_true - s.b_mean) / s.b_scale;
  }
  return p;
}

// Squared error on output 0 only; the log-variance output receives no gradient.
double mse_batch(const nn::Matrix& mean, std::span<const double> y, nn::Matrix* grad) {
  const auto n = static_cast<double>(y.size());
  grad->setZero(mean.rows(), mean.cols());
  double total = 0.0;
  for (Eigen::Index j = 0; j < mean.cols(); ++j) {
    const double r = y[static_cast<std::size_t>(j)] - mean(0, j);
    total += 0.5 * r * r;
    (*grad)(0, j) = -r / n;
  }
  return total / n;
}

}  // namespace

nn::TrainStats train(RegressionModel& model, const biomass::RegressionDataset& dataset,
                     const nn::TrainConfig& hyper, rand::Seed seed) {
  const auto samples = dataset.subset(biomass::Split::train);
  if (samples.empty()) throw ParameterError("dataset has no train split");
  return train(model, samples, hyper, seed);
}

nn::TrainStats train(RegressionModel& model, const std::vector<biomass::TreeSample>& samples,
                     const nn::TrainConfig& hyper, rand::Seed seed) {
  if (hyper.epochs <= 0) return {};
  if (samples.empty()) throw ParameterError("no training samples");
  const Prepared data = prepare(model, samples);
  const bool adf = model.config.method == Method::adf;
  const int warmup = std::min(model.config.warmup_epochs, hyper.epochs);

  const auto objective = [&](bool use_nll) {
    return [&, use_nll](const nn::Mlp& net, std::span<const std::size_t> batch, const nn::DropoutMasks& masks,
                        nn::Gradients& grad) {
      const auto b = static_cast<Eigen::Index>(batch.size());
      nn::Matrix x(2, b), v(2, b);
      std::vector<double> y(batch.size());
      for (Eigen::Index j = 0; j < b; ++j) {
        const auto i = static_cast<Eigen::Index>(batch[static_cast<std::size_t>(j)]);
        x.col(j) = data.x.col(i);
        v.col(j) = data.var.col(i);
        y[static_cast<std::size_t>(j)] = data.y[static_cast<std::size_t>(i)];
      }
      if (adf) {
        nn::Mlp::AdfTape tape;
        const auto out = net.forward_adf(x, v, &masks, &tape);
        nn::Matrix gm, gv;
        double loss;
        if (use_nll) {
          loss = adf_nll_batch(out, y, &gm, &gv);
        } else {
          loss = mse_batch(out.mean, y, &gm);
          gv.setZero(out.variance.rows(), out.variance.cols());
        }
        grad = net.backward_adf(tape, gm, gv);
        return loss;
      }
      nn::Mlp::Tape tape;
      const auto out = net.forward(x, &masks, &tape);
      nn::Matrix g;
      const double loss = use_nll ? nn::nll_batch(out, y, &g) : mse_batch(out, y, &g);
      grad = net.backward(tape, g);
      return loss;
    };
  };

  nn::TrainStats stats;
  if (warmup > 0) {
    auto warm = hyper;
    warm.epochs = warmup;
    stats = nn::fit(model.net, samples.size(), warm, rand::derive(seed, "regression.warmup"), objective(false));
  }
  if (hyper.epochs > warmup) {
    auto main = hyper;
    main.epochs = hyper.epochs - warmup;
    main.optimizer.learning_rate *= std::pow(hyper.lr_decay, warmup);
    auto rest = nn::fit(model.net, samples.size(), main, rand::derive(seed, "regression.main"), objective(true));
    if (stats.epoch_loss.empty()) stats.first_epoch_batches = rest.first_epoch_batches;
    stats.epoch_loss.insert(stats.epoch_loss.end(), rest.epoch_loss.begin(), rest.epoch_loss.end());
    stats.steps += rest.steps;
  }
  return stats;
}

PointPrediction predict_point(const RegressionModel& model, double d, double h) {
  const auto& s = model.scaler;
  const nn::Vector x = s.inputs(d, h);
  double mean = 0.0, var = 0.0;
  if (model.config.method == Method::adf) {
    const double a2 = model.alpha * model.alpha;
    const auto out = model.net.forward_adf(x, s.input_variance(a2 * d * d, a2 * h * h));
    mean = out.mean(0);
    var = out.variance(0) + std::exp(std::clamp(out.mean(1), nn::kMinLogVar, nn::kMaxLogVar));
  } else {
    const nn::Vector out = model.net.forward(x);
    mean = out(0);
    var = std::exp(std::clamp(out(1), nn::kMinLogVar, nn::kMaxLogVar));
  }
  return {mean * s.b_scale + s.b_mean, std::sqrt(var) * s.b_scale};
}

double evaluate_loss(const RegressionModel& model, const std::vector<biomass::TreeSample>& samples) {
  const Prepared data = prepare(model, samples);
  if (model.config.method == Method::adf) {
    return adf_nll_batch(model.net.forward_adf(data.x, data.var, nullptr, nullptr), data.y, nullptr, nullptr);
  }
  return nn::nll_batch(model.net.forward(data.x), data.y, nullptr);
}

void save_checkpoint(const RegressionModel& model, const std::filesystem::path& path) {
  const auto& s = model.scaler;
  const auto& c = model.config;
  io::json j;
  j["layer_sizes"] = model.net.layer_sizes();
  j["weights"] = model.net.flatten();
  j["standardization"] = {{"d_mean", s.d_mean}, {"d_scale", s.d_scale}, {"h_mean", s.h_mean},
                          {"h_scale", s.h_scale}, {"b_mean", s.b_mean}, {"b_scale", s.b_scale}};
  j["alpha"] = model.alpha;
  j["config"] = {{"method", to_string(c.method)},
                 {"hidden", c.hidden},
                 {"dropout_rate", c.dropout_rate},
                 {"warmup_epochs", c.warmup_epochs},
                 {"epochs", c.train.epochs},
                 {"batch_size", c.train.batch_size},
                 {"learning_rate", c.train.optimizer.learning_rate},
                 {"lr_decay", c.train.lr_decay},
                 {"optimizer", c.train.optimizer.kind == nn::OptimizerConfig::Kind::adam ? "adam" : "sgd_momentum"}};
  io::write_json(path, j);
}

RegressionModel load_checkpoint(const std::filesystem::path& path) {
  const auto j = io::read_json(path);
  try {
    RegressionModel m;
    const auto& c = j.at("config");
    m.config.method = parse_method(c.at("method").get<std::string>());
    m.config.hidden = c.at("hidden").get<std::vector<int>>();
    m.config.dropout_rate = c.at("dropout_rate").get<double>();
    m.config.warmup_epochs = c.at("warmup_epochs").get<int>();
    m.config.train.epochs = c.at("epochs").get<int>();
    m.config.train.batch_size = c.at("batch_size").get<int>();
    m.config.train.optimizer.learning_rate = c.at("learning_rate").get<double>();
    m.config.train.lr_decay = c.at("lr_decay").get<double>();
    m.config.train.optimizer.kind = c.at("optimizer").get<std::string>() == "adam"
                                        ? nn::OptimizerConfig::Kind::adam
                                        : nn::OptimizerConfig::Kind::sgd_momentum;
    m.net = nn::Mlp(j.at("layer_sizes").get<std::vector<int>>(), m.config.dropout_rate);
    m.net.unflatten(j.at("weights").get<std::vector<double>>());
    const auto& s = j.at("standardization");
    m.scaler = {s.at("d_mean"), s.at("d_scale"), s.at("h_mean"), s.at("h_scale"), s.at("b_mean"), s.at("b_scale")};
    m.alpha = j.at("alpha").get<double>();
    return m;
  } catch (const io::json::exception& e) {
    throw IoError("bad checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace uqbench::regression
