#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "uqbench/bench.hpp"
#include "uqbench/biomass.hpp"
#include "uqbench/error.hpp"
#include "uqbench/evalkit.hpp"
#include "uqbench/label_uq.hpp"
#include "uqbench/randkit.hpp"
#include "uqbench/reference.hpp"
#include "uqbench/seg_entropy.hpp"

namespace py = pybind11;
using namespace uqbench;

namespace {

py::dict dataset_dict(const biomass::RegressionDataset& ds) {
  std::vector<double> d_true, h_true, d_noisy, h_noisy, b_true;
  std::vector<std::string> split;
  for (const auto& t : ds.samples) {
    d_true.push_back(t.d_true);
    h_true.push_back(t.h_true);
    d_noisy.push_back(t.d_noisy);
    h_noisy.push_back(t.h_noisy);
    b_true.push_back(t.b_true);
    split.push_back(biomass::to_string(t.split));
  }
  py::dict out;
  out["d_true"] = d_true;
  out["h_true"] = h_true;
  out["d_noisy"] = d_noisy;
  out["h_noisy"] = h_noisy;
  out["b_true"] = b_true;
  out["split"] = split;
  out["generated_count"] = ds.generated_count;
  return out;
}

bench::BenchConfig config_from(const std::string& json_text) {
  return json_text.empty() ? bench::BenchConfig{} : bench::from_json(io::json::parse(json_text));
}

}  // namespace

PYBIND11_MODULE(_uqbench, m) {
  m.doc() = "Aleatoric uncertainty benchmark toolkit";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ParameterError>(m, "ParameterError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<MetricError>(m, "MetricError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def("derive_seed", [](std::uint64_t root, const std::string& purpose, std::uint64_t index) {
    return rand::derive({root}, purpose, index).value;
  }, py::arg("root"), py::arg("purpose"), py::arg("index") = 0);
  m.def("sample_gamma", [](double shape, double loc, double scale, std::size_t n, std::uint64_t seed) {
    return rand::sample_gamma({shape, loc, scale}, n, {seed});
  }, py::arg("shape"), py::arg("loc"), py::arg("scale"), py::arg("n"), py::arg("seed"));

  m.def("biomass", &biomass::biomass, py::arg("d"), py::arg("h"), py::arg("rho") = biomass::kWoodDensity);
  m.def("generate_dataset", [](double alpha, int n_per_axis, std::uint64_t seed, const std::string& split) {
    biomass::DatasetConfig c;
    c.alpha = alpha;
    c.n_per_axis = n_per_axis;
    c.seed = {seed};
    c.strategy = biomass::parse_split_strategy(split);
    return dataset_dict(biomass::generate_dataset(c));
  }, py::arg("alpha"), py::arg("n_per_axis"), py::arg("seed"), py::arg("split") = "random80_20");

  m.def("delta_method_sigma", &reference::delta_method_sigma, py::arg("d"), py::arg("h"), py::arg("alpha"));
  m.def("reference_sigma", [](double alpha, std::int64_t dense_per_axis, int k, int lattice, std::uint64_t seed) {
    reference::McConfig mc;
    mc.dense_per_axis = dense_per_axis;
    mc.k_neighbors = k;
    mc.lattice_per_axis = lattice;
    const auto t = reference::smooth_sigma(reference::pooled_sigma(alpha, mc, {seed}));
    py::dict out;
    out["d"] = t.d_nodes;
    out["h"] = t.h_nodes;
    out["sigma_raw"] = t.sigma_raw;
    out["sigma_smoothed"] = t.sigma_smoothed;
    out["c"] = t.fit.c;
    out["p"] = t.fit.p;
    return out;
  }, py::arg("alpha"), py::arg("dense_per_axis") = 20000, py::arg("k") = 3200, py::arg("lattice") = 50,
     py::arg("seed") = 0);

  m.def("r_squared", [](const std::vector<double>& p, const std::vector<double>& r) { return eval::r_squared(p, r); });
  m.def("rmse", [](const std::vector<double>& p, const std::vector<double>& r) { return eval::rmse(p, r); });
  m.def("pct_rmse", [](const std::vector<double>& p, const std::vector<double>& r) { return eval::pct_rmse(p, r); });
  m.def("pearson", [](const std::vector<double>& x, const std::vector<double>& y) { return eval::pearson(x, y); });

  m.def("histogram_entropy", &seg::histogram_entropy, py::arg("probabilities"), py::arg("bins") = 50);
  m.def("predicted_entropy", [](int height, int width, int classes, const std::vector<double>& mean,
                                const std::vector<double>& variance, int samples, int bins, std::uint64_t seed) {
    auto f = seg::LogitField::from_moments(height, width, classes);
    if (mean.size() != f.entry_count() || variance.size() != f.entry_count()) {
      throw ShapeError("mean and variance must have H*W*C entries");
    }
    f.mean = mean;
    f.variance = variance;
    return seg::predicted_entropy(f, {samples, bins, seg::EntropyEstimator::histogram}, {seed}).per_pixel;
  }, py::arg("height"), py::arg("width"), py::arg("classes"), py::arg("mean"), py::arg("variance"),
     py::arg("samples") = 5000, py::arg("bins") = 50, py::arg("seed") = 0);

  m.def("to_distributional", [](const std::vector<int>& counts) { return label::to_distributional({counts}); });
  m.def("kl_loss", &label::kl_loss, py::arg("y"), py::arg("p"));
  m.def("ece", [](const std::vector<double>& confidence, const std::vector<bool>& correct, int bins) {
    return label::ece(confidence, correct, bins).ece;
  }, py::arg("confidence"), py::arg("correct"), py::arg("bins") = 10);

  m.def("default_config", [] { return bench::to_json(bench::BenchConfig{}).dump(); });
  m.def("resolve_config", [](const std::string& json_text) { return bench::to_json(config_from(json_text)).dump(); },
        py::arg("config_json"));
  m.def("run_generate", [](const std::string& j) { bench::cmd_generate(config_from(j)); }, py::arg("config_json"));
  m.def("run_reference", [](const std::string& j) { bench::cmd_reference(config_from(j)); }, py::arg("config_json"));
  m.def("run_train_eval", [](const std::string& j) {
    py::list rows;
    for (const auto& r : bench::cmd_train_eval(config_from(j)).table2) {
      py::dict d;
      d["method"] = r.method;
      d["alpha"] = r.alpha;
      d["r2_biomass"] = r.r2_biomass;
      d["pct_rmse_biomass"] = r.pct_rmse_biomass;
      d["r2_sigma"] = r.r2_sigma;
      d["pct_rmse_sigma"] = r.pct_rmse_sigma;
      rows.append(d);
    }
    return rows;
  }, py::arg("config_json"));
  m.def("reproduce", [](const std::string& j, const std::string& table) {
    return bench::reproduce(config_from(j), table);
  }, py::arg("config_json"), py::arg("table"));
}
