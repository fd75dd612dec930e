#include "uqbench/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fmt/core.h>

#include "uqbench/error.hpp"
#include "uqbench/label_uq.hpp"
#include "uqbench/segmenter.hpp"
#include "uqbench/uq_methods.hpp"

namespace uqbench::bench {

namespace fs = std::filesystem;
using io::json;

std::string to_string(Track t) {
  switch (t) {
    case Track::regression: return "regression";
    case Track::segmentation: return "segmentation";
    case Track::classification: return "classification";
  }
  return "unknown";
}

Track parse_track(const std::string& s) {
  if (s == "regression") return Track::regression;
  if (s == "segmentation") return Track::segmentation;
  if (s == "classification") return Track::classification;
  throw ConfigError("unknown track '" + s + "'");
}

// ---- configuration ---------------------------------------------------------

namespace {

std::string centering_name(reference::Centering c) {
  return c == reference::Centering::neighbour_truth ? "neighbour_truth" : "node_truth";
}

reference::Centering parse_centering(const std::string& s) {
  if (s == "neighbour_truth") return reference::Centering::neighbour_truth;
  if (s == "node_truth") return reference::Centering::node_truth;
  throw ConfigError("unknown centering '" + s + "'");
}

seg::EntropyEstimator parse_estimator(const std::string& s) {
  if (s == "histogram") return seg::EntropyEstimator::histogram;
  if (s == "categorical") return seg::EntropyEstimator::categorical;
  throw ConfigError("unknown entropy estimator '" + s + "'");
}

// Keys of `given` must exist in `defaults`, except below free-form maps.
void check_keys(const json& given, const json& defaults, const std::string& where) {
  if (!given.is_object()) return;
  if (!defaults.is_object()) throw ConfigError("'" + where + "' is not an object");
  for (const auto& [key, value] : given.items()) {
    const std::string path = where.empty() ? key : where + "." + key;
    if (!defaults.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    if (key == "alphas_by_method" || key == "level_units") continue;
    if (value.is_object()) check_keys(value, defaults.at(key), path);
  }
}

}  // namespace

json to_json(const BenchConfig& c) {
  const auto& r = c.regression;
  const auto& s = c.segmentation;
  const auto& k = c.classification;
  json alphas_by_method = json::object();
  for (const auto& [m, a] : r.alphas_by_method) alphas_by_method[m] = a;
  return json{
      {"track", to_string(c.track)},
      {"seed", c.seed},
      {"output_dir", c.output_dir.string()},
      {"regression",
       {{"alphas", r.alphas},
        {"alphas_by_method", alphas_by_method},
        {"methods", r.methods},
        {"n_per_axis", r.n_per_axis},
        {"size_multipliers", r.size_multipliers},
        {"multiplier_alpha", r.multiplier_alpha},
        {"split", r.split},
        {"replicates", r.replicates},
        {"mc_samples", r.mc_samples},
        {"net",
         {{"hidden", r.net.hidden},
          {"dropout_rate", r.net.dropout_rate},
          {"epochs", r.net.epochs},
          {"batch_size", r.net.batch_size},
          {"learning_rate", r.net.learning_rate},
          {"lr_decay", r.net.lr_decay},
          {"warmup_epochs", r.net.warmup_epochs},
          {"optimizer", r.net.optimizer},
          {"multiplier_budget", r.net.multiplier_budget}}},
        {"oracle",
         {{"dense_per_axis", r.oracle.dense_per_axis},
          {"k_neighbors", r.oracle.k_neighbors},
          {"lattice_per_axis", r.oracle.lattice_per_axis},
          {"centering", centering_name(r.oracle.centering)}}}}},
      {"segmentation",
       {{"scene_size", s.scene_size},
        {"rects_per_scene", s.rects_per_scene},
        {"train_scenes", s.train_scenes},
        {"test_scenes", s.test_scenes},
        {"kinds", s.kinds},
        {"levels", s.levels},
        {"level_unit", s.level_unit},
        {"level_units", s.level_units},
        {"jitter_scale", s.jitter_scale},
        {"poisson_centered", s.poisson_centered},
        {"replicates", s.replicates},
        {"tta_samples", s.tta_samples},
        {"mc_samples", s.mc_samples},
        {"bins", s.bins},
        {"estimator", s.estimator}}},
      {"classification",
       {{"classes", k.classes},
        {"train_items", k.train_items},
        {"test_items", k.test_items},
        {"votes", k.votes},
        {"vote_accuracy", k.vote_accuracy},
        {"replicates", k.replicates},
        {"hidden", k.hidden},
        {"epochs", k.epochs},
        {"batch_size", k.batch_size},
        {"learning_rate", k.learning_rate},
        {"ece_bins", k.ece_bins}}}};
}

BenchConfig from_json(const json& given) {
  if (!given.is_object()) throw ConfigError("config must be a JSON object");
  json j = to_json(BenchConfig{});
  check_keys(given, j, "");
  j.merge_patch(given);
  // merge_patch merges maps key by key; these maps are replaced as a whole.
  if (given.contains("regression") && given["regression"].contains("alphas_by_method")) {
    j["regression"]["alphas_by_method"] = given["regression"]["alphas_by_method"];
  }
  if (given.contains("segmentation") && given["segmentation"].contains("level_units")) {
    j["segmentation"]["level_units"] = given["segmentation"]["level_units"];
  }
  BenchConfig c;
  try {
    c.track = parse_track(j.at("track").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
    c.output_dir = j.at("output_dir").get<std::string>();
    const auto& r = j.at("regression");
    auto& R = c.regression;
    R.alphas = r.at("alphas").get<std::vector<double>>();
    R.alphas_by_method.clear();
    for (const auto& [m, a] : r.at("alphas_by_method").items()) R.alphas_by_method[m] = a.get<std::vector<double>>();
    R.methods = r.at("methods").get<std::vector<std::string>>();
    R.n_per_axis = r.at("n_per_axis").get<int>();
    R.size_multipliers = r.at("size_multipliers").get<std::vector<int>>();
    R.multiplier_alpha = r.at("multiplier_alpha").get<double>();
    R.split = r.at("split").get<std::string>();
    R.replicates = r.at("replicates").get<int>();
    R.mc_samples = r.at("mc_samples").get<int>();
    const auto& n = r.at("net");
    R.net.hidden = n.at("hidden").get<std::vector<int>>();
    R.net.dropout_rate = n.at("dropout_rate").get<double>();
    R.net.epochs = n.at("epochs").get<int>();
    R.net.batch_size = n.at("batch_size").get<int>();
    R.net.learning_rate = n.at("learning_rate").get<double>();
    R.net.lr_decay = n.at("lr_decay").get<double>();
    R.net.warmup_epochs = n.at("warmup_epochs").get<int>();
    R.net.optimizer = n.at("optimizer").get<std::string>();
    R.net.multiplier_budget = n.at("multiplier_budget").get<std::string>();
    const auto& o = r.at("oracle");
    R.oracle.dense_per_axis = o.at("dense_per_axis").get<std::int64_t>();
    R.oracle.k_neighbors = o.at("k_neighbors").get<int>();
    R.oracle.lattice_per_axis = o.at("lattice_per_axis").get<int>();
    R.oracle.centering = parse_centering(o.at("centering").get<std::string>());

    const auto& s = j.at("segmentation");
    auto& S = c.segmentation;
    S.scene_size = s.at("scene_size").get<int>();
    S.rects_per_scene = s.at("rects_per_scene").get<int>();
    S.train_scenes = s.at("train_scenes").get<int>();
    S.test_scenes = s.at("test_scenes").get<int>();
    S.kinds = s.at("kinds").get<std::vector<std::string>>();
    S.levels = s.at("levels").get<std::vector<double>>();
    S.level_unit = s.at("level_unit").get<double>();
    S.level_units = s.at("level_units").get<std::map<std::string, double>>();
    S.jitter_scale = s.at("jitter_scale").get<double>();
    S.poisson_centered = s.at("poisson_centered").get<bool>();
    S.replicates = s.at("replicates").get<int>();
    S.tta_samples = s.at("tta_samples").get<int>();
    S.mc_samples = s.at("mc_samples").get<int>();
    S.bins = s.at("bins").get<int>();
    S.estimator = s.at("estimator").get<std::string>();

    const auto& k = j.at("classification");
    auto& K = c.classification;
    K.classes = k.at("classes").get<int>();
    K.train_items = k.at("train_items").get<int>();
    K.test_items = k.at("test_items").get<int>();
    K.votes = k.at("votes").get<int>();
    K.vote_accuracy = k.at("vote_accuracy").get<double>();
    K.replicates = k.at("replicates").get<int>();
    K.hidden = k.at("hidden").get<std::vector<int>>();
    K.epochs = k.at("epochs").get<int>();
    K.batch_size = k.at("batch_size").get<int>();
    K.learning_rate = k.at("learning_rate").get<double>();
    K.ece_bins = k.at("ece_bins").get<int>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }

  // Validate names early so a typo fails before any work is done.
  for (const auto& m : c.regression.methods) regression::parse_method(m);
  for (const auto& [m, a] : c.regression.alphas_by_method) regression::parse_method(m);
  biomass::parse_split_strategy(c.regression.split);
  for (const auto& k : c.segmentation.kinds) seg::parse_corruption(k);
  for (const auto& [k, u] : c.segmentation.level_units) {
    seg::parse_corruption(k);
    if (!(u > 0.0)) throw ConfigError("level unit for '" + k + "' must be positive");
  }
  parse_estimator(c.segmentation.estimator);
  if (c.regression.net.optimizer != "adam" && c.regression.net.optimizer != "sgd_momentum") {
    throw ConfigError("unknown optimizer '" + c.regression.net.optimizer + "'");
  }
  if (c.regression.net.multiplier_budget != "equal_epochs" && c.regression.net.multiplier_budget != "equal_steps") {
    throw ConfigError("unknown multiplier budget '" + c.regression.net.multiplier_budget + "'");
  }
  for (const int m : c.regression.size_multipliers) {
    const int root = static_cast<int>(std::lround(std::sqrt(static_cast<double>(m))));
    if (m < 1 || root * root != m) throw ConfigError(fmt::format("size multiplier {} is not a perfect square", m));
  }
  if (c.regression.replicates < 1 || c.segmentation.test_scenes < 1 || c.classification.replicates < 1) {
    throw ConfigError("replicate and scene counts must be positive");
  }
  return c;
}

BenchConfig load_config(const fs::path& path) { return from_json(io::read_json(path)); }

void apply_override(BenchConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json patch = value;
  std::string rest = key;
  std::vector<std::string> parts;
  for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1)) {
    parts.push_back(rest.substr(0, pos));
  }
  parts.push_back(rest);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  json j = to_json(config);
  check_keys(patch, j, "");
  // Replace the addressed value outright (merge_patch would merge objects and drop nulls).
  json* node = &j;
  for (const auto& p : parts) node = &(*node)[p];
  *node = value;
  config = from_json(j);
}

fs::path default_output_root() {
  if (const char* env = std::getenv("UQBENCH_OUT"); env && *env) return env;
  return "uqbench_out";
}

namespace {

fs::path out_root(const BenchConfig& c) { return c.output_dir.empty() ? default_output_root() : c.output_dir; }

void write_resolved_config(const BenchConfig& c, const fs::path& dir) {
  auto resolved = c;
  resolved.output_dir = out_root(c);
  io::write_json(dir / "config.json", to_json(resolved));
}

std::string num(double x) { return io::fmt_double(x); }

double median(std::vector<double> v) { return eval::quantile(std::move(v), 0.5); }

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (const double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

// ---- regression track ------------------------------------------------------

fs::path dataset_dir(const BenchConfig& c, double alpha, int multiplier, int replicate) {
  return out_root(c) / "regression" / "datasets" / fmt::format("alpha_{}", num(alpha)) / fmt::format("x{}", multiplier) /
         fmt::format("rep{}", replicate);
}

fs::path reference_dir(const BenchConfig& c, double alpha) {
  return out_root(c) / "regression" / "reference" / fmt::format("alpha_{}", num(alpha));
}

fs::path run_dir(const BenchConfig& c, const RunKey& key) {
  return out_root(c) / "regression" / "runs" / key.method / fmt::format("alpha_{}", num(key.alpha)) /
         fmt::format("x{}", key.multiplier) / fmt::format("rep{}", key.replicate);
}

std::vector<double> method_alphas(const RegressionSettings& s, const std::string& method) {
  const auto it = s.alphas_by_method.find(method);
  auto a = it == s.alphas_by_method.end() ? s.alphas : it->second;
  std::sort(a.begin(), a.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  return a;
}

double corruption_strength(const SegmentationSettings& s, const std::string& kind, double level) {
  const auto it = s.level_units.find(kind);
  return level * (it == s.level_units.end() ? s.level_unit : it->second);
}

regression::RegressionConfig regression_config(const RegressionSettings& s, const std::string& method, int multiplier) {
  if (multiplier < 1) throw ConfigError("size multiplier must be positive");
  regression::RegressionConfig rc;
  rc.method = regression::parse_method(method);
  rc.hidden = s.net.hidden;
  rc.dropout_rate = s.net.dropout_rate;
  const int divisor = s.net.multiplier_budget == "equal_steps" ? multiplier : 1;
  const int epochs = (s.net.epochs + divisor - 1) / divisor;
  rc.train.epochs = epochs;
  rc.train.batch_size = s.net.batch_size;
  rc.train.optimizer.kind =
      s.net.optimizer == "adam" ? nn::OptimizerConfig::Kind::adam : nn::OptimizerConfig::Kind::sgd_momentum;
  rc.train.optimizer.learning_rate = s.net.learning_rate;
  rc.train.lr_decay = epochs > 0 ? std::pow(s.net.lr_decay, static_cast<double>(s.net.epochs) / epochs) : s.net.lr_decay;
  rc.warmup_epochs = (s.net.warmup_epochs + divisor - 1) / divisor;
  return rc;
}

namespace {

rand::Seed root_seed(const BenchConfig& c) { return {c.seed}; }

rand::Seed dataset_seed(const BenchConfig& c, int multiplier, int replicate) {
  const auto base = rand::derive(root_seed(c), "dataset", static_cast<std::uint64_t>(replicate));
  return multiplier == 1 ? base : rand::derive(base, "multiplier", static_cast<std::uint64_t>(multiplier));
}

int axis_for(int n_per_axis, int multiplier) {
  return n_per_axis * static_cast<int>(std::lround(std::sqrt(static_cast<double>(multiplier))));
}

// Every (alpha, multiplier) pair that is generated or trained. Multiplier 1
// is always present; it carries the shared test split.
std::vector<std::pair<double, int>> dataset_grid(const RegressionSettings& s) {
  std::vector<double> alphas = s.alphas;
  for (const auto& [m, a] : s.alphas_by_method) alphas.insert(alphas.end(), a.begin(), a.end());
  std::sort(alphas.begin(), alphas.end());
  alphas.erase(std::unique(alphas.begin(), alphas.end()), alphas.end());
  std::vector<std::pair<double, int>> grid;
  for (const double a : alphas) {
    grid.emplace_back(a, 1);
    if (a != s.multiplier_alpha) continue;
    for (const int m : s.size_multipliers) {
      if (m != 1) grid.emplace_back(a, m);
    }
  }
  return grid;
}

biomass::RegressionDataset load_dataset_at(const fs::path& dir) {
  const auto csv = dir / "dataset.csv", meta = dir / "metadata.json";
  if (!fs::exists(csv) || !fs::exists(meta)) {
    throw IoError("missing dataset " + csv.string() + " (run `uqbench generate` first)");
  }
  return biomass::read_dataset(csv, meta);
}

reference::ReferenceSigmaTable load_reference_at(const fs::path& dir) {
  const auto csv = dir / "sigma.csv", meta = dir / "metadata.json";
  if (!fs::exists(csv) || !fs::exists(meta)) {
    throw IoError("missing reference table " + csv.string() + " (run `uqbench reference` first)");
  }
  return reference::read_table(csv, meta);
}

json run_identity(const BenchConfig& c, const RunKey& key) {
  const auto rc = regression_config(c.regression, key.method, key.multiplier);
  return json{{"method", key.method},
              {"alpha", key.alpha},
              {"multiplier", key.multiplier},
              {"replicate", key.replicate},
              {"seed", c.seed},
              {"n_per_axis", c.regression.n_per_axis},
              {"split", c.regression.split},
              {"mc_samples", c.regression.mc_samples},
              {"hidden", rc.hidden},
              {"dropout_rate", rc.dropout_rate},
              {"epochs", rc.train.epochs},
              {"batch_size", rc.train.batch_size},
              {"learning_rate", rc.train.optimizer.learning_rate},
              {"lr_decay", rc.train.lr_decay},
              {"warmup_epochs", rc.warmup_epochs},
              {"optimizer", c.regression.net.optimizer},
              {"oracle", to_json(c)["regression"]["oracle"]}};
}

void fill_metrics(RunOutcome& run, const std::vector<double>& b_true, const std::vector<double>& b_hat) {
  run.r2_biomass = eval::r_squared(b_hat, b_true);
  run.pct_rmse_biomass = eval::pct_rmse(b_hat, b_true);
  run.r2_sigma = eval::r_squared(run.sigma_hat, run.sigma_ref);
  run.pct_rmse_sigma = eval::pct_rmse(run.sigma_hat, run.sigma_ref);
}

void write_run_report(const RunOutcome& run, const std::vector<double>& b_true, const std::vector<double>& b_hat,
                      const fs::path& path) {
  const auto rb = eval::evaluate(b_hat, b_true);
  const auto rs = eval::evaluate(run.sigma_hat, run.sigma_ref);
  io::write_json(path, {{"biomass", {{"r2", rb.r2}, {"rmse", rb.rmse}, {"pct_rmse", rb.pct_rmse}}},
                        {"sigma", {{"r2", rs.r2}, {"rmse", rs.rmse}, {"pct_rmse", rs.pct_rmse}}}});
}

std::optional<RunOutcome> reuse_run(const RunKey& key, const json& identity, const fs::path& dir) {
  const auto id_path = dir / "run_config.json", pred_path = dir / "predictions.csv";
  if (!fs::exists(id_path) || !fs::exists(pred_path) || !fs::exists(dir / "report.json")) return std::nullopt;
  if (io::read_json(id_path) != identity) return std::nullopt;
  const auto table = io::read_csv(pred_path);
  const auto cb = table.column("b_true"), ch = table.column("b_hat"), cs = table.column("sigma_a"),
             cr = table.column("sigma_ref");
  RunOutcome run;
  run.key = key;
  run.reused = true;
  std::vector<double> b_true, b_hat;
  for (const auto& row : table.rows) {
    b_true.push_back(io::parse_double(row[cb]));
    b_hat.push_back(io::parse_double(row[ch]));
    run.sigma_hat.push_back(io::parse_double(row[cs]));
    run.sigma_ref.push_back(io::parse_double(row[cr]));
  }
  fill_metrics(run, b_true, b_hat);
  return run;
}

RunOutcome train_and_evaluate(const BenchConfig& c, const RunKey& key) {
  const auto dir = run_dir(c, key);
  const auto identity = run_identity(c, key);
  if (auto reused = reuse_run(key, identity, dir)) {
    fmt::print(stderr, "skipping {} alpha={} x{} rep{}: outputs up to date\n", key.method, num(key.alpha),
               key.multiplier, key.replicate);
    return *reused;
  }
  const auto train_set = load_dataset_at(dataset_dir(c, key.alpha, key.multiplier, key.replicate));
  const auto test_source = key.multiplier == 1 ? train_set : load_dataset_at(dataset_dir(c, key.alpha, 1, key.replicate));
  const auto test = test_source.subset(biomass::Split::test);
  const auto table = load_reference_at(reference_dir(c, key.alpha));

  const auto rc = regression_config(c.regression, key.method, key.multiplier);
  const auto seed = rand::derive(root_seed(c), "train", static_cast<std::uint64_t>(key.replicate));
  auto model = regression::make_model(train_set, rc, seed);
  const auto stats = regression::train(model, train_set, rc.train, seed);
  const auto predictions = uq::predict_batch(model, test, c.regression.mc_samples,
                                             rand::derive(root_seed(c), "predict", static_cast<std::uint64_t>(key.replicate)));

  RunOutcome run;
  run.key = key;
  std::vector<double> b_true, b_hat;
  auto out = io::open_for_write(dir / "predictions.csv");
  out << "d,h,b_true,b_hat,sigma_a,sigma_e,sigma_ref\n";
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& t = test[i];
    const auto& p = predictions[i];
    b_true.push_back(t.b_true);
    b_hat.push_back(p.b_hat);
    run.sigma_hat.push_back(p.sigma_a);
    run.sigma_ref.push_back(table.interpolate(t.d_true, t.h_true));
    out << io::csv_line({num(t.d_true), num(t.h_true), num(t.b_true), num(p.b_hat), num(p.sigma_a), num(p.sigma_e),
                         num(run.sigma_ref.back())});
  }
  out.close();
  fill_metrics(run, b_true, b_hat);
  regression::save_checkpoint(model, dir / "checkpoint.json");
  write_run_report(run, b_true, b_hat, dir / "report.json");
  io::write_json(dir / "train_log.json", {{"epoch_loss", stats.epoch_loss}, {"steps", stats.steps}});
  io::write_json(dir / "run_config.json", identity);
  write_resolved_config(c, dir);
  fmt::print(stderr, "{} alpha={} x{} rep{}: B R2 {:.4f} %RMSE {:.2f} | sigma R2 {:.4f} %RMSE {:.2f}\n", key.method,
             num(key.alpha), key.multiplier, key.replicate, run.r2_biomass, run.pct_rmse_biomass, run.r2_sigma,
             run.pct_rmse_sigma);
  return run;
}

TableRow summarize(const std::vector<const RunOutcome*>& runs) {
  TableRow row;
  row.method = runs.front()->key.method;
  row.alpha = runs.front()->key.alpha;
  row.multiplier = runs.front()->key.multiplier;
  std::vector<double> a, b, s, t;
  for (const auto* r : runs) {
    a.push_back(r->r2_biomass);
    b.push_back(r->pct_rmse_biomass);
    s.push_back(r->r2_sigma);
    t.push_back(r->pct_rmse_sigma);
  }
  row.r2_biomass = median(a);
  row.pct_rmse_biomass = median(b);
  row.r2_sigma = median(s);
  row.pct_rmse_sigma = median(t);
  row.replicates = static_cast<int>(runs.size());
  return row;
}

// Wide layout: one row per alpha (or multiplier), four metric columns per method.
void write_table(const std::vector<TableRow>& rows, const std::vector<std::string>& methods, bool by_multiplier,
                 const fs::path& path) {
  std::vector<double> keys;
  for (const auto& r : rows) keys.push_back(by_multiplier ? r.multiplier : r.alpha);
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  std::vector<std::string> header{by_multiplier ? "multiplier" : "alpha"};
  for (const auto& m : methods) {
    for (const char* col : {"r2_biomass", "pct_rmse_biomass", "r2_sigma", "pct_rmse_sigma"}) header.push_back(m + "_" + col);
  }
  auto out = io::open_for_write(path);
  out << io::csv_line(header);
  for (const double key : keys) {
    std::vector<std::string> fields{num(key)};
    for (const auto& m : methods) {
      const auto it = std::find_if(rows.begin(), rows.end(), [&](const TableRow& r) {
        return r.method == m && (by_multiplier ? r.multiplier : r.alpha) == key;
      });
      if (it == rows.end()) {
        fields.insert(fields.end(), 4, "");
      } else {
        for (const double v : {it->r2_biomass, it->pct_rmse_biomass, it->r2_sigma, it->pct_rmse_sigma}) fields.push_back(num(v));
      }
    }
    out << io::csv_line(fields);
  }
}

}  // namespace

void cmd_generate(const BenchConfig& c) {
  const auto root = out_root(c);
  write_resolved_config(c, root);
  if (c.track == Track::classification) {
    const auto& k = c.classification;
    for (int r = 0; r < k.replicates; ++r) {
      for (const auto& [name, items] : {std::pair{"train", k.train_items}, std::pair{"test", k.test_items}}) {
        label::CorpusConfig cc{k.classes, items, k.votes, k.vote_accuracy, 0.0};
        const auto ds = label::ambiguous_corpus(cc, rand::derive(root_seed(c), std::string("cls.") + name,
                                                                 static_cast<std::uint64_t>(r)));
        const auto dir = root / "classification" / "corpus" / fmt::format("rep{}", r);
        label::write_votes_csv(ds.items, dir / fmt::format("{}_votes.csv", name));
        label::write_features_csv(ds.features, dir / fmt::format("{}_features.csv", name));
      }
    }
    return;
  }
  if (c.track == Track::segmentation) {
    const auto& s = c.segmentation;
    const auto dir = root / "segmentation" / "scenes";
    for (int i = 0; i < s.test_scenes; ++i) {
      const auto scene = seg::toy_scene(rand::derive(root_seed(c), "seg.test_scene", static_cast<std::uint64_t>(i)),
                                        s.scene_size, s.rects_per_scene);
      auto img = io::open_for_write(dir / fmt::format("test{}.pgm", i), true);
      img << fmt::format("P5\n{} {}\n255\n", scene.patch.width, scene.patch.height);
      img.write(reinterpret_cast<const char*>(scene.patch.pixels.data()), static_cast<std::streamsize>(scene.patch.pixels.size()));
      auto mask = io::open_for_write(dir / fmt::format("test{}_mask.pgm", i), true);
      mask << fmt::format("P5\n{} {}\n255\n", scene.patch.width, scene.patch.height);
      for (const auto m : scene.patch.mask) mask.put(static_cast<char>(m ? 255 : 0));
    }
    return;
  }
  for (const auto& [alpha, multiplier] : dataset_grid(c.regression)) {
    for (int r = 0; r < c.regression.replicates; ++r) {
      biomass::DatasetConfig dc;
      dc.alpha = alpha;
      dc.n_per_axis = axis_for(c.regression.n_per_axis, multiplier);
      dc.strategy = biomass::parse_split_strategy(c.regression.split);
      dc.seed = dataset_seed(c, multiplier, r);
      const auto ds = biomass::generate_dataset(dc);
      const auto dir = dataset_dir(c, alpha, multiplier, r);
      biomass::write_csv(ds, dir / "dataset.csv");
      biomass::write_metadata(ds, dir / "metadata.json");
      write_resolved_config(c, dir);
      fmt::print(stderr, "dataset alpha={} x{} rep{}: {} train, {} test\n", num(alpha), multiplier, r,
                 ds.count(biomass::Split::train), ds.count(biomass::Split::test));
    }
  }
}

void cmd_reference(const BenchConfig& c) {
  write_resolved_config(c, out_root(c));
  std::vector<double> alphas;
  for (const auto& [alpha, m] : dataset_grid(c.regression)) {
    if (m == 1) alphas.push_back(alpha);
  }
  for (const double alpha : alphas) {
    const auto table = reference::smooth_sigma(reference::pooled_sigma(alpha, c.regression.oracle, rand::derive(root_seed(c), "reference")));
    const auto dir = reference_dir(c, alpha);
    reference::write_csv(table, dir / "sigma.csv");
    reference::write_metadata(table, dir / "metadata.json");
    write_resolved_config(c, dir);
    fmt::print(stderr, "reference alpha={}: sigma = {:.5g} (d^2 h)^{:.4f}\n", num(alpha), table.fit.c, table.fit.p);
  }
}

TrainEvalResult cmd_train_eval(const BenchConfig& c) {
  const auto root = out_root(c);
  write_resolved_config(c, root);
  const auto& s = c.regression;
  TrainEvalResult result;
  for (const auto& method : s.methods) {
    for (const double alpha : method_alphas(s, method)) {
      for (const int m : s.size_multipliers) {
        if (m != 1 && alpha != s.multiplier_alpha) continue;
        for (int r = 0; r < s.replicates; ++r) result.runs.push_back(train_and_evaluate(c, {method, alpha, m, r}));
      }
    }
  }

  const auto group = [&](const std::string& method, double alpha, int m) {
    std::vector<const RunOutcome*> g;
    for (const auto& run : result.runs) {
      if (run.key.method == method && run.key.alpha == alpha && run.key.multiplier == m) g.push_back(&run);
    }
    return g;
  };
  for (const auto& method : s.methods) {
    for (const double alpha : method_alphas(s, method)) {
      if (const auto g = group(method, alpha, 1); !g.empty()) result.table2.push_back(summarize(g));
    }
    for (const int m : s.size_multipliers) {
      if (const auto g = group(method, s.multiplier_alpha, m); !g.empty()) result.table4.push_back(summarize(g));
    }
  }
  const auto tables = root / "regression" / "tables";
  write_resolved_config(c, tables);
  write_table(result.table2, s.methods, false, tables / "table2.csv");
  if (s.size_multipliers.size() > 1) write_table(result.table4, s.methods, true, tables / "table4.csv");

  json fig4 = json::array();
  for (const auto& method : s.methods) {
    const auto alphas = method_alphas(s, method);
    if (alphas.size() < 2) continue;
    for (int r = 0; r < s.replicates; ++r) {
      std::vector<std::vector<double>> predicted, reference;
      for (const double alpha : alphas) {
        for (const auto& run : result.runs) {
          if (run.key.method == method && run.key.alpha == alpha && run.key.multiplier == 1 && run.key.replicate == r) {
            predicted.push_back(run.sigma_hat);
            reference.push_back(run.sigma_ref);
          }
        }
      }
      if (predicted.size() != alphas.size()) continue;
      CorrelationSummary summary{method, r, eval::uncertainty_correlation(predicted, reference)};
      json quantiles = json::object();
      for (const auto& [q, v] : summary.result.quantiles) quantiles[num(q)] = v;
      fig4.push_back({{"method", method},
                      {"replicate", r},
                      {"alphas", alphas},
                      {"points", summary.result.coefficients.size()},
                      {"skipped", summary.result.skipped.size()},
                      {"p10", summary.result.p10},
                      {"fraction_above_0.9", summary.result.fraction_above(0.9)},
                      {"quantiles", quantiles}});
      if (r == 0) {
        const auto bins = eval::histogram(summary.result.coefficients, -1.0, 1.0, 40);
        eval::write_histogram_csv(bins, tables / fmt::format("fig4_{}.csv", method));
        eval::write_histogram_svg(bins, fmt::format("Per-point correlation of predicted and reference sigma ({})", method),
                                  tables / fmt::format("fig4_{}.svg", method));
      }
      result.fig4.push_back(std::move(summary));
    }
  }
  if (!fig4.empty()) io::write_json(tables / "fig4_summary.json", fig4);
  return result;
}

// ---- segmentation track ----------------------------------------------------

EntropyResult cmd_entropy(const BenchConfig& c) {
  const auto& s = c.segmentation;
  const auto root = out_root(c) / "segmentation";
  write_resolved_config(c, root);
  const auto seed = root_seed(c);
  std::vector<seg::Scene> train, test;
  for (int i = 0; i < s.train_scenes; ++i) {
    train.push_back(seg::toy_scene(rand::derive(seed, "seg.train_scene", static_cast<std::uint64_t>(i)), s.scene_size, s.rects_per_scene));
  }
  for (int i = 0; i < s.test_scenes; ++i) {
    test.push_back(seg::toy_scene(rand::derive(seed, "seg.test_scene", static_cast<std::uint64_t>(i)), s.scene_size, s.rects_per_scene));
  }

  EntropyResult result;
  const seg::SegmenterConfig sc;
  const json key{{"seed", c.seed},
                 {"scene_size", s.scene_size},
                 {"rects_per_scene", s.rects_per_scene},
                 {"train_scenes", s.train_scenes},
                 {"radius", sc.radius},
                 {"hidden", sc.hidden},
                 {"epochs", sc.train.epochs}};
  const auto model_path = root / "segmenter.json", key_path = root / "segmenter_key.json";
  seg::WindowSegmenter model;
  if (fs::exists(model_path) && fs::exists(key_path) && io::read_json(key_path) == key) {
    model = seg::load_segmenter(model_path);
    result.segmenter_cached = true;
    fmt::print(stderr, "using cached segmenter {}\n", model_path.string());
  } else {
    model = seg::train_segmenter(train, sc, rand::derive(seed, "seg.segmenter"));
    seg::save_segmenter(model, model_path);
    io::write_json(key_path, key);
  }
  result.segmenter_accuracy = pixel_accuracy(model, test);

  seg::CorruptionOptions options{s.poisson_centered, s.jitter_scale};
  const seg::EntropyConfig ec{s.mc_samples, s.bins, parse_estimator(s.estimator)};
  for (const auto& kind_name : s.kinds) {
    const auto kind = seg::parse_corruption(kind_name);
    std::vector<double> ref, bnn, tta;
    for (std::size_t li = 0; li < s.levels.size(); ++li) {
      const double n = corruption_strength(s, kind_name, s.levels[li]);
      const auto tag = [&](const std::string& what) { return "seg." + what + "." + kind_name; };
      // Without corruption the residual targets vanish and the head would only
      // learn the variance floor, so level 0 predicts zero variance directly.
      std::optional<seg::VarianceHead> head;
      if (n > 0.0) {
        head = seg::train_variance_head(model, train, kind, n, options, {}, rand::derive(seed, tag("head"), li));
      }
      EntropyRow row{kind_name, s.levels[li], n, 0.0, 0.0, 0.0};
      for (int i = 0; i < s.test_scenes; ++i) {
        const auto idx = li * 1000 + static_cast<std::uint64_t>(i);
        const auto& clean = test[static_cast<std::size_t>(i)].patch;
        const auto reps = seg::corrupted_replicates(model, clean, kind, n, s.replicates, options, rand::derive(seed, tag("reference"), idx));
        row.reference += seg::reference_entropy(reps, ec, rand::derive(seed, tag("reference_entropy"), idx)).patch_value;
        const auto observed = seg::corrupt(clean, kind, n, rand::derive(seed, tag("observed"), idx), options);
        if (head) {
          row.bnn += seg::predicted_entropy(seg::bnn_moments(model, *head, observed), ec, rand::derive(seed, tag("bnn_entropy"), idx)).patch_value;
        }
        const auto aug = seg::corrupted_replicates(model, observed, kind, n, s.tta_samples, options, rand::derive(seed, tag("tta"), idx));
        row.tta += seg::reference_entropy(aug, ec, rand::derive(seed, tag("tta_entropy"), idx)).patch_value;
      }
      row.reference /= s.test_scenes;
      row.bnn /= s.test_scenes;
      row.tta /= s.test_scenes;
      ref.push_back(row.reference);
      bnn.push_back(row.bnn);
      tta.push_back(row.tta);
      fmt::print(stderr, "{} level {}: reference {:.4f} bnn {:.4f} tta {:.4f}\n", kind_name, num(row.level), row.reference,
                 row.bnn, row.tta);
      result.rows.push_back(row);
    }
    EntropyAgreement a{kind_name};
    const auto sq_pearson = [](const std::vector<double>& x, const std::vector<double>& y) {
      const double r = eval::pearson(x, y);
      return r * r;
    };
    a.r2_bnn = sq_pearson(bnn, ref);
    a.r2_tta = sq_pearson(tta, ref);
    a.cod_bnn = eval::r_squared(bnn, ref);
    a.cod_tta = eval::r_squared(tta, ref);
    a.rmse_bnn = eval::rmse(bnn, ref);
    a.rmse_tta = eval::rmse(tta, ref);
    result.agreement.push_back(a);
  }

  auto t5 = io::open_for_write(root / "table5.csv");
  t5 << "kind,level,n,bnn,tta,reference\n";
  for (const auto& r : result.rows) {
    t5 << io::csv_line({r.kind, num(r.level), num(r.n), num(r.bnn), num(r.tta), num(r.reference)});
  }
  t5.close();
  auto t7 = io::open_for_write(root / "table7.csv");
  t7 << "kind,r2_bnn,r2_tta,cod_bnn,cod_tta,rmse_bnn,rmse_tta\n";
  for (const auto& a : result.agreement) {
    t7 << io::csv_line({a.kind, num(a.r2_bnn), num(a.r2_tta), num(a.cod_bnn), num(a.cod_tta), num(a.rmse_bnn), num(a.rmse_tta)});
  }
  t7.close();
  io::write_json(root / "segmenter_eval.json", {{"pixel_accuracy", result.segmenter_accuracy}, {"cached", result.segmenter_cached}});
  return result;
}

// ---- classification track --------------------------------------------------

ClassifyResult cmd_classify(const BenchConfig& c) {
  const auto& k = c.classification;
  const auto root = out_root(c) / "classification";
  write_resolved_config(c, root);
  label::ClassifierConfig cc;
  cc.hidden = k.hidden;
  cc.train.epochs = k.epochs;
  cc.train.batch_size = k.batch_size;
  cc.train.optimizer.learning_rate = k.learning_rate;
  cc.ece_bins = k.ece_bins;

  ClassifyResult result;
  std::vector<double> ece_oh, ece_d, oa_oh, oa_d;
  for (int r = 0; r < k.replicates; ++r) {
    const auto rep = static_cast<std::uint64_t>(r);
    const auto train = label::ambiguous_corpus({k.classes, k.train_items, k.votes, k.vote_accuracy, 0.0},
                                               rand::derive(root_seed(c), "cls.train", rep));
    const auto test = label::ambiguous_corpus({k.classes, k.test_items, k.votes, k.vote_accuracy, 0.0},
                                              rand::derive(root_seed(c), "cls.test", rep));
    for (const auto enc : {label::LabelEncoding::one_hot, label::LabelEncoding::distributional}) {
      const auto res = label::train_classifier(train, test, enc, cc, rand::derive(root_seed(c), "cls.model", rep));
      ClassifyRow row{label::to_string(enc), r, res.ce_one_hot, res.ce_distributional, res.calibration.ece,
                      res.overall_accuracy};
      label::write_calibration_json(res.calibration, root / fmt::format("calibration_{}_rep{}.json", row.encoding, r));
      fmt::print(stderr, "{} rep{}: ECE {:.4f} OA {:.4f}\n", row.encoding, r, row.ece, row.overall_accuracy);
      (enc == label::LabelEncoding::one_hot ? ece_oh : ece_d).push_back(row.ece);
      (enc == label::LabelEncoding::one_hot ? oa_oh : oa_d).push_back(row.overall_accuracy);
      result.rows.push_back(row);
    }
  }
  result.mean_ece_one_hot = mean(ece_oh);
  result.mean_ece_distributional = mean(ece_d);
  result.mean_oa_one_hot = mean(oa_oh);
  result.mean_oa_distributional = mean(oa_d);

  auto out = io::open_for_write(root / "table6.csv");
  out << "encoding,replicate,ce_one_hot,ce_distributional,ece,overall_accuracy\n";
  for (const auto& r : result.rows) {
    out << io::csv_line({r.encoding, std::to_string(r.replicate), num(r.ce_one_hot), num(r.ce_distributional), num(r.ece),
                         num(r.overall_accuracy)});
  }
  out << io::csv_line({"one_hot", "mean", "", "", num(result.mean_ece_one_hot), num(result.mean_oa_one_hot)});
  out << io::csv_line({"distributional", "mean", "", "", num(result.mean_ece_distributional), num(result.mean_oa_distributional)});
  return result;
}

fs::path reproduce(const BenchConfig& config, const std::string& table) {
  auto c = config;
  const auto root = out_root(c);
  if (table == "2") {
    c.track = Track::regression;
    c.regression.size_multipliers = {1};
    cmd_generate(c);
    cmd_reference(c);
    cmd_train_eval(c);
    return root / "regression" / "tables" / "table2.csv";
  }
  if (table == "4") {
    c.track = Track::regression;
    c.regression.alphas = {c.regression.multiplier_alpha};
    c.regression.alphas_by_method.clear();
    c.regression.size_multipliers = {1, 4, 16};
    cmd_generate(c);
    cmd_reference(c);
    cmd_train_eval(c);
    return root / "regression" / "tables" / "table4.csv";
  }
  if (table == "5-trend") {
    c.track = Track::segmentation;
    const auto result = cmd_entropy(c);
    json trend = json::array();
    for (const auto& kind : c.segmentation.kinds) {
      std::vector<double> ref;
      double level0 = 0.0;
      for (const auto& r : result.rows) {
        if (r.kind != kind) continue;
        if (r.level == 0) level0 = r.reference;
        else ref.push_back(r.reference);
      }
      bool increasing = true;
      for (std::size_t i = 1; i < ref.size(); ++i) increasing = increasing && ref[i] > ref[i - 1];
      trend.push_back({{"kind", kind}, {"reference_increasing", increasing}, {"level0_reference", level0}});
    }
    io::write_json(root / "segmentation" / "table5_trend.json", trend);
    return root / "segmentation" / "table5.csv";
  }
  if (table == "6-direction") {
    c.track = Track::classification;
    const auto result = cmd_classify(c);
    io::write_json(root / "classification" / "table6_direction.json",
                   {{"mean_ece_one_hot", result.mean_ece_one_hot},
                    {"mean_ece_distributional", result.mean_ece_distributional},
                    {"distributional_lower_ece", result.mean_ece_distributional < result.mean_ece_one_hot}});
    return root / "classification" / "table6.csv";
  }
  throw ConfigError("unknown table '" + table + "' (expected 2, 4, 5-trend or 6-direction)");
}

}  // namespace uqbench::bench
