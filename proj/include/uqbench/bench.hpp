#pragma once

// Experiment driver behind the `uqbench` command line: configuration, the
// generate / reference / train-eval / entropy / classify commands, and the
// table reproductions. Every command writes its resolved config next to its outputs.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "uqbench/biomass.hpp"
#include "uqbench/evalkit.hpp"
#include "uqbench/io.hpp"
#include "uqbench/reference.hpp"
#include "uqbench/regression.hpp"
#include "uqbench/seg_entropy.hpp"

namespace uqbench::bench {

enum class Track { regression, segmentation, classification };
std::string to_string(Track t);
Track parse_track(const std::string& s);

struct NetSettings {
  std::vector<int> hidden{64, 64, 64};
  double dropout_rate = 0.10;
  int epochs = 100;
  int batch_size = 128;
  double learning_rate = 3e-3;
  double lr_decay = 0.97;
  int warmup_epochs = 5;
  std::string optimizer = "adam";
  /// Training budget of size multipliers above 1: "equal_epochs" or "equal_steps".
  std::string multiplier_budget = "equal_steps";
};

struct RegressionSettings {
  std::vector<double> alphas{0.01, 0.05, 0.10, 0.15, 0.20};
  /// Optional per-method alpha lists; methods absent here use `alphas`.
  std::map<std::string, std::vector<double>> alphas_by_method;
  std::vector<std::string> methods{"mc_dropout", "adf"};
  int n_per_axis = 200;
  /// Training-set size multipliers (perfect squares: n_per_axis scales by the root).
  std::vector<int> size_multipliers{1};
  /// Alpha at which multipliers other than 1 are trained.
  double multiplier_alpha = 0.10;
  std::string split = "random80_20";
  int replicates = 1;
  int mc_samples = 50;
  NetSettings net;
  reference::McConfig oracle;
};

struct SegmentationSettings {
  int scene_size = 32;
  int rects_per_scene = 4;
  int train_scenes = 24;
  int test_scenes = 3;
  std::vector<std::string> kinds{"gaussian", "poisson", "jitter"};
  std::vector<double> levels{0, 1, 2, 4, 8};
  /// Corruption strength n = level * level_unit (1 selects the raw parameterization).
  double level_unit = 0.01;
  /// Per-kind replacements for level_unit.
  std::map<std::string, double> level_units{{"poisson", 1.0}};
  double jitter_scale = 25.0;
  bool poisson_centered = true;
  int replicates = 50;
  int tta_samples = 50;
  int mc_samples = 5000;
  int bins = 50;
  std::string estimator = "histogram";
};

struct ClassificationSettings {
  int classes = 17;
  int train_items = 2000;
  int test_items = 2000;
  int votes = 10;
  double vote_accuracy = 0.85;
  int replicates = 5;
  std::vector<int> hidden{64};
  int epochs = 150;
  int batch_size = 64;
  double learning_rate = 1e-3;
  int ece_bins = 10;
};

struct BenchConfig {
  Track track = Track::regression;
  std::uint64_t seed = 7;
  std::filesystem::path output_dir;
  RegressionSettings regression;
  SegmentationSettings segmentation;
  ClassificationSettings classification;
};

io::json to_json(const BenchConfig& c);
/// Missing keys keep their defaults; unknown keys raise ConfigError.
BenchConfig from_json(const io::json& j);
BenchConfig load_config(const std::filesystem::path& path);
/// Applies `dotted.key=json_value` (bare strings accepted) to a config.
void apply_override(BenchConfig& config, const std::string& assignment);
/// $UQBENCH_OUT when set, otherwise ./uqbench_out.
std::filesystem::path default_output_root();

// ---- regression track ------------------------------------------------------

struct RunKey {
  std::string method;
  double alpha = 0.0;
  int multiplier = 1;
  int replicate = 0;
};

struct RunOutcome {
  RunKey key;
  double r2_biomass = 0.0;
  double pct_rmse_biomass = 0.0;
  double r2_sigma = 0.0;
  double pct_rmse_sigma = 0.0;
  std::vector<double> sigma_hat;
  std::vector<double> sigma_ref;
  bool reused = false;
};

struct TableRow {
  std::string method;
  double alpha = 0.0;
  int multiplier = 1;
  /// Medians over replicates.
  double r2_biomass = 0.0;
  double pct_rmse_biomass = 0.0;
  double r2_sigma = 0.0;
  double pct_rmse_sigma = 0.0;
  int replicates = 0;
};

struct CorrelationSummary {
  std::string method;
  int replicate = 0;
  eval::CorrelationResult result;
};

struct TrainEvalResult {
  std::vector<RunOutcome> runs;
  std::vector<TableRow> table2;
  std::vector<TableRow> table4;
  std::vector<CorrelationSummary> fig4;
};

std::filesystem::path dataset_dir(const BenchConfig& c, double alpha, int multiplier, int replicate);
std::filesystem::path reference_dir(const BenchConfig& c, double alpha);
std::filesystem::path run_dir(const BenchConfig& c, const RunKey& key);

/// Alphas trained for a method (its override or the common list).
std::vector<double> method_alphas(const RegressionSettings& s, const std::string& method);
/// Corruption strength of `level` for corruption `kind`.
double corruption_strength(const SegmentationSettings& s, const std::string& kind, double level);
/// Training hyperparameters for a size multiplier. Under "equal_steps" the epochs
/// are divided by the multiplier and the decay compounded to the same final rate.
regression::RegressionConfig regression_config(const RegressionSettings& s, const std::string& method, int multiplier);

void cmd_generate(const BenchConfig& c);
void cmd_reference(const BenchConfig& c);
TrainEvalResult cmd_train_eval(const BenchConfig& c);

// ---- segmentation track ----------------------------------------------------

struct EntropyRow {
  std::string kind;
  double level = 0.0;
  double n = 0.0;
  double bnn = 0.0;
  double tta = 0.0;
  double reference = 0.0;
};

struct EntropyAgreement {
  std::string kind;
  /// Squared Pearson correlation against the reference column across levels.
  double r2_bnn = 0.0;
  double r2_tta = 0.0;
  /// Coefficient of determination 1 - SS_res / SS_tot.
  double cod_bnn = 0.0;
  double cod_tta = 0.0;
  double rmse_bnn = 0.0;
  double rmse_tta = 0.0;
};

struct EntropyResult {
  std::vector<EntropyRow> rows;
  std::vector<EntropyAgreement> agreement;
  bool segmenter_cached = false;
  double segmenter_accuracy = 0.0;
};

EntropyResult cmd_entropy(const BenchConfig& c);

// ---- classification track --------------------------------------------------

struct ClassifyRow {
  std::string encoding;
  int replicate = 0;
  double ce_one_hot = 0.0;
  double ce_distributional = 0.0;
  double ece = 0.0;
  double overall_accuracy = 0.0;
};

struct ClassifyResult {
  std::vector<ClassifyRow> rows;
  double mean_ece_one_hot = 0.0;
  double mean_ece_distributional = 0.0;
  double mean_oa_one_hot = 0.0;
  double mean_oa_distributional = 0.0;
};

ClassifyResult cmd_classify(const BenchConfig& c);

/// Runs the pipeline behind one table ("2", "4", "5-trend", "6-direction") and
/// returns the path of the emitted CSV.
std::filesystem::path reproduce(const BenchConfig& c, const std::string& table);

}  // namespace uqbench::bench
