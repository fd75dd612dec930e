// uqbench: command-line driver for the three benchmark tracks.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 data error
// (missing or malformed artifacts), 3 numerical failure.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <fmt/core.h>

#include "CLI11.hpp"
#include "uqbench/bench.hpp"
#include "uqbench/error.hpp"

namespace {

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string track;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config_path, "JSON config file");
  cmd->add_option("--seed", o.seed, "Root seed");
  cmd->add_option("-o,--out", o.out, "Output directory (default $UQBENCH_OUT or ./uqbench_out)");
  cmd->add_option("--set", o.overrides, "Override a config value, e.g. regression.alphas=[0.1]")->take_all();
}

uqbench::bench::BenchConfig resolve(const CommonOptions& o) {
  using namespace uqbench::bench;
  BenchConfig c = o.config_path.empty() ? BenchConfig{} : load_config(o.config_path);
  for (const auto& s : o.overrides) apply_override(c, s);
  if (o.seed) c.seed = *o.seed;
  if (!o.out.empty()) c.output_dir = o.out;
  if (!o.track.empty()) c.track = parse_track(o.track);
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Aleatoric uncertainty benchmark toolkit"};
  app.require_subcommand(1);
  CommonOptions opts;
  std::string table;

  auto* generate = app.add_subcommand("generate", "Write datasets for a track");
  add_common(generate, opts);
  generate->add_option("--track", opts.track, "regression, segmentation or classification");
  auto* reference = app.add_subcommand("reference", "Compute reference sigma tables");
  add_common(reference, opts);
  auto* train_eval = app.add_subcommand("train-eval", "Train regressors and score them");
  add_common(train_eval, opts);
  auto* entropy = app.add_subcommand("entropy", "Segmentation entropy experiment");
  add_common(entropy, opts);
  auto* classify = app.add_subcommand("classify", "One-hot versus distributional label training");
  add_common(classify, opts);
  auto* repro = app.add_subcommand("reproduce", "Run the pipeline behind one table");
  add_common(repro, opts);
  repro->add_option("--table", table, "2, 4, 5-trend or 6-direction")->required();
  auto* show = app.add_subcommand("config", "Print the resolved config");
  add_common(show, opts);
  show->add_option("--track", opts.track, "regression, segmentation or classification");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  using namespace uqbench;
  try {
    const auto config = resolve(opts);
    if (show->parsed()) {
      std::cout << bench::to_json(config).dump(2) << "\n";
    } else if (generate->parsed()) {
      bench::cmd_generate(config);
    } else if (reference->parsed()) {
      bench::cmd_reference(config);
    } else if (train_eval->parsed()) {
      const auto result = bench::cmd_train_eval(config);
      for (const auto& r : result.table2) {
        fmt::print("{} alpha={} B R2 {:.4f} %RMSE {:.2f} sigma R2 {:.4f} %RMSE {:.2f}\n", r.method, r.alpha,
                   r.r2_biomass, r.pct_rmse_biomass, r.r2_sigma, r.pct_rmse_sigma);
      }
    } else if (entropy->parsed()) {
      const auto result = bench::cmd_entropy(config);
      for (const auto& a : result.agreement) {
        fmt::print("{}: R2 bnn {:.4f} tta {:.4f}\n", a.kind, a.r2_bnn, a.r2_tta);
      }
    } else if (classify->parsed()) {
      const auto result = bench::cmd_classify(config);
      fmt::print("ECE one_hot {:.4f} distributional {:.4f}\n", result.mean_ece_one_hot,
                 result.mean_ece_distributional);
    } else if (repro->parsed()) {
      fmt::print("{}\n", bench::reproduce(config, table).string());
    }
  } catch (const ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return 1;
  } catch (const IoError& e) {
    fmt::print(stderr, "data error: {}\n", e.what());
    return 2;
  } catch (const ShapeError& e) {
    fmt::print(stderr, "data error: {}\n", e.what());
    return 2;
  } catch (const GenerationError& e) {
    fmt::print(stderr, "data error: {}\n", e.what());
    return 2;
  } catch (const ParameterError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return 1;
  } catch (const Error& e) {
    fmt::print(stderr, "numerical error: {}\n", e.what());
    return 3;
  }
  return 0;
}
