#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "snell/error.hpp"

namespace CLI {
class App;
}

namespace snell {

/// Invalid configuration value; `field` is the config key at fault.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field + ": " + message), field(std::move(field)) {}
  std::string field;
};

/// Every experiment setting. Keys in the config file match the member
/// names; see README for the canonical file format.
struct RunConfig {
  std::string experiment;  // subcommand, not a config key
  std::uint64_t seed = 0;
  std::string out;  // empty: $SNELL_OUT_DIR, else ./snell_out
  std::string mode = "recompute";
  bool emit_plot_data = false;
  int parallel_seeds = 1;

  // fit-matrix and rank-study
  std::vector<std::string> kernels{"linear", "piecewise_linear", "sigmoid", "rbf"};
  int segments = 2;
  int num_seeds = 10;
  int fit_rows = 32;
  int fit_cols = 32;
  int fit_rank = 4;
  std::int64_t fit_steps = 20000;
  double fit_lr = 1e-3;
  std::int64_t fit_record_every = 100;
  int rank_rows = 64;
  int rank_cols = 64;
  std::vector<int> ranks{4};
  double rank_tol = 1e-10;
  bool rank_zero_scale_rows = true;

  // model
  std::string kernel = "piecewise_linear";
  int model_rank = 8;
  int hidden_dim = 16;
  int layers = 2;
  double sparsity = 0.9;
  std::string soft_threshold = "product";
  double init_scale = 1e-2;
  std::string threshold_grad = "constant";

  // data
  std::string dataset;  // empty: generated blobs
  int data_samples = 500;
  int data_dim = 16;
  int data_classes = 2;
  double data_separation = 4.0;

  // optimization
  int epochs = 200;
  int batch_size = 32;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  // sweep-sparsity
  std::vector<double> sparsity_grid{0.0, 0.2, 0.5, 0.8, 0.9, 0.99};

  // export
  std::string checkpoint;  // empty: <out>/checkpoint
  int probe_count = 8;

  /// Throws ConfigError naming the first offending key.
  void validate() const;

  /// Canonical `key = value` document; feeding it back through --config
  /// reproduces this configuration.
  std::string to_config_text() const;

  std::filesystem::path out_dir() const { return out; }
  std::filesystem::path checkpoint_dir() const;
};

inline const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names{"fit-matrix", "rank-study", "sweep-sparsity", "train", "export"};
  return names;
}

/// Registers every RunConfig field as `--key` (dashes or underscores) plus
/// `--config PATH`; unknown config-file keys are rejected.
void bind_options(CLI::App& app, RunConfig& cfg);

/// Resolves the output directory default after parsing.
void finalize_config(RunConfig& cfg);

}  // namespace snell
