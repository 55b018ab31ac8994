#include "snell/run_config.hpp"

#include <algorithm>
#include <cstdlib>
#include <sstream>

#include "CLI11.hpp"
#include "snell/format.hpp"
#include "snell/kernels.hpp"

namespace snell {

namespace {

std::string option_names(const std::string& key) {
  std::string dashed = key;
  std::replace(dashed.begin(), dashed.end(), '_', '-');
  if (dashed == key) return "--" + key;
  return "--" + dashed + ",--" + key;
}

std::string quote(const std::string& s) { return "\"" + s + "\""; }

template <typename T, typename Fmt>
std::string list(const std::vector<T>& values, Fmt fmt) {
  std::string out = "[";
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ", ";
    out += fmt(values[i]);
  }
  return out + "]";
}

void require(bool ok, const char* field, const std::string& message) {
  if (!ok) throw ConfigError(field, message);
}

}  // namespace

void bind_options(CLI::App& app, RunConfig& cfg) {
  app.set_config("--config", "", "Read settings from a key = value file (flags override it)");
  app.allow_config_extras(CLI::config_extras_mode::error);

  auto opt = [&](const std::string& key, auto& target, const std::string& help) {
    return app.add_option(option_names(key), target, help)->capture_default_str();
  };
  opt("seed", cfg.seed, "Master seed");
  opt("out", cfg.out, "Output directory (default $SNELL_OUT_DIR or ./snell_out)");
  opt("mode", cfg.mode, "Adapter memory mode: store | recompute");
  app.add_flag(option_names("emit_plot_data"), cfg.emit_plot_data, "Also write plot-ready CSV files");
  opt("parallel_seeds", cfg.parallel_seeds, "Worker threads for independent seeds or grid cells");

  opt("kernels", cfg.kernels, "Kernels for fit-matrix and rank-study");
  opt("segments", cfg.segments, "Segments P of the piecewise linear kernel");
  opt("num_seeds", cfg.num_seeds, "Seeds per kernel");
  opt("fit_rows", cfg.fit_rows, "Target rows for fit-matrix");
  opt("fit_cols", cfg.fit_cols, "Target columns for fit-matrix");
  opt("fit_rank", cfg.fit_rank, "Factor rank for fit-matrix");
  opt("fit_steps", cfg.fit_steps, "Adam steps for fit-matrix");
  opt("fit_lr", cfg.fit_lr, "Adam learning rate for fit-matrix");
  opt("fit_record_every", cfg.fit_record_every, "Trace interval for fit-matrix");
  opt("rank_rows", cfg.rank_rows, "Merged matrix rows for rank-study");
  opt("rank_cols", cfg.rank_cols, "Merged matrix columns for rank-study");
  opt("ranks", cfg.ranks, "Factor ranks for rank-study");
  opt("rank_tol", cfg.rank_tol, "Relative singular value cutoff");
  opt("rank_zero_scale_rows", cfg.rank_zero_scale_rows, "Also report zero-scale kernels");

  opt("kernel", cfg.kernel, "Adapter kernel for train and sweep-sparsity");
  opt("model_rank", cfg.model_rank, "Adapter rank");
  opt("hidden_dim", cfg.hidden_dim, "Width of each adapted layer");
  opt("layers", cfg.layers, "Number of adapted layers");
  opt("sparsity", cfg.sparsity, "Fraction of update entries zeroed");
  opt("soft_threshold", cfg.soft_threshold, "Shrink form: product | standard");
  opt("init_scale", cfg.init_scale, "Initial kernel output scale (0: exactly-zero initial update)");
  opt("threshold_grad", cfg.threshold_grad, "Threshold gradient: constant | exact");

  opt("dataset", cfg.dataset, "CSV dataset (default: generated blobs)");
  opt("data_samples", cfg.data_samples, "Blob sample count");
  opt("data_dim", cfg.data_dim, "Blob feature dimension");
  opt("data_classes", cfg.data_classes, "Blob class count");
  opt("data_separation", cfg.data_separation, "Blob center separation in standard deviations");

  opt("epochs", cfg.epochs, "Training epochs");
  opt("batch_size", cfg.batch_size, "Minibatch size");
  opt("lr", cfg.lr, "Peak AdamW learning rate");
  opt("weight_decay", cfg.weight_decay, "AdamW decoupled weight decay");
  opt("beta1", cfg.beta1, "Adam beta1");
  opt("beta2", cfg.beta2, "Adam beta2");
  opt("eps", cfg.eps, "Adam epsilon");

  opt("sparsity_grid", cfg.sparsity_grid, "Sparsity ratios for sweep-sparsity");
  opt("checkpoint", cfg.checkpoint, "Checkpoint directory for export (default <out>/checkpoint)");
  opt("probe_count", cfg.probe_count, "Probe inputs checked by export");
}

void finalize_config(RunConfig& cfg) {
  if (cfg.out.empty()) {
    const char* env = std::getenv("SNELL_OUT_DIR");
    cfg.out = (env != nullptr && *env != '\0') ? env : "snell_out";
  }
}

std::filesystem::path RunConfig::checkpoint_dir() const {
  if (!checkpoint.empty()) return checkpoint;
  return out_dir() / "checkpoint";
}

void RunConfig::validate() const {
  require(std::find(experiment_names().begin(), experiment_names().end(), experiment) != experiment_names().end(),
          "experiment", "unknown experiment '" + experiment + "'");
  require(mode == "store" || mode == "recompute", "mode", "must be 'store' or 'recompute'");
  require(parallel_seeds >= 1, "parallel_seeds", "must be at least 1");
  require(!kernels.empty(), "kernels", "must list at least one kernel");
  for (const auto& k : kernels) require(parse_kernel_variant(k).has_value(), "kernels", "unknown kernel '" + k + "'");
  require(segments >= 1, "segments", "must be at least 1");
  require(num_seeds >= 1, "num_seeds", "must be at least 1");
  require(fit_rows >= 1 && fit_cols >= 1, "fit_rows", "target shape must be positive");
  require(fit_rank >= 1, "fit_rank", "must be at least 1");
  require(fit_steps >= 1, "fit_steps", "must be at least 1");
  require(fit_lr > 0.0, "fit_lr", "must be positive");
  require(fit_record_every >= 1, "fit_record_every", "must be at least 1");
  require(rank_rows >= 1 && rank_cols >= 1, "rank_rows", "shape must be positive");
  require(!ranks.empty(), "ranks", "must list at least one rank");
  for (int r : ranks) require(r >= 1, "ranks", "every rank must be at least 1");
  require(rank_tol > 0.0, "rank_tol", "must be positive");

  require(parse_kernel_variant(kernel).has_value(), "kernel", "unknown kernel '" + kernel + "'");
  require(model_rank >= 1, "model_rank", "must be at least 1");
  require(hidden_dim >= 1, "hidden_dim", "must be at least 1");
  require(layers >= 1, "layers", "must be at least 1");
  require(sparsity >= 0.0 && sparsity <= 1.0, "sparsity", "must lie in [0, 1]");
  require(soft_threshold == "product" || soft_threshold == "standard", "soft_threshold",
          "must be 'product' or 'standard'");
  require(threshold_grad == "constant" || threshold_grad == "exact", "threshold_grad",
          "must be 'constant' or 'exact'");
  require(init_scale >= 0.0, "init_scale", "must be non-negative");
  require(data_samples >= 1, "data_samples", "must be at least 1");
  require(data_dim >= 1, "data_dim", "must be at least 1");
  require(data_classes >= 2, "data_classes", "must be at least 2");
  require(data_separation >= 0.0, "data_separation", "must be non-negative");
  require(epochs >= 0, "epochs", "must be non-negative");
  require(batch_size >= 1, "batch_size", "must be at least 1");
  require(lr > 0.0, "lr", "must be positive");
  require(weight_decay >= 0.0, "weight_decay", "must be non-negative");
  require(beta1 >= 0.0 && beta1 < 1.0, "beta1", "must lie in [0, 1)");
  require(beta2 >= 0.0 && beta2 < 1.0, "beta2", "must lie in [0, 1)");
  require(eps > 0.0, "eps", "must be positive");
  require(!sparsity_grid.empty(), "sparsity_grid", "must list at least one ratio");
  for (double s : sparsity_grid) require(s >= 0.0 && s <= 1.0, "sparsity_grid", "every ratio must lie in [0, 1]");
  require(probe_count >= 1, "probe_count", "must be at least 1");
  if (experiment == "train" || experiment == "sweep-sparsity") {
    if (kernel == "piecewise_linear")
      require(segments <= model_rank, "segments", "cannot exceed model_rank for the piecewise linear kernel");
  }
  if (experiment == "fit-matrix" &&
      std::find(kernels.begin(), kernels.end(), "piecewise_linear") != kernels.end())
    require(segments <= fit_rank, "segments", "cannot exceed fit_rank for the piecewise linear kernel");
}

std::string RunConfig::to_config_text() const {
  auto str = [](const std::string& s) { return quote(s); };
  auto num = [](double v) { return format_double(v); };
  auto integer = [](auto v) { return std::to_string(v); };
  auto boolean = [](bool b) { return std::string(b ? "true" : "false"); };

  std::ostringstream out;
  out << "# snell run configuration\n";
  out << "# experiment: " << experiment << "\n";
  out << "seed = " << seed << "\n";
  out << "out = " << str(out_dir().string()) << "\n";
  out << "mode = " << str(mode) << "\n";
  out << "emit_plot_data = " << boolean(emit_plot_data) << "\n";
  out << "parallel_seeds = " << parallel_seeds << "\n";
  out << "kernels = " << list(kernels, str) << "\n";
  out << "segments = " << segments << "\n";
  out << "num_seeds = " << num_seeds << "\n";
  out << "fit_rows = " << fit_rows << "\n";
  out << "fit_cols = " << fit_cols << "\n";
  out << "fit_rank = " << fit_rank << "\n";
  out << "fit_steps = " << fit_steps << "\n";
  out << "fit_lr = " << num(fit_lr) << "\n";
  out << "fit_record_every = " << fit_record_every << "\n";
  out << "rank_rows = " << rank_rows << "\n";
  out << "rank_cols = " << rank_cols << "\n";
  out << "ranks = " << list(ranks, integer) << "\n";
  out << "rank_tol = " << num(rank_tol) << "\n";
  out << "rank_zero_scale_rows = " << boolean(rank_zero_scale_rows) << "\n";
  out << "kernel = " << str(kernel) << "\n";
  out << "model_rank = " << model_rank << "\n";
  out << "hidden_dim = " << hidden_dim << "\n";
  out << "layers = " << layers << "\n";
  out << "sparsity = " << num(sparsity) << "\n";
  out << "soft_threshold = " << str(soft_threshold) << "\n";
  out << "init_scale = " << num(init_scale) << "\n";
  out << "threshold_grad = " << str(threshold_grad) << "\n";
  out << "dataset = " << str(dataset) << "\n";
  out << "data_samples = " << data_samples << "\n";
  out << "data_dim = " << data_dim << "\n";
  out << "data_classes = " << data_classes << "\n";
  out << "data_separation = " << num(data_separation) << "\n";
  out << "epochs = " << epochs << "\n";
  out << "batch_size = " << batch_size << "\n";
  out << "lr = " << num(lr) << "\n";
  out << "weight_decay = " << num(weight_decay) << "\n";
  out << "beta1 = " << num(beta1) << "\n";
  out << "beta2 = " << num(beta2) << "\n";
  out << "eps = " << num(eps) << "\n";
  out << "sparsity_grid = " << list(sparsity_grid, num) << "\n";
  out << "checkpoint = " << str(checkpoint) << "\n";
  out << "probe_count = " << probe_count << "\n";
  return out.str();
}

}  // namespace snell
