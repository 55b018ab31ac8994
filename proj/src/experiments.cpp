#include "snell/experiments.hpp"

#include <atomic>
#include <chrono>
#include <cstring>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "snell/adapter.hpp"
#include "snell/dataset.hpp"
#include "snell/fit_matrix.hpp"
#include "snell/format.hpp"
#include "snell/matrix_io.hpp"
#include "snell/tiny_model.hpp"

namespace snell {

namespace {

namespace fs = std::filesystem;

class CsvWriter {
 public:
  CsvWriter(const fs::path& path, const std::vector<std::string>& header) : out_(path) {
    if (!out_) throw IoError("cannot write " + path.string());
    row(header);
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i == 0 ? "" : ",") << cells[i];
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

std::string num(double v) { return format_double(v); }

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

/// Runs fn(0..count-1) on up to `workers` threads. Each job owns its
/// state; the first failure in job order is rethrown.
template <typename Fn>
void parallel_for(std::size_t count, int workers, Fn&& fn) {
  if (workers <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(workers), count);
  for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

KernelSpec kernel_shape(const std::string& name, int segments) {
  const auto variant = parse_kernel_variant(name);
  if (!variant) throw ConfigError("kernel", "unknown kernel '" + name + "'");
  return KernelSpec::zero_init(*variant, segments);
}

MemoryMode memory_mode(const RunConfig& cfg) { return cfg.mode == "store" ? MemoryMode::Store : MemoryMode::Recompute; }

TrainConfig train_config(const RunConfig& cfg) {
  TrainConfig t;
  t.base_lr = cfg.lr;
  t.weight_decay = cfg.weight_decay;
  t.batch_size = cfg.batch_size;
  t.epochs = cfg.epochs;
  t.beta1 = cfg.beta1;
  t.beta2 = cfg.beta2;
  t.eps = cfg.eps;
  t.seed = derive_seed(cfg.seed, 3);
  return t;
}

ModelShape model_shape(const RunConfig& cfg, const Dataset& data, double sparsity) {
  ModelShape shape;
  shape.input_dim = data.dim();
  shape.hidden_dim = cfg.hidden_dim;
  shape.layers = cfg.layers;
  shape.classes = std::max(data.class_count, 2);
  shape.rank = cfg.model_rank;
  shape.kernel = kernel_shape(cfg.kernel, cfg.segments);
  shape.sparsity = sparsity;
  shape.mode = memory_mode(cfg);
  shape.soft_threshold = parse_soft_threshold(cfg.soft_threshold);
  shape.init_scale = cfg.init_scale;
  shape.threshold_grad = parse_threshold_grad(cfg.threshold_grad);
  return shape;
}

Dataset load_data(const RunConfig& cfg) {
  if (!cfg.dataset.empty()) return load_csv_dataset(cfg.dataset);
  return make_blobs(derive_seed(cfg.seed, 1), cfg.data_samples, cfg.data_dim, cfg.data_classes, cfg.data_separation);
}

/// Nonzero random output scales with magnitudes in [0.5, 1.5).
KernelSpec randomized_kernel(KernelVariant variant, int segments, RngStream& rng) {
  auto signed_scale = [&] {
    const double mag = 0.5 + rng.next_uniform();
    return rng.next_uniform() < 0.5 ? -mag : mag;
  };
  switch (variant) {
    case KernelVariant::Linear: return KernelSpec::linear();
    case KernelVariant::PiecewiseLinear: {
      Vector alphas(segments);
      for (int p = 0; p < segments; ++p) alphas(p) = signed_scale();
      return KernelSpec::piecewise_linear(alphas);
    }
    case KernelVariant::Sigmoid:
    case KernelVariant::Rbf: {
      const double alpha = signed_scale();
      const double beta = 0.5 + rng.next_uniform();
      const double gamma = signed_scale();
      return variant == KernelVariant::Sigmoid ? KernelSpec::sigmoid(alpha, beta, gamma)
                                               : KernelSpec::rbf(alpha, beta, gamma);
    }
  }
  throw DomainError("unknown kernel variant");
}

}  // namespace

RunReport run_fit_matrix(const RunConfig& cfg) {
  const fs::path out = cfg.out_dir();
  const auto num_kernels = cfg.kernels.size();
  const auto num_seeds = static_cast<std::size_t>(cfg.num_seeds);

  std::vector<Matrix> targets(num_seeds);
  std::vector<double> truncation(num_seeds);
  for (std::size_t s = 0; s < num_seeds; ++s) {
    RngStream rng(derive_seed(cfg.seed, 1000 + s));
    targets[s] = randn(rng, cfg.fit_rows, cfg.fit_cols, 1.0);
    truncation[s] = truncation_mse(targets[s], cfg.fit_rank);
  }

  FitOptions options;
  options.steps = cfg.fit_steps;
  options.lr = cfg.fit_lr;
  options.record_every = cfg.fit_record_every;
  std::vector<FitResult> results(num_kernels * num_seeds);
  parallel_for(results.size(), cfg.parallel_seeds, [&](std::size_t job) {
    const std::size_t k = job / num_seeds, s = job % num_seeds;
    results[job] = fit_matrix(targets[s], cfg.fit_rank, kernel_shape(cfg.kernels[k], cfg.segments), options,
                              derive_seed(cfg.seed, s));
  });

  RunReport report;
  {
    CsvWriter trace(out / "fit_trace.csv", {"kernel", "seed", "step", "mse"});
    CsvWriter finals(out / "fit_final.csv", {"kernel", "seed", "final_mse", "best_mse", "truncation_mse"});
    for (std::size_t job = 0; job < results.size(); ++job) {
      const std::size_t k = job / num_seeds, s = job % num_seeds;
      for (const auto& p : results[job].trace)
        trace.row({cfg.kernels[k], std::to_string(s), std::to_string(p.step), num(p.mse)});
      finals.row({cfg.kernels[k], std::to_string(s), num(results[job].final_mse), num(results[job].best_mse),
                  num(truncation[s])});
    }
  }
  double mean_truncation = 0.0;
  for (double t : truncation) mean_truncation += t / static_cast<double>(num_seeds);

  nlohmann::json means = nlohmann::json::object();
  {
    CsvWriter summary(out / "fit_summary.csv",
                      {"kernel", "seeds", "mean_final_mse", "min_final_mse", "max_final_mse", "mean_truncation_mse"});
    for (std::size_t k = 0; k < num_kernels; ++k) {
      double mean = 0.0, lo = INFINITY, hi = -INFINITY;
      for (std::size_t s = 0; s < num_seeds; ++s) {
        const double v = results[k * num_seeds + s].final_mse;
        mean += v / static_cast<double>(num_seeds);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      summary.row({cfg.kernels[k], std::to_string(num_seeds), num(mean), num(lo), num(hi), num(mean_truncation)});
      means[cfg.kernels[k]] = mean;
    }
  }
  report.artifacts = {"fit_trace.csv", "fit_final.csv", "fit_summary.csv"};

  if (cfg.emit_plot_data) {
    std::vector<std::string> header{"step"};
    header.insert(header.end(), cfg.kernels.begin(), cfg.kernels.end());
    CsvWriter plot(out / "plot_fit_mse.csv", header);
    const auto points = results.front().trace.size();
    for (std::size_t p = 0; p < points; ++p) {
      std::vector<std::string> row{std::to_string(results.front().trace[p].step)};
      for (std::size_t k = 0; k < num_kernels; ++k) {
        double mean = 0.0;
        for (std::size_t s = 0; s < num_seeds; ++s)
          mean += results[k * num_seeds + s].trace[p].mse / static_cast<double>(num_seeds);
        row.push_back(num(mean));
      }
      plot.row(row);
    }
    report.artifacts.push_back("plot_fit_mse.csv");
  }

  report.metrics = {{"mean_final_mse", means}, {"mean_truncation_mse", mean_truncation}};
  if (means.contains("piecewise_linear") && means.contains("linear"))
    report.metrics["piecewise_linear_below_linear"] =
        means["piecewise_linear"].get<double>() < means["linear"].get<double>();
  return report;
}

RunReport run_rank_study(const RunConfig& cfg) {
  struct Row {
    std::string kernel, scale;
    int rank, seed;
    Eigen::Index numeric_rank;
  };
  struct Cell {
    std::size_t kernel;
    int rank;
    int seed;
  };
  std::vector<Cell> cells;
  for (std::size_t k = 0; k < cfg.kernels.size(); ++k)
    for (int r : cfg.ranks)
      for (int s = 0; s < cfg.num_seeds; ++s) cells.push_back({k, r, s});

  std::vector<std::vector<Row>> rows(cells.size());
  parallel_for(cells.size(), cfg.parallel_seeds, [&](std::size_t c) {
    const Cell cell = cells[c];
    const auto variant = *parse_kernel_variant(cfg.kernels[cell.kernel]);
    const std::uint64_t cell_seed = derive_seed(derive_seed(cfg.seed, static_cast<std::uint64_t>(cell.seed)),
                                                static_cast<std::uint64_t>(cell.rank));
    RngStream factor_rng(cell_seed);
    const double std = 1.0 / std::sqrt(static_cast<double>(cell.rank));
    const Matrix b = randn(factor_rng, cfg.rank_rows, cell.rank, std);
    const Matrix a = randn(factor_rng, cfg.rank_cols, cell.rank, std);
    if (variant == KernelVariant::PiecewiseLinear && cfg.segments > cell.rank)
      throw ConfigError("segments", "cannot exceed every rank in 'ranks' for the piecewise linear kernel");

    RngStream kernel_rng(derive_seed(cell_seed, 17 + static_cast<std::uint64_t>(variant)));
    const KernelSpec random_kernel = randomized_kernel(variant, cfg.segments, kernel_rng);
    const std::string& name = cfg.kernels[cell.kernel];
    rows[c].push_back({name, "random", cell.rank, cell.seed, numeric_rank(merge(b, a, random_kernel), cfg.rank_tol)});
    if (cfg.rank_zero_scale_rows) {
      const KernelSpec zero = KernelSpec::zero_init(variant, cfg.segments);
      const Matrix zero_b = variant == KernelVariant::Linear ? Matrix::Zero(b.rows(), b.cols()) : b;
      rows[c].push_back({name, "zero", cell.rank, cell.seed, numeric_rank(merge(zero_b, a, zero), cfg.rank_tol)});
    }
  });

  const fs::path out = cfg.out_dir();
  RunReport report;
  nlohmann::json min_rank = nlohmann::json::object(), max_rank = nlohmann::json::object();
  {
    CsvWriter table(out / "rank_study.csv", {"kernel", "scale", "r", "m", "n", "seed", "numeric_rank"});
    for (const auto& group : rows) {
      for (const auto& row : group) {
        table.row({row.kernel, row.scale, std::to_string(row.rank), std::to_string(cfg.rank_rows),
                   std::to_string(cfg.rank_cols), std::to_string(row.seed), std::to_string(row.numeric_rank)});
        if (row.scale != "random") continue;
        const std::string key = row.kernel + "/r" + std::to_string(row.rank);
        const auto v = static_cast<std::int64_t>(row.numeric_rank);
        min_rank[key] = min_rank.contains(key) ? std::min(min_rank[key].get<std::int64_t>(), v) : v;
        max_rank[key] = max_rank.contains(key) ? std::max(max_rank[key].get<std::int64_t>(), v) : v;
      }
    }
  }
  report.artifacts = {"rank_study.csv"};
  if (cfg.emit_plot_data) {
    CsvWriter plot(out / "plot_rank.csv", {"series", "min_numeric_rank", "max_numeric_rank"});
    for (auto it = min_rank.begin(); it != min_rank.end(); ++it)
      plot.row({it.key(), std::to_string(it.value().get<std::int64_t>()),
                std::to_string(max_rank[it.key()].get<std::int64_t>())});
    report.artifacts.push_back("plot_rank.csv");
  }
  report.metrics = {{"min_numeric_rank", min_rank}, {"max_numeric_rank", max_rank}, {"rank_tol", cfg.rank_tol}};
  return report;
}

RunReport run_sweep_sparsity(const RunConfig& cfg) {
  const Dataset data = load_data(cfg);
  const TrainConfig tc = train_config(cfg);
  struct Cell {
    double loss = 0.0, accuracy = 0.0;
    Eigen::Index update_nonzero = 0;
    std::size_t peak = 0;
  };
  std::vector<Cell> cells(cfg.sparsity_grid.size());
  parallel_for(cells.size(), cfg.parallel_seeds, [&](std::size_t i) {
    TinyModel model = TinyModel::create(model_shape(cfg, data, cfg.sparsity_grid[i]), derive_seed(cfg.seed, 2));
    MemoryMeter meter;
    const auto trace = train_classifier(model, data, tc, &meter);
    cells[i].loss = trace.empty() ? NAN : trace.back().loss;
    cells[i].accuracy = trace.empty() ? model.accuracy(data) : trace.back().accuracy;
    for (const auto& layer : model.layers()) cells[i].update_nonzero += layer.sparsified().nonzero_count;
    cells[i].peak = meter.peak_floats();
  });

  const fs::path out = cfg.out_dir();
  RunReport report;
  std::size_t best = 0;
  {
    CsvWriter table(out / "sweep.csv", {"sparsity", "final_loss", "final_accuracy", "update_nonzero"});
    for (std::size_t i = 0; i < cells.size(); ++i) {
      table.row({num(cfg.sparsity_grid[i]), num(cells[i].loss), num(cells[i].accuracy),
                 std::to_string(cells[i].update_nonzero)});
      if (cells[i].accuracy > cells[best].accuracy) best = i;
      report.peak_floats = std::max(report.peak_floats, cells[i].peak);
    }
  }
  report.artifacts = {"sweep.csv"};
  if (cfg.emit_plot_data) {
    CsvWriter plot(out / "plot_sparsity.csv", {"sparsity", "accuracy"});
    for (std::size_t i = 0; i < cells.size(); ++i) plot.row({num(cfg.sparsity_grid[i]), num(cells[i].accuracy)});
    report.artifacts.push_back("plot_sparsity.csv");
  }
  report.metrics = {{"best_sparsity", cfg.sparsity_grid[best]},
                    {"best_accuracy", cells[best].accuracy},
                    {"rows", cells.size()}};
  return report;
}

RunReport run_train(const RunConfig& cfg) {
  const Dataset data = load_data(cfg);
  const TrainConfig tc = train_config(cfg);
  TinyModel model = TinyModel::create(model_shape(cfg, data, cfg.sparsity), derive_seed(cfg.seed, 2));
  const std::uint64_t hash_before = frozen_weights_hash(model);

  MemoryMeter meter;
  const auto trace = train_classifier(model, data, tc, &meter);
  const std::uint64_t hash_after = frozen_weights_hash(model);

  const fs::path out = cfg.out_dir();
  RunReport report;
  {
    CsvWriter metrics(out / "train_metrics.csv", {"epoch", "step", "lr", "loss", "accuracy"});
    for (const auto& e : trace)
      metrics.row({std::to_string(e.epoch), std::to_string(e.step), num(e.lr), num(e.loss), num(e.accuracy)});
  }
  save_checkpoint(model, cfg.seed, cfg.checkpoint_dir());

  const std::size_t store_peak = profile_epoch_peak(model, data, tc, MemoryMode::Store);
  const std::size_t recompute_peak = profile_epoch_peak(model, data, tc, MemoryMode::Recompute);
  {
    CsvWriter profile(out / "memory_profile.csv", {"mode", "peak_floats"});
    profile.row({"store", std::to_string(store_peak)});
    profile.row({"recompute", std::to_string(recompute_peak)});
  }
  report.artifacts = {"train_metrics.csv", "memory_profile.csv", fs::relative(cfg.checkpoint_dir(), out).string()};
  if (cfg.emit_plot_data) {
    CsvWriter plot(out / "plot_train.csv", {"epoch", "loss", "accuracy"});
    for (const auto& e : trace) plot.row({std::to_string(e.epoch), num(e.loss), num(e.accuracy)});
    report.artifacts.push_back("plot_train.csv");
  }
  report.peak_floats = meter.peak_floats();
  report.metrics = {{"epochs", trace.size()},
                    {"final_loss", trace.empty() ? nlohmann::json(nullptr) : nlohmann::json(trace.back().loss)},
                    {"final_accuracy", model.accuracy(data)},
                    {"frozen_hash_before", hex64(hash_before)},
                    {"frozen_hash_after", hex64(hash_after)},
                    {"frozen_weights_unchanged", hash_before == hash_after},
                    {"store_peak_floats", store_peak},
                    {"recompute_peak_floats", recompute_peak}};
  return report;
}

RunReport run_export(const RunConfig& cfg) {
  LoadedCheckpoint ckpt = load_checkpoint(cfg.checkpoint_dir());
  TinyModel& model = ckpt.model;
  const fs::path out = cfg.out_dir();
  const fs::path export_dir = out / "exported";
  fs::create_directories(export_dir);

  RunReport report;
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    const auto& layer = model.layers()[l];
    const std::string stem = "layer" + std::to_string(l) + "_merged";
    write_matrix(layer.export_merged(), export_dir / (stem + ".bin"));
    write_sidecar({layer.out_dim(), layer.in_dim(), layer.kernel(), layer.sparsity(), layer.soft_threshold(),
                   ckpt.seed, static_cast<int>(l)},
                  export_dir / (stem + ".json"));
    report.artifacts.push_back("exported/" + stem + ".bin");
    report.artifacts.push_back("exported/" + stem + ".json");
  }

  RngStream probe_rng(derive_seed(cfg.seed, 4));
  const Matrix probes = randn(probe_rng, cfg.probe_count, model.input_dim(), 1.0);
  MemoryMeter meter;
  const Matrix via_adapters = model.forward(probes, meter);
  Matrix via_export = probes;
  for (std::size_t l = 0; l < model.layers().size(); ++l) {
    const std::string stem = "layer" + std::to_string(l) + "_merged";
    via_export = matmul(via_export, read_matrix(export_dir / (stem + ".bin")).transpose()).cwiseMax(0.0);
  }
  via_export = matmul(via_export, model.head_w().transpose());
  via_export.rowwise() += model.head_b().transpose();

  const bool bitwise = via_adapters.size() == via_export.size() &&
                       std::memcmp(via_adapters.data(), via_export.data(),
                                   static_cast<std::size_t>(via_adapters.size()) * sizeof(double)) == 0;
  report.peak_floats = meter.peak_floats();
  report.metrics = {{"layers", model.layers().size()},
                    {"probe_count", cfg.probe_count},
                    {"probe_bitwise_match", bitwise},
                    {"probe_max_abs_diff", (via_adapters - via_export).cwiseAbs().maxCoeff()},
                    {"checkpoint_seed", ckpt.seed}};
  return report;
}

RunReport run_experiment(const RunConfig& cfg) {
  cfg.validate();
  const fs::path out = cfg.out_dir();
  fs::create_directories(out);
  const auto start = std::chrono::steady_clock::now();

  RunReport report;
  if (cfg.experiment == "fit-matrix")
    report = run_fit_matrix(cfg);
  else if (cfg.experiment == "rank-study")
    report = run_rank_study(cfg);
  else if (cfg.experiment == "sweep-sparsity")
    report = run_sweep_sparsity(cfg);
  else if (cfg.experiment == "train")
    report = run_train(cfg);
  else
    report = run_export(cfg);

  report.experiment = cfg.experiment;
  report.seed = cfg.seed;
  report.config_text = cfg.to_config_text();
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  {
    std::ofstream config(out / (cfg.experiment + ".config.ini"));
    config << report.config_text;
  }
  nlohmann::json j = {{"experiment", report.experiment},
                      {"seed", report.seed},
                      {"config", report.config_text},
                      {"metrics", report.metrics},
                      {"peak_floats", report.peak_floats},
                      {"artifacts", report.artifacts},
                      {"timing_file", cfg.experiment + ".timing.json"}};
  std::ofstream(out / (cfg.experiment + ".report.json")) << j.dump(2) << '\n';
  std::ofstream(out / (cfg.experiment + ".timing.json")) << nlohmann::json{{"wall_clock_seconds", report.wall_clock_seconds}}.dump(2)
                                     << '\n';
  return report;
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"snell: sparse kernelized low-rank adaptation experiments"};
  RunConfig cfg;
  bind_options(app, cfg);
  app.require_subcommand(1, 1);
  for (const auto& name : experiment_names()) app.add_subcommand(name)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "snell: error: code=2 kind=config message=\"" << e.what() << "\"\n";
    return 2;
  }

  try {
    cfg.experiment = app.get_subcommands().front()->get_name();
    finalize_config(cfg);
    const RunReport report = run_experiment(cfg);
    std::cout << "snell " << report.experiment << ": wrote "
              << (cfg.out_dir() / (cfg.experiment + ".report.json")).string() << "\n";
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "snell: error: code=2 kind=config field=" << e.field << " message=\"" << e.what() << "\"\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "snell: error: code=3 kind=numerical message=\"" << e.what() << "\"\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "snell: error: code=3 kind=runtime message=\"" << e.what() << "\"\n";
    return 3;
  }
}

}  // namespace snell
