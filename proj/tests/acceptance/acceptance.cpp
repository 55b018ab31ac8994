// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Independent oracles live in tests/support.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "snell/adapter.hpp"
#include "snell/fit_matrix.hpp"
#include "snell/tiny_model.hpp"
#include "support/cli_runner.hpp"
#include "support/oracles.hpp"
#include "support/random_points.hpp"

using namespace snell;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  std::string info;  // printed on a following line, never affects the verdict
};

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), static_cast<std::size_t>(a.size()) * sizeof(double)) == 0;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.5g", v);
  return buf;
}

// Rank counted from Eigen's SVD, as a cross-check on the in-repo estimator.
Eigen::Index svd_rank(const Matrix& m, double rel_tol = kDefaultRankTol) {
  const Eigen::VectorXd sv = Eigen::BDCSVD<Eigen::MatrixXd>(m).singularValues();
  if (sv.size() == 0 || sv(0) == 0.0) return 0;
  return (sv.array() > rel_tol * sv(0)).count();
}

double svd_truncation_mse(const Matrix& target, Eigen::Index rank) {
  const Eigen::VectorXd sv = Eigen::BDCSVD<Eigen::MatrixXd>(target).singularValues();
  return sv.tail(sv.size() - rank).squaredNorm() / static_cast<double>(target.size());
}

// 1. Linear merge equals B A^T.
Outcome linear_equivalence() {
  RngStream rng(0xA1);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = static_cast<Eigen::Index>(1 + rng.next_below(64));
    const auto n = static_cast<Eigen::Index>(1 + rng.next_below(64));
    const auto r = static_cast<Eigen::Index>(1 + rng.next_below(16));
    RngStream local(derive_seed(0xA1, static_cast<std::uint64_t>(trial)));
    const Matrix b = randn(local, m, r), a = randn(local, n, r);
    const Matrix got = merge(b, a, KernelSpec::linear());
    worst = std::max(worst, (got - oracle::triple_loop_product_transposed(b, a)).cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-12, "100 shapes, max abs diff " + fmt(worst) + " (tol 1e-12)"};
}

// 2. Rank separation at m = n = 64, r = 4.
Outcome rank_separation() {
  constexpr Eigen::Index kDim = 64, kRank = 4;
  Eigen::Index lin_max = 0, pl_min = kDim, rbf_min = kDim;
  bool oracle_agrees = true;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RngStream rng(derive_seed(0xA2, seed));
    const double std = 1.0 / std::sqrt(static_cast<double>(kRank));
    const Matrix b = randn(rng, kDim, kRank, std), a = randn(rng, kDim, kRank, std);
    const Matrix lin = merge(b, a, KernelSpec::linear());
    const Matrix pl = merge(b, a, testing::random_nonzero_kernel(KernelVariant::PiecewiseLinear, kRank, rng));
    const Matrix rbf = merge(b, a, testing::random_nonzero_kernel(KernelVariant::Rbf, kRank, rng));
    const auto rl = numeric_rank(lin), rp = numeric_rank(pl), rr = numeric_rank(rbf);
    oracle_agrees = oracle_agrees && rl == svd_rank(lin) && rp == svd_rank(pl) && rr == svd_rank(rbf);
    lin_max = std::max(lin_max, rl);
    pl_min = std::min(pl_min, rp);
    rbf_min = std::min(rbf_min, rr);
  }
  const bool pass = lin_max <= kRank && pl_min > kRank && rbf_min > kRank && oracle_agrees;
  return {pass, "10 seeds: linear max rank " + std::to_string(lin_max) + " (<= 4), piecewise_linear min rank " +
                    std::to_string(pl_min) + " (> 4), rbf min rank " + std::to_string(rbf_min) +
                    " (> 4), svd oracle " + (oracle_agrees ? "agrees" : "DISAGREES")};
}

bool distinct_magnitudes(const Matrix& m) {
  std::vector<double> mags(m.data(), m.data() + m.size());
  for (double& v : mags) v = std::abs(v);
  std::sort(mags.begin(), mags.end());
  return std::adjacent_find(mags.begin(), mags.end()) == mags.end();
}

// 3. Sparsification against a full-sort oracle.
Outcome sparsify_correctness() {
  RngStream rng(0xA3);
  int checks = 0, failures = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto m = static_cast<Eigen::Index>(1 + rng.next_below(24));
    const auto n = static_cast<Eigen::Index>(1 + rng.next_below(24));
    Matrix dw;
    do dw = randn(rng, m, n);
    while (!distinct_magnitudes(dw));
    for (int tenth = 1; tenth <= 9; ++tenth) {
      const double s = tenth / 10.0;
      const SparsifyResult r = sparsify(dw, s);
      const auto killed = static_cast<Eigen::Index>(std::ceil(s * static_cast<double>(m * n)));
      const bool ok = r.nonzero_count == m * n - killed && r.delta_w_s == oracle::brute_force_sparsify(dw, s);
      failures += !ok;
      ++checks;
    }
  }
  return {failures == 0, "200 matrices x 9 ratios = " + std::to_string(checks) + " cases, " +
                             std::to_string(failures) + " mismatches against the full-sort oracle"};
}

// 4. Gradient fidelity against central differences.
Outcome gradient_fidelity() {
  RngStream rng(0xA4);
  double worst_exact = 0.0, worst_constant = 0.0;
  int points = 0, constant_violations = 0, rejected = 0;
  std::map<KernelVariant, int> per_kernel;
  while (points < 100) {
    const auto variant = static_cast<KernelVariant>(points % 4);
    const oracle::AdapterParams p = testing::random_adapter_point(rng, variant);
    if (!oracle::well_separated(p, 1e-3)) {
      ++rejected;
      continue;
    }
    const Matrix target = randn(rng, p.x.rows(), p.w0.rows());
    const auto fd = oracle::central_differences(p, target, 1e-6);
    auto worst_for = [&](ThresholdGrad mode) {
      KernelizedAdapter adapter = testing::make_adapter(p, MemoryMode::Recompute, mode);
      MemoryMeter meter;
      const Matrix y = adapter.forward(p.x, meter);
      const AdapterGrads g = adapter.backward(y - target, meter);
      return std::max({oracle::relative_error(g.d_a, fd.d_a), oracle::relative_error(g.d_b, fd.d_b),
                       oracle::relative_error(g.d_kernel, fd.d_kernel)});
    };
    const double exact = worst_for(ThresholdGrad::Exact);
    const double constant = worst_for(ThresholdGrad::Constant);
    worst_exact = std::max(worst_exact, exact);
    worst_constant = std::max(worst_constant, constant);
    constant_violations += constant >= 1e-5;
    ++per_kernel[variant];
    ++points;
  }
  Outcome out{worst_exact < 1e-5, "100 points (25 per kernel, " + std::to_string(rejected) +
                                       " near-threshold draws rejected), exact threshold gradient: max rel err " +
                                       fmt(worst_exact) + " (tol 1e-5)"};
  out.info = "constant threshold gradient (training default): max rel err " + fmt(worst_constant) + ", " +
             std::to_string(constant_violations) + "/100 points above 1e-5";
  return out;
}

// 5. Fitting ability: piecewise linear beats linear; linear meets Eckart-Young.
Outcome fitting_ability() {
  constexpr int kSeeds = 10;
  std::vector<double> lin(kSeeds), pl(kSeeds), bound(kSeeds);
  std::vector<std::thread> workers;
  for (int s = 0; s < kSeeds; ++s) {
    workers.emplace_back([&, s] {
      RngStream rng(derive_seed(0xA5, 1000 + static_cast<std::uint64_t>(s)));
      const Matrix target = randn(rng, 32, 32, 1.0);
      FitOptions options;  // 2e4 steps, lr 1e-3
      lin[s] = fit_matrix(target, 4, KernelSpec::linear(), options, derive_seed(0xA5, s)).final_mse;
      pl[s] = fit_matrix(target, 4, KernelSpec::zero_init(KernelVariant::PiecewiseLinear, 2), options,
                         derive_seed(0xA5, s))
                  .final_mse;
      bound[s] = svd_truncation_mse(target, 4);
    });
  }
  for (auto& w : workers) w.join();
  double mean_lin = 0, mean_pl = 0, worst_ratio = 0, min_ratio = INFINITY;
  for (int s = 0; s < kSeeds; ++s) {
    mean_lin += lin[s] / kSeeds;
    mean_pl += pl[s] / kSeeds;
    worst_ratio = std::max(worst_ratio, lin[s] / bound[s]);
    min_ratio = std::min(min_ratio, lin[s] / bound[s]);
  }
  const bool pass = mean_pl < mean_lin && worst_ratio <= 1.1 && min_ratio >= 1.0 - 1e-9;
  return {pass, "mean final mse piecewise_linear " + fmt(mean_pl) + " < linear " + fmt(mean_lin) +
                    "; linear / truncation residual in [" + fmt(min_ratio) + ", " + fmt(worst_ratio) +
                    "] (need [1, 1.1])"};
}

// 6. Memory contract on a 4-adapter stack of 256 x 256 layers.
Outcome memory_contract() {
  constexpr int kLayers = 4;
  constexpr Eigen::Index kDim = 256, kRank = 8, kBatch = 32;
  RngStream rng(0xA6);
  std::vector<KernelizedAdapter> store, recompute;
  for (int l = 0; l < kLayers; ++l) {
    KernelizedAdapter layer = KernelizedAdapter::initialize(
        randn(rng, kDim, kDim, std::sqrt(1.0 / kDim)), kRank, KernelSpec::zero_init(KernelVariant::PiecewiseLinear), 0.9,
        rng, MemoryMode::Store, SoftThreshold::Product, 0.1);
    store.push_back(layer);
    layer.set_mode(MemoryMode::Recompute);
    recompute.push_back(layer);
  }
  const Matrix x = randn(rng, kBatch, kDim);
  const Matrix d_out = randn(rng, kBatch, kDim);
  struct Trace {
    std::vector<Matrix> outputs;
    std::vector<AdapterGrads> grads;
    std::size_t peak = 0;
  };
  auto run = [&](std::vector<KernelizedAdapter>& stack) {
    Trace t;
    MemoryMeter meter;
    Matrix h = x;
    for (auto& layer : stack) t.outputs.push_back(h = layer.forward(h, meter));
    Matrix d = d_out;
    for (auto it = stack.rbegin(); it != stack.rend(); ++it) {
      t.grads.push_back(it->backward(d, meter));
      d = t.grads.back().d_x;
    }
    t.peak = meter.peak_floats();
    return t;
  };
  const Trace s = run(store), r = run(recompute);
  bool identical = true;
  for (int l = 0; l < kLayers; ++l) {
    identical = identical && bitwise_equal(s.outputs[l], r.outputs[l]) && bitwise_equal(s.grads[l].d_a, r.grads[l].d_a) &&
                bitwise_equal(s.grads[l].d_b, r.grads[l].d_b) && bitwise_equal(s.grads[l].d_x, r.grads[l].d_x) &&
                bitwise_equal(s.grads[l].d_kernel, r.grads[l].d_kernel);
  }
  const auto needed = static_cast<std::size_t>(3 * kDim * kDim);
  const bool pass = identical && s.peak >= r.peak + needed;
  return {pass, "peak floats store " + std::to_string(s.peak) + ", recompute " + std::to_string(r.peak) +
                    ", saving " + std::to_string(static_cast<long long>(s.peak) - static_cast<long long>(r.peak)) +
                    " (need >= " + std::to_string(needed) + "); outputs and gradients " +
                    (identical ? "bitwise identical" : "DIFFER")};
}

// Softmax regression on the raw inputs: the task's linear-separability
// calibration, independent of the model code.
double linear_probe_accuracy(const Dataset& data, const TrainConfig& cfg) {
  Matrix w = Matrix::Zero(data.class_count, data.dim());
  Matrix b = Matrix::Zero(1, data.class_count);
  AdamWState sw, sb;
  const auto steps_per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t total = cfg.epochs * steps_per_epoch;
  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (Eigen::Index start = 0; start < data.size(); start += cfg.batch_size) {
      const Eigen::Index count = std::min<Eigen::Index>(cfg.batch_size, data.size() - start);
      const Matrix x = data.features.middleRows(start, count);
      const std::vector<int> labels(data.labels.begin() + start, data.labels.begin() + start + count);
      const Matrix logits = (x * w.transpose()).rowwise() + b.row(0);
      const LossAndGrad lg = softmax_cross_entropy(logits, labels);
      const double lr = cosine_lr(step++, total, cfg.base_lr);
      adamw_step(w, lg.d_logits.transpose() * x, sw, lr, cfg);
      adamw_step(b, lg.d_logits.colwise().sum(), sb, lr, cfg, false);
    }
  }
  const Matrix logits = (data.features * w.transpose()).rowwise() + b.row(0);
  int correct = 0;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    Eigen::Index best = 0;
    logits.row(i).maxCoeff(&best);
    correct += best == data.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

// 7. End-to-end training on Gaussian blobs.
Outcome end_to_end() {
  const Dataset data = make_blobs(derive_seed(0xA7, 1), 500, 16, 2, 4.0);
  ModelShape shape;  // 2 layers, r = 8, s = 0.9
  TrainConfig cfg;   // lr 1e-3, wd 1e-4, batch 32, 200 epochs
  cfg.seed = derive_seed(0xA7, 3);
  TinyModel model = TinyModel::create(shape, derive_seed(0xA7, 2));
  const auto hash = frozen_weights_hash(model);
  const auto trace = train_classifier(model, data, cfg);
  const double final_acc = trace.back().accuracy;
  const bool hash_ok = frozen_weights_hash(model) == hash;

  ModelShape dead = shape;
  dead.sparsity = 1.0;
  TinyModel head_only = TinyModel::create(dead, derive_seed(0xA7, 2));
  const double frozen_head_acc = train_classifier(head_only, data, cfg).back().accuracy;
  const double probe_acc = linear_probe_accuracy(data, cfg);

  Outcome out{final_acc >= 0.95 && hash_ok && probe_acc > 0.9,
              "final training accuracy " + fmt(final_acc) + " after " + std::to_string(trace.size()) +
                  " epochs (need >= 0.95); W0 hash " + (hash_ok ? "unchanged" : "CHANGED") +
                  "; linear-probe calibration " + fmt(probe_acc) + " (need > 0.9)"};
  out.info = "head-only on frozen random features (s = 1): " + fmt(frozen_head_acc);
  return out;
}

struct Snapshot {
  std::map<std::string, std::string> files;
};

Snapshot snapshot(const fs::path& dir) {
  Snapshot s;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.ends_with(".timing.json") || name == "run.ini") continue;
    s.files[fs::relative(entry.path(), dir).string()] = testing::slurp(entry.path());
  }
  return s;
}

// 8. Byte-identical reruns of every subcommand.
Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "snell_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path config = root / "run.ini";
  std::ofstream(config) << "seed = 11\n"
                           "fit_steps = 2000\n"
                           "num_seeds = 3\n"
                           "epochs = 20\n"
                           "sparsity_grid = [0, 0.5, 0.9]\n"
                           "emit_plot_data = true\n"
                           "parallel_seeds = 4\n";
  const std::vector<std::string> subcommands{"fit-matrix", "rank-study", "sweep-sparsity", "train", "export"};
  std::vector<std::string> differing;
  std::size_t compared = 0;
  const fs::path dir = root / "out";
  auto run_all = [&] {
    fs::remove_all(dir);
    for (const auto& sub : subcommands) {
      const auto r = testing::run_snell(sub + " --config '" + config.string() + "' --out '" + dir.string() + "'");
      if (r.exit_code != 0) differing.push_back(sub + " exit " + std::to_string(r.exit_code));
    }
    return snapshot(dir);
  };
  const Snapshot first = run_all();
  const Snapshot second = run_all();
  for (const auto& [name, bytes] : first.files) {
    ++compared;
    const auto it = second.files.find(name);
    if (it == second.files.end() || it->second != bytes) differing.push_back(name);
  }
  if (second.files.size() != first.files.size()) differing.push_back("file set");
  bool every_report = true;
  for (const auto& sub : subcommands) every_report = every_report && first.files.contains(sub + ".report.json");
  std::string detail = "5 subcommands run twice, " + std::to_string(compared) + " output files compared (timing files excluded), ";
  detail += differing.empty() ? "all byte-identical" : std::to_string(differing.size()) + " differ: " + differing.front();
  return {differing.empty() && every_report && compared > 0, detail};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double limit_seconds;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "linear-kernel equivalence", 5, linear_equivalence},
      {2, "rank separation", 30, rank_separation},
      {3, "sparsification correctness", 10, sparsify_correctness},
      {4, "gradient fidelity", 60, gradient_fidelity},
      {5, "kernel fitting ability", 180, fitting_ability},
      {6, "memory contract", 10, memory_contract},
      {7, "end-to-end training", 120, end_to_end},
      {8, "cli determinism", 0, determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("threw: ") + e.what(), ""};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = c.limit_seconds <= 0 || seconds < c.limit_seconds;
    const bool pass = out.pass && in_time;
    failed += !pass;
    std::string timing = fmt(seconds) + " s";
    if (c.limit_seconds > 0) timing += " (limit " + fmt(c.limit_seconds) + " s" + (in_time ? "" : ", EXCEEDED") + ")";
    std::printf("criterion %d %s: %s | %s | %s\n", c.id, c.name, pass ? "PASS" : "FAIL", out.detail.c_str(),
                timing.c_str());
    if (!out.info.empty()) std::printf("  info: %s\n", out.info.c_str());
    std::fflush(stdout);
  }
  std::printf("acceptance: %zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
