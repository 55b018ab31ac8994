#include "snell/tiny_model.hpp"

#include <cmath>
#include <cstring>
#include <numeric>

namespace snell {

TinyModel::TinyModel(std::vector<KernelizedAdapter> layers, Matrix head_w, Vector head_b)
    : layers_(std::move(layers)), head_w_(std::move(head_w)), head_b_(std::move(head_b)) {
  if (layers_.empty()) throw DimensionError("TinyModel needs at least one adapted layer");
  for (std::size_t l = 1; l < layers_.size(); ++l)
    if (layers_[l].in_dim() != layers_[l - 1].out_dim())
      throw DimensionError("TinyModel: layer " + std::to_string(l) + " input does not match previous output");
  if (head_w_.cols() != layers_.back().out_dim() || head_b_.size() != head_w_.rows())
    throw DimensionError("TinyModel: head shape does not match the last layer");
}

TinyModel TinyModel::create(const ModelShape& shape, std::uint64_t seed) {
  if (shape.layers < 1) throw DomainError("TinyModel needs at least one layer");
  if (shape.classes < 2) throw DomainError("TinyModel needs at least two classes");
  RngStream rng(seed);
  std::vector<KernelizedAdapter> layers;
  Eigen::Index fan_in = shape.input_dim;
  for (int l = 0; l < shape.layers; ++l) {
    Matrix w0 = randn(rng, shape.hidden_dim, fan_in, std::sqrt(2.0 / static_cast<double>(fan_in)));
    layers.push_back(KernelizedAdapter::initialize(std::move(w0), shape.rank, shape.kernel, shape.sparsity, rng,
                                                   shape.mode, shape.soft_threshold, shape.init_scale));
    layers.back().set_threshold_grad(shape.threshold_grad);
    fan_in = shape.hidden_dim;
  }
  Matrix head_w = randn(rng, shape.classes, fan_in, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  return TinyModel(std::move(layers), std::move(head_w), Vector::Zero(shape.classes));
}

void TinyModel::set_mode(MemoryMode mode) {
  for (auto& layer : layers_) layer.set_mode(mode);
}

Matrix TinyModel::forward(const Matrix& x, MemoryMeter& meter) {
  auto& acts = (*activations_).emplace();
  acts.reserve(layers_.size());
  const Matrix* h = &x;
  for (auto& layer : layers_) {
    Matrix out = layer.forward(*h, meter).cwiseMax(0.0);
    MeterLease lease = track(meter, out);
    acts.push_back({std::move(out), std::move(lease)});
    h = &acts.back().value;
  }
  Matrix logits = matmul(*h, head_w_.transpose());
  logits.rowwise() += head_b_.transpose();
  return logits;
}

TinyModel::Grads TinyModel::backward(const Matrix& d_logits, MemoryMeter& meter) {
  if (!activations_->has_value() || (*activations_)->size() != layers_.size())
    throw StateError("TinyModel backward called without forward");
  auto& acts = **activations_;
  Grads g;
  g.d_head_w = matmul(d_logits.transpose(), acts.back().value);
  g.d_head_b = d_logits.colwise().sum().transpose();
  Matrix d_h = matmul(d_logits, head_w_);
  g.layers.resize(layers_.size());
  for (std::size_t l = layers_.size(); l-- > 0;) {
    d_h.array() *= (acts[l].value.array() > 0.0).cast<double>();
    g.layers[l] = layers_[l].backward(d_h, meter);
    d_h = g.layers[l].d_x;
    acts.pop_back();
  }
  (*activations_).reset();
  return g;
}

Matrix TinyModel::logits(const Matrix& x) const {
  Matrix h = x;
  for (const auto& layer : layers_) h = layer.apply(h).cwiseMax(0.0);
  Matrix out = matmul(h, head_w_.transpose());
  out.rowwise() += head_b_.transpose();
  return out;
}

Matrix TinyModel::logits_exported(const Matrix& x) const {
  Matrix h = x;
  for (const auto& layer : layers_) h = matmul(h, layer.export_merged().transpose()).cwiseMax(0.0);
  Matrix out = matmul(h, head_w_.transpose());
  out.rowwise() += head_b_.transpose();
  return out;
}

double TinyModel::accuracy(const Dataset& data) const {
  const Matrix out = logits(data.features);
  Eigen::Index correct = 0;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    Eigen::Index best = 0;
    out.row(i).maxCoeff(&best);
    if (best == data.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(out.rows());
}

std::uint64_t frozen_weights_hash(const TinyModel& model) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (const auto& layer : model.layers()) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(layer.w0().data());
    const std::size_t len = static_cast<std::size_t>(layer.w0().size()) * sizeof(double);
    for (std::size_t i = 0; i < len; ++i) {
      hash ^= bytes[i];
      hash *= 0x100000001b3ULL;
    }
  }
  return hash;
}

namespace {

void check_input(const TinyModel& model, const Dataset& data) {
  data.validate();
  if (data.dim() != model.input_dim())
    throw DimensionError("dataset has " + std::to_string(data.dim()) + " features, model expects " +
                         std::to_string(model.input_dim()));
  if (data.class_count > model.class_count())
    throw DimensionError("dataset has more classes than the model head");
}

std::vector<Eigen::Index> epoch_order(Eigen::Index n, std::uint64_t seed, int epoch) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  RngStream rng(derive_seed(seed, static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.next_below(i)]);
  return order;
}

std::int64_t batches_per_epoch(Eigen::Index n, int batch_size) { return (n + batch_size - 1) / batch_size; }

}  // namespace

std::vector<EpochMetrics> train_classifier(TinyModel& model, const Dataset& data, const TrainConfig& cfg,
                                           MemoryMeter* meter) {
  cfg.validate();
  check_input(model, data);
  std::vector<EpochMetrics> trace;
  if (cfg.epochs == 0) return trace;

  MemoryMeter local_meter;
  MemoryMeter& m = meter != nullptr ? *meter : local_meter;
  const std::int64_t per_epoch = batches_per_epoch(data.size(), cfg.batch_size);
  const std::int64_t total = cfg.total_steps > 0 ? cfg.total_steps : per_epoch * cfg.epochs;

  struct LayerState {
    AdamWState a, b, kernel;
  };
  std::vector<LayerState> layer_states(model.layers().size());
  AdamWState head_w_state, head_b_state;

  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(data.size(), cfg.seed, epoch);
    double loss_sum = 0.0;
    double lr = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t count = std::min(order.size() - start, static_cast<std::size_t>(cfg.batch_size));
      const Dataset batch = take_rows(data, std::span(order).subspan(start, count));

      const Matrix logits = model.forward(batch.features, m);
      const LossAndGrad lg = softmax_cross_entropy(logits, batch.labels);
      if (!std::isfinite(lg.loss)) throw NumericalError("train_classifier: loss is not finite at step " + std::to_string(step));
      loss_sum += lg.loss * static_cast<double>(count);
      const TinyModel::Grads g = model.backward(lg.d_logits, m);

      lr = cosine_lr(std::min(step, total), total, cfg.base_lr);
      for (std::size_t l = 0; l < model.layers().size(); ++l) {
        auto& layer = model.layers()[l];
        adamw_step(layer.a(), g.layers[l].d_a, layer_states[l].a, lr, cfg, true);
        adamw_step(layer.b(), g.layers[l].d_b, layer_states[l].b, lr, cfg, true);
        if (layer.kernel().param_count() > 0)
          adamw_step(layer.kernel_params(), g.layers[l].d_kernel, layer_states[l].kernel, lr, cfg, false);
      }
      adamw_step(model.head_w(), g.d_head_w, head_w_state, lr, cfg, true);
      adamw_step(model.head_b(), g.d_head_b, head_b_state, lr, cfg, false);
      ++step;
    }
    trace.push_back({epoch, step, lr, loss_sum / static_cast<double>(data.size()), model.accuracy(data)});
  }
  return trace;
}

std::size_t profile_epoch_peak(const TinyModel& model, const Dataset& data, const TrainConfig& cfg, MemoryMode mode) {
  cfg.validate();
  check_input(model, data);
  TinyModel probe = model;
  probe.set_mode(mode);
  MemoryMeter meter;
  for (Eigen::Index start = 0; start < data.size(); start += cfg.batch_size) {
    const Eigen::Index count = std::min<Eigen::Index>(data.size() - start, cfg.batch_size);
    const Matrix x = data.features.middleRows(start, count);
    const std::vector<int> labels(data.labels.begin() + start, data.labels.begin() + start + count);
    const Matrix logits = probe.forward(x, meter);
    probe.backward(softmax_cross_entropy(logits, labels).d_logits, meter);
  }
  return meter.peak_floats();
}

}  // namespace snell
