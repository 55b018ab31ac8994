#pragma once

#include <cstdint>
#include <vector>

#include "snell/adapter.hpp"
#include "snell/dataset.hpp"
#include "snell/optim.hpp"

namespace snell {

struct ModelShape {
  Eigen::Index input_dim = 16;
  Eigen::Index hidden_dim = 16;
  int layers = 2;
  int classes = 2;
  Eigen::Index rank = 8;
  KernelSpec kernel = KernelSpec::zero_init(KernelVariant::PiecewiseLinear);
  double sparsity = 0.9;
  MemoryMode mode = MemoryMode::Recompute;
  SoftThreshold soft_threshold = SoftThreshold::Product;
  /// Initial kernel output scale; 0 gives an exactly-zero initial update.
  double init_scale = 1e-2;
  ThresholdGrad threshold_grad = ThresholdGrad::Constant;
};

/// A stack of adapted linear layers with ReLU in between, followed by a
/// trainable dense head. The backbone weights W0 are frozen random
/// features drawn from N(0, 2 / fan_in).
class TinyModel {
 public:
  TinyModel(std::vector<KernelizedAdapter> layers, Matrix head_w, Vector head_b);

  static TinyModel create(const ModelShape& shape, std::uint64_t seed);

  std::vector<KernelizedAdapter>& layers() { return layers_; }
  const std::vector<KernelizedAdapter>& layers() const { return layers_; }
  Matrix& head_w() { return head_w_; }
  Vector& head_b() { return head_b_; }
  const Matrix& head_w() const { return head_w_; }
  const Vector& head_b() const { return head_b_; }
  Eigen::Index input_dim() const { return layers_.front().in_dim(); }
  Eigen::Index class_count() const { return head_w_.rows(); }

  void set_mode(MemoryMode mode);

  /// Logits, recording context for backward().
  Matrix forward(const Matrix& x, MemoryMeter& meter);

  struct Grads {
    std::vector<AdapterGrads> layers;
    Matrix d_head_w;
    Vector d_head_b;
  };
  Grads backward(const Matrix& d_logits, MemoryMeter& meter);

  /// Inference through the adapters without touching any context.
  Matrix logits(const Matrix& x) const;
  /// Inference through each layer's exported dense weight.
  Matrix logits_exported(const Matrix& x) const;

  double accuracy(const Dataset& data) const;

 private:
  std::vector<KernelizedAdapter> layers_;
  Matrix head_w_;  // classes x hidden
  Vector head_b_;
  struct Activation {
    Matrix value;  // post-ReLU output of one layer
    MeterLease lease;
  };
  ScratchSlot<std::vector<Activation>> activations_;
};

/// FNV-1a over the raw bytes of every frozen W0, in layer order.
std::uint64_t frozen_weights_hash(const TinyModel& model);

struct EpochMetrics {
  int epoch;
  std::int64_t step;  // optimizer steps taken so far
  double lr;          // learning rate used by the epoch's last step
  double loss;        // mean training loss over the epoch's batches
  double accuracy;    // full-dataset accuracy after the epoch
};

/// Minibatch AdamW under a cosine schedule on adapter factors, kernel
/// parameters and the head. Weight decay applies to A, B and the head
/// weights only. Batches are a fresh seeded permutation per epoch.
std::vector<EpochMetrics> train_classifier(TinyModel& model, const Dataset& data, const TrainConfig& cfg,
                                           MemoryMeter* meter = nullptr);

/// Peak tracked floats over one forward+backward epoch without updates.
std::size_t profile_epoch_peak(const TinyModel& model, const Dataset& data, const TrainConfig& cfg, MemoryMode mode);

}  // namespace snell
