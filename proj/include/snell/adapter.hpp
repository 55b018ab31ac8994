#pragma once

#include <cstddef>
#include <optional>
#include <utility>

#include "snell/kernels.hpp"
#include "snell/numkit.hpp"

namespace snell {

enum class MemoryMode { Store, Recompute };

/// Shape of the sparsifying shrink applied to surviving entries.
///   Product:  w * max(|w| - t, 0)        (competition form, the default)
///   Standard: sign(w) * max(|w| - t, 0)  (classic soft threshold)
enum class SoftThreshold { Product, Standard };

/// How backward treats the order-statistic threshold.
///   Constant: no gradient through the threshold (the default).
///   Exact:    the threshold entry |w_k| also receives dL/dt * sign(w_k),
///             giving the true gradient wherever the ranking is stable.
enum class ThresholdGrad { Constant, Exact };

/// Counts live tracked doubles and their high-water mark.
class MemoryMeter {
 public:
  void acquire(std::size_t floats) {
    current_ += floats;
    if (current_ > peak_) peak_ = current_;
  }
  void release(std::size_t floats);

  std::size_t current_floats() const { return current_; }
  std::size_t peak_floats() const { return peak_; }
  void reset_peak() { peak_ = current_; }

 private:
  std::size_t current_ = 0;
  std::size_t peak_ = 0;
};

/// RAII registration of one buffer with a meter.
class MeterLease {
 public:
  MeterLease() = default;
  MeterLease(MemoryMeter& meter, std::size_t floats) : meter_(&meter), floats_(floats) { meter.acquire(floats); }
  MeterLease(MeterLease&& other) noexcept
      : meter_(std::exchange(other.meter_, nullptr)), floats_(std::exchange(other.floats_, 0)) {}
  MeterLease& operator=(MeterLease&& other) noexcept {
    if (this != &other) {
      reset();
      meter_ = std::exchange(other.meter_, nullptr);
      floats_ = std::exchange(other.floats_, 0);
    }
    return *this;
  }
  MeterLease(const MeterLease&) = delete;
  MeterLease& operator=(const MeterLease&) = delete;
  ~MeterLease() { reset(); }

  void reset() {
    if (meter_ != nullptr) meter_->release(floats_);
    meter_ = nullptr;
    floats_ = 0;
  }

 private:
  MemoryMeter* meter_ = nullptr;
  std::size_t floats_ = 0;
};

/// Holds per-pass scratch state that must not follow a copy of its owner:
/// copies start out empty, moves transfer.
template <typename T>
class ScratchSlot {
 public:
  ScratchSlot() = default;
  ScratchSlot(const ScratchSlot&) {}
  ScratchSlot& operator=(const ScratchSlot&) {
    value_.reset();
    return *this;
  }
  ScratchSlot(ScratchSlot&&) noexcept = default;
  ScratchSlot& operator=(ScratchSlot&&) noexcept = default;

  std::optional<T>& operator*() { return value_; }
  std::optional<T>* operator->() { return &value_; }
  const std::optional<T>* operator->() const { return &value_; }

 private:
  std::optional<T> value_;
};

template <typename Derived>
MeterLease track(MemoryMeter& meter, const Eigen::EigenBase<Derived>& buffer) {
  return MeterLease(meter, static_cast<std::size_t>(buffer.size()));
}

struct SparsifyResult {
  Matrix delta_w_s;
  double threshold = 0.0;
  Eigen::Index nonzero_count = 0;
  /// False only for s == 0, where the input passes through untouched.
  bool thresholded = false;
  /// Flat row-major index of the entry that set the threshold; -1 when the
  /// threshold was supplied rather than selected.
  Eigen::Index threshold_index = -1;
};

/// Delta W with entry (i, j) = kappa(B row i, A row j).
Matrix merge(const Matrix& b, const Matrix& a, const KernelSpec& kernel);

/// Gradients of sum_ij G_ij * kappa(B_i, A_j) with respect to B, A and the
/// kernel parameters.
struct MergeGrads {
  Matrix d_b;
  Matrix d_a;
  Vector d_kernel;
};
MergeGrads merge_backward(const Matrix& b, const Matrix& a, const KernelSpec& kernel, const Matrix& upstream);

/// Shrinks delta_w against a fixed threshold: entries with |w| <= t become 0.
SparsifyResult apply_threshold(const Matrix& delta_w, double threshold, SoftThreshold form = SoftThreshold::Product);

/// Competition-based sparsification. Zeroes the ceil(s*m*n) smallest-|w|
/// entries using the order-statistic threshold; s == 0 is the identity.
SparsifyResult sparsify(const Matrix& delta_w, double s, SoftThreshold form = SoftThreshold::Product);

/// Maps dL/d(sparsified) to dL/d(delta_w) in place. With ThresholdGrad::Exact
/// the gradient through the threshold is routed to its defining entry.
void apply_sparsify_jacobian(Matrix& upstream, const Matrix& delta_w, const SparsifyResult& result,
                             SoftThreshold form, ThresholdGrad threshold_grad = ThresholdGrad::Constant);

struct AdapterGrads {
  Matrix d_a;
  Matrix d_b;
  Vector d_kernel;
  Matrix d_x;
};

/// A frozen weight W0 (m x n) plus a kernelized, sparsified update built
/// from trainable factors B (m x r) and A (n x r):
///   y = x (W0 + sparsify(merge(B, A)))^T
///
/// forward() records the context backward() needs. In Store mode the merged
/// and sparsified buffers are kept until backward; in Recompute mode they are
/// released at the end of forward and rebuilt once inside backward.
class KernelizedAdapter {
 public:
  KernelizedAdapter(Matrix w0, Matrix b, Matrix a, KernelSpec kernel, double sparsity,
                    MemoryMode mode = MemoryMode::Recompute, SoftThreshold form = SoftThreshold::Product);

  /// A, B ~ N(0, 1/r) with kernel output scales set to `init_scale`; the
  /// linear kernel instead scales B by `init_scale`. With init_scale = 0
  /// the initial update is exactly zero, but then every entry ties with the
  /// sparsity threshold and, for s > 0, no gradient reaches the factors.
  static KernelizedAdapter initialize(Matrix w0, Eigen::Index rank, const KernelSpec& kernel_shape, double sparsity,
                                      RngStream& rng, MemoryMode mode = MemoryMode::Recompute,
                                      SoftThreshold form = SoftThreshold::Product, double init_scale = 0.0);

  Eigen::Index out_dim() const { return w0_.rows(); }
  Eigen::Index in_dim() const { return w0_.cols(); }
  Eigen::Index rank() const { return a_.cols(); }

  const Matrix& w0() const { return w0_; }
  const Matrix& a() const { return a_; }
  const Matrix& b() const { return b_; }
  const KernelSpec& kernel() const { return kernel_; }
  double sparsity() const { return sparsity_; }
  MemoryMode mode() const { return mode_; }
  SoftThreshold soft_threshold() const { return form_; }
  ThresholdGrad threshold_grad() const { return threshold_grad_; }
  void set_threshold_grad(ThresholdGrad g) { threshold_grad_ = g; }

  Matrix& a() { return a_; }
  Matrix& b() { return b_; }
  Vector& kernel_params() { return kernel_.params; }
  void set_mode(MemoryMode mode) { mode_ = mode; }
  void set_sparsity(double s);

  Matrix merge() const { return snell::merge(b_, a_, kernel_); }
  SparsifyResult sparsified() const { return sparsify(merge(), sparsity_, form_); }

  /// W0 + sparsified update as one dense matrix.
  Matrix export_merged() const;

  /// Forward pass without recording anything for backward.
  Matrix apply(const Matrix& x) const;

  Matrix forward(const Matrix& x, MemoryMeter& meter);
  AdapterGrads backward(const Matrix& d_y, MemoryMeter& meter);
  bool has_context() const { return context_->has_value(); }
  void clear_context() { context_->reset(); }

 private:
  struct Context {
    Matrix x;
    MeterLease x_lease;
    // Store mode only.
    std::optional<Matrix> delta_w;
    std::optional<SparsifyResult> sparse;
    MeterLease delta_w_lease;
    MeterLease sparse_lease;
  };

  void check_shapes() const;

  Matrix w0_;
  Matrix b_;
  Matrix a_;
  KernelSpec kernel_;
  double sparsity_;
  MemoryMode mode_;
  SoftThreshold form_;
  ThresholdGrad threshold_grad_ = ThresholdGrad::Constant;
  ScratchSlot<Context> context_;
};

}  // namespace snell
