#include "snell/adapter.hpp"

#include <cmath>
#include <iostream>

namespace snell {

void MemoryMeter::release(std::size_t floats) {
  if (floats > current_) throw StateError("MemoryMeter: release exceeds live count");
  current_ -= floats;
}

Matrix merge(const Matrix& b, const Matrix& a, const KernelSpec& kernel) {
  if (b.cols() != a.cols())
    throw DimensionError("merge: B has rank " + std::to_string(b.cols()) + " but A has rank " +
                         std::to_string(a.cols()));
  kernel.validate(a.cols());
  Matrix delta_w(b.rows(), a.rows());
  for (Eigen::Index i = 0; i < b.rows(); ++i)
    for (Eigen::Index j = 0; j < a.rows(); ++j) delta_w(i, j) = kernel_value(kernel, b.row(i), a.row(j));
  return delta_w;
}

MergeGrads merge_backward(const Matrix& b, const Matrix& a, const KernelSpec& kernel, const Matrix& upstream) {
  if (upstream.rows() != b.rows() || upstream.cols() != a.rows())
    throw DimensionError("merge_backward: upstream gradient shape does not match B A^T");
  MergeGrads g{Matrix::Zero(b.rows(), b.cols()), Matrix::Zero(a.rows(), a.cols()),
               Vector::Zero(kernel.param_count())};
  if (kernel.variant == KernelVariant::Linear) {
    g.d_b = matmul(upstream, a);
    g.d_a = matmul(upstream.transpose(), b);
    return g;
  }
  for (Eigen::Index i = 0; i < b.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.rows(); ++j) {
      const double w = upstream(i, j);
      if (w == 0.0) continue;
      accumulate_kernel_grad(kernel, b.row(i), a.row(j), w, g.d_b.row(i), g.d_a.row(j), g.d_kernel);
    }
  }
  return g;
}

SparsifyResult apply_threshold(const Matrix& delta_w, double threshold, SoftThreshold form) {
  SparsifyResult out{Matrix::Zero(delta_w.rows(), delta_w.cols()), threshold, 0, true, -1};
  for (Eigen::Index i = 0; i < delta_w.size(); ++i) {
    const double w = delta_w.data()[i];
    const double excess = std::abs(w) - threshold;
    if (!(excess > 0.0)) continue;
    const double shrunk = form == SoftThreshold::Product ? w * excess : std::copysign(excess, w);
    out.delta_w_s.data()[i] = shrunk;
    if (shrunk != 0.0) ++out.nonzero_count;
  }
  return out;
}

SparsifyResult sparsify(const Matrix& delta_w, double s, SoftThreshold form) {
  if (!(s >= 0.0 && s <= 1.0)) throw DomainError("sparsify: sparsity ratio must lie in [0, 1]");
  if (s == 0.0) {
    const auto nonzero = static_cast<Eigen::Index>((delta_w.array() != 0.0).count());
    return {delta_w, 0.0, nonzero, false, -1};
  }
  const auto total = static_cast<double>(delta_w.size());
  const auto k = static_cast<Eigen::Index>(std::ceil(s * total));
  const Eigen::Index flat = kth_smallest_abs_index(delta_w, k);
  SparsifyResult out = apply_threshold(delta_w, std::abs(delta_w.data()[flat]), form);
  out.threshold_index = flat;
  return out;
}

void apply_sparsify_jacobian(Matrix& upstream, const Matrix& delta_w, const SparsifyResult& result,
                             SoftThreshold form, ThresholdGrad threshold_grad) {
  if (upstream.rows() != delta_w.rows() || upstream.cols() != delta_w.cols())
    throw DimensionError("apply_sparsify_jacobian: gradient and delta_w shapes differ");
  if (!result.thresholded) return;
  const double t = result.threshold;
  double d_threshold = 0.0;
  for (Eigen::Index i = 0; i < delta_w.size(); ++i) {
    const double w = delta_w.data()[i];
    const double mag = std::abs(w);
    if (!(mag > t)) {
      upstream.data()[i] = 0.0;
      continue;
    }
    const double g = upstream.data()[i];
    // d/dw [w (|w| - t)] = 2|w| - t ; d/dw [sign(w)(|w| - t)] = 1
    // d/dt [w (|w| - t)] = -w       ; d/dt [sign(w)(|w| - t)] = -sign(w)
    if (form == SoftThreshold::Product) {
      upstream.data()[i] = g * (2.0 * mag - t);
      d_threshold -= g * w;
    } else {
      d_threshold -= std::copysign(g, w);
    }
  }
  if (threshold_grad == ThresholdGrad::Exact && result.threshold_index >= 0) {
    const double w_k = delta_w.data()[result.threshold_index];
    if (w_k != 0.0) upstream.data()[result.threshold_index] += w_k > 0.0 ? d_threshold : -d_threshold;
  }
}

KernelizedAdapter::KernelizedAdapter(Matrix w0, Matrix b, Matrix a, KernelSpec kernel, double sparsity,
                                     MemoryMode mode, SoftThreshold form)
    : w0_(std::move(w0)),
      b_(std::move(b)),
      a_(std::move(a)),
      kernel_(std::move(kernel)),
      sparsity_(0.0),
      mode_(mode),
      form_(form) {
  check_shapes();
  set_sparsity(sparsity);
  if (rank() > std::min(out_dim(), in_dim()))
    std::cerr << "warning: adapter rank " << rank() << " exceeds min(m, n) = " << std::min(out_dim(), in_dim())
              << "\n";
}

KernelizedAdapter KernelizedAdapter::initialize(Matrix w0, Eigen::Index rank, const KernelSpec& kernel_shape,
                                                double sparsity, RngStream& rng, MemoryMode mode,
                                                SoftThreshold form, double init_scale) {
  if (rank < 1) throw DomainError("adapter rank must be at least 1");
  const double std = 1.0 / std::sqrt(static_cast<double>(rank));
  const Eigen::Index m = w0.rows(), n = w0.cols();
  Matrix a = randn(rng, n, rank, std);
  Matrix b = randn(rng, m, rank, std);
  if (kernel_shape.variant == KernelVariant::Linear) b *= init_scale;
  KernelSpec kernel = KernelSpec::scaled_init(kernel_shape.variant, kernel_shape.segments, init_scale);
  return KernelizedAdapter(std::move(w0), std::move(b), std::move(a), std::move(kernel), sparsity, mode, form);
}

void KernelizedAdapter::check_shapes() const {
  if (w0_.rows() < 1 || w0_.cols() < 1) throw DimensionError("adapter: W0 must be non-empty");
  if (b_.rows() != w0_.rows()) throw DimensionError("adapter: B must have as many rows as W0");
  if (a_.rows() != w0_.cols()) throw DimensionError("adapter: A must have as many rows as W0 has columns");
  if (a_.cols() != b_.cols() || a_.cols() < 1) throw DimensionError("adapter: A and B must share a rank >= 1");
  if (!all_finite(w0_)) throw NumericalError("adapter: W0 has non-finite entries");
  kernel_.validate(a_.cols());
}

void KernelizedAdapter::set_sparsity(double s) {
  if (!(s >= 0.0 && s <= 1.0)) throw DomainError("adapter: sparsity ratio must lie in [0, 1]");
  sparsity_ = s;
}

Matrix KernelizedAdapter::export_merged() const {
  Matrix merged = w0_ + sparsified().delta_w_s;
  return merged;
}

Matrix KernelizedAdapter::apply(const Matrix& x) const {
  if (x.cols() != in_dim())
    throw DimensionError("adapter forward: input has " + std::to_string(x.cols()) + " columns, expected " +
                         std::to_string(in_dim()));
  return matmul(x, export_merged().transpose());
}

Matrix KernelizedAdapter::forward(const Matrix& x, MemoryMeter& meter) {
  if (x.cols() != in_dim())
    throw DimensionError("adapter forward: input has " + std::to_string(x.cols()) + " columns, expected " +
                         std::to_string(in_dim()));
  context_->reset();
  Context ctx;
  ctx.x = x;
  ctx.x_lease = track(meter, ctx.x);

  Matrix delta_w = merge();
  MeterLease delta_w_lease = track(meter, delta_w);
  SparsifyResult sparse = sparsify(delta_w, sparsity_, form_);
  MeterLease sparse_lease = track(meter, sparse.delta_w_s);

  Matrix effective = w0_ + sparse.delta_w_s;
  MeterLease effective_lease = track(meter, effective);
  Matrix y = matmul(x, effective.transpose());

  if (mode_ == MemoryMode::Store) {
    ctx.delta_w = std::move(delta_w);
    ctx.sparse = std::move(sparse);
    ctx.delta_w_lease = std::move(delta_w_lease);
    ctx.sparse_lease = std::move(sparse_lease);
  }
  *context_ = std::move(ctx);
  return y;
}

AdapterGrads KernelizedAdapter::backward(const Matrix& d_y, MemoryMeter& meter) {
  if (!context_->has_value()) throw StateError("adapter backward called without a matching forward");
  Context& ctx = **context_;
  if (d_y.rows() != ctx.x.rows() || d_y.cols() != out_dim())
    throw DimensionError("adapter backward: upstream gradient shape does not match the forward output");

  Matrix recomputed_delta_w;
  SparsifyResult recomputed_sparse;
  MeterLease delta_w_lease, sparse_lease;
  const Matrix* delta_w = nullptr;
  const SparsifyResult* sparse = nullptr;
  if (ctx.delta_w && ctx.sparse) {
    delta_w = &*ctx.delta_w;
    sparse = &*ctx.sparse;
  } else {
    recomputed_delta_w = merge();
    delta_w_lease = track(meter, recomputed_delta_w);
    recomputed_sparse = sparsify(recomputed_delta_w, sparsity_, form_);
    sparse_lease = track(meter, recomputed_sparse.delta_w_s);
    delta_w = &recomputed_delta_w;
    sparse = &recomputed_sparse;
  }

  AdapterGrads grads;
  {
    Matrix effective = w0_ + sparse->delta_w_s;
    MeterLease effective_lease = track(meter, effective);
    grads.d_x = matmul(d_y, effective);
  }

  Matrix upstream = matmul(d_y.transpose(), ctx.x);
  MeterLease upstream_lease = track(meter, upstream);
  apply_sparsify_jacobian(upstream, *delta_w, *sparse, form_, threshold_grad_);

  MergeGrads merged = merge_backward(b_, a_, kernel_, upstream);
  grads.d_a = std::move(merged.d_a);
  grads.d_b = std::move(merged.d_b);
  grads.d_kernel = std::move(merged.d_kernel);

  context_->reset();
  return grads;
}

}  // namespace snell
