#include "snell/fit_matrix.hpp"

#include <cmath>

namespace snell {

double reconstruction_mse(const Matrix& target, const Matrix& b, const Matrix& a, const KernelSpec& kernel) {
  const Matrix residual = merge(b, a, kernel) - target;
  return residual.squaredNorm() / static_cast<double>(target.size());
}

FitResult fit_matrix(const Matrix& target, Eigen::Index rank, const KernelSpec& kernel_shape, const FitOptions& options,
                     std::uint64_t seed) {
  if (options.steps < 1) throw DomainError("fit_matrix: steps must be at least 1");
  if (options.record_every < 1) throw DomainError("fit_matrix: record_every must be at least 1");
  if (rank < 1) throw DomainError("fit_matrix: rank must be at least 1");
  if (!all_finite(target)) throw NumericalError("fit_matrix: target has non-finite entries");

  RngStream rng(seed);
  const double std = 1.0 / std::sqrt(static_cast<double>(rank));
  FitResult out;
  out.a = randn(rng, target.cols(), rank, std);
  out.b = randn(rng, target.rows(), rank, std);
  if (kernel_shape.variant == KernelVariant::Linear) out.b.setZero();
  out.kernel = KernelSpec::zero_init(kernel_shape.variant, kernel_shape.segments);
  out.kernel.validate(rank);

  TrainConfig adam;
  adam.weight_decay = 0.0;
  adam.beta1 = options.beta1;
  adam.beta2 = options.beta2;
  adam.eps = options.eps;
  AdamWState state_a, state_b, state_kernel;

  const double scale = 2.0 / static_cast<double>(target.size());
  double mse = 0.0;
  out.best_mse = INFINITY;
  for (std::int64_t step = 0; step < options.steps; ++step) {
    Matrix residual = merge(out.b, out.a, out.kernel) - target;
    mse = residual.squaredNorm() / static_cast<double>(target.size());
    if (!std::isfinite(mse)) throw NumericalError("fit_matrix: objective diverged at step " + std::to_string(step));
    out.best_mse = std::min(out.best_mse, mse);
    if (step % options.record_every == 0) out.trace.push_back({step, mse});

    residual *= scale;
    MergeGrads g = merge_backward(out.b, out.a, out.kernel, residual);
    adamw_step(out.a, g.d_a, state_a, options.lr, adam, false);
    adamw_step(out.b, g.d_b, state_b, options.lr, adam, false);
    if (out.kernel.param_count() > 0) adamw_step(out.kernel.params, g.d_kernel, state_kernel, options.lr, adam, false);
  }
  out.final_mse = reconstruction_mse(target, out.b, out.a, out.kernel);
  out.best_mse = std::min(out.best_mse, out.final_mse);
  out.trace.push_back({options.steps, out.final_mse});
  return out;
}

double truncation_mse(const Matrix& target, Eigen::Index rank) {
  const Vector sv = singular_values(target);
  double tail = 0.0;
  for (Eigen::Index i = rank; i < sv.size(); ++i) tail += sv(i) * sv(i);
  return tail / static_cast<double>(target.size());
}

}  // namespace snell
