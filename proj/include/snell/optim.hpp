#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

#include "snell/numkit.hpp"

namespace snell {

/// Optimizer and loop settings. Defaults follow the reference fine-tuning
/// recipe: batch 32, learning rate 1e-3, weight decay 1e-4.
struct TrainConfig {
  double base_lr = 1e-3;
  double weight_decay = 1e-4;
  int batch_size = 32;
  int epochs = 200;
  /// Schedule length; 0 means epochs * ceil(N / batch_size).
  std::int64_t total_steps = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
};

/// First/second moment buffers for one parameter tensor.
struct AdamWState {
  Matrix m;
  Matrix v;
  std::int64_t step = 0;
};

/// One AdamW update with bias correction and decoupled weight decay:
///   param -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * param)
/// Pass apply_decay = false for tensors that must not be decayed.
template <typename P, typename G>
void adamw_step(const Eigen::MatrixBase<P>& param_out, const Eigen::MatrixBase<G>& grad, AdamWState& state,
                double lr, const TrainConfig& cfg, bool apply_decay = true) {
  auto& param = const_cast<Eigen::MatrixBase<P>&>(param_out);
  if (param.rows() != grad.rows() || param.cols() != grad.cols())
    throw DimensionError("adamw_step: gradient shape differs from parameter shape");
  if (!(lr >= 0.0)) throw DomainError("adamw_step: learning rate must be non-negative");
  if (state.step == 0 && state.m.size() == 0) {
    state.m = Matrix::Zero(param.rows(), param.cols());
    state.v = Matrix::Zero(param.rows(), param.cols());
  }
  if (state.m.rows() != param.rows() || state.m.cols() != param.cols())
    throw DimensionError("adamw_step: optimizer state shape differs from parameter shape");

  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  const double decay = apply_decay ? cfg.weight_decay : 0.0;
  for (Eigen::Index i = 0; i < param.rows(); ++i) {
    for (Eigen::Index j = 0; j < param.cols(); ++j) {
      const double g = grad(i, j);
      double& m = state.m(i, j);
      double& v = state.v(i, j);
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m / bc1;
      const double v_hat = v / bc2;
      const double p = param(i, j);
      param(i, j) = p - lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) + decay * p);
    }
  }
}

/// base_lr * (1 + cos(pi * step / total)) / 2, clamped at step = total.
inline double cosine_lr(std::int64_t step, std::int64_t total, double base_lr) {
  if (total < 1) throw DomainError("cosine_lr: total must be at least 1");
  if (step < 0) throw DomainError("cosine_lr: step must be non-negative");
  if (step >= total) return 0.0;
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

struct LossAndGrad {
  double loss = 0.0;
  Matrix d_logits;
};

/// Mean softmax cross-entropy with log-sum-exp stabilization; the
/// gradient is (softmax - onehot) / batch.
LossAndGrad softmax_cross_entropy(const Matrix& logits, std::span<const int> labels);

}  // namespace snell
