#include "snell/optim.hpp"

#include <string>

namespace snell {

void TrainConfig::validate() const {
  if (!(base_lr > 0.0)) throw DomainError("base_lr must be positive");
  if (!(weight_decay >= 0.0)) throw DomainError("weight_decay must be non-negative");
  if (batch_size < 1) throw DomainError("batch_size must be at least 1");
  if (epochs < 0) throw DomainError("epochs must be non-negative");
  if (total_steps < 0) throw DomainError("total_steps must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw DomainError("betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw DomainError("eps must be positive");
}

LossAndGrad softmax_cross_entropy(const Matrix& logits, std::span<const int> labels) {
  const Eigen::Index batch = logits.rows();
  const Eigen::Index classes = logits.cols();
  if (static_cast<Eigen::Index>(labels.size()) != batch)
    throw DimensionError("softmax_cross_entropy: label count differs from batch size");
  if (batch == 0) throw DimensionError("softmax_cross_entropy: empty batch");

  LossAndGrad out{0.0, Matrix(batch, classes)};
  for (Eigen::Index i = 0; i < batch; ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= classes)
      throw DomainError("softmax_cross_entropy: label " + std::to_string(label) + " at row " + std::to_string(i) +
                        " outside [0, " + std::to_string(classes) + ")");
    const double shift = logits.row(i).maxCoeff();
    double denom = 0.0;
    for (Eigen::Index c = 0; c < classes; ++c) {
      const double e = std::exp(logits(i, c) - shift);
      out.d_logits(i, c) = e;
      denom += e;
    }
    const double log_z = shift + std::log(denom);
    out.loss += log_z - logits(i, label);
    out.d_logits.row(i) /= denom;
    out.d_logits(i, label) -= 1.0;
  }
  const double inv_batch = 1.0 / static_cast<double>(batch);
  out.loss *= inv_batch;
  out.d_logits *= inv_batch;
  return out;
}

}  // namespace snell
