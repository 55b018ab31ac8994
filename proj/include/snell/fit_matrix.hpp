#pragma once

#include <cstdint>
#include <vector>

#include "snell/adapter.hpp"
#include "snell/kernels.hpp"
#include "snell/optim.hpp"

namespace snell {

struct FitOptions {
  std::int64_t steps = 20000;
  double lr = 1e-3;
  /// Record the objective every this many steps (and always at the end).
  std::int64_t record_every = 100;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct MsePoint {
  std::int64_t step;
  double mse;
};

struct FitResult {
  Matrix a;
  Matrix b;
  KernelSpec kernel;
  /// Objective after `step` updates, at strictly increasing steps.
  std::vector<MsePoint> trace;
  double final_mse = 0.0;
  double best_mse = 0.0;
};

/// mean((target - merge(B, A, kernel))^2)
double reconstruction_mse(const Matrix& target, const Matrix& b, const Matrix& a, const KernelSpec& kernel);

/// Fits `target` (m x n) with a rank-r kernelized merge by Adam without
/// weight decay on the mean squared reconstruction error. Factors start
/// from N(0, 1/r) with zeroed kernel scales (B = 0 for the linear kernel).
FitResult fit_matrix(const Matrix& target, Eigen::Index rank, const KernelSpec& kernel_shape, const FitOptions& options,
                     std::uint64_t seed);

/// Mean squared residual of the best rank-r approximation, i.e. the sum of
/// the trailing squared singular values divided by m * n.
double truncation_mse(const Matrix& target, Eigen::Index rank);

}  // namespace snell
