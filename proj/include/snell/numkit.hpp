#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "snell/error.hpp"

namespace snell {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using RowVector = RowVectorX<double>;

/// Default relative tolerance for numeric_rank, measured against sigma_max.
inline constexpr double kDefaultRankTol = 1e-10;

/// SplitMix64 stream. The state advances by the golden-gamma constant
/// 0x9E3779B97F4A7C15 per draw and each output is the standard SplitMix64
/// finalizer of the new state, so any language can reproduce a stream from
/// the seed alone.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) built from the top 53 bits.
  double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller; consumes two uniforms per call and
  /// returns the cosine branch only.
  double next_gaussian() {
    const double u1 = 1.0 - next_uniform();  // (0, 1]
    const double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Uniform integer in [0, bound) by rejection on the top bits.
  std::uint64_t next_below(std::uint64_t bound) {
    if (bound == 0) throw DomainError("next_below: bound must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % bound;
  }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

/// Derives an independent child seed, e.g. one stream per experiment seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  RngStream mix(seed ^ (salt * 0xD1B54A32D192ED03ULL));
  mix.next_u64();
  return mix.next_u64();
}

/// i.i.d. Gaussian(0, std^2) entries drawn in row-major order.
template <typename Scalar = double>
MatrixX<Scalar> randn(RngStream& rng, Eigen::Index rows, Eigen::Index cols, Scalar std = Scalar(1)) {
  if (std < Scalar(0)) throw DomainError("randn: std must be non-negative");
  if (rows < 0 || cols < 0) throw DimensionError("randn: negative shape");
  MatrixX<Scalar> out(rows, cols);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] = std * static_cast<Scalar>(rng.next_gaussian());
  return out;
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.derived().array().isFinite().all();
}

/// lhs * rhs with a dimension check. Eigen's single-threaded product has a
/// fixed blocking per shape, so repeated calls are bitwise reproducible.
template <typename Lhs, typename Rhs>
MatrixX<typename Lhs::Scalar> matmul(const Eigen::MatrixBase<Lhs>& lhs, const Eigen::MatrixBase<Rhs>& rhs) {
  if (lhs.cols() != rhs.rows()) {
    throw DimensionError("matmul: inner dimensions differ (" + std::to_string(lhs.rows()) + "x" +
                         std::to_string(lhs.cols()) + " times " + std::to_string(rhs.rows()) + "x" +
                         std::to_string(rhs.cols()) + ")");
  }
  MatrixX<typename Lhs::Scalar> out = lhs * rhs;
  return out;
}

/// Flat row-major index of the k-th smallest absolute value (1-based k),
/// found by introselect over (|v|, index) pairs so duplicates resolve in
/// index order.
template <typename Derived>
Eigen::Index kth_smallest_abs_index(const Eigen::DenseBase<Derived>& values, Eigen::Index k) {
  using Scalar = typename Derived::Scalar;
  const Eigen::Index count = values.size();
  if (k < 1 || k > count) {
    throw DomainError("kth_smallest_abs: k=" + std::to_string(k) + " outside [1, " + std::to_string(count) + "]");
  }
  const auto& v = values.derived();
  std::vector<std::pair<Scalar, Eigen::Index>> mags;
  mags.reserve(static_cast<std::size_t>(count));
  for (Eigen::Index i = 0; i < v.rows(); ++i)
    for (Eigen::Index j = 0; j < v.cols(); ++j) mags.emplace_back(std::abs(v(i, j)), i * v.cols() + j);
  auto nth = mags.begin() + (k - 1);
  std::nth_element(mags.begin(), nth, mags.end());
  return nth->second;
}

/// k-th smallest absolute value (1-based) over all entries.
template <typename Derived>
typename Derived::Scalar kth_smallest_abs(const Eigen::DenseBase<Derived>& values, Eigen::Index k) {
  const Eigen::Index flat = kth_smallest_abs_index(values, k);
  const auto& v = values.derived();
  return std::abs(v(flat / v.cols(), flat % v.cols()));
}

/// Singular values in descending order, by one-sided (Hestenes) Jacobi
/// rotations on the columns of a working copy. Sweeps stop once every
/// column pair is orthogonal to within machine precision.
template <typename Derived>
VectorX<typename Derived::Scalar> singular_values(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  if (!all_finite(m)) throw NumericalError("singular_values: matrix has non-finite entries");

  // Work on the orientation with fewer columns.
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> work;
  if (m.rows() >= m.cols())
    work = m;
  else
    work = m.transpose();
  const Eigen::Index n = work.cols();
  const Scalar eps = std::numeric_limits<Scalar>::epsilon();
  constexpr int kMaxSweeps = 60;

  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (Eigen::Index p = 0; p + 1 < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const Scalar alpha = work.col(p).squaredNorm();
        const Scalar beta = work.col(q).squaredNorm();
        const Scalar gamma = work.col(p).dot(work.col(q));
        if (gamma == Scalar(0) || std::abs(gamma) <= eps * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const Scalar zeta = (beta - alpha) / (Scalar(2) * gamma);
        const Scalar t = std::copysign(Scalar(1), zeta) / (std::abs(zeta) + std::sqrt(Scalar(1) + zeta * zeta));
        const Scalar c = Scalar(1) / std::sqrt(Scalar(1) + t * t);
        const Scalar s = c * t;
        for (Eigen::Index i = 0; i < work.rows(); ++i) {
          const Scalar wp = work(i, p);
          const Scalar wq = work(i, q);
          work(i, p) = c * wp - s * wq;
          work(i, q) = s * wp + c * wq;
        }
      }
    }
    if (!rotated) break;
  }

  VectorX<Scalar> sv(n);
  for (Eigen::Index j = 0; j < n; ++j) sv(j) = work.col(j).norm();
  std::sort(sv.data(), sv.data() + n, std::greater<Scalar>());
  return sv;
}

/// Number of singular values above rel_tol * sigma_max; 0 for the zero matrix.
template <typename Derived>
Eigen::Index numeric_rank(const Eigen::MatrixBase<Derived>& m,
                          typename Derived::Scalar rel_tol = typename Derived::Scalar(kDefaultRankTol)) {
  if (!(rel_tol > 0)) throw DomainError("numeric_rank: rel_tol must be positive");
  const auto sv = singular_values(m);
  if (sv.size() == 0 || sv(0) == 0) return 0;
  const auto cutoff = rel_tol * sv(0);
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv(i) > cutoff) ++rank;
  return rank;
}

}  // namespace snell
