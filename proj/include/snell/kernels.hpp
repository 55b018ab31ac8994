#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <string_view>

#include "snell/numkit.hpp"

namespace snell {

enum class KernelVariant { Linear, PiecewiseLinear, Sigmoid, Rbf };

inline std::string_view to_string(KernelVariant v) {
  switch (v) {
    case KernelVariant::Linear: return "linear";
    case KernelVariant::PiecewiseLinear: return "piecewise_linear";
    case KernelVariant::Sigmoid: return "sigmoid";
    case KernelVariant::Rbf: return "rbf";
  }
  return "unknown";
}

inline std::optional<KernelVariant> parse_kernel_variant(std::string_view name) {
  if (name == "linear") return KernelVariant::Linear;
  if (name == "piecewise_linear") return KernelVariant::PiecewiseLinear;
  if (name == "sigmoid") return KernelVariant::Sigmoid;
  if (name == "rbf") return KernelVariant::Rbf;
  return std::nullopt;
}

inline constexpr int kDefaultSegments = 2;

/// Kernel family plus its learnable parameters.
///
/// Parameter layout:
///   Linear          -> []
///   PiecewiseLinear -> [alpha_0, ..., alpha_{P-1}]
///   Sigmoid, Rbf    -> [alpha, beta, gamma]
template <typename Scalar>
struct BasicKernelSpec {
  KernelVariant variant = KernelVariant::Linear;
  int segments = kDefaultSegments;  // only meaningful for PiecewiseLinear
  VectorX<Scalar> params;

  static BasicKernelSpec linear() { return {KernelVariant::Linear, kDefaultSegments, VectorX<Scalar>()}; }

  static BasicKernelSpec piecewise_linear(const VectorX<Scalar>& alphas) {
    return {KernelVariant::PiecewiseLinear, static_cast<int>(alphas.size()), alphas};
  }

  static BasicKernelSpec sigmoid(Scalar alpha, Scalar beta, Scalar gamma) {
    return {KernelVariant::Sigmoid, kDefaultSegments, VectorX<Scalar>{{alpha, beta, gamma}}};
  }

  static BasicKernelSpec rbf(Scalar alpha, Scalar beta, Scalar gamma) {
    return {KernelVariant::Rbf, kDefaultSegments, VectorX<Scalar>{{alpha, beta, gamma}}};
  }

  /// Output scales (alpha_p, alpha) at `scale`, gamma at zero and beta at
  /// one.
  static BasicKernelSpec scaled_init(KernelVariant variant, int segments, Scalar scale) {
    switch (variant) {
      case KernelVariant::Linear: return linear();
      case KernelVariant::PiecewiseLinear: {
        if (segments < 1) throw DomainError("piecewise_linear kernel needs at least one segment");
        return piecewise_linear(VectorX<Scalar>::Constant(segments, scale));
      }
      case KernelVariant::Sigmoid: return sigmoid(scale, 1, 0);
      case KernelVariant::Rbf: return rbf(scale, 1, 0);
    }
    throw DomainError("unknown kernel variant");
  }

  /// All output scales at zero, so the merged matrix starts out identically
  /// zero.
  static BasicKernelSpec zero_init(KernelVariant variant, int segments = kDefaultSegments) {
    return scaled_init(variant, segments, Scalar(0));
  }

  Eigen::Index param_count() const { return params.size(); }

  /// Throws unless the parameter layout is consistent and usable on
  /// vectors of length `dim`.
  void validate(Eigen::Index dim) const {
    switch (variant) {
      case KernelVariant::Linear:
        if (params.size() != 0) throw DomainError("linear kernel takes no parameters");
        break;
      case KernelVariant::PiecewiseLinear:
        if (segments < 1) throw DomainError("piecewise_linear kernel needs at least one segment");
        if (params.size() != segments)
          throw DomainError("piecewise_linear kernel needs one alpha per segment (P=" + std::to_string(segments) +
                            ", got " + std::to_string(params.size()) + ")");
        if (segments > dim)
          throw DomainError("piecewise_linear kernel: P=" + std::to_string(segments) +
                            " exceeds vector length " + std::to_string(dim));
        break;
      case KernelVariant::Sigmoid:
      case KernelVariant::Rbf:
        if (params.size() != 3)
          throw DomainError(std::string(to_string(variant)) + " kernel needs exactly (alpha, beta, gamma)");
        break;
    }
  }

  bool operator==(const BasicKernelSpec&) const = default;
};

using KernelSpec = BasicKernelSpec<double>;

/// Half-open index range [begin, end) of segment p when a length-r vector
/// is cut into P contiguous, near-equal pieces.
struct Segment {
  Eigen::Index begin;
  Eigen::Index end;
};

inline Segment segment_bounds(Eigen::Index r, int segments, int p) {
  return {r * p / segments, r * (p + 1) / segments};
}

namespace detail {

template <typename X, typename Y>
void check_same_length(const Eigen::MatrixBase<X>& x, const Eigen::MatrixBase<Y>& xp) {
  if (x.size() != xp.size())
    throw DimensionError("kernel inputs differ in length (" + std::to_string(x.size()) + " vs " +
                         std::to_string(xp.size()) + ")");
}

template <typename Scalar, typename X, typename Y>
Scalar segment_distance(const Eigen::MatrixBase<X>& x, const Eigen::MatrixBase<Y>& xp, Segment seg) {
  Scalar acc = 0;
  for (Eigen::Index k = seg.begin; k < seg.end; ++k) {
    const Scalar d = x(k) - xp(k);
    acc += d * d;
  }
  return std::sqrt(acc);
}

template <typename Scalar>
Scalar logistic(Scalar z) {
  return Scalar(1) / (Scalar(1) + std::exp(-z));
}

}  // namespace detail

/// kappa(x, x') for one pair of equal-length vectors.
template <typename Scalar, typename X, typename Y>
Scalar kernel_value(const BasicKernelSpec<Scalar>& spec, const Eigen::MatrixBase<X>& x,
                    const Eigen::MatrixBase<Y>& xp) {
  detail::check_same_length(x, xp);
  const Eigen::Index r = x.size();
  switch (spec.variant) {
    case KernelVariant::Linear: {
      Scalar acc = 0;
      for (Eigen::Index k = 0; k < r; ++k) acc += x(k) * xp(k);
      return acc;
    }
    case KernelVariant::PiecewiseLinear: {
      if (spec.segments > r) throw DomainError("piecewise_linear kernel: more segments than vector entries");
      Scalar acc = 0;
      for (int p = 0; p < spec.segments; ++p)
        acc += spec.params(p) * detail::segment_distance<Scalar>(x, xp, segment_bounds(r, spec.segments, p));
      return acc;
    }
    case KernelVariant::Sigmoid: {
      Scalar dot = 0;
      for (Eigen::Index k = 0; k < r; ++k) dot += x(k) * xp(k);
      return spec.params(0) * detail::logistic(spec.params(1) * dot) + spec.params(2);
    }
    case KernelVariant::Rbf: {
      Scalar sq = 0;
      for (Eigen::Index k = 0; k < r; ++k) {
        const Scalar d = x(k) - xp(k);
        sq += d * d;
      }
      return spec.params(0) * std::exp(-spec.params(1) * sq) + spec.params(2);
    }
  }
  throw DomainError("unknown kernel variant");
}

/// Adds weight * d kappa / d{x, x', params} into the given accumulators.
/// Zero segment distances contribute the zero subgradient.
template <typename Scalar, typename X, typename Y, typename DX, typename DY, typename DP>
void accumulate_kernel_grad(const BasicKernelSpec<Scalar>& spec, const Eigen::MatrixBase<X>& x,
                            const Eigen::MatrixBase<Y>& xp, Scalar weight, const Eigen::MatrixBase<DX>& d_x_out,
                            const Eigen::MatrixBase<DY>& d_xp_out, const Eigen::MatrixBase<DP>& d_params_out) {
  auto& d_x = const_cast<Eigen::MatrixBase<DX>&>(d_x_out);
  auto& d_xp = const_cast<Eigen::MatrixBase<DY>&>(d_xp_out);
  auto& d_params = const_cast<Eigen::MatrixBase<DP>&>(d_params_out);
  const Eigen::Index r = x.size();

  switch (spec.variant) {
    case KernelVariant::Linear:
      for (Eigen::Index k = 0; k < r; ++k) {
        d_x(k) += weight * xp(k);
        d_xp(k) += weight * x(k);
      }
      return;
    case KernelVariant::PiecewiseLinear:
      for (int p = 0; p < spec.segments; ++p) {
        const Segment seg = segment_bounds(r, spec.segments, p);
        const Scalar dist = detail::segment_distance<Scalar>(x, xp, seg);
        d_params(p) += weight * dist;
        if (dist == Scalar(0)) continue;
        const Scalar scale = weight * spec.params(p) / dist;
        for (Eigen::Index k = seg.begin; k < seg.end; ++k) {
          const Scalar g = scale * (x(k) - xp(k));
          d_x(k) += g;
          d_xp(k) -= g;
        }
      }
      return;
    case KernelVariant::Sigmoid: {
      const Scalar alpha = spec.params(0), beta = spec.params(1);
      Scalar dot = 0;
      for (Eigen::Index k = 0; k < r; ++k) dot += x(k) * xp(k);
      const Scalar sig = detail::logistic(beta * dot);
      const Scalar slope = sig * (Scalar(1) - sig);
      const Scalar g_dot = weight * alpha * beta * slope;
      for (Eigen::Index k = 0; k < r; ++k) {
        d_x(k) += g_dot * xp(k);
        d_xp(k) += g_dot * x(k);
      }
      d_params(0) += weight * sig;
      d_params(1) += weight * alpha * slope * dot;
      d_params(2) += weight;
      return;
    }
    case KernelVariant::Rbf: {
      const Scalar alpha = spec.params(0), beta = spec.params(1);
      Scalar sq = 0;
      for (Eigen::Index k = 0; k < r; ++k) {
        const Scalar d = x(k) - xp(k);
        sq += d * d;
      }
      const Scalar e = std::exp(-beta * sq);
      const Scalar g_diff = weight * alpha * e * (-beta) * Scalar(2);
      for (Eigen::Index k = 0; k < r; ++k) {
        const Scalar g = g_diff * (x(k) - xp(k));
        d_x(k) += g;
        d_xp(k) -= g;
      }
      d_params(0) += weight * e;
      d_params(1) += weight * (-alpha * sq * e);
      d_params(2) += weight;
      return;
    }
  }
}

template <typename Scalar>
struct BasicKernelGrad {
  VectorX<Scalar> d_x;
  VectorX<Scalar> d_xprime;
  VectorX<Scalar> d_params;
};

using KernelGrad = BasicKernelGrad<double>;

/// Partial derivatives of kernel_value with respect to both inputs and
/// every learnable parameter.
template <typename Scalar, typename X, typename Y>
BasicKernelGrad<Scalar> kernel_grad(const BasicKernelSpec<Scalar>& spec, const Eigen::MatrixBase<X>& x,
                                    const Eigen::MatrixBase<Y>& xp) {
  detail::check_same_length(x, xp);
  BasicKernelGrad<Scalar> g{VectorX<Scalar>::Zero(x.size()), VectorX<Scalar>::Zero(x.size()),
                            VectorX<Scalar>::Zero(spec.param_count())};
  accumulate_kernel_grad(spec, x, xp, Scalar(1), g.d_x, g.d_xprime, g.d_params);
  return g;
}

}  // namespace snell
