#pragma once

// Kernels, Gram matrices and the unbiased MMD estimator used as the latent
// regularizer.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vimae/errors.hpp"
#include "vimae/tensor.hpp"

namespace vimae {

enum class KernelKind { kInverseMultiquadratic, kRbf };

/// k(x, y) = C / (C + |x - y|^2) for the inverse multiquadratic kernel,
/// exp(-|x - y|^2 / (2 h^2)) for RBF. `param` is C or the bandwidth h.
struct Kernel {
  KernelKind kind = KernelKind::kInverseMultiquadratic;
  double param = 1.0;

  static Kernel inverse_multiquadratic(double c) { return {KernelKind::kInverseMultiquadratic, c}; }
  static Kernel rbf(double bandwidth) { return {KernelKind::kRbf, bandwidth}; }
  /// Inverse multiquadratic with C = 2 * dim(Z).
  static Kernel for_latent_dim(std::size_t dim) {
    return inverse_multiquadratic(2.0 * static_cast<double>(dim));
  }

  double from_sqdist(double d2) const {
    if (kind == KernelKind::kInverseMultiquadratic) return param / (param + d2);
    return std::exp(-d2 / (2.0 * param * param));
  }
  /// d k / d(|x - y|^2)
  double dsqdist(double d2) const {
    if (kind == KernelKind::kInverseMultiquadratic) {
      const double den = param + d2;
      return -param / (den * den);
    }
    return -std::exp(-d2 / (2.0 * param * param)) / (2.0 * param * param);
  }
};

/// Coefficient on the cross term: kStandard is the unbiased -2/n^2, kSingle
/// the -1/n^2 variant, which does not vanish on identical samples.
enum class CrossCoefficient { kStandard, kSingle };

struct MmdConfig {
  Kernel kernel;
  CrossCoefficient cross = CrossCoefficient::kStandard;

  static MmdConfig for_latent_dim(std::size_t dim, CrossCoefficient cross = CrossCoefficient::kStandard) {
    return {Kernel::for_latent_dim(dim), cross};
  }
};

inline double kernel_eval(const Kernel& k, std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    throw DimensionError("kernel_eval: dimension " + std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  double d2 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double diff = x[i] - y[i];
    d2 += diff * diff;
  }
  return k.from_sqdist(d2);
}

/// G[i][j] = k(A_i, B_j), differentiable in both arguments.
inline Tensor gram(const Kernel& k, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols())
    throw DimensionError("gram: width mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t n = a.rows(), m = b.rows(), d = a.cols();
  std::vector<double> out(n * m);
  std::vector<double> sqd(n * m);
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double d2 = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = av[i * d + c] - bv[j * d + c];
        d2 += diff * diff;
      }
      sqd[i * m + j] = d2;
      out[i * m + j] = k.from_sqdist(d2);
    }
  return Tensor::from_op(
      {n, m}, std::move(out), {a, b},
      [k, a, b, sqd = std::move(sqd), n, m, d](std::span<const double> g, std::span<std::span<double>> pg) {
        auto av = a.data();
        auto bv = b.data();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) {
            const double w = 2.0 * g[i * m + j] * k.dsqdist(sqd[i * m + j]);
            if (w == 0.0) continue;
            for (std::size_t c = 0; c < d; ++c) {
              const double diff = av[i * d + c] - bv[j * d + c];
              if (!pg[0].empty()) pg[0][i * d + c] += w * diff;
              if (!pg[1].empty()) pg[1][j * d + c] -= w * diff;
            }
          }
      });
}

namespace detail {

// Sum of the off-diagonal entries of a square matrix.
inline Tensor offdiag_sum(const Tensor& g) {
  const std::size_t n = g.rows();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) acc += g.at(i, j);
  return Tensor::from_op({}, {acc}, {g}, [n](std::span<const double> up, std::span<std::span<double>> pg) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) pg[0][i * n + j] += up[0];
  });
}

// Total of all entries, taken as the mean of the row-major and column-major
// sums so that total(G) and total(G^T) are bitwise equal.
inline Tensor order_free_total(const Tensor& g) {
  const std::size_t n = g.rows(), m = g.cols();
  double by_rows = 0.0, by_cols = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) by_rows += g.at(i, j);
  for (std::size_t j = 0; j < m; ++j)
    for (std::size_t i = 0; i < n; ++i) by_cols += g.at(i, j);
  const std::size_t count = n * m;
  return Tensor::from_op({}, {0.5 * (by_rows + by_cols)}, {g},
                         [count](std::span<const double> up, std::span<std::span<double>> pg) {
                           for (std::size_t i = 0; i < count; ++i) pg[0][i] += up[0];
                         });
}

}  // namespace detail

/// Unbiased MMD^2 between prior samples `z` and encoded samples `z0`:
///   1/(n(n-1)) sum_{l!=j} k(z_l, z_j) + 1/(n(n-1)) sum_{l!=j} k(z0_l, z0_j)
///   - c/n^2 sum_{l,j} k(z_l, z0_j),   c = 2 (kStandard) or 1 (kSingle).
inline Tensor mmd_unbiased(const MmdConfig& cfg, const Tensor& z, const Tensor& z0) {
  if (z.rank() != 2 || z0.rank() != 2 || z.shape() != z0.shape())
    throw ContractError("mmd_unbiased: sample sets must have equal shapes, got " + shape_str(z.shape()) +
                        " and " + shape_str(z0.shape()));
  const std::size_t n = z.rows();
  if (n < 2) throw ContractError("mmd_unbiased: need at least 2 samples per set");
  const double nd = static_cast<double>(n);
  const double within = 1.0 / (nd * (nd - 1.0));
  const double cross = (cfg.cross == CrossCoefficient::kStandard ? 2.0 : 1.0) / (nd * nd);
  Tensor zz = detail::offdiag_sum(gram(cfg.kernel, z, z));
  Tensor qq = detail::offdiag_sum(gram(cfg.kernel, z0, z0));
  Tensor zq = detail::order_free_total(gram(cfg.kernel, z, z0));
  return scale(zz, within) + scale(qq, within) - scale(zq, cross);
}

}  // namespace vimae
