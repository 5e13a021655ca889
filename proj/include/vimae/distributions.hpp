#pragma once

// Latent priors, the diagonal Gaussian posterior and its analytic KL, and
// the CDF-entropy estimate of KL(q(z) || p(z)).

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "vimae/errors.hpp"
#include "vimae/rng.hpp"
#include "vimae/tensor.hpp"

namespace vimae {

enum class PriorKind { kStandardNormal, kLogisticUnitVar };

inline std::string to_string(PriorKind k) {
  return k == PriorKind::kStandardNormal ? "normal" : "logistic";
}

/// Factorized reference distribution p(z). Every dimension has unit variance.
struct Prior {
  PriorKind kind = PriorKind::kStandardNormal;
  std::size_t dim = 1;

  /// Logistic scale s with s^2 * pi^2 / 3 = 1.
  static double logistic_scale() { return std::numbers::sqrt3 / std::numbers::pi; }
};

namespace detail {

inline void check_width(const char* op, const Prior& prior, const Tensor& z) {
  if (z.rank() != 2 || z.cols() != prior.dim)
    throw DimensionError(std::string(op) + ": expected width " + std::to_string(prior.dim) + ", got shape " +
                         shape_str(z.shape()));
}

inline double log_pdf_1d(PriorKind kind, double z) {
  if (kind == PriorKind::kStandardNormal) return -0.5 * z * z - 0.5 * std::log(2.0 * std::numbers::pi);
  const double s = Prior::logistic_scale();
  const double u = std::abs(z / s);
  return -u - 2.0 * std::log1p(std::exp(-u)) - std::log(s);
}

inline double cdf_1d(PriorKind kind, double z) {
  if (kind == PriorKind::kStandardNormal) return 0.5 * std::erfc(-z / std::numbers::sqrt2);
  return stable_sigmoid(z / Prior::logistic_scale());
}

inline double log_normal_diag(std::span<const double> z, std::span<const double> mu,
                              std::span<const double> logvar) {
  double acc = 0.0;
  for (std::size_t d = 0; d < z.size(); ++d) {
    const double diff = z[d] - mu[d];
    acc += -0.5 * (std::log(2.0 * std::numbers::pi) + logvar[d] + diff * diff * std::exp(-logvar[d]));
  }
  return acc;
}

}  // namespace detail

/// n i.i.d. draws. Logistic uses the inverse CDF s * ln(u / (1 - u)); normal
/// uses Box-Muller.
inline Tensor sample_prior(const Prior& prior, std::size_t n, Rng& rng) {
  if (n == 0) throw ContractError("sample_prior: n must be at least 1");
  std::vector<double> out(n * prior.dim);
  const double s = Prior::logistic_scale();
  for (double& v : out) {
    if (prior.kind == PriorKind::kStandardNormal) {
      v = rng.normal();
    } else {
      const double u = rng.uniform();
      v = s * std::log(u / (1.0 - u));
    }
  }
  return Tensor({n, prior.dim}, std::move(out));
}

/// Per-row log density, summed over dimensions.
inline Tensor log_pdf(const Prior& prior, const Tensor& z) {
  detail::check_width("log_pdf", prior, z);
  std::vector<double> out(z.rows(), 0.0);
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (std::size_t d = 0; d < prior.dim; ++d) out[i] += detail::log_pdf_1d(prior.kind, z.at(i, d));
  return Tensor::vector(std::move(out));
}

/// Per-dimension CDF f(z).
inline Tensor prior_cdf(const Prior& prior, const Tensor& z) {
  detail::check_width("prior_cdf", prior, z);
  std::vector<double> out(z.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::cdf_1d(prior.kind, z[i]);
  return Tensor(z.shape(), std::move(out));
}

inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 10.0;

/// q(z|x) = N(mu, diag(exp(logvar))), one row per data point.
struct GaussianPosterior {
  Tensor mu;
  Tensor logvar;

  /// Clamps the raw log-variance into [kLogvarMin, kLogvarMax].
  static GaussianPosterior from_raw(Tensor mu, const Tensor& raw_logvar) {
    if (mu.shape() != raw_logvar.shape())
      throw DimensionError("posterior: mu " + shape_str(mu.shape()) + " vs logvar " +
                           shape_str(raw_logvar.shape()));
    return {std::move(mu), clamp(raw_logvar, kLogvarMin, kLogvarMax)};
  }

  std::size_t batch() const { return mu.rows(); }
  std::size_t dim() const { return mu.cols(); }
};

/// z = mu + exp(logvar / 2) * eps.
inline Tensor reparameterize(const GaussianPosterior& post, const Tensor& eps) {
  if (eps.shape() != post.mu.shape())
    throw DimensionError("reparameterize: eps " + shape_str(eps.shape()) + " vs mu " +
                         shape_str(post.mu.shape()));
  return post.mu + exp(scale(post.logvar, 0.5)) * eps;
}

inline Tensor standard_normal_noise(std::size_t n, std::size_t dim, Rng& rng) {
  std::vector<double> out(n * dim);
  for (double& v : out) v = rng.normal();
  return Tensor({n, dim}, std::move(out));
}

/// Analytic KL(q(z|x) || N(0, I)) per row: 0.5 * sum_d (mu^2 + s^2 - 1 - ln s^2).
/// Sums over dimensions in ascending order, so it is exactly the sum of the
/// per-dimension KLs.
inline Tensor kl_diag_gaussian(const GaussianPosterior& post, const Prior& prior) {
  if (prior.kind != PriorKind::kStandardNormal)
    throw UnsupportedError("kl_diag_gaussian: analytic KL is only defined against the standard normal prior; "
                           "use mc_rate for the logistic prior");
  if (post.dim() != prior.dim)
    throw DimensionError("kl_diag_gaussian: posterior width " + std::to_string(post.dim()) + " vs prior dim " +
                         std::to_string(prior.dim));
  Tensor terms = (post.mu * post.mu + exp(post.logvar)) - add_scalar(post.logvar, 1.0);
  return scale(sum(terms, 1), 0.5);
}

inline constexpr std::size_t kDefaultRateSamples = 128;

/// Monte Carlo KL(q(z|x) || p(z)) per row, for priors without a closed form.
/// Values only; not differentiable.
inline std::vector<double> mc_rate(const GaussianPosterior& post, const Prior& prior, Rng& rng,
                                   std::size_t samples = kDefaultRateSamples) {
  if (samples == 0) throw ContractError("mc_rate: samples must be positive");
  const std::size_t n = post.batch(), d = post.dim();
  std::vector<double> out(n, 0.0);
  std::vector<double> z(d);
  auto mu = post.mu.data();
  auto lv = post.logvar.data();
  for (std::size_t i = 0; i < n; ++i) {
    auto mrow = mu.subspan(i * d, d);
    auto lrow = lv.subspan(i * d, d);
    double acc = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
      double lp = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        z[k] = mrow[k] + std::exp(0.5 * lrow[k]) * rng.normal();
        lp += detail::log_pdf_1d(prior.kind, z[k]);
      }
      acc += detail::log_normal_diag(z, mrow, lrow) - lp;
    }
    out[i] = acc / static_cast<double>(samples);
  }
  return out;
}

inline constexpr std::size_t kDefaultDiagnosticBins = 64;

/// Nonparametric estimate of KL(q(z) || p(z)) = -h(f(Z)): applies the prior
/// CDF per dimension, histograms f(Z) on [0, 1], and returns
/// sum_d sum_b p_b ln(p_b * bins). Never below zero; dim * ln(bins) for a
/// point mass.
inline double cdf_entropy_diagnostic(const Prior& prior, const Tensor& z_samples,
                                     std::size_t bins = kDefaultDiagnosticBins) {
  if (bins < 2) throw ContractError("cdf_entropy_diagnostic: bins must be at least 2");
  detail::check_width("cdf_entropy_diagnostic", prior, z_samples);
  const std::size_t n = z_samples.rows();
  const Tensor f = prior_cdf(prior, z_samples);
  double total = 0.0;
  std::vector<std::size_t> counts(bins);
  for (std::size_t d = 0; d < prior.dim; ++d) {
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto b = static_cast<std::size_t>(f.at(i, d) * static_cast<double>(bins));
      ++counts[std::min(b, bins - 1)];
    }
    for (std::size_t c : counts) {
      if (c == 0) continue;
      const double p = static_cast<double>(c) / static_cast<double>(n);
      total += p * std::log(p * static_cast<double>(bins));
    }
  }
  return total;
}

}  // namespace vimae
