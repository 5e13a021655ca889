#pragma once

// Training objectives of the VAE family and the MMD-regularized InfoMax
// autoencoder, plus the Monte Carlo split of the rate into mutual
// information and marginal divergence.
//
// Every total is a loss to minimize. The data entropy h(X) is constant in
// the parameters and never appears.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "vimae/distributions.hpp"
#include "vimae/divergence.hpp"
#include "vimae/errors.hpp"
#include "vimae/models.hpp"
#include "vimae/rng.hpp"
#include "vimae/tensor.hpp"

namespace vimae {

enum class Family { kVae, kBetaVae, kInfoVae, kVimae };

inline std::string to_string(Family f) {
  switch (f) {
    case Family::kVae: return "vae";
    case Family::kBetaVae: return "beta-vae";
    case Family::kInfoVae: return "infovae";
    case Family::kVimae: return "vimae";
  }
  return "?";
}

struct ObjectiveConfig {
  Family family = Family::kVimae;
  double beta = 1.0;
  double alpha = 0.0;
  double lambda = 10.0;
  std::optional<MmdConfig> mmd;
  Prior prior;

  static ObjectiveConfig vae(std::size_t latent_dim) {
    return {Family::kVae, 1.0, 0.0, 0.0, std::nullopt, {PriorKind::kStandardNormal, latent_dim}};
  }
  static ObjectiveConfig beta_vae(std::size_t latent_dim, double beta) {
    return {Family::kBetaVae, beta, 0.0, 0.0, std::nullopt, {PriorKind::kStandardNormal, latent_dim}};
  }
  static ObjectiveConfig infovae(std::size_t latent_dim, double alpha, double lambda) {
    return {Family::kInfoVae, 1.0, alpha, lambda, MmdConfig::for_latent_dim(latent_dim),
            {PriorKind::kStandardNormal, latent_dim}};
  }
  static ObjectiveConfig vimae(PriorKind prior, std::size_t latent_dim, double lambda) {
    return {Family::kVimae, 1.0, 0.0, lambda, MmdConfig::for_latent_dim(latent_dim), {prior, latent_dim}};
  }

  /// Rate weight actually applied: 1 for VAE, beta for beta-VAE.
  double rate_weight() const { return family == Family::kVae ? 1.0 : beta; }

  void validate() const {
    if (beta < 0.0 || lambda < 0.0) throw ContractError("objective: beta and lambda must be non-negative");
    if ((family == Family::kVimae || family == Family::kInfoVae) && !mmd)
      throw ContractError("objective: " + to_string(family) + " requires an MMD configuration");
  }
};

/// Loss terms of one evaluation. `total` carries the graph for backward().
struct LossReport {
  Tensor total;
  double distortion = 0.0;
  double rate_or_divergence = 0.0;
  /// Named terms; the weighted_* entries and distortion add up to total.
  std::map<std::string, double> breakdown;

  double total_value() const { return total.item(); }
  double recombined() const {
    double acc = breakdown.at("distortion");
    for (const auto& [k, v] : breakdown)
      if (k.starts_with("weighted_")) acc += v;
    return acc;
  }
};

/// Bernoulli cross-entropy from logits, summed over pixels and averaged over
/// the batch: softplus(l) - x * l per pixel.
inline Tensor bce_distortion(const Tensor& logits, const Tensor& x) {
  if (logits.shape() != x.shape())
    throw DimensionError("distortion: logits " + shape_str(logits.shape()) + " vs data " + shape_str(x.shape()));
  return scale(sum(softplus(logits) - x * logits), 1.0 / static_cast<double>(x.rows()));
}

namespace detail {

inline void require_gaussian(const Model& m, const char* op) {
  if (m.arch.encoder_kind != EncoderKind::kGaussian)
    throw ContractError(std::string(op) + " needs a Gaussian encoder");
}

inline void require_normal_prior(const ObjectiveConfig& cfg, const char* op) {
  if (cfg.prior.kind != PriorKind::kStandardNormal)
    throw UnsupportedError(std::string(op) + ": analytic rate is undefined for the " + to_string(cfg.prior.kind) +
                           " prior");
}

}  // namespace detail

/// mean_batch[BCE + beta * KL(q(z|x) || p(z))] with one reparameterized
/// sample per point; the negative (beta-weighted) ELBO.
inline LossReport loss_rate_regularized(const Model& m, const Tensor& x, const ObjectiveConfig& cfg, Rng& rng) {
  if (cfg.family != Family::kVae && cfg.family != Family::kBetaVae)
    throw ContractError("loss_rate_regularized: family must be vae or beta-vae, got " + to_string(cfg.family));
  detail::require_normal_prior(cfg, "loss_rate_regularized");
  detail::require_gaussian(m, "loss_rate_regularized");
  Encoding enc = encode(m, x, rng);
  Tensor dist = bce_distortion(decode(m, enc.z), x);
  Tensor rate = mean(kl_diag_gaussian(*enc.posterior, cfg.prior));
  const double w = cfg.rate_weight();
  Tensor weighted = scale(rate, w);
  LossReport r{dist + weighted, dist.item(), rate.item(), {}};
  r.breakdown = {{"distortion", dist.item()}, {"rate", rate.item()}, {"weighted_rate", weighted.item()}};
  return r;
}

/// distortion + alpha * rate + (lambda - alpha) * MMD(prior, encoded): the
/// InfoVAE objective with the marginal KL replaced by MMD. Prior samples are
/// drawn from `rng` after the reparameterization noise.
inline LossReport loss_infovae(const Model& m, const Tensor& x, const ObjectiveConfig& cfg, Rng& rng) {
  cfg.validate();
  detail::require_normal_prior(cfg, "loss_infovae");
  detail::require_gaussian(m, "loss_infovae");
  Encoding enc = encode(m, x, rng);
  Tensor dist = bce_distortion(decode(m, enc.z), x);
  Tensor rate = mean(kl_diag_gaussian(*enc.posterior, cfg.prior));
  Tensor prior_batch = sample_prior(cfg.prior, x.rows(), rng);
  Tensor div = mmd_unbiased(*cfg.mmd, prior_batch, enc.z);
  Tensor w_rate = scale(rate, cfg.alpha);
  Tensor w_div = scale(div, cfg.lambda - cfg.alpha);
  LossReport r{dist + w_rate + w_div, dist.item(), div.item(), {}};
  r.breakdown = {{"distortion", dist.item()}, {"rate", rate.item()},       {"mmd", div.item()},
                 {"weighted_rate", w_rate.item()}, {"weighted_mmd", w_div.item()}};
  return r;
}

/// distortion + lambda * MMD(prior_samples, encoded batch).
inline LossReport loss_vimae(const Model& m, const Tensor& x, const ObjectiveConfig& cfg,
                             const Tensor& prior_samples, Rng& rng) {
  cfg.validate();
  if (prior_samples.rank() != 2 || prior_samples.rows() != x.rows())
    throw ContractError("loss_vimae: prior batch has " + std::to_string(prior_samples.rows()) +
                        " rows, data batch has " + std::to_string(x.rows()));
  if (x.rows() < 2) throw ContractError("loss_vimae: batch must hold at least 2 points");
  Encoding enc = encode(m, x, rng);
  Tensor dist = bce_distortion(decode(m, enc.z), x);
  Tensor div = mmd_unbiased(*cfg.mmd, prior_samples, enc.z);
  Tensor w_div = scale(div, cfg.lambda);
  LossReport r{dist + w_div, dist.item(), div.item(), {}};
  r.breakdown = {{"distortion", dist.item()}, {"mmd", div.item()}, {"weighted_mmd", w_div.item()}};
  return r;
}

/// Objective selected by cfg.family. VIMAE draws a fresh prior batch of the
/// data batch size from `rng` before encoding.
inline LossReport compute_loss(const Model& m, const Tensor& x, const ObjectiveConfig& cfg, Rng& rng) {
  switch (cfg.family) {
    case Family::kVae:
    case Family::kBetaVae: return loss_rate_regularized(m, x, cfg, rng);
    case Family::kInfoVae: return loss_infovae(m, x, cfg, rng);
    case Family::kVimae: {
      Tensor prior_batch = sample_prior(cfg.prior, x.rows(), rng);
      return loss_vimae(m, x, cfg, prior_batch, rng);
    }
  }
  throw ContractError("compute_loss: unknown family");
}

/// E_x[KL(q(z|x) || p(z))] split as I_q(X, Z) + KL(q(z) || p(z)), with q(z)
/// the exact N-component mixture of the posteriors. The *_se fields are
/// Monte Carlo standard errors (zero for the analytic rate).
struct RateDecomposition {
  double rate = 0.0;
  double i_q = 0.0;
  double marginal_kl = 0.0;
  double rate_se = 0.0;
  double i_q_se = 0.0;
  double marginal_kl_se = 0.0;

  double combined_se() const { return std::sqrt(rate_se * rate_se + i_q_se * i_q_se + marginal_kl_se * marginal_kl_se); }
};

inline constexpr std::size_t kMaxDecompositionPoints = 64;

namespace detail {

struct PosteriorRows {
  std::vector<std::vector<double>> mu, logvar;
};

inline double log_mixture(const PosteriorRows& q, std::span<const double> z, std::vector<double>& scratch) {
  const std::size_t n = q.mu.size();
  scratch.resize(n);
  double top = -INFINITY;
  for (std::size_t j = 0; j < n; ++j) {
    scratch[j] = log_normal_diag(z, q.mu[j], q.logvar[j]);
    top = std::max(top, scratch[j]);
  }
  double acc = 0.0;
  for (double l : scratch) acc += std::exp(l - top);
  return top + std::log(acc) - std::log(static_cast<double>(n));
}

// Stratified mean over components: each component contributes `samples`
// draws; returns the estimate and its standard error.
template <class F>
std::pair<double, double> stratified(const PosteriorRows& q, std::size_t samples, Rng& rng, F&& value) {
  const std::size_t n = q.mu.size(), d = q.mu.front().size();
  std::vector<double> z(d);
  double est = 0.0, var = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
      for (std::size_t k = 0; k < d; ++k) z[k] = q.mu[i][k] + std::exp(0.5 * q.logvar[i][k]) * rng.normal();
      const double v = value(i, std::span<const double>(z));
      s1 += v;
      s2 += v * v;
    }
    const double ns = static_cast<double>(samples);
    const double m = s1 / ns;
    est += m;
    var += samples > 1 ? (s2 - ns * m * m) / (ns - 1.0) / ns : 0.0;
  }
  const double nn = static_cast<double>(n);
  return {est / nn, std::sqrt(std::max(var, 0.0)) / nn};
}

}  // namespace detail

inline RateDecomposition rate_decomposition(const Model& m, const Tensor& x, const Prior& prior,
                                            std::size_t mc_samples, Rng& rng) {
  detail::require_gaussian(m, "rate_decomposition");
  if (x.rows() > kMaxDecompositionPoints)
    throw ContractError("rate_decomposition: at most " + std::to_string(kMaxDecompositionPoints) +
                        " points (exact mixture cost is quadratic), got " + std::to_string(x.rows()));
  if (mc_samples < 2) throw ContractError("rate_decomposition: mc_samples must be at least 2");
  if (prior.dim != m.arch.latent_dim) throw DimensionError("rate_decomposition: prior dim does not match latent dim");

  Encoding enc = encode(m, x, rng);
  const GaussianPosterior& post = *enc.posterior;
  const std::size_t n = x.rows(), d = prior.dim;
  detail::PosteriorRows q;
  for (std::size_t i = 0; i < n; ++i) {
    auto mu = post.mu.data().subspan(i * d, d);
    auto lv = post.logvar.data().subspan(i * d, d);
    q.mu.emplace_back(mu.begin(), mu.end());
    q.logvar.emplace_back(lv.begin(), lv.end());
  }

  RateDecomposition out;
  if (prior.kind == PriorKind::kStandardNormal) {
    const Tensor kl = kl_diag_gaussian(post, prior);
    for (double v : kl.data()) out.rate += v;
    out.rate /= static_cast<double>(n);
  } else {
    std::tie(out.rate, out.rate_se) = detail::stratified(q, mc_samples, rng, [&](std::size_t i, std::span<const double> z) {
      double lp = 0.0;
      for (double zk : z) lp += detail::log_pdf_1d(prior.kind, zk);
      return detail::log_normal_diag(z, q.mu[i], q.logvar[i]) - lp;
    });
  }

  std::vector<double> scratch;
  std::tie(out.i_q, out.i_q_se) = detail::stratified(q, mc_samples, rng, [&](std::size_t i, std::span<const double> z) {
    return detail::log_normal_diag(z, q.mu[i], q.logvar[i]) - detail::log_mixture(q, z, scratch);
  });
  std::tie(out.marginal_kl, out.marginal_kl_se) =
      detail::stratified(q, mc_samples, rng, [&](std::size_t, std::span<const double> z) {
        double lp = 0.0;
        for (double zk : z) lp += detail::log_pdf_1d(prior.kind, zk);
        return detail::log_mixture(q, z, scratch) - lp;
      });
  return out;
}

}  // namespace vimae
