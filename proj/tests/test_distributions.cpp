#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "support/gradcheck.hpp"
#include "vimae/distributions.hpp"
#include "vimae/errors.hpp"

using namespace vimae;

namespace {

const Prior kNormal1{PriorKind::kStandardNormal, 1};
const Prior kLogistic1{PriorKind::kLogisticUnitVar, 1};

double column_mean(const Tensor& z, std::size_t d) {
  double acc = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i) acc += z.at(i, d);
  return acc / static_cast<double>(z.rows());
}

double column_variance(const Tensor& z, std::size_t d) {
  const double m = column_mean(z, d);
  double acc = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i) acc += (z.at(i, d) - m) * (z.at(i, d) - m);
  return acc / static_cast<double>(z.rows() - 1);
}

// Independent oracle: log N(z; mu, diag(exp(lv))) - log N(z; 0, I), one draw.
double log_ratio_normal(const std::vector<double>& z, const std::vector<double>& mu, const std::vector<double>& lv) {
  double acc = 0.0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    const double var = std::exp(lv[k]);
    acc += -0.5 * (std::log(var) + (z[k] - mu[k]) * (z[k] - mu[k]) / var) + 0.5 * z[k] * z[k];
  }
  return acc;
}

}  // namespace

TEST(SamplePrior, SameSeedIsBitwiseIdentical) {
  for (PriorKind k : {PriorKind::kStandardNormal, PriorKind::kLogisticUnitVar}) {
    Rng a(5), b(5);
    Tensor x = sample_prior({k, 3}, 100, a), y = sample_prior({k, 3}, 100, b);
    EXPECT_TRUE(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
  }
}

TEST(SamplePrior, ZeroCountIsContractError) {
  Rng rng(1);
  EXPECT_THROW(sample_prior(kNormal1, 0, rng), ContractError);
}

TEST(SamplePrior, LogisticHasUnitVariance) {
  Rng rng(17);
  Tensor z = sample_prior({PriorKind::kLogisticUnitVar, 2}, 100000, rng);
  for (std::size_t d = 0; d < 2; ++d) {
    EXPECT_GE(column_variance(z, d), 0.97);
    EXPECT_LE(column_variance(z, d), 1.03);
  }
}

TEST(SamplePrior, NormalHasZeroMean) {
  Rng rng(18);
  Tensor z = sample_prior({PriorKind::kStandardNormal, 3}, 100000, rng);
  for (std::size_t d = 0; d < 3; ++d) EXPECT_LE(std::abs(column_mean(z, d)), 0.01);
}

TEST(SamplePrior, LogisticPassesKolmogorovBound) {
  const std::size_t n = 10000;
  const double s = std::sqrt(3.0) / std::numbers::pi;
  int passes = 0;
  for (std::uint64_t rep = 0; rep < 3; ++rep) {
    Rng rng(100 + rep);
    Tensor z = sample_prior(kLogistic1, n, rng);
    std::vector<double> v(z.data().begin(), z.data().end());
    std::sort(v.begin(), v.end());
    double dmax = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double f = 1.0 / (1.0 + std::exp(-v[i] / s));
      dmax = std::max({dmax, std::abs(f - static_cast<double>(i) / n), std::abs(f - static_cast<double>(i + 1) / n)});
    }
    if (dmax < 1.95 / std::sqrt(static_cast<double>(n))) ++passes;
  }
  EXPECT_GE(passes, 2);
}

TEST(LogPdf, ClosedFormsAtZero) {
  Tensor z0 = Tensor::matrix({{0.0}});
  EXPECT_NEAR(log_pdf(kNormal1, z0).item(), -0.5 * std::log(2.0 * std::numbers::pi), 1e-15);
  EXPECT_NEAR(log_pdf(kNormal1, z0).item(), -0.9189385, 1e-7);
  const double s = std::sqrt(3.0) / std::numbers::pi;
  EXPECT_NEAR(log_pdf(kLogistic1, z0).item(), std::log(1.0 / (4.0 * s)), 1e-15);
  Tensor z00 = Tensor::matrix({{0.0, 0.0}});
  for (PriorKind k : {PriorKind::kStandardNormal, PriorKind::kLogisticUnitVar})
    EXPECT_DOUBLE_EQ(log_pdf({k, 2}, z00).item(), 2.0 * log_pdf({k, 1}, z0).item());
}

TEST(LogPdf, WidthMismatchIsDimensionError) {
  EXPECT_THROW(log_pdf({PriorKind::kStandardNormal, 3}, Tensor::zeros({2, 2})), DimensionError);
  EXPECT_THROW(prior_cdf({PriorKind::kLogisticUnitVar, 3}, Tensor::zeros({2, 2})), DimensionError);
}

TEST(LogPdf, IntegratesToOne) {
  for (const Prior& p : {kNormal1, kLogistic1}) {
    const std::size_t steps = 20000;
    const double h = 20.0 / steps;
    std::vector<double> grid(steps + 1);
    for (std::size_t i = 0; i <= steps; ++i) grid[i] = -10.0 + h * static_cast<double>(i);
    Tensor lp = log_pdf(p, Tensor({steps + 1, 1}, grid));
    double acc = 0.0;
    for (std::size_t i = 0; i <= steps; ++i) acc += (i == 0 || i == steps ? 0.5 : 1.0) * std::exp(lp[i]);
    EXPECT_NEAR(acc * h, 1.0, 1e-4) << to_string(p.kind);
  }
}

TEST(PriorCdf, KnownValues) {
  const double s = std::sqrt(3.0) / std::numbers::pi;
  EXPECT_EQ(prior_cdf(kNormal1, Tensor::matrix({{0.0}})).item(), 0.5);
  EXPECT_EQ(prior_cdf(kLogistic1, Tensor::matrix({{0.0}})).item(), 0.5);
  EXPECT_NEAR(prior_cdf(kNormal1, Tensor::matrix({{1.959964}})).item(), 0.975, 1e-6);
  EXPECT_NEAR(prior_cdf(kLogistic1, Tensor::matrix({{s * std::log(3.0)}})).item(), 0.75, 1e-15);
}

TEST(PriorCdf, NormalMatchesQuadratureOracle) {
  // Simpson integration of the density from 0 to z, plus one half.
  for (double z : {-3.0, -1.3, -0.2, 0.4, 1.0, 2.5}) {
    const int n = 2000;
    const double h = z / n;
    double acc = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double t = h * i;
      const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
      acc += w * std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi);
    }
    EXPECT_NEAR(prior_cdf(kNormal1, Tensor::matrix({{z}})).item(), 0.5 + acc * h / 3.0, 1e-7) << z;
  }
}

TEST(PriorCdf, ProbabilityIntegralTransformIsUniform) {
  const std::size_t n = 50000, bins = 64;
  const double bound = 5.0 * std::sqrt(1.0 / (static_cast<double>(n) * bins));
  for (PriorKind k : {PriorKind::kStandardNormal, PriorKind::kLogisticUnitVar}) {
    Rng rng(33);
    const Prior p{k, 2};
    Tensor f = prior_cdf(p, sample_prior(p, n, rng));
    for (std::size_t d = 0; d < 2; ++d) {
      std::vector<double> hist(bins, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        hist[std::min<std::size_t>(static_cast<std::size_t>(f.at(i, d) * bins), bins - 1)] += 1.0 / n;
      for (double h : hist) EXPECT_LT(std::abs(h - 1.0 / bins), bound) << to_string(k);
    }
  }
}

TEST(Reparameterize, Examples) {
  Tensor mu = Tensor::matrix({{0.5, -1.0}}, true);
  Tensor lv = Tensor::matrix({{0.3, -0.7}}, true);
  auto post = GaussianPosterior::from_raw(mu, lv);
  Tensor z = reparameterize(post, Tensor::zeros({1, 2}));
  EXPECT_EQ(z[0], 0.5);
  EXPECT_EQ(z[1], -1.0);
  auto unit = GaussianPosterior::from_raw(Tensor::zeros({1, 1}), Tensor::zeros({1, 1}));
  EXPECT_EQ(reparameterize(unit, Tensor::full({1, 1}, 1.0)).item(), 1.0);
  Tensor eps = Tensor::matrix({{0.3, 2.0}});
  sum(reparameterize(post, eps)).backward();
  EXPECT_EQ(mu.grad(), (std::vector<double>{1.0, 1.0}));
  EXPECT_THROW(reparameterize(post, Tensor::zeros({2, 2})), DimensionError);
}

TEST(Reparameterize, GradientCheck) {
  Tensor mu = check::random_tensor({3, 2}, -2, 2, 5);
  Tensor lv = check::random_tensor({3, 2}, -2, 2, 6);
  Tensor eps = check::random_tensor({3, 2}, -2, 2, 7, false);
  auto f = [&] {
    auto post = GaussianPosterior::from_raw(mu, lv);
    Tensor z = reparameterize(post, eps);
    return sum(z * z) + sum(kl_diag_gaussian(post, {PriorKind::kStandardNormal, 2}));
  };
  EXPECT_LT(check::check_gradients(f, {mu, lv}).max_rel_error, 1e-4);
}

TEST(Posterior, LogvarIsClamped) {
  auto post = GaussianPosterior::from_raw(Tensor::zeros({1, 3}), Tensor::matrix({{-50.0, 0.5, 50.0}}));
  EXPECT_EQ(post.logvar[0], kLogvarMin);
  EXPECT_EQ(post.logvar[1], 0.5);
  EXPECT_EQ(post.logvar[2], kLogvarMax);
}

TEST(KlDiagGaussian, ClosedForms) {
  const Prior n1{PriorKind::kStandardNormal, 1};
  auto zero = GaussianPosterior::from_raw(Tensor::zeros({1, 1}), Tensor::zeros({1, 1}));
  EXPECT_EQ(kl_diag_gaussian(zero, n1).item(), 0.0);
  auto one = GaussianPosterior::from_raw(Tensor::full({1, 1}, 1.0), Tensor::zeros({1, 1}));
  EXPECT_EQ(kl_diag_gaussian(one, n1).item(), 0.5);
  auto two = GaussianPosterior::from_raw(Tensor::matrix({{1.0, 0.0}}), Tensor::zeros({1, 2}));
  EXPECT_EQ(kl_diag_gaussian(two, {PriorKind::kStandardNormal, 2}).item(), 0.5);
}

TEST(KlDiagGaussian, JointEqualsSumOfPerDimensionExactly) {
  Rng rng(9);
  const std::size_t n = 20, d = 6;
  Tensor mu = check::random_tensor({n, d}, -2, 2, 10, false);
  Tensor lv = check::random_tensor({n, d}, -3, 3, 11, false);
  Tensor joint = kl_diag_gaussian(GaussianPosterior::from_raw(mu, lv), {PriorKind::kStandardNormal, d});
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      auto p1 = GaussianPosterior::from_raw(Tensor::matrix({{mu.at(i, k)}}), Tensor::matrix({{lv.at(i, k)}}));
      acc += kl_diag_gaussian(p1, {PriorKind::kStandardNormal, 1}).item();
    }
    EXPECT_EQ(joint[i], acc) << "row " << i;
  }
}

TEST(KlDiagGaussian, LogisticPriorIsUnsupported) {
  auto post = GaussianPosterior::from_raw(Tensor::zeros({1, 1}), Tensor::zeros({1, 1}));
  EXPECT_THROW(kl_diag_gaussian(post, kLogistic1), UnsupportedError);
}

TEST(KlDiagGaussian, MatchesMonteCarloWithinThreeStandardErrors) {
  const std::size_t samples = 10000, d = 2;
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> mu(d), lv(d);
    for (std::size_t k = 0; k < d; ++k) {
      mu[k] = 4.0 * rng.uniform() - 2.0;
      lv[k] = 3.0 * rng.uniform() - 1.5;
    }
    auto post = GaussianPosterior::from_raw(Tensor({1, d}, mu), Tensor({1, d}, lv));
    const double analytic = kl_diag_gaussian(post, {PriorKind::kStandardNormal, d}).item();
    double s1 = 0.0, s2 = 0.0;
    std::vector<double> z(d);
    for (std::size_t s = 0; s < samples; ++s) {
      for (std::size_t k = 0; k < d; ++k) z[k] = mu[k] + std::exp(0.5 * lv[k]) * rng.normal();
      const double r = log_ratio_normal(z, mu, lv);
      s1 += r;
      s2 += r * r;
    }
    const double mean = s1 / samples;
    const double se = std::sqrt((s2 / samples - mean * mean) / samples);
    EXPECT_LT(std::abs(analytic - mean), 3.0 * se + 1e-12) << "trial " << trial;
  }
}

TEST(McRate, AgreesWithAnalyticUnderNormalPrior) {
  Rng rng(4);
  auto post = GaussianPosterior::from_raw(Tensor::matrix({{0.7, -0.3}, {0.0, 1.2}}), Tensor::matrix({{-0.4, 0.2}, {0.1, -1.0}}));
  const Prior p{PriorKind::kStandardNormal, 2};
  const std::vector<double> mc = mc_rate(post, p, rng, 20000);
  Tensor kl = kl_diag_gaussian(post, p);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_NEAR(mc[i], kl[i], 0.03);
}

TEST(CdfEntropyDiagnostic, PriorSamplesGiveNearZero) {
  for (PriorKind k : {PriorKind::kStandardNormal, PriorKind::kLogisticUnitVar}) {
    Rng rng(51);
    const Prior p{k, 3};
    const double v = cdf_entropy_diagnostic(p, sample_prior(p, 50000, rng), 64);
    EXPECT_GE(v, -0.05 * 3);
    EXPECT_LE(v, 0.05 * 3);
  }
}

TEST(CdfEntropyDiagnostic, PointMassIsMaximal) {
  const Prior p{PriorKind::kStandardNormal, 2};
  EXPECT_NEAR(cdf_entropy_diagnostic(p, Tensor::full({500, 2}, 0.3), 64), 2.0 * std::log(64.0), 1e-12);
}

TEST(CdfEntropyDiagnostic, NeverBelowBinningBias) {
  Rng rng(52);
  const Prior p{PriorKind::kLogisticUnitVar, 2};
  std::vector<double> v(50000 * 2);
  for (double& x : v) x = 3.0 * rng.normal() + 0.5;
  EXPECT_GE(cdf_entropy_diagnostic(p, Tensor({50000, 2}, v), 64), -0.05 * 2);
  EXPECT_THROW(cdf_entropy_diagnostic(p, Tensor({50000, 2}, v), 1), ContractError);
}
