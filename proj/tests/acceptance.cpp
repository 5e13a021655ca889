// End-to-end acceptance run: one PASS/FAIL line per criterion, exit status 1
// if any criterion fails. Criteria can be selected by number on the command
// line (e.g. `acceptance 1 2 8`).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cli.hpp"
#include "support/gradcheck.hpp"
#include "support/tempdir.hpp"
#include "vimae/distributions.hpp"
#include "vimae/divergence.hpp"
#include "vimae/evaluation.hpp"
#include "vimae/objectives.hpp"
#include "vimae/training.hpp"

using namespace vimae;

namespace {

struct Verdict {
  bool pass = true;
  std::ostringstream detail;
  std::string failures;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      failures += " [failed: " + what + "]";
    }
  }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

Tensor normal_batch(std::size_t n, std::size_t d, double shift, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(n * d);
  for (double& x : v) x = rng.normal() + shift;
  return Tensor({n, d}, std::move(v));
}

/// Runs independent jobs on up to hardware_concurrency threads; results are
/// indexed by job, so the outcome does not depend on scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& job) {
  const std::size_t workers = std::max<std::size_t>(1, std::min<std::size_t>(std::thread::hardware_concurrency(), n));
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        job(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

struct Split {
  Dataset train;
  Dataset test;
};

Split synthetic_split(std::size_t classes, std::size_t per_class, std::size_t test_per_class, std::uint64_t seed) {
  const Dataset all = synth_generate(classes, per_class + test_per_class, 16, seed);
  std::vector<std::size_t> tr(classes * per_class), te(classes * test_per_class);
  std::iota(tr.begin(), tr.end(), std::size_t{0});
  std::iota(te.begin(), te.end(), classes * per_class);
  return {all.subset(tr), all.subset(te)};
}

struct Candidate {
  std::string name;
  ObjectiveConfig objective;
  EncoderKind encoder;
};

std::vector<Candidate> reference_models(std::size_t latent) {
  return {{"vae", ObjectiveConfig::vae(latent), EncoderKind::kGaussian},
          {"beta-vae", ObjectiveConfig::beta_vae(latent, 10.0), EncoderKind::kGaussian},
          {"vimae-n", ObjectiveConfig::vimae(PriorKind::kStandardNormal, latent, 10.0), EncoderKind::kDeterministic},
          {"vimae-l", ObjectiveConfig::vimae(PriorKind::kLogisticUnitVar, latent, 10.0), EncoderKind::kDeterministic}};
}

TrainConfig reference_config(const Candidate& c, std::size_t input_dim, std::size_t epochs, std::uint64_t seed) {
  TrainConfig t;
  t.objective = c.objective;
  t.arch.input_dim = input_dim;
  t.arch.latent_dim = c.objective.prior.dim;
  t.arch.encoder_kind = c.encoder;
  t.epochs = epochs;
  t.seed = seed;
  return t;
}

// ---------------------------------------------------------------------------

Verdict gradient_oracle() {
  Verdict v;
  Rng pick(2024);
  double worst = 0.0;
  std::size_t checked = 0;
  const std::vector<Family> families = {Family::kVae, Family::kBetaVae, Family::kInfoVae, Family::kVimae};
  for (int inst = 0; inst < 50; ++inst) {
    Architecture a;
    a.input_dim = 4 + pick.below(9);
    a.hidden_sizes.assign(1 + pick.below(3), 0);
    for (auto& h : a.hidden_sizes) h = 3 + pick.below(6);
    a.latent_dim = 1 + pick.below(3);
    a.activation = pick.below(2) ? Activation::kTanh : Activation::kRelu;
    a.encoder_kind = pick.below(2) ? EncoderKind::kGaussian : EncoderKind::kDeterministic;
    ObjectiveConfig obj;
    if (a.encoder_kind == EncoderKind::kDeterministic) {
      obj = ObjectiveConfig::vimae(pick.below(2) ? PriorKind::kLogisticUnitVar : PriorKind::kStandardNormal,
                                   a.latent_dim, 10.0);
    } else {
      switch (families[pick.below(3)]) {
        case Family::kVae: obj = ObjectiveConfig::vae(a.latent_dim); break;
        case Family::kBetaVae: obj = ObjectiveConfig::beta_vae(a.latent_dim, 10.0); break;
        default: obj = ObjectiveConfig::infovae(a.latent_dim, 0.5, 10.0); break;
      }
    }
    Model m = init_model(a, 300 + static_cast<std::uint64_t>(inst));
    // Random nonzero biases so every bias path carries gradient.
    for (auto& p : m.parameters())
      if (p.name.ends_with(".bias"))
        for (double& b : p.tensor.mutable_data()) b = 0.2 * pick.normal();
    const Tensor x = check::random_tensor({3, a.input_dim}, 0, 1, 700 + static_cast<std::uint64_t>(inst), false);
    auto f = [&] {
      Rng rng(static_cast<std::uint64_t>(inst));
      return compute_loss(m, x, obj, rng).total;
    };
    std::vector<Tensor> leaves;
    for (auto& p : m.parameters()) leaves.push_back(p.tensor);
    const check::GradCheck g = check::check_gradients(f, leaves, 1e-5);
    worst = std::max(worst, g.max_rel_error);
    checked += g.checked;
  }
  v.detail << "max relative error " << fmt(worst) << " over 50 random models, " << checked << " parameters";
  v.require(worst < 1e-4, "max relative error < 1e-4");
  return v;
}

double imq(double c, const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  double d2 = 0.0;
  for (std::size_t k = 0; k < a.cols(); ++k) d2 += (a.at(i, k) - b.at(j, k)) * (a.at(i, k) - b.at(j, k));
  return c / (c + d2);
}

double brute_force_mmd(double c, double cross, const Tensor& z, const Tensor& z0) {
  const double n = static_cast<double>(z.rows());
  double zz = 0.0, qq = 0.0, zq = 0.0;
  for (std::size_t l = 0; l < z.rows(); ++l)
    for (std::size_t j = 0; j < z.rows(); ++j) {
      if (l != j) {
        zz += imq(c, z, l, z, j);
        qq += imq(c, z0, l, z0, j);
      }
      zq += imq(c, z, l, z0, j);
    }
  return zz / (n * (n - 1)) + qq / (n * (n - 1)) - cross * zq / (n * n);
}

Verdict mmd_oracle() {
  Verdict v;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor z = check::random_tensor({16, 8}, -2, 2, 5000 + seed, false);
    const Tensor z0 = check::random_tensor({16, 8}, -2, 2, 6000 + seed, false);
    for (auto [cross, c] : {std::pair{CrossCoefficient::kStandard, 2.0}, std::pair{CrossCoefficient::kSingle, 1.0}}) {
      const double got = mmd_unbiased({Kernel::for_latent_dim(8), cross}, z, z0).item();
      worst = std::max(worst, std::abs(got - brute_force_mmd(16.0, c, z, z0)));
    }
  }
  v.require(worst <= 1e-12, "brute-force agreement to 1e-12");

  const MmdConfig cfg = MmdConfig::for_latent_dim(8);
  std::vector<double> null;
  for (std::uint64_t seed = 0; seed < 50; ++seed)
    null.push_back(mmd_unbiased(cfg, normal_batch(256, 8, 0.0, 10 * seed), normal_batch(256, 8, 0.0, 10 * seed + 1)).item());
  const double se = sd_of(null) / std::sqrt(50.0);
  v.require(std::abs(mean_of(null)) <= 3.0 * se, "null mean within 3 SE");

  const Tensor aa = Tensor::matrix({{0.3, -1.2, 2.0}, {0.3, -1.2, 2.0}});
  const double s = mmd_unbiased({Kernel::for_latent_dim(3), CrossCoefficient::kStandard}, aa, aa).item();
  const double p = mmd_unbiased({Kernel::for_latent_dim(3), CrossCoefficient::kSingle}, aa, aa).item();
  v.require(s == 0.0 && p == 1.0, "identical sets give exactly 0 and 1");
  v.detail << "brute-force max diff " << fmt(worst) << "; null mean " << fmt(mean_of(null)) << " (3 SE " << fmt(3 * se)
           << "); {a,a} standard " << s << ", single " << p;
  return v;
}

Verdict distribution_checks() {
  Verdict v;
  Rng rng(31);
  const Prior logistic{PriorKind::kLogisticUnitVar, 1};
  const Tensor z = sample_prior(logistic, 100000, rng);
  double m = 0.0, s2 = 0.0;
  for (double x : z.data()) m += x;
  m /= 100000.0;
  for (double x : z.data()) s2 += (x - m) * (x - m);
  const double var = s2 / 99999.0;
  v.require(var >= 0.97 && var <= 1.03, "logistic variance in [0.97, 1.03]");

  bool half = true;
  for (PriorKind k : {PriorKind::kStandardNormal, PriorKind::kLogisticUnitVar})
    half = half && prior_cdf({k, 1}, Tensor::matrix({{0.0}})).item() == 0.5;
  v.require(half, "prior_cdf(0) = 0.5");

  const std::size_t n = 50000, bins = 64;
  const double bound = 5.0 * std::sqrt(1.0 / (static_cast<double>(n) * bins));
  double worst = 0.0;
  for (PriorKind k : {PriorKind::kStandardNormal, PriorKind::kLogisticUnitVar}) {
    Rng r(57);
    const Prior p{k, 2};
    const Tensor f = prior_cdf(p, sample_prior(p, n, r));
    for (std::size_t d = 0; d < 2; ++d) {
      std::vector<double> hist(bins, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        hist[std::min<std::size_t>(static_cast<std::size_t>(f.at(i, d) * bins), bins - 1)] += 1.0 / n;
      for (double h : hist) worst = std::max(worst, std::abs(h - 1.0 / bins));
    }
  }
  v.require(worst < bound, "PIT histogram bound");
  v.detail << "logistic variance " << fmt(var) << "; cdf(0) = 0.5; PIT max deviation " << fmt(worst) << " < "
           << fmt(bound);
  return v;
}

Verdict closed_form_kl() {
  Verdict v;
  const double one =
      kl_diag_gaussian(GaussianPosterior::from_raw(Tensor::full({1, 1}, 1.0), Tensor::zeros({1, 1})),
                       {PriorKind::kStandardNormal, 1})
          .item();
  v.require(one == 0.5, "KL(mu=1, sigma=1) = 0.5 exactly");

  const std::size_t n = 20, d = 6;
  const Tensor mu = check::random_tensor({n, d}, -2, 2, 81, false);
  const Tensor lv = check::random_tensor({n, d}, -3, 3, 82, false);
  const Tensor joint = kl_diag_gaussian(GaussianPosterior::from_raw(mu, lv), {PriorKind::kStandardNormal, d});
  bool additive = true;
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < d; ++k)
      acc += kl_diag_gaussian(GaussianPosterior::from_raw(Tensor::matrix({{mu.at(i, k)}}), Tensor::matrix({{lv.at(i, k)}})),
                              {PriorKind::kStandardNormal, 1})
                 .item();
    additive = additive && joint[i] == acc;
  }
  v.require(additive, "joint KL equals sum of per-dimension KL exactly");

  // Monte Carlo oracle written independently of the library's densities.
  Rng rng(77);
  std::size_t within = 0;
  double worst_z = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t dim = 2, samples = 10000;
    std::vector<double> m(dim), l(dim), z(dim);
    for (std::size_t k = 0; k < dim; ++k) {
      m[k] = 4.0 * rng.uniform() - 2.0;
      l[k] = 3.0 * rng.uniform() - 1.5;
    }
    const double analytic =
        kl_diag_gaussian(GaussianPosterior::from_raw(Tensor({1, dim}, m), Tensor({1, dim}, l)), {PriorKind::kStandardNormal, dim})
            .item();
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
      double r = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        z[k] = m[k] + std::exp(0.5 * l[k]) * rng.normal();
        r += -0.5 * (l[k] + (z[k] - m[k]) * (z[k] - m[k]) / std::exp(l[k])) + 0.5 * z[k] * z[k];
      }
      s1 += r;
      s2 += r * r;
    }
    const double mean = s1 / samples;
    const double se = std::sqrt((s2 / samples - mean * mean) / samples);
    worst_z = std::max(worst_z, std::abs(analytic - mean) / se);
    if (std::abs(analytic - mean) < 3.0 * se) ++within;
  }
  v.require(within == 20, "MC agreement within 3 SE for 20 posteriors");
  v.detail << "KL(mu=1) = " << one << "; additivity exact; MC " << within << "/20 within 3 SE (worst " << fmt(worst_z)
           << " SE)";
  return v;
}

Verdict rate_decomposition_check() {
  Verdict v;
  const Dataset d = synth_generate(4, 2, 16, 91);
  std::size_t within = 0, total = 0;
  double worst = 0.0;
  for (std::uint64_t init = 0; init < 10; ++init) {
    Architecture a;
    a.input_dim = 256;
    a.hidden_sizes = {64, 64};
    a.latent_dim = 2;
    a.encoder_kind = EncoderKind::kGaussian;
    const Model m = init_model(a, 4000 + init);
    for (PriorKind k : {PriorKind::kStandardNormal, PriorKind::kLogisticUnitVar}) {
      Rng rng(Rng::derive(init, {static_cast<std::uint64_t>(k)}));
      const RateDecomposition r = rate_decomposition(m, d.images, {k, 2}, 20000, rng);
      const double gap = std::abs(r.rate - (r.i_q + r.marginal_kl)) / r.combined_se();
      worst = std::max(worst, gap);
      ++total;
      if (gap < 3.0) ++within;
    }
  }
  v.require(within == total, "identity within 3 combined SE");
  v.detail << within << "/" << total << " (10 inits x 2 priors) within 3 combined SE, worst " << fmt(worst) << " SE";
  return v;
}

Verdict training_smoke() {
  Verdict v;
  constexpr std::size_t kEpochs = 40;
  const auto models = reference_models(8);
  struct Run {
    double ratio = 0.0;
    double mmd_init = 0.0;
    double mmd_trained = 0.0;
  };
  std::vector<Run> runs(3 * models.size());
  std::vector<Split> data;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) data.push_back(synthetic_split(4, 500, 100, 1000 + seed));
  parallel_for(runs.size(), [&](std::size_t i) {
    const std::uint64_t seed = 1 + i / models.size();
    const Candidate& c = models[i % models.size()];
    const Split& s = data[seed - 1];
    const TrainConfig cfg = reference_config(c, s.train.pixels(), kEpochs, seed);
    const Model init = init_model(cfg.arch, detail::init_seed(seed));
    const TrainResult r = train(cfg, s.train);
    runs[i].ratio = r.metrics.back().distortion / r.metrics.front().distortion;
    if (c.objective.family == Family::kVimae) {
      const MmdConfig mmd = MmdConfig::for_latent_dim(8);
      runs[i].mmd_init = latent_prior_mmd(init, s.test.images, c.objective.prior, seed, mmd);
      runs[i].mmd_trained = latent_prior_mmd(r.model, s.test.images, c.objective.prior, seed, mmd);
    }
  });
  double worst_ratio = 0.0;
  std::size_t mmd_ok = 0, mmd_total = 0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const Candidate& c = models[i % models.size()];
    worst_ratio = std::max(worst_ratio, runs[i].ratio);
    v.require(runs[i].ratio < 0.6, c.name + " seed " + std::to_string(1 + i / models.size()) + " ratio " + fmt(runs[i].ratio));
    if (c.objective.family == Family::kVimae) {
      ++mmd_total;
      if (runs[i].mmd_trained < runs[i].mmd_init) ++mmd_ok;
    }
  }
  v.require(mmd_ok == mmd_total, "VIMAE latent MMD decreases on every seed");
  v.detail << "worst final/first distortion ratio " << fmt(worst_ratio) << " over 4 models x 3 seeds (" << kEpochs
           << " epochs); VIMAE MMD decreased in " << mmd_ok << "/" << mmd_total << " runs";
  for (std::size_t j = 0; j < models.size(); ++j) {
    v.detail << "\n      " << models[j].name << ":";
    for (std::size_t s = 0; s < 3; ++s) {
      const Run& r = runs[s * models.size() + j];
      v.detail << " ratio " << fmt(r.ratio);
      if (models[j].objective.family == Family::kVimae) v.detail << " mmd " << fmt(r.mmd_init) << "->" << fmt(r.mmd_trained);
      v.detail << (s < 2 ? ";" : "");
    }
  }
  return v;
}

Verdict robustness_trend() {
  Verdict v;
  constexpr std::size_t kEpochs = 30;
  const auto all = reference_models(8);
  const std::vector<Candidate> models = {all[0], all[3]};
  std::vector<Split> data;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) data.push_back(synthetic_split(10, 1000, 100, 1000 + seed));
  EvalOptions opt;
  opt.grid = {Corruption::none(), Corruption::mask(0.5)};
  opt.num_labeled = 1000;
  std::vector<ModelEval> evals(3 * models.size());
  std::vector<char> beats_init(evals.size(), 1);
  parallel_for(evals.size(), [&](std::size_t i) {
    const std::uint64_t seed = 1 + i / models.size();
    const Candidate& c = models[i % models.size()];
    const Split& s = data[seed - 1];
    const TrainConfig cfg = reference_config(c, s.train.pixels(), kEpochs, seed);
    const TrainResult r = train(cfg, s.train);
    evals[i] = evaluate_representation(c.name, r.model, s.train, s.test, c.objective.prior, opt, seed);
    EvalOptions full = opt;
    full.grid = default_corruption_grid();
    const ModelEval init = evaluate_representation(c.name, init_model(cfg.arch, detail::init_seed(seed)), s.train,
                                                   s.test, c.objective.prior, full, seed);
    const ModelEval trained = evaluate_representation(c.name, r.model, s.train, s.test, c.objective.prior, full, seed);
    for (std::size_t k = 0; k < trained.probes.size(); ++k)
      if (!(trained.probes[k].accuracy > init.probes[k].accuracy)) beats_init[i] = 0;
  });
  std::vector<double> clean(models.size(), 0.0), masked(models.size(), 0.0);
  for (std::size_t i = 0; i < evals.size(); ++i) {
    clean[i % models.size()] += evals[i].probes[0].accuracy / 3.0;
    masked[i % models.size()] += evals[i].probes[1].accuracy / 3.0;
  }
  const double vae_drop = clean[0] - masked[0], vimae_drop = clean[1] - masked[1];
  v.require(clean[1] >= clean[0], "mean clean accuracy vimae-l >= vae");
  v.require(vimae_drop < vae_drop, "vimae-l drop at mask 0.5 smaller than vae drop");
  v.detail << "10-class synthetic, 10000 train, 1000 labeled, seeds 1-3: clean vae " << fmt(clean[0]) << " vimae-l "
           << fmt(clean[1]) << "; drop to mask 0.5 vae " << fmt(vae_drop) << " vimae-l " << fmt(vimae_drop);
  for (std::size_t i = 0; i < evals.size(); ++i)
    v.detail << "\n      seed " << 1 + i / models.size() << " " << evals[i].model << ": clean "
             << fmt(evals[i].probes[0].accuracy) << " mask0.5 " << fmt(evals[i].probes[1].accuracy)
             << "; beats its random init on all 5 grid cells: " << (beats_init[i] ? "yes" : "no");
  return v;
}

int cli(const std::vector<std::string>& args) {
  std::vector<const char*> argv{"vimae"};
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  if (code != 0) std::cerr << err.str();
  return code;
}

Verdict determinism() {
  Verdict v;
  check::TempDir a, b, c;
  auto args = [](const check::TempDir& t, const char* epochs, bool resume) {
    std::vector<std::string> out = {"train",           "--dataset=synthetic",  "--synth.per_class=100",
                                    "--hidden=64,64",  "--output_dir=" + t.path().string(),
                                    "--no-timestamp",  std::string("--epochs=") + epochs};
    if (resume) out.push_back("--resume=true");
    return out;
  };
  const bool ran = cli(args(a, "3", false)) == 0 && cli(args(b, "3", false)) == 0 && cli(args(c, "2", false)) == 0 &&
                   cli(args(c, "3", true)) == 0;
  v.require(ran, "train invocations succeed");
  if (!ran) return v;
  const bool same = check::slurp(a / "metrics.csv") == check::slurp(b / "metrics.csv") &&
                    check::slurp(a / "model.ckpt") == check::slurp(b / "model.ckpt");
  const bool resumed = check::slurp(a / "metrics.csv") == check::slurp(c / "metrics.csv") &&
                       check::slurp(a / "model.ckpt") == check::slurp(c / "model.ckpt");
  v.require(same, "identical invocations give identical files");
  v.require(resumed, "resume matches uninterrupted training");

  const Checkpoint ck = load_checkpoint(a / "model.ckpt");
  write_pgm(generate_grid(ck.model, ck.objective.prior, 64, 11, 16, 16), a / "g1.pgm");
  write_pgm(generate_grid(ck.model, ck.objective.prior, 64, 11, 16, 16), a / "g2.pgm");
  const bool grid = check::slurp(a / "g1.pgm") == check::slurp(a / "g2.pgm");
  v.require(grid, "generate_grid byte-identical");
  v.detail << "metrics.csv and model.ckpt identical across runs: " << (same ? "yes" : "no")
           << "; resume 2+1 epochs bitwise equal: " << (resumed ? "yes" : "no")
           << "; generate_grid identical: " << (grid ? "yes" : "no");
  return v;
}

struct Criterion {
  int id;
  const char* name;
  Verdict (*run)();
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "gradient oracle", gradient_oracle},         {2, "MMD oracle", mmd_oracle},
      {3, "distribution checks", distribution_checks}, {4, "closed-form KL", closed_form_kl},
      {5, "rate decomposition", rate_decomposition_check}, {6, "training smoke", training_smoke},
      {7, "robustness trend", robustness_trend},       {8, "determinism and persistence", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  bool all = true;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.contains(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail << "exception: " << e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    all = all && v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << " " << c.id << " " << c.name << " (" << fmt(secs) << " s): "
              << v.detail.str() << v.failures << std::endl;
  }
  return all ? 0 : 1;
}
