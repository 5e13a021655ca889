#pragma once

// Representation probes on frozen latents, the corruption grid report,
// latent-to-prior fit, PGM reconstruction/generation grids and latent CSV
// export.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vimae/data.hpp"
#include "vimae/distributions.hpp"
#include "vimae/divergence.hpp"
#include "vimae/errors.hpp"
#include "vimae/models.hpp"
#include "vimae/objectives.hpp"
#include "vimae/rng.hpp"
#include "vimae/serialization.hpp"
#include "vimae/tensor.hpp"

namespace vimae {

enum class ProbeKind { kLinear, kKnn };

inline std::string to_string(ProbeKind k) { return k == ProbeKind::kLinear ? "linear" : "knn"; }

/// Which latent the probes read for a Gaussian encoder: the encoder output z
/// (one reparameterized draw per point) or the posterior mean.
/// Deterministic encoders give the same point either way.
enum class LatentReadout { kSample, kMean };

inline std::string to_string(LatentReadout r) { return r == LatentReadout::kSample ? "sample" : "mean"; }

struct ProbeOptions {
  std::size_t knn_k = 5;
  std::size_t iterations = 500;
  double weight_decay = 1e-4;
  double learning_rate = 0.5;
};

struct ProbeResult {
  double accuracy = 0.0;
  Corruption corruption;
  std::size_t num_labeled = 0;
  ProbeKind kind = ProbeKind::kLinear;
};

namespace detail {

inline std::size_t class_count(std::span<const int> a, std::span<const int> b) {
  int top = 0;
  for (int l : a) top = std::max(top, l);
  for (int l : b) top = std::max(top, l);
  return static_cast<std::size_t>(top) + 1;
}

// Multinomial logistic regression by full-batch gradient descent on
// standardized features; returns predicted labels for `test`.
inline std::vector<int> linear_probe(const Tensor& train, std::span<const int> labels, const Tensor& test,
                                     std::size_t classes, const ProbeOptions& opt) {
  const std::size_t n = train.rows(), d = train.cols();
  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mu[j] += train.at(i, j);
  for (double& m : mu) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) sd[j] += (train.at(i, j) - mu[j]) * (train.at(i, j) - mu[j]);
  for (double& s : sd) s = std::max(std::sqrt(s / static_cast<double>(n)), 1e-12);
  auto standardized = [&](const Tensor& t) {
    std::vector<double> out(t.numel());
    for (std::size_t i = 0; i < t.rows(); ++i)
      for (std::size_t j = 0; j < d; ++j) out[i * d + j] = (t.at(i, j) - mu[j]) / sd[j];
    return out;
  };
  const std::vector<double> x = standardized(train);

  std::vector<double> w(d * classes, 0.0), b(classes, 0.0), gw(d * classes), gb(classes), p(classes);
  for (std::size_t it = 0; it < opt.iterations; ++it) {
    std::fill(gw.begin(), gw.end(), 0.0);
    std::fill(gb.begin(), gb.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double top = -INFINITY;
      for (std::size_t c = 0; c < classes; ++c) {
        double s = b[c];
        for (std::size_t j = 0; j < d; ++j) s += x[i * d + j] * w[j * classes + c];
        p[c] = s;
        top = std::max(top, s);
      }
      double z = 0.0;
      for (double& v : p) z += (v = std::exp(v - top));
      for (std::size_t c = 0; c < classes; ++c) {
        const double g = p[c] / z - (labels[i] == static_cast<int>(c) ? 1.0 : 0.0);
        gb[c] += g;
        for (std::size_t j = 0; j < d; ++j) gw[j * classes + c] += g * x[i * d + j];
      }
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= opt.learning_rate * (gw[k] * inv_n + opt.weight_decay * w[k]);
    for (std::size_t c = 0; c < classes; ++c) b[c] -= opt.learning_rate * gb[c] * inv_n;
  }

  const std::vector<double> xt = standardized(test);
  std::vector<int> pred(test.rows());
  for (std::size_t i = 0; i < test.rows(); ++i) {
    std::size_t best = 0;
    double best_score = -INFINITY;
    for (std::size_t c = 0; c < classes; ++c) {
      double s = b[c];
      for (std::size_t j = 0; j < d; ++j) s += xt[i * d + j] * w[j * classes + c];
      if (s > best_score) {
        best_score = s;
        best = c;
      }
    }
    pred[i] = static_cast<int>(best);
  }
  return pred;
}

// k nearest neighbours in Euclidean distance; equal distances go to the
// lower training index, and tied votes to the class seen nearest first.
inline std::vector<int> knn_probe(const Tensor& train, std::span<const int> labels, const Tensor& test,
                                  std::size_t classes, std::size_t k) {
  const std::size_t n = train.rows(), d = train.cols();
  k = std::min(k, n);
  std::vector<std::pair<double, std::size_t>> dist(n);
  std::vector<int> pred(test.rows());
  std::vector<std::size_t> votes(classes);
  for (std::size_t t = 0; t < test.rows(); ++t) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = test.at(t, j) - train.at(i, j);
        acc += diff * diff;
      }
      dist[i] = {acc, i};
    }
    std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
    std::fill(votes.begin(), votes.end(), 0);
    for (std::size_t r = 0; r < k; ++r) ++votes[static_cast<std::size_t>(labels[dist[r].second])];
    int best = labels[dist[0].second];
    for (std::size_t r = 0; r < k; ++r) {
      const int c = labels[dist[r].second];
      if (votes[static_cast<std::size_t>(c)] > votes[static_cast<std::size_t>(best)]) best = c;
    }
    pred[t] = best;
  }
  return pred;
}

}  // namespace detail

/// Trains a probe on labeled latents and returns its held-out accuracy. Both
/// probes are deterministic; `seed` is accepted for interface stability.
inline ProbeResult probe_train_eval(const Tensor& train_latents, std::span<const int> train_labels,
                                    const Tensor& test_latents, std::span<const int> test_labels, ProbeKind kind,
                                    std::uint64_t seed = 0, const ProbeOptions& opt = {}) {
  (void)seed;
  if (train_latents.rank() != 2 || test_latents.rank() != 2 || train_latents.cols() != test_latents.cols())
    throw DimensionError("probe: latent widths differ: " + shape_str(train_latents.shape()) + " vs " +
                         shape_str(test_latents.shape()));
  if (train_latents.rows() != train_labels.size() || test_latents.rows() != test_labels.size())
    throw ConsistencyError("probe: latent and label counts differ");
  if (test_labels.empty()) throw ContractError("probe: empty test set");
  if (std::adjacent_find(train_labels.begin(), train_labels.end(), std::not_equal_to<>()) == train_labels.end())
    throw ContractError("probe: training labels must contain at least 2 classes");
  const std::size_t classes = detail::class_count(train_labels, test_labels);
  const auto pred = kind == ProbeKind::kLinear
                        ? detail::linear_probe(train_latents, train_labels, test_latents, classes, opt)
                        : detail::knn_probe(train_latents, train_labels, test_latents, classes, opt.knn_k);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == test_labels[i] ? 1 : 0;
  return {static_cast<double>(hits) / static_cast<double>(pred.size()), Corruption::none(), train_labels.size(), kind};
}

/// Clean, Gaussian sigma in {0.2, 0.4}, mask p in {0.2, 0.5}.
inline std::vector<Corruption> default_corruption_grid() {
  return {Corruption::none(), Corruption::gaussian(0.2), Corruption::gaussian(0.4), Corruption::mask(0.2),
          Corruption::mask(0.5)};
}

inline constexpr std::size_t kEncodeChunk = 1000;
inline constexpr std::size_t kMaxMmdPoints = 1000;

/// Latents encoded in chunks: posterior means when rng is null, otherwise
/// the encoder output z drawn with rng.
inline Tensor encode_points(const Model& m, const Tensor& x, Rng* rng = nullptr) {
  std::vector<double> out;
  out.reserve(x.rows() * m.arch.latent_dim);
  for (std::size_t start = 0; start < x.rows(); start += kEncodeChunk) {
    std::vector<std::size_t> idx(std::min(kEncodeChunk, x.rows() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor xb = gather_rows(x, idx);
    const Tensor z = rng ? encode(m, xb, *rng).z.detach() : encode_mean(m, xb);
    out.insert(out.end(), z.data().begin(), z.data().end());
  }
  return Tensor({x.rows(), m.arch.latent_dim}, std::move(out));
}

/// mmd_unbiased(prior samples, encoded samples) over the first
/// min(N, kMaxMmdPoints) rows of x. Gaussian encoders contribute one
/// posterior sample per point, i.e. draws from the aggregate posterior.
inline double latent_prior_mmd(const Model& m, const Tensor& x, const Prior& prior, std::uint64_t seed,
                               const MmdConfig& cfg) {
  std::vector<std::size_t> idx(std::min(x.rows(), kMaxMmdPoints));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(Rng::derive(seed, {0x4d4d44ULL}));
  const Tensor z = encode(m, gather_rows(x, idx), rng).z.detach();
  const Tensor p = sample_prior(prior, idx.size(), rng);
  return mmd_unbiased(cfg, p, z).item();
}

/// Mean per-image reconstruction cross-entropy from posterior means.
inline double mean_distortion(const Model& m, const Tensor& x) {
  double total = 0.0;
  for (std::size_t start = 0; start < x.rows(); start += kEncodeChunk) {
    std::vector<std::size_t> idx(std::min(kEncodeChunk, x.rows() - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor xb = gather_rows(x, idx);
    total += bce_distortion(decode(m, encode_mean(m, xb)), xb).item() * static_cast<double>(idx.size());
  }
  return total / static_cast<double>(x.rows());
}

struct ModelEval {
  std::string model;
  std::vector<ProbeResult> probes;
  double latent_mmd = 0.0;
  double distortion = 0.0;
};

struct EvalReport {
  std::vector<ModelEval> models;

  /// model,corruption,param,probe,accuracy
  std::string to_csv() const {
    std::ostringstream os;
    os << "model,corruption,param,probe,accuracy\n";
    for (const auto& m : models)
      for (const auto& p : m.probes)
        os << m.model << ',' << to_string(p.corruption.kind) << ',' << format_double(p.corruption.param) << ','
           << to_string(p.kind) << ',' << format_double(p.accuracy) << '\n';
    return os.str();
  }

  void write_csv(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write report " + path.string());
    f << to_csv();
  }
};

struct EvalOptions {
  std::vector<Corruption> grid = default_corruption_grid();
  std::size_t num_labeled = 1000;
  std::vector<ProbeKind> probes{ProbeKind::kLinear};
  LatentReadout readout = LatentReadout::kSample;
  ProbeOptions probe;
};

/// For every grid cell: corrupt the test inputs, encode them with the frozen
/// model, fit the probe on `num_labeled` clean-encoded training points
/// (a seeded random subset) and score it on the corrupted test latents.
inline ModelEval evaluate_representation(const std::string& name, const Model& m, const Dataset& train,
                                         const Dataset& test, const Prior& prior, const EvalOptions& opt,
                                         std::uint64_t seed) {
  if (opt.num_labeled > train.size())
    throw ContractError("evaluate: num_labeled " + std::to_string(opt.num_labeled) + " exceeds training split size " +
                        std::to_string(train.size()));
  if (opt.num_labeled < 2) throw ContractError("evaluate: num_labeled must be at least 2");
  std::vector<std::size_t> perm(train.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng pick(Rng::derive(seed, {0x4c4142454cULL}));
  for (std::size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[pick.below(i + 1)]);
  perm.resize(opt.num_labeled);
  const Dataset labeled = train.subset(perm);
  const bool sample = opt.readout == LatentReadout::kSample;
  Rng train_draw(Rng::derive(seed, {0x5a545241ULL}));
  const Tensor train_z = encode_points(m, labeled.images, sample ? &train_draw : nullptr);

  ModelEval out{name, {}, 0.0, 0.0};
  for (std::size_t cell = 0; cell < opt.grid.size(); ++cell) {
    Rng noise(Rng::derive(seed, {0x43454c4cULL, cell}));
    Rng draw(Rng::derive(seed, {0x5a544553ULL, cell}));
    const Tensor test_z = encode_points(m, corrupt(test.images, opt.grid[cell], noise), sample ? &draw : nullptr);
    for (ProbeKind kind : opt.probes) {
      ProbeResult r = probe_train_eval(train_z, labeled.labels, test_z, test.labels, kind, seed, opt.probe);
      r.corruption = opt.grid[cell];
      out.probes.push_back(r);
    }
  }
  out.latent_mmd = latent_prior_mmd(m, test.images, prior, seed, MmdConfig::for_latent_dim(prior.dim));
  out.distortion = mean_distortion(m, test.images);
  return out;
}

// ---------------------------------------------------------------------------
// Images
// ---------------------------------------------------------------------------

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<unsigned char> pixels;  // row-major

  bool operator==(const GrayImage&) const = default;
};

/// Binary PGM: "P5\n<w> <h>\n255\n" followed by the raw bytes.
inline void write_pgm(const GrayImage& img, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write image " + path.string());
  f << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw IoError("write failed for image " + path.string());
}

inline GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open image " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  f >> magic >> w >> h >> maxval;
  if (magic != "P5" || !f || maxval != 255 || w == 0 || h == 0)
    throw FormatError(path.string() + ": not an 8-bit binary PGM");
  f.get();
  GrayImage img{w, h, std::vector<unsigned char>(w * h)};
  f.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (f.gcount() != static_cast<std::streamsize>(img.pixels.size()))
    throw LengthError(path.string() + ": pixel data truncated");
  return img;
}

namespace detail {

inline void blit(GrayImage& img, std::span<const double> tile, std::size_t th, std::size_t tw, std::size_t row,
                 std::size_t col) {
  for (std::size_t r = 0; r < th; ++r)
    for (std::size_t c = 0; c < tw; ++c)
      img.pixels[(row * th + r) * img.width + col * tw + c] = quantize(tile[r * tw + c]);
}

inline Tensor pixel_means(const Model& m, const Tensor& z) { return sigmoid(decode(m, z)); }

}  // namespace detail

/// Two rows of n tiles: the (corrupted) inputs, then their reconstructions.
/// Image size is (2 * height) x (n * width); bytes are round(v * 255).
inline GrayImage reconstruct_grid(const Model& m, const Tensor& x, std::size_t height, std::size_t width,
                                  const Corruption& corruption, std::uint64_t seed) {
  if (x.rank() != 2 || x.rows() == 0) throw ContractError("reconstruct_grid: empty batch");
  if (x.cols() != height * width) throw DimensionError("reconstruct_grid: image size does not match batch width");
  Rng rng(seed);
  const Tensor xc = corrupt(x, corruption, rng);
  const Tensor rec = detail::pixel_means(m, encode_mean(m, xc));
  const std::size_t n = x.rows(), d = height * width;
  GrayImage img{n * width, 2 * height, std::vector<unsigned char>(2 * height * n * width)};
  for (std::size_t i = 0; i < n; ++i) {
    detail::blit(img, xc.data().subspan(i * d, d), height, width, 0, i);
    detail::blit(img, rec.data().subspan(i * d, d), height, width, 1, i);
  }
  return img;
}

/// Decodes n prior samples into a ceil(sqrt(n))-column grid; unused tiles
/// stay black.
inline GrayImage generate_grid(const Model& m, const Prior& prior, std::size_t n, std::uint64_t seed,
                               std::size_t height, std::size_t width) {
  if (n == 0) throw ContractError("generate_grid: n must be at least 1");
  if (height * width != m.arch.input_dim) throw DimensionError("generate_grid: image size does not match model");
  Rng rng(seed);
  const Tensor means = detail::pixel_means(m, sample_prior(prior, n, rng));
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  const std::size_t rows = (n + cols - 1) / cols;
  const std::size_t d = height * width;
  GrayImage img{cols * width, rows * height, std::vector<unsigned char>(cols * width * rows * height, 0)};
  for (std::size_t i = 0; i < n; ++i) detail::blit(img, means.data().subspan(i * d, d), height, width, i / cols, i % cols);
  return img;
}

/// CSV with header z_0,...,z_{d-1},label; one row per point in dataset
/// order, values in shortest round-trip form.
inline void export_latents(const Model& m, const Dataset& d, const std::filesystem::path& path) {
  const Tensor z = encode_points(m, d.images);
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write latents " + path.string());
  for (std::size_t j = 0; j < z.cols(); ++j) f << "z_" << j << ',';
  f << "label\n";
  for (std::size_t i = 0; i < z.rows(); ++i) {
    for (std::size_t j = 0; j < z.cols(); ++j) f << format_double(z.at(i, j)) << ',';
    f << d.labels[i] << '\n';
  }
  if (!f) throw IoError("write failed for latents " + path.string());
}

}  // namespace vimae
