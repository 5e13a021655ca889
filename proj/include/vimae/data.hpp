#pragma once

// Labeled image datasets: IDX ingestion and export, a synthetic shape
// corpus, the two evaluation corruptions, and seeded batching.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "vimae/errors.hpp"
#include "vimae/rng.hpp"
#include "vimae/tensor.hpp"

namespace vimae {

/// Images in [0, 1], one row per image, with integer labels.
struct Dataset {
  Tensor images;  // [N x height*width]
  std::vector<int> labels;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t pixels() const { return height * width; }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset d{gather_rows(images, idx), {}, height, width, num_classes};
    d.labels.reserve(idx.size());
    for (std::size_t i : idx) d.labels.push_back(labels.at(i));
    return d;
  }

  /// First `n` points (or all, if fewer).
  Dataset head(std::size_t n) const {
    std::vector<std::size_t> idx(std::min(n, size()));
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return subset(idx);
  }

  void validate() const {
    if (images.rank() != 2 || images.rows() != labels.size() || images.cols() != pixels())
      throw ConsistencyError("dataset: image matrix " + shape_str(images.shape()) + " does not match " +
                             std::to_string(labels.size()) + " labels of " + std::to_string(height) + "x" +
                             std::to_string(width));
    for (double v : images.data())
      if (!(v >= 0.0 && v <= 1.0)) throw ContractError("dataset: intensity outside [0, 1]");
    for (int l : labels)
      if (l < 0 || static_cast<std::size_t>(l) >= num_classes) throw ContractError("dataset: label out of range");
  }
};

// ---------------------------------------------------------------------------
// IDX
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t off, const std::string& what) {
  if (off + 4 > buf.size()) throw LengthError(what + ": header truncated");
  return (std::uint32_t{buf[off]} << 24) | (std::uint32_t{buf[off + 1]} << 16) | (std::uint32_t{buf[off + 2]} << 8) |
         std::uint32_t{buf[off + 3]};
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                              static_cast<char>(v)};
  out.write(b.data(), 4);
}

inline std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << "0x" << std::hex;
  os.width(8);
  os.fill('0');
  os << v;
  return os.str();
}

inline unsigned char quantize(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace detail

/// Parses an IDX image file (magic 0x00000803, N x rows x cols) and label
/// file (magic 0x00000801, N). Pixels are scaled by 1/255.
inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);
  const std::string iname = images_path.string(), lname = labels_path.string();

  const std::uint32_t imagic = detail::read_be32(img, 0, iname);
  if (imagic != kIdxImageMagic)
    throw FormatError(iname + ": bad image magic " + detail::hex32(imagic) + " (expected 0x00000803)");
  const std::uint32_t lmagic = detail::read_be32(lab, 0, lname);
  if (lmagic != kIdxLabelMagic)
    throw FormatError(lname + ": bad label magic " + detail::hex32(lmagic) + " (expected 0x00000801)");

  const std::size_t n = detail::read_be32(img, 4, iname);
  const std::size_t rows = detail::read_be32(img, 8, iname);
  const std::size_t cols = detail::read_be32(img, 12, iname);
  const std::size_t nl = detail::read_be32(lab, 4, lname);
  if (n == 0 || rows == 0 || cols == 0) throw FormatError(iname + ": zero dimension in header");
  const std::size_t payload = n * rows * cols;
  if (img.size() < 16 + payload)
    throw LengthError(iname + ": header declares " + std::to_string(payload) + " pixel bytes, file has " +
                      std::to_string(img.size() - 16));
  if (lab.size() < 8 + nl) throw LengthError(lname + ": header declares " + std::to_string(nl) + " labels, file has " +
                                             std::to_string(lab.size() - 8));
  if (nl != n)
    throw ConsistencyError("image file holds " + std::to_string(n) + " images but label file holds " +
                           std::to_string(nl) + " labels");

  std::vector<double> pixels(payload);
  for (std::size_t i = 0; i < payload; ++i) pixels[i] = static_cast<double>(img[16 + i]) / 255.0;
  Dataset d{Tensor({n, rows * cols}, std::move(pixels)), std::vector<int>(n), rows, cols, 0};
  int top = 0;
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = lab[8 + i];
    top = std::max(top, d.labels[i]);
  }
  d.num_classes = static_cast<std::size_t>(top) + 1;
  return d;
}

/// Writes the dataset as an IDX pair, quantizing intensities to round(v*255).
inline void write_idx(const Dataset& d, const std::filesystem::path& images_path,
                      const std::filesystem::path& labels_path) {
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img) throw IoError("cannot write " + images_path.string());
  if (!lab) throw IoError("cannot write " + labels_path.string());
  detail::write_be32(img, kIdxImageMagic);
  detail::write_be32(img, static_cast<std::uint32_t>(d.size()));
  detail::write_be32(img, static_cast<std::uint32_t>(d.height));
  detail::write_be32(img, static_cast<std::uint32_t>(d.width));
  std::vector<char> bytes(d.images.numel());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<char>(detail::quantize(d.images[i]));
  img.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  detail::write_be32(lab, kIdxLabelMagic);
  detail::write_be32(lab, static_cast<std::uint32_t>(d.size()));
  for (int l : d.labels) lab.put(static_cast<char>(l));
  if (!img || !lab) throw IoError("write failed for " + images_path.string());
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

inline constexpr std::size_t kSynthMaxClasses = 10;

namespace detail {

struct Vec2 {
  double x, y;
};

inline double segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const double vx = b.x - a.x, vy = b.y - a.y;
  const double t = std::clamp(((p.x - a.x) * vx + (p.y - a.y) * vy) / (vx * vx + vy * vy), 0.0, 1.0);
  const double dx = p.x - (a.x + t * vx), dy = p.y - (a.y + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

// Distance from p (in the shape's own frame, unit ~ half the image) to the
// stroke of shape `cls`.
inline double shape_distance(std::size_t cls, Vec2 p, double length) {
  const double l = length;
  switch (cls) {
    case 0: return segment_distance(p, {-l, 0}, {l, 0});                       // horizontal bar
    case 1: return segment_distance(p, {0, -l}, {0, l});                       // vertical bar
    case 2: return segment_distance(p, {-l * 0.75, -l * 0.75}, {l * 0.75, l * 0.75});  // diagonal
    case 3: return std::abs(std::hypot(p.x, p.y) - l * 0.6);                   // ring
    case 4: return std::min(segment_distance(p, {-l, 0}, {l, 0}), segment_distance(p, {0, -l}, {0, l}));  // plus
    case 5: return std::max(std::hypot(p.x, p.y) - l * 0.45, 0.0);             // disk
    case 6: {                                                                   // square outline
      const double h = l * 0.6;
      return std::abs(std::max(std::abs(p.x), std::abs(p.y)) - h);
    }
    case 7: return std::min(segment_distance(p, {-l * 0.6, -l}, {-l * 0.6, l}),  // L corner
                            segment_distance(p, {-l * 0.6, l}, {l * 0.6, l}));
    case 8: return std::min(segment_distance(p, {-l, -l * 0.7}, {l, -l * 0.7}),  // T
                            segment_distance(p, {0, -l * 0.7}, {0, l}));
    case 9: {                                                                   // two parallel bars
      const double a = segment_distance(p, {-l, -l * 0.45}, {l, -l * 0.45});
      const double b = segment_distance(p, {-l, l * 0.45}, {l, l * 0.45});
      return std::min(a, b);
    }
  }
  return 1e9;
}

}  // namespace detail

/// Deterministic shape corpus: class c is a fixed stroke template (bar,
/// ring, plus, ...) rendered with per-sample shift, rotation, scale,
/// thickness and contrast jitter plus faint background noise. Labels cycle
/// 0, 1, ..., num_classes-1 so every class gets exactly `per_class` images.
inline Dataset synth_generate(std::size_t num_classes, std::size_t per_class, std::size_t image_size,
                              std::uint64_t seed) {
  if (num_classes == 0 || per_class == 0 || image_size == 0)
    throw ContractError("synth_generate: counts must be positive");
  if (num_classes > kSynthMaxClasses)
    throw ContractError("synth_generate: at most " + std::to_string(kSynthMaxClasses) + " classes");
  const std::size_t n = num_classes * per_class, d = image_size * image_size;
  std::vector<double> px(n * d);
  std::vector<int> labels(n);
  Rng rng(seed);
  const double half = static_cast<double>(image_size) / 2.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = i % num_classes;
    labels[i] = static_cast<int>(cls);
    const double angle = (rng.uniform() - 0.5) * std::numbers::pi / 6.0;  // +-15 degrees
    const double shift_x = (rng.uniform() - 0.5) * 0.2;
    const double shift_y = (rng.uniform() - 0.5) * 0.2;
    const double length = 0.55 + 0.25 * rng.uniform();
    const double thickness = 0.12 + 0.06 * rng.uniform();
    const double contrast = 0.8 + 0.2 * rng.uniform();
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double pixel = 1.0 / half;
    for (std::size_t r = 0; r < image_size; ++r)
      for (std::size_t c = 0; c < image_size; ++c) {
        const double ux = (static_cast<double>(c) + 0.5) / half - 1.0 - shift_x;
        const double uy = (static_cast<double>(r) + 0.5) / half - 1.0 - shift_y;
        const detail::Vec2 p{ca * ux + sa * uy, -sa * ux + ca * uy};
        const double dist = detail::shape_distance(cls, p, length);
        // One-pixel linear falloff outside the stroke.
        const double ink = std::clamp(1.0 - (dist - thickness) / pixel, 0.0, 1.0);
        const double noise = 0.01 * rng.uniform();
        px[i * d + r * image_size + c] = std::clamp(contrast * ink + noise, 0.0, 1.0);
      }
  }
  return {Tensor({n, d}, std::move(px)), std::move(labels), image_size, image_size, num_classes};
}

// ---------------------------------------------------------------------------
// Corruption
// ---------------------------------------------------------------------------

enum class CorruptionKind { kNone, kGaussian, kMask };

inline std::string to_string(CorruptionKind k) {
  switch (k) {
    case CorruptionKind::kNone: return "none";
    case CorruptionKind::kGaussian: return "gaussian";
    case CorruptionKind::kMask: return "mask";
  }
  return "?";
}

/// Evaluation-time input noise: additive N(0, sigma^2) clamped to [0, 1],
/// or independent zeroing of each pixel with probability p.
struct Corruption {
  CorruptionKind kind = CorruptionKind::kNone;
  double param = 0.0;

  static Corruption none() { return {}; }
  static Corruption gaussian(double sigma) { return {CorruptionKind::kGaussian, sigma}; }
  static Corruption mask(double p) { return {CorruptionKind::kMask, p}; }

  void validate() const {
    if (kind == CorruptionKind::kGaussian && !(param >= 0.0)) throw ContractError("corruption: sigma must be >= 0");
    if (kind == CorruptionKind::kMask && !(param >= 0.0 && param <= 1.0))
      throw ContractError("corruption: mask probability must lie in [0, 1]");
  }

  bool operator==(const Corruption&) const = default;
};

inline Tensor corrupt(const Tensor& x, const Corruption& c, Rng& rng) {
  c.validate();
  std::vector<double> out(x.data().begin(), x.data().end());
  switch (c.kind) {
    case CorruptionKind::kNone: break;
    case CorruptionKind::kGaussian:
      for (double& v : out) v = std::clamp(v + c.param * rng.normal(), 0.0, 1.0);
      break;
    case CorruptionKind::kMask:
      for (double& v : out)
        if (rng.uniform() < c.param) v = 0.0;
      break;
  }
  return Tensor(x.shape(), std::move(out));
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

/// Index batches for one epoch: a Fisher-Yates shuffle keyed by
/// (seed, epoch), cut into floor(N / batch_size) full batches. The
/// remainder is dropped.
inline std::vector<std::vector<std::size_t>> batch_iter(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                        std::uint64_t epoch) {
  if (batch_size == 0) throw ContractError("batch_iter: batch_size must be at least 1");
  if (batch_size > n)
    throw ContractError("batch_iter: batch_size " + std::to_string(batch_size) + " exceeds dataset size " +
                        std::to_string(n));
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(Rng::derive(seed, {0x5348554646ULL, epoch}));
  for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  std::vector<std::vector<std::size_t>> batches(n / batch_size);
  for (std::size_t b = 0; b < batches.size(); ++b)
    batches[b].assign(perm.begin() + static_cast<std::ptrdiff_t>(b * batch_size),
                      perm.begin() + static_cast<std::ptrdiff_t>((b + 1) * batch_size));
  return batches;
}

inline std::vector<std::vector<std::size_t>> batch_iter(const Dataset& d, std::size_t batch_size, std::uint64_t seed,
                                                        std::uint64_t epoch) {
  return batch_iter(d.size(), batch_size, seed, epoch);
}

}  // namespace vimae
