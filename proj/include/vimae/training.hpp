#pragma once

// Adam, the epoch loop, per-epoch metrics and bit-exact checkpoints.
//
// Checkpoint layout (all integers little-endian):
//   "VIMC" | u32 version | u32 metadata length | metadata JSON text |
//   f64 parameters (Model::parameters() order) | f64 Adam m | f64 Adam v

#include <bit>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vimae/data.hpp"
#include "vimae/errors.hpp"
#include "vimae/models.hpp"
#include "vimae/objectives.hpp"
#include "vimae/rng.hpp"
#include "vimae/serialization.hpp"
#include "vimae/tensor.hpp"

namespace vimae {

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step_count = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

/// One bias-corrected Adam update over `params` in order. Fails before
/// touching anything if a gradient is non-finite or mis-sized.
inline void adam_step(AdamState& s, const std::vector<NamedParameter>& params,
                      const std::vector<std::vector<double>>& grads) {
  if (grads.size() != params.size()) throw DimensionError("adam_step: gradient count does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].tensor.numel())
      throw DimensionError("adam_step: gradient of " + params[i].name + " has the wrong size");
    for (std::size_t k = 0; k < grads[i].size(); ++k)
      if (!std::isfinite(grads[i][k]))
        throw NumericError("adam_step: non-finite gradient in " + params[i].name + " at index " + std::to_string(k));
  }
  if (s.m.empty()) {
    for (const auto& p : params) {
      s.m.emplace_back(p.tensor.numel(), 0.0);
      s.v.emplace_back(p.tensor.numel(), 0.0);
    }
  }
  if (s.m.size() != params.size()) throw DimensionError("adam_step: optimizer state does not match parameters");

  ++s.step_count;
  const double t = static_cast<double>(s.step_count);
  const double c1 = 1.0 - std::pow(s.beta1, t);
  const double c2 = 1.0 - std::pow(s.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].tensor;
    auto w = p.mutable_data();
    auto& m = s.m[i];
    auto& v = s.v[i];
    const auto& g = grads[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = s.beta1 * m[k] + (1.0 - s.beta1) * g[k];
      v[k] = s.beta2 * v[k] + (1.0 - s.beta2) * g[k] * g[k];
      w[k] -= s.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + s.eps);
    }
  }
}

/// Uses the gradients accumulated on the model's parameters.
inline void adam_step(AdamState& s, const Model& model) {
  const auto params = model.parameters();
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (const auto& p : params) grads.push_back(p.tensor.grad());
  adam_step(s, params, grads);
}

struct TrainConfig {
  ObjectiveConfig objective;
  Architecture arch;
  std::size_t epochs = 30;
  std::size_t batch_size = 100;
  std::uint64_t seed = 1;
  double lr = 1e-3;
  std::filesystem::path checkpoint_path;  // empty: no checkpoint
  std::filesystem::path metrics_path;     // empty: no CSV
  bool timestamps = false;                // false writes 0 in the seconds column

  void validate() const {
    if (epochs < 1) throw ContractError("train: epochs must be at least 1");
    if (batch_size < 2) throw ContractError("train: batch_size must be at least 2");
    arch.validate();
    objective.validate();
    if (objective.prior.dim != arch.latent_dim)
      throw ContractError("train: prior dimension " + std::to_string(objective.prior.dim) +
                          " does not match latent_dim " + std::to_string(arch.latent_dim));
  }
};

struct MetricsRow {
  std::size_t epoch = 0;
  double total = 0.0;
  double distortion = 0.0;
  double divergence = 0.0;
  double seconds = 0.0;
};

struct Checkpoint {
  Model model;
  AdamState adam;
  ObjectiveConfig objective;
  std::uint64_t epochs_completed = 0;
  std::uint64_t seed = 0;
  std::size_t batch_size = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'V', 'I', 'M', 'C'};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double d) {
  const auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t{static_cast<unsigned char>(in[off + i])} << (8 * i);
  return v;
}

inline double get_f64(const std::string& in, std::size_t off) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= std::uint64_t{static_cast<unsigned char>(in[off + i])} << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const json meta = {{"architecture", to_json(ck.model.arch)},
                     {"objective", to_json(ck.objective)},
                     {"adam",
                      {{"lr", ck.adam.lr},
                       {"beta1", ck.adam.beta1},
                       {"beta2", ck.adam.beta2},
                       {"eps", ck.adam.eps},
                       {"step_count", ck.adam.step_count}}},
                     {"epochs_completed", ck.epochs_completed},
                     {"seed", ck.seed},
                     {"batch_size", ck.batch_size}};
  const std::string text = meta.dump();
  std::string out(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  const auto params = ck.model.parameters();
  for (const auto& p : params)
    for (double d : p.tensor.data()) detail::put_f64(out, d);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const bool fresh = ck.adam.m.empty();
    for (std::size_t k = 0; k < params[i].tensor.numel(); ++k) detail::put_f64(out, fresh ? 0.0 : ck.adam.m[i][k]);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const bool fresh = ck.adam.v.empty();
    for (std::size_t k = 0; k < params[i].tensor.numel(); ++k) detail::put_f64(out, fresh ? 0.0 : ck.adam.v[i][k]);
  }
  // Write to a sibling file and rename so a failure never clobbers the last
  // good checkpoint.
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed for checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  const std::string in{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  const std::string name = path.string();
  if (in.size() < 4 || in.compare(0, 4, kCheckpointMagic, 4) != 0)
    throw FormatError(name + ": not a checkpoint (bad magic)");
  if (in.size() < 12) throw LengthError(name + ": truncated header");
  const std::uint32_t version = detail::get_u32(in, 4);
  if (version != kCheckpointVersion)
    throw VersionError(name + ": checkpoint version " + std::to_string(version) + ", expected " +
                       std::to_string(kCheckpointVersion));
  const std::size_t meta_len = detail::get_u32(in, 8);
  if (in.size() < 12 + meta_len) throw LengthError(name + ": truncated metadata");
  json meta;
  try {
    meta = json::parse(in.substr(12, meta_len));
  } catch (const json::exception& e) {
    throw FormatError(name + ": unreadable metadata: " + e.what());
  }

  Checkpoint ck;
  try {
    ck.model.arch = architecture_from_json(meta.at("architecture"));
    ck.objective = objective_from_json(meta.at("objective"));
    const json& a = meta.at("adam");
    ck.adam.lr = a.at("lr").get<double>();
    ck.adam.beta1 = a.at("beta1").get<double>();
    ck.adam.beta2 = a.at("beta2").get<double>();
    ck.adam.eps = a.at("eps").get<double>();
    ck.adam.step_count = a.at("step_count").get<std::uint64_t>();
    ck.epochs_completed = meta.at("epochs_completed").get<std::uint64_t>();
    ck.seed = meta.at("seed").get<std::uint64_t>();
    ck.batch_size = meta.at("batch_size").get<std::size_t>();
  } catch (const json::exception& e) {
    throw FormatError(name + ": incomplete metadata: " + e.what());
  }

  ck.model = init_model(ck.model.arch, 0);
  const auto params = ck.model.parameters();
  const std::size_t count = ck.model.parameter_count();
  const std::size_t expected = 12 + meta_len + 3 * count * 8;
  if (in.size() < expected)
    throw LengthError(name + ": expected " + std::to_string(expected) + " bytes, found " + std::to_string(in.size()));
  if (in.size() > expected) throw FormatError(name + ": trailing bytes after parameter blocks");
  std::size_t off = 12 + meta_len;
  for (const auto& p : params) {
    Tensor t = p.tensor;
    for (double& d : t.mutable_data()) {
      d = detail::get_f64(in, off);
      off += 8;
    }
  }
  for (auto* moments : {&ck.adam.m, &ck.adam.v})
    for (const auto& p : params) {
      std::vector<double> buf(p.tensor.numel());
      for (double& d : buf) {
        d = detail::get_f64(in, off);
        off += 8;
      }
      moments->push_back(std::move(buf));
    }
  return ck;
}

struct TrainResult {
  Model model;
  AdamState adam;
  std::vector<MetricsRow> metrics;
  std::uint64_t epochs_completed = 0;
};

namespace detail {

inline std::uint64_t init_seed(std::uint64_t seed) { return Rng::derive(seed, {0x494e4954ULL}); }

inline void append_metrics(const std::filesystem::path& path, const MetricsRow& row, bool fresh) {
  std::ofstream f(path, fresh ? std::ios::trunc : std::ios::app);
  if (!f) throw IoError("cannot write metrics " + path.string());
  if (fresh) f << "epoch,total,distortion,divergence,seconds\n";
  f << row.epoch << ',' << format_double(row.total) << ',' << format_double(row.distortion) << ','
    << format_double(row.divergence) << ',' << format_double(row.seconds) << '\n';
}

}  // namespace detail

/// Runs cfg.epochs epochs (counting epochs already in `resume`). Batches are
/// keyed by (seed, epoch) and step noise by (seed, epoch, step), so a
/// resumed run reproduces an uninterrupted one bit for bit. A checkpoint is
/// written after every epoch; a non-finite loss aborts with the previous
/// one left in place.
inline TrainResult train(const TrainConfig& cfg, const Dataset& data, const std::optional<Checkpoint>& resume = {}) {
  cfg.validate();
  if (data.size() == 0) throw ContractError("train: dataset is empty");
  if (data.pixels() != cfg.arch.input_dim)
    throw DimensionError("train: dataset has " + std::to_string(data.pixels()) + " pixels, model expects " +
                         std::to_string(cfg.arch.input_dim));

  TrainResult r;
  if (resume) {
    if (resume->model.arch != cfg.arch) throw ContractError("train: checkpoint architecture differs from config");
    r.model = resume->model.clone();
    r.adam = resume->adam;
    r.epochs_completed = resume->epochs_completed;
  } else {
    r.model = init_model(cfg.arch, detail::init_seed(cfg.seed));
    r.adam.lr = cfg.lr;
  }

  bool fresh_metrics = !resume;
  for (std::uint64_t epoch = r.epochs_completed; epoch < cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const auto batches = batch_iter(data, cfg.batch_size, cfg.seed, epoch);
    MetricsRow row{static_cast<std::size_t>(epoch + 1)};
    for (std::size_t step = 0; step < batches.size(); ++step) {
      const Tensor x = gather_rows(data.images, batches[step]);
      Rng rng(Rng::derive(cfg.seed, {epoch, step}));
      r.model.zero_grad();
      LossReport loss = compute_loss(r.model, x, cfg.objective, rng);
      if (!std::isfinite(loss.total_value()))
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                           std::to_string(step));
      loss.total.backward();
      adam_step(r.adam, r.model);
      row.total += loss.total_value();
      row.distortion += loss.distortion;
      row.divergence += loss.rate_or_divergence;
    }
    const double nb = static_cast<double>(batches.size());
    row.total /= nb;
    row.distortion /= nb;
    row.divergence /= nb;
    if (cfg.timestamps)
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    r.metrics.push_back(row);
    r.epochs_completed = epoch + 1;

    if (!cfg.metrics_path.empty()) {
      detail::append_metrics(cfg.metrics_path, row, fresh_metrics);
      fresh_metrics = false;
    }
    if (!cfg.checkpoint_path.empty())
      save_checkpoint({r.model, r.adam, cfg.objective, r.epochs_completed, cfg.seed, cfg.batch_size},
                      cfg.checkpoint_path);
  }
  r.model.zero_grad();
  return r;
}

}  // namespace vimae
