#pragma once

// MLP encoder q(z|x) and Bernoulli-logit MLP decoder p(x|z).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vimae/distributions.hpp"
#include "vimae/errors.hpp"
#include "vimae/rng.hpp"
#include "vimae/tensor.hpp"

namespace vimae {

enum class EncoderKind { kDeterministic, kGaussian };
enum class Activation { kRelu, kTanh };

inline std::string to_string(EncoderKind k) {
  return k == EncoderKind::kDeterministic ? "deterministic" : "gaussian";
}
inline std::string to_string(Activation a) { return a == Activation::kRelu ? "relu" : "tanh"; }

struct Architecture {
  std::size_t input_dim = 256;
  std::vector<std::size_t> hidden_sizes{256, 256, 256};
  std::size_t latent_dim = 8;
  EncoderKind encoder_kind = EncoderKind::kGaussian;
  Activation activation = Activation::kRelu;

  /// Width of the encoder's last layer: mu || logvar for the Gaussian head.
  std::size_t encoder_output_dim() const {
    return encoder_kind == EncoderKind::kGaussian ? 2 * latent_dim : latent_dim;
  }

  void validate() const {
    if (input_dim == 0 || latent_dim == 0) throw ContractError("architecture: input and latent sizes must be positive");
    for (std::size_t h : hidden_sizes)
      if (h == 0) throw ContractError("architecture: hidden sizes must be positive");
  }

  /// Layer widths input -> ... -> encoder output, and latent -> ... -> input.
  std::vector<std::size_t> encoder_widths() const {
    std::vector<std::size_t> w{input_dim};
    w.insert(w.end(), hidden_sizes.begin(), hidden_sizes.end());
    w.push_back(encoder_output_dim());
    return w;
  }
  std::vector<std::size_t> decoder_widths() const {
    std::vector<std::size_t> w{latent_dim};
    w.insert(w.end(), hidden_sizes.rbegin(), hidden_sizes.rend());
    w.push_back(input_dim);
    return w;
  }

  /// sum over layers of fan_in * fan_out + fan_out.
  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (const auto& widths : {encoder_widths(), decoder_widths()})
      for (std::size_t i = 0; i + 1 < widths.size(); ++i) total += widths[i] * widths[i + 1] + widths[i + 1];
    return total;
  }

  bool operator==(const Architecture&) const = default;
};

struct Linear {
  Tensor weight;  // [fan_in x fan_out]
  Tensor bias;    // [fan_out]

  Tensor forward(const Tensor& x) const { return matmul(x, weight) + bias; }
};

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

/// Encoder and decoder parameters. Copies share parameter storage (tensors
/// are handles); use clone() for an independent model.
struct Model {
  Architecture arch;
  std::vector<Linear> encoder;
  std::vector<Linear> decoder;

  /// Fixed order: encoder layers then decoder layers, weight before bias.
  std::vector<NamedParameter> parameters() const {
    std::vector<NamedParameter> out;
    auto push = [&out](const std::string& prefix, const std::vector<Linear>& layers) {
      for (std::size_t i = 0; i < layers.size(); ++i) {
        out.push_back({prefix + "." + std::to_string(i) + ".weight", layers[i].weight});
        out.push_back({prefix + "." + std::to_string(i) + ".bias", layers[i].bias});
      }
    };
    push("encoder", encoder);
    push("decoder", decoder);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
  }

  void zero_grad() const {
    for (auto& p : parameters()) p.tensor.zero_grad();
  }

  Model clone() const {
    Model m{arch, {}, {}};
    auto copy = [](const std::vector<Linear>& src) {
      std::vector<Linear> dst;
      for (const Linear& l : src)
        dst.push_back({Tensor(l.weight.shape(), {l.weight.data().begin(), l.weight.data().end()}, true),
                       Tensor(l.bias.shape(), {l.bias.data().begin(), l.bias.data().end()}, true)});
      return dst;
    };
    m.encoder = copy(encoder);
    m.decoder = copy(decoder);
    return m;
  }
};

namespace detail {

inline std::vector<Linear> glorot_stack(const std::vector<std::size_t>& widths, Rng& rng) {
  std::vector<Linear> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const std::size_t fan_in = widths[i], fan_out = widths[i + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<double> w(fan_in * fan_out);
    for (double& v : w) v = (2.0 * rng.uniform() - 1.0) * bound;
    layers.push_back({Tensor({fan_in, fan_out}, std::move(w), true), Tensor::zeros({fan_out}, true)});
  }
  return layers;
}

inline Tensor activate(Activation a, const Tensor& x) { return a == Activation::kRelu ? relu(x) : tanh(x); }

inline Tensor run_stack(const std::vector<Linear>& layers, Activation act, const Tensor& x) {
  Tensor h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i].forward(h);
    if (i + 1 < layers.size()) h = activate(act, h);
  }
  return h;
}

}  // namespace detail

/// Glorot-uniform weights, zero biases.
inline Model init_model(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(seed);
  Model m{arch, {}, {}};
  m.encoder = detail::glorot_stack(arch.encoder_widths(), rng);
  m.decoder = detail::glorot_stack(arch.decoder_widths(), rng);
  return m;
}

struct Encoding {
  Tensor z;
  std::optional<GaussianPosterior> posterior;
};

/// Deterministic encoders return the final linear output; Gaussian encoders
/// return the clamped posterior and one reparameterized sample.
inline Encoding encode(const Model& m, const Tensor& x, Rng& rng) {
  if (x.rank() != 2 || x.cols() != m.arch.input_dim)
    throw DimensionError("encode: expected width " + std::to_string(m.arch.input_dim) + ", got shape " +
                         shape_str(x.shape()));
  Tensor out = detail::run_stack(m.encoder, m.arch.activation, x);
  if (m.arch.encoder_kind == EncoderKind::kDeterministic) return {out, std::nullopt};
  const std::size_t d = m.arch.latent_dim;
  auto post = GaussianPosterior::from_raw(slice_cols(out, 0, d), slice_cols(out, d, 2 * d));
  Tensor z = reparameterize(post, standard_normal_noise(x.rows(), d, rng));
  return {z, post};
}

/// Point representation of x: the posterior mean for Gaussian encoders.
inline Tensor encode_mean(const Model& m, const Tensor& x) {
  if (x.rank() != 2 || x.cols() != m.arch.input_dim)
    throw DimensionError("encode: expected width " + std::to_string(m.arch.input_dim) + ", got shape " +
                         shape_str(x.shape()));
  Tensor out = detail::run_stack(m.encoder, m.arch.activation, x);
  if (m.arch.encoder_kind == EncoderKind::kDeterministic) return out;
  return slice_cols(out, 0, m.arch.latent_dim);
}

/// Bernoulli logits; sigmoid(logits) are the pixel means.
inline Tensor decode(const Model& m, const Tensor& z) {
  if (z.rank() != 2 || z.cols() != m.arch.latent_dim)
    throw DimensionError("decode: expected width " + std::to_string(m.arch.latent_dim) + ", got shape " +
                         shape_str(z.shape()));
  return detail::run_stack(m.decoder, m.arch.activation, z);
}

}  // namespace vimae
