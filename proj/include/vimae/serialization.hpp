#pragma once

// JSON forms of the configuration types, shared by checkpoints and the CLI.

#include <cstdio>
#include <cstdlib>
#include <string>

#include <nlohmann/json.hpp>

#include "vimae/data.hpp"
#include "vimae/distributions.hpp"
#include "vimae/divergence.hpp"
#include "vimae/errors.hpp"
#include "vimae/models.hpp"
#include "vimae/objectives.hpp"

namespace vimae {

using json = nlohmann::json;

/// Shortest text that reads back as the same double.
inline std::string format_double(double v) {
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline PriorKind parse_prior_kind(const std::string& s) {
  if (s == "normal") return PriorKind::kStandardNormal;
  if (s == "logistic") return PriorKind::kLogisticUnitVar;
  throw ContractError("unknown prior '" + s + "' (expected normal|logistic)");
}

inline Family parse_family(const std::string& s) {
  if (s == "vae") return Family::kVae;
  if (s == "beta-vae") return Family::kBetaVae;
  if (s == "infovae") return Family::kInfoVae;
  if (s == "vimae") return Family::kVimae;
  throw ContractError("unknown family '" + s + "' (expected vae|beta-vae|infovae|vimae)");
}

inline EncoderKind parse_encoder_kind(const std::string& s) {
  if (s == "deterministic") return EncoderKind::kDeterministic;
  if (s == "gaussian") return EncoderKind::kGaussian;
  throw ContractError("unknown encoder '" + s + "' (expected deterministic|gaussian)");
}

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  throw ContractError("unknown activation '" + s + "' (expected relu|tanh)");
}

inline KernelKind parse_kernel_kind(const std::string& s) {
  if (s == "imq") return KernelKind::kInverseMultiquadratic;
  if (s == "rbf") return KernelKind::kRbf;
  throw ContractError("unknown kernel '" + s + "' (expected imq|rbf)");
}

inline CrossCoefficient parse_cross(const std::string& s) {
  if (s == "standard") return CrossCoefficient::kStandard;
  if (s == "single") return CrossCoefficient::kSingle;
  throw ContractError("unknown mmd coefficient '" + s + "' (expected standard|single)");
}

inline CorruptionKind parse_corruption_kind(const std::string& s) {
  if (s == "none") return CorruptionKind::kNone;
  if (s == "gaussian") return CorruptionKind::kGaussian;
  if (s == "mask") return CorruptionKind::kMask;
  throw ContractError("unknown corruption '" + s + "' (expected none|gaussian|mask)");
}

inline json to_json(const Architecture& a) {
  return {{"input_dim", a.input_dim},
          {"hidden_sizes", a.hidden_sizes},
          {"latent_dim", a.latent_dim},
          {"encoder", to_string(a.encoder_kind)},
          {"activation", to_string(a.activation)}};
}

inline Architecture architecture_from_json(const json& j) {
  Architecture a;
  a.input_dim = j.at("input_dim").get<std::size_t>();
  a.hidden_sizes = j.at("hidden_sizes").get<std::vector<std::size_t>>();
  a.latent_dim = j.at("latent_dim").get<std::size_t>();
  a.encoder_kind = parse_encoder_kind(j.at("encoder").get<std::string>());
  a.activation = parse_activation(j.at("activation").get<std::string>());
  return a;
}

inline json to_json(const ObjectiveConfig& c) {
  json j = {{"family", to_string(c.family)},
            {"beta", c.beta},
            {"alpha", c.alpha},
            {"lambda", c.lambda},
            {"prior", to_string(c.prior.kind)},
            {"latent_dim", c.prior.dim},
            {"mmd", nullptr}};
  if (c.mmd)
    j["mmd"] = {{"kernel", c.mmd->kernel.kind == KernelKind::kRbf ? "rbf" : "imq"},
                {"param", c.mmd->kernel.param},
                {"cross", c.mmd->cross == CrossCoefficient::kStandard ? "standard" : "single"}};
  return j;
}

inline ObjectiveConfig objective_from_json(const json& j) {
  ObjectiveConfig c;
  c.family = parse_family(j.at("family").get<std::string>());
  c.beta = j.at("beta").get<double>();
  c.alpha = j.at("alpha").get<double>();
  c.lambda = j.at("lambda").get<double>();
  c.prior = {parse_prior_kind(j.at("prior").get<std::string>()), j.at("latent_dim").get<std::size_t>()};
  if (!j.at("mmd").is_null()) {
    const json& m = j.at("mmd");
    c.mmd = MmdConfig{{parse_kernel_kind(m.at("kernel").get<std::string>()), m.at("param").get<double>()},
                      parse_cross(m.at("cross").get<std::string>())};
  }
  return c;
}

}  // namespace vimae
