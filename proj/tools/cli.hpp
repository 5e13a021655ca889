#pragma once

// Command-line front end. Every subcommand accepts the same flat key set;
// values resolve as defaults < --config JSON < --key=value overrides.
// Exit codes: 0 success, 1 usage error, 2 runtime error.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "vimae/data.hpp"
#include "vimae/errors.hpp"
#include "vimae/evaluation.hpp"
#include "vimae/objectives.hpp"
#include "vimae/serialization.hpp"
#include "vimae/training.hpp"

namespace vimae::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Bad keys, values or combinations; reported with exit code 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class KeyType { kString, kInt, kReal, kBool, kSizes };

struct KeySpec {
  std::string name;
  KeyType type;
  json fallback;  // null: no default
  std::string help;
};

inline const std::vector<KeySpec>& key_registry() {
  static const std::vector<KeySpec> keys = {
      {"dataset", KeyType::kString, nullptr, "data source: synthetic | idx"},
      {"output_dir", KeyType::kString, nullptr, "directory for every output file"},
      {"train_images", KeyType::kString, "", "IDX training images (dataset=idx)"},
      {"train_labels", KeyType::kString, "", "IDX training labels (dataset=idx)"},
      {"test_images", KeyType::kString, "", "IDX test images (dataset=idx)"},
      {"test_labels", KeyType::kString, "", "IDX test labels (dataset=idx)"},
      {"train_limit", KeyType::kInt, 0, "use only the first N training images (0: all)"},
      {"synth.classes", KeyType::kInt, 4, "synthetic corpus: number of shape classes (<= 10)"},
      {"synth.per_class", KeyType::kInt, 500, "synthetic corpus: training images per class"},
      {"synth.test_per_class", KeyType::kInt, 100, "synthetic corpus: test images per class"},
      {"synth.size", KeyType::kInt, 16, "synthetic corpus: image side length"},
      {"synth.seed", KeyType::kInt, 1, "synthetic corpus: generator seed"},
      {"family", KeyType::kString, "vimae", "objective: vae | beta-vae | infovae | vimae"},
      {"prior", KeyType::kString, "normal", "latent prior: normal | logistic"},
      {"beta", KeyType::kReal, 10.0, "beta-vae rate weight"},
      {"alpha", KeyType::kReal, 0.0, "infovae rate weight"},
      {"lambda", KeyType::kReal, 10.0, "infovae / vimae divergence weight"},
      {"mmd.kernel", KeyType::kString, "imq", "MMD kernel: imq | rbf"},
      {"mmd.param", KeyType::kReal, 0.0, "kernel C (imq) or bandwidth (rbf); 0 picks 2*latent_dim or sqrt(2*latent_dim)"},
      {"mmd.cross", KeyType::kString, "standard", "MMD cross-term coefficient: standard (-2/n^2) | single (-1/n^2)"},
      {"encoder", KeyType::kString, "auto", "encoder head: auto | deterministic | gaussian (auto: deterministic for vimae)"},
      {"activation", KeyType::kString, "relu", "hidden activation: relu | tanh"},
      {"hidden", KeyType::kSizes, json::array({256, 256, 256}), "hidden layer widths, comma separated"},
      {"latent_dim", KeyType::kInt, 8, "latent dimension"},
      {"epochs", KeyType::kInt, 30, "training epochs"},
      {"batch_size", KeyType::kInt, 100, "minibatch size"},
      {"seed", KeyType::kInt, 1, "seed for initialization, batching, sampling and probes"},
      {"lr", KeyType::kReal, 1e-3, "Adam learning rate"},
      {"checkpoint", KeyType::kString, "", "checkpoint path (default: <output_dir>/model.ckpt)"},
      {"resume", KeyType::kBool, false, "train: continue from an existing checkpoint"},
      {"timestamps", KeyType::kBool, false, "train: record wall-clock seconds in metrics.csv"},
      {"num_labeled", KeyType::kInt, 1000, "eval: labeled training points for the probe"},
      {"probes", KeyType::kString, "linear", "eval: probe kinds, comma separated: linear,knn"},
      {"knn_k", KeyType::kInt, 5, "eval: neighbours for the knn probe"},
      {"probe_latents", KeyType::kString, "sample", "eval: latents fed to the probes: sample (encoder output z) | mean"},
      {"probe_iterations", KeyType::kInt, 500, "eval: gradient steps for the linear probe"},
      {"grid", KeyType::kString, "none,gaussian:0.2,gaussian:0.4,mask:0.2,mask:0.5",
       "eval: corruption grid, comma separated kind:param"},
      {"generate.n", KeyType::kInt, 64, "generate: number of samples"},
      {"reconstruct.n", KeyType::kInt, 8, "reconstruct: number of test images"},
      {"reconstruct.corruption", KeyType::kString, "none", "reconstruct: input corruption kind:param"},
      {"decompose.points", KeyType::kInt, 8, "decompose-rate: test points in the mixture (<= 64)"},
      {"decompose.mc_samples", KeyType::kInt, 20000, "decompose-rate: Monte Carlo samples per point"},
      {"split", KeyType::kString, "test", "export-latents: train | test"},
  };
  return keys;
}

inline const KeySpec* find_key(const std::string& name) {
  for (const auto& k : key_registry())
    if (k.name == name) return &k;
  return nullptr;
}

inline std::string render_value(const json& v) {
  if (v.is_null()) return "(required)";
  if (v.is_string()) return v.get<std::string>().empty() ? "\"\"" : v.get<std::string>();
  if (v.is_array()) {
    std::string s;
    for (const auto& e : v) s += (s.empty() ? "" : ",") + e.dump();
    return s;
  }
  if (v.is_number_float()) return format_double(v.get<double>());
  return v.dump();
}

inline const char* type_label(KeyType t) {
  switch (t) {
    case KeyType::kString: return "TEXT";
    case KeyType::kInt: return "INT";
    case KeyType::kReal: return "REAL";
    case KeyType::kBool: return "BOOL";
    case KeyType::kSizes: return "INT,...";
  }
  return "TEXT";
}

namespace detail {

inline long long parse_int(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) throw UsageError("--" + key + ": expected an integer, got '" + text + "'");
  return v;
}

inline double parse_real(const std::string& key, const std::string& text) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) throw UsageError("--" + key + ": expected a number, got '" + text + "'");
  return v;
}

/// Typed JSON value from command-line text.
inline json from_text(const KeySpec& k, const std::string& text) {
  switch (k.type) {
    case KeyType::kString: return text;
    case KeyType::kInt: return parse_int(k.name, text);
    case KeyType::kReal: return parse_real(k.name, text);
    case KeyType::kBool:
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw UsageError("--" + k.name + ": expected true or false, got '" + text + "'");
    case KeyType::kSizes: {
      json arr = json::array();
      std::stringstream ss(text);
      std::string item;
      while (std::getline(ss, item, ',')) arr.push_back(parse_int(k.name, item));
      return arr;
    }
  }
  return nullptr;
}

/// Checks a value taken from a config file against the key's type.
inline json checked(const KeySpec& k, const json& v) {
  auto fail = [&](const char* want) { throw UsageError("config key '" + k.name + "': expected " + want); };
  switch (k.type) {
    case KeyType::kString:
      if (!v.is_string()) fail("a string");
      break;
    case KeyType::kInt:
      if (!v.is_number_integer()) fail("an integer");
      break;
    case KeyType::kReal:
      if (!v.is_number()) fail("a number");
      return v.get<double>();
    case KeyType::kBool:
      if (!v.is_boolean()) fail("true or false");
      break;
    case KeyType::kSizes:
      if (v.is_string()) return from_text(k, v.get<std::string>());
      if (!v.is_array()) fail("an array of integers");
      for (const auto& e : v)
        if (!e.is_number_integer()) fail("an array of integers");
      break;
  }
  return v;
}

/// Nested objects become dotted keys: {"mmd": {"kernel": "rbf"}} -> mmd.kernel.
inline void flatten(const json& j, const std::string& prefix, std::map<std::string, json>& out) {
  for (const auto& [k, v] : j.items()) {
    const std::string name = prefix.empty() ? k : prefix + "." + k;
    if (v.is_object())
      flatten(v, name, out);
    else
      out[name] = v;
  }
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

inline Corruption parse_corruption(const std::string& text) {
  const auto colon = text.find(':');
  const CorruptionKind kind = parse_corruption_kind(text.substr(0, colon));
  double param = 0.0;
  if (colon != std::string::npos) param = parse_real("corruption", text.substr(colon + 1));
  if (kind != CorruptionKind::kNone && colon == std::string::npos)
    throw UsageError("corruption '" + text + "' needs a parameter, e.g. " + to_string(kind) + ":0.5");
  Corruption c{kind, param};
  c.validate();
  return c;
}

}  // namespace detail

/// Fully resolved run settings.
struct RunConfig {
  std::map<std::string, json> values;

  const json& at(const std::string& key) const { return values.at(key); }
  std::string str(const std::string& key) const { return at(key).get<std::string>(); }
  std::size_t count(const std::string& key) const {
    const long long v = at(key).get<long long>();
    if (v < 0) throw UsageError(key + " must be non-negative");
    return static_cast<std::size_t>(v);
  }
  double real(const std::string& key) const { return at(key).get<double>(); }
  bool flag(const std::string& key) const { return at(key).get<bool>(); }

  fs::path output_dir() const {
    if (at("output_dir").is_null()) throw UsageError("output_dir is required");
    return str("output_dir");
  }
  fs::path checkpoint() const {
    const std::string c = str("checkpoint");
    return c.empty() ? output_dir() / "model.ckpt" : fs::path(c);
  }

  Architecture architecture(std::size_t input_dim, Family family) const {
    Architecture a;
    a.input_dim = input_dim;
    a.hidden_sizes = at("hidden").get<std::vector<std::size_t>>();
    a.latent_dim = count("latent_dim");
    a.activation = parse_activation(str("activation"));
    const std::string enc = str("encoder");
    a.encoder_kind = enc == "auto" ? (family == Family::kVimae ? EncoderKind::kDeterministic : EncoderKind::kGaussian)
                                   : parse_encoder_kind(enc);
    a.validate();
    return a;
  }

  ObjectiveConfig objective(Family family, PriorKind prior) const {
    const std::size_t d = count("latent_dim");
    ObjectiveConfig c;
    c.family = family;
    c.beta = real("beta");
    c.alpha = real("alpha");
    c.lambda = real("lambda");
    c.prior = {prior, d};
    if (family == Family::kInfoVae || family == Family::kVimae) {
      const KernelKind kind = parse_kernel_kind(str("mmd.kernel"));
      double param = real("mmd.param");
      if (param <= 0.0)
        param = kind == KernelKind::kInverseMultiquadratic ? 2.0 * static_cast<double>(d)
                                                           : std::sqrt(2.0 * static_cast<double>(d));
      c.mmd = MmdConfig{{kind, param}, parse_cross(str("mmd.cross"))};
    }
    c.validate();
    return c;
  }

  ObjectiveConfig objective() const { return objective(parse_family(str("family")), parse_prior_kind(str("prior"))); }

  TrainConfig train_config(std::size_t input_dim) const {
    TrainConfig t;
    t.objective = objective();
    t.arch = architecture(input_dim, t.objective.family);
    t.epochs = count("epochs");
    t.batch_size = count("batch_size");
    t.seed = count("seed");
    t.lr = real("lr");
    t.timestamps = flag("timestamps");
    return t;
  }

  EvalOptions eval_options() const {
    EvalOptions e;
    e.grid.clear();
    for (const auto& cell : detail::split(str("grid"), ',')) e.grid.push_back(detail::parse_corruption(cell));
    if (e.grid.empty()) throw UsageError("grid must name at least one corruption");
    e.num_labeled = count("num_labeled");
    e.probes.clear();
    for (const auto& p : detail::split(str("probes"), ',')) {
      if (p == "linear")
        e.probes.push_back(ProbeKind::kLinear);
      else if (p == "knn")
        e.probes.push_back(ProbeKind::kKnn);
      else
        throw UsageError("unknown probe '" + p + "' (expected linear|knn)");
    }
    if (e.probes.empty()) throw UsageError("probes must name at least one probe");
    const std::string readout = str("probe_latents");
    if (readout == "sample")
      e.readout = LatentReadout::kSample;
    else if (readout == "mean")
      e.readout = LatentReadout::kMean;
    else
      throw UsageError("probe_latents must be sample or mean, got '" + readout + "'");
    e.probe.knn_k = count("knn_k");
    e.probe.iterations = count("probe_iterations");
    return e;
  }
};

struct Splits {
  Dataset train;
  Dataset test;
};

/// Training and test splits named by the dataset keys.
inline Splits load_data(const RunConfig& rc) {
  if (rc.at("dataset").is_null()) throw UsageError("dataset is required (synthetic | idx)");
  const std::string source = rc.str("dataset");
  Splits s;
  if (source == "synthetic") {
    const std::size_t classes = rc.count("synth.classes"), per = rc.count("synth.per_class");
    const std::size_t test_per = rc.count("synth.test_per_class");
    if (per == 0 || test_per == 0) throw UsageError("synth.per_class and synth.test_per_class must be positive");
    if (classes < 2 || classes > kSynthMaxClasses) throw UsageError("synth.classes must lie in [2, 10]");
    // Labels cycle through the classes, so the first classes*per images
    // hold exactly `per` of each.
    const Dataset all = synth_generate(classes, per + test_per, rc.count("synth.size"), rc.count("synth.seed"));
    std::vector<std::size_t> tr(classes * per), te(classes * test_per);
    std::iota(tr.begin(), tr.end(), std::size_t{0});
    std::iota(te.begin(), te.end(), classes * per);
    s.train = all.subset(tr);
    s.test = all.subset(te);
  } else if (source == "idx") {
    for (const char* k : {"train_images", "train_labels", "test_images", "test_labels"})
      if (rc.str(k).empty()) throw UsageError(std::string("dataset=idx needs ") + k);
    s.train = load_idx(rc.str("train_images"), rc.str("train_labels"));
    s.test = load_idx(rc.str("test_images"), rc.str("test_labels"));
    if (s.train.pixels() != s.test.pixels()) throw ConsistencyError("training and test images differ in size");
    s.train.num_classes = s.test.num_classes = std::max(s.train.num_classes, s.test.num_classes);
  } else {
    throw UsageError("unknown dataset '" + source + "' (expected synthetic|idx)");
  }
  if (const std::size_t limit = rc.count("train_limit"); limit > 0) s.train = s.train.head(limit);
  return s;
}

namespace detail {

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed for " + path.string());
}

inline std::size_t square_side(std::size_t pixels) {
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(pixels))));
  if (side * side != pixels) throw UsageError("model input of " + std::to_string(pixels) + " pixels is not a square image");
  return side;
}

inline std::size_t worker_count() {
  const char* env = std::getenv("VIMAE_THREADS");
  if (!env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  return (end != env && *end == '\0' && v > 0) ? static_cast<std::size_t>(v) : 1;
}

inline json eval_summary(const ModelEval& e, double cdf_entropy) {
  return {{"model", e.model}, {"latent_mmd", e.latent_mmd}, {"distortion", e.distortion}, {"cdf_entropy", cdf_entropy}};
}

/// Nonparametric KL(q(z) || p(z)) from encoded samples of the test split.
inline double test_cdf_entropy(const Model& m, const Dataset& test, const Prior& prior, std::uint64_t seed) {
  std::vector<std::size_t> idx(std::min(test.size(), kMaxMmdPoints));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(Rng::derive(seed, {0x43444645ULL}));
  return cdf_entropy_diagnostic(prior, encode(m, gather_rows(test.images, idx), rng).z);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

inline int cmd_train(const RunConfig& rc, std::ostream& out) {
  const Splits data = load_data(rc);
  TrainConfig cfg = rc.train_config(data.train.pixels());
  const fs::path dir = rc.output_dir();
  detail::ensure_dir(dir);
  cfg.checkpoint_path = rc.checkpoint();
  cfg.metrics_path = dir / "metrics.csv";
  std::optional<Checkpoint> resume;
  if (rc.flag("resume") && fs::exists(cfg.checkpoint_path)) resume = load_checkpoint(cfg.checkpoint_path);
  const TrainResult r = train(cfg, data.train, resume);
  for (const auto& row : r.metrics)
    out << "epoch " << row.epoch << " total " << format_double(row.total) << " distortion "
        << format_double(row.distortion) << " divergence " << format_double(row.divergence) << '\n';
  out << "checkpoint " << cfg.checkpoint_path.string() << '\n';
  return kExitOk;
}

inline int cmd_eval(const RunConfig& rc, std::ostream& out) {
  const EvalOptions opt = rc.eval_options();
  const Checkpoint ck = load_checkpoint(rc.checkpoint());
  const Splits data = load_data(rc);
  const std::uint64_t seed = rc.count("seed");
  EvalReport rep;
  rep.models.push_back(evaluate_representation(to_string(ck.objective.family), ck.model, data.train, data.test,
                                               ck.objective.prior, opt, seed));
  const fs::path dir = rc.output_dir();
  detail::ensure_dir(dir);
  rep.write_csv(dir / "eval.csv");
  const json summary = detail::eval_summary(rep.models[0], detail::test_cdf_entropy(ck.model, data.test, ck.objective.prior, seed));
  detail::write_text(dir / "eval_summary.json", summary.dump(2) + "\n");
  out << rep.to_csv() << summary.dump() << '\n';
  return kExitOk;
}

inline int cmd_generate(const RunConfig& rc, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(rc.checkpoint());
  const std::size_t side = detail::square_side(ck.model.arch.input_dim);
  const std::size_t n = rc.count("generate.n");
  if (n == 0) throw UsageError("generate.n must be positive");
  const fs::path dir = rc.output_dir();
  detail::ensure_dir(dir);
  write_pgm(generate_grid(ck.model, ck.objective.prior, n, rc.count("seed"), side, side), dir / "generated.pgm");
  out << "wrote " << (dir / "generated.pgm").string() << '\n';
  return kExitOk;
}

inline int cmd_reconstruct(const RunConfig& rc, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(rc.checkpoint());
  const Splits data = load_data(rc);
  const std::size_t n = rc.count("reconstruct.n");
  if (n == 0) throw UsageError("reconstruct.n must be positive");
  const Corruption c = detail::parse_corruption(rc.str("reconstruct.corruption"));
  const Dataset batch = data.test.head(n);
  const fs::path dir = rc.output_dir();
  detail::ensure_dir(dir);
  write_pgm(reconstruct_grid(ck.model, batch.images, batch.height, batch.width, c, rc.count("seed")),
            dir / "reconstruction.pgm");
  out << "wrote " << (dir / "reconstruction.pgm").string() << '\n';
  return kExitOk;
}

inline int cmd_export_latents(const RunConfig& rc, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(rc.checkpoint());
  const Splits data = load_data(rc);
  const std::string split = rc.str("split");
  if (split != "train" && split != "test") throw UsageError("split must be train or test");
  const fs::path dir = rc.output_dir();
  detail::ensure_dir(dir);
  export_latents(ck.model, split == "train" ? data.train : data.test, dir / "latents.csv");
  out << "wrote " << (dir / "latents.csv").string() << '\n';
  return kExitOk;
}

inline int cmd_decompose_rate(const RunConfig& rc, std::ostream& out) {
  const Checkpoint ck = load_checkpoint(rc.checkpoint());
  const Splits data = load_data(rc);
  const std::size_t points = rc.count("decompose.points");
  if (points == 0 || points > kMaxDecompositionPoints)
    throw UsageError("decompose.points must lie in [1, " + std::to_string(kMaxDecompositionPoints) + "]");
  Rng rng(Rng::derive(rc.count("seed"), {0x44454331ULL}));
  const RateDecomposition d = rate_decomposition(ck.model, data.test.head(points).images, ck.objective.prior,
                                                 rc.count("decompose.mc_samples"), rng);
  const json j = {{"rate", d.rate},       {"i_q", d.i_q},       {"marginal_kl", d.marginal_kl},
                  {"rate_se", d.rate_se}, {"i_q_se", d.i_q_se}, {"marginal_kl_se", d.marginal_kl_se},
                  {"points", points}};
  const fs::path dir = rc.output_dir();
  detail::ensure_dir(dir);
  detail::write_text(dir / "rate.json", j.dump(2) + "\n");
  out << j.dump() << '\n';
  return kExitOk;
}

inline int cmd_make_synth(const RunConfig& rc, std::ostream& out) {
  if (rc.at("dataset").is_null() || rc.str("dataset") != "synthetic")
    throw UsageError("make-synth needs dataset=synthetic");
  const Splits data = load_data(rc);
  const fs::path dir = rc.output_dir();
  detail::ensure_dir(dir);
  write_idx(data.train, dir / "train-images.idx", dir / "train-labels.idx");
  write_idx(data.test, dir / "test-images.idx", dir / "test-labels.idx");
  out << "wrote " << data.train.size() << " training and " << data.test.size() << " test images to "
      << dir.string() << '\n';
  return kExitOk;
}

struct CompareEntry {
  std::string name;
  Family family;
  PriorKind prior;
};

inline const std::vector<CompareEntry>& compare_entries() {
  static const std::vector<CompareEntry> entries = {{"vae", Family::kVae, PriorKind::kStandardNormal},
                                                    {"beta-vae", Family::kBetaVae, PriorKind::kStandardNormal},
                                                    {"vimae-n", Family::kVimae, PriorKind::kStandardNormal},
                                                    {"vimae-l", Family::kVimae, PriorKind::kLogisticUnitVar}};
  return entries;
}

/// Trains the four reference models on shared data and seed, then writes one
/// merged probe table. Runs are independent, so up to VIMAE_THREADS of them
/// proceed at once; results are merged in fixed order.
inline int cmd_compare(const RunConfig& rc, std::ostream& out) {
  const Splits data = load_data(rc);
  const EvalOptions opt = rc.eval_options();
  const fs::path dir = rc.output_dir();
  detail::ensure_dir(dir);
  const auto& entries = compare_entries();
  std::vector<TrainConfig> configs;
  for (const auto& e : entries) {
    TrainConfig cfg = rc.train_config(data.train.pixels());
    cfg.objective = rc.objective(e.family, e.prior);
    cfg.arch = rc.architecture(data.train.pixels(), e.family);
    detail::ensure_dir(dir / e.name);
    cfg.checkpoint_path = dir / e.name / "model.ckpt";
    cfg.metrics_path = dir / e.name / "metrics.csv";
    cfg.validate();
    configs.push_back(cfg);
  }

  std::vector<ModelEval> evals(entries.size());
  std::vector<double> cdf(entries.size());
  std::vector<std::exception_ptr> errors(entries.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < entries.size(); i = next++) {
      try {
        const TrainResult r = train(configs[i], data.train);
        evals[i] = evaluate_representation(entries[i].name, r.model, data.train, data.test, configs[i].objective.prior,
                                           opt, configs[i].seed);
        cdf[i] = detail::test_cdf_entropy(r.model, data.test, configs[i].objective.prior, configs[i].seed);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::min(detail::worker_count(), entries.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  EvalReport rep;
  json summary = json::array();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    rep.models.push_back(evals[i]);
    summary.push_back(detail::eval_summary(evals[i], cdf[i]));
  }
  rep.write_csv(dir / "compare.csv");
  detail::write_text(dir / "compare_summary.json", summary.dump(2) + "\n");
  out << rep.to_csv();
  return kExitOk;
}

struct Command {
  std::string name;
  std::string description;
  int (*run)(const RunConfig&, std::ostream&);
};

inline const std::vector<Command>& commands() {
  static const std::vector<Command> cmds = {
      {"train", "train one model; writes model.ckpt and metrics.csv", cmd_train},
      {"eval", "probe a trained model across the corruption grid; writes eval.csv", cmd_eval},
      {"generate", "decode prior samples into generated.pgm", cmd_generate},
      {"reconstruct", "write test inputs and reconstructions to reconstruction.pgm", cmd_reconstruct},
      {"export-latents", "write encoded latents and labels to latents.csv", cmd_export_latents},
      {"decompose-rate", "split the rate into mutual information and marginal KL; writes rate.json",
       cmd_decompose_rate},
      {"make-synth", "write the synthetic corpus as IDX files", cmd_make_synth},
      {"compare", "train and probe vae, beta-vae, vimae-n and vimae-l; writes compare.csv", cmd_compare},
  };
  return cmds;
}

/// Merges defaults, the optional config file and explicit overrides.
inline RunConfig resolve(const std::string& config_path, const std::map<std::string, std::string>& overrides) {
  RunConfig rc;
  for (const auto& k : key_registry()) rc.values[k.name] = k.fallback;
  if (!config_path.empty()) {
    std::ifstream f(config_path);
    if (!f) throw IoError("cannot open config " + config_path);
    json doc;
    try {
      doc = json::parse(f);
    } catch (const json::parse_error& e) {
      throw UsageError("config " + config_path + " is not valid JSON: " + e.what());
    }
    if (!doc.is_object()) throw UsageError("config " + config_path + " must hold a JSON object");
    std::map<std::string, json> flat;
    detail::flatten(doc, "", flat);
    for (const auto& [name, v] : flat) {
      const KeySpec* k = find_key(name);
      if (!k) throw UsageError("unknown config key '" + name + "' in " + config_path);
      rc.values[name] = detail::checked(*k, v);
    }
  }
  for (const auto& [name, text] : overrides) rc.values[name] = detail::from_text(*find_key(name), text);
  return rc;
}

/// Entry point shared by the executable and the tests.
inline int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Variational InfoMax autoencoders: train, evaluate and inspect VAE-family models.", "vimae"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  struct Parsed {
    CLI::App* app;
    std::string config;
    std::map<std::string, std::string> raw;
    std::map<std::string, CLI::Option*> options;
    bool no_timestamp = false;
  };
  std::vector<Parsed> parsed;
  parsed.reserve(commands().size());
  for (const auto& c : commands()) {
    Parsed& p = parsed.emplace_back();
    p.app = app.add_subcommand(c.name, c.description);
    p.app->add_option("--config", p.config, "JSON run configuration (flat keys; nested objects read as dotted keys)");
    for (const auto& k : key_registry())
      p.options[k.name] = p.app->add_option("--" + k.name, p.raw[k.name], k.help)
                               ->default_str(render_value(k.fallback))
                               ->type_name(type_label(k.type))
                               ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    p.app->add_flag("--no-timestamp", p.no_timestamp, "write 0 in the seconds column of metrics.csv (the default)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "vimae: " << e.what() << "\nrun 'vimae --help' for usage\n";
    return kExitUsage;
  }

  for (std::size_t i = 0; i < parsed.size(); ++i) {
    Parsed& p = parsed[i];
    if (!p.app->parsed()) continue;
    try {
      std::map<std::string, std::string> overrides;
      for (const auto& [name, opt] : p.options)
        if (opt->count() > 0) overrides[name] = p.raw[name];
      RunConfig rc = resolve(p.config, overrides);
      if (p.no_timestamp) rc.values["timestamps"] = false;
      return commands()[i].run(rc, out);
    } catch (const UsageError& e) {
      err << "vimae " << commands()[i].name << ": " << e.what() << '\n';
      return kExitUsage;
    } catch (const json::exception& e) {
      err << "vimae " << commands()[i].name << ": bad configuration value: " << e.what() << '\n';
      return kExitUsage;
    } catch (const ContractError& e) {
      err << "vimae " << commands()[i].name << ": " << e.what() << '\n';
      return kExitUsage;
    } catch (const std::exception& e) {
      err << "vimae " << commands()[i].name << ": " << e.what() << '\n';
      return kExitRuntime;
    }
  }
  err << "vimae: no subcommand given\n";
  return kExitUsage;
}

}  // namespace vimae::cli
