#pragma once

// The detector: a convolutional token extractor and pre-norm transformer
// encoder (Front-End) followed by a mean-pool, one hidden head layer and a
// final 2-way linear layer (Back-End). Activations are laid out as
// (features, tokens), so a prompt of shape (d, N_P) is prepended column-wise.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "padd/autodiff.hpp"
#include "padd/errors.hpp"
#include "padd/rng.hpp"
#include "padd/tensor.hpp"

namespace padd {

struct ConvSpec {
  std::size_t kernel = 0;
  std::size_t stride = 0;
  std::size_t channels = 0;
  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

struct ModelConfig {
  std::size_t d = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::vector<ConvSpec> conv = {{32, 16, 16}, {4, 4, 32}};
  std::size_t head_hidden = 16;
  std::size_t ff_hidden = 64;
  std::size_t delta = 2048;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;

  void validate() const {
    auto positive = [](std::size_t v, const char* field) {
      if (v == 0) throw ConfigError(std::string("model config: ") + field + " must be positive");
    };
    positive(d, "d");
    positive(n_layers, "n_layers");
    positive(n_heads, "n_heads");
    positive(head_hidden, "head_hidden");
    positive(ff_hidden, "ff_hidden");
    positive(delta, "delta");
    if (d % n_heads != 0)
      throw ConfigError("model config: n_heads (" + std::to_string(n_heads) + ") must divide d (" +
                        std::to_string(d) + ")");
    if (conv.empty()) throw ConfigError("model config: conv must list at least one layer");
    for (std::size_t i = 0; i < conv.size(); ++i) {
      const std::string at = "model config: conv[" + std::to_string(i) + "].";
      if (conv[i].kernel == 0) throw ConfigError(at + "kernel must be positive");
      if (conv[i].stride == 0) throw ConfigError(at + "stride must be positive");
      if (conv[i].channels == 0) throw ConfigError(at + "channels must be positive");
    }
    if (conv.back().channels != d)
      throw ConfigError("model config: last conv channels (" + std::to_string(conv.back().channels) +
                        ") must equal d (" + std::to_string(d) + ")");
    std::size_t len = delta;
    for (std::size_t i = 0; i < conv.size(); ++i) {
      if (len < conv[i].kernel)
        throw ConfigError("model config: delta " + std::to_string(delta) + " too short for conv[" +
                          std::to_string(i) + "]");
      len = (len - conv[i].kernel) / conv[i].stride + 1;
    }
  }

  /// Number of real (non-prompt) tokens produced by the conv extractor.
  std::size_t n_tokens() const {
    std::size_t len = delta;
    for (const auto& c : conv) len = (len - c.kernel) / c.stride + 1;
    return len;
  }
};

enum class ParamGroup : std::uint8_t { kFrontend = 0, kBackendHead = 1, kBackendLast = 2 };

inline const char* to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::kFrontend: return "frontend";
    case ParamGroup::kBackendHead: return "backend-head";
    case ParamGroup::kBackendLast: return "backend-last";
  }
  return "?";
}

struct ParamEntry {
  std::string name;
  Tensor value;
  ParamGroup group;
};

/// Trainable prompt, stored as a (d, N_P) matrix: one column per prompt vector.
struct Prompt {
  Tensor values;
  std::size_t d() const { return values.rows(); }
  std::size_t n_p() const { return values.cols(); }
};

class ParamRegistry {
 public:
  ParamRegistry() = default;
  explicit ParamRegistry(ModelConfig config) : config_(std::move(config)) {}

  const ModelConfig& config() const noexcept { return config_; }

  void add(std::string name, Tensor value, ParamGroup group) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    index_.emplace(name, entries_.size());
    entries_.push_back({std::move(name), std::move(value), group});
  }

  const std::vector<ParamEntry>& entries() const noexcept { return entries_; }
  std::vector<ParamEntry>& entries() noexcept { return entries_; }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InputError("unknown parameter '" + name + "'");
    return it->second;
  }
  const Tensor& at(const std::string& name) const { return entries_[index_of(name)].value; }
  Tensor& at(const std::string& name) { return entries_[index_of(name)].value; }

  const std::optional<Prompt>& prompt() const noexcept { return prompt_; }
  std::optional<Prompt>& prompt() noexcept { return prompt_; }
  void set_prompt(Prompt p) {
    if (p.d() != config_.d || p.values.rank() != 2)
      throw ShapeError("prompt shape " + shape_str(p.values.shape()) + " must be (" + std::to_string(config_.d) +
                       ", N_P)");
    prompt_ = std::move(p);
  }
  void clear_prompt() { prompt_.reset(); }

  /// Total size of the base network's parameters (prompt excluded).
  std::uint64_t base_size() const {
    std::uint64_t n = 0;
    for (const auto& e : entries_) n += e.value.size();
    return n;
  }

  friend bool bitwise_equal(const ParamRegistry& a, const ParamRegistry& b) {
    if (!(a.config_ == b.config_) || a.entries_.size() != b.entries_.size()) return false;
    for (std::size_t i = 0; i < a.entries_.size(); ++i) {
      const auto& x = a.entries_[i];
      const auto& y = b.entries_[i];
      if (x.name != y.name || x.group != y.group || !bitwise_equal(x.value, y.value)) return false;
    }
    if (a.prompt_.has_value() != b.prompt_.has_value()) return false;
    return !a.prompt_ || bitwise_equal(a.prompt_->values, b.prompt_->values);
  }

 private:
  ModelConfig config_;
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::optional<Prompt> prompt_;
};

enum class ParamInit { kFanIn, kZero, kOne };

struct ParamSpec {
  std::string name;
  Shape shape;
  ParamGroup group;
  ParamInit init;
};

/// Names, shapes and groups of every network parameter, in registry order.
inline std::vector<ParamSpec> model_layout(const ModelConfig& config) {
  config.validate();
  std::vector<ParamSpec> out;
  const auto fe = ParamGroup::kFrontend;
  std::size_t cin = 1;
  for (std::size_t i = 0; i < config.conv.size(); ++i) {
    const auto& c = config.conv[i];
    const std::string p = "conv" + std::to_string(i) + ".";
    out.push_back({p + "weight", {c.channels, cin, c.kernel}, fe, ParamInit::kFanIn});
    out.push_back({p + "bias", {c.channels}, fe, ParamInit::kZero});
    cin = c.channels;
  }
  const std::size_t d = config.d;
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    out.push_back({p + "ln1.gamma", {d}, fe, ParamInit::kOne});
    out.push_back({p + "ln1.beta", {d}, fe, ParamInit::kZero});
    for (const char* m : {"q", "k", "v", "o"}) {
      out.push_back({p + "attn.w" + m, {d, d}, fe, ParamInit::kFanIn});
      out.push_back({p + "attn.b" + m, {d}, fe, ParamInit::kZero});
    }
    out.push_back({p + "ln2.gamma", {d}, fe, ParamInit::kOne});
    out.push_back({p + "ln2.beta", {d}, fe, ParamInit::kZero});
    out.push_back({p + "ffn.w1", {config.ff_hidden, d}, fe, ParamInit::kFanIn});
    out.push_back({p + "ffn.b1", {config.ff_hidden}, fe, ParamInit::kZero});
    out.push_back({p + "ffn.w2", {d, config.ff_hidden}, fe, ParamInit::kFanIn});
    out.push_back({p + "ffn.b2", {d}, fe, ParamInit::kZero});
  }
  out.push_back({"final_ln.gamma", {d}, fe, ParamInit::kOne});
  out.push_back({"final_ln.beta", {d}, fe, ParamInit::kZero});
  out.push_back({"head.weight", {config.head_hidden, d}, ParamGroup::kBackendHead, ParamInit::kFanIn});
  out.push_back({"head.bias", {config.head_hidden}, ParamGroup::kBackendHead, ParamInit::kZero});
  out.push_back({"out.weight", {2, config.head_hidden}, ParamGroup::kBackendLast, ParamInit::kFanIn});
  out.push_back({"out.bias", {2}, ParamGroup::kBackendLast, ParamInit::kZero});
  return out;
}

/// Builds a freshly initialized detector. Weights ~ N(0, 1/fan_in), biases 0,
/// layer-norm scale 1 and shift 0.
inline ParamRegistry build_model(const ModelConfig& config, std::uint64_t seed) {
  Rng rng(mix_seed(seed));
  ParamRegistry reg(config);
  for (auto& spec : model_layout(config)) {
    Tensor t(spec.shape, spec.init == ParamInit::kOne ? 1.0 : 0.0);
    if (spec.init == ParamInit::kFanIn) {
      const double fan_in = static_cast<double>(t.size() / spec.shape[0]);
      std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(fan_in));
      for (auto& v : t.storage()) v = nd(rng);
    }
    reg.add(std::move(spec.name), std::move(t), spec.group);
  }
  return reg;
}

/// Each coordinate drawn from N(mean, std), deterministically from seed.
inline Prompt init_prompt(std::size_t d, std::size_t n_p, double mean, double std, std::uint64_t seed) {
  if (n_p == 0) throw ConfigError("init_prompt: prompt length must be positive");
  if (d == 0) throw ConfigError("init_prompt: dimension must be positive");
  if (!(std >= 0.0) || !std::isfinite(mean)) throw ConfigError("init_prompt: std must be >= 0 and mean finite");
  Prompt p{Tensor({d, n_p}, mean)};
  if (std > 0.0) {
    Rng rng(mix_seed(seed ^ 0x70726f6d7074ULL));
    std::normal_distribution<double> nd(mean, std);
    for (auto& v : p.values.storage()) v = nd(rng);
  }
  return p;
}

/// Prepends the prompt columns to a (d, L) token matrix.
inline Tensor inject_prompt(const Tensor& tokens, const std::optional<Prompt>& prompt) {
  if (tokens.rank() != 2) throw ShapeError("inject_prompt: tokens must be (d, L), got " + shape_str(tokens.shape()));
  if (!prompt) return tokens;
  const std::size_t d = tokens.rows(), len = tokens.cols(), np = prompt->n_p();
  if (prompt->d() != d)
    throw ShapeError("inject_prompt: token dimension " + std::to_string(d) + " does not match prompt dimension " +
                     std::to_string(prompt->d()));
  Tensor out({d, np + len});
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < np; ++j) out(i, j) = prompt->values(i, j);
    for (std::size_t j = 0; j < len; ++j) out(i, np + j) = tokens(i, j);
  }
  return out;
}

/// Sinusoidal positional table of shape (d, n_tokens).
inline Tensor positional_encoding(std::size_t d, std::size_t n_tokens) {
  Tensor pe({d, n_tokens});
  for (std::size_t i = 0; i < d; ++i) {
    const double rate = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(d));
    for (std::size_t t = 0; t < n_tokens; ++t)
      pe(i, t) = i % 2 == 0 ? std::sin(static_cast<double>(t) * rate) : std::cos(static_cast<double>(t) * rate);
  }
  return pe;
}

enum class TuningMode { kA, kB, kC };

inline const char* to_string(TuningMode m) {
  switch (m) {
    case TuningMode::kA: return "A";
    case TuningMode::kB: return "B";
    case TuningMode::kC: return "C";
  }
  return "?";
}

/// A tuning mode together with the presence or absence of the prompt.
struct Regime {
  TuningMode mode = TuningMode::kA;
  bool with_prompt = true;

  std::string name() const { return std::string(to_string(mode)) + (with_prompt ? "" : "-noPT"); }
  /// A without prompt trains nothing: it is the zero-shot baseline.
  bool zero_shot() const { return mode == TuningMode::kA && !with_prompt; }

  static Regime parse(const std::string& s) {
    Regime r;
    std::string base = s;
    r.with_prompt = true;
    if (base.size() > 5 && base.ends_with("-noPT")) {
      r.with_prompt = false;
      base = base.substr(0, base.size() - 5);
    }
    if (base == "A") r.mode = TuningMode::kA;
    else if (base == "B") r.mode = TuningMode::kB;
    else if (base == "C") r.mode = TuningMode::kC;
    else throw ConfigError("unknown regime '" + s + "' (expected A, B, C with optional -noPT suffix)");
    return r;
  }

  friend bool operator==(const Regime&, const Regime&) = default;
};

/// Parameters optimized under a tuning mode: entry indices into the registry plus the prompt flag.
struct TrainableSet {
  std::vector<std::size_t> entries;
  bool prompt = false;

  bool contains(std::size_t entry) const {
    return std::find(entries.begin(), entries.end(), entry) != entries.end();
  }
};

inline TrainableSet trainable_params(const ParamRegistry& reg, TuningMode mode, bool with_prompt) {
  if (mode == TuningMode::kA && !with_prompt)
    throw ConfigError("tuning mode A without a prompt has no trainable parameters");
  if (with_prompt && !reg.prompt()) throw ConfigError("tuning with a prompt requires the registry to hold one");
  TrainableSet set;
  set.prompt = with_prompt;
  for (std::size_t i = 0; i < reg.entries().size(); ++i) {
    const ParamGroup g = reg.entries()[i].group;
    if (mode == TuningMode::kC || (mode == TuningMode::kB && g == ParamGroup::kBackendLast)) set.entries.push_back(i);
  }
  return set;
}

struct ParamCount {
  std::uint64_t count = 0;
  double ratio = 0.0;  // count / base-model size
};

/// Number of trainable parameters for a mode. The zero-shot regime (A without
/// prompt) counts zero.
inline ParamCount count_params(const ParamRegistry& reg, TuningMode mode, bool with_prompt) {
  ParamCount c;
  if (mode == TuningMode::kA && !with_prompt) {
    c.count = 0;
  } else {
    const TrainableSet set = trainable_params(reg, mode, with_prompt);
    for (std::size_t i : set.entries) c.count += reg.entries()[i].value.size();
    if (set.prompt) c.count += reg.prompt()->values.size();
  }
  const std::uint64_t base = reg.base_size();
  c.ratio = base == 0 ? 0.0 : static_cast<double>(c.count) / static_cast<double>(base);
  return c;
}

/// Registry parameters and prompt bound as leaves of one graph.
struct BoundModel {
  const ParamRegistry* reg = nullptr;
  std::vector<Var> params;
  std::optional<Var> prompt;
  Tensor positional;

  Var param(const std::string& name) const { return params[reg->index_of(name)]; }
};

/// Adds registry values as leaves. Only members of `trainable` (if given)
/// require gradients.
inline BoundModel bind(Graph& g, const ParamRegistry& reg, const TrainableSet* trainable = nullptr) {
  BoundModel b;
  b.reg = &reg;
  for (std::size_t i = 0; i < reg.entries().size(); ++i)
    b.params.push_back(g.leaf(reg.entries()[i].value, trainable && trainable->contains(i)));
  if (reg.prompt()) b.prompt = g.leaf(reg.prompt()->values, trainable && trainable->prompt);
  b.positional = positional_encoding(reg.config().d, reg.config().n_tokens());
  return b;
}

/// Conv token extractor: (1, delta) waveform -> (d, n_tokens) activations.
inline Var conv_tokens(Graph& g, const BoundModel& m, Var waveform) {
  Var h = waveform;
  const auto& cfg = m.reg->config();
  for (std::size_t i = 0; i < cfg.conv.size(); ++i) {
    const std::string p = "conv" + std::to_string(i) + ".";
    h = g.gelu(g.conv1d(h, m.param(p + "weight"), m.param(p + "bias"), cfg.conv[i].stride));
  }
  return h;
}

/// Logits (real, fake) as a (2, 1) column for one waveform leaf of shape (1, delta).
inline Var build_logits(Graph& g, const BoundModel& m, Var waveform) {
  const auto& cfg = m.reg->config();
  Var h = g.embedding_add(conv_tokens(g, m, waveform), m.positional);
  std::size_t n_prompt = 0;
  if (m.prompt) {
    const Var parts[] = {*m.prompt, h};
    h = g.concat(parts, 1);
    n_prompt = g.shape(*m.prompt)[1];
  }
  const std::size_t dh = cfg.d / cfg.n_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    auto linear = [&](Var x, const std::string& w, const std::string& b) {
      return g.add(g.matmul(m.param(p + w), x), m.param(p + b));
    };
    Var a = g.layernorm(h, m.param(p + "ln1.gamma"), m.param(p + "ln1.beta"));
    Var q = linear(a, "attn.wq", "attn.bq");
    Var k = linear(a, "attn.wk", "attn.bk");
    Var v = linear(a, "attn.wv", "attn.bv");
    std::vector<Var> heads;
    heads.reserve(cfg.n_heads);
    for (std::size_t hd = 0; hd < cfg.n_heads; ++hd) {
      Var qh = g.slice(q, 0, hd * dh, (hd + 1) * dh);
      Var kh = g.slice(k, 0, hd * dh, (hd + 1) * dh);
      Var vh = g.slice(v, 0, hd * dh, (hd + 1) * dh);
      Var att = g.softmax(g.mul_scalar(g.matmul(qh, kh, true, false), scale));  // (T, T), row = query
      heads.push_back(g.matmul(vh, att, false, true));                           // (dh, T)
    }
    Var o = linear(cfg.n_heads == 1 ? heads[0] : g.concat(heads, 0), "attn.wo", "attn.bo");
    h = g.add(h, o);
    Var a2 = g.layernorm(h, m.param(p + "ln2.gamma"), m.param(p + "ln2.beta"));
    Var f = g.gelu(linear(a2, "ffn.w1", "ffn.b1"));
    h = g.add(h, linear(f, "ffn.w2", "ffn.b2"));
  }
  h = g.layernorm(h, m.param("final_ln.gamma"), m.param("final_ln.beta"));
  Var pooled = g.mean_pool(h, n_prompt);
  Var hidden = g.relu(g.add(g.matmul(m.param("head.weight"), pooled), m.param("head.bias")));
  return g.add(g.matmul(m.param("out.weight"), hidden), m.param("out.bias"));
}

inline Tensor waveform_tensor(std::span<const double> waveform) {
  return Tensor({1, waveform.size()}, std::vector<double>(waveform.begin(), waveform.end()));
}

struct Logits {
  double real = 0.0;
  double fake = 0.0;
  /// Detector score: higher means more likely fake.
  double score() const { return fake - real; }
};

inline void check_waveform(const ModelConfig& cfg, std::size_t length) {
  if (length != cfg.delta)
    throw InputError("waveform length " + std::to_string(length) + " does not match model delta " +
                     std::to_string(cfg.delta));
}

inline Logits forward_model(const ParamRegistry& reg, std::span<const double> waveform) {
  check_waveform(reg.config(), waveform.size());
  Graph g;
  BoundModel m = bind(g, reg);
  Var out = build_logits(g, m, g.leaf(waveform_tensor(waveform)));
  const Tensor& z = g.forward(out);
  return {z[0], z[1]};
}

/// Mean and standard deviation of conv-extractor activations over a set of waveforms.
inline std::pair<double, double> token_statistics(const ParamRegistry& reg,
                                                  std::span<const std::vector<double>> waveforms) {
  if (waveforms.empty()) throw InputError("token_statistics: no waveforms");
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (const auto& w : waveforms) {
    check_waveform(reg.config(), w.size());
    Graph g;
    BoundModel m = bind(g, reg);
    const Tensor& t = g.forward(conv_tokens(g, m, g.leaf(waveform_tensor(w))));
    for (double v : t.storage()) {
      sum += v;
      sq += v * v;
    }
    n += t.size();
  }
  const double mean = sum / static_cast<double>(n);
  const double var = std::max(0.0, sq / static_cast<double>(n) - mean * mean);
  return {mean, std::sqrt(var)};
}

}  // namespace padd
