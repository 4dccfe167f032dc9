#pragma once

// Synthetic real/fake waveforms with controllable domain gaps, stratified
// splitting and subsampling, and the PDDS dataset file format.
//
// Gap knobs map onto the three gap families:
//   language     -> fundamental-frequency band
//   environment  -> additive noise level
//   generation   -> the artifact family that marks fakes
// A DomainConfig names an end point; `shift` interpolates between the
// reference source domain (shift 0) and that end point (shift 1).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "padd/binary_io.hpp"
#include "padd/errors.hpp"
#include "padd/metrics.hpp"
#include "padd/rng.hpp"

namespace padd {

enum class Artifact : std::uint8_t { kHarmonicQuantization = 0, kPeriodicGlitch = 1, kPhaseDiscontinuity = 2 };

inline const char* to_string(Artifact a) {
  switch (a) {
    case Artifact::kHarmonicQuantization: return "harmonic-quantization";
    case Artifact::kPeriodicGlitch: return "periodic-glitch";
    case Artifact::kPhaseDiscontinuity: return "phase-discontinuity";
  }
  return "?";
}

inline Artifact parse_artifact(const std::string& s) {
  for (Artifact a : {Artifact::kHarmonicQuantization, Artifact::kPeriodicGlitch, Artifact::kPhaseDiscontinuity})
    if (s == to_string(a)) return a;
  throw ConfigError("unknown artifact kind '" + s + "'");
}

struct DomainConfig {
  std::size_t delta = 2048;
  double freq_lo = 0.01;  // cycles per sample
  double freq_hi = 0.03;
  double noise_level = 0.05;
  Artifact artifact = Artifact::kPeriodicGlitch;
  double shift = 0.0;

  void validate() const {
    if (delta < 16) throw ConfigError("domain config: delta must be at least 16");
    if (!(freq_lo > 0.0 && freq_lo < freq_hi && freq_hi < 0.5))
      throw ConfigError("domain config: need 0 < freq_lo < freq_hi < 0.5");
    if (!(noise_level >= 0.0)) throw ConfigError("domain config: noise_level must be >= 0");
    if (!(shift >= 0.0 && shift <= 1.0)) throw ConfigError("domain config: shift must lie in [0, 1]");
  }

  /// The reference source domain.
  static DomainConfig source(std::size_t delta = 2048) {
    DomainConfig c;
    c.delta = delta;
    return c;
  }

  /// Default target end point: all three gap families differ from the source.
  static DomainConfig target(double shift, std::size_t delta = 2048) {
    DomainConfig c;
    c.delta = delta;
    c.freq_lo = 0.045;
    c.freq_hi = 0.09;
    c.noise_level = 0.3;
    c.artifact = Artifact::kHarmonicQuantization;
    c.shift = shift;
    return c;
  }
};

/// Concrete generator parameters after applying `shift`.
struct EffectiveDomain {
  std::size_t delta = 0;
  double freq_lo = 0.0, freq_hi = 0.0, noise_level = 0.0;
  std::array<double, 3> artifact_strength{};  // indexed by Artifact
};

inline EffectiveDomain effective_domain(const DomainConfig& cfg) {
  cfg.validate();
  const DomainConfig ref = DomainConfig::source(cfg.delta);
  const double s = cfg.shift;
  auto lerp = [s](double a, double b) { return a + s * (b - a); };
  EffectiveDomain e;
  e.delta = cfg.delta;
  e.freq_lo = lerp(ref.freq_lo, cfg.freq_lo);
  e.freq_hi = lerp(ref.freq_hi, cfg.freq_hi);
  e.noise_level = lerp(ref.noise_level, cfg.noise_level);
  e.artifact_strength[static_cast<std::size_t>(ref.artifact)] += 1.0 - s;
  e.artifact_strength[static_cast<std::size_t>(cfg.artifact)] += s;
  return e;
}

enum class Split : std::uint8_t { kTrain = 0, kDev = 1, kEval = 2, kUnsplit = 3 };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kDev: return "dev";
    case Split::kEval: return "eval";
    case Split::kUnsplit: return "unsplit";
  }
  return "?";
}

struct Sample {
  std::vector<double> waveform;
  Label label = Label::kReal;
};

struct LabeledDataset {
  std::size_t delta = 0;
  Split split = Split::kUnsplit;
  std::vector<Sample> samples;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }

  std::vector<Label> labels() const {
    std::vector<Label> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.label);
    return out;
  }
  ClassCounts counts() const {
    const auto l = labels();
    return ClassCounts::of(l);
  }
  std::vector<std::vector<double>> waveforms() const {
    std::vector<std::vector<double>> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.waveform);
    return out;
  }
};

namespace detail {

constexpr std::size_t kHarmonics = 5;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

inline std::vector<double> synth_one(const EffectiveDomain& e, bool fake, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t n = e.delta;
  const double f0 = e.freq_lo + (e.freq_hi - e.freq_lo) * unit(rng);
  std::array<double, kHarmonics> amp{}, phase{};
  for (std::size_t k = 0; k < kHarmonics; ++k) {
    amp[k] = (0.7 + 0.6 * unit(rng)) / static_cast<double>(k + 1);
    phase[k] = kTwoPi * unit(rng);
  }
  const double vib_rate = (1.0 + 3.0 * unit(rng)) / static_cast<double>(n);
  const double vib_phase = kTwoPi * unit(rng);
  const double env_rate = (0.5 + unit(rng)) / static_cast<double>(n);
  const double env_phase = kTwoPi * unit(rng);

  const double quant = fake ? e.artifact_strength[0] : 0.0;
  const double glitch = fake ? e.artifact_strength[1] : 0.0;
  const double jump = fake ? e.artifact_strength[2] : 0.0;

  // Phase discontinuities: the running phase jumps at segment boundaries.
  std::vector<double> phase_offset(n, 0.0);
  if (jump > 0.0) {
    std::size_t t = 64 + static_cast<std::size_t>(64 * unit(rng));
    double offset = 0.0;
    std::size_t next = t;
    for (std::size_t i = 0; i < n; ++i) {
      if (i == next) {
        offset += jump * (0.5 + 0.5 * unit(rng)) * std::numbers::pi;
        next += 96 + static_cast<std::size_t>(96 * unit(rng));
      }
      phase_offset[i] = offset;
    }
  }

  std::vector<double> x(n);
  double theta = 0.0;
  double sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i);
    theta += kTwoPi * f0 * (1.0 + 0.02 * std::sin(kTwoPi * vib_rate * t + vib_phase));
    const double env = 0.8 + 0.2 * std::sin(kTwoPi * env_rate * t + env_phase);
    double v = 0.0;
    for (std::size_t k = 0; k < kHarmonics; ++k) {
      if (static_cast<double>(k + 1) * f0 >= 0.45) break;
      v += amp[k] * std::sin(static_cast<double>(k + 1) * (theta + phase_offset[i]) + phase[k]);
    }
    x[i] = env * v;
    sq += x[i] * x[i];
  }
  const double gain = 0.5 / std::sqrt(sq / static_cast<double>(n) + 1e-12);
  for (auto& v : x) v *= gain;

  if (quant > 0.0) {
    constexpr double kStep = 0.35;
    for (auto& v : x) v += quant * (kStep * std::round(v / kStep) - v);
  }
  if (glitch > 0.0) {
    const std::size_t period = 48 + static_cast<std::size_t>(48 * unit(rng));
    const std::size_t start = static_cast<std::size_t>(period * unit(rng));
    for (std::size_t i = start; i + 2 < n; i += period) {
      x[i] += 0.8 * glitch;
      x[i + 1] -= 0.8 * glitch;
      x[i + 2] += 0.8 * glitch;
    }
  }
  if (e.noise_level > 0.0) {
    std::normal_distribution<double> noise(0.0, e.noise_level);
    for (auto& v : x) v += noise(rng);
  }
  return x;
}

}  // namespace detail

/// Deterministic synthetic dataset with exactly n_real Real and n_fake Fake samples,
/// in seeded random order.
inline LabeledDataset synth_generate(const DomainConfig& cfg, std::size_t n_real, std::size_t n_fake,
                                     std::uint64_t seed) {
  if (n_real + n_fake == 0) throw InputError("synth_generate: requested an empty dataset");
  const EffectiveDomain e = effective_domain(cfg);
  std::vector<Label> labels(n_real, Label::kReal);
  labels.insert(labels.end(), n_fake, Label::kFake);
  Rng order(derive_seed(seed, 0xfeed));
  std::shuffle(labels.begin(), labels.end(), order);

  LabeledDataset ds;
  ds.delta = cfg.delta;
  ds.samples.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    Rng rng(derive_seed(seed, i));
    ds.samples.push_back({detail::synth_one(e, labels[i] == Label::kFake, rng), labels[i]});
  }
  return ds;
}

namespace detail {

/// Splits `total` into parts proportional to `weights` with largest-remainder
/// rounding; ties in the remainder go to the earlier part.
inline std::vector<std::size_t> largest_remainder(std::size_t total, std::span<const double> weights) {
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> out(weights.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * weights[i] / sum;
    out[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += out[i];
    rem.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) out[rem[k % rem.size()].second] += 1;
  return out;
}

inline std::array<std::vector<std::size_t>, 2> indices_by_label(const LabeledDataset& ds) {
  std::array<std::vector<std::size_t>, 2> out;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) out[static_cast<std::size_t>(ds.samples[i].label)].push_back(i);
  return out;
}

}  // namespace detail

/// Stratified sample preserving the real:fake ratio (largest remainder);
/// size 10 always yields 5 Real and 5 Fake.
inline LabeledDataset subsample_target(const LabeledDataset& ds, std::size_t size, std::uint64_t seed) {
  if (size < 2) throw InputError("subsample_target: size must be at least 2");
  if (size > ds.size())
    throw InputError("subsample_target: size " + std::to_string(size) + " exceeds dataset size " +
                     std::to_string(ds.size()));
  auto by_label = detail::indices_by_label(ds);
  std::array<std::size_t, 2> quota{};
  if (size == 10) {
    quota = {5, 5};
  } else {
    const std::array<double, 2> w = {double(by_label[0].size()), double(by_label[1].size())};
    auto q = detail::largest_remainder(size, w);
    quota = {q[0], q[1]};
  }
  for (std::size_t c = 0; c < 2; ++c)
    if (quota[c] > by_label[c].size() || (quota[c] > 0 && by_label[c].empty()))
      throw InputError(std::string("subsample_target: ") + to_string(static_cast<Label>(c)) + " stratum has " +
                       std::to_string(by_label[c].size()) + " samples, " + std::to_string(quota[c]) + " required");

  Rng rng(derive_seed(seed, 0x5ab));
  std::vector<std::size_t> picked;
  for (std::size_t c = 0; c < 2; ++c) {
    std::shuffle(by_label[c].begin(), by_label[c].end(), rng);
    picked.insert(picked.end(), by_label[c].begin(), by_label[c].begin() + static_cast<std::ptrdiff_t>(quota[c]));
  }
  std::shuffle(picked.begin(), picked.end(), rng);
  LabeledDataset out;
  out.delta = ds.delta;
  out.split = ds.split;
  for (std::size_t i : picked) out.samples.push_back(ds.samples[i]);
  return out;
}

struct DatasetSplits {
  LabeledDataset train, dev, eval;
};

/// Stratified random partition into train/dev/eval.
inline DatasetSplits split(const LabeledDataset& ds, std::array<double, 3> fractions, std::uint64_t seed) {
  for (double f : fractions)
    if (!(f > 0.0)) throw InputError("split: every fraction must be positive");
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9)
    throw InputError("split: fractions must sum to 1");
  auto by_label = detail::indices_by_label(ds);
  Rng rng(derive_seed(seed, 0x5b1));
  std::array<std::vector<std::size_t>, 3> parts;
  for (auto& idx : by_label) {
    if (idx.empty()) continue;
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n = detail::largest_remainder(idx.size(), fractions);
    std::size_t at = 0;
    for (std::size_t p = 0; p < 3; ++p) {
      parts[p].insert(parts[p].end(), idx.begin() + static_cast<std::ptrdiff_t>(at),
                      idx.begin() + static_cast<std::ptrdiff_t>(at + n[p]));
      at += n[p];
    }
  }
  DatasetSplits out;
  LabeledDataset* targets[] = {&out.train, &out.dev, &out.eval};
  const Split tags[] = {Split::kTrain, Split::kDev, Split::kEval};
  for (std::size_t p = 0; p < 3; ++p) {
    if (parts[p].empty())
      throw InputError(std::string("split: the ") + to_string(tags[p]) + " split would be empty (dataset of " +
                       std::to_string(ds.size()) + " samples is too small)");
    std::shuffle(parts[p].begin(), parts[p].end(), rng);
    targets[p]->delta = ds.delta;
    targets[p]->split = tags[p];
    for (std::size_t i : parts[p]) targets[p]->samples.push_back(ds.samples[i]);
  }
  return out;
}

// Dataset file:
//   "PDDS" | version u32 | delta u32 | n_samples u32 | split u8 | per sample: label u8, f64 x delta
inline constexpr char kDatasetMagic[] = "PDDS";
inline constexpr std::uint32_t kDatasetVersion = 1;

inline std::vector<char> encode_dataset(const LabeledDataset& ds) {
  io::ByteWriter w;
  w.bytes(std::string_view(kDatasetMagic, 4));
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(ds.delta));
  w.u32(static_cast<std::uint32_t>(ds.samples.size()));
  w.u8(static_cast<std::uint8_t>(ds.split));
  for (const auto& s : ds.samples) {
    if (s.waveform.size() != ds.delta) throw InputError("write_dataset: waveform length differs from delta");
    w.u8(static_cast<std::uint8_t>(s.label));
    for (double v : s.waveform) w.f64(v);
  }
  return w.buffer();
}

inline LabeledDataset decode_dataset(std::vector<char> bytes) {
  using K = FormatErrorKind;
  io::ByteReader r(std::move(bytes));
  if (r.remaining() < 17) throw FormatError(K::kCorruptHeader, "file shorter than the dataset header");
  if (r.bytes(4, K::kCorruptHeader, "magic") != std::string_view(kDatasetMagic, 4))
    throw FormatError(K::kCorruptHeader, "bad magic (expected PDDS)");
  const std::uint32_t version = r.u32(K::kCorruptHeader, "version");
  if (version != kDatasetVersion)
    throw FormatError(K::kVersionMismatch,
                      "dataset version " + std::to_string(version) + ", expected " + std::to_string(kDatasetVersion));
  LabeledDataset ds;
  ds.delta = r.u32(K::kCorruptHeader, "delta");
  const std::uint32_t n = r.u32(K::kCorruptHeader, "sample count");
  const std::uint8_t split_tag = r.u8(K::kCorruptHeader, "split tag");
  if (ds.delta == 0) throw FormatError(K::kCorruptHeader, "delta is zero");
  if (split_tag > static_cast<std::uint8_t>(Split::kUnsplit))
    throw FormatError(K::kCorruptHeader, "unknown split tag " + std::to_string(split_tag));
  ds.split = static_cast<Split>(split_tag);
  const std::uint64_t need = std::uint64_t(n) * (1 + 8 * std::uint64_t(ds.delta));
  if (r.remaining() < need)
    throw FormatError(K::kTruncatedPayload,
                      "expected " + std::to_string(need) + " payload bytes, found " + std::to_string(r.remaining()));
  if (r.remaining() > need) throw FormatError(K::kCorruptPayload, "trailing bytes after the last sample");
  ds.samples.resize(n);
  for (auto& s : ds.samples) {
    const std::uint8_t label = r.u8(K::kTruncatedPayload, "label");
    if (label > 1) throw FormatError(K::kCorruptPayload, "label byte " + std::to_string(label));
    s.label = static_cast<Label>(label);
    s.waveform.resize(ds.delta);
    for (auto& v : s.waveform) v = r.f64(K::kTruncatedPayload, "sample value");
  }
  return ds;
}

inline void write_dataset(const LabeledDataset& ds, const std::filesystem::path& path) {
  io::write_file(path, encode_dataset(ds));
}

inline LabeledDataset read_dataset(const std::filesystem::path& path) { return decode_dataset(io::read_file(path)); }

}  // namespace padd
