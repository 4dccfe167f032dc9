#pragma once

// Source pre-training and target adaptation. Both run the same loop: seeded
// shuffling, class-balanced cross-entropy, Adam with decoupled weight decay on
// the trainable subset, dev-EER monitoring and best-epoch checkpointing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "padd/autodiff.hpp"
#include "padd/data.hpp"
#include "padd/errors.hpp"
#include "padd/metrics.hpp"
#include "padd/model.hpp"
#include "padd/rng.hpp"

namespace padd {

struct Hyperparams {
  double eta = 1e-3;
  double lambda = 0.0;
  std::size_t batch = 16;
  double beta = 0.99;
  std::size_t n_p = 5;
  std::size_t epochs = 100;

  void validate() const {
    if (!(eta > 0.0)) throw ConfigError("hyperparams: eta must be positive");
    if (!(lambda >= 0.0)) throw ConfigError("hyperparams: lambda must be non-negative");
    if (batch == 0) throw ConfigError("hyperparams: batch must be at least 1");
    if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("hyperparams: beta must lie in [0, 1)");
    if (epochs == 0) throw ConfigError("hyperparams: epochs must be at least 1");
  }
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moments for each optimized tensor, plus the step count.
struct AdamState {
  std::vector<Tensor> m, v;
  std::uint64_t step = 0;
};

/// One AdamW update: p <- p * (1 - eta * lambda), then the bias-corrected Adam step.
inline void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state, double eta,
                      double lambda, std::span<const std::string> names = {}, const AdamConfig& cfg = {}) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter and gradient counts differ");
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: optimizer state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape() || state.m[i].shape() != grads[i].shape())
      throw ShapeError("adam_step: shape mismatch for parameter " + (i < names.size() ? names[i] : std::to_string(i)));
    if (!grads[i].all_finite())
      throw NumericError("adam_step: non-finite gradient for parameter " +
                         (i < names.size() ? names[i] : std::to_string(i)));
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  const double decay = 1.0 - eta * lambda;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    const Tensor& g = grads[i];
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double mh = m[j] / c1;
      const double vh = v[j] / c2;
      p[j] = p[j] * decay - eta * mh / (std::sqrt(vh) + cfg.eps);
    }
  }
}

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double dev_eer = 0.0;
};

struct AdaptResult {
  ParamRegistry best_registry;
  double best_dev_eer = 1.0;
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> history;
  std::uint64_t seed = 0;
};

struct TrainOptions {
  std::ostream* progress = nullptr;  // per-epoch lines when set
  /// Stops after this many optimizer steps in total (0 = run all epochs).
  std::size_t max_steps = 0;
};

/// Detector scores (logit_fake - logit_real) for every sample.
inline std::vector<double> score_samples(const ParamRegistry& reg, std::span<const Sample> samples) {
  constexpr std::size_t kChunk = 32;
  std::vector<double> scores;
  scores.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const std::size_t end = std::min(samples.size(), start + kChunk);
    Graph g;
    BoundModel m = bind(g, reg);
    std::vector<Var> outs;
    for (std::size_t i = start; i < end; ++i) {
      check_waveform(reg.config(), samples[i].waveform.size());
      outs.push_back(build_logits(g, m, g.leaf(waveform_tensor(samples[i].waveform))));
    }
    g.forward(outs.back());
    for (Var o : outs) {
      const Tensor& z = g.value(o);
      scores.push_back(z[1] - z[0]);
    }
  }
  return scores;
}

/// Forward pass over every sample followed by EER.
inline EERReport evaluate(const ParamRegistry& reg, const LabeledDataset& ds) {
  if (ds.empty()) throw InputError("evaluate: empty dataset");
  const auto labels = ds.labels();
  const ClassCounts c = ClassCounts::of(labels);
  if (c.n_real == 0 || c.n_fake == 0) throw InputError("evaluate: dataset must contain both Real and Fake samples");
  const auto scores = score_samples(reg, ds.samples);
  return compute_eer(scores, labels);
}

namespace detail {

inline AdaptResult train_loop(ParamRegistry reg, const TrainableSet& trainable, const LabeledDataset& train,
                              const LabeledDataset& dev, const Hyperparams& hp, std::uint64_t seed,
                              const TrainOptions& opts) {
  hp.validate();
  if (train.empty()) throw InputError("training set is empty");
  const ClassWeights weights = class_balanced_weights(train.counts(), hp.beta);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x7a1));
  AdamState adam;

  std::vector<std::string> names;
  for (std::size_t i : trainable.entries) names.push_back(reg.entries()[i].name);
  if (trainable.prompt) names.emplace_back("__prompt__");

  AdaptResult result;
  result.seed = seed;
  std::size_t steps = 0;
  for (std::size_t epoch = 1; epoch <= hp.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += hp.batch) {
      if (opts.max_steps && steps >= opts.max_steps) break;
      const std::size_t end = std::min(order.size(), start + hp.batch);
      Graph g;
      BoundModel m = bind(g, reg, &trainable);
      std::vector<Var> logits;
      std::vector<int> labels;
      for (std::size_t k = start; k < end; ++k) {
        const Sample& s = train.samples[order[k]];
        check_waveform(reg.config(), s.waveform.size());
        logits.push_back(build_logits(g, m, g.leaf(waveform_tensor(s.waveform))));
        labels.push_back(static_cast<int>(s.label));
      }
      Var z = logits.size() == 1 ? logits[0] : g.concat(logits, 1);
      Var loss = g.cross_entropy(z, labels, {weights.real, weights.fake});
      const double value = g.forward(loss)[0];
      g.backward(loss);

      std::vector<Tensor*> params;
      std::vector<Tensor> grads;
      for (std::size_t i : trainable.entries) {
        params.push_back(&reg.entries()[i].value);
        grads.push_back(g.grad(m.params[i]));
      }
      if (trainable.prompt) {
        params.push_back(&reg.prompt()->values);
        grads.push_back(g.grad(*m.prompt));
      }
      adam_step(params, grads, adam, hp.eta, hp.lambda, names);
      ++steps;
      loss_sum += value * static_cast<double>(end - start);
      seen += end - start;
    }
    if (seen == 0) break;
    EpochRecord rec{epoch, loss_sum / static_cast<double>(seen), evaluate(reg, dev).eer};
    result.history.push_back(rec);
    if (opts.progress) {
      char line[128];
      std::snprintf(line, sizeof line, "epoch=%zu loss=%.6f dev_eer=%.6f\n", rec.epoch, rec.train_loss, rec.dev_eer);
      *opts.progress << line << std::flush;
    }
    if (result.history.size() == 1 || rec.dev_eer < result.best_dev_eer) {
      result.best_dev_eer = rec.dev_eer;
      result.best_epoch = epoch;
      result.best_registry = reg;
    }
  }
  if (result.history.empty()) {
    result.best_registry = reg;
    result.best_dev_eer = evaluate(reg, dev).eer;
  }
  return result;
}

}  // namespace detail

/// Trains every network parameter on source data (mode C without prompt).
inline AdaptResult pretrain_source(const ModelConfig& config, const LabeledDataset& train, const LabeledDataset& dev,
                                   const Hyperparams& hp, std::uint64_t seed, const TrainOptions& opts = {}) {
  ParamRegistry reg = build_model(config, seed);
  const TrainableSet all = trainable_params(reg, TuningMode::kC, false);
  return detail::train_loop(std::move(reg), all, train, dev, hp, seed, opts);
}

/// Test-time adaptation on labeled target data. The pretrained registry is
/// copied; any prompt it holds is replaced by a fresh one of length hp.n_p
/// initialized from the target training set's token statistics.
inline AdaptResult adapt(const ParamRegistry& pretrained, Regime regime, const LabeledDataset& train,
                         const LabeledDataset& dev, const Hyperparams& hp, std::uint64_t seed,
                         const TrainOptions& opts = {}) {
  if (regime.zero_shot()) throw ConfigError("adapt: tuning mode A without a prompt has no trainable parameters");
  if (train.empty()) throw InputError("adapt: empty target training set");
  hp.validate();
  ParamRegistry reg = pretrained;
  reg.clear_prompt();
  if (regime.with_prompt) {
    if (hp.n_p == 0) throw ConfigError("adapt: prompt length must be positive when tuning with a prompt");
    const auto waves = train.waveforms();
    const auto [mean, std] = token_statistics(reg, waves);
    reg.set_prompt(init_prompt(reg.config().d, hp.n_p, mean, std, derive_seed(seed, 0x9e)));
  }
  const TrainableSet set = trainable_params(reg, regime.mode, regime.with_prompt);
  return detail::train_loop(std::move(reg), set, train, dev, hp, seed, opts);
}

}  // namespace padd
