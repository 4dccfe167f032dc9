#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "padd/autodiff.hpp"
#include "padd/data.hpp"
#include "padd/model.hpp"
#include "padd/rng.hpp"
#include "padd/tensor.hpp"

namespace padd::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (double& v : t.storage()) v = n(rng);
  return t;
}

/// Small but complete detector: 2 conv layers, 2 encoder layers, short input.
inline ModelConfig small_config(std::size_t d = 8, std::size_t layers = 1) {
  ModelConfig c;
  c.d = d;
  c.n_layers = layers;
  c.n_heads = 2;
  c.conv = {{8, 4, 6}, {4, 4, d}};
  c.head_hidden = 6;
  c.ff_hidden = 2 * d;
  c.delta = 96;
  return c;
}

/// Smallest config that still trains to a useful detector in well under a second per epoch.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.d = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.conv = {{16, 8, 8}};
  c.head_hidden = 8;
  c.ff_hidden = 16;
  c.delta = 256;
  return c;
}

/// Random waveforms of the model's input length.
inline std::vector<Sample> random_batch(const ModelConfig& c, std::size_t n, Rng& rng) {
  std::vector<Sample> out;
  std::normal_distribution<double> g(0.0, 0.5);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.waveform.resize(c.delta);
    for (double& v : s.waveform) v = g(rng);
    s.label = i % 2 ? Label::kFake : Label::kReal;
    out.push_back(std::move(s));
  }
  return out;
}

/// Loss graph for a batch: every registry entry and the prompt are gradient leaves.
struct LossGraph {
  Graph g;
  BoundModel m;
  Var loss;

  LossGraph(const ParamRegistry& reg, std::span<const Sample> batch, std::vector<double> weights = {1.0, 1.0}) {
    TrainableSet all = trainable_params(reg, TuningMode::kC, reg.prompt().has_value());
    m = bind(g, reg, &all);
    std::vector<Var> logits;
    std::vector<int> labels;
    for (const auto& s : batch) {
      logits.push_back(build_logits(g, m, g.leaf(waveform_tensor(s.waveform))));
      labels.push_back(static_cast<int>(s.label));
    }
    Var z = logits.size() == 1 ? logits[0] : g.concat(logits, 1);
    loss = g.cross_entropy(z, labels, std::move(weights));
  }

  /// Max relative error of backward against central differences for one leaf.
  double check(Var leaf, double eps = 1e-5) {
    g.forward(loss);
    g.backward(loss);
    const Tensor analytic = g.grad(leaf);
    const Tensor original = g.value(leaf);
    auto f = [&](const Tensor& p) {
      g.set_value(leaf, p);
      return g.forward(loss)[0];
    };
    const Tensor numeric = finite_difference_grad(f, original, eps);
    g.set_value(leaf, original);
    return max_relative_error(analytic, numeric);
  }
};

}  // namespace padd::test
