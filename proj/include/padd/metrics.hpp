#pragma once

// Class-balanced cross-entropy and equal-error-rate evaluation.
//
// Score orientation: "Fake" is the positive class. For a threshold t,
//   FAR(t) = fraction of Real samples with score >= t   (accepted as fake)
//   FRR(t) = fraction of Fake samples with score <  t   (missed)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "padd/errors.hpp"

namespace padd {

enum class Label : std::uint8_t { kReal = 0, kFake = 1 };

inline const char* to_string(Label l) { return l == Label::kReal ? "real" : "fake"; }

struct ClassCounts {
  std::uint64_t n_real = 0;
  std::uint64_t n_fake = 0;

  static ClassCounts of(std::span<const Label> labels) {
    ClassCounts c;
    for (Label l : labels) (l == Label::kReal ? c.n_real : c.n_fake) += 1;
    return c;
  }
};

struct ClassWeights {
  double real = 1.0;
  double fake = 1.0;
  double of(Label l) const { return l == Label::kReal ? real : fake; }
};

/// Effective-number weights w_y = (1 - beta) / (1 - beta^n_y).
inline ClassWeights class_balanced_weights(ClassCounts counts, double beta) {
  if (!(beta >= 0.0 && beta < 1.0)) throw ConfigError("class_balanced_weights: beta must lie in [0, 1)");
  if (counts.n_real == 0 || counts.n_fake == 0)
    throw InputError("class_balanced_weights: both classes need at least one sample (real=" +
                     std::to_string(counts.n_real) + ", fake=" + std::to_string(counts.n_fake) + ")");
  auto w = [beta](std::uint64_t n) { return (1.0 - beta) / (1.0 - std::pow(beta, static_cast<double>(n))); };
  return {w(counts.n_real), w(counts.n_fake)};
}

/// Mean over the batch of w_{y_i} * -log softmax(logits_i)[y_i], for 2-way logits (real, fake).
inline double cb_cross_entropy(std::span<const double> logit_real, std::span<const double> logit_fake,
                               std::span<const Label> labels, ClassWeights weights) {
  if (labels.empty()) throw InputError("cb_cross_entropy: empty batch");
  if (logit_real.size() != labels.size() || logit_fake.size() != labels.size())
    throw ShapeError("cb_cross_entropy: logits and labels differ in length");
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double a = logit_real[i], b = logit_fake[i];
    const double mx = std::max(a, b);
    const double lse = mx + std::log(std::exp(a - mx) + std::exp(b - mx));
    const double target = labels[i] == Label::kReal ? a : b;
    total += weights.of(labels[i]) * (lse - target);
  }
  const double loss = total / static_cast<double>(labels.size());
  if (!std::isfinite(loss)) throw NumericError("cb_cross_entropy: non-finite loss");
  return loss;
}

struct DetPoint {
  double threshold = 0.0;  // +inf for the "reject everything" end point
  double far = 0.0;
  double frr = 0.0;
};

struct EERReport {
  double eer = 0.0;
  double threshold = 0.0;
  std::vector<DetPoint> det;
};

namespace detail {

inline void check_scores(std::span<const double> scores, std::span<const Label> labels) {
  if (scores.size() != labels.size()) throw ShapeError("EER: scores and labels differ in length");
  const ClassCounts c = ClassCounts::of(labels);
  if (c.n_real == 0 || c.n_fake == 0) throw InputError("EER: needs at least one Real and one Fake sample");
  for (double s : scores)
    if (!std::isfinite(s)) throw NumericError("EER: non-finite score");
}

}  // namespace detail

/// (FAR, FRR) at every distinct score used as a threshold, ascending, followed by
/// the +inf threshold where FAR = 0 and FRR = 1.
inline std::vector<DetPoint> det_points(std::span<const double> scores, std::span<const Label> labels) {
  detail::check_scores(scores, labels);
  std::vector<std::pair<double, Label>> items;
  items.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) items.emplace_back(scores[i], labels[i]);
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  const ClassCounts c = ClassCounts::of(labels);
  const double nr = static_cast<double>(c.n_real), nf = static_cast<double>(c.n_fake);

  std::vector<DetPoint> out;
  std::uint64_t real_below = 0, fake_below = 0;  // counts with score < current threshold
  std::size_t i = 0;
  while (i < items.size()) {
    const double t = items[i].first;
    out.push_back({t, static_cast<double>(c.n_real - real_below) / nr, static_cast<double>(fake_below) / nf});
    for (; i < items.size() && items[i].first == t; ++i) (items[i].second == Label::kReal ? real_below : fake_below)++;
  }
  out.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0});
  return out;
}

/// Equal error rate with linear interpolation between the bracketing DET points.
inline EERReport compute_eer(std::span<const double> scores, std::span<const Label> labels) {
  EERReport r;
  r.det = det_points(scores, labels);
  const auto& p = r.det;
  // FAR - FRR starts at 1 (lowest threshold) and ends at -1; find the first k with d_k <= 0.
  std::size_t k = 0;
  while (p[k].far - p[k].frr > 0.0) ++k;
  const double dk = p[k].far - p[k].frr;
  if (dk == 0.0 || k == 0) {
    r.eer = p[k].far;
    r.threshold = std::isfinite(p[k].threshold) ? p[k].threshold : p[k - 1].threshold;
    return r;
  }
  const double dprev = p[k - 1].far - p[k - 1].frr;
  const double alpha = dprev / (dprev - dk);
  r.eer = p[k - 1].far + alpha * (p[k].far - p[k - 1].far);
  r.threshold = std::isfinite(p[k].threshold) ? p[k - 1].threshold + alpha * (p[k].threshold - p[k - 1].threshold)
                                              : p[k - 1].threshold;
  return r;
}

}  // namespace padd
