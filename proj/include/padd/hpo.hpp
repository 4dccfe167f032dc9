#pragma once

// Seeded random search over (eta, lambda, batch, beta). Trial i draws its
// configuration from seed derive_seed(master, i), so records do not depend on
// the order in which trials are executed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "padd/errors.hpp"
#include "padd/rng.hpp"
#include "padd/trainer.hpp"

namespace padd {

struct SearchSpace {
  double eta_lo = 1e-6, eta_hi = 1e-4;        // log-uniform
  double lambda_lo = 5e-6, lambda_hi = 5e-4;  // log-uniform
  std::vector<std::size_t> batch_choices = {4, 8, 16};
  std::vector<double> beta_choices = {0.99, 0.999, 0.9999};

  void validate() const {
    if (!(eta_lo > 0.0 && eta_lo < eta_hi)) throw ConfigError("search space: need 0 < eta_lo < eta_hi");
    if (!(lambda_lo > 0.0 && lambda_lo < lambda_hi)) throw ConfigError("search space: need 0 < lambda_lo < lambda_hi");
    if (batch_choices.empty() || beta_choices.empty()) throw ConfigError("search space: empty choice set");
    for (auto b : batch_choices)
      if (b == 0) throw ConfigError("search space: batch choices must be positive");
    for (auto b : beta_choices)
      if (!(b >= 0.0 && b < 1.0)) throw ConfigError("search space: beta choices must lie in [0, 1)");
  }

  bool contains(const Hyperparams& hp) const {
    return hp.eta >= eta_lo && hp.eta <= eta_hi && hp.lambda >= lambda_lo && hp.lambda <= lambda_hi &&
           std::find(batch_choices.begin(), batch_choices.end(), hp.batch) != batch_choices.end() &&
           std::find(beta_choices.begin(), beta_choices.end(), hp.beta) != beta_choices.end();
  }

  /// Ranges for the larger self-supervised backbone.
  static SearchSpace w2v() { return {}; }

  /// Ranges for the encoder-decoder backbone: ten times smaller steps.
  static SearchSpace wsp() {
    SearchSpace s;
    s.eta_lo = 1e-7;
    s.eta_hi = 1e-5;
    s.lambda_lo = 1e-5;
    s.lambda_hi = 1e-3;
    return s;
  }

  /// Learning-rate range rescaled for the miniature detector trained for tens of epochs.
  static SearchSpace desk() {
    SearchSpace s;
    s.eta_lo = 1e-3;
    s.eta_hi = 3e-2;
    return s;
  }

  static SearchSpace named(const std::string& name) {
    if (name == "w2v") return w2v();
    if (name == "wsp") return wsp();
    if (name == "desk") return desk();
    throw ConfigError("unknown search space preset '" + name + "' (expected w2v, wsp or desk)");
  }
};

namespace detail {

inline double log_uniform(double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
  return std::clamp(std::exp(u(rng)), lo, hi);
}

}  // namespace detail

/// Draws eta and lambda log-uniformly and batch and beta uniformly from their
/// choice sets. Prompt length and epochs are copied from `base`.
inline Hyperparams sample_config(const SearchSpace& space, std::uint64_t seed, const Hyperparams& base = {}) {
  space.validate();
  Rng rng(mix_seed(seed));
  Hyperparams hp = base;
  hp.eta = detail::log_uniform(space.eta_lo, space.eta_hi, rng);
  hp.lambda = detail::log_uniform(space.lambda_lo, space.lambda_hi, rng);
  std::uniform_int_distribution<std::size_t> pick_b(0, space.batch_choices.size() - 1);
  hp.batch = space.batch_choices[pick_b(rng)];
  std::uniform_int_distribution<std::size_t> pick_beta(0, space.beta_choices.size() - 1);
  hp.beta = space.beta_choices[pick_beta(rng)];
  return hp;
}

struct TrialRecord {
  std::size_t trial = 0;
  Hyperparams hp;
  double dev_eer = 1.0;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
};

struct SearchResult {
  Hyperparams best;
  std::size_t best_trial = 0;
  double best_dev_eer = 1.0;
  std::vector<TrialRecord> trials;
};

using Objective = std::function<double(const Hyperparams&)>;

/// Evaluates `budget` sampled configurations and keeps the one with minimal dev
/// EER (earliest trial on ties). A trial whose objective throws scores 1.0.
inline SearchResult search(const SearchSpace& space, std::size_t budget, const Objective& objective,
                           std::uint64_t master_seed, const Hyperparams& base = {}) {
  space.validate();
  if (budget == 0) throw ConfigError("search: budget must be at least 1");
  SearchResult r;
  std::size_t failures = 0;
  for (std::size_t i = 0; i < budget; ++i) {
    TrialRecord t;
    t.trial = i;
    t.seed = derive_seed(master_seed, i);
    t.hp = sample_config(space, t.seed, base);
    try {
      t.dev_eer = objective(t.hp);
      if (!(t.dev_eer >= 0.0 && t.dev_eer <= 1.0)) throw NumericError("objective returned EER outside [0, 1]");
    } catch (const std::exception& e) {
      t.failed = true;
      t.error = e.what();
      t.dev_eer = 1.0;
      ++failures;
    }
    r.trials.push_back(std::move(t));
  }
  if (failures == budget) throw Error("hpo", "search: all " + std::to_string(budget) + " trials failed");
  bool have = false;
  for (const auto& t : r.trials) {
    if (t.failed) continue;
    if (!have || t.dev_eer < r.best_dev_eer) {
      have = true;
      r.best_dev_eer = t.dev_eer;
      r.best_trial = t.trial;
      r.best = t.hp;
    }
  }
  return r;
}

inline std::string format_trial_log(const std::vector<TrialRecord>& trials) {
  std::ostringstream os;
  os << "trial,eta,lambda,batch,beta,dev_eer,seed\n";
  char line[256];
  for (const auto& t : trials) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%zu,%.17g,%.17g,%llu\n", t.trial, t.hp.eta, t.hp.lambda,
                  t.hp.batch, t.hp.beta, t.dev_eer, static_cast<unsigned long long>(t.seed));
    os << line;
  }
  return os.str();
}

}  // namespace padd
