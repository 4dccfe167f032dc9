#pragma once

// Experiment orchestration: pre-train on the source domain, then for every
// (regime, target, |D_T|, N_P) cell run hyperparameter search on the target
// dev split followed by n_seeds adaptation runs at the selected
// configuration, and aggregate eval EERs into a result table.
//
// Output directory layout:
//   config.json                  normalized configuration
//   data/*.pdds                  every generated dataset
//   checkpoints/source.padd      pre-trained detector
//   logs/pretrain.csv            epoch,train_loss,dev_eer
//   cells/<cell>/trials.csv      hyperparameter search log
//   cells/<cell>/seeds.csv       per-seed EERs
//   cells/<cell>/seed<k>.padd    per-seed best checkpoints
//   results.csv, results.md

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "padd/checkpoint.hpp"
#include "padd/data.hpp"
#include "padd/errors.hpp"
#include "padd/hpo.hpp"
#include "padd/metrics.hpp"
#include "padd/model.hpp"
#include "padd/trainer.hpp"

namespace padd {

struct TargetSpec {
  std::string name;
  DomainConfig domain;
  std::size_t n_real = 300;
  std::size_t n_fake = 900;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  DomainConfig source = DomainConfig::source();
  std::size_t source_real = 300;
  std::size_t source_fake = 900;
  std::array<double, 3> fractions = {0.6, 0.2, 0.2};
  Hyperparams pretrain{2e-3, 1e-4, 16, 0.99, 0, 10};
  std::vector<TargetSpec> targets = {{"shift0.6", DomainConfig::target(0.6), 300, 900}};
  std::vector<Regime> regimes = all_regimes();
  std::vector<std::size_t> target_sizes = {50};
  std::vector<std::size_t> prompt_lengths = {5};
  std::size_t n_seeds = 12;
  std::size_t hpo_budget = 50;
  std::string search_space = "desk";
  std::size_t adapt_epochs = 20;

  /// Table order: each mode without, then with, the prompt.
  static std::vector<Regime> all_regimes() {
    return {{TuningMode::kA, false}, {TuningMode::kA, true}, {TuningMode::kB, false},
            {TuningMode::kB, true},  {TuningMode::kC, false}, {TuningMode::kC, true}};
  }

  void validate() const {
    model.validate();
    if (regimes.empty()) throw ConfigError("experiment config: regimes must not be empty");
    if (n_seeds == 0) throw ConfigError("experiment config: n_seeds must be at least 1");
    if (hpo_budget == 0) throw ConfigError("experiment config: hpo_budget must be at least 1");
    if (adapt_epochs == 0) throw ConfigError("experiment config: adapt_epochs must be at least 1");
    if (targets.empty()) throw ConfigError("experiment config: at least one target is required");
    if (target_sizes.empty()) throw ConfigError("experiment config: target_sizes must not be empty");
    for (auto s : target_sizes)
      if (s < 2) throw ConfigError("experiment config: target sizes must be at least 2");
    bool any_prompt = std::any_of(regimes.begin(), regimes.end(), [](const Regime& r) { return r.with_prompt; });
    if (any_prompt && prompt_lengths.empty()) throw ConfigError("experiment config: prompt_lengths must not be empty");
    for (auto p : prompt_lengths)
      if (p == 0) throw ConfigError("experiment config: prompt lengths must be positive");
    std::set<std::string> names;
    for (const auto& t : targets) {
      if (t.name.empty() || t.name.find_first_of(",/\\ \t\n") != std::string::npos)
        throw ConfigError("experiment config: target name '" + t.name + "' must be non-empty without separators");
      if (!names.insert(t.name).second) throw ConfigError("experiment config: duplicate target '" + t.name + "'");
      if (t.domain.delta != model.delta) throw ConfigError("experiment config: target delta differs from model delta");
      t.domain.validate();
    }
    if (source.delta != model.delta) throw ConfigError("experiment config: source delta differs from model delta");
    source.validate();
    pretrain.validate();
    SearchSpace::named(search_space).validate();
  }
};

// ---------------------------------------------------------------------------
// JSON configuration

namespace detail {

using nlohmann::json;

inline void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find_if(keys.begin(), keys.end(), [&](const char* k) { return it.key() == k; }) == keys.end())
      throw ConfigError(where + ": unknown key '" + it.key() + "'");
}

template <typename T>
void read_opt(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

inline json domain_to_json(const DomainConfig& d) {
  return {{"freq_lo", d.freq_lo}, {"freq_hi", d.freq_hi}, {"noise_level", d.noise_level},
          {"artifact", to_string(d.artifact)}, {"shift", d.shift}};
}

inline DomainConfig domain_from_json(const json& j, DomainConfig d, const std::string& where) {
  reject_unknown(j, {"freq_lo", "freq_hi", "noise_level", "artifact", "shift"}, where);
  read_opt(j, "freq_lo", d.freq_lo, where);
  read_opt(j, "freq_hi", d.freq_hi, where);
  read_opt(j, "noise_level", d.noise_level, where);
  read_opt(j, "shift", d.shift, where);
  if (j.contains("artifact")) {
    std::string a;
    read_opt(j, "artifact", a, where);
    d.artifact = parse_artifact(a);
  }
  return d;
}

inline json hp_to_json(const Hyperparams& h) {
  return {{"eta", h.eta}, {"lambda", h.lambda}, {"batch", h.batch}, {"beta", h.beta}, {"epochs", h.epochs}};
}

inline Hyperparams hp_from_json(const json& j, Hyperparams h, const std::string& where) {
  reject_unknown(j, {"eta", "lambda", "batch", "beta", "epochs"}, where);
  read_opt(j, "eta", h.eta, where);
  read_opt(j, "lambda", h.lambda, where);
  read_opt(j, "batch", h.batch, where);
  read_opt(j, "beta", h.beta, where);
  read_opt(j, "epochs", h.epochs, where);
  return h;
}

}  // namespace detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
  using nlohmann::json;
  json conv = json::array();
  for (const auto& cv : c.model.conv) conv.push_back({cv.kernel, cv.stride, cv.channels});
  json targets = json::array();
  for (const auto& t : c.targets)
    targets.push_back(
        {{"name", t.name}, {"domain", detail::domain_to_json(t.domain)}, {"n_real", t.n_real}, {"n_fake", t.n_fake}});
  json regimes = json::array();
  for (const auto& r : c.regimes) regimes.push_back(r.name());
  return {
      {"seed", c.seed},
      {"model",
       {{"d", c.model.d},
        {"n_layers", c.model.n_layers},
        {"n_heads", c.model.n_heads},
        {"conv", conv},
        {"head_hidden", c.model.head_hidden},
        {"ff_hidden", c.model.ff_hidden},
        {"delta", c.model.delta}}},
      {"source", {{"domain", detail::domain_to_json(c.source)}, {"n_real", c.source_real}, {"n_fake", c.source_fake}}},
      {"fractions", c.fractions},
      {"pretrain", detail::hp_to_json(c.pretrain)},
      {"targets", targets},
      {"regimes", regimes},
      {"target_sizes", c.target_sizes},
      {"prompt_lengths", c.prompt_lengths},
      {"n_seeds", c.n_seeds},
      {"hpo_budget", c.hpo_budget},
      {"search_space", c.search_space},
      {"adapt_epochs", c.adapt_epochs},
  };
}

/// Fields missing from the JSON keep their defaults.
inline ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  using detail::read_opt;
  ExperimentConfig c;
  const std::string w = "config";
  detail::reject_unknown(j,
                         {"seed", "model", "source", "fractions", "pretrain", "targets", "regimes", "target_sizes",
                          "prompt_lengths", "n_seeds", "hpo_budget", "search_space", "adapt_epochs"},
                         w);
  read_opt(j, "seed", c.seed, w);
  if (j.contains("model")) {
    const auto& m = j.at("model");
    detail::reject_unknown(m, {"d", "n_layers", "n_heads", "conv", "head_hidden", "ff_hidden", "delta"}, w + ".model");
    read_opt(m, "d", c.model.d, w + ".model");
    read_opt(m, "n_layers", c.model.n_layers, w + ".model");
    read_opt(m, "n_heads", c.model.n_heads, w + ".model");
    read_opt(m, "head_hidden", c.model.head_hidden, w + ".model");
    read_opt(m, "ff_hidden", c.model.ff_hidden, w + ".model");
    read_opt(m, "delta", c.model.delta, w + ".model");
    if (m.contains("conv")) {
      std::vector<std::array<std::size_t, 3>> conv;
      read_opt(m, "conv", conv, w + ".model");
      c.model.conv.clear();
      for (const auto& a : conv) c.model.conv.push_back({a[0], a[1], a[2]});
    }
  }
  c.source.delta = c.model.delta;
  if (j.contains("source")) {
    const auto& s = j.at("source");
    detail::reject_unknown(s, {"domain", "n_real", "n_fake"}, w + ".source");
    if (s.contains("domain")) c.source = detail::domain_from_json(s.at("domain"), c.source, w + ".source.domain");
    read_opt(s, "n_real", c.source_real, w + ".source");
    read_opt(s, "n_fake", c.source_fake, w + ".source");
  }
  read_opt(j, "fractions", c.fractions, w);
  if (j.contains("pretrain")) c.pretrain = detail::hp_from_json(j.at("pretrain"), c.pretrain, w + ".pretrain");
  if (j.contains("targets")) {
    c.targets.clear();
    const auto& arr = j.at("targets");
    if (!arr.is_array()) throw ConfigError(w + ".targets: expected an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const auto& t = arr[i];
      const std::string tw = w + ".targets[" + std::to_string(i) + "]";
      detail::reject_unknown(t, {"name", "domain", "n_real", "n_fake"}, tw);
      TargetSpec spec;
      spec.domain = DomainConfig::target(0.6, c.model.delta);
      read_opt(t, "name", spec.name, tw);
      if (t.contains("domain")) spec.domain = detail::domain_from_json(t.at("domain"), spec.domain, tw + ".domain");
      read_opt(t, "n_real", spec.n_real, tw);
      read_opt(t, "n_fake", spec.n_fake, tw);
      c.targets.push_back(std::move(spec));
    }
  } else {
    for (auto& t : c.targets) t.domain.delta = c.model.delta;
  }
  if (j.contains("regimes")) {
    std::vector<std::string> names;
    read_opt(j, "regimes", names, w);
    c.regimes.clear();
    for (const auto& n : names) c.regimes.push_back(Regime::parse(n));
  }
  read_opt(j, "target_sizes", c.target_sizes, w);
  read_opt(j, "prompt_lengths", c.prompt_lengths, w);
  read_opt(j, "n_seeds", c.n_seeds, w);
  read_opt(j, "hpo_budget", c.hpo_budget, w);
  read_opt(j, "search_space", c.search_space, w);
  read_opt(j, "adapt_epochs", c.adapt_epochs, w);
  c.validate();
  return c;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file '" + path.string() + "': " + e.what());
  }
  return experiment_config_from_json(j);
}

/// Prompt-length ablation grid: modes A, B, C with prompt, N_P in {1, 5, 10, 100}, |D_T| = 50.
inline ExperimentConfig prompt_length_ablation(ExperimentConfig c) {
  c.regimes = {{TuningMode::kA, true}, {TuningMode::kB, true}, {TuningMode::kC, true}};
  c.prompt_lengths = {1, 5, 10, 100};
  c.target_sizes = {50};
  return c;
}

/// Sample-size ablation grid: all six regimes, |D_T| in {10, 50, 100, 1000}, N_P = 5.
inline ExperimentConfig sample_size_ablation(ExperimentConfig c) {
  c.regimes = ExperimentConfig::all_regimes();
  c.target_sizes = {10, 50, 100, 1000};
  c.prompt_lengths = {5};
  return c;
}

// ---------------------------------------------------------------------------
// Result table

struct ResultRow {
  Regime regime;
  std::string target;
  std::size_t size = 0;
  std::size_t n_p = 0;  // 0 for regimes without a prompt
  double mean_eer = 0.0;
  double std_eer = 0.0;
  std::size_t n_seeds = 0;
  std::uint64_t params = 0;
  double ratio = 0.0;
  bool complete = true;
};

struct ResultTable {
  std::vector<ResultRow> rows;
};

namespace detail {

inline int regime_rank(const Regime& r) {
  return static_cast<int>(r.mode) * 2 + (r.with_prompt ? 1 : 0);
}

inline void sort_rows(std::vector<ResultRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
    return std::tuple(regime_rank(a.regime), a.target, a.size, a.n_p) <
           std::tuple(regime_rank(b.regime), b.target, b.size, b.n_p);
  });
}

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace detail

inline constexpr char kResultsHeader[] = "regime,target,size,n_p,mean_eer,std_eer,n_seeds,params,ratio";

inline std::string render_csv(const ResultTable& table) {
  auto rows = table.rows;
  detail::sort_rows(rows);
  std::ostringstream os;
  os << kResultsHeader << '\n';
  for (const auto& r : rows) {
    os << r.regime.name() << ',' << r.target << ',' << r.size << ',' << r.n_p << ','
       << detail::fmt("%.6f", r.mean_eer) << ',' << detail::fmt("%.6f", r.std_eer) << ',' << r.n_seeds << ','
       << r.params << ',' << detail::fmt("%.9g", r.ratio) << '\n';
  }
  return os.str();
}

inline ResultTable parse_results_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kResultsHeader)
    throw FormatError(FormatErrorKind::kCorruptHeader, "results CSV must start with '" + std::string(kResultsHeader) + "'");
  ResultTable t;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 9)
      throw FormatError(FormatErrorKind::kCorruptPayload, "line " + std::to_string(lineno) + ": expected 9 fields");
    try {
      ResultRow r;
      r.regime = Regime::parse(f[0]);
      r.target = f[1];
      r.size = std::stoull(f[2]);
      r.n_p = std::stoull(f[3]);
      r.mean_eer = std::stod(f[4]);
      r.std_eer = std::stod(f[5]);
      r.n_seeds = std::stoull(f[6]);
      r.params = std::stoull(f[7]);
      r.ratio = std::stod(f[8]);
      t.rows.push_back(r);
    } catch (const std::logic_error& e) {
      throw FormatError(FormatErrorKind::kCorruptPayload, "line " + std::to_string(lineno) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw FormatError(FormatErrorKind::kCorruptPayload, "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return t;
}

/// Markdown table. Within each (mode, target, size) group, a prompt row is bold
/// when its mean EER is strictly below the matching no-prompt row; the no-prompt
/// row is bold when strictly below every prompt row it is paired with.
inline std::string render_markdown(const ResultTable& table) {
  auto rows = table.rows;
  detail::sort_rows(rows);
  auto partner_key = [](const ResultRow& r) { return std::tuple(static_cast<int>(r.regime.mode), r.target, r.size); };
  std::map<std::tuple<int, std::string, std::size_t>, std::vector<const ResultRow*>> with, without;
  for (const auto& r : rows) (r.regime.with_prompt ? with : without)[partner_key(r)].push_back(&r);

  std::ostringstream os;
  os << "| regime | target | size | n_p | EER % (std) | params | ratio % |\n";
  os << "|---|---|---:|---:|---:|---:|---:|\n";
  for (const auto& r : rows) {
    bool bold = false;
    const auto key = partner_key(r);
    if (r.regime.with_prompt) {
      auto it = without.find(key);
      bold = it != without.end() && r.mean_eer < it->second.front()->mean_eer;
    } else {
      auto it = with.find(key);
      if (it != with.end()) {
        bold = true;
        for (const ResultRow* p : it->second) bold = bold && r.mean_eer < p->mean_eer;
      }
    }
    std::string eer = detail::fmt("%.2f", 100.0 * r.mean_eer) + " (" + detail::fmt("%.2f", 100.0 * r.std_eer) + ")";
    if (bold) eer = "**" + eer + "**";
    if (!r.complete) eer += " (incomplete)";
    os << "| " << r.regime.name() << " | " << r.target << " | " << r.size << " | " << r.n_p << " | " << eer << " | "
       << r.params << " | " << detail::fmt("%.6g", 100.0 * r.ratio) << " |\n";
  }
  return os.str();
}

inline std::string report(const ResultTable& table, const std::string& format) {
  if (table.rows.empty()) throw InputError("report: table is empty");
  if (format == "csv") return render_csv(table);
  if (format == "markdown" || format == "md") return render_markdown(table);
  throw ConfigError("report: unknown format '" + format + "' (expected csv or markdown)");
}

// ---------------------------------------------------------------------------
// Running

struct RunOptions {
  std::ostream* log = nullptr;  // progress lines
  bool verbose = false;         // per-epoch lines as well
};

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrorKind::kIo, "cannot write '" + path.string() + "'");
  out << text;
}

inline std::string history_csv(const AdaptResult& r) {
  std::ostringstream os;
  os << "epoch,train_loss,dev_eer\n";
  for (const auto& h : r.history) os << h.epoch << ',' << fmt("%.17g", h.train_loss) << ',' << fmt("%.17g", h.dev_eer) << '\n';
  return os.str();
}

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size()))};
}

}  // namespace detail

/// Trainable-parameter count for a cell; prompt regimes use an N_P-column prompt.
inline ParamCount cell_param_count(const ParamRegistry& pretrained, Regime regime, std::size_t n_p) {
  ParamRegistry reg = pretrained;
  reg.clear_prompt();
  if (regime.with_prompt) reg.set_prompt(Prompt{Tensor({reg.config().d, n_p})});
  return count_params(reg, regime.mode, regime.with_prompt);
}

inline ResultTable run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out,
                                  const RunOptions& opts = {}) {
  namespace fs = std::filesystem;
  cfg.validate();
  fs::create_directories(out);
  detail::write_text(out / "config.json", to_json(cfg).dump(2) + "\n");
  auto say = [&](const std::string& s) {
    if (opts.log) *opts.log << s << '\n' << std::flush;
  };
  TrainOptions train_opts;
  if (opts.verbose) train_opts.progress = opts.log;

  // Source domain and pre-training.
  const LabeledDataset source = synth_generate(cfg.source, cfg.source_real, cfg.source_fake, derive_seed(cfg.seed, 1));
  const DatasetSplits src = split(source, cfg.fractions, derive_seed(cfg.seed, 2));
  write_dataset(src.train, out / "data" / "source_train.pdds");
  write_dataset(src.dev, out / "data" / "source_dev.pdds");
  write_dataset(src.eval, out / "data" / "source_eval.pdds");
  say("pretraining on " + std::to_string(src.train.size()) + " source samples");
  const AdaptResult pre = pretrain_source(cfg.model, src.train, src.dev, cfg.pretrain, derive_seed(cfg.seed, 3), train_opts);
  const ParamRegistry& base = pre.best_registry;
  save_checkpoint(base, out / "checkpoints" / "source.padd");
  detail::write_text(out / "logs" / "pretrain.csv", detail::history_csv(pre));
  say("source dev EER " + detail::fmt("%.4f", pre.best_dev_eer));

  const SearchSpace space = SearchSpace::named(cfg.search_space);
  ResultTable table;
  for (std::size_t ti = 0; ti < cfg.targets.size(); ++ti) {
    const TargetSpec& target = cfg.targets[ti];
    const LabeledDataset pool =
        synth_generate(target.domain, target.n_real, target.n_fake, derive_seed(cfg.seed, 100 + ti));
    const DatasetSplits tgt = split(pool, cfg.fractions, derive_seed(cfg.seed, 200 + ti));
    write_dataset(tgt.train, out / "data" / (target.name + "_train.pdds"));
    write_dataset(tgt.dev, out / "data" / (target.name + "_dev.pdds"));
    write_dataset(tgt.eval, out / "data" / (target.name + "_eval.pdds"));
    const double zero_shot = evaluate(base, tgt.eval).eer;

    for (std::size_t size : cfg.target_sizes) {
      const LabeledDataset dt = subsample_target(tgt.train, size, derive_seed(cfg.seed, 300 + ti * 7919 + size));
      write_dataset(dt, out / "data" / (target.name + "_n" + std::to_string(size) + ".pdds"));

      for (const Regime& regime : cfg.regimes) {
        const std::vector<std::size_t> lengths =
            regime.with_prompt ? cfg.prompt_lengths : std::vector<std::size_t>{0};
        for (std::size_t n_p : lengths) {
          ResultRow row;
          row.regime = regime;
          row.target = target.name;
          row.size = size;
          row.n_p = n_p;
          const ParamCount pc = cell_param_count(base, regime, n_p);
          row.params = pc.count;
          row.ratio = pc.ratio;
          const std::string cell = regime.name() + "_" + target.name + "_n" + std::to_string(size) + "_p" +
                                   std::to_string(n_p);
          const fs::path dir = out / "cells" / cell;
          say("cell " + cell);

          std::vector<double> eers;
          std::ostringstream seeds_log;
          seeds_log << "seed_index,seed,dev_eer,eval_eer,best_epoch\n";
          if (regime.zero_shot()) {
            const double dev = evaluate(base, tgt.dev).eer;
            for (std::size_t k = 0; k < cfg.n_seeds; ++k) {
              eers.push_back(zero_shot);
              seeds_log << k << ',' << derive_seed(cfg.seed, 1000 + k) << ',' << detail::fmt("%.17g", dev) << ','
                        << detail::fmt("%.17g", zero_shot) << ",0\n";
            }
          } else {
            Hyperparams base_hp;
            base_hp.n_p = n_p;
            base_hp.epochs = cfg.adapt_epochs;
            const std::uint64_t hpo_seed = derive_seed(cfg.seed, 400 + ti);
            Hyperparams best = base_hp;
            try {
              const std::uint64_t train_seed = derive_seed(hpo_seed, 0x51);
              Objective objective = [&](const Hyperparams& hp) {
                return adapt(base, regime, dt, tgt.dev, hp, train_seed).best_dev_eer;
              };
              const SearchResult sr = search(space, cfg.hpo_budget, objective, hpo_seed, base_hp);
              detail::write_text(dir / "trials.csv", format_trial_log(sr.trials));
              best = sr.best;
            } catch (const Error& e) {
              say("  hyperparameter search failed: " + std::string(e.what()));
              row.complete = false;
            }
            if (row.complete) {
              for (std::size_t k = 0; k < cfg.n_seeds; ++k) {
                const std::uint64_t seed = derive_seed(cfg.seed, 1000 + k);
                try {
                  const AdaptResult r = adapt(base, regime, dt, tgt.dev, best, seed, train_opts);
                  const double eer = evaluate(r.best_registry, tgt.eval).eer;
                  eers.push_back(eer);
                  save_checkpoint(r.best_registry, dir / ("seed" + std::to_string(k) + ".padd"));
                  seeds_log << k << ',' << seed << ',' << detail::fmt("%.17g", r.best_dev_eer) << ','
                            << detail::fmt("%.17g", eer) << ',' << r.best_epoch << '\n';
                } catch (const Error& e) {
                  say("  seed " + std::to_string(k) + " failed: " + e.what());
                  row.complete = false;
                }
              }
            }
          }
          detail::write_text(dir / "seeds.csv", seeds_log.str());
          const auto [m, s] = detail::mean_std(eers);
          row.mean_eer = m;
          row.std_eer = s;
          row.n_seeds = eers.size();
          table.rows.push_back(row);
        }
      }
    }
  }
  detail::sort_rows(table.rows);
  detail::write_text(out / "results.csv", render_csv(table));
  detail::write_text(out / "results.md", render_markdown(table));
  return table;
}

}  // namespace padd
