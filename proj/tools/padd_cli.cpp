// padd: command-line driver for data generation, training, search and reports.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "padd/checkpoint.hpp"
#include "padd/data.hpp"
#include "padd/errors.hpp"
#include "padd/experiments.hpp"
#include "padd/hpo.hpp"
#include "padd/trainer.hpp"

namespace fs = std::filesystem;
using namespace padd;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string out = "padd_out";
  std::string config;
  bool verbose = false;
};

struct HpFlags {
  Hyperparams hp;
  void add(CLI::App* app, bool with_prompt_len) {
    app->add_option("--eta", hp.eta, "learning rate")->capture_default_str();
    app->add_option("--lambda", hp.lambda, "decoupled weight decay")->capture_default_str();
    app->add_option("--batch", hp.batch, "batch size")->capture_default_str();
    app->add_option("--beta", hp.beta, "class-balance beta")->capture_default_str();
    app->add_option("--epochs", hp.epochs, "training epochs")->capture_default_str();
    if (with_prompt_len) app->add_option("--n-p", hp.n_p, "prompt length")->capture_default_str();
  }
};

ExperimentConfig load_config(const Globals& g) {
  ExperimentConfig cfg = g.config.empty() ? ExperimentConfig{} : load_experiment_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  return cfg;
}

std::uint64_t seed_of(const Globals& g) { return g.seed.value_or(0); }

void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(FormatErrorKind::kIo, "cannot write '" + p.string() + "'");
  out << s;
}

std::string history_csv(const AdaptResult& r) {
  std::ostringstream os;
  os << "epoch,train_loss,dev_eer\n";
  char line[96];
  for (const auto& h : r.history) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g\n", h.epoch, h.train_loss, h.dev_eer);
    os << line;
  }
  return os.str();
}

void print_error(const std::string& code, const std::string& message) {
  nlohmann::json j = {{"error", code}, {"message", message}};
  std::cerr << j.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt-tuned audio deepfake detection at desk scale"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "master seed (overrides the config file)");
  app.add_option("--out", g.out, "output directory")->capture_default_str();
  app.add_option("--config", g.config, "JSON experiment configuration")->check(CLI::ExistingFile);
  app.add_flag("--verbose", g.verbose, "per-epoch progress on stderr");

  // generate-data
  auto* gen = app.add_subcommand("generate-data", "synthesize a labeled dataset and write PDDS files");
  std::string gen_domain = "source", gen_name, gen_artifact;
  double gen_shift = 0.6;
  std::size_t gen_real = 300, gen_fake = 900;
  bool gen_no_split = false;
  std::array<double, 3> gen_fractions = {0.6, 0.2, 0.2};
  gen->add_option("--domain", gen_domain, "source or target")->check(CLI::IsMember({"source", "target"}));
  gen->add_option("--shift", gen_shift, "target shift strength in [0, 1]")->capture_default_str();
  gen->add_option("--artifact", gen_artifact, "override the fake artifact");
  gen->add_option("--n-real", gen_real)->capture_default_str();
  gen->add_option("--n-fake", gen_fake)->capture_default_str();
  gen->add_option("--name", gen_name, "file stem (defaults to the domain)");
  gen->add_option("--fractions", gen_fractions, "train/dev/eval fractions")->expected(3);
  gen->add_flag("--no-split", gen_no_split, "write one unsplit file");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "train every parameter on source data");
  std::string pre_train, pre_dev;
  HpFlags pre_hp;
  pre_hp.hp = ExperimentConfig{}.pretrain;
  pre->add_option("--dataset", pre_train, "training PDDS file")->required()->check(CLI::ExistingFile);
  pre->add_option("--dev", pre_dev, "development PDDS file")->required()->check(CLI::ExistingFile);
  pre_hp.add(pre, false);

  // adapt
  auto* ad = app.add_subcommand("adapt", "adapt a checkpoint to target data in one regime");
  std::string ad_ckpt, ad_train, ad_dev, ad_regime = "A";
  std::size_t ad_size = 0;
  HpFlags ad_hp;
  ad_hp.hp.epochs = 20;
  ad->add_option("--checkpoint", ad_ckpt)->required()->check(CLI::ExistingFile);
  ad->add_option("--dataset", ad_train, "target training PDDS file")->required()->check(CLI::ExistingFile);
  ad->add_option("--dev", ad_dev, "target development PDDS file")->required()->check(CLI::ExistingFile);
  ad->add_option("--regime", ad_regime, "A, A-noPT, B, B-noPT, C or C-noPT")->capture_default_str();
  ad->add_option("--size", ad_size, "stratified subsample of the training file (0 = all)");
  ad_hp.add(ad, true);

  // eval
  auto* ev = app.add_subcommand("eval", "EER of a checkpoint on a dataset");
  std::string ev_ckpt, ev_data;
  ev->add_option("--checkpoint", ev_ckpt)->required()->check(CLI::ExistingFile);
  ev->add_option("--dataset", ev_data)->required()->check(CLI::ExistingFile);

  // hpo
  auto* hp = app.add_subcommand("hpo", "random search over adaptation hyperparameters");
  std::string hp_ckpt, hp_train, hp_dev, hp_regime = "A", hp_space = "desk";
  std::size_t hp_budget = 50;
  HpFlags hp_base;
  hp_base.hp.epochs = 20;
  hp->add_option("--checkpoint", hp_ckpt)->required()->check(CLI::ExistingFile);
  hp->add_option("--dataset", hp_train)->required()->check(CLI::ExistingFile);
  hp->add_option("--dev", hp_dev)->required()->check(CLI::ExistingFile);
  hp->add_option("--regime", hp_regime)->capture_default_str();
  hp->add_option("--space", hp_space, "w2v, wsp or desk")->capture_default_str();
  hp->add_option("--budget", hp_budget)->capture_default_str();
  hp->add_option("--epochs", hp_base.hp.epochs)->capture_default_str();
  hp->add_option("--n-p", hp_base.hp.n_p)->capture_default_str();

  auto* abl_p = app.add_subcommand("ablate-prompt-length", "prompt-length grid over modes A, B, C");
  auto* abl_s = app.add_subcommand("ablate-sample-size", "target-size grid over all six regimes");
  auto* run = app.add_subcommand("run", "full experiment from the configuration");

  auto* rep = app.add_subcommand("report", "render a results CSV");
  std::string rep_in, rep_format = "markdown";
  rep->add_option("--results", rep_in, "results.csv (defaults to <out>/results.csv)");
  rep->add_option("--format", rep_format, "csv or markdown")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }

  std::ostream* progress = g.verbose ? &std::cerr : nullptr;
  TrainOptions topts;
  topts.progress = progress;

  try {
    const fs::path out = g.out;
    if (*gen) {
      DomainConfig d = gen_domain == "source" ? DomainConfig::source() : DomainConfig::target(gen_shift);
      if (!g.config.empty()) {
        const ModelConfig mc = load_config(g).model;
        d.delta = mc.delta;
      }
      if (!gen_artifact.empty()) d.artifact = parse_artifact(gen_artifact);
      d.validate();
      const std::string stem = gen_name.empty() ? gen_domain : gen_name;
      const LabeledDataset ds = synth_generate(d, gen_real, gen_fake, derive_seed(seed_of(g), 1));
      if (gen_no_split) {
        write_dataset(ds, out / (stem + ".pdds"));
        std::cout << "wrote " << (out / (stem + ".pdds")).string() << " n=" << ds.size() << '\n';
      } else {
        const DatasetSplits s = split(ds, gen_fractions, derive_seed(seed_of(g), 2));
        for (const auto& [tag, part] : {std::pair{"train", &s.train}, {"dev", &s.dev}, {"eval", &s.eval}}) {
          const fs::path p = out / (stem + "_" + tag + ".pdds");
          write_dataset(*part, p);
          std::cout << "wrote " << p.string() << " n=" << part->size() << '\n';
        }
      }
    } else if (*pre) {
      const ExperimentConfig cfg = load_config(g);
      // flags given explicitly win over the config file
      Hyperparams h = cfg.pretrain;
      if (pre->count("--eta")) h.eta = pre_hp.hp.eta;
      if (pre->count("--lambda")) h.lambda = pre_hp.hp.lambda;
      if (pre->count("--batch")) h.batch = pre_hp.hp.batch;
      if (pre->count("--beta")) h.beta = pre_hp.hp.beta;
      if (pre->count("--epochs")) h.epochs = pre_hp.hp.epochs;
      const auto r = pretrain_source(cfg.model, read_dataset(pre_train), read_dataset(pre_dev), h,
                                     derive_seed(seed_of(g), 3), topts);
      save_checkpoint(r.best_registry, out / "source.padd");
      write_text(out / "pretrain.csv", history_csv(r));
      std::printf("best_epoch=%zu dev_eer=%.6f checkpoint=%s\n", r.best_epoch, r.best_dev_eer,
                  (out / "source.padd").string().c_str());
    } else if (*ad) {
      const ParamRegistry base = load_checkpoint(ad_ckpt);
      LabeledDataset train = read_dataset(ad_train);
      if (ad_size) train = subsample_target(train, ad_size, derive_seed(seed_of(g), 4));
      const Regime regime = Regime::parse(ad_regime);
      const auto r = adapt(base, regime, train, read_dataset(ad_dev), ad_hp.hp, seed_of(g), topts);
      const fs::path ck = out / ("adapted_" + regime.name() + ".padd");
      save_checkpoint(r.best_registry, ck);
      write_text(out / ("adapt_" + regime.name() + ".csv"), history_csv(r));
      const ParamCount pc = count_params(r.best_registry, regime.mode, regime.with_prompt);
      std::printf("regime=%s best_epoch=%zu dev_eer=%.6f params=%llu ratio=%.9g checkpoint=%s\n",
                  regime.name().c_str(), r.best_epoch, r.best_dev_eer, static_cast<unsigned long long>(pc.count),
                  pc.ratio, ck.string().c_str());
    } else if (*ev) {
      const EERReport r = evaluate(load_checkpoint(ev_ckpt), read_dataset(ev_data));
      std::printf("eer=%.6f threshold=%.9g\n", r.eer, r.threshold);
    } else if (*hp) {
      const ParamRegistry base = load_checkpoint(hp_ckpt);
      const LabeledDataset train = read_dataset(hp_train), dev = read_dataset(hp_dev);
      const Regime regime = Regime::parse(hp_regime);
      if (regime.zero_shot()) throw ConfigError("hpo: regime A-noPT has nothing to tune");
      const std::uint64_t train_seed = derive_seed(seed_of(g), 0x51);
      Objective obj = [&](const Hyperparams& h) { return adapt(base, regime, train, dev, h, train_seed).best_dev_eer; };
      const SearchResult sr = search(SearchSpace::named(hp_space), hp_budget, obj, seed_of(g), hp_base.hp);
      write_text(out / "trials.csv", format_trial_log(sr.trials));
      std::printf("best_trial=%zu dev_eer=%.6f eta=%.9g lambda=%.9g batch=%zu beta=%.9g\n", sr.best_trial,
                  sr.best_dev_eer, sr.best.eta, sr.best.lambda, sr.best.batch, sr.best.beta);
    } else if (*abl_p || *abl_s || *run) {
      ExperimentConfig cfg = load_config(g);
      if (*abl_p) cfg = prompt_length_ablation(cfg);
      if (*abl_s) cfg = sample_size_ablation(cfg);
      RunOptions ro;
      ro.log = &std::cerr;
      ro.verbose = g.verbose;
      const ResultTable t = run_experiment(cfg, out, ro);
      std::cout << render_markdown(t);
    } else if (*rep) {
      const fs::path in = rep_in.empty() ? out / "results.csv" : fs::path(rep_in);
      const auto bytes = io::read_file(in);
      std::cout << report(parse_results_csv(std::string(bytes.begin(), bytes.end())), rep_format);
    }
  } catch (const FormatError& e) {
    print_error("format", e.what());
    return 1;
  } catch (const Error& e) {
    print_error(e.code(), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 0;
}
