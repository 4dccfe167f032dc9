#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "padd/experiments.hpp"

using namespace padd;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_experiment() {
  ExperimentConfig c;
  c.seed = 21;
  c.model = test::tiny_config();
  c.source = DomainConfig::source(c.model.delta);
  c.source_real = 20;
  c.source_fake = 40;
  c.pretrain.epochs = 2;
  c.pretrain.batch = 8;
  c.pretrain.eta = 5e-3;
  c.targets = {{"t6", DomainConfig::target(0.6, c.model.delta), 30, 60}};
  c.regimes = {Regime::parse("A-noPT"), Regime::parse("A"), Regime::parse("B-noPT")};
  c.target_sizes = {10};
  c.prompt_lengths = {2};
  c.n_seeds = 2;
  c.hpo_budget = 2;
  c.adapt_epochs = 1;
  return c;
}

ResultRow row(const char* regime, double mean, std::size_t n_p = 0, std::size_t size = 50) {
  ResultRow r;
  r.regime = Regime::parse(regime);
  r.target = "t";
  r.size = size;
  r.n_p = n_p;
  r.mean_eer = mean;
  r.std_eer = 0.01;
  r.n_seeds = 12;
  r.params = 10;
  r.ratio = 0.5;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace

TEST(Config, JsonRoundTrip) {
  const ExperimentConfig c = tiny_experiment();
  const ExperimentConfig back = experiment_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
  EXPECT_EQ(back.regimes, c.regimes);
  EXPECT_EQ(back.model, c.model);
}

TEST(Config, DefaultsFillMissingFields) {
  const ExperimentConfig c = experiment_config_from_json(nlohmann::json::parse(R"({"n_seeds": 3})"));
  EXPECT_EQ(c.n_seeds, 3u);
  EXPECT_EQ(c.hpo_budget, 50u);
  EXPECT_EQ(c.regimes.size(), 6u);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  using nlohmann::json;
  EXPECT_THROW(experiment_config_from_json(json::parse(R"({"n_sedes": 3})")), ConfigError);
  EXPECT_THROW(experiment_config_from_json(json::parse(R"({"n_seeds": 0})")), ConfigError);
  EXPECT_THROW(experiment_config_from_json(json::parse(R"({"regimes": []})")), ConfigError);
  EXPECT_THROW(experiment_config_from_json(json::parse(R"({"regimes": ["Z"]})")), ConfigError);
  EXPECT_THROW(experiment_config_from_json(json::parse(R"({"n_seeds": "many"})")), ConfigError);
  EXPECT_THROW(experiment_config_from_json(json::parse(R"({"model": {"d": 30}})")), ConfigError);
  EXPECT_THROW(experiment_config_from_json(json::parse(R"({"search_space": "tpe"})")), ConfigError);
  EXPECT_THROW(load_experiment_config("/nonexistent.json"), ConfigError);
}

TEST(Config, AblationGrids) {
  const ExperimentConfig p = prompt_length_ablation({});
  EXPECT_EQ(p.prompt_lengths, (std::vector<std::size_t>{1, 5, 10, 100}));
  EXPECT_EQ(p.regimes.size(), 3u);
  for (const auto& r : p.regimes) EXPECT_TRUE(r.with_prompt);
  const ExperimentConfig s = sample_size_ablation({});
  EXPECT_EQ(s.target_sizes, (std::vector<std::size_t>{10, 50, 100, 1000}));
  EXPECT_EQ(s.regimes.size(), 6u);
}

TEST(Report, OneRowTable) {
  ResultTable t{{row("A", 0.2, 5)}};
  const std::string csv = report(t, "csv");
  EXPECT_EQ(csv, std::string(kResultsHeader) + "\nA,t,50,5,0.200000,0.010000,12,10,0.5\n");
  const std::string md = report(t, "markdown");
  EXPECT_EQ(std::count(md.begin(), md.end(), '\n'), 3);
}

TEST(Report, RejectsUnknownFormatAndEmptyTable) {
  EXPECT_THROW(report(ResultTable{{row("A", 0.2, 5)}}, "html"), ConfigError);
  EXPECT_THROW(report(ResultTable{}, "csv"), InputError);
}

TEST(Report, CanonicalOrdering) {
  ResultTable t{{row("C", 0.1, 5), row("A", 0.2, 10), row("A-noPT", 0.3), row("A", 0.2, 5), row("B-noPT", 0.1)}};
  const std::string csv = render_csv(t);
  std::vector<std::string> firsts;
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) firsts.push_back(line.substr(0, line.find(',', line.find(',') + 1)));
  EXPECT_EQ(firsts, (std::vector<std::string>{"A-noPT,t", "A,t", "A,t", "B-noPT,t", "C,t"}));
  EXPECT_NE(csv.find("A,t,50,5,"), std::string::npos);
  EXPECT_LT(csv.find("A,t,50,5,"), csv.find("A,t,50,10,"));
}

TEST(Report, BoldsTheBetterOfEachPair) {
  const std::string md = render_markdown({{row("B-noPT", 0.30), row("B", 0.20, 5), row("C-noPT", 0.1), row("C", 0.4, 5)}});
  EXPECT_NE(md.find("| B | t | 50 | 5 | **20.00"), std::string::npos);
  EXPECT_NE(md.find("| B-noPT | t | 50 | 0 | 30.00"), std::string::npos);
  EXPECT_NE(md.find("| C-noPT | t | 50 | 0 | **10.00"), std::string::npos);
  EXPECT_NE(md.find("| C | t | 50 | 5 | 40.00"), std::string::npos);
}

TEST(Report, TieBoldsNeither) {
  const std::string md = render_markdown({{row("A-noPT", 0.25), row("A", 0.25, 5)}});
  EXPECT_EQ(md.find("**"), std::string::npos);
}

TEST(Report, CsvRoundTripIsIdempotent) {
  ResultTable t{{row("C", 0.123456789, 5), row("A-noPT", 0.3), row("B", 1.0 / 3.0, 100, 1000)}};
  t.rows[0].ratio = 0.000123456789012;
  const std::string once = render_csv(t);
  const std::string twice = render_csv(parse_results_csv(once));
  EXPECT_EQ(once, twice);
  EXPECT_THROW(parse_results_csv("bad header\n"), FormatError);
  EXPECT_THROW(parse_results_csv(std::string(kResultsHeader) + "\nA,t,1\n"), FormatError);
  EXPECT_THROW(parse_results_csv(std::string(kResultsHeader) + "\nQ,t,1,1,0,0,1,1,0\n"), FormatError);
}

TEST(RunExperiment, TinyGridPersistsConsistentArtifacts) {
  const fs::path out = fs::temp_directory_path() / "padd_test_run";
  fs::remove_all(out);
  const ExperimentConfig cfg = tiny_experiment();
  const ResultTable t = run_experiment(cfg, out);
  ASSERT_EQ(t.rows.size(), 3u);
  for (const char* f : {"config.json", "results.csv", "results.md", "checkpoints/source.padd", "logs/pretrain.csv",
                        "data/t6_train.pdds", "data/t6_n10.pdds"})
    EXPECT_TRUE(fs::exists(out / f)) << f;

  EXPECT_EQ(subsample_target(read_dataset(out / "data" / "t6_train.pdds"), 10, 0).counts().n_real, 5u);
  EXPECT_EQ(read_dataset(out / "data" / "t6_n10.pdds").counts().n_real, 5u);

  for (const auto& r : t.rows) {
    EXPECT_TRUE(r.complete);
    EXPECT_EQ(r.n_seeds, cfg.n_seeds);
    EXPECT_GE(r.std_eer, 0.0);
    const fs::path cell = out / "cells" / (r.regime.name() + "_t6_n10_p" + std::to_string(r.n_p));
    std::istringstream seeds(slurp(cell / "seeds.csv"));
    std::string line;
    std::getline(seeds, line);
    std::vector<double> eers;
    while (std::getline(seeds, line)) {
      std::vector<std::string> f;
      std::stringstream ss(line);
      std::string c;
      while (std::getline(ss, c, ',')) f.push_back(c);
      eers.push_back(std::stod(f[3]));
    }
    ASSERT_EQ(eers.size(), cfg.n_seeds);
    double m = 0, v = 0;
    for (double e : eers) m += e;
    m /= eers.size();
    for (double e : eers) v += (e - m) * (e - m);
    EXPECT_NEAR(r.mean_eer, m, 1e-15);
    EXPECT_NEAR(r.std_eer, std::sqrt(v / eers.size()), 1e-15);
    if (r.regime.zero_shot()) {
      EXPECT_EQ(r.std_eer, 0.0);
      EXPECT_EQ(r.params, 0u);
      EXPECT_EQ(r.mean_eer, evaluate(load_checkpoint(out / "checkpoints" / "source.padd"),
                                     read_dataset(out / "data" / "t6_eval.pdds"))
                                .eer);
    } else {
      EXPECT_TRUE(fs::exists(cell / "trials.csv"));
      EXPECT_TRUE(fs::exists(cell / "seed0.padd"));
    }
  }
  EXPECT_EQ(slurp(out / "results.csv"), render_csv(t));
  EXPECT_EQ(render_csv(parse_results_csv(slurp(out / "results.csv"))), slurp(out / "results.csv"));
}

TEST(RunExperiment, CountIdentitiesPerCell) {
  const ParamRegistry base = build_model(test::tiny_config(), 0);
  for (std::size_t np : {1, 5, 10, 100}) {
    const auto a = cell_param_count(base, Regime::parse("A"), np);
    const auto b = cell_param_count(base, Regime::parse("B"), np);
    const auto bn = cell_param_count(base, Regime::parse("B-noPT"), 0);
    const auto c = cell_param_count(base, Regime::parse("C"), np);
    const auto cn = cell_param_count(base, Regime::parse("C-noPT"), 0);
    EXPECT_EQ(b.count, a.count + bn.count);
    EXPECT_EQ(c.count - cn.count, base.config().d * np);
  }
}
