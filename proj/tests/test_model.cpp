#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "helpers.hpp"
#include "padd/checkpoint.hpp"
#include "padd/model.hpp"

using namespace padd;

namespace {

// Registry mirroring a 1024-wide backbone with a 160-wide head: one encoder
// layer keeps construction cheap; counts under A and B do not depend on depth.
ParamRegistry wide_registry(std::size_t d, std::size_t head_hidden) {
  ModelConfig c;
  c.d = d;
  c.n_layers = 1;
  c.n_heads = 8;
  c.conv = {{16, 16, d}};
  c.head_hidden = head_hidden;
  c.ff_hidden = 4;
  c.delta = 64;
  return build_model(c, 1);
}

}  // namespace

TEST(ModelConfig, ValidateRejectsBadShapes) {
  ModelConfig c = test::small_config();
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = test::small_config();
  c.conv.back().channels = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = test::small_config();
  c.delta = 4;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(BuildModel, FinalLinearHas34ParamsForHeadHidden16) {
  ModelConfig c;
  c.d = 64;
  c.n_layers = 2;
  c.n_heads = 4;
  c.conv = {{32, 16, 16}, {4, 4, 64}};
  c.head_hidden = 16;
  ParamRegistry reg = build_model(c, 0);
  std::uint64_t last = 0;
  for (const auto& e : reg.entries())
    if (e.group == ParamGroup::kBackendLast) last += e.value.size();
  EXPECT_EQ(last, 34u);
}

TEST(BuildModel, SameSeedIsBitwiseIdentical) {
  const auto c = test::small_config();
  EXPECT_TRUE(bitwise_equal(build_model(c, 7), build_model(c, 7)));
  EXPECT_FALSE(bitwise_equal(build_model(c, 7), build_model(c, 8)));
}

TEST(BuildModel, LayoutNamesAreUniqueAndGrouped) {
  ParamRegistry reg = build_model(test::small_config(8, 2), 0);
  EXPECT_TRUE(reg.contains("layer1.attn.wq"));
  EXPECT_EQ(reg.entries()[reg.index_of("head.weight")].group, ParamGroup::kBackendHead);
  EXPECT_EQ(reg.entries()[reg.index_of("out.bias")].group, ParamGroup::kBackendLast);
  EXPECT_EQ(reg.entries()[reg.index_of("conv0.weight")].group, ParamGroup::kFrontend);
  EXPECT_THROW(reg.index_of("nope"), InputError);
}

TEST(BuildModel, W2vMirrorBackendLastIs322) {
  ParamRegistry reg = wide_registry(1024, 160);
  const ParamCount b = count_params(reg, TuningMode::kB, false);
  EXPECT_EQ(b.count, 322u);
}

TEST(Prompt, InitStatistics) {
  Prompt p = init_prompt(4, 3, 1.25, 0.0, 9);
  for (double v : p.values.storage()) EXPECT_EQ(v, 1.25);
  EXPECT_EQ(init_prompt(1024, 5, 0, 1, 1).values.size(), 5120u);
  Prompt big = init_prompt(100, 100, 0.3, 2.0, 5);
  double m = 0, s = 0;
  for (double v : big.values.storage()) m += v;
  m /= 1e4;
  for (double v : big.values.storage()) s += (v - m) * (v - m);
  s = std::sqrt(s / 1e4);
  EXPECT_NEAR(m, 0.3, 0.05 * 2.0);
  EXPECT_NEAR(s, 2.0, 0.05 * 2.0);
}

TEST(Prompt, InjectPrependsAndPreservesInput) {
  Rng rng(2);
  Tensor x = test::random_tensor({4, 7}, rng);
  EXPECT_TRUE(bitwise_equal(inject_prompt(x, std::nullopt), x));
  Prompt p = init_prompt(4, 5, 0.0, 1.0, 3);
  Tensor y = inject_prompt(x, p);
  ASSERT_EQ(y.shape(), (Shape{4, 12}));
  for (std::size_t r = 0; r < 4; ++r) {
    for (std::size_t c = 0; c < 5; ++c) EXPECT_EQ(y(r, c), p.values(r, c));
    for (std::size_t c = 0; c < 7; ++c) EXPECT_EQ(std::bit_cast<std::uint64_t>(y(r, 5 + c)), std::bit_cast<std::uint64_t>(x(r, c)));
  }
  EXPECT_THROW(inject_prompt(x, init_prompt(3, 2, 0, 1, 1)), ShapeError);
}

TEST(Prompt, RegistryRejectsWrongWidth) {
  ParamRegistry reg = build_model(test::small_config(), 0);
  EXPECT_THROW(reg.set_prompt(init_prompt(reg.config().d + 1, 2, 0, 1, 0)), ShapeError);
}

TEST(Forward, ZeroBackendLastGivesZeroLogits) {
  ParamRegistry reg = build_model(test::small_config(), 3);
  reg.at("out.weight").fill(0.0);
  reg.at("out.bias").fill(0.0);
  Rng rng(1);
  auto s = test::random_batch(reg.config(), 1, rng);
  Logits z = forward_model(reg, s[0].waveform);
  EXPECT_EQ(z.real, 0.0);
  EXPECT_EQ(z.fake, 0.0);
  EXPECT_EQ(z.score(), 0.0);
}

TEST(Forward, NoPromptEqualsClearedPrompt) {
  ParamRegistry plain = build_model(test::small_config(), 3);
  ParamRegistry prompted = plain;
  prompted.set_prompt(init_prompt(plain.config().d, 3, 0, 1, 4));
  prompted.clear_prompt();
  Rng rng(5);
  auto s = test::random_batch(plain.config(), 1, rng);
  const Logits a = forward_model(plain, s[0].waveform), b = forward_model(prompted, s[0].waveform);
  EXPECT_EQ(std::bit_cast<std::uint64_t>(a.real), std::bit_cast<std::uint64_t>(b.real));
  EXPECT_EQ(std::bit_cast<std::uint64_t>(a.fake), std::bit_cast<std::uint64_t>(b.fake));
}

TEST(Forward, PromptChangesOutput) {
  ParamRegistry reg = build_model(test::small_config(), 3);
  Rng rng(5);
  auto s = test::random_batch(reg.config(), 1, rng);
  const Logits a = forward_model(reg, s[0].waveform);
  reg.set_prompt(init_prompt(reg.config().d, 3, 0, 1, 4));
  const Logits b = forward_model(reg, s[0].waveform);
  EXPECT_NE(a.score(), b.score());
}

TEST(Forward, BiasShiftLeavesScoreUnchanged) {
  ParamRegistry reg = build_model(test::small_config(), 3);
  Rng rng(6);
  auto s = test::random_batch(reg.config(), 1, rng);
  const Logits a = forward_model(reg, s[0].waveform);
  reg.at("out.bias")[0] += 3.5;
  reg.at("out.bias")[1] += 3.5;
  const Logits b = forward_model(reg, s[0].waveform);
  EXPECT_NEAR(b.real - a.real, 3.5, 1e-12);
  EXPECT_NEAR(b.score(), a.score(), 1e-12);
}

TEST(Forward, RejectsWrongLength) {
  ParamRegistry reg = build_model(test::small_config(), 3);
  std::vector<double> w(reg.config().delta + 1);
  EXPECT_THROW(forward_model(reg, w), InputError);
}

TEST(Trainable, ModesSelectTheRightEntries) {
  ParamRegistry reg = build_model(test::small_config(), 0);
  EXPECT_THROW(trainable_params(reg, TuningMode::kA, false), ConfigError);
  EXPECT_THROW(trainable_params(reg, TuningMode::kA, true), ConfigError);  // no prompt yet
  reg.set_prompt(init_prompt(reg.config().d, 2, 0, 1, 0));
  TrainableSet a = trainable_params(reg, TuningMode::kA, true);
  EXPECT_TRUE(a.entries.empty());
  EXPECT_TRUE(a.prompt);
  TrainableSet b = trainable_params(reg, TuningMode::kB, false);
  EXPECT_FALSE(b.prompt);
  for (std::size_t i : b.entries) EXPECT_EQ(reg.entries()[i].group, ParamGroup::kBackendLast);
  EXPECT_EQ(b.entries.size(), 2u);
  TrainableSet c = trainable_params(reg, TuningMode::kC, true);
  EXPECT_EQ(c.entries.size(), reg.entries().size());
  EXPECT_TRUE(c.prompt);
}

TEST(CountParams, WideRegistryLedger) {
  ParamRegistry w2v = wide_registry(1024, 160);
  w2v.set_prompt(init_prompt(1024, 5, 0, 1, 0));
  EXPECT_EQ(count_params(w2v, TuningMode::kA, true).count, 5120u);
  EXPECT_EQ(count_params(w2v, TuningMode::kB, true).count, 5442u);
  EXPECT_EQ(count_params(w2v, TuningMode::kC, true).count - count_params(w2v, TuningMode::kC, false).count, 5120u);
  EXPECT_EQ(count_params(w2v, TuningMode::kA, false).count, 0u);

  ParamRegistry wsp = wide_registry(384, 160);
  wsp.set_prompt(init_prompt(384, 5, 0, 1, 0));
  EXPECT_EQ(count_params(wsp, TuningMode::kA, true).count, 1920u);
}

TEST(CountParams, IdentitiesHoldAcrossConfigs) {
  for (std::size_t d : {4, 8, 12})
    for (std::size_t np : {1, 3, 10}) {
      ParamRegistry reg = build_model(test::small_config(d), d);
      reg.set_prompt(init_prompt(d, np, 0, 1, 0));
      const auto a = count_params(reg, TuningMode::kA, true);
      const auto b = count_params(reg, TuningMode::kB, true);
      const auto bn = count_params(reg, TuningMode::kB, false);
      const auto c = count_params(reg, TuningMode::kC, true);
      const auto cn = count_params(reg, TuningMode::kC, false);
      EXPECT_EQ(b.count, a.count + bn.count);
      EXPECT_EQ(c.count - cn.count, d * np);
      EXPECT_EQ(cn.count, reg.base_size());
      EXPECT_DOUBLE_EQ(cn.ratio, 1.0);
    }
}

TEST(Regime, NamesRoundTrip) {
  for (const char* n : {"A", "A-noPT", "B", "B-noPT", "C", "C-noPT"}) EXPECT_EQ(Regime::parse(n).name(), n);
  EXPECT_TRUE(Regime::parse("A-noPT").zero_shot());
  EXPECT_THROW(Regime::parse("D"), ConfigError);
}

TEST(PositionalEncoding, SinusoidalValues) {
  Tensor pe = positional_encoding(4, 3);
  ASSERT_EQ(pe.shape(), (Shape{4, 3}));
  EXPECT_EQ(pe(0, 0), 0.0);
  EXPECT_EQ(pe(1, 0), 1.0);
  EXPECT_NEAR(pe(0, 2), std::sin(2.0), 1e-15);
  EXPECT_NEAR(pe(3, 1), std::cos(1.0 / 100.0), 1e-15);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  ParamRegistry reg = build_model(test::small_config(8, 2), 12);
  reg.set_prompt(init_prompt(8, 3, 0.1, 0.2, 1));
  const auto bytes = encode_checkpoint(reg);
  ParamRegistry back = decode_checkpoint(bytes);
  EXPECT_TRUE(bitwise_equal(reg, back));
  EXPECT_EQ(encode_checkpoint(back), bytes);

  const auto path = std::filesystem::temp_directory_path() / "padd_test_ckpt" / "m.padd";
  save_checkpoint(reg, path);
  EXPECT_TRUE(bitwise_equal(load_checkpoint(path), reg));
}

TEST(Checkpoint, CorruptionIsReportedByKind) {
  ParamRegistry reg = build_model(test::small_config(), 1);
  auto bytes = encode_checkpoint(reg);
  auto kind_of = [](std::vector<char> b) {
    try {
      decode_checkpoint(std::move(b));
    } catch (const FormatError& e) {
      return e.kind();
    }
    ADD_FAILURE() << "no error";
    return FormatErrorKind::kIo;
  };
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_EQ(kind_of(bad_magic), FormatErrorKind::kCorruptHeader);
  auto bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_EQ(kind_of(bad_version), FormatErrorKind::kVersionMismatch);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_EQ(kind_of(truncated), FormatErrorKind::kTruncatedPayload);
  EXPECT_THROW(load_checkpoint("/nonexistent/x.padd"), FormatError);
}
