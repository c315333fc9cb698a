#include "rbs/config.hpp"

#include <gtest/gtest.h>

#include "rbs/run_config.hpp"

namespace rbs {
namespace {

TEST(KvConfig, ParsesKeysValuesCommentsAndBlanks) {
  KvConfig cfg = KvConfig::parse_text("# comment\n\nB=8\nlr=1e-4\nname = spaced value \n", "t");
  EXPECT_EQ(cfg.get_u64("B", 0), 8u);
  EXPECT_DOUBLE_EQ(cfg.get_double("lr", 0.0), 1e-4);
  EXPECT_EQ(cfg.get_string("name", ""), "spaced value");
  cfg.reject_unknown();
}

TEST(KvConfig, MalformedDoubleEqualsReportsLineNumber) {
  try {
    KvConfig::parse_text("ok=1\nB==\n", "cfg");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("cfg:2"), std::string::npos);
  }
}

TEST(KvConfig, MissingEqualsIsParseError) {
  EXPECT_THROW(KvConfig::parse_text("justakey\n", "cfg"), ConfigError);
  EXPECT_THROW(KvConfig::parse_text("=value\n", "cfg"), ConfigError);
}

TEST(KvConfig, DuplicateKeyIsError) {
  EXPECT_THROW(KvConfig::parse_text("a=1\na=2\n", "cfg"), ConfigError);
}

TEST(KvConfig, UnknownKeysAreNamed) {
  KvConfig cfg = KvConfig::parse_text("B=8\nmystery=1\n", "cfg");
  EXPECT_EQ(cfg.get_u64("B", 0), 8u);
  try {
    cfg.reject_unknown();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("mystery"), std::string::npos);
  }
}

TEST(KvConfig, TypeMismatchNamesKeyAndLine) {
  KvConfig cfg = KvConfig::parse_text("B=eight\n", "cfg");
  try {
    cfg.get_u64("B", 0);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("'B'"), std::string::npos);
    EXPECT_NE(msg.find("cfg:1"), std::string::npos);
  }
}

TEST(KvConfig, BooleansAndOverrides) {
  KvConfig cfg = KvConfig::parse_text("shuffle=true\n", "cfg");
  EXPECT_TRUE(cfg.get_bool("shuffle", false));
  cfg.set("shuffle", "false");
  EXPECT_FALSE(cfg.get_bool("shuffle", true));
  EXPECT_THROW(
      [] {
        KvConfig c = KvConfig::parse_text("shuffle=maybe\n", "cfg");
        c.get_bool("shuffle", false);
      }(),
      ConfigError);
}

TEST(ResolveRunConfig, EmptyConfigYieldsPublishedDefaults) {
  const ResolvedRunConfig r = resolve_run_config(KvConfig{}, RunOverrides{}, 256);
  EXPECT_EQ(r.train.batch_size, 32u);
  EXPECT_DOUBLE_EQ(r.train.centering_coeff, 0.01);
  EXPECT_DOUBLE_EQ(r.train.base_lr, 1e-6);
  EXPECT_DOUBLE_EQ(r.train.warmup_ratio, 0.05);
  EXPECT_DOUBLE_EQ(r.train.beta1, 0.9);
  EXPECT_DOUBLE_EQ(r.train.beta2, 0.95);
  EXPECT_EQ(r.train.token_budget, 11'000'000u);
  EXPECT_EQ(r.train.seed, 2025u);
  EXPECT_EQ(r.train.prefix_len, 512u);
  EXPECT_EQ(r.train.suffix_len, 1024u);
  EXPECT_EQ(r.scorer.vocab_size, 256u);
  EXPECT_EQ(r.scorer.embed_dim, 32u);
  EXPECT_EQ(r.scorer.arch, ScorerArch::kBilinear);
}

TEST(ResolveRunConfig, BatchSizeOverride) {
  RunOverrides overrides;
  overrides.batch_size = 8;
  const ResolvedRunConfig r =
      resolve_run_config(KvConfig::parse_text("B=32\n", "cfg"), overrides, 64);
  EXPECT_EQ(r.train.batch_size, 8u);
}

TEST(ResolveRunConfig, UnknownKeyRejected) {
  EXPECT_THROW(
      resolve_run_config(KvConfig::parse_text("batchsize=8\n", "cfg"), RunOverrides{}, 64),
      ConfigError);
}

TEST(ResolveRunConfig, ResolvedEchoContainsEveryKey) {
  const ResolvedRunConfig r = resolve_run_config(KvConfig{}, RunOverrides{}, 128);
  const std::string text = r.kv.to_text();
  for (const char* key : {"B=", "c=", "lr=", "warmup_ratio=", "beta1=", "beta2=", "token_budget=",
                          "seed=", "L1=", "L2=", "vocab_size=", "d=", "arch="}) {
    EXPECT_NE(text.find(key), std::string::npos) << key;
  }
  // a run must be reproducible from the echoed config alone
  KvConfig back = KvConfig::parse_text(text, "echo");
  const ResolvedRunConfig again = resolve_run_config(std::move(back), RunOverrides{}, 1);
  EXPECT_EQ(again.train.batch_size, r.train.batch_size);
  EXPECT_EQ(again.train.seed, r.train.seed);
  EXPECT_EQ(again.scorer.vocab_size, r.scorer.vocab_size);
  EXPECT_DOUBLE_EQ(again.train.base_lr, r.train.base_lr);
}

TEST(ResolveGrpoConfig, PublishedDefaults) {
  const ResolvedGrpoConfig r = resolve_grpo_config(KvConfig{});
  EXPECT_EQ(r.grpo.group_size, 8u);
  EXPECT_DOUBLE_EQ(r.grpo.lambda, 0.1);
  EXPECT_DOUBLE_EQ(r.grpo.clip, 0.2);
  EXPECT_EQ(r.grpo.epochs, 5u);
}

}  // namespace
}  // namespace rbs
