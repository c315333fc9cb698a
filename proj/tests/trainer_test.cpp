#include "rbs/trainer.hpp"

#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "rbs/corpus.hpp"
#include "rbs/splitter.hpp"

namespace rbs {
namespace {

TEST(LrSchedule, LinearWarmupThenConstant) {
  // warmup_ratio 0.05 of 1000 steps -> 50 warmup steps
  EXPECT_DOUBLE_EQ(lr_schedule(25, 1000, 1e-3, 0.05), 0.5e-3);
  EXPECT_DOUBLE_EQ(lr_schedule(0, 1000, 1e-3, 0.05), 0.0);
  EXPECT_DOUBLE_EQ(lr_schedule(50, 1000, 1e-3, 0.05), 1e-3);
  EXPECT_DOUBLE_EQ(lr_schedule(800, 1000, 1e-3, 0.05), 1e-3);
}

TEST(LrSchedule, ZeroWarmupIsConstantFromStepZero) {
  EXPECT_DOUBLE_EQ(lr_schedule(0, 100, 2e-4, 0.0), 2e-4);
}

TEST(AdamStep, ZeroGradientLeavesParamsUntouched) {
  OptimizerState state;
  std::vector<double> theta{1.0, -2.0, 0.5};
  const std::vector<double> grad(3, 0.0);
  adam_step(state, theta, grad, 0.1, 0.9, 0.95, 1e-8);
  EXPECT_EQ(theta, (std::vector<double>{1.0, -2.0, 0.5}));
  EXPECT_EQ(state.step, 1u);
}

TEST(AdamStep, FirstStepHandArithmetic) {
  // bias correction makes m_hat = g and v_hat = g^2 on step one, so the
  // update is -lr * g / (|g| + eps)
  OptimizerState state;
  std::vector<double> theta{0.0};
  const std::vector<double> grad{1.0};
  adam_step(state, theta, grad, 0.1, 0.9, 0.95, 1e-8);
  EXPECT_NEAR(theta[0], -0.1 * (1.0 / (1.0 + 1e-8)), 1e-15);
}

TEST(AdamStep, DeterministicTrajectories) {
  Rng rng(6);
  std::vector<double> ga(10);
  for (auto& g : ga) g = rng.next_uniform(-1, 1);
  const std::vector<double> gb(ga);
  OptimizerState sa, sb;
  std::vector<double> ta(10, 0.1), tb(10, 0.1);
  for (int step = 0; step < 25; ++step) {
    adam_step(sa, ta, ga, 1e-2, 0.9, 0.95, 1e-8);
    adam_step(sb, tb, gb, 1e-2, 0.9, 0.95, 1e-8);
  }
  EXPECT_EQ(ta, tb);
}

TEST(AdamStep, NonFiniteGradientAborts) {
  OptimizerState state;
  std::vector<double> theta{0.0};
  EXPECT_THROW(adam_step(state, theta, std::vector<double>{std::nan("")}, 0.1, 0.9, 0.95, 1e-8),
               NumericError);
}

TEST(MakeBatches, FloorArithmeticDropsPartial) {
  const auto batches = make_batches(70, 32, false, 0);
  ASSERT_EQ(batches.size(), 2u);
  EXPECT_EQ(batches[0].front(), 0u);
  EXPECT_EQ(batches[1].back(), 63u);
}

TEST(MakeBatches, MinimalStream) {
  EXPECT_EQ(make_batches(2, 2, false, 0).size(), 1u);
  EXPECT_THROW(make_batches(1, 2, false, 0), ConfigError);
}

TEST(MakeBatches, StreamOrderByDefaultSeededShuffleOtherwise) {
  const auto plain = make_batches(8, 4, false, 123);
  EXPECT_EQ(plain[0], (std::vector<std::size_t>{0, 1, 2, 3}));
  const auto a = make_batches(64, 8, true, 9);
  const auto b = make_batches(64, 8, true, 9);
  EXPECT_EQ(a, b);
  const auto c = make_batches(64, 8, true, 10);
  EXPECT_NE(a, c);
}

// Scorer whose embeddings are one-hot rows so token t scores exactly
// delta(t_prefix, t_suffix) under W = I: diagonal-dominant score matrices.
ScorerParams identity_scorer(std::uint32_t vocab) {
  ScorerParams p;
  p.config.vocab_size = vocab;
  p.config.embed_dim = vocab;
  p.config.arch = ScorerArch::kBilinear;
  p.theta.assign(p.config.param_count(), 0.0);
  for (std::uint32_t t = 0; t < vocab; ++t) {
    p.theta[static_cast<std::size_t>(t) * vocab + t] = 1.0;  // E = I
  }
  const std::size_t w_off = p.config.embedding_count();
  for (std::uint32_t i = 0; i < vocab; ++i) {
    p.theta[w_off + static_cast<std::size_t>(i) * vocab + i] = 1.0;  // W = I
  }
  return p;
}

std::vector<PrefixSuffixPair> distinct_token_pairs(std::uint32_t n) {
  std::vector<PrefixSuffixPair> pairs;
  for (std::uint32_t t = 0; t < n; ++t) {
    pairs.push_back({{t}, {t}, ""});
  }
  return pairs;
}

TEST(Validate, AllEqualScoresCountAsIncorrect) {
  ScorerParams p;
  p.config.vocab_size = 8;
  p.config.embed_dim = 4;
  p.theta.assign(p.config.param_count(), 0.0);
  const auto pairs = distinct_token_pairs(8);
  const ValidationMetrics m = validate(p, pairs, 4);
  EXPECT_EQ(m.rank_acc, 0.0);
  EXPECT_EQ(m.margin, 0.0);
  EXPECT_EQ(m.mean_sq, 0.0);
}

TEST(Validate, DiagonalDominantMatrixScoresPerfectly) {
  const ScorerParams p = identity_scorer(8);
  const auto pairs = distinct_token_pairs(8);
  const ValidationMetrics m = validate(p, pairs, 4);
  EXPECT_EQ(m.rank_acc, 1.0);
  EXPECT_NEAR(m.mean_pos, 1.0, 1e-15);
  EXPECT_NEAR(m.mean_neg, 0.0, 1e-15);
  EXPECT_NEAR(m.margin, 1.0, 1e-15);
}

TEST(Validate, RandomScorerSitsNearChanceLevel) {
  ScorerConfig cfg;
  cfg.vocab_size = 64;
  cfg.embed_dim = 8;
  const ScorerParams p = init_params(cfg, 77);
  Rng rng(555);
  std::vector<PrefixSuffixPair> pairs;
  const std::size_t n_batches = 150;
  const std::uint32_t b = 8;
  for (std::size_t i = 0; i < n_batches * b; ++i) {
    PrefixSuffixPair pair;
    pair.prefix.resize(6);
    pair.suffix.resize(6);
    for (auto& t : pair.prefix) t = static_cast<TokenId>(rng.next_below(64));
    for (auto& t : pair.suffix) t = static_cast<TokenId>(rng.next_below(64));
    pairs.push_back(std::move(pair));
  }
  const ValidationMetrics m = validate(p, pairs, b);
  const double p0 = 1.0 / b;
  const double sigma = std::sqrt(p0 * (1 - p0) / static_cast<double>(n_batches * b));
  EXPECT_NEAR(m.rank_acc, p0, 3.0 * sigma + 0.01);
}

std::vector<PrefixSuffixPair> keyed_training_pairs(std::uint64_t seed, std::size_t n_docs,
                                                   std::size_t chunk_len, std::size_t prefix_len) {
  SyntheticSpec spec;
  spec.n_docs = n_docs;
  spec.vocab_size = 64;
  spec.key_density = 0.3;
  spec.doc_len = chunk_len - 1;  // separator keeps chunks doc-aligned
  spec.seed = seed;
  const auto docs = gen_synthetic_corpus(spec);
  const Tokenizer tok = Tokenizer::whitespace(synthetic_vocab(spec.vocab_size, spec.keys()));
  const auto chunks = chunk_stream(concat_stream(docs, tok, TokenId{0}), chunk_len);
  std::vector<PrefixSuffixPair> pairs;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    pairs.push_back(fixed_split(chunks[i], prefix_len, chunk_len - prefix_len,
                                "chunk:" + std::to_string(i)));
  }
  return pairs;
}

TrainConfig small_train_config() {
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.base_lr = 5e-3;
  cfg.prefix_len = 16;
  cfg.suffix_len = 32;
  cfg.token_budget = 20'000;
  cfg.validate_every_steps = 25;
  cfg.seed = 11;
  return cfg;
}

ScorerConfig small_scorer_config() {
  ScorerConfig cfg;
  cfg.vocab_size = 64;
  cfg.embed_dim = 8;
  return cfg;
}

TEST(Train, TokenBudgetArithmetic) {
  const auto pairs = keyed_training_pairs(3, 40, 48, 16);
  TrainConfig cfg = small_train_config();
  // budget of exactly two steps: 2 * B * (L1 + L2)
  cfg.token_budget = 2ull * cfg.batch_size * (cfg.prefix_len + cfg.suffix_len);
  const TrainResult result = train(cfg, small_scorer_config(), pairs, {});
  EXPECT_EQ(result.steps, 2u);
  EXPECT_EQ(result.tokens_seen, cfg.token_budget);
  EXPECT_EQ(result.tokens_seen,
            result.steps * cfg.batch_size * (cfg.prefix_len + cfg.suffix_len));
}

TEST(Train, TinyBudgetStillRunsOneStep) {
  const auto pairs = keyed_training_pairs(3, 40, 48, 16);
  TrainConfig cfg = small_train_config();
  cfg.token_budget = 10;  // far below one batch
  const TrainResult result = train(cfg, small_scorer_config(), pairs, {});
  EXPECT_EQ(result.steps, 1u);
}

TEST(Train, DeterministicMetricsAndParameters) {
  const auto pairs = keyed_training_pairs(5, 60, 48, 16);
  std::span<const PrefixSuffixPair> train_span(pairs.data(), 48);
  std::span<const PrefixSuffixPair> val_span(pairs.data() + 48, pairs.size() - 48);
  const TrainConfig cfg = small_train_config();
  const TrainResult a = train(cfg, small_scorer_config(), train_span, val_span);
  const TrainResult b = train(cfg, small_scorer_config(), train_span, val_span);
  EXPECT_EQ(a.params.theta, b.params.theta);
  EXPECT_EQ(a.opt.m, b.opt.m);
  EXPECT_EQ(metrics_to_csv(a.metrics), metrics_to_csv(b.metrics));
}

TEST(Train, LearnsToRankTrueContinuations) {
  const auto pairs = keyed_training_pairs(7, 220, 48, 16);
  std::span<const PrefixSuffixPair> train_span(pairs.data(), 180);
  std::span<const PrefixSuffixPair> val_span(pairs.data() + 180, pairs.size() - 180);
  TrainConfig cfg = small_train_config();
  cfg.token_budget = 150'000;
  const TrainResult result = train(cfg, small_scorer_config(), train_span, val_span);
  EXPECT_GT(result.metrics.back().val.rank_acc, 1.0 / cfg.batch_size);
}

TEST(Train, WrapsAroundShortStreams) {
  const auto pairs = keyed_training_pairs(9, 20, 48, 16);  // ~19 chunks, 4 batches
  TrainConfig cfg = small_train_config();
  cfg.token_budget = 10'000;  // needs > 4 steps
  const TrainResult result = train(cfg, small_scorer_config(), pairs, {});
  EXPECT_GT(result.steps, 4u);
}

TEST(MetricsCsv, HeaderIsExact) {
  EXPECT_EQ(std::string(kMetricsCsvHeader),
            "step,tokens_seen,lr,bt_loss,center_loss,total_loss,val_rank_acc,val_mean_pos,"
            "val_mean_neg,val_margin,val_mean_sq_score");
  TrainMetricsRow row;
  row.step = 3;
  const std::string csv = metrics_to_csv(std::vector<TrainMetricsRow>{row});
  EXPECT_EQ(csv.substr(0, std::string(kMetricsCsvHeader).size()), std::string(kMetricsCsvHeader));
}

TEST(TrainCurated, SingleTripleMarginLoss) {
  // identity scorer on distinct tokens: chosen shares the prompt token,
  // rejected does not, so the margin is exactly 1
  const ScorerParams p = identity_scorer(4);
  const TokenTriple triple{{1}, {1}, {2}};
  const CuratedEval out = eval_curated_batch(p, std::vector<TokenTriple>{triple}, 0.0);
  EXPECT_NEAR(out.bt, softplus(-1.0), 1e-15);
}

TEST(TrainCurated, WarmStartTrainsFromGivenParameters) {
  std::vector<TokenTriple> triples;
  Rng rng(31);
  for (int i = 0; i < 12; ++i) {
    TokenTriple t;
    const TokenId key = 1 + static_cast<TokenId>(rng.next_below(8));
    const TokenId other = 1 + static_cast<TokenId>(rng.next_below(8));
    t.prompt.assign(6, key);
    t.chosen.assign(6, key);
    t.rejected.assign(6, other == key ? (key % 8) + 1 : other);
    triples.push_back(std::move(t));
  }
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.base_lr = 1e-3;
  cfg.prefix_len = 6;
  cfg.suffix_len = 12;
  cfg.token_budget = 4 * 18 * 3;  // three steps
  cfg.validate_every_steps = 0;
  ScorerConfig scfg;
  scfg.vocab_size = 16;
  scfg.embed_dim = 4;
  const ScorerParams initial = init_params(scfg, 99);
  const TrainResult result = train_curated(cfg, initial, triples, triples);
  EXPECT_EQ(result.steps, 3u);
  EXPECT_NE(result.params.theta, initial.theta);
  // same warm start, same data -> identical result
  const TrainResult again = train_curated(cfg, initial, triples, triples);
  EXPECT_EQ(result.params.theta, again.params.theta);
}

TEST(TriplesFile, ReadsAndTokenizes) {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "rbs_triples_test.jsonl";
  atomic_write_file(path,
                    "{\"prompt\":\"k1 k1\",\"chosen\":\"k1 w3\",\"rejected\":\"k2 w3\"}\n");
  const Tokenizer tok = Tokenizer::whitespace(synthetic_vocab(8, 2));
  const auto triples = read_triples_jsonl(path, tok);
  ASSERT_EQ(triples.size(), 1u);
  EXPECT_EQ(triples[0].prompt, (TokenSequence{1, 1}));
  EXPECT_EQ(triples[0].chosen, (TokenSequence{1, 3}));
  EXPECT_EQ(triples[0].rejected, (TokenSequence{2, 3}));
  fs::remove(path);

  atomic_write_file(path, "{\"prompt\":\"x\"}\n");
  EXPECT_THROW(read_triples_jsonl(path, tok), DataError);
  fs::remove(path);
}

}  // namespace
}  // namespace rbs
