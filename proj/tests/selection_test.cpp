#include "rbs/selection.hpp"

#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

namespace rbs {
namespace {

TEST(BonSelect, PicksArgmaxOverFirstN) {
  const std::vector<double> scores{0.2, 0.9};
  EXPECT_EQ(bon_select(scores, 2), 1u);
  EXPECT_EQ(bon_select(scores, 1), 0u);
}

TEST(BonSelect, TieKeepsLowestIndex) {
  const std::vector<double> scores{0.5, 0.5, 0.3};
  EXPECT_EQ(bon_select(scores, 3), 0u);
}

TEST(BonSelect, OutOfRangeIsError) {
  const std::vector<double> scores{0.1};
  EXPECT_THROW(bon_select(scores, 0), ConfigError);
  EXPECT_THROW(bon_select(scores, 2), ConfigError);
}

TEST(BonSelect, DependsOnlyOnFirstNScores) {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> scores(16);
    for (auto& s : scores) s = rng.next_uniform(-1, 1);
    for (std::size_t n = 1; n <= 8; ++n) {
      const std::size_t pick = bon_select(scores, n);
      std::vector<double> mutated = scores;
      for (std::size_t k = n; k < mutated.size(); ++k) mutated[k] += 100.0;
      EXPECT_EQ(bon_select(mutated, n), pick);
      EXPECT_LT(pick, n);
      for (std::size_t k = 0; k < n; ++k) EXPECT_GE(scores[pick], scores[k]);
    }
  }
}

BoNCandidateSet set_with(std::vector<double> scores, std::vector<bool> correct) {
  BoNCandidateSet s;
  s.prompt = {1};
  s.scores = std::move(scores);
  s.correct = std::move(correct);
  s.candidates.assign(s.scores.size(), TokenSequence{2});
  return s;
}

TEST(BonCurve, SelectionFlipsWithN) {
  const std::vector<BoNCandidateSet> sets{set_with({0.2, 0.9}, {true, false})};
  const std::vector<std::uint32_t> ns{1, 2};
  const BoNCurve curve = bon_curve(sets, ns);
  EXPECT_EQ(curve.accuracy[0], 1.0);
  EXPECT_EQ(curve.accuracy[1], 0.0);
}

TEST(BonCurve, AllCorrectIsAlwaysPerfect) {
  std::vector<BoNCandidateSet> sets;
  Rng rng(3);
  for (int i = 0; i < 10; ++i) {
    std::vector<double> scores(8);
    for (auto& s : scores) s = rng.next_uniform(-1, 1);
    sets.push_back(set_with(scores, std::vector<bool>(8, true)));
  }
  const std::vector<std::uint32_t> ns{1, 2, 4, 8};
  for (double acc : bon_curve(sets, ns).accuracy) EXPECT_EQ(acc, 1.0);
}

TEST(BonCurve, RandomScoresTrackTheBaseRate) {
  // flags i.i.d. at rate q and scores independent of flags: accuracy at any
  // N stays near q
  Rng rng(1234);
  const double q = 0.3;
  const std::size_t n_sets = 400;
  std::vector<BoNCandidateSet> sets;
  for (std::size_t i = 0; i < n_sets; ++i) {
    std::vector<double> scores(16);
    std::vector<bool> correct(16);
    for (std::size_t k = 0; k < 16; ++k) {
      scores[k] = rng.next_uniform(-1, 1);
      correct[k] = rng.next_double() < q;
    }
    sets.push_back(set_with(scores, correct));
  }
  const std::vector<std::uint32_t> ns{1, 2, 4, 8, 16};
  const BoNCurve curve = bon_curve(sets, ns);
  const double sigma = std::sqrt(q * (1 - q) / static_cast<double>(n_sets));
  for (double acc : curve.accuracy) EXPECT_NEAR(acc, q, 3.0 * sigma);
}

TEST(BonCurve, InsufficientCandidatesNamesTheSet) {
  std::vector<BoNCandidateSet> sets{set_with({0.1, 0.2}, {true, false}),
                                    set_with({0.1}, {true})};
  const std::vector<std::uint32_t> ns{1, 2};
  try {
    bon_curve(sets, ns);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("set 1"), std::string::npos);
  }
}

TEST(BonCurve, NonIncreasingNListIsError) {
  const std::vector<BoNCandidateSet> sets{set_with({0.1, 0.2}, {true, false})};
  const std::vector<std::uint32_t> ns{2, 2};
  EXPECT_THROW(bon_curve(sets, ns), ConfigError);
}

TEST(MapValue, MaxAlongCurveAndOrderInvariance) {
  BoNCurve curve;
  curve.ns = {1, 2, 4, 8};
  curve.accuracy = {0.6, 0.65, 0.7, 0.68};
  EXPECT_DOUBLE_EQ(map_value(curve), 0.7);
  BoNCurve reversed;
  reversed.ns = curve.ns;
  reversed.accuracy = {0.68, 0.7, 0.65, 0.6};
  EXPECT_DOUBLE_EQ(map_value(reversed), 0.7);
}

TEST(DeltaMap, IdenticalCurvesGiveZeroAndAntisymmetry) {
  BoNCurve a;
  a.ns = {1, 2};
  a.accuracy = {0.5, 0.6};
  BoNCurve b;
  b.ns = {1, 2};
  b.accuracy = {0.4, 0.45};
  EXPECT_DOUBLE_EQ(delta_map(a, a), 0.0);
  EXPECT_DOUBLE_EQ(delta_map(a, b), -delta_map(b, a));
}

TEST(DeltaMap, MismatchedNListsAreError) {
  BoNCurve a;
  a.ns = {1, 2};
  a.accuracy = {0.5, 0.6};
  BoNCurve b;
  b.ns = {1, 4};
  b.accuracy = {0.5, 0.6};
  EXPECT_THROW(delta_map(a, b), ConfigError);
}

TEST(ScoreCandidates, MatchesScorePairExactly) {
  ScorerConfig cfg;
  cfg.vocab_size = 32;
  cfg.embed_dim = 8;
  const ScorerParams params = init_params(cfg, 5);
  BoNCandidateSet set;
  Rng rng(8);
  set.prompt.resize(6);
  for (auto& t : set.prompt) t = static_cast<TokenId>(rng.next_below(32));
  for (int k = 0; k < 5; ++k) {
    TokenSequence cand(4);
    for (auto& t : cand) t = static_cast<TokenId>(rng.next_below(32));
    set.candidates.push_back(cand);
    set.correct.push_back(k % 2 == 0);
  }
  score_candidates(params, set);
  ASSERT_EQ(set.scores.size(), 5u);
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_DOUBLE_EQ(set.scores[k], score_pair(params, set.prompt, set.candidates[k]));
  }
}

TEST(ScoreCandidates, ZeroParamsGiveZeroScores) {
  ScorerParams p;
  p.config.vocab_size = 8;
  p.config.embed_dim = 2;
  p.theta.assign(p.config.param_count(), 0.0);
  BoNCandidateSet set;
  set.prompt = {1};
  set.candidates = {{2}, {3}};
  set.correct = {true, false};
  score_candidates(p, set);
  EXPECT_EQ(set.scores, (std::vector<double>{0.0, 0.0}));
}

TEST(ScoreCandidates, EmptyCandidateListIsDataError) {
  const ScorerParams p = init_params({.vocab_size = 8, .embed_dim = 2}, 1);
  BoNCandidateSet set;
  set.prompt = {1};
  EXPECT_THROW(score_candidates(p, set), DataError);
}

TEST(CandidateSetFiles, JsonlRoundTrip) {
  namespace fs = std::filesystem;
  const fs::path path = fs::temp_directory_path() / "rbs_bon_test.jsonl";
  SyntheticBoNSpec spec;
  spec.corpus.vocab_size = 32;
  spec.corpus.seed = 3;
  spec.n_sets = 4;
  spec.n_candidates = 8;
  const auto sets = make_synthetic_candidate_sets(spec);
  write_candidate_sets_jsonl(path, sets);
  const auto loaded = read_candidate_sets_jsonl(path);
  ASSERT_EQ(loaded.size(), sets.size());
  for (std::size_t i = 0; i < sets.size(); ++i) {
    EXPECT_EQ(loaded[i].prompt, sets[i].prompt);
    EXPECT_EQ(loaded[i].candidates, sets[i].candidates);
    EXPECT_EQ(loaded[i].correct, sets[i].correct);
  }
  fs::remove(path);
}

TEST(SyntheticCandidates, FlagsMatchKeySharing) {
  SyntheticBoNSpec spec;
  spec.corpus.vocab_size = 32;
  spec.corpus.seed = 12;
  spec.n_sets = 50;
  spec.n_candidates = 16;
  spec.base_rate = 0.25;
  const auto sets = make_synthetic_candidate_sets(spec);
  ASSERT_EQ(sets.size(), 50u);
  std::size_t correct_total = 0, total = 0;
  const std::uint32_t n_keys = spec.corpus.keys();
  for (const auto& set : sets) {
    // the prompt's dominant key
    std::vector<int> counts(spec.corpus.vocab_size, 0);
    for (TokenId t : set.prompt) ++counts[t];
    TokenId prompt_key = 0;
    for (TokenId t = 1; t <= n_keys; ++t) {
      if (counts[t] > counts[prompt_key]) prompt_key = t;
    }
    for (std::size_t k = 0; k < set.candidates.size(); ++k) {
      std::vector<int> ccounts(spec.corpus.vocab_size, 0);
      for (TokenId t : set.candidates[k]) ++ccounts[t];
      TokenId cand_key = 0;
      for (TokenId t = 1; t <= n_keys; ++t) {
        if (ccounts[t] > ccounts[cand_key]) cand_key = t;
      }
      if (set.correct[k]) {
        EXPECT_EQ(cand_key, prompt_key);
        ++correct_total;
      }
      ++total;
    }
  }
  // empirical base rate near the configured one
  const double rate = static_cast<double>(correct_total) / static_cast<double>(total);
  EXPECT_NEAR(rate, 0.25, 3.0 * std::sqrt(0.25 * 0.75 / static_cast<double>(total)));
}

TEST(BonCurveCsv, FormatsRowsAndMapLine) {
  BoNCurve curve;
  curve.ns = {1, 2};
  curve.accuracy = {0.5, 0.75};
  const std::string csv = bon_curve_to_csv(curve);
  EXPECT_EQ(csv, "N,accuracy\n1,0.5\n2,0.75\nMAP,0.75\n");
}

}  // namespace
}  // namespace rbs
