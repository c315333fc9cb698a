#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rbs/common.hpp"
#include "rbs/corpus.hpp"
#include "rbs/objective.hpp"
#include "rbs/scorer.hpp"

namespace rbs {

struct TrainConfig {
  std::uint32_t batch_size = 32;
  double centering_coeff = 0.01;
  double base_lr = 1e-6;
  double warmup_ratio = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  std::uint64_t token_budget = 11'000'000;
  std::uint64_t seed = 2025;
  std::uint64_t checkpoint_every_tokens = 0;  // 0: final checkpoint only
  std::uint32_t validate_every_steps = 50;
  std::uint32_t prefix_len = 512;   // L1, used for step-budget arithmetic
  std::uint32_t suffix_len = 1024;  // L2
  bool shuffle = false;             // default keeps stream order so in-batch
                                    // negatives stay contiguous text
  CenterVariant center_variant = CenterVariant::kPerRow;
  double grad_clip = 0.0;           // 0: disabled

  void validate() const {
    if (batch_size < 2) throw ConfigError("train: batch size must be at least 2");
    if (centering_coeff < 0.0) throw ConfigError("train: centering coefficient must be >= 0");
    if (!(warmup_ratio >= 0.0 && warmup_ratio < 1.0)) {
      throw ConfigError("train: warmup_ratio must lie in [0, 1)");
    }
    if (token_budget == 0) throw ConfigError("train: token_budget must be positive");
    if (prefix_len == 0 || suffix_len == 0) {
      throw ConfigError("train: prefix/suffix lengths must be positive");
    }
  }

  std::uint64_t tokens_per_step() const {
    return static_cast<std::uint64_t>(batch_size) * (prefix_len + suffix_len);
  }

  std::uint64_t planned_steps() const {
    return (token_budget + tokens_per_step() - 1) / tokens_per_step();
  }
};

// ---------------------------------------------------------------------------
// Optimizer.
// ---------------------------------------------------------------------------

/// Linear ramp from 0 to base_lr over the first ceil(warmup_ratio * total)
/// steps, constant base_lr afterwards.
inline double lr_schedule(std::uint64_t step, std::uint64_t total_steps, double base_lr,
                          double warmup_ratio) {
  const std::uint64_t warmup_steps =
      static_cast<std::uint64_t>(std::ceil(warmup_ratio * static_cast<double>(total_steps)));
  if (warmup_steps == 0 || step >= warmup_steps) return base_lr;
  return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
}

/// Bias-corrected Adam update; increments the step counter.
inline void adam_step(OptimizerState& state, std::vector<double>& theta,
                      std::span<const double> grad, double lr, double beta1, double beta2,
                      double eps) {
  if (state.m.empty()) {
    state.m.assign(theta.size(), 0.0);
    state.v.assign(theta.size(), 0.0);
  }
  if (grad.size() != theta.size() || state.m.size() != theta.size()) {
    throw ConfigError("adam_step: shape mismatch");
  }
  for (double g : grad) {
    if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient");
  }
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad[i];
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad[i] * grad[i];
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    theta[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

// ---------------------------------------------------------------------------
// Batch construction. Consecutive groups of B pairs in stream order; the
// trailing partial group is dropped. Optional seeded shuffle.
// ---------------------------------------------------------------------------

inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n_pairs,
                                                          std::uint32_t batch_size, bool shuffle,
                                                          std::uint64_t seed) {
  if (n_pairs < batch_size) {
    throw ConfigError("make_batches: need at least " + std::to_string(batch_size) +
                      " pairs, got " + std::to_string(n_pairs));
  }
  std::vector<std::size_t> order(n_pairs);
  for (std::size_t i = 0; i < n_pairs; ++i) order[i] = i;
  if (shuffle) {
    Rng rng(Rng::substream(seed, 0xba7c4));
    for (std::size_t i = n_pairs - 1; i > 0; --i) {
      const std::size_t j = rng.next_below(i + 1);
      std::swap(order[i], order[j]);
    }
  }
  std::vector<std::vector<std::size_t>> batches;
  batches.reserve(n_pairs / batch_size);
  for (std::size_t start = 0; start + batch_size <= n_pairs; start += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(start + batch_size));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Validation.
// ---------------------------------------------------------------------------

struct ValidationMetrics {
  double rank_acc = 0.0;   // rows whose diagonal is the strict row maximum
  double mean_pos = 0.0;   // mean diagonal score
  double mean_neg = 0.0;   // mean off-diagonal score
  double margin = 0.0;     // mean_pos - mean_neg
  double mean_sq = 0.0;    // mean of squared scores over all entries
};

/// Aggregates over every batch of the held-out set. Ties at the row maximum
/// count as incorrect, so an all-equal scorer measures 0 rather than 1.
inline ValidationMetrics validate(const ScorerParams& params,
                                  std::span<const PrefixSuffixPair> pairs,
                                  std::uint32_t batch_size) {
  const auto batches = make_batches(pairs.size(), batch_size, /*shuffle=*/false, /*seed=*/0);
  if (batches.empty()) throw ConfigError("validate: need at least one held-out batch");
  ValidationMetrics out;
  std::size_t rows = 0, correct = 0, entries = 0, off_entries = 0;
  double sum_pos = 0.0, sum_neg = 0.0, sum_sq = 0.0;
  std::vector<PrefixSuffixPair> batch(batch_size);
  for (const auto& idx : batches) {
    for (std::size_t k = 0; k < idx.size(); ++k) batch[k] = pairs[idx[k]];
    const ScoreMatrix s = score_matrix(params, batch);
    for (std::size_t i = 0; i < s.b; ++i) {
      bool strict_max = true;
      for (std::size_t j = 0; j < s.b; ++j) {
        const double v = s.at(i, j);
        sum_sq += v * v;
        ++entries;
        if (j == i) {
          sum_pos += v;
        } else {
          sum_neg += v;
          ++off_entries;
          if (v >= s.at(i, i)) strict_max = false;
        }
      }
      ++rows;
      if (strict_max) ++correct;
    }
  }
  out.rank_acc = static_cast<double>(correct) / static_cast<double>(rows);
  out.mean_pos = sum_pos / static_cast<double>(rows);
  out.mean_neg = sum_neg / static_cast<double>(off_entries);
  out.margin = out.mean_pos - out.mean_neg;
  out.mean_sq = sum_sq / static_cast<double>(entries);
  return out;
}

// ---------------------------------------------------------------------------
// Metrics log.
// ---------------------------------------------------------------------------

struct TrainMetricsRow {
  std::uint64_t step = 0;
  std::uint64_t tokens_seen = 0;
  double lr = 0.0;
  double bt_loss = 0.0;
  double center_loss = 0.0;
  double total_loss = 0.0;
  ValidationMetrics val;
};

inline constexpr std::string_view kMetricsCsvHeader =
    "step,tokens_seen,lr,bt_loss,center_loss,total_loss,val_rank_acc,val_mean_pos,"
    "val_mean_neg,val_margin,val_mean_sq_score";

inline std::string metrics_to_csv(std::span<const TrainMetricsRow> rows) {
  std::string out{kMetricsCsvHeader};
  out += '\n';
  for (const auto& r : rows) {
    out += std::to_string(r.step) + ',' + std::to_string(r.tokens_seen) + ',' +
           format_double(r.lr) + ',' + format_double(r.bt_loss) + ',' +
           format_double(r.center_loss) + ',' + format_double(r.total_loss) + ',' +
           format_double(r.val.rank_acc) + ',' + format_double(r.val.mean_pos) + ',' +
           format_double(r.val.mean_neg) + ',' + format_double(r.val.margin) + ',' +
           format_double(r.val.mean_sq) + '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Online training loop: consume batches until tokens_seen reaches the token
// budget, wrapping around the pair stream if the budget outlasts it. Tokens
// are counted on both sides of every pair.
// ---------------------------------------------------------------------------

struct TrainResult {
  ScorerParams params;
  OptimizerState opt;
  std::vector<TrainMetricsRow> metrics;
  std::uint64_t steps = 0;
  std::uint64_t tokens_seen = 0;
};

using CheckpointHook = std::function<void(const ScorerParams&, const OptimizerState&, bool final)>;

inline TrainResult train(const TrainConfig& cfg, const ScorerConfig& scorer_cfg,
                         std::span<const PrefixSuffixPair> train_pairs,
                         std::span<const PrefixSuffixPair> val_pairs,
                         const CheckpointHook& checkpoint_hook = {}) {
  cfg.validate();
  TrainResult result;
  result.params = init_params(scorer_cfg, cfg.seed);
  result.opt.m.assign(result.params.theta.size(), 0.0);
  result.opt.v.assign(result.params.theta.size(), 0.0);

  const std::uint64_t total_steps = cfg.planned_steps();
  std::vector<PrefixSuffixPair> batch(cfg.batch_size);
  std::uint64_t next_checkpoint = cfg.checkpoint_every_tokens;
  std::uint64_t epoch = 0;
  bool done = false;

  auto run_validation = [&](std::uint64_t step, double lr, const LossBreakdown& loss) {
    TrainMetricsRow row;
    row.step = step;
    row.tokens_seen = result.tokens_seen;
    row.lr = lr;
    row.bt_loss = loss.bt;
    row.center_loss = loss.center;
    row.total_loss = loss.total;
    if (!val_pairs.empty()) row.val = validate(result.params, val_pairs, cfg.batch_size);
    result.metrics.push_back(row);
  };

  LossBreakdown last_loss;
  double last_lr = 0.0;
  while (!done) {
    const auto batches =
        make_batches(train_pairs.size(), cfg.batch_size, cfg.shuffle, cfg.seed + epoch);
    for (const auto& idx : batches) {
      const double lr =
          lr_schedule(result.steps, total_steps, cfg.base_lr, cfg.warmup_ratio);
      for (std::size_t k = 0; k < idx.size(); ++k) batch[k] = train_pairs[idx[k]];

      BatchEval eval = eval_batch(result.params, batch, cfg.centering_coeff, cfg.center_variant);
      if (cfg.grad_clip > 0.0) {
        double norm_sq = 0.0;
        for (double g : eval.grad) norm_sq += g * g;
        const double norm = std::sqrt(norm_sq);
        if (norm > cfg.grad_clip) {
          const double scale = cfg.grad_clip / norm;
          for (double& g : eval.grad) g *= scale;
        }
      }
      adam_step(result.opt, result.params.theta, eval.grad, lr, cfg.beta1, cfg.beta2,
                cfg.adam_eps);

      for (const auto& p : batch) result.tokens_seen += p.prefix.size() + p.suffix.size();
      result.steps += 1;
      last_loss = eval.loss;
      last_lr = lr;

      if (cfg.validate_every_steps > 0 && result.steps % cfg.validate_every_steps == 0 &&
          result.tokens_seen < cfg.token_budget) {
        run_validation(result.steps, lr, eval.loss);
      }
      if (checkpoint_hook && cfg.checkpoint_every_tokens > 0 &&
          result.tokens_seen >= next_checkpoint) {
        checkpoint_hook(result.params, result.opt, /*final=*/false);
        next_checkpoint += cfg.checkpoint_every_tokens;
      }
      if (result.tokens_seen >= cfg.token_budget) {
        done = true;
        break;
      }
    }
    ++epoch;
  }
  run_validation(result.steps, last_lr, last_loss);
  if (checkpoint_hook) checkpoint_hook(result.params, result.opt, /*final=*/true);
  return result;
}

// ---------------------------------------------------------------------------
// Curated preference training: same loop skeleton, loss is the mean pairwise
// Bradley-Terry over explicit triples, optionally centered on both scores.
// Supports warm starts from an existing checkpoint.
// ---------------------------------------------------------------------------

/// Validation analogue for the curated path: accuracy is the fraction of
/// triples scoring the chosen response strictly above the rejected one.
inline ValidationMetrics validate_curated(const ScorerParams& params,
                                          std::span<const TokenTriple> triples) {
  if (triples.empty()) throw ConfigError("validate_curated: empty validation set");
  ValidationMetrics out;
  std::size_t correct = 0;
  double sum_c = 0.0, sum_r = 0.0, sum_sq = 0.0;
  for (const auto& t : triples) {
    const double s_c = score_pair(params, t.prompt, t.chosen);
    const double s_r = score_pair(params, t.prompt, t.rejected);
    if (s_c > s_r) ++correct;
    sum_c += s_c;
    sum_r += s_r;
    sum_sq += s_c * s_c + s_r * s_r;
  }
  const double n = static_cast<double>(triples.size());
  out.rank_acc = static_cast<double>(correct) / n;
  out.mean_pos = sum_c / n;
  out.mean_neg = sum_r / n;
  out.margin = out.mean_pos - out.mean_neg;
  out.mean_sq = sum_sq / (2.0 * n);
  return out;
}

inline TrainResult train_curated(const TrainConfig& cfg, ScorerParams initial,
                                 std::span<const TokenTriple> train_triples,
                                 std::span<const TokenTriple> val_triples,
                                 const CheckpointHook& checkpoint_hook = {}) {
  cfg.validate();
  if (train_triples.size() < cfg.batch_size) {
    throw ConfigError("train_curated: need at least one full batch of triples");
  }
  TrainResult result;
  result.params = std::move(initial);
  result.opt.m.assign(result.params.theta.size(), 0.0);
  result.opt.v.assign(result.params.theta.size(), 0.0);

  const std::uint64_t total_steps = cfg.planned_steps();
  std::vector<TokenTriple> batch(cfg.batch_size);
  std::uint64_t epoch = 0;
  bool done = false;
  CuratedEval last_eval;
  double last_lr = 0.0;

  auto emit_row = [&](std::uint64_t step, double lr, const CuratedEval& ev) {
    TrainMetricsRow row;
    row.step = step;
    row.tokens_seen = result.tokens_seen;
    row.lr = lr;
    row.bt_loss = ev.bt;
    row.center_loss = ev.center;
    row.total_loss = ev.total;
    if (!val_triples.empty()) row.val = validate_curated(result.params, val_triples);
    result.metrics.push_back(row);
  };

  while (!done) {
    const auto batches =
        make_batches(train_triples.size(), cfg.batch_size, cfg.shuffle, cfg.seed + epoch);
    for (const auto& idx : batches) {
      const double lr = lr_schedule(result.steps, total_steps, cfg.base_lr, cfg.warmup_ratio);
      for (std::size_t k = 0; k < idx.size(); ++k) batch[k] = train_triples[idx[k]];
      last_eval = eval_curated_batch(result.params, batch, cfg.centering_coeff);
      adam_step(result.opt, result.params.theta, last_eval.grad, lr, cfg.beta1, cfg.beta2,
                cfg.adam_eps);
      for (const auto& t : batch) {
        result.tokens_seen += t.prompt.size() + t.chosen.size() + t.rejected.size();
      }
      result.steps += 1;
      last_lr = lr;
      if (cfg.validate_every_steps > 0 && result.steps % cfg.validate_every_steps == 0 &&
          result.tokens_seen < cfg.token_budget) {
        emit_row(result.steps, lr, last_eval);
      }
      if (result.tokens_seen >= cfg.token_budget) {
        done = true;
        break;
      }
    }
    ++epoch;
  }
  emit_row(result.steps, last_lr, last_eval);
  if (checkpoint_hook) checkpoint_hook(result.params, result.opt, /*final=*/true);
  return result;
}

// ---------------------------------------------------------------------------
// Curated triples input: JSON lines with prompt / chosen / rejected strings.
// ---------------------------------------------------------------------------

inline std::vector<TokenTriple> read_triples_jsonl(const std::filesystem::path& path,
                                                   const Tokenizer& tokenizer) {
  const std::string data = read_file(path);
  std::vector<TokenTriple> triples;
  std::istringstream lines(data);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": invalid JSON: " + e.what());
    }
    for (const char* field : {"prompt", "chosen", "rejected"}) {
      if (!obj.contains(field) || !obj[field].is_string()) {
        throw DataError(path.string() + ":" + std::to_string(lineno) + ": missing string field '" +
                        field + "'");
      }
    }
    TokenTriple t;
    t.prompt = tokenizer.tokenize(obj["prompt"].get<std::string>());
    t.chosen = tokenizer.tokenize(obj["chosen"].get<std::string>());
    t.rejected = tokenizer.tokenize(obj["rejected"].get<std::string>());
    if (t.prompt.empty() || t.chosen.empty() || t.rejected.empty()) {
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": prompt/chosen/rejected must tokenize to at least one token");
    }
    triples.push_back(std::move(t));
  }
  return triples;
}

}  // namespace rbs
