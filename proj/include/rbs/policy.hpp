#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rbs/common.hpp"
#include "rbs/corpus.hpp"
#include "rbs/scorer.hpp"

namespace rbs {

// ---------------------------------------------------------------------------
// Group-relative advantages: standardize the K rewards of one prompt group
// with the group mean and population standard deviation.
// ---------------------------------------------------------------------------

inline std::vector<double> group_advantages(std::span<const double> rewards, double eps) {
  if (rewards.size() < 2) throw ConfigError("group_advantages: need at least 2 rewards");
  if (!(eps > 0.0)) throw ConfigError("group_advantages: eps must be positive");
  const double k = static_cast<double>(rewards.size());
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= k;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sigma = std::sqrt(var / k);
  std::vector<double> advantages(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    advantages[i] = (rewards[i] - mean) / (sigma + eps);
  }
  return advantages;
}

// ---------------------------------------------------------------------------
// Loss terms over per-token log-probability arrays.
// ---------------------------------------------------------------------------

/// PPO clipped surrogate, averaged over all tokens in the group:
/// -min(rho_t * A, clamp(rho_t, 1-clip, 1+clip) * A) with
/// rho_t = exp(logp_new_t - logp_old_t) and A broadcast per completion.
inline double clipped_surrogate(std::span<const std::vector<double>> logp_new,
                                std::span<const std::vector<double>> logp_old,
                                std::span<const double> advantages, double clip) {
  if (!(clip > 0.0)) throw ConfigError("clipped_surrogate: clip must be positive");
  if (logp_new.size() != logp_old.size() || logp_new.size() != advantages.size()) {
    throw ConfigError("clipped_surrogate: completion counts disagree");
  }
  double total = 0.0;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < logp_new.size(); ++i) {
    if (logp_new[i].size() != logp_old[i].size()) {
      throw ConfigError("clipped_surrogate: token counts disagree in completion " +
                        std::to_string(i));
    }
    const double a = advantages[i];
    for (std::size_t t = 0; t < logp_new[i].size(); ++t) {
      const double rho = std::exp(logp_new[i][t] - logp_old[i][t]);
      if (!std::isfinite(rho)) throw NumericError("clipped_surrogate: non-finite ratio");
      const double clamped = std::clamp(rho, 1.0 - clip, 1.0 + clip);
      total += -std::min(rho * a, clamped * a);
      ++tokens;
    }
  }
  if (tokens == 0) throw ConfigError("clipped_surrogate: no tokens");
  return total / static_cast<double>(tokens);
}

/// MSE form of the KL regularizer on token-level log-probability differences
/// against the frozen reference policy: mean of 0.5 * (logp_new - logp_ref)^2.
inline double kl_mse(std::span<const std::vector<double>> logp_new,
                     std::span<const std::vector<double>> logp_ref) {
  if (logp_new.size() != logp_ref.size()) throw ConfigError("kl_mse: completion counts disagree");
  double total = 0.0;
  std::size_t tokens = 0;
  for (std::size_t i = 0; i < logp_new.size(); ++i) {
    if (logp_new[i].size() != logp_ref[i].size()) {
      throw ConfigError("kl_mse: token counts disagree in completion " + std::to_string(i));
    }
    for (std::size_t t = 0; t < logp_new[i].size(); ++t) {
      const double d = logp_new[i][t] - logp_ref[i][t];
      total += 0.5 * d * d;
      ++tokens;
    }
  }
  if (tokens == 0) return 0.0;
  return total / static_cast<double>(tokens);
}

// ---------------------------------------------------------------------------
// Rollouts.
// ---------------------------------------------------------------------------

/// One prompt's K completions with rewards, standardized advantages, and
/// per-token log-probabilities under the current, behavior, and reference
/// policies.
struct GroupRollout {
  TokenSequence prompt;
  std::vector<TokenSequence> completions;
  std::vector<double> rewards;
  std::vector<double> advantages;
  std::vector<std::vector<double>> logp_new;
  std::vector<std::vector<double>> logp_old;
  std::vector<std::vector<double>> logp_ref;
};

/// Clipped surrogate plus lambda * KL regularizer, averaged over rollouts.
inline double actor_loss(std::span<const GroupRollout> rollouts, double clip, double lambda) {
  if (lambda < 0.0) throw ConfigError("actor_loss: lambda must be non-negative");
  if (rollouts.empty()) throw ConfigError("actor_loss: no rollouts");
  double total = 0.0;
  for (const auto& g : rollouts) {
    total += clipped_surrogate(g.logp_new, g.logp_old, g.advantages, clip) +
             lambda * kl_mse(g.logp_new, g.logp_ref);
  }
  return total / static_cast<double>(rollouts.size());
}

// ---------------------------------------------------------------------------
// Toy actor: a table of logits, one row per conditioning state, where the
// state of a prompt is its most frequent token (ties to the smallest id).
// Completion tokens are drawn i.i.d. from softmax(row / temperature), so the
// distribution is shared across positions.
// ---------------------------------------------------------------------------

struct ToyPolicy {
  std::uint32_t vocab_size = 0;
  double temperature = 1.0;
  std::vector<double> logits;  // vocab_size x vocab_size, row = state

  static ToyPolicy uniform(std::uint32_t vocab_size, double temperature = 1.0) {
    ToyPolicy p;
    p.vocab_size = vocab_size;
    p.temperature = temperature;
    p.logits.assign(static_cast<std::size_t>(vocab_size) * vocab_size, 0.0);
    return p;
  }

  std::span<const double> row(TokenId state) const {
    return {logits.data() + static_cast<std::size_t>(state) * vocab_size, vocab_size};
  }

  /// log softmax(row / temperature) for every vocabulary entry.
  std::vector<double> log_probs(TokenId state) const {
    const auto r = row(state);
    std::vector<double> lp(vocab_size);
    double max_logit = -HUGE_VAL;
    for (std::size_t i = 0; i < vocab_size; ++i) {
      if (!std::isfinite(r[i])) throw NumericError("toy policy: non-finite logit");
      lp[i] = r[i] / temperature;
      max_logit = std::max(max_logit, lp[i]);
    }
    double z = 0.0;
    for (double& x : lp) z += std::exp(x - max_logit);
    const double log_z = max_logit + std::log(z);
    for (double& x : lp) x -= log_z;
    return lp;
  }

  TokenSequence sample_completion(TokenId state, std::size_t len, Rng& rng) const {
    const std::vector<double> lp = log_probs(state);
    std::vector<double> cdf(vocab_size);
    double acc = 0.0;
    for (std::size_t i = 0; i < vocab_size; ++i) {
      acc += std::exp(lp[i]);
      cdf[i] = acc;
    }
    TokenSequence out;
    out.reserve(len);
    for (std::size_t t = 0; t < len; ++t) {
      const double u = rng.next_double() * acc;
      const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
      out.push_back(static_cast<TokenId>(std::min<std::size_t>(
          static_cast<std::size_t>(it - cdf.begin()), vocab_size - 1)));
    }
    return out;
  }
};

/// Conditioning state of a prompt: its most frequent token id, ties broken
/// toward the smallest id.
inline TokenId prompt_state(const TokenSequence& prompt, std::uint32_t vocab_size) {
  if (prompt.empty()) throw DataError("prompt_state: empty prompt");
  std::vector<std::uint32_t> counts(vocab_size, 0);
  for (TokenId t : prompt) {
    if (t >= vocab_size) throw DataError("prompt_state: token id out of range");
    ++counts[t];
  }
  TokenId best = 0;
  std::uint32_t best_count = 0;
  for (TokenId t = 0; t < vocab_size; ++t) {
    if (counts[t] > best_count) {
      best_count = counts[t];
      best = t;
    }
  }
  return best;
}

/// Per-token log-probabilities of stored completions under `policy`.
inline std::vector<std::vector<double>> completion_logps(const ToyPolicy& policy,
                                                         const GroupRollout& rollout) {
  const TokenId state = prompt_state(rollout.prompt, policy.vocab_size);
  const std::vector<double> lp = policy.log_probs(state);
  std::vector<std::vector<double>> out(rollout.completions.size());
  for (std::size_t i = 0; i < rollout.completions.size(); ++i) {
    out[i].reserve(rollout.completions[i].size());
    for (TokenId t : rollout.completions[i]) out[i].push_back(lp[t]);
  }
  return out;
}

/// actor_loss with logp_new recomputed from the live policy. The stored
/// logp_old / logp_ref arrays stay fixed.
inline double actor_loss_with_policy(const ToyPolicy& policy,
                                     std::span<const GroupRollout> rollouts, double clip,
                                     double lambda) {
  std::vector<GroupRollout> live(rollouts.begin(), rollouts.end());
  for (auto& g : live) g.logp_new = completion_logps(policy, g);
  return actor_loss(live, clip, lambda);
}

/// Exact gradient of actor_loss_with_policy with respect to the policy's
/// logits table. Non-zero only in the rows of states that appear in the
/// rollouts; tokens whose ratio sits in the active clip region contribute
/// nothing to the surrogate part.
inline std::vector<double> actor_loss_grad(const ToyPolicy& policy,
                                           std::span<const GroupRollout> rollouts, double clip,
                                           double lambda) {
  if (rollouts.empty()) throw ConfigError("actor_loss_grad: no rollouts");
  std::vector<double> grad(policy.logits.size(), 0.0);
  const double inv_groups = 1.0 / static_cast<double>(rollouts.size());
  for (const auto& g : rollouts) {
    const TokenId state = prompt_state(g.prompt, policy.vocab_size);
    const std::vector<double> lp = policy.log_probs(state);
    const std::size_t v = policy.vocab_size;
    std::size_t tokens = 0;
    for (const auto& comp : g.completions) tokens += comp.size();
    if (tokens == 0) continue;
    const double inv_tokens = 1.0 / static_cast<double>(tokens);

    // Accumulate d loss / d logp_new[token id] for this state, then push
    // through the log-softmax jacobian once.
    std::vector<double> dlogp(v, 0.0);
    for (std::size_t i = 0; i < g.completions.size(); ++i) {
      const double a = g.advantages[i];
      for (std::size_t t = 0; t < g.completions[i].size(); ++t) {
        const TokenId tok = g.completions[i][t];
        const double lp_new = lp[tok];
        const double rho = std::exp(lp_new - g.logp_old[i][t]);
        const double clamped = std::clamp(rho, 1.0 - clip, 1.0 + clip);
        // d(-min(rho A, clamped A))/d logp_new: -rho A when the raw branch is
        // the minimum; zero when the clamped branch is active.
        if (rho * a <= clamped * a) dlogp[tok] += -rho * a * inv_tokens * inv_groups;
        dlogp[tok] += lambda * (lp_new - g.logp_ref[i][t]) * inv_tokens * inv_groups;
      }
    }
    // d logp[k] / d logit[j] = (delta_kj - p_j) / temperature
    double dot = 0.0;
    std::vector<double> probs(v);
    for (std::size_t j = 0; j < v; ++j) {
      probs[j] = std::exp(lp[j]);
      dot += dlogp[j];
    }
    double* grow = grad.data() + static_cast<std::size_t>(state) * v;
    for (std::size_t j = 0; j < v; ++j) {
      grow[j] += (dlogp[j] - dot * probs[j]) / policy.temperature;
    }
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Toy GRPO task and training loop.
// ---------------------------------------------------------------------------

/// Keyed-completion task: each prompt is dominated by one key token and a
/// completion counts as correct when it contains that key.
struct ToyTask {
  std::uint32_t vocab_size = 0;
  std::vector<TokenSequence> prompts;
  std::vector<TokenId> keys;
};

inline ToyTask make_toy_task(const SyntheticSpec& spec, std::size_t n_prompts,
                             std::size_t prompt_len) {
  spec.validate();
  ToyTask task;
  task.vocab_size = spec.vocab_size;
  const std::uint32_t n_keys = spec.keys();
  const std::uint32_t n_filler = spec.vocab_size - 1 - n_keys;
  for (std::size_t i = 0; i < n_prompts; ++i) {
    Rng rng(Rng::substream(spec.seed, 0x70a5c0 + i));
    const TokenId key = 1 + static_cast<TokenId>(rng.next_below(n_keys));
    TokenSequence prompt;
    prompt.reserve(prompt_len);
    for (std::size_t t = 0; t < prompt_len; ++t) {
      if (rng.next_double() < spec.key_density) {
        prompt.push_back(key);
      } else {
        prompt.push_back(n_keys + 1 + static_cast<TokenId>(rng.next_below(n_filler)));
      }
    }
    task.prompts.push_back(std::move(prompt));
    task.keys.push_back(key);
  }
  return task;
}

inline double oracle_accuracy(const TokenSequence& completion, TokenId key) {
  return std::find(completion.begin(), completion.end(), key) != completion.end() ? 1.0 : 0.0;
}

struct GrpoConfig {
  std::uint32_t group_size = 8;  // K
  double lambda = 0.1;
  double clip = 0.2;
  std::uint32_t epochs = 5;
  double lr = 3.0;               // gradient-descent step on the logits table
  double adv_eps = 1e-6;
  std::size_t completion_len = 16;
  std::uint64_t seed = 2025;

  void validate() const {
    if (group_size < 2) throw ConfigError("grpo: group size K must be at least 2");
    if (lambda < 0.0) throw ConfigError("grpo: lambda must be non-negative");
    if (!(clip > 0.0)) throw ConfigError("grpo: clip must be positive");
    if (epochs == 0) throw ConfigError("grpo: epochs must be positive");
    if (completion_len == 0) throw ConfigError("grpo: completion_len must be positive");
  }
};

struct GrpoEpochRow {
  std::uint32_t epoch = 0;
  double mean_oracle_acc = 0.0;
  double mean_rm_reward = 0.0;
};

struct GrpoResult {
  ToyPolicy policy;
  std::vector<GrpoEpochRow> curve;
};

inline std::string grpo_curve_to_csv(std::span<const GrpoEpochRow> curve) {
  std::string out = "epoch,mean_oracle_acc,mean_rm_reward\n";
  for (const auto& row : curve) {
    out += std::to_string(row.epoch) + ',' + format_double(row.mean_oracle_acc) + ',' +
           format_double(row.mean_rm_reward) + '\n';
  }
  return out;
}

/// Reward hook so controls (e.g. a constant reward) can replace the scorer.
using RewardFn = std::function<double(const TokenSequence& prompt, const TokenSequence& completion)>;

/// One epoch: snapshot the behavior policy, sample K completions per prompt
/// from it, score and standardize per group, then apply one gradient-descent
/// update per group against the live policy. The reference policy stays
/// frozen at initialization. Each epoch's curve row reflects the completions
/// sampled at that epoch's start, so row 0 is the untrained baseline.
inline GrpoResult grpo_train_toy(const GrpoConfig& cfg, const ToyTask& task,
                                 const RewardFn& reward) {
  cfg.validate();
  if (task.prompts.empty()) throw ConfigError("grpo: task has no prompts");
  GrpoResult result;
  result.policy = ToyPolicy::uniform(task.vocab_size);
  const ToyPolicy reference = result.policy;
  Rng rng(Rng::substream(cfg.seed, 0x9c90));

  for (std::uint32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const ToyPolicy behavior = result.policy;  // refreshed once per epoch
    std::vector<GroupRollout> rollouts;
    rollouts.reserve(task.prompts.size());
    double acc_sum = 0.0, reward_sum = 0.0;
    std::size_t n_completions = 0;
    for (std::size_t p = 0; p < task.prompts.size(); ++p) {
      GroupRollout g;
      g.prompt = task.prompts[p];
      const TokenId state = prompt_state(g.prompt, task.vocab_size);
      for (std::uint32_t k = 0; k < cfg.group_size; ++k) {
        TokenSequence comp = behavior.sample_completion(state, cfg.completion_len, rng);
        const double r = reward(g.prompt, comp);
        if (!std::isfinite(r)) throw NumericError("grpo: non-finite reward");
        acc_sum += oracle_accuracy(comp, task.keys[p]);
        reward_sum += r;
        ++n_completions;
        g.completions.push_back(std::move(comp));
        g.rewards.push_back(r);
      }
      g.advantages = group_advantages(g.rewards, cfg.adv_eps);
      g.logp_old = completion_logps(behavior, g);
      g.logp_ref = completion_logps(reference, g);
      g.logp_new = g.logp_old;  // identical until the first update this epoch
      rollouts.push_back(std::move(g));
    }
    result.curve.push_back(GrpoEpochRow{epoch, acc_sum / static_cast<double>(n_completions),
                                        reward_sum / static_cast<double>(n_completions)});
    for (const auto& g : rollouts) {
      const std::vector<double> grad =
          actor_loss_grad(result.policy, std::span<const GroupRollout>(&g, 1), cfg.clip,
                          cfg.lambda);
      for (std::size_t i = 0; i < grad.size(); ++i) result.policy.logits[i] -= cfg.lr * grad[i];
    }
    for (double x : result.policy.logits) {
      if (!std::isfinite(x)) throw NumericError("grpo: policy logits became non-finite");
    }
  }
  return result;
}

/// Scorer-backed reward for GRPO.
inline RewardFn scorer_reward(const ScorerParams& params) {
  return [&params](const TokenSequence& prompt, const TokenSequence& completion) {
    return score_pair(params, prompt, completion);
  };
}

}  // namespace rbs
