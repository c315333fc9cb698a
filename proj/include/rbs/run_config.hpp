#pragma once

#include <optional>
#include <string>

#include "rbs/config.hpp"
#include "rbs/policy.hpp"
#include "rbs/scorer.hpp"
#include "rbs/trainer.hpp"

namespace rbs {

/// Command-line overrides that take precedence over config-file values.
struct RunOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::uint32_t> batch_size;
  std::optional<double> centering;
  std::optional<double> lr;
  std::optional<std::uint64_t> token_budget;
};

struct ResolvedRunConfig {
  TrainConfig train;
  ScorerConfig scorer;
  double val_fraction = 0.1;
  KvConfig kv;  // fully resolved, for the run-directory echo
};

/// Applies overrides to the parsed config, reads every key with its
/// published default, rejects unknown keys, and echoes the resolved values
/// back into the returned KvConfig.
inline ResolvedRunConfig resolve_run_config(KvConfig kv, const RunOverrides& overrides,
                                            std::uint32_t default_vocab) {
  ResolvedRunConfig r;
  r.kv = std::move(kv);
  if (overrides.seed) r.kv.set("seed", std::to_string(*overrides.seed));
  if (overrides.batch_size) r.kv.set("B", std::to_string(*overrides.batch_size));
  if (overrides.centering) r.kv.set("c", format_double(*overrides.centering));
  if (overrides.lr) r.kv.set("lr", format_double(*overrides.lr));
  if (overrides.token_budget) r.kv.set("token_budget", std::to_string(*overrides.token_budget));

  TrainConfig& t = r.train;
  t.batch_size = static_cast<std::uint32_t>(r.kv.get_u64("B", 32));
  t.centering_coeff = r.kv.get_double("c", 0.01);
  t.base_lr = r.kv.get_double("lr", 1e-6);
  t.warmup_ratio = r.kv.get_double("warmup_ratio", 0.05);
  t.beta1 = r.kv.get_double("beta1", 0.9);
  t.beta2 = r.kv.get_double("beta2", 0.95);
  t.adam_eps = r.kv.get_double("adam_eps", 1e-8);
  t.token_budget = r.kv.get_u64("token_budget", 11'000'000);
  t.seed = r.kv.get_u64("seed", 2025);
  t.checkpoint_every_tokens = r.kv.get_u64("checkpoint_every", 0);
  t.validate_every_steps = static_cast<std::uint32_t>(r.kv.get_u64("validate_every", 50));
  t.prefix_len = static_cast<std::uint32_t>(r.kv.get_u64("L1", 512));
  t.suffix_len = static_cast<std::uint32_t>(r.kv.get_u64("L2", 1024));
  t.shuffle = r.kv.get_bool("shuffle", false);
  t.grad_clip = r.kv.get_double("grad_clip", 0.0);
  const std::string variant = r.kv.get_string("center_variant", "per_row");
  if (variant == "per_row") {
    t.center_variant = CenterVariant::kPerRow;
  } else if (variant == "joint") {
    t.center_variant = CenterVariant::kJointMean;
  } else {
    throw ConfigError("center_variant must be per_row or joint, got '" + variant + "'");
  }

  ScorerConfig& s = r.scorer;
  s.vocab_size = static_cast<std::uint32_t>(r.kv.get_u64("vocab_size", default_vocab));
  s.embed_dim = static_cast<std::uint32_t>(r.kv.get_u64("d", 32));
  s.hidden_dim = static_cast<std::uint32_t>(r.kv.get_u64("hidden_dim", 64));
  s.init_scale = r.kv.get_double("init_scale", 0.1);
  const std::string arch = r.kv.get_string("arch", "bilinear");
  if (arch == "bilinear") {
    s.arch = ScorerArch::kBilinear;
  } else if (arch == "mlp") {
    s.arch = ScorerArch::kMlp;
  } else {
    throw ConfigError("arch must be bilinear or mlp, got '" + arch + "'");
  }
  r.val_fraction = r.kv.get_double("val_fraction", 0.1);
  r.kv.reject_unknown();

  r.kv.set("B", std::to_string(t.batch_size));
  r.kv.set("c", format_double(t.centering_coeff));
  r.kv.set("lr", format_double(t.base_lr));
  r.kv.set("warmup_ratio", format_double(t.warmup_ratio));
  r.kv.set("beta1", format_double(t.beta1));
  r.kv.set("beta2", format_double(t.beta2));
  r.kv.set("adam_eps", format_double(t.adam_eps));
  r.kv.set("token_budget", std::to_string(t.token_budget));
  r.kv.set("seed", std::to_string(t.seed));
  r.kv.set("checkpoint_every", std::to_string(t.checkpoint_every_tokens));
  r.kv.set("validate_every", std::to_string(t.validate_every_steps));
  r.kv.set("L1", std::to_string(t.prefix_len));
  r.kv.set("L2", std::to_string(t.suffix_len));
  r.kv.set("shuffle", t.shuffle ? "true" : "false");
  r.kv.set("grad_clip", format_double(t.grad_clip));
  r.kv.set("center_variant", t.center_variant == CenterVariant::kPerRow ? "per_row" : "joint");
  r.kv.set("vocab_size", std::to_string(s.vocab_size));
  r.kv.set("d", std::to_string(s.embed_dim));
  r.kv.set("hidden_dim", std::to_string(s.hidden_dim));
  r.kv.set("init_scale", format_double(s.init_scale));
  r.kv.set("arch", arch);
  r.kv.set("val_fraction", format_double(r.val_fraction));
  return r;
}

/// GRPO run configuration; in this context the `lr` key is the policy
/// learning rate.
struct ResolvedGrpoConfig {
  GrpoConfig grpo;
  KvConfig kv;
};

inline ResolvedGrpoConfig resolve_grpo_config(KvConfig kv) {
  ResolvedGrpoConfig r;
  r.kv = std::move(kv);
  GrpoConfig& g = r.grpo;
  g.group_size = static_cast<std::uint32_t>(r.kv.get_u64("K", 8));
  g.lambda = r.kv.get_double("lambda", 0.1);
  g.clip = r.kv.get_double("clip", 0.2);
  g.epochs = static_cast<std::uint32_t>(r.kv.get_u64("epochs", 5));
  g.lr = r.kv.get_double("lr", 3.0);
  g.adv_eps = r.kv.get_double("adv_eps", 1e-6);
  g.completion_len = r.kv.get_u64("completion_len", 16);
  g.seed = r.kv.get_u64("seed", 2025);
  r.kv.reject_unknown();
  r.kv.set("K", std::to_string(g.group_size));
  r.kv.set("lambda", format_double(g.lambda));
  r.kv.set("clip", format_double(g.clip));
  r.kv.set("epochs", std::to_string(g.epochs));
  r.kv.set("lr", format_double(g.lr));
  r.kv.set("adv_eps", format_double(g.adv_eps));
  r.kv.set("completion_len", std::to_string(g.completion_len));
  r.kv.set("seed", std::to_string(g.seed));
  return r;
}

}  // namespace rbs
