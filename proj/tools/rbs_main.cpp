// rbs: reward scorer pipeline over prefix-suffix preference pairs.
//
// Subcommands cover the full workflow: synthesize or ingest a corpus, build
// prefix-suffix pairs, train the scorer online or on curated triples,
// validate, rerank candidates best-of-N, run toy GRPO against the scorer,
// and estimate preference-data costs.
//
// Exit codes: 0 success, 1 usage/config error, 2 data/format error,
// 3 numerical failure. RBS_SEED overrides the configured seed and RBS_OUT
// re-roots relative output directories.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rbs/common.hpp"
#include "rbs/config.hpp"
#include "rbs/corpus.hpp"
#include "rbs/costs.hpp"
#include "rbs/objective.hpp"
#include "rbs/policy.hpp"
#include "rbs/run_config.hpp"
#include "rbs/scorer.hpp"
#include "rbs/selection.hpp"
#include "rbs/splitter.hpp"
#include "rbs/trainer.hpp"

namespace fs = std::filesystem;

namespace {

fs::path resolve_out_dir(const std::string& out_flag) {
  fs::path out(out_flag);
  if (out.is_relative()) {
    if (const char* root = std::getenv("RBS_OUT")) out = fs::path(root) / out;
  }
  fs::create_directories(out);
  return out;
}

std::uint64_t apply_seed_env(std::uint64_t seed) {
  if (const char* env = std::getenv("RBS_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw rbs::ConfigError("RBS_SEED is not an unsigned integer: " + std::string(env));
    }
  }
  return seed;
}

rbs::KvConfig load_config_file(const std::string& path) {
  if (path.empty()) return rbs::KvConfig{};
  return rbs::KvConfig::parse_file(path);
}

rbs::Tokenizer make_tokenizer(const std::string& mode, const std::string& vocab_path) {
  if (mode == "byte") return rbs::Tokenizer::byte_level();
  if (mode == "whitespace") {
    if (vocab_path.empty()) {
      throw rbs::ConfigError("whitespace tokenizer requires --vocab <path>");
    }
    return rbs::Tokenizer::whitespace(rbs::WhitespaceVocab::load(vocab_path));
  }
  throw rbs::ConfigError("unknown tokenizer '" + mode + "' (expected byte or whitespace)");
}

rbs::PriceSpec parse_prices(const std::string& spec) {
  if (spec == "stated") return rbs::PriceSpec::stated();
  if (spec == "table3-effective") return rbs::PriceSpec::table3_effective();
  if (spec.rfind("custom:", 0) == 0) {
    const std::string body = spec.substr(7);
    const auto comma = body.find(',');
    if (comma == std::string::npos) {
      throw rbs::ConfigError("--prices custom form is custom:P_in,P_out");
    }
    rbs::PriceSpec p = rbs::PriceSpec::stated();
    try {
      p.p_in = std::stod(body.substr(0, comma));
      p.p_out = std::stod(body.substr(comma + 1));
    } catch (const std::exception&) {
      throw rbs::ConfigError("--prices custom values must be numbers");
    }
    p.validate();
    return p;
  }
  throw rbs::ConfigError("unknown --prices '" + spec +
                         "' (expected stated, table3-effective, or custom:P_in,P_out)");
}

std::vector<std::uint32_t> parse_n_list(const std::string& text) {
  std::vector<std::uint32_t> ns;
  std::istringstream fields(text);
  std::string field;
  while (std::getline(fields, field, ',')) {
    try {
      ns.push_back(static_cast<std::uint32_t>(std::stoul(field)));
    } catch (const std::exception&) {
      throw rbs::ConfigError("--N-list entries must be positive integers");
    }
  }
  if (ns.empty()) throw rbs::ConfigError("--N-list is empty");
  return ns;
}

struct TrainFlags {
  std::string config_path;
  std::string out = "run";
  std::optional<std::uint64_t> seed;
  std::optional<std::uint32_t> batch_size;
  std::optional<double> centering;
  std::optional<double> lr;
  std::optional<std::uint64_t> token_budget;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--config", f.config_path, "flat key=value config file");
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--seed", f.seed, "seed override");
  cmd->add_option("--B", f.batch_size, "batch size override");
  cmd->add_option("--c", f.centering, "centering coefficient override");
  cmd->add_option("--lr", f.lr, "base learning rate override");
  cmd->add_option("--token-budget", f.token_budget, "training token budget override");
}

/// File config -> flag overrides -> typed reads with published defaults,
/// then the RBS_SEED environment override on top.
rbs::ResolvedRunConfig resolve_train_config(const TrainFlags& f, std::uint32_t default_vocab) {
  rbs::RunOverrides overrides;
  overrides.seed = f.seed;
  overrides.batch_size = f.batch_size;
  overrides.centering = f.centering;
  overrides.lr = f.lr;
  overrides.token_budget = f.token_budget;
  rbs::ResolvedRunConfig r =
      rbs::resolve_run_config(load_config_file(f.config_path), overrides, default_vocab);
  r.train.seed = apply_seed_env(r.train.seed);
  r.kv.set("seed", std::to_string(r.train.seed));
  return r;
}

rbs::StoredPairs load_pairs(const std::string& path) {
  if (fs::path(path).extension() == ".jsonl") {
    rbs::StoredPairs stored;
    stored.pairs = rbs::read_pairs_jsonl(path);
    for (const auto& p : stored.pairs) {
      for (rbs::TokenId t : p.prefix) stored.vocab_size = std::max(stored.vocab_size, t + 1);
      for (rbs::TokenId t : p.suffix) stored.vocab_size = std::max(stored.vocab_size, t + 1);
    }
    return stored;
  }
  return rbs::read_pairs_binary(path);
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

int cmd_synth(const std::string& out_flag, rbs::SyntheticSpec spec, std::size_t bon_sets,
              std::size_t bon_candidates, double bon_base_rate, std::size_t bon_prompt_len,
              std::size_t bon_cand_len, std::size_t n_triples, std::size_t triple_len) {
  spec.seed = apply_seed_env(spec.seed);
  const fs::path out = resolve_out_dir(out_flag);
  const auto docs = rbs::gen_synthetic_corpus(spec);
  rbs::write_documents_jsonl(out / "corpus.jsonl", docs);
  const rbs::WhitespaceVocab vocab = rbs::synthetic_vocab(spec.vocab_size, spec.keys());
  vocab.save(out / "vocab.txt");

  if (bon_sets > 0) {
    rbs::SyntheticBoNSpec bon;
    bon.corpus = spec;
    bon.n_sets = bon_sets;
    bon.n_candidates = bon_candidates;
    bon.base_rate = bon_base_rate;
    bon.prompt_len = bon_prompt_len;
    bon.candidate_len = bon_cand_len;
    const auto sets = rbs::make_synthetic_candidate_sets(bon);
    rbs::write_candidate_sets_jsonl(out / "bon_candidates.jsonl", sets);
  }
  if (n_triples > 0) {
    // curated-style triples in the synthetic vocabulary: chosen shares the
    // prompt's key, rejected carries a different one
    const std::uint32_t n_keys = spec.keys();
    const std::uint32_t n_filler = spec.vocab_size - 1 - n_keys;
    std::string text;
    for (std::size_t i = 0; i < n_triples; ++i) {
      rbs::Rng rng(rbs::Rng::substream(spec.seed, 0x7219e0 + i));
      const rbs::TokenId key = 1 + static_cast<rbs::TokenId>(rng.next_below(n_keys));
      const rbs::TokenId other =
          1 + (key - 1 + 1 + static_cast<rbs::TokenId>(rng.next_below(n_keys - 1))) % n_keys;
      auto words = [&](rbs::TokenId k, std::size_t len) {
        std::string s;
        for (std::size_t t = 0; t < len; ++t) {
          rbs::TokenId tok = k;
          if (rng.next_double() >= spec.key_density) {
            tok = n_keys + 1 + static_cast<rbs::TokenId>(rng.next_below(n_filler));
          }
          if (t > 0) s += ' ';
          s += (tok <= n_keys ? "k" : "w") + std::to_string(tok);
        }
        return s;
      };
      nlohmann::json obj{{"prompt", words(key, triple_len)},
                         {"chosen", words(key, triple_len)},
                         {"rejected", words(other, triple_len)}};
      text += obj.dump();
      text += '\n';
    }
    rbs::atomic_write_file(out / "triples.jsonl", text);
  }

  rbs::KvConfig resolved;
  resolved.set("n_docs", std::to_string(spec.n_docs));
  resolved.set("vocab_size", std::to_string(spec.vocab_size));
  resolved.set("n_keys", std::to_string(spec.keys()));
  resolved.set("key_density", rbs::format_double(spec.key_density));
  resolved.set("doc_len", std::to_string(spec.doc_len));
  resolved.set("seed", std::to_string(spec.seed));
  rbs::atomic_write_file(out / "resolved.cfg", resolved.to_text());
  std::cout << "docs=" << docs.size() << " vocab_size=" << spec.vocab_size
            << " out=" << out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// prepare
// ---------------------------------------------------------------------------

struct PrepareFlags {
  std::string input;
  std::string out = "prepared";
  std::string tokenizer = "byte";
  std::string vocab_path;
  std::size_t build_vocab = 0;
  std::string split = "fixed";
  std::uint64_t chunk_len = 1536;   // L
  std::uint64_t prefix_len = 512;   // L1
  std::uint64_t suffix_len = 1024;  // L2
  std::uint64_t min_len = 0;        // sentence mode; 0 -> L1 + 1
  std::string oversize = "discard";
  std::int64_t separator = 0;       // -1: none
  std::int64_t eos = 0;             // -1: none
  std::uint64_t bp_min = 0;         // random-breakpoint; 0 -> 1
  std::uint64_t bp_max = 0;         // 0 -> L - 1
  std::uint64_t seed = 2025;
  std::string pair_format = "jsonl";
  bool emit_stream = false;
};

int cmd_prepare(const PrepareFlags& f) {
  const fs::path out = resolve_out_dir(f.out);
  const auto docs = rbs::read_documents(f.input);
  if (docs.empty()) throw rbs::DataError(f.input + ": no documents found");

  rbs::Tokenizer tokenizer;
  if (f.tokenizer == "whitespace" && f.build_vocab > 0) {
    const auto vocab = rbs::WhitespaceVocab::build(docs, f.build_vocab);
    const fs::path vocab_out = f.vocab_path.empty() ? out / "vocab.txt" : fs::path(f.vocab_path);
    vocab.save(vocab_out);
    tokenizer = rbs::Tokenizer::whitespace(vocab);
  } else {
    tokenizer = make_tokenizer(f.tokenizer, f.vocab_path);
  }

  const std::uint64_t seed = apply_seed_env(f.seed);
  std::vector<rbs::PrefixSuffixPair> pairs;
  if (f.split == "fixed" || f.split == "random-breakpoint") {
    if (f.prefix_len + f.suffix_len != f.chunk_len) {
      throw rbs::ConfigError("--L1 + --L2 must equal --L (" + std::to_string(f.prefix_len) + " + " +
                             std::to_string(f.suffix_len) + " != " + std::to_string(f.chunk_len) +
                             ")");
    }
    std::optional<rbs::TokenId> sep;
    if (f.separator >= 0) sep = static_cast<rbs::TokenId>(f.separator);
    const rbs::TokenSequence stream = rbs::concat_stream(docs, tokenizer, sep);
    if (f.emit_stream) {
      rbs::write_token_stream(out / "stream.bin", stream, tokenizer.vocab_size());
    }
    const auto chunks = rbs::chunk_stream(stream, f.chunk_len);
    rbs::Rng rng(rbs::Rng::substream(seed, 0x5b11));
    for (std::size_t i = 0; i < chunks.size(); ++i) {
      const std::string origin = "chunk:" + std::to_string(i);
      if (f.split == "fixed") {
        pairs.push_back(rbs::fixed_split(chunks[i], f.prefix_len, f.suffix_len, origin));
      } else {
        const std::size_t lo = f.bp_min == 0 ? 1 : f.bp_min;
        const std::size_t hi = f.bp_max == 0 ? f.chunk_len - 1 : f.bp_max;
        pairs.push_back(rbs::random_breakpoint_split(chunks[i], lo, hi, rng, origin));
      }
    }
  } else if (f.split == "sentence") {
    rbs::SentenceSplitOptions opts;
    opts.max_len = f.chunk_len;
    opts.target_prefix = f.prefix_len;
    opts.min_len = f.min_len == 0 ? f.prefix_len + 1 : f.min_len;
    opts.oversize =
        f.oversize == "split" ? rbs::OversizePolicy::kSplit : rbs::OversizePolicy::kDiscard;
    if (f.oversize != "split" && f.oversize != "discard") {
      throw rbs::ConfigError("--oversize must be split or discard");
    }
    if (f.eos >= 0) {
      opts.eos_id = static_cast<rbs::TokenId>(f.eos);
    } else {
      opts.eos_id.reset();
    }
    rbs::SentenceSplitStats stats;
    for (const auto& doc : docs) {
      auto result = rbs::sentence_aware_split(doc, tokenizer, opts);
      stats.blocks_emitted += result.stats.blocks_emitted;
      stats.blocks_below_min += result.stats.blocks_below_min;
      stats.blocks_single_unit += result.stats.blocks_single_unit;
      stats.oversize_units_dropped += result.stats.oversize_units_dropped;
      stats.oversize_units_split += result.stats.oversize_units_split;
      for (auto& p : result.pairs) pairs.push_back(std::move(p));
    }
    std::cout << "blocks_skipped=" << stats.blocks_skipped()
              << " oversize_dropped=" << stats.oversize_units_dropped << "\n";
  } else {
    throw rbs::ConfigError("--split must be fixed, sentence, or random-breakpoint");
  }

  if (f.pair_format == "jsonl") {
    rbs::write_pairs_jsonl(out / "pairs.jsonl", pairs);
  } else if (f.pair_format == "bin") {
    rbs::write_pairs_binary(out / "pairs.bin", pairs, tokenizer.vocab_size());
  } else {
    throw rbs::ConfigError("--pair-format must be jsonl or bin");
  }

  rbs::KvConfig resolved;
  resolved.set("input", f.input);
  resolved.set("tokenizer", f.tokenizer);
  resolved.set("split", f.split);
  resolved.set("L", std::to_string(f.chunk_len));
  resolved.set("L1", std::to_string(f.prefix_len));
  resolved.set("L2", std::to_string(f.suffix_len));
  resolved.set("separator", std::to_string(f.separator));
  resolved.set("seed", std::to_string(seed));
  resolved.set("pair_format", f.pair_format);
  rbs::atomic_write_file(out / "resolved.cfg", resolved.to_text());
  std::cout << "pairs=" << pairs.size() << " vocab_size=" << tokenizer.vocab_size()
            << " out=" << out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train / train-curated
// ---------------------------------------------------------------------------

int cmd_train(const TrainFlags& flags, const std::string& pairs_path,
              const std::string& val_pairs_path) {
  const fs::path out = resolve_out_dir(flags.out);
  const rbs::StoredPairs stored = load_pairs(pairs_path);
  rbs::ResolvedRunConfig cfg = resolve_train_config(flags, stored.vocab_size);
  if (cfg.scorer.vocab_size < stored.vocab_size) {
    throw rbs::ConfigError("configured vocab_size " + std::to_string(cfg.scorer.vocab_size) +
                           " is smaller than the pair file's " +
                           std::to_string(stored.vocab_size));
  }

  std::vector<rbs::PrefixSuffixPair> train_pairs = stored.pairs;
  std::vector<rbs::PrefixSuffixPair> val_pairs;
  if (!val_pairs_path.empty()) {
    val_pairs = load_pairs(val_pairs_path).pairs;
  } else if (cfg.val_fraction > 0.0) {
    std::size_t n_val = static_cast<std::size_t>(cfg.val_fraction *
                                                 static_cast<double>(train_pairs.size()));
    if (n_val < cfg.train.batch_size && train_pairs.size() >= 2u * cfg.train.batch_size) {
      n_val = cfg.train.batch_size;
    }
    if (n_val >= cfg.train.batch_size) {
      val_pairs.assign(train_pairs.end() - static_cast<std::ptrdiff_t>(n_val), train_pairs.end());
      train_pairs.resize(train_pairs.size() - n_val);
    }
  }

  std::size_t checkpoint_index = 0;
  auto hook = [&](const rbs::ScorerParams& params, const rbs::OptimizerState& opt, bool final) {
    if (final) {
      rbs::save_checkpoint(out / "scorer.ckpt", params, &opt);
    } else {
      char name[64];
      std::snprintf(name, sizeof(name), "scorer_%04zu.ckpt", checkpoint_index++);
      rbs::save_checkpoint(out / name, params, &opt);
    }
  };
  const rbs::TrainResult result =
      rbs::train(cfg.train, cfg.scorer, train_pairs, val_pairs, hook);
  rbs::atomic_write_file(out / "metrics.csv", rbs::metrics_to_csv(result.metrics));
  rbs::atomic_write_file(out / "resolved.cfg", cfg.kv.to_text());
  const auto& last = result.metrics.back();
  std::cout << "steps=" << result.steps << " tokens_seen=" << result.tokens_seen
            << " val_rank_acc=" << rbs::format_double(last.val.rank_acc)
            << " out=" << out.string() << "\n";
  return 0;
}

int cmd_train_curated(const TrainFlags& flags, const std::string& triples_path,
                      const std::string& val_triples_path, const std::string& tokenizer_mode,
                      const std::string& vocab_path, const std::string& init_checkpoint) {
  const fs::path out = resolve_out_dir(flags.out);
  const rbs::Tokenizer tokenizer = make_tokenizer(tokenizer_mode, vocab_path);
  std::vector<rbs::TokenTriple> triples = rbs::read_triples_jsonl(triples_path, tokenizer);
  std::vector<rbs::TokenTriple> val_triples;
  rbs::ResolvedRunConfig cfg = resolve_train_config(flags, tokenizer.vocab_size());
  if (!val_triples_path.empty()) {
    val_triples = rbs::read_triples_jsonl(val_triples_path, tokenizer);
  } else if (cfg.val_fraction > 0.0) {
    const std::size_t n_val =
        static_cast<std::size_t>(cfg.val_fraction * static_cast<double>(triples.size()));
    if (n_val > 0 && triples.size() - n_val >= cfg.train.batch_size) {
      val_triples.assign(triples.end() - static_cast<std::ptrdiff_t>(n_val), triples.end());
      triples.resize(triples.size() - n_val);
    }
  }
  rbs::ScorerParams initial;
  if (!init_checkpoint.empty()) {
    initial = rbs::load_checkpoint(init_checkpoint).params;
  } else {
    initial = rbs::init_params(cfg.scorer, cfg.train.seed);
  }

  auto hook = [&](const rbs::ScorerParams& params, const rbs::OptimizerState& opt, bool final) {
    if (final) rbs::save_checkpoint(out / "scorer.ckpt", params, &opt);
  };
  const rbs::TrainResult result =
      rbs::train_curated(cfg.train, std::move(initial), triples, val_triples, hook);
  rbs::atomic_write_file(out / "metrics.csv", rbs::metrics_to_csv(result.metrics));
  rbs::atomic_write_file(out / "resolved.cfg", cfg.kv.to_text());
  std::cout << "steps=" << result.steps << " tokens_seen=" << result.tokens_seen
            << " out=" << out.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// validate / bon / grpo / cost
// ---------------------------------------------------------------------------

int cmd_validate(const std::string& checkpoint_path, const std::string& pairs_path,
                 std::uint32_t batch_size, const std::string& out_flag) {
  const fs::path out = resolve_out_dir(out_flag);
  const rbs::Checkpoint ckpt = rbs::load_checkpoint(checkpoint_path);
  const rbs::StoredPairs stored = load_pairs(pairs_path);
  const rbs::ValidationMetrics m = rbs::validate(ckpt.params, stored.pairs, batch_size);
  std::string csv = "rank_acc,mean_pos,mean_neg,margin,mean_sq_score\n";
  csv += rbs::format_double(m.rank_acc) + ',' + rbs::format_double(m.mean_pos) + ',' +
         rbs::format_double(m.mean_neg) + ',' + rbs::format_double(m.margin) + ',' +
         rbs::format_double(m.mean_sq) + '\n';
  rbs::atomic_write_file(out / "val_metrics.csv", csv);
  rbs::KvConfig resolved;
  resolved.set("checkpoint", checkpoint_path);
  resolved.set("pairs", pairs_path);
  resolved.set("B", std::to_string(batch_size));
  rbs::atomic_write_file(out / "resolved.cfg", resolved.to_text());
  std::cout << csv;
  return 0;
}

int cmd_bon(const std::string& checkpoint_path, const std::string& candidates_path,
            const std::string& n_list, const std::string& baseline_checkpoint,
            const std::string& out_flag) {
  const fs::path out = resolve_out_dir(out_flag);
  const rbs::Checkpoint ckpt = rbs::load_checkpoint(checkpoint_path);
  auto sets = rbs::read_candidate_sets_jsonl(candidates_path);
  if (sets.empty()) throw rbs::DataError(candidates_path + ": no candidate sets");
  const std::vector<std::uint32_t> ns = parse_n_list(n_list);
  for (auto& set : sets) rbs::score_candidates(ckpt.params, set);
  const rbs::BoNCurve curve = rbs::bon_curve(sets, ns);
  rbs::atomic_write_file(out / "bon_curve.csv", rbs::bon_curve_to_csv(curve));

  if (!baseline_checkpoint.empty()) {
    const rbs::Checkpoint base = rbs::load_checkpoint(baseline_checkpoint);
    auto base_sets = rbs::read_candidate_sets_jsonl(candidates_path);
    for (auto& set : base_sets) rbs::score_candidates(base.params, set);
    const rbs::BoNCurve base_curve = rbs::bon_curve(base_sets, ns);
    rbs::atomic_write_file(out / "bon_baseline_curve.csv", rbs::bon_curve_to_csv(base_curve));
    const double delta = rbs::delta_map(curve, base_curve);
    rbs::atomic_write_file(out / "delta_map.txt",
                           "DELTA_MAP," + rbs::format_double(delta) + "\n");
    std::cout << "MAP=" << rbs::format_double(rbs::map_value(curve))
              << " DELTA_MAP=" << rbs::format_double(delta) << "\n";
  } else {
    std::cout << "MAP=" << rbs::format_double(rbs::map_value(curve)) << "\n";
  }
  rbs::KvConfig resolved;
  resolved.set("checkpoint", checkpoint_path);
  resolved.set("candidates", candidates_path);
  resolved.set("N_list", n_list);
  rbs::atomic_write_file(out / "resolved.cfg", resolved.to_text());
  return 0;
}

struct GrpoFlags {
  std::string config_path;
  std::string out = "grpo";
  std::optional<std::uint32_t> group_size;
  std::optional<double> lambda;
  std::optional<double> clip;
  std::optional<std::uint32_t> epochs;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> completion_len;
  std::uint32_t task_vocab = 64;
  std::uint32_t task_keys = 0;  // 0: vocab / 2
  double key_density = 0.4;
  std::size_t n_prompts = 192;
  std::size_t prompt_len = 32;
};

int cmd_grpo(const std::string& checkpoint_path, const GrpoFlags& f) {
  const fs::path out = resolve_out_dir(f.out);
  rbs::KvConfig kv = load_config_file(f.config_path);
  if (f.group_size) kv.set("K", std::to_string(*f.group_size));
  if (f.lambda) kv.set("lambda", rbs::format_double(*f.lambda));
  if (f.clip) kv.set("clip", rbs::format_double(*f.clip));
  if (f.epochs) kv.set("epochs", std::to_string(*f.epochs));
  if (f.lr) kv.set("lr", rbs::format_double(*f.lr));
  if (f.seed) kv.set("seed", std::to_string(*f.seed));
  if (f.completion_len) kv.set("completion_len", std::to_string(*f.completion_len));
  rbs::ResolvedGrpoConfig cfg = rbs::resolve_grpo_config(std::move(kv));
  cfg.grpo.seed = apply_seed_env(cfg.grpo.seed);
  cfg.kv.set("seed", std::to_string(cfg.grpo.seed));

  rbs::SyntheticSpec task_spec;
  task_spec.vocab_size = f.task_vocab;
  task_spec.n_keys = f.task_keys;
  task_spec.key_density = f.key_density;
  task_spec.seed = cfg.grpo.seed;
  const rbs::Checkpoint ckpt = rbs::load_checkpoint(checkpoint_path);
  if (ckpt.params.config.vocab_size < task_spec.vocab_size) {
    throw rbs::ConfigError("scorer vocab_size " + std::to_string(ckpt.params.config.vocab_size) +
                           " is smaller than the task's " + std::to_string(task_spec.vocab_size));
  }
  const rbs::ToyTask task = rbs::make_toy_task(task_spec, f.n_prompts, f.prompt_len);
  const rbs::GrpoResult result =
      rbs::grpo_train_toy(cfg.grpo, task, rbs::scorer_reward(ckpt.params));
  rbs::atomic_write_file(out / "reward_curve.csv", rbs::grpo_curve_to_csv(result.curve));
  cfg.kv.set("checkpoint", checkpoint_path);
  cfg.kv.set("vocab_size", std::to_string(task_spec.vocab_size));
  cfg.kv.set("n_keys", std::to_string(task_spec.keys()));
  cfg.kv.set("key_density", rbs::format_double(task_spec.key_density));
  cfg.kv.set("n_prompts", std::to_string(f.n_prompts));
  cfg.kv.set("prompt_len", std::to_string(f.prompt_len));
  rbs::atomic_write_file(out / "resolved.cfg", cfg.kv.to_text());
  const auto& first = result.curve.front();
  const auto& last = result.curve.back();
  std::cout << "oracle_acc_first=" << rbs::format_double(first.mean_oracle_acc)
            << " oracle_acc_last=" << rbs::format_double(last.mean_oracle_acc) << "\n";
  return 0;
}

int cmd_cost(const std::string& mode, const std::string& prices_spec, const std::string& rows_path,
             const std::string& out_flag) {
  rbs::CostMode cost_mode;
  if (mode == "generation") {
    cost_mode = rbs::CostMode::kGeneration;
  } else if (mode == "annotation") {
    cost_mode = rbs::CostMode::kAnnotation;
  } else {
    throw rbs::ConfigError("--mode must be generation or annotation");
  }
  const rbs::PriceSpec prices = parse_prices(prices_spec);
  const std::vector<rbs::DatasetCostRow> rows =
      rows_path.empty() ? rbs::bundled_dataset_rows() : rbs::read_cost_rows_csv(rows_path);
  const rbs::CostTable table = rbs::cost_table(rows, prices, cost_mode);
  const std::string csv = rbs::cost_table_to_csv(table);
  if (!out_flag.empty()) {
    const fs::path out = resolve_out_dir(out_flag);
    rbs::atomic_write_file(out / "cost_table.csv", csv);
    rbs::KvConfig resolved;
    resolved.set("mode", mode);
    resolved.set("prices", prices_spec);
    resolved.set("rows", rows_path.empty() ? "builtin" : rows_path);
    rbs::atomic_write_file(out / "resolved.cfg", resolved.to_text());
  }
  std::cout << csv;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"reward scorer pipeline over prefix-suffix preference pairs"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic keyed corpus");
  rbs::SyntheticSpec synth_spec;
  synth_spec.n_docs = 1000;
  std::string synth_out = "synth";
  std::size_t bon_sets = 0, bon_candidates = 32, bon_prompt_len = 32, bon_cand_len = 32;
  std::size_t n_triples = 0, triple_len = 32;
  double bon_base_rate = 0.25;
  synth->add_option("--n-docs", synth_spec.n_docs, "number of documents");
  synth->add_option("--vocab-size", synth_spec.vocab_size, "vocabulary size (>= 8)");
  synth->add_option("--n-keys", synth_spec.n_keys, "key token count (default vocab/2)");
  synth->add_option("--key-density", synth_spec.key_density, "per-position key probability");
  synth->add_option("--doc-len", synth_spec.doc_len, "tokens per document");
  synth->add_option("--seed", synth_spec.seed, "generation seed");
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--bon-sets", bon_sets, "also emit this many BoN candidate sets");
  synth->add_option("--bon-candidates", bon_candidates, "candidates per BoN set");
  synth->add_option("--bon-base-rate", bon_base_rate, "correct-candidate rate");
  synth->add_option("--bon-prompt-len", bon_prompt_len, "BoN prompt length");
  synth->add_option("--bon-cand-len", bon_cand_len, "BoN candidate length");
  synth->add_option("--triples", n_triples, "also emit this many curated triples");
  synth->add_option("--triple-len", triple_len, "tokens per triple side");

  // prepare
  auto* prepare = app.add_subcommand("prepare", "build prefix-suffix pairs from a corpus");
  PrepareFlags prep;
  prepare->add_option("--input", prep.input, "corpus file (.jsonl or plain text)")->required();
  prepare->add_option("--out", prep.out, "output directory");
  prepare->add_option("--tokenizer", prep.tokenizer, "byte or whitespace");
  prepare->add_option("--vocab", prep.vocab_path, "vocabulary file for whitespace mode");
  prepare->add_option("--build-vocab", prep.build_vocab,
                      "build a frequency vocabulary of this size before tokenizing");
  prepare->add_option("--split", prep.split, "fixed, sentence, or random-breakpoint");
  prepare->add_option("--L", prep.chunk_len, "chunk length (fixed) / max block length (sentence)");
  prepare->add_option("--L1", prep.prefix_len, "prefix length (fixed) / target prefix (sentence)");
  prepare->add_option("--L2", prep.suffix_len, "suffix length (fixed mode)");
  prepare->add_option("--min-len", prep.min_len, "minimum block length (sentence mode)");
  prepare->add_option("--oversize", prep.oversize, "oversized-unit policy: split or discard");
  prepare->add_option("--separator", prep.separator, "separator token id between documents (-1: none)");
  prepare->add_option("--eos", prep.eos, "end-of-sequence token id for terminal units (-1: none)");
  prepare->add_option("--bp-min", prep.bp_min, "random-breakpoint lower bound");
  prepare->add_option("--bp-max", prep.bp_max, "random-breakpoint upper bound");
  prepare->add_option("--seed", prep.seed, "seed (random-breakpoint mode)");
  prepare->add_option("--pair-format", prep.pair_format, "jsonl or bin");
  prepare->add_flag("--emit-stream", prep.emit_stream,
                    "also write the concatenated token stream (fixed/random modes)");

  // train
  auto* train = app.add_subcommand("train", "train the scorer on prefix-suffix pairs");
  TrainFlags train_flags;
  std::string train_pairs_path, train_val_pairs_path;
  add_train_flags(train, train_flags);
  train->add_option("--pairs", train_pairs_path, "pair file (.jsonl or .bin)")->required();
  train->add_option("--val-pairs", train_val_pairs_path, "held-out pair file");

  // train-curated
  auto* curated = app.add_subcommand("train-curated", "train on explicit preference triples");
  TrainFlags curated_flags;
  std::string triples_path, val_triples_path, curated_tokenizer = "whitespace";
  std::string curated_vocab, init_checkpoint;
  add_train_flags(curated, curated_flags);
  curated->add_option("--triples", triples_path, "JSONL triples file")->required();
  curated->add_option("--val-triples", val_triples_path, "held-out triples file");
  curated->add_option("--tokenizer", curated_tokenizer, "byte or whitespace");
  curated->add_option("--vocab", curated_vocab, "vocabulary file for whitespace mode");
  curated->add_option("--init-checkpoint", init_checkpoint, "warm-start checkpoint");

  // validate
  auto* validate = app.add_subcommand("validate", "run validation metrics for a checkpoint");
  std::string val_ckpt, val_pairs, val_out = "validate";
  std::uint32_t val_b = 32;
  validate->add_option("--checkpoint", val_ckpt, "scorer checkpoint")->required();
  validate->add_option("--pairs", val_pairs, "held-out pair file")->required();
  validate->add_option("--B", val_b, "validation batch size");
  validate->add_option("--out", val_out, "output directory");

  // bon
  auto* bon = app.add_subcommand("bon", "best-of-N reranking curve");
  std::string bon_ckpt, bon_cands, bon_baseline, bon_out = "bon";
  std::string bon_n_list = "1,2,4,8,16,32";
  bon->add_option("--checkpoint", bon_ckpt, "scorer checkpoint")->required();
  bon->add_option("--candidates", bon_cands, "candidate sets JSONL")->required();
  bon->add_option("--N-list", bon_n_list, "comma-separated N values");
  bon->add_option("--baseline-checkpoint", bon_baseline,
                  "also score this checkpoint and report the MAP gain");
  bon->add_option("--out", bon_out, "output directory");

  // grpo
  auto* grpo = app.add_subcommand("grpo", "toy GRPO against a scorer checkpoint");
  std::string grpo_ckpt;
  GrpoFlags grpo_flags;
  grpo->add_option("--checkpoint", grpo_ckpt, "reward scorer checkpoint")->required();
  grpo->add_option("--config", grpo_flags.config_path, "flat key=value config file");
  grpo->add_option("--K", grpo_flags.group_size, "completions per prompt group");
  grpo->add_option("--lambda", grpo_flags.lambda, "KL regularizer coefficient");
  grpo->add_option("--clip", grpo_flags.clip, "PPO clip range");
  grpo->add_option("--epochs", grpo_flags.epochs, "training epochs");
  grpo->add_option("--lr", grpo_flags.lr, "policy learning rate");
  grpo->add_option("--seed", grpo_flags.seed, "seed");
  grpo->add_option("--completion-len", grpo_flags.completion_len, "completion length");
  grpo->add_option("--vocab-size", grpo_flags.task_vocab, "task vocabulary size");
  grpo->add_option("--n-keys", grpo_flags.task_keys, "task key count (default vocab/2)");
  grpo->add_option("--key-density", grpo_flags.key_density, "prompt key density");
  grpo->add_option("--n-prompts", grpo_flags.n_prompts, "prompts per epoch");
  grpo->add_option("--prompt-len", grpo_flags.prompt_len, "prompt length");
  grpo->add_option("--out", grpo_flags.out, "output directory");

  // cost
  auto* cost = app.add_subcommand("cost", "preference-data cost estimator");
  std::string cost_mode = "annotation", cost_prices = "stated", cost_rows, cost_out;
  cost->add_option("--mode", cost_mode, "generation or annotation");
  cost->add_option("--prices", cost_prices, "stated, table3-effective, or custom:P_in,P_out");
  cost->add_option("--rows", cost_rows, "CSV of name,N,prompt_len,pref_len,rej_len (default: builtin)");
  cost->add_option("--out", cost_out, "output directory (default: stdout only)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << "\n";
    return 1;
  }

  try {
    if (synth->parsed()) {
      return cmd_synth(synth_out, synth_spec, bon_sets, bon_candidates, bon_base_rate,
                       bon_prompt_len, bon_cand_len, n_triples, triple_len);
    }
    if (prepare->parsed()) return cmd_prepare(prep);
    if (train->parsed()) return cmd_train(train_flags, train_pairs_path, train_val_pairs_path);
    if (curated->parsed()) {
      return cmd_train_curated(curated_flags, triples_path, val_triples_path, curated_tokenizer,
                               curated_vocab, init_checkpoint);
    }
    if (validate->parsed()) return cmd_validate(val_ckpt, val_pairs, val_b, val_out);
    if (bon->parsed()) return cmd_bon(bon_ckpt, bon_cands, bon_n_list, bon_baseline, bon_out);
    if (grpo->parsed()) return cmd_grpo(grpo_ckpt, grpo_flags);
    if (cost->parsed()) return cmd_cost(cost_mode, cost_prices, cost_rows, cost_out);
  } catch (const rbs::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const rbs::NumericError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const rbs::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
