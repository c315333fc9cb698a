#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rbs/common.hpp"
#include "rbs/corpus.hpp"
#include "rbs/scorer.hpp"

namespace rbs {

// ---------------------------------------------------------------------------
// Best-of-N reranking. Candidate pools are fixed once in sampling order; the
// N-sweep selects from the first N candidates of the same pool, so curves at
// different N stay comparable.
// ---------------------------------------------------------------------------

struct BoNCandidateSet {
  TokenSequence prompt;
  std::vector<TokenSequence> candidates;  // fixed sampling order
  std::vector<bool> correct;              // task-oracle flags, aligned
  std::vector<double> scores;             // filled by score_candidates

  void validate() const {
    if (candidates.empty()) throw DataError("candidate set has no candidates");
    if (candidates.size() != correct.size()) {
      throw DataError("candidate set: flags and candidates misaligned");
    }
  }
};

inline void score_candidates(const ScorerParams& params, BoNCandidateSet& set) {
  set.validate();
  set.scores.resize(set.candidates.size());
  for (std::size_t k = 0; k < set.candidates.size(); ++k) {
    set.scores[k] = score_pair(params, set.prompt, set.candidates[k]);
  }
}

/// Index of the highest score among the first n candidates; ties keep the
/// lowest index.
inline std::size_t bon_select(std::span<const double> scores, std::size_t n) {
  if (n < 1 || n > scores.size()) {
    throw ConfigError("bon_select: N = " + std::to_string(n) + " out of range for " +
                      std::to_string(scores.size()) + " scores");
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < n; ++k) {
    if (scores[k] > scores[best]) best = k;
  }
  return best;
}

struct BoNCurve {
  std::vector<std::uint32_t> ns;
  std::vector<double> accuracy;
};

inline BoNCurve bon_curve(std::span<const BoNCandidateSet> sets,
                          std::span<const std::uint32_t> ns) {
  if (sets.empty()) throw ConfigError("bon_curve: no candidate sets");
  if (ns.empty()) throw ConfigError("bon_curve: empty N list");
  for (std::size_t i = 1; i < ns.size(); ++i) {
    if (ns[i] <= ns[i - 1]) throw ConfigError("bon_curve: N values must be strictly increasing");
  }
  const std::uint32_t max_n = ns.back();
  for (std::size_t s = 0; s < sets.size(); ++s) {
    if (sets[s].scores.size() != sets[s].candidates.size()) {
      throw ConfigError("bon_curve: set " + std::to_string(s) + " has not been scored");
    }
    if (sets[s].candidates.size() < max_n) {
      throw ConfigError("bon_curve: set " + std::to_string(s) + " has only " +
                        std::to_string(sets[s].candidates.size()) + " candidates, need " +
                        std::to_string(max_n));
    }
  }
  BoNCurve curve;
  curve.ns.assign(ns.begin(), ns.end());
  curve.accuracy.reserve(ns.size());
  for (std::uint32_t n : ns) {
    double hits = 0.0;
    for (const auto& set : sets) {
      hits += set.correct[bon_select(set.scores, n)] ? 1.0 : 0.0;
    }
    curve.accuracy.push_back(hits / static_cast<double>(sets.size()));
  }
  return curve;
}

/// Maximum accuracy achieved along the curve.
inline double map_value(const BoNCurve& curve) {
  if (curve.accuracy.empty()) throw ConfigError("map_value: empty curve");
  return *std::max_element(curve.accuracy.begin(), curve.accuracy.end());
}

inline double delta_map(const BoNCurve& curve, const BoNCurve& baseline) {
  if (curve.ns != baseline.ns) throw ConfigError("delta_map: curves measured on different N lists");
  return map_value(curve) - map_value(baseline);
}

// ---------------------------------------------------------------------------
// File formats.
// ---------------------------------------------------------------------------

inline void write_candidate_sets_jsonl(const std::filesystem::path& path,
                                       std::span<const BoNCandidateSet> sets) {
  std::string out;
  for (const auto& s : sets) {
    nlohmann::json obj{{"prompt_tokens", s.prompt},
                       {"candidates", s.candidates},
                       {"correct", std::vector<bool>(s.correct.begin(), s.correct.end())}};
    out += obj.dump();
    out += '\n';
  }
  atomic_write_file(path, out);
}

inline std::vector<BoNCandidateSet> read_candidate_sets_jsonl(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  std::vector<BoNCandidateSet> sets;
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
    for (const char* field : {"prompt_tokens", "candidates", "correct"}) {
      if (!obj.contains(field)) {
        throw DataError(path.string() + ":" + std::to_string(lineno) + ": missing field '" +
                        field + "'");
      }
    }
    BoNCandidateSet s;
    s.prompt = obj["prompt_tokens"].get<TokenSequence>();
    s.candidates = obj["candidates"].get<std::vector<TokenSequence>>();
    s.correct = obj["correct"].get<std::vector<bool>>();
    if (s.candidates.size() != s.correct.size()) {
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": candidates and correct flags misaligned");
    }
    sets.push_back(std::move(s));
  }
  return sets;
}

inline std::string bon_curve_to_csv(const BoNCurve& curve) {
  std::string out = "N,accuracy\n";
  for (std::size_t i = 0; i < curve.ns.size(); ++i) {
    out += std::to_string(curve.ns[i]) + ',' + format_double(curve.accuracy[i]) + '\n';
  }
  out += "MAP," + format_double(map_value(curve)) + '\n';
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic selection task: prompts and candidates are keyed sequences; a
// candidate is correct when its key matches the prompt's key. Candidates are
// drawn with the prompt's key at `base_rate` and a different key otherwise.
// ---------------------------------------------------------------------------

struct SyntheticBoNSpec {
  SyntheticSpec corpus;        // vocab layout, key density, seed
  std::size_t n_sets = 100;
  std::size_t n_candidates = 32;
  std::size_t prompt_len = 32;
  std::size_t candidate_len = 32;
  double base_rate = 0.25;     // probability a candidate carries the right key
};

inline std::vector<BoNCandidateSet> make_synthetic_candidate_sets(const SyntheticBoNSpec& spec) {
  spec.corpus.validate();
  if (!(spec.base_rate > 0.0 && spec.base_rate < 1.0)) {
    throw ConfigError("synthetic candidate sets: base_rate must lie in (0, 1)");
  }
  const std::uint32_t n_keys = spec.corpus.keys();
  const std::uint32_t n_filler = spec.corpus.vocab_size - 1 - n_keys;
  if (n_keys < 2) throw ConfigError("synthetic candidate sets: need at least 2 keys");
  std::vector<BoNCandidateSet> sets;
  sets.reserve(spec.n_sets);
  for (std::size_t s = 0; s < spec.n_sets; ++s) {
    Rng rng(Rng::substream(spec.corpus.seed, 0xb0a5e7 + s));
    const TokenId key = 1 + static_cast<TokenId>(rng.next_below(n_keys));
    auto keyed_sequence = [&](TokenId k, std::size_t len) {
      TokenSequence seq;
      seq.reserve(len);
      for (std::size_t t = 0; t < len; ++t) {
        if (rng.next_double() < spec.corpus.key_density) {
          seq.push_back(k);
        } else {
          seq.push_back(n_keys + 1 + static_cast<TokenId>(rng.next_below(n_filler)));
        }
      }
      return seq;
    };
    BoNCandidateSet set;
    set.prompt = keyed_sequence(key, spec.prompt_len);
    for (std::size_t c = 0; c < spec.n_candidates; ++c) {
      TokenId cand_key = key;
      if (rng.next_double() >= spec.base_rate) {
        // a different key, uniform over the others
        const TokenId off = 1 + static_cast<TokenId>(rng.next_below(n_keys - 1));
        cand_key = 1 + (key - 1 + off) % n_keys;
      }
      set.candidates.push_back(keyed_sequence(cand_key, spec.candidate_len));
      set.correct.push_back(cand_key == key);
    }
    sets.push_back(std::move(set));
  }
  return sets;
}

}  // namespace rbs
