#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "rbs/common.hpp"
#include "rbs/corpus.hpp"

namespace rbs {

/// A prompt prefix and its true continuation suffix. `origin` records where
/// the pair came from (chunk index or document id plus block index).
struct PrefixSuffixPair {
  TokenSequence prefix;
  TokenSequence suffix;
  std::string origin;
};

// ---------------------------------------------------------------------------
// Fixed split: prefix = first `prefix_len` tokens, suffix = the rest.
// ---------------------------------------------------------------------------

inline PrefixSuffixPair fixed_split(const TokenSequence& chunk, std::size_t prefix_len,
                                    std::size_t suffix_len, std::string origin = {}) {
  if (prefix_len == 0 || suffix_len == 0) {
    throw ConfigError("fixed_split: prefix and suffix lengths must be positive");
  }
  if (prefix_len + suffix_len != chunk.size()) {
    throw ConfigError("fixed_split: prefix_len + suffix_len = " +
                      std::to_string(prefix_len + suffix_len) + " but chunk has " +
                      std::to_string(chunk.size()) + " tokens");
  }
  PrefixSuffixPair pair;
  pair.prefix.assign(chunk.begin(), chunk.begin() + static_cast<std::ptrdiff_t>(prefix_len));
  pair.suffix.assign(chunk.begin() + static_cast<std::ptrdiff_t>(prefix_len), chunk.end());
  pair.origin = std::move(origin);
  return pair;
}

/// Uniform random breakpoint in [min_prefix, max_prefix], both sides non-empty.
inline PrefixSuffixPair random_breakpoint_split(const TokenSequence& chunk, std::size_t min_prefix,
                                                std::size_t max_prefix, Rng& rng,
                                                std::string origin = {}) {
  if (chunk.size() < 2) throw ConfigError("random_breakpoint_split: chunk too short");
  if (min_prefix < 1 || max_prefix > chunk.size() - 1 || min_prefix > max_prefix) {
    throw ConfigError("random_breakpoint_split: breakpoint range [" + std::to_string(min_prefix) +
                      ", " + std::to_string(max_prefix) + "] invalid for chunk of " +
                      std::to_string(chunk.size()) + " tokens");
  }
  const std::size_t bp = min_prefix + rng.next_below(max_prefix - min_prefix + 1);
  return fixed_split(chunk, bp, chunk.size() - bp, std::move(origin));
}

// ---------------------------------------------------------------------------
// Sentence-aware splitting.
// ---------------------------------------------------------------------------

struct SentenceUnit {
  std::string text;
  TokenSequence tokens;  // filled by sentence_aware_split
  bool terminal = false; // last unit of its document
};

/// Splits on sentence-final punctuation (. ! ? followed by whitespace or end
/// of text) and on newlines. Units are whitespace-normalized and keep their
/// terminator; the document's last unit is flagged terminal.
inline std::vector<SentenceUnit> segment_sentences(std::string_view text) {
  std::vector<SentenceUnit> units;
  std::string current;
  auto flush = [&]() {
    // collapse whitespace runs to single spaces
    std::string norm;
    bool in_space = true;
    for (char c : current) {
      if (std::isspace(static_cast<unsigned char>(c))) {
        in_space = true;
      } else {
        if (in_space && !norm.empty()) norm += ' ';
        in_space = false;
        norm += c;
      }
    }
    if (!norm.empty()) units.push_back(SentenceUnit{std::move(norm), {}, false});
    current.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (c == '\n') {
      flush();
      continue;
    }
    current += c;
    if (c == '.' || c == '!' || c == '?') {
      const bool at_end = i + 1 == text.size();
      if (at_end || std::isspace(static_cast<unsigned char>(text[i + 1]))) flush();
    }
  }
  flush();
  if (!units.empty()) units.back().terminal = true;
  return units;
}

enum class OversizePolicy { kSplit, kDiscard };

struct SentenceSplitOptions {
  std::size_t max_len = 1536;
  std::size_t min_len = 513;       // default: target_prefix + 1
  std::size_t target_prefix = 512;
  OversizePolicy oversize = OversizePolicy::kDiscard;
  std::optional<TokenId> eos_id = TokenId{0};  // appended to terminal units
};

struct SentenceSplitStats {
  std::size_t blocks_emitted = 0;
  std::size_t blocks_below_min = 0;
  std::size_t blocks_single_unit = 0;   // could not be split at a unit boundary
  std::size_t oversize_units_dropped = 0;
  std::size_t oversize_units_split = 0;

  std::size_t blocks_skipped() const {
    return blocks_below_min + blocks_single_unit;
  }
};

struct SentenceSplitResult {
  std::vector<PrefixSuffixPair> pairs;
  SentenceSplitStats stats;
};

/// Packs sentence units greedily into blocks of at most `max_len` tokens,
/// drops blocks below `min_len`, and splits each retained block at the
/// interior unit boundary whose cumulative token count is closest to
/// `target_prefix` (ties resolved toward the earlier boundary). Units are
/// never broken except when a single unit exceeds `max_len`, in which case
/// the oversize policy either slices it into max_len pieces or drops it.
inline SentenceSplitResult sentence_aware_split(const Document& doc, const Tokenizer& tokenizer,
                                                const SentenceSplitOptions& opts) {
  if (opts.min_len > opts.max_len) throw ConfigError("sentence split: min_len > max_len");
  if (opts.target_prefix == 0 || opts.target_prefix >= opts.max_len) {
    throw ConfigError("sentence split: target_prefix must lie in (0, max_len)");
  }

  SentenceSplitResult result;
  std::vector<SentenceUnit> units = segment_sentences(doc.text);
  for (auto& u : units) {
    u.tokens = tokenizer.tokenize(u.text);
    if (u.terminal && opts.eos_id.has_value()) u.tokens.push_back(*opts.eos_id);
  }

  // Oversize handling happens before packing so packed blocks always stay
  // contiguous in the document. Dropping a middle unit closes the block that
  // precedes it.
  std::vector<std::vector<const SentenceUnit*>> groups;  // contiguous runs
  std::deque<SentenceUnit> sliced;                       // stable storage for split pieces
  groups.emplace_back();
  for (const auto& u : units) {
    if (u.tokens.empty()) continue;
    if (u.tokens.size() > opts.max_len) {
      if (opts.oversize == OversizePolicy::kDiscard) {
        ++result.stats.oversize_units_dropped;
        if (!groups.back().empty()) groups.emplace_back();
        continue;
      }
      ++result.stats.oversize_units_split;
      for (std::size_t start = 0; start < u.tokens.size(); start += opts.max_len) {
        const std::size_t n = std::min(opts.max_len, u.tokens.size() - start);
        SentenceUnit piece;
        piece.text = u.text;
        piece.tokens.assign(u.tokens.begin() + static_cast<std::ptrdiff_t>(start),
                            u.tokens.begin() + static_cast<std::ptrdiff_t>(start + n));
        piece.terminal = u.terminal && start + n == u.tokens.size();
        sliced.push_back(std::move(piece));
        groups.back().push_back(&sliced.back());
      }
      continue;
    }
    groups.back().push_back(&u);
  }

  std::size_t block_index = 0;
  auto emit_block = [&](const std::vector<const SentenceUnit*>& block) {
    std::size_t total = 0;
    for (const auto* u : block) total += u->tokens.size();
    if (total < opts.min_len) {
      ++result.stats.blocks_below_min;
      return;
    }
    if (block.size() < 2) {
      ++result.stats.blocks_single_unit;
      return;
    }
    // interior boundaries: cumulative token count after units 0..k
    std::size_t best_cum = 0, cum = 0;
    std::size_t best_delta = SIZE_MAX;
    std::size_t best_k = 0;
    for (std::size_t k = 0; k + 1 < block.size(); ++k) {
      cum += block[k]->tokens.size();
      const std::size_t delta =
          cum > opts.target_prefix ? cum - opts.target_prefix : opts.target_prefix - cum;
      if (delta < best_delta) {  // strict: ties keep the earlier boundary
        best_delta = delta;
        best_cum = cum;
        best_k = k;
      }
    }
    PrefixSuffixPair pair;
    pair.prefix.reserve(best_cum);
    pair.suffix.reserve(total - best_cum);
    for (std::size_t k = 0; k < block.size(); ++k) {
      auto& dst = k <= best_k ? pair.prefix : pair.suffix;
      dst.insert(dst.end(), block[k]->tokens.begin(), block[k]->tokens.end());
    }
    pair.origin = doc.id + "#block" + std::to_string(block_index);
    ++block_index;
    ++result.stats.blocks_emitted;
    result.pairs.push_back(std::move(pair));
  };

  for (const auto& group : groups) {
    std::vector<const SentenceUnit*> block;
    std::size_t block_len = 0;
    for (const auto* u : group) {
      if (block_len + u->tokens.size() > opts.max_len) {
        emit_block(block);
        block.clear();
        block_len = 0;
      }
      block.push_back(u);
      block_len += u->tokens.size();
    }
    if (!block.empty()) emit_block(block);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Pair file formats.
//   JSON lines: {"prefix_tokens": [...], "suffix_tokens": [...], "origin": "..."}
//   Binary: magic "RBSPAIR1" | u32le vocab_size | u64le count, then per record
//           u32le prefix_len | u32le suffix_len | u32le origin_len |
//           prefix ids | suffix ids | origin bytes
// ---------------------------------------------------------------------------

inline constexpr char kPairMagic[8] = {'R', 'B', 'S', 'P', 'A', 'I', 'R', '1'};

struct StoredPairs {
  std::vector<PrefixSuffixPair> pairs;
  std::uint32_t vocab_size = 0;
};

inline void write_pairs_jsonl(const std::filesystem::path& path,
                              const std::vector<PrefixSuffixPair>& pairs) {
  std::string out;
  for (const auto& p : pairs) {
    nlohmann::json obj{{"prefix_tokens", p.prefix}, {"suffix_tokens", p.suffix},
                       {"origin", p.origin}};
    out += obj.dump();
    out += '\n';
  }
  atomic_write_file(path, out);
}

inline std::vector<PrefixSuffixPair> read_pairs_jsonl(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  std::vector<PrefixSuffixPair> pairs;
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
    if (!obj.contains("prefix_tokens") || !obj.contains("suffix_tokens")) {
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": missing prefix_tokens/suffix_tokens");
    }
    PrefixSuffixPair p;
    p.prefix = obj["prefix_tokens"].get<TokenSequence>();
    p.suffix = obj["suffix_tokens"].get<TokenSequence>();
    if (p.prefix.empty() || p.suffix.empty()) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": empty prefix or suffix");
    }
    if (obj.contains("origin") && obj["origin"].is_string()) {
      p.origin = obj["origin"].get<std::string>();
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

inline void write_pairs_binary(const std::filesystem::path& path,
                               const std::vector<PrefixSuffixPair>& pairs,
                               std::uint32_t vocab_size) {
  std::string out;
  out.append(kPairMagic, sizeof(kPairMagic));
  put_u32le(out, vocab_size);
  put_u64le(out, pairs.size());
  for (const auto& p : pairs) {
    put_u32le(out, static_cast<std::uint32_t>(p.prefix.size()));
    put_u32le(out, static_cast<std::uint32_t>(p.suffix.size()));
    put_u32le(out, static_cast<std::uint32_t>(p.origin.size()));
    for (TokenId t : p.prefix) put_u32le(out, t);
    for (TokenId t : p.suffix) put_u32le(out, t);
    out += p.origin;
  }
  atomic_write_file(path, out);
}

inline StoredPairs read_pairs_binary(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  BinaryReader r(data, path.string());
  if (r.bytes(sizeof(kPairMagic)) != std::string_view(kPairMagic, sizeof(kPairMagic))) {
    throw DataError(path.string() + ": bad pair file magic");
  }
  StoredPairs stored;
  stored.vocab_size = r.u32le();
  const std::uint64_t count = r.u64le();
  stored.pairs.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t plen = r.u32le();
    const std::uint32_t slen = r.u32le();
    const std::uint32_t olen = r.u32le();
    if (plen == 0 || slen == 0) {
      throw DataError(path.string() + ": record " + std::to_string(i) + " has an empty side");
    }
    PrefixSuffixPair p;
    p.prefix.reserve(plen);
    p.suffix.reserve(slen);
    for (std::uint32_t k = 0; k < plen; ++k) p.prefix.push_back(r.u32le());
    for (std::uint32_t k = 0; k < slen; ++k) p.suffix.push_back(r.u32le());
    p.origin = std::string(r.bytes(olen));
    for (TokenId t : p.prefix) {
      if (t >= stored.vocab_size) throw DataError(path.string() + ": token id out of range");
    }
    for (TokenId t : p.suffix) {
      if (t >= stored.vocab_size) throw DataError(path.string() + ": token id out of range");
    }
    stored.pairs.push_back(std::move(p));
  }
  if (!r.at_end()) throw DataError(path.string() + ": trailing bytes after pair data");
  return stored;
}

}  // namespace rbs
