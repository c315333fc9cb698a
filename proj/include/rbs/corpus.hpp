#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "rbs/common.hpp"

namespace rbs {

/// One raw input document. `text` must be non-empty after whitespace
/// normalization and ids must be unique within a corpus.
struct Document {
  std::string id;
  std::string text;
  std::string source;
};

// ---------------------------------------------------------------------------
// Tokenizers. Two modes: byte-level (id == byte value, vocab 256) and
// whitespace words against a frozen vocabulary (unknown word -> id 0).
// ---------------------------------------------------------------------------

class WhitespaceVocab {
 public:
  WhitespaceVocab() = default;

  /// Frequency-ranked vocabulary capped at `max_size` entries including the
  /// reserved unknown id 0. Ties are broken lexicographically so the result
  /// does not depend on hash iteration order.
  static WhitespaceVocab build(const std::vector<Document>& docs, std::size_t max_size) {
    if (max_size < 2) throw ConfigError("vocab max_size must be at least 2");
    std::map<std::string, std::uint64_t> freq;
    for (const auto& doc : docs) {
      std::istringstream words(doc.text);
      std::string w;
      while (words >> w) ++freq[w];
    }
    std::vector<std::pair<std::string, std::uint64_t>> ranked(freq.begin(), freq.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    std::vector<std::string> words;
    for (const auto& [w, n] : ranked) {
      if (words.size() + 1 >= max_size) break;
      words.push_back(w);
    }
    return from_words(words);
  }

  /// Explicit vocabulary: words[i] gets id i+1; id 0 stays the unknown token.
  static WhitespaceVocab from_words(const std::vector<std::string>& words) {
    WhitespaceVocab v;  // words_[0] is the reserved unknown slot
    v.words_.reserve(words.size() + 1);
    for (const auto& w : words) {
      if (w.empty()) throw ConfigError("vocabulary words must be non-empty");
      if (!v.index_.emplace(w, static_cast<TokenId>(v.words_.size())).second) {
        throw ConfigError("duplicate vocabulary word: " + w);
      }
      v.words_.push_back(w);
    }
    return v;
  }

  TokenId id_of(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? 0u : it->second;
  }

  const std::string& word_of(TokenId id) const { return words_.at(id); }
  std::uint32_t size() const { return static_cast<std::uint32_t>(words_.size()); }
  bool empty() const { return words_.size() <= 1; }

  /// One word per line; the line number is the id. Line 0 is the unknown slot.
  std::string to_text() const {
    std::string out;
    for (const auto& w : words_) {
      out += w;
      out += '\n';
    }
    return out;
  }

  static WhitespaceVocab from_text(std::string_view text) {
    std::vector<std::string> words;
    std::size_t start = 0;
    bool first = true;
    while (start < text.size()) {
      std::size_t eol = text.find('\n', start);
      if (eol == std::string_view::npos) eol = text.size();
      std::string line(text.substr(start, eol - start));
      start = eol + 1;
      if (first) {
        first = false;  // line 0 is the reserved unknown marker
        continue;
      }
      if (line.empty()) continue;
      words.push_back(line);
    }
    return from_words(words);
  }

  void save(const std::filesystem::path& path) const { atomic_write_file(path, to_text()); }

  static WhitespaceVocab load(const std::filesystem::path& path) {
    return from_text(read_file(path));
  }

 private:
  std::vector<std::string> words_{"<unk>"};
  std::unordered_map<std::string, TokenId> index_;
};

struct Tokenizer {
  enum class Mode { kByte, kWhitespace };

  Mode mode = Mode::kByte;
  WhitespaceVocab vocab;  // whitespace mode only

  static Tokenizer byte_level() { return Tokenizer{Mode::kByte, {}}; }
  static Tokenizer whitespace(WhitespaceVocab v) {
    return Tokenizer{Mode::kWhitespace, std::move(v)};
  }

  std::uint32_t vocab_size() const {
    return mode == Mode::kByte ? 256u : vocab.size();
  }

  TokenSequence tokenize(std::string_view text) const {
    TokenSequence out;
    if (mode == Mode::kByte) {
      out.reserve(text.size());
      for (unsigned char c : text) out.push_back(static_cast<TokenId>(c));
      return out;
    }
    if (vocab.empty()) {
      throw ConfigError("whitespace tokenizer requires a built vocabulary");
    }
    std::istringstream words{std::string(text)};
    std::string w;
    while (words >> w) out.push_back(vocab.id_of(w));
    return out;
  }
};

// ---------------------------------------------------------------------------
// Stream construction and chunking.
// ---------------------------------------------------------------------------

/// Concatenates per-document tokenizations in input order, inserting
/// `separator` between consecutive documents when set.
inline TokenSequence concat_stream(const std::vector<Document>& docs, const Tokenizer& tokenizer,
                                   std::optional<TokenId> separator = TokenId{0}) {
  if (docs.empty()) throw ConfigError("concat_stream: need at least one document");
  TokenSequence stream;
  bool first = true;
  for (const auto& doc : docs) {
    if (!first && separator.has_value()) stream.push_back(*separator);
    first = false;
    const TokenSequence toks = tokenizer.tokenize(doc.text);
    stream.insert(stream.end(), toks.begin(), toks.end());
  }
  return stream;
}

/// Fixed-length chunks. A trailing remainder shorter than `chunk_len` is
/// dropped, so the output totals floor(n / chunk_len) * chunk_len tokens.
inline std::vector<TokenSequence> chunk_stream(const TokenSequence& stream, std::size_t chunk_len) {
  if (chunk_len < 2) throw ConfigError("chunk length must be at least 2");
  std::vector<TokenSequence> chunks;
  chunks.reserve(stream.size() / chunk_len);
  for (std::size_t start = 0; start + chunk_len <= stream.size(); start += chunk_len) {
    chunks.emplace_back(stream.begin() + static_cast<std::ptrdiff_t>(start),
                        stream.begin() + static_cast<std::ptrdiff_t>(start + chunk_len));
  }
  return chunks;
}

// ---------------------------------------------------------------------------
// Synthetic keyed corpus.
//
// Token id layout: 0 is reserved (unknown / document separator), ids
// [1, n_keys] are key tokens, the remainder are filler. Each document draws
// one key and emits it with probability `key_density` per position, filler
// uniformly otherwise. The true continuation of any prefix therefore shares
// its key, which is what makes cross pairs within a batch separable.
// ---------------------------------------------------------------------------

struct SyntheticSpec {
  std::size_t n_docs = 0;
  std::uint32_t vocab_size = 64;   // >= 8
  std::uint32_t n_keys = 0;        // 0 -> vocab_size / 2
  double key_density = 0.3;        // in (0, 1)
  std::size_t doc_len = 1000;
  std::uint64_t seed = 0;

  std::uint32_t keys() const { return n_keys == 0 ? vocab_size / 2 : n_keys; }

  void validate() const {
    if (vocab_size < 8) throw ConfigError("synthetic vocab_size must be >= 8");
    if (!(key_density > 0.0 && key_density < 1.0)) {
      throw ConfigError("key_density must lie in (0, 1)");
    }
    if (doc_len == 0) throw ConfigError("doc_len must be positive");
    if (keys() < 1 || keys() > vocab_size - 2) {
      throw ConfigError("n_keys must leave at least one filler id");
    }
  }
};

/// Vocabulary matching the synthetic id layout: "k<i>" for keys, "w<i>" for
/// filler, so whitespace tokenization reproduces the generated ids exactly.
inline WhitespaceVocab synthetic_vocab(std::uint32_t vocab_size, std::uint32_t n_keys) {
  std::vector<std::string> words;
  words.reserve(vocab_size - 1);
  for (std::uint32_t id = 1; id < vocab_size; ++id) {
    words.push_back(id <= n_keys ? "k" + std::to_string(id) : "w" + std::to_string(id));
  }
  return WhitespaceVocab::from_words(words);
}

inline std::vector<Document> gen_synthetic_corpus(const SyntheticSpec& spec) {
  spec.validate();
  const std::uint32_t n_keys = spec.keys();
  const std::uint32_t n_filler = spec.vocab_size - 1 - n_keys;
  std::vector<Document> docs;
  docs.reserve(spec.n_docs);
  for (std::size_t i = 0; i < spec.n_docs; ++i) {
    // Independent substream per document: the corpus is identical no matter
    // how document generation is scheduled.
    Rng rng(Rng::substream(spec.seed, i));
    const TokenId key = 1 + static_cast<TokenId>(rng.next_below(n_keys));
    std::string text;
    text.reserve(spec.doc_len * 4);
    for (std::size_t t = 0; t < spec.doc_len; ++t) {
      TokenId tok;
      if (rng.next_double() < spec.key_density) {
        tok = key;
      } else {
        tok = n_keys + 1 + static_cast<TokenId>(rng.next_below(n_filler));
      }
      if (t > 0) text += ' ';
      text += (tok <= n_keys ? "k" : "w") + std::to_string(tok);
    }
    docs.push_back(Document{"synth-" + std::to_string(i), std::move(text), "synthetic"});
  }
  return docs;
}

// ---------------------------------------------------------------------------
// Corpus file formats.
//   - JSON lines: one object per line, required "text", optional "id".
//   - Plain text: documents separated by one or more blank lines.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trimmed(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

inline void check_unique_ids(const std::vector<Document>& docs, const std::string& where) {
  std::unordered_set<std::string> seen;
  for (const auto& d : docs) {
    if (!seen.insert(d.id).second) throw DataError(where + ": duplicate document id '" + d.id + "'");
  }
}

}  // namespace detail

inline std::vector<Document> read_documents_jsonl(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  std::vector<Document> docs;
  std::istringstream lines(data);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(lines, line)) {
    ++lineno;
    if (detail::trimmed(line).empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": invalid JSON: " + e.what());
    }
    if (!obj.is_object() || !obj.contains("text") || !obj["text"].is_string()) {
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": expected an object with a string \"text\" field");
    }
    Document d;
    d.text = obj["text"].get<std::string>();
    if (detail::trimmed(d.text).empty()) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": document text is empty");
    }
    d.id = obj.contains("id") && obj["id"].is_string() ? obj["id"].get<std::string>()
                                                       : "doc-" + std::to_string(lineno);
    d.source = path.filename().string();
    docs.push_back(std::move(d));
  }
  detail::check_unique_ids(docs, path.string());
  return docs;
}

inline std::vector<Document> read_documents_text(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  std::vector<Document> docs;
  std::istringstream lines(data);
  std::string line, current;
  auto flush = [&]() {
    if (!detail::trimmed(current).empty()) {
      docs.push_back(Document{"doc-" + std::to_string(docs.size()), current,
                              path.filename().string()});
    }
    current.clear();
  };
  while (std::getline(lines, line)) {
    if (detail::trimmed(line).empty()) {
      flush();
    } else {
      if (!current.empty()) current += '\n';
      current += line;
    }
  }
  flush();
  return docs;
}

/// Picks the reader by extension: .jsonl/.json -> JSON lines, else plain text.
inline std::vector<Document> read_documents(const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".jsonl" || ext == ".json") return read_documents_jsonl(path);
  return read_documents_text(path);
}

inline void write_documents_jsonl(const std::filesystem::path& path,
                                  const std::vector<Document>& docs) {
  std::string out;
  for (const auto& d : docs) {
    nlohmann::json obj{{"id", d.id}, {"text", d.text}};
    out += obj.dump();
    out += '\n';
  }
  atomic_write_file(path, out);
}

// ---------------------------------------------------------------------------
// Token stream binary format:
//   magic "RBSTOK1\0" | u32le vocab_size | u64le count | count * u32le ids
// ---------------------------------------------------------------------------

inline constexpr char kTokenStreamMagic[8] = {'R', 'B', 'S', 'T', 'O', 'K', '1', '\0'};

struct StoredTokenStream {
  TokenSequence tokens;
  std::uint32_t vocab_size = 0;
};

inline void write_token_stream(const std::filesystem::path& path, const TokenSequence& tokens,
                               std::uint32_t vocab_size) {
  std::string out;
  out.append(kTokenStreamMagic, sizeof(kTokenStreamMagic));
  put_u32le(out, vocab_size);
  put_u64le(out, tokens.size());
  for (TokenId t : tokens) put_u32le(out, t);
  atomic_write_file(path, out);
}

inline StoredTokenStream read_token_stream(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  BinaryReader r(data, path.string());
  if (r.bytes(sizeof(kTokenStreamMagic)) !=
      std::string_view(kTokenStreamMagic, sizeof(kTokenStreamMagic))) {
    throw DataError(path.string() + ": bad token stream magic");
  }
  StoredTokenStream s;
  s.vocab_size = r.u32le();
  const std::uint64_t count = r.u64le();
  s.tokens.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const TokenId t = r.u32le();
    if (t >= s.vocab_size) {
      throw DataError(path.string() + ": token id " + std::to_string(t) + " >= vocab_size " +
                      std::to_string(s.vocab_size));
    }
    s.tokens.push_back(t);
  }
  if (!r.at_end()) throw DataError(path.string() + ": trailing bytes after token data");
  return s;
}

}  // namespace rbs
