#include "rbs/corpus.hpp"

#include <cstdio>
#include <filesystem>

#include <gtest/gtest.h>

namespace rbs {
namespace {

namespace fs = std::filesystem;

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("rbs_corpus_test_" + name);
}

TEST(Tokenize, ByteModeIsByteIdentity) {
  const Tokenizer t = Tokenizer::byte_level();
  EXPECT_EQ(t.tokenize("ab"), (TokenSequence{97, 98}));
  EXPECT_EQ(t.tokenize(""), TokenSequence{});
  EXPECT_EQ(t.vocab_size(), 256u);
}

TEST(Tokenize, WhitespaceUsesFrozenVocab) {
  const Tokenizer t = Tokenizer::whitespace(WhitespaceVocab::from_words({"x", "y"}));
  EXPECT_EQ(t.tokenize("x y x"), (TokenSequence{1, 2, 1}));
  EXPECT_EQ(t.tokenize("x unseen y"), (TokenSequence{1, 0, 2}));
  EXPECT_EQ(t.vocab_size(), 3u);
}

TEST(Tokenize, WhitespaceWithoutVocabIsConfigError) {
  Tokenizer t;
  t.mode = Tokenizer::Mode::kWhitespace;
  EXPECT_THROW(t.tokenize("hello"), ConfigError);
}

TEST(WhitespaceVocab, BuildRanksByFrequencyThenLexicographic) {
  std::vector<Document> docs{{"a", "c c c b b a a z", "t"}};
  const WhitespaceVocab v = WhitespaceVocab::build(docs, 4);
  // c (3) first, then a/b tied at 2 -> lexicographic; z dropped by the cap
  EXPECT_EQ(v.id_of("c"), 1u);
  EXPECT_EQ(v.id_of("a"), 2u);
  EXPECT_EQ(v.id_of("b"), 3u);
  EXPECT_EQ(v.id_of("z"), 0u);
  EXPECT_EQ(v.size(), 4u);
}

TEST(WhitespaceVocab, FileRoundTrip) {
  const WhitespaceVocab v = WhitespaceVocab::from_words({"alpha", "beta"});
  const fs::path path = temp_path("vocab.txt");
  v.save(path);
  const WhitespaceVocab loaded = WhitespaceVocab::load(path);
  EXPECT_EQ(loaded.id_of("alpha"), 1u);
  EXPECT_EQ(loaded.id_of("beta"), 2u);
  EXPECT_EQ(loaded.size(), 3u);
  fs::remove(path);
}

TEST(ConcatStream, SeparatorBetweenDocuments) {
  const Tokenizer t = Tokenizer::byte_level();
  const std::vector<Document> docs{{"1", "a", "t"}, {"2", "b", "t"}};
  EXPECT_EQ(concat_stream(docs, t, TokenId{0}), (TokenSequence{97, 0, 98}));
}

TEST(ConcatStream, SingleDocumentIsItsOwnTokenization) {
  const Tokenizer t = Tokenizer::byte_level();
  const std::vector<Document> docs{{"1", "abc", "t"}};
  EXPECT_EQ(concat_stream(docs, t), t.tokenize("abc"));
}

TEST(ConcatStream, LengthArithmeticWithSeparators) {
  const Tokenizer t = Tokenizer::byte_level();
  const std::vector<Document> docs{{"1", "ab", "t"}, {"2", "cde", "t"}, {"3", "fghi", "t"}};
  EXPECT_EQ(concat_stream(docs, t, TokenId{0}).size(), 2u + 3u + 4u + 2u);
  EXPECT_EQ(concat_stream(docs, t, std::nullopt).size(), 9u);
}

TEST(ConcatStream, EmptyCorpusIsConfigError) {
  EXPECT_THROW(concat_stream({}, Tokenizer::byte_level()), ConfigError);
}

TEST(ConcatStream, AssociativeOverDocumentLists) {
  const Tokenizer t = Tokenizer::byte_level();
  const std::vector<Document> all{{"1", "ab", "t"}, {"2", "cd", "t"}, {"3", "ef", "t"}};
  const TokenSequence whole = concat_stream(all, t, TokenId{7});
  // concat(concat(d1, d2), d3) realized by streaming the first two, then
  // appending the separator and the third tokenization
  TokenSequence left =
      concat_stream({all.begin(), all.begin() + 2}, t, TokenId{7});
  left.push_back(7);
  const TokenSequence right = t.tokenize("ef");
  left.insert(left.end(), right.begin(), right.end());
  EXPECT_EQ(left, whole);
}

TEST(ChunkStream, ReferenceParametersDropRemainder) {
  TokenSequence stream(3073, 5);
  const auto chunks = chunk_stream(stream, 1536);
  ASSERT_EQ(chunks.size(), 2u);
  EXPECT_EQ(chunks[0].size(), 1536u);
  EXPECT_EQ(chunks[1].size(), 1536u);
}

TEST(ChunkStream, ExactLengthBoundaries) {
  EXPECT_EQ(chunk_stream(TokenSequence(16, 1), 16).size(), 1u);
  EXPECT_EQ(chunk_stream(TokenSequence(15, 1), 16).size(), 0u);
  EXPECT_THROW(chunk_stream(TokenSequence(4, 1), 1), ConfigError);
}

TEST(ChunkStream, TotalTokenCountProperty) {
  Rng rng(123);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = rng.next_below(5000);
    const std::size_t chunk_len = 2 + rng.next_below(100);
    TokenSequence stream(n, 0);
    const auto chunks = chunk_stream(stream, chunk_len);
    std::size_t total = 0;
    for (const auto& c : chunks) {
      EXPECT_EQ(c.size(), chunk_len);
      total += c.size();
    }
    EXPECT_EQ(total, (n / chunk_len) * chunk_len);
  }
}

TEST(ChunkStream, ChunksAreContiguousNonOverlapping) {
  TokenSequence stream(100);
  for (std::size_t i = 0; i < stream.size(); ++i) stream[i] = static_cast<TokenId>(i);
  const auto chunks = chunk_stream(stream, 7);
  std::size_t pos = 0;
  for (const auto& c : chunks) {
    for (TokenId tok : c) EXPECT_EQ(tok, pos++);
  }
}

TEST(Synthetic, EmptyCorpusForZeroDocs) {
  SyntheticSpec spec;
  spec.n_docs = 0;
  EXPECT_TRUE(gen_synthetic_corpus(spec).empty());
}

TEST(Synthetic, DeterministicInSeed) {
  SyntheticSpec spec;
  spec.n_docs = 5;
  spec.seed = 42;
  spec.doc_len = 50;
  const auto a = gen_synthetic_corpus(spec);
  const auto b = gen_synthetic_corpus(spec);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].id, b[i].id);
    EXPECT_EQ(a[i].text, b[i].text);
  }
  spec.seed = 43;
  const auto c = gen_synthetic_corpus(spec);
  EXPECT_NE(a[0].text, c[0].text);
}

TEST(Synthetic, KeyFrequencyWithinThreeSigma) {
  SyntheticSpec spec;
  spec.n_docs = 20;
  spec.vocab_size = 64;
  spec.key_density = 0.3;
  spec.doc_len = 1000;
  spec.seed = 7;
  const auto docs = gen_synthetic_corpus(spec);
  const Tokenizer t = Tokenizer::whitespace(synthetic_vocab(spec.vocab_size, spec.keys()));
  const double sigma3 = 3.0 * std::sqrt(1000.0 * 0.3 * 0.7);
  for (const auto& doc : docs) {
    const TokenSequence toks = t.tokenize(doc.text);
    ASSERT_EQ(toks.size(), 1000u);
    std::size_t key_count = 0;
    for (TokenId tok : toks) {
      ASSERT_LT(tok, spec.vocab_size);
      if (tok >= 1 && tok <= spec.keys()) ++key_count;
    }
    EXPECT_NEAR(static_cast<double>(key_count), 300.0, sigma3);
  }
}

TEST(Synthetic, InvalidDensityIsConfigError) {
  SyntheticSpec spec;
  spec.n_docs = 1;
  spec.key_density = 0.0;
  EXPECT_THROW(gen_synthetic_corpus(spec), ConfigError);
  spec.key_density = 1.0;
  EXPECT_THROW(gen_synthetic_corpus(spec), ConfigError);
}

TEST(CorpusFiles, JsonlRoundTripAndIds) {
  const fs::path path = temp_path("corpus.jsonl");
  write_documents_jsonl(path, {{"d0", "hello world", "t"}, {"d1", "second doc", "t"}});
  const auto docs = read_documents_jsonl(path);
  ASSERT_EQ(docs.size(), 2u);
  EXPECT_EQ(docs[0].id, "d0");
  EXPECT_EQ(docs[1].text, "second doc");
  fs::remove(path);
}

TEST(CorpusFiles, JsonlDuplicateIdIsDataError) {
  const fs::path path = temp_path("dup.jsonl");
  atomic_write_file(path, "{\"id\":\"x\",\"text\":\"a\"}\n{\"id\":\"x\",\"text\":\"b\"}\n");
  EXPECT_THROW(read_documents_jsonl(path), DataError);
  fs::remove(path);
}

TEST(CorpusFiles, JsonlEmptyTextIsDataError) {
  const fs::path path = temp_path("empty.jsonl");
  atomic_write_file(path, "{\"text\":\"   \"}\n");
  EXPECT_THROW(read_documents_jsonl(path), DataError);
  fs::remove(path);
}

TEST(CorpusFiles, PlainTextSplitsOnBlankLines) {
  const fs::path path = temp_path("corpus.txt");
  atomic_write_file(path, "first doc\nstill first\n\n\nsecond doc\n");
  const auto docs = read_documents_text(path);
  ASSERT_EQ(docs.size(), 2u);
  EXPECT_EQ(docs[0].text, "first doc\nstill first");
  EXPECT_EQ(docs[1].text, "second doc");
  fs::remove(path);
}

TEST(TokenStreamFile, RoundTrip) {
  const fs::path path = temp_path("stream.bin");
  const TokenSequence tokens{0, 1, 255, 42};
  write_token_stream(path, tokens, 256);
  const StoredTokenStream s = read_token_stream(path);
  EXPECT_EQ(s.tokens, tokens);
  EXPECT_EQ(s.vocab_size, 256u);
  fs::remove(path);
}

TEST(TokenStreamFile, BadMagicIsDataError) {
  const fs::path path = temp_path("bad.bin");
  atomic_write_file(path, "NOTMAGIC????????????");
  EXPECT_THROW(read_token_stream(path), DataError);
  fs::remove(path);
}

TEST(TokenStreamFile, TruncationIsDataError) {
  const fs::path path = temp_path("trunc.bin");
  const TokenSequence tokens{1, 2, 3};
  write_token_stream(path, tokens, 16);
  std::string data = read_file(path);
  data.resize(data.size() - 2);
  atomic_write_file(path, data);
  EXPECT_THROW(read_token_stream(path), DataError);
  fs::remove(path);
}

}  // namespace
}  // namespace rbs
