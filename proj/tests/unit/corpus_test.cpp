#include <sstream>

#include <gtest/gtest.h>

#include "finrag/corpus.hpp"
#include "finrag/error.hpp"
#include "finrag/text.hpp"

using namespace finrag;

namespace {

std::string words(std::size_t n, const std::string& stem = "w") {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) s += ' ';
    s += stem + std::to_string(i);
  }
  return s;
}

DocumentRecord doc_with(std::vector<Block> blocks) {
  DocumentRecord d;
  d.doc_id = "D";
  d.title = "t";
  d.filing_type = "10-Q";
  d.period = "2024Q1";
  d.sections = std::move(blocks);
  return d;
}

}  // namespace

TEST(Text, SplitAndNormalize) {
  EXPECT_EQ(split_words("  a\tb \n c "), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(normalize_whitespace("  a\t\tb  "), "a b");
  EXPECT_EQ(tokenize_terms("Revenue, (10-K) Q3FY24!"), (std::vector<std::string>{"revenue", "10-k", "q3fy24"}));
  EXPECT_EQ(strip_punctuation("It's Q3-2024."), "it s q3 2024");
  EXPECT_EQ(first_words("a b c d", 2), "a b");
  EXPECT_TRUE(contains_ci("Norvik AUTO", "auto"));
}

TEST(ChunkDocument, FixedLengthSplit) {
  const auto chunks = chunk_document(doc_with({{"S", Modality::Text, words(450)}}), 200);
  ASSERT_EQ(chunks.size(), 3u);
  EXPECT_EQ(chunks[0].word_count, 200u);
  EXPECT_EQ(chunks[1].word_count, 200u);
  EXPECT_EQ(chunks[2].word_count, 50u);
  for (std::uint32_t i = 0; i < 3; ++i) EXPECT_EQ(chunks[i].id.position, i);
}

TEST(ChunkDocument, EmptyDocument) {
  EXPECT_TRUE(chunk_document(doc_with({})).empty());
  EXPECT_TRUE(chunk_document(doc_with({{"S", Modality::Text, "   "}})).empty());
}

TEST(ChunkDocument, ExactBoundary) {
  const auto chunks = chunk_document(doc_with({{"S", Modality::Text, words(200)}}), 200);
  ASSERT_EQ(chunks.size(), 1u);
  EXPECT_EQ(chunks[0].word_count, 200u);
}

TEST(ChunkDocument, BlocksAndModalities) {
  const auto chunks = chunk_document(doc_with({{"A", Modality::Text, words(5)},
                                               {"B", Modality::Table, "| x | y |\n| 1 | 2 |"},
                                               {"C", Modality::Text, words(3, "v")}}),
                                     4);
  ASSERT_EQ(chunks.size(), 4u);
  EXPECT_EQ(chunks[0].section_path, "A");
  EXPECT_EQ(chunks[1].word_count, 1u);
  EXPECT_EQ(chunks[2].modality, Modality::Table);
  EXPECT_EQ(chunks[2].section_path, "B");
  EXPECT_EQ(chunks[3].section_path, "C");
  EXPECT_EQ(chunks[3].id.position, 3u);
}

TEST(ChunkDocument, ReassemblyReproducesText) {
  const std::string a = "  one two\tthree  four five six seven ";
  const std::string b = "eight nine\nten";
  const auto d = doc_with({{"A", Modality::Text, a}, {"F", Modality::Figure, "fig"}, {"B", Modality::Text, b}});
  for (std::size_t len : {1, 2, 3, 7, 200}) {
    std::string joined;
    for (const auto& c : chunk_document(d, len)) {
      if (c.modality != Modality::Text) continue;
      if (!joined.empty()) joined += ' ';
      joined += c.text;
    }
    EXPECT_EQ(joined, normalize_whitespace(a + " " + b)) << len;
  }
}

TEST(ChunkDocument, Deterministic) {
  const auto d = doc_with({{"A", Modality::Text, words(77)}});
  const auto x = chunk_document(d, 10);
  const auto y = chunk_document(d, 10);
  ASSERT_EQ(x.size(), y.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_EQ(x[i].id, y[i].id);
    EXPECT_EQ(x[i].text, y[i].text);
  }
}

TEST(ChunkDocument, RejectsZeroLength) {
  EXPECT_THROW(chunk_document(doc_with({}), 0), InvalidArgument);
}

TEST(ChunkId, StrParseAndOrder) {
  const ChunkId id{"NVK-2024Q1", 12};
  EXPECT_EQ(id.str(), "NVK-2024Q1#12");
  EXPECT_EQ(ChunkId::parse("a#b#3"), (ChunkId{"a#b", 3}));
  EXPECT_THROW(ChunkId::parse("nohash"), InvalidArgument);
  EXPECT_THROW(ChunkId::parse("x#1a"), InvalidArgument);
  EXPECT_LT((ChunkId{"a", 9}), (ChunkId{"a", 10}));
  EXPECT_LT((ChunkId{"a", 10}), (ChunkId{"b", 0}));
}

TEST(CorpusIo, RoundTrip) {
  const auto d = doc_with({{"A > B", Modality::Table, "cells"}, {"C", Modality::Text, "body text"}});
  std::stringstream ss;
  write_corpus(ss, {d, d});
  const auto back = read_corpus(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].sections[0].section_path, "A > B");
  EXPECT_EQ(back[0].sections[0].modality, Modality::Table);
  EXPECT_EQ(back[1].period, "2024Q1");

  auto chunks = chunk_document(d, 200);
  chunks[0].summary = "sum";
  chunks[1].embedding = EmbeddingVector{{0.6, 0.8}};
  chunks[1].unresolved = true;
  std::stringstream cs;
  write_chunks(cs, chunks);
  const auto cb = read_chunks(cs);
  ASSERT_EQ(cb.size(), 2u);
  EXPECT_EQ(cb[0].summary, "sum");
  EXPECT_EQ(cb[1].embedding->values, (std::vector<double>{0.6, 0.8}));
  EXPECT_TRUE(cb[1].unresolved);
}

TEST(CorpusIo, MalformedLineThrows) {
  std::stringstream ss("{\"doc_id\": \"a\"}\nnot json\n");
  EXPECT_THROW(read_corpus(ss), FormatError);
  std::stringstream bad_mod(R"({"doc_id":"a","sections":[{"path":"x","modality":"audio","text":"t"}]})");
  EXPECT_THROW(read_corpus(bad_mod), Error);
}
