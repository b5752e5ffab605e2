#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "finrag/curation.hpp"
#include "finrag/error.hpp"
#include "finrag/random.hpp"
#include "finrag/text.hpp"
#include "fixtures.hpp"

using namespace finrag;

namespace {

std::string words(std::size_t n, const std::string& stem = "w") {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += (i ? " " : "") + stem + std::to_string(i);
  return s;
}

Chunk with_vec(const std::string& doc, std::uint32_t pos, std::vector<double> v) {
  auto c = fixture::chunk(doc, pos, "c" + std::to_string(pos));
  c.embedding = EmbeddingVector{std::move(v)};
  return c;
}

MockGateway scripted(const std::string& task, const std::string& contains, const std::string& text) {
  MockScript s;
  MockRule r;
  r.task = task;
  r.contains = contains;
  r.text = text;
  s.rules.push_back(r);
  return MockGateway(s);
}

MockGateway failing(const std::string& task) {
  MockScript s;
  MockRule r;
  r.task = task;
  r.fail = true;
  s.rules.push_back(r);
  return MockGateway(s);
}

void audit(const std::vector<Chunk>& out, double tau) {
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t j = i + 1; j < out.size(); ++j)
      EXPECT_LE(cosine(*out[i].embedding, *out[j].embedding), tau) << out[i].id.str() << " " << out[j].id.str();
}

}  // namespace

TEST(TransformNontext, ScriptedNarrative) {
  auto gw = scripted("transform", "", "Revenue rose from 10 to 12.");
  auto c = fixture::chunk("D", 3, "| rev | 10 | 12 |", "Tables");
  c.modality = Modality::Table;
  const auto out = transform_nontext(c, gw);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].modality, Modality::Text);
  EXPECT_EQ(out[0].text, "Revenue rose from 10 to 12.");
  EXPECT_EQ(out[0].id, c.id);
  EXPECT_EQ(out[0].section_path, "Tables");
}

TEST(TransformNontext, LongOutputResplit) {
  auto gw = scripted("transform", "", words(450));
  auto c = fixture::chunk("D", 0, "chart", "Figures");
  c.modality = Modality::Figure;
  const auto out = transform_nontext(c, gw);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].word_count, 200u);
  EXPECT_EQ(out[1].word_count, 200u);
  EXPECT_EQ(out[2].word_count, 50u);
}

TEST(TransformNontext, Errors) {
  MockGateway gw;
  EXPECT_THROW(transform_nontext(fixture::chunk("D", 0, "text"), gw), InvalidArgument);
  auto bad = failing("transform");
  auto c = fixture::chunk("D", 7, "t");
  c.modality = Modality::Table;
  try {
    transform_nontext(c, bad);
    FAIL();
  } catch (const ChunkError& e) {
    EXPECT_EQ(e.id(), c.id);
  }
}

TEST(Deduplicate, ExactDuplicate) {
  auto a = fixture::chunk("D", 0, "same text");
  auto b = fixture::chunk("D", 1, "same text");
  a.embedding = b.embedding = fixture::embedder()->embed("same text");
  const auto out = deduplicate(std::vector<Chunk>{a, b}, 0.95);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].id, a.id);
}

TEST(Deduplicate, ChainKeepsAandC) {
  // cos(A,B) = 0.97, cos(B,C) = 0.97, cos(A,C) = 0.90.
  const double by = std::sqrt(1 - 0.97 * 0.97);
  const double cy = (0.97 - 0.97 * 0.90) / by;
  const double cz = std::sqrt(1 - 0.81 - cy * cy);
  const std::vector<Chunk> in{with_vec("D", 0, {1, 0, 0}), with_vec("D", 1, {0.97, by, 0}),
                              with_vec("D", 2, {0.90, cy, cz})};
  EXPECT_NEAR(cosine(*in[0].embedding, *in[1].embedding), 0.97, 1e-12);
  EXPECT_NEAR(cosine(*in[1].embedding, *in[2].embedding), 0.97, 1e-12);
  EXPECT_NEAR(cosine(*in[0].embedding, *in[2].embedding), 0.90, 1e-12);
  const auto out = deduplicate(in, 0.95);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].id.position, 0u);
  EXPECT_EQ(out[1].id.position, 2u);
}

TEST(Deduplicate, NoOpBelowThreshold) {
  const std::vector<Chunk> in{with_vec("D", 0, {1, 0}), with_vec("D", 1, {0, 1}), with_vec("D", 2, {0.6, 0.8})};
  const auto out = deduplicate(in, 0.95);
  ASSERT_EQ(out.size(), 3u);
}

TEST(Deduplicate, RandomAuditIdempotentOrderPreserving) {
  Rng rng(21);
  for (int t = 0; t < 30; ++t) {
    std::vector<Chunk> in;
    const auto n = 2 + uniform_index(rng, 60);
    for (std::uint32_t i = 0; i < n; ++i) {
      std::vector<double> v(3);
      for (auto& x : v) x = static_cast<double>(uniform_index(rng, 3)) + 0.05 * uniform_real(rng);
      in.push_back(with_vec("D", i, v));
    }
    const double tau = 0.9 + 0.09 * uniform_real(rng);
    const auto out = deduplicate(in, tau);
    audit(out, tau);
    const auto again = deduplicate(out, tau);
    ASSERT_EQ(again.size(), out.size());
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(again[i].id, out[i].id);
    std::size_t j = 0;
    for (const auto& c : in)
      if (j < out.size() && c.id == out[j].id) ++j;
    EXPECT_EQ(j, out.size());
    // Every dropped chunk exceeds tau against some retained earlier one.
    for (const auto& c : in) {
      const bool kept = std::any_of(out.begin(), out.end(), [&](const Chunk& o) { return o.id == c.id; });
      if (kept) continue;
      bool explained = false;
      for (const auto& o : out)
        if (o.id < c.id && cosine(*o.embedding, *c.embedding) > tau) explained = true;
      EXPECT_TRUE(explained);
    }
  }
}

TEST(Deduplicate, MissingEmbeddingNamesChunk) {
  const std::vector<Chunk> in{with_vec("D", 0, {1, 0}), fixture::chunk("D", 1, "x")};
  try {
    deduplicate(in, 0.95);
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("D#1"), std::string::npos);
  }
}

TEST(Coreference, IdentityScriptedAndFailure) {
  MockGateway identity;
  const auto c = fixture::chunk("D", 0, "It grew 20% year over year.");
  const auto same = resolve_coreferences(c, "", identity);
  EXPECT_EQ(same.text, c.text);
  EXPECT_FALSE(same.unresolved);

  auto gw = scripted("coreference", "It grew", "Zeekr grew 20% year over year.");
  EXPECT_EQ(resolve_coreferences(c, "Zeekr revenue.", gw).text, "Zeekr grew 20% year over year.");

  auto bad = failing("coreference");
  const auto kept = resolve_coreferences(c, "", bad);
  EXPECT_EQ(kept.text, c.text);
  EXPECT_TRUE(kept.unresolved);
}

TEST(SectionSummary, MockFirstThirtyWords) {
  MockGateway gw;
  const std::vector<Chunk> one{fixture::chunk("D", 0, words(40), "S")};
  EXPECT_EQ(generate_section_summary(one, gw), words(30));
  EXPECT_THROW(generate_section_summary(std::vector<Chunk>{}, gw), InvalidArgument);
  const std::vector<Chunk> mixed{fixture::chunk("D", 0, "a", "S"), fixture::chunk("D", 1, "b", "T")};
  EXPECT_THROW(generate_section_summary(mixed, gw), InvalidArgument);
}

TEST(BuildKnowledgeBase, EmptyCorpus) {
  MockGateway gw;
  const auto kb = build_knowledge_base(std::vector<DocumentRecord>{}, {}, gw);
  EXPECT_EQ(kb.size(), 0u);
  EXPECT_TRUE(search_sparse("x", 3, kb.sparse(), kb.bm25()).empty());
}

TEST(BuildKnowledgeBase, FourHundredWordsTwoChunks) {
  MockGateway gw;
  DocumentRecord d{"D", "t", "10-K", "2024", {{"Intro", Modality::Text, words(400)}}};
  CurationReport rep;
  const auto kb = build_knowledge_base(std::vector<DocumentRecord>{d}, {}, gw, nullptr, &rep);
  ASSERT_EQ(kb.size(), 2u);
  EXPECT_EQ(rep.final_chunks, 2u);
  EXPECT_EQ(kb.sparse().size(), 2u);
  EXPECT_EQ(kb.dense().size(), 2u);
  EXPECT_EQ(kb.metadata().size(), 2u);
  EXPECT_EQ(*kb.chunks()[0].summary, *kb.chunks()[1].summary);
  EXPECT_EQ(*kb.chunks()[0].summary, words(30));
  EXPECT_FALSE(search_sparse("w5", 1, kb.sparse(), kb.bm25()).empty());
  EXPECT_FALSE(search_dense(kb.embedder().embed("w5"), 1, kb.dense()).empty());
  EXPECT_FALSE(search_metadata(kb.embedder().embed("w5"), 1, kb.metadata()).empty());
}

TEST(BuildKnowledgeBase, DuplicateDocumentCollapses) {
  MockGateway gw;
  DocumentRecord a{"A", "t", "10-Q", "2024Q1",
                   {{"S1", Modality::Text, words(300, "alpha")}, {"S2", Modality::Text, words(120, "beta")}}};
  auto b = a;
  b.doc_id = "B";
  const auto single = build_knowledge_base(std::vector<DocumentRecord>{a}, {}, gw);
  const auto doubled = build_knowledge_base(std::vector<DocumentRecord>{a, b}, {}, gw);
  EXPECT_EQ(doubled.size(), single.size());
  for (const auto& c : doubled.chunks()) EXPECT_EQ(c.id.doc_id, "A");
}

TEST(BuildKnowledgeBase, TransformSkipAndDeterminism) {
  MockScript s;
  MockRule fail;
  fail.task = "transform";
  fail.contains = "broken";
  fail.fail = true;
  s.rules.push_back(fail);
  MockGateway gw(s);
  DocumentRecord d{"D", "t", "10-Q", "2024Q2",
                   {{"T", Modality::Table, "| broken table |"},
                    {"F", Modality::Figure, "bar chart of deliveries by month"},
                    {"X", Modality::Text, words(30)}}};
  CurationConfig cfg;
  cfg.jobs = 3;
  CurationReport rep;
  const auto kb = build_knowledge_base(std::vector<DocumentRecord>{d}, cfg, gw, nullptr, &rep);
  EXPECT_EQ(rep.skipped, 1u);
  EXPECT_EQ(rep.transformed, 1u);
  ASSERT_EQ(kb.size(), 2u);
  EXPECT_EQ(kb.chunks()[0].id, (ChunkId{"D", 0}));
  EXPECT_EQ(kb.chunks()[0].modality, Modality::Text);
  EXPECT_EQ(kb.chunks()[1].id, (ChunkId{"D", 1}));

  fixture::TempDir x, y;
  kb.save(x.path().string());
  build_knowledge_base(std::vector<DocumentRecord>{d}, cfg, gw).save(y.path().string());
  for (const char* f : {"chunks.jsonl", "sparse.idx", "dense.idx", "meta.idx"}) {
    std::ifstream a(x.file(f)), b(y.file(f));
    std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
    EXPECT_EQ(sa, sb) << f;
  }
}

TEST(CurationConfig, Validation) {
  CurationConfig c;
  c.tau_sim = 0.0;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c.tau_sim = 1.0;
  EXPECT_NO_THROW(c.validate());
  c.chunk_length = 0;
  EXPECT_THROW(c.validate(), InvalidArgument);
}
