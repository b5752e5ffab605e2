#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "finrag/error.hpp"
#include "finrag/retrieval.hpp"
#include "finrag/synthetic.hpp"
#include "fixtures.hpp"

using namespace finrag;

namespace {

EmbeddingVector padded(std::vector<double> head) {
  head.resize(256, 0.0);
  return EmbeddingVector{std::move(head)};
}

/// Unit vector at angle acos(c) from e1 in the (e1, e_axis) plane.
EmbeddingVector at_cos(double c, std::size_t axis) {
  std::vector<double> v(256, 0.0);
  v[0] = c;
  v[axis] = std::sqrt(1 - c * c);
  return EmbeddingVector{v};
}

const KnowledgeBase& synth_kb() {
  static const auto data = generate_synthetic();
  static const auto kb = synthetic_kb(data);
  return kb;
}

}  // namespace

TEST(Multipath, AgreeingChunkFirstWithFullProvenance) {
  std::vector<Chunk> chunks;
  auto target = fixture::chunk("D", 0, "deliveries of electric vehicles rose", "Deliveries");
  target.summary = "deliveries of electric vehicles";
  chunks.push_back(target);
  for (std::uint32_t i = 1; i < 8; ++i) {
    auto c = fixture::chunk("E", i, "unrelated filler paragraph number " + std::to_string(i), "Other");
    c.summary = "general corporate matters";
    chunks.push_back(c);
  }
  const auto kb = fixture::kb(chunks);
  const auto r = multipath_retrieve("deliveries of electric vehicles", 1, kb);
  ASSERT_FALSE(r.empty());
  EXPECT_EQ(r[0].id, (ChunkId{"D", 0}));
  EXPECT_EQ(r[0].provenance().size(), 3u);
}

TEST(Multipath, DisjointUnionSize) {
  // Sparse hits come from doc S, dense from doc V, metadata from doc M.
  std::vector<Chunk> chunks;
  const auto emb = fixture::embedder();
  const auto q = std::string("zq");
  for (std::uint32_t i = 0; i < 5; ++i) {
    auto c = fixture::chunk("S", i, "zq token " + std::to_string(i));
    c.embedding = at_cos(-0.9, 1 + i);
    chunks.push_back(c);
  }
  const auto qv = emb->embed(q);
  for (std::uint32_t i = 0; i < 5; ++i) {
    auto c = fixture::chunk("V", i, "other words " + std::to_string(i));
    c.embedding = qv;
    chunks.push_back(c);
  }
  for (std::uint32_t i = 0; i < 5; ++i) {
    auto c = fixture::chunk("M", i, "more words " + std::to_string(i));
    std::vector<double> neg(qv.values);
    for (auto& x : neg) x = -x;
    c.embedding = EmbeddingVector{neg};
    c.summary = q;
    chunks.push_back(c);
  }
  for (std::uint32_t i = 0; i < 5; ++i) {
    auto c = fixture::chunk("X", i, "padding words " + std::to_string(i));
    c.embedding = at_cos(-0.9, 10 + i);
    chunks.push_back(c);
  }
  const auto kb = KnowledgeBase::from_chunks(chunks, emb);
  const auto r = multipath_retrieve(q, 5, kb);
  EXPECT_EQ(r.size(), 15u);
  for (const auto& c : r) EXPECT_EQ(c.provenance().size(), 1u);
}

TEST(Multipath, SupersetOfEachPathNoDuplicates) {
  const auto& kb = synth_kb();
  for (const char* q : {"revenue of Norvik Auto in 2023Q2", "permit KX1234", "gross margin outlook",
                        "supply chain risk"}) {
    for (std::size_t k : {1, 5, 10}) {
      const auto r = multipath_retrieve(q, k, kb);
      std::set<ChunkId> ids;
      for (const auto& c : r) EXPECT_TRUE(ids.insert(c.id).second);
      const auto qv = kb.embedder().embed(q);
      for (const auto& h : search_sparse(q, k, kb.sparse(), kb.bm25())) EXPECT_TRUE(ids.count(h.id));
      for (const auto& h : search_dense(qv, k, kb.dense())) EXPECT_TRUE(ids.count(h.id));
      for (const auto& h : search_metadata(qv, k, kb.metadata())) EXPECT_TRUE(ids.count(h.id));
      EXPECT_LE(r.size(), 3 * k);
      for (std::size_t i = 1; i < r.size(); ++i) {
        const auto& a = r[i - 1];
        const auto& b = r[i];
        EXPECT_TRUE(a.path_scores.size() > b.path_scores.size() ||
                    (a.path_scores.size() == b.path_scores.size() &&
                     (a.fused_score > b.fused_score || (a.fused_score == b.fused_score && a.id < b.id))));
      }
    }
  }
  EXPECT_TRUE(multipath_retrieve("x", 0, kb).empty());
}

TEST(Multipath, BudgetRespected) {
  const auto& kb = synth_kb();
  for (std::size_t budget : {3, 5, 10, 20, 40}) {
    const auto r = multipath_at_budget("net income of Norvik Auto", budget, kb);
    EXPECT_LE(r.size(), budget);
    EXPECT_GE(r.size(), 1u);
    const auto bigger = multipath_retrieve("net income of Norvik Auto", budget + 1, kb);
    (void)bigger;
  }
}

TEST(Bundle, ConstructedCosines) {
  std::vector<Chunk> chunks;
  const std::vector<EmbeddingVector> vecs{at_cos(0.2, 1), padded({1.0}), at_cos(0.9, 2), at_cos(0.85, 3),
                                          at_cos(0.95, 4)};
  for (std::uint32_t i = 0; i < vecs.size(); ++i) {
    auto c = fixture::chunk("D", i, "t" + std::to_string(i));
    c.embedding = vecs[i];
    chunks.push_back(c);
  }
  const auto kb = KnowledgeBase::from_chunks(chunks, fixture::embedder());
  const auto b = bundle({"D", 1}, kb, 2, 0.8);
  EXPECT_EQ(b.members, (std::vector<ChunkId>{{"D", 1}, {"D", 2}, {"D", 3}}));
  EXPECT_EQ(bundle({"D", 1}, kb, 0, 0.8).members, (std::vector<ChunkId>{{"D", 1}}));
  EXPECT_EQ(bundle_text(b, kb), "t1 t2 t3");
  EXPECT_THROW(bundle({"D", 99}, kb, 1, 0.8), NotFound);
}

TEST(Bundle, IdenticalNeighbourIncluded) {
  const auto kb = fixture::kb({fixture::chunk("D", 0, "same words here"), fixture::chunk("D", 1, "same words here"),
                               fixture::chunk("E", 2, "same words here")});
  EXPECT_EQ(bundle({"D", 0}, kb, 5, 0.99).members, (std::vector<ChunkId>{{"D", 0}, {"D", 1}}));
}

TEST(Bundle, AuditAndAntiMonotone) {
  const auto& kb = synth_kb();
  const auto cands = multipath_retrieve("operating cash flow of Norvik Auto", 10, kb);
  for (std::size_t k : {0, 1, 2, 4}) {
    std::size_t prev_total = SIZE_MAX;
    for (double tau : {0.0, 0.3, 0.5, 0.7, 0.8, 0.9, 0.99}) {
      const auto bundles = bundle_candidates(cands, kb, k, tau);
      ASSERT_EQ(bundles.size(), cands.size());
      std::size_t total = 0;
      for (std::size_t i = 0; i < bundles.size(); ++i) {
        const auto& b = bundles[i];
        EXPECT_EQ(b.anchor, cands[i].id);
        const auto& a = kb.chunk(b.anchor);
        for (const auto& m : b.members) {
          EXPECT_EQ(m.doc_id, a.id.doc_id);
          EXPECT_LE(std::abs(static_cast<long>(m.position) - static_cast<long>(a.id.position)), static_cast<long>(k));
          if (m != a.id) EXPECT_GT(cosine(*a.embedding, *kb.chunk(m).embedding), tau);
        }
        // Per-anchor brute force.
        std::vector<ChunkId> want;
        for (const auto& c : kb.chunks()) {
          if (c.id.doc_id != a.id.doc_id) continue;
          const long d = static_cast<long>(c.id.position) - static_cast<long>(a.id.position);
          if (std::abs(d) > static_cast<long>(k)) continue;
          if (c.id == a.id || cosine(*a.embedding, *c.embedding) > tau) want.push_back(c.id);
        }
        EXPECT_EQ(b.members, want);
        total += b.members.size();
      }
      EXPECT_LE(total, prev_total);
      prev_total = total;
    }
  }
  EXPECT_TRUE(bundle_candidates({}, kb, 2, 0.8).empty());
}
