#include "finrag/retrieval.hpp"

#include <algorithm>
#include <future>

#include "finrag/error.hpp"

namespace finrag {

std::string_view to_string(RetrievalPath p) {
  switch (p) {
    case RetrievalPath::Sparse:
      return "sparse";
    case RetrievalPath::Dense:
      return "dense";
    case RetrievalPath::Metadata:
      return "metadata";
  }
  return "sparse";
}

std::vector<RetrievalPath> Candidate::provenance() const {
  std::vector<RetrievalPath> out;
  for (const auto& [path, score] : path_scores) out.push_back(path);
  return out;
}

std::vector<Candidate> multipath_retrieve(std::string_view query, std::size_t k_each,
                                          const KnowledgeBase& kb) {
  if (k_each == 0 || kb.empty()) return {};
  const std::string q(query);

  auto sparse = std::async(std::launch::async, [&] { return search_sparse(q, k_each, kb.sparse(), kb.bm25()); });
  auto vectors = std::async(std::launch::async, [&] {
    const auto qv = kb.embedder().embed(q);
    return std::pair{search_dense(qv, k_each, kb.dense()), search_metadata(qv, k_each, kb.metadata())};
  });
  const auto sparse_hits = sparse.get();
  const auto [dense_hits, meta_hits] = vectors.get();

  std::map<ChunkId, Candidate> merged;
  const auto absorb = [&](RetrievalPath path, const std::vector<ScoredChunk>& hits) {
    if (hits.empty()) return;
    double lo = hits.front().score;
    double hi = hits.front().score;
    for (const auto& h : hits) {
      lo = std::min(lo, h.score);
      hi = std::max(hi, h.score);
    }
    for (const auto& h : hits) {
      auto& c = merged[h.id];
      c.id = h.id;
      c.path_scores[path] = h.score;
      // A path whose hits all tie contributes full weight.
      const double normalized = hi > lo ? (h.score - lo) / (hi - lo) : 1.0;
      c.fused_score = std::max(c.fused_score, normalized);
    }
  };
  absorb(RetrievalPath::Sparse, sparse_hits);
  absorb(RetrievalPath::Dense, dense_hits);
  absorb(RetrievalPath::Metadata, meta_hits);

  std::vector<Candidate> out;
  out.reserve(merged.size());
  for (auto& [id, c] : merged) out.push_back(std::move(c));
  std::sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) {
    if (a.path_scores.size() != b.path_scores.size()) return a.path_scores.size() > b.path_scores.size();
    if (a.fused_score != b.fused_score) return a.fused_score > b.fused_score;
    return a.id < b.id;
  });
  return out;
}

std::vector<Candidate> multipath_at_budget(std::string_view query, std::size_t budget,
                                           const KnowledgeBase& kb) {
  if (budget == 0 || kb.empty()) return {};
  std::size_t lo = 1;
  std::size_t hi = budget;
  auto best = multipath_retrieve(query, 1, kb);
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo + 1) / 2;
    auto c = multipath_retrieve(query, mid, kb);
    if (c.size() <= budget) {
      lo = mid;
      best = std::move(c);
    } else {
      hi = mid - 1;
    }
  }
  return best;
}

Bundle bundle(const ChunkId& anchor, const KnowledgeBase& kb, std::size_t k, double tau_bundle) {
  const Chunk& a = kb.chunk(anchor);
  if (!a.embedding) throw InvalidArgument("bundle: anchor " + anchor.str() + " has no embedding");
  Bundle b;
  b.anchor = anchor;
  const auto pos = static_cast<std::int64_t>(anchor.position);
  const auto window = static_cast<std::int64_t>(k);
  for (std::int64_t p = pos - window; p <= pos + window; ++p) {
    if (p == pos) {
      b.members.push_back(anchor);
      continue;
    }
    const Chunk* n = kb.at_position(anchor.doc_id, p);
    if (!n || !n->embedding) continue;
    if (cosine(*a.embedding, *n->embedding) > tau_bundle) b.members.push_back(n->id);
  }
  return b;
}

std::vector<Bundle> bundle_candidates(std::span<const Candidate> candidates, const KnowledgeBase& kb,
                                      std::size_t k, double tau_bundle) {
  std::vector<Bundle> out;
  out.reserve(candidates.size());
  for (const auto& c : candidates) out.push_back(bundle(c.id, kb, k, tau_bundle));
  return out;
}

std::string bundle_text(const Bundle& b, const KnowledgeBase& kb) {
  std::string out;
  for (const auto& id : b.members) {
    if (!out.empty()) out.push_back(' ');
    out += kb.chunk(id).text;
  }
  return out;
}

}  // namespace finrag
