#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "finrag/knowledge_base.hpp"

namespace finrag {

enum class RetrievalPath { Sparse, Dense, Metadata };

std::string_view to_string(RetrievalPath p);

/// A chunk surfaced by one or more retrieval paths. The provenance set is
/// the key set of path_scores.
struct Candidate {
  ChunkId id;
  std::map<RetrievalPath, double> path_scores;
  /// Max over paths of the per-path min-max normalized score.
  double fused_score = 0.0;

  std::vector<RetrievalPath> provenance() const;
};

/// Union of the top-k_each results of the sparse, dense, and metadata
/// paths (run concurrently). One candidate per chunk, ordered by
/// provenance count desc, fused score desc, chunk id asc.
std::vector<Candidate> multipath_retrieve(std::string_view query, std::size_t k_each,
                                          const KnowledgeBase& kb);

/// multipath_retrieve with the largest k_each whose union stays within
/// `budget` unique chunks (k_each >= 1, so up to three chunks even when the
/// budget is smaller).
std::vector<Candidate> multipath_at_budget(std::string_view query, std::size_t budget,
                                           const KnowledgeBase& kb);

/// A retrieved chunk expanded with similar neighbours from its document.
struct Bundle {
  ChunkId anchor;
  std::vector<ChunkId> members;  // position order, anchor included
};

/// Scans positions anchor-k..anchor+k (same document) and adds a neighbour
/// iff cosine(anchor embedding, neighbour embedding) > tau_bundle. Throws
/// NotFound for an unknown anchor.
Bundle bundle(const ChunkId& anchor, const KnowledgeBase& kb, std::size_t k, double tau_bundle);

/// bundle() per candidate, candidate order preserved; bundles may overlap.
std::vector<Bundle> bundle_candidates(std::span<const Candidate> candidates, const KnowledgeBase& kb,
                                      std::size_t k, double tau_bundle);

/// Member texts in position order, joined by single spaces.
std::string bundle_text(const Bundle& b, const KnowledgeBase& kb);

}  // namespace finrag
