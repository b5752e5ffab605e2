#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "finrag/corpus.hpp"
#include "finrag/embedding.hpp"

namespace finrag {

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;

  /// Throws InvalidArgument unless k1 > 0 and 0 <= b <= 1.
  void validate() const;
  bool operator==(const Bm25Params&) const = default;
};

struct Posting {
  ChunkId id;
  std::uint32_t tf = 0;
  bool operator==(const Posting&) const = default;
};

struct ScoredChunk {
  ChunkId id;
  double score = 0.0;
  bool operator==(const ScoredChunk&) const = default;
};

/// Orders by score descending, then ChunkId ascending.
bool ranks_before(const ScoredChunk& a, const ScoredChunk& b);

/// BM25 inverted index. Built once with add(), then read-only.
class InvertedIndex {
 public:
  /// Adds a chunk; its length is the number of lexical terms. Re-adding an
  /// id throws.
  void add(const ChunkId& id, std::string_view text);

  std::size_t size() const { return doc_lengths_.size(); }
  double avg_doc_length() const;
  std::size_t document_frequency(const std::string& term) const;
  std::uint32_t term_frequency(const std::string& term, const ChunkId& id) const;
  bool contains(const ChunkId& id) const { return doc_lengths_.contains(id); }

  /// ln(1 + (N - df + 0.5) / (df + 0.5)); always non-negative.
  double idf(const std::string& term) const;

  const std::map<std::string, std::vector<Posting>>& postings() const { return postings_; }
  const std::map<ChunkId, std::uint32_t>& doc_lengths() const { return doc_lengths_; }

  void save(std::ostream& out, const Bm25Params& params) const;
  /// Validates the header and the structural invariants; returns the stored
  /// params through `params`.
  static InvertedIndex load(std::istream& in, Bm25Params* params = nullptr);

 private:
  std::map<std::string, std::vector<Posting>> postings_;
  std::map<ChunkId, std::uint32_t> doc_lengths_;
  std::uint64_t total_length_ = 0;
};

/// Σ_t idf(t) · tf·(k1+1) / (tf + k1·(1 − b + b·len/avgdl)); repeated
/// query terms contribute once per occurrence. Throws NotFound for an id
/// that is not indexed.
double bm25_score(std::span<const std::string> query_terms, const ChunkId& id,
                  const InvertedIndex& idx, const Bm25Params& p);

/// Exact top-k by BM25 (zero-score chunks included when k exceeds the
/// number of matching chunks), ties by ascending id.
std::vector<ScoredChunk> search_sparse(std::string_view query, std::size_t k,
                                       const InvertedIndex& idx, const Bm25Params& p);

/// Exact dense store keyed by chunk id; all vectors share one dimension.
class VectorIndex {
 public:
  VectorIndex() = default;
  explicit VectorIndex(std::size_t dim) : dim_(dim) {}

  /// Throws on dimension mismatch or duplicate id.
  void add(const ChunkId& id, EmbeddingVector v);

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return entries_.size(); }
  bool contains(const ChunkId& id) const { return entries_.contains(id); }
  const EmbeddingVector& at(const ChunkId& id) const;
  const std::map<ChunkId, EmbeddingVector>& entries() const { return entries_; }

  void save(std::ostream& out, std::string_view magic) const;
  static VectorIndex load(std::istream& in, std::string_view magic);

 private:
  std::size_t dim_ = 0;
  std::map<ChunkId, EmbeddingVector> entries_;
};

inline constexpr std::string_view kSparseMagic = "FINRAG-SPARSE";
inline constexpr std::string_view kDenseMagic = "FINRAG-DENSE";
inline constexpr std::string_view kMetadataMagic = "FINRAG-META";
inline constexpr int kIndexFormatVersion = 1;

/// Exact top-k by cosine, ties by ascending id. Throws on dim mismatch
/// (an empty index accepts any query).
std::vector<ScoredChunk> search_dense(const EmbeddingVector& query, std::size_t k,
                                      const VectorIndex& idx);

/// Same contract as search_dense, over the section-summary index. Chunks
/// in one section share a vector, so a matching section surfaces as a
/// contiguous id-ordered run.
std::vector<ScoredChunk> search_metadata(const EmbeddingVector& query, std::size_t k,
                                         const VectorIndex& meta_idx);

}  // namespace finrag
