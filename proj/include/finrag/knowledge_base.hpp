#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "finrag/corpus.hpp"
#include "finrag/embedding.hpp"
#include "finrag/index.hpp"

namespace finrag {

/// Curated chunk store plus its sparse, dense, and metadata indexes.
/// Immutable once built; safe for concurrent readers.
class KnowledgeBase {
 public:
  KnowledgeBase();

  /// Indexes already-curated chunks. Every chunk must carry an embedding of
  /// the embedder's dimension; chunks with a summary enter the metadata
  /// index under the summary's embedding. The three indexes build in
  /// parallel.
  static KnowledgeBase from_chunks(std::vector<Chunk> chunks,
                                   std::shared_ptr<const Embedder> embedder,
                                   Bm25Params bm25 = {});

  std::size_t size() const { return chunks_.size(); }
  bool empty() const { return chunks_.empty(); }
  const std::vector<Chunk>& chunks() const { return chunks_; }

  const Chunk& chunk(const ChunkId& id) const;
  const Chunk* find(const ChunkId& id) const;
  /// Chunk at (doc_id, position), if it survived curation.
  const Chunk* at_position(const std::string& doc_id, std::int64_t position) const;

  const InvertedIndex& sparse() const { return sparse_; }
  const VectorIndex& dense() const { return dense_; }
  const VectorIndex& metadata() const { return metadata_; }
  const Bm25Params& bm25() const { return bm25_; }
  const Embedder& embedder() const { return *embedder_; }
  std::shared_ptr<const Embedder> embedder_ptr() const { return embedder_; }

  /// Writes chunks.jsonl, sparse.idx, dense.idx, meta.idx, kb.json.
  void save(const std::string& dir) const;
  /// Loads a saved directory. The embedder is reconstructed from kb.json
  /// unless one is supplied.
  static KnowledgeBase load(const std::string& dir,
                            std::shared_ptr<const Embedder> embedder = nullptr);

 private:
  std::vector<Chunk> chunks_;
  std::map<ChunkId, std::size_t> by_id_;
  InvertedIndex sparse_;
  VectorIndex dense_;
  VectorIndex metadata_;
  Bm25Params bm25_;
  std::shared_ptr<const Embedder> embedder_;
};

}  // namespace finrag
