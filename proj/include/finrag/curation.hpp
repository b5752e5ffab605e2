#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "finrag/corpus.hpp"
#include "finrag/error.hpp"
#include "finrag/knowledge_base.hpp"
#include "finrag/llm_gateway.hpp"

namespace finrag {

struct CurationConfig {
  double tau_sim = 0.95;
  std::size_t chunk_length = kDefaultChunkLength;
  std::size_t jobs = 4;
  ModelSlots models;

  void validate() const;
};

/// Error for a single chunk; the build pipeline logs and skips it.
class ChunkError : public Error {
 public:
  ChunkError(const ChunkId& id, const std::string& what)
      : Error(id.str() + ": " + what), id_(id) {}
  const ChunkId& id() const { return id_; }

 private:
  ChunkId id_;
};

/// Rewrites a Table/Figure chunk as Text via the gateway. Output longer
/// than chunk_length is re-split; all pieces keep the input id and section
/// (build_knowledge_base renumbers positions afterwards). Throws
/// InvalidArgument for Text input and ChunkError on gateway failure.
std::vector<Chunk> transform_nontext(const Chunk& chunk, LlmGateway& gateway,
                                     const CurationConfig& cfg = {});

/// Single forward pass: chunk j is dropped iff its cosine with some
/// already-retained earlier chunk exceeds tau_sim. Throws InvalidArgument
/// naming the first chunk without an embedding.
std::vector<Chunk> deduplicate(std::span<const Chunk> chunks, double tau_sim);

/// Gateway rewrite with pronouns resolved. On gateway failure the original
/// chunk comes back with `unresolved` set.
Chunk resolve_coreferences(const Chunk& chunk, const std::string& section_context,
                           LlmGateway& gateway, const ModelSlots& models = {});

/// One summary for a section. Throws InvalidArgument for an empty list or
/// mixed section paths.
std::string generate_section_summary(std::span<const Chunk> section_chunks, LlmGateway& gateway,
                                     const ModelSlots& models = {});

struct CurationReport {
  std::size_t documents = 0;
  std::size_t raw_chunks = 0;
  std::size_t transformed = 0;
  std::size_t skipped = 0;
  std::size_t unresolved = 0;
  std::size_t duplicates_removed = 0;
  std::size_t final_chunks = 0;
  std::vector<std::string> warnings;
};

/// transform -> renumber -> resolve co-references -> embed -> deduplicate
/// -> attach section summaries. Per-document work runs on cfg.jobs threads;
/// deduplication is a sequential pass over the merged, order-stable list.
std::vector<Chunk> curate_chunks(std::vector<Chunk> raw, const CurationConfig& cfg,
                                 LlmGateway& gateway, const Embedder& embedder,
                                 CurationReport* report = nullptr);

/// Full build: chunk_document per document, curate_chunks, then index.
KnowledgeBase build_knowledge_base(std::span<const DocumentRecord> docs, const CurationConfig& cfg,
                                   LlmGateway& gateway,
                                   std::shared_ptr<const Embedder> embedder = nullptr,
                                   CurationReport* report = nullptr);

}  // namespace finrag
