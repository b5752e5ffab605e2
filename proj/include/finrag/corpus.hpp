#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "finrag/embedding.hpp"

namespace finrag {

enum class Modality { Text, Table, Figure };

std::string_view to_string(Modality m);
/// Accepts "text", "table", "figure" (any case).
Modality parse_modality(std::string_view s);

struct Block {
  std::string section_path;
  Modality modality = Modality::Text;
  std::string text;
};

/// One pre-extracted filing. Blocks keep source order.
struct DocumentRecord {
  std::string doc_id;
  std::string title;
  std::string filing_type;
  std::string period;
  std::vector<Block> sections;
};

/// (doc_id, ordinal position). Ordered by doc_id, then numeric position;
/// this is the tie-break order used by every ranking surface.
struct ChunkId {
  std::string doc_id;
  std::uint32_t position = 0;

  auto operator<=>(const ChunkId&) const = default;
  bool operator==(const ChunkId&) const = default;

  /// "doc_id#position"
  std::string str() const;
  static ChunkId parse(std::string_view s);
};

struct Chunk {
  ChunkId id;
  Modality modality = Modality::Text;
  std::string text;
  std::string section_path;
  std::size_t word_count = 0;
  std::optional<std::string> summary;
  std::optional<EmbeddingVector> embedding;
  /// Set when co-reference resolution failed and the original text was kept.
  bool unresolved = false;
};

inline constexpr std::size_t kDefaultChunkLength = 200;

/// Splits every Text block into non-overlapping windows of chunk_length
/// words; Table and Figure blocks become one chunk each (they are
/// length-normalized after textual transformation). Chunks never span
/// blocks. Positions run 0.. consecutively across the document.
std::vector<Chunk> chunk_document(const DocumentRecord& doc,
                                  std::size_t chunk_length = kDefaultChunkLength);

/// Splits text into chunk_length-word pieces (last one may be shorter).
std::vector<std::string> split_fixed_length(std::string_view text, std::size_t chunk_length);

// Line-delimited JSON records.
std::vector<DocumentRecord> read_corpus(std::istream& in);
std::vector<DocumentRecord> read_corpus_file(const std::string& path);
void write_corpus(std::ostream& out, const std::vector<DocumentRecord>& docs);

std::vector<Chunk> read_chunks(std::istream& in);
std::vector<Chunk> read_chunks_file(const std::string& path);
void write_chunks(std::ostream& out, const std::vector<Chunk>& chunks);
void write_chunks_file(const std::string& path, const std::vector<Chunk>& chunks);

}  // namespace finrag
