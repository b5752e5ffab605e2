#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "finrag/corpus.hpp"
#include "finrag/evaluation.hpp"
#include "finrag/knowledge_base.hpp"
#include "finrag/llm_gateway.hpp"
#include "finrag/query_pipeline.hpp"
#include "finrag/reranker.hpp"

namespace finrag {

// Seeded quarterly-report corpus for one target company, plus labelled
// material for three source companies. Used by tests, benchmarks and the
// `synth` command.

struct SyntheticConfig {
  std::uint64_t seed = 7;
  std::size_t periods = 10;
  std::size_t filler_per_doc = 26;
  std::size_t probes_per_kind = 10;
  std::size_t human_queries = 60;
};

struct SyntheticQuery {
  std::string id;
  std::string text;
  std::vector<ChunkId> relevant;
};

enum class ProbeKind { Lexical, Fuzzy, Section };

struct SyntheticProbe {
  std::string id;
  std::string text;
  ChunkId gold;
  ProbeKind kind = ProbeKind::Lexical;
};

struct SyntheticData {
  std::string company;
  std::vector<std::string> periods;
  std::vector<std::string> metrics;
  std::vector<DocumentRecord> documents;
  /// Chunks of `documents` with section summaries attached; no embeddings.
  std::vector<Chunk> chunks;
  std::vector<TrainingQuadruple> human;
  EntityLexicon lexicon;
  std::vector<SyntheticQuery> train_queries;
  std::vector<SyntheticQuery> eval_queries;
  std::vector<SyntheticProbe> probes;
  std::vector<BankQuestion> bank_questions;
  std::vector<std::string> stop_entities;
  ToolRegistry tools;
  nlohmann::json tools_json;

  /// Oracle annotator: "Yes" exactly for the relevant chunks of every
  /// query, "No" otherwise.
  MockScript annotator_script() const;
  Qrels qrels(std::span<const SyntheticQuery> queries) const;
  /// Chunk text by id string.
  std::optional<std::string> text_of(const std::string& chunk_id) const;

  /// corpus.jsonl, chunks.jsonl, human.jsonl, lexicon.json, annotator.json,
  /// queries_{train,eval}.tsv, qrels_{train,eval}.txt, bank_questions.json,
  /// tools.json.
  void write(const std::string& dir) const;
};

SyntheticData generate_synthetic(const SyntheticConfig& cfg = {});

/// Embeds the chunks and indexes them (no gateway curation).
KnowledgeBase synthetic_kb(const SyntheticData& data, std::shared_ptr<const Embedder> embedder = nullptr);

}  // namespace finrag
