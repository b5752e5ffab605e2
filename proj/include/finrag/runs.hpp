#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "finrag/evaluation.hpp"
#include "finrag/knowledge_base.hpp"
#include "finrag/reranker.hpp"

namespace finrag {

struct QueryText {
  std::string id;
  std::string text;
};

/// `id<TAB>text` per line; blank lines are skipped.
std::vector<QueryText> read_queries(std::istream& in);
std::vector<QueryText> read_queries_file(const std::string& path);

/// Multi-path candidates per query, re-scored by `model` when given
/// (stable on ties), otherwise in fused order with the fused score.
RunResult retrieve_run(std::span<const QueryText> queries, const KnowledgeBase& kb, std::size_t k_each,
                       const RerankModel* model = nullptr);

}  // namespace finrag
