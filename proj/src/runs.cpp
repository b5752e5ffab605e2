#include "finrag/runs.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <numeric>

#include "finrag/error.hpp"
#include "finrag/retrieval.hpp"
#include "finrag/text.hpp"

namespace finrag {

std::vector<QueryText> read_queries(std::istream& in) {
  std::vector<QueryText> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (normalize_whitespace(line).empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size()) {
      throw FormatError("queries line " + std::to_string(lineno) + ": expected id<TAB>text");
    }
    out.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return out;
}

std::vector<QueryText> read_queries_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return read_queries(in);
}

RunResult retrieve_run(std::span<const QueryText> queries, const KnowledgeBase& kb, std::size_t k_each,
                       const RerankModel* model) {
  RunResult run;
  const FeatureExtractor features(kb.embedder());
  for (const auto& q : queries) {
    const auto cands = multipath_retrieve(q.text, k_each, kb);
    auto& list = run[q.id];
    if (!model) {
      for (const auto& c : cands) list.push_back({c.id.str(), c.fused_score});
      continue;
    }
    std::vector<std::string> texts;
    texts.reserve(cands.size());
    for (const auto& c : cands) texts.push_back(kb.chunk(c.id).text);
    const auto scores = score_candidates(q.text, texts, *model, features);
    std::vector<std::size_t> order(cands.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    for (auto i : order) list.push_back({cands[i].id.str(), scores[i]});
  }
  return run;
}

}  // namespace finrag
