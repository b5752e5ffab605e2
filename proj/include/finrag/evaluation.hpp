#pragma once

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "finrag/embedding.hpp"

namespace finrag {

/// query id -> chunk id -> grade (0 or 1).
using Qrels = std::map<std::string, std::map<std::string, int>>;

struct RunEntry {
  std::string chunk_id;
  double score = 0.0;
  bool operator==(const RunEntry&) const = default;
};

/// query id -> ranked chunks, best first.
using RunResult = std::map<std::string, std::vector<RunEntry>>;

/// Lines `query_id chunk_id grade` (a 4-column TREC line with an iteration
/// field is also accepted). Grades other than 0/1 throw FormatError.
Qrels read_qrels(std::istream& in);
Qrels read_qrels_file(const std::string& path);
void write_qrels(std::ostream& out, const Qrels& qrels);

/// Lines `query_id chunk_id rank score run_label`, ordered by rank within a
/// query. The label of the first line is returned through `label`.
RunResult read_run(std::istream& in, std::string* label = nullptr);
RunResult read_run_file(const std::string& path, std::string* label = nullptr);
void write_run(std::ostream& out, const RunResult& run, const std::string& label);
void write_run_file(const std::string& path, const RunResult& run, const std::string& label);

/// Throws InvalidArgument on a duplicate chunk or an increasing score.
void validate_run(const RunResult& run);

/// Queries with at least one relevant chunk; the others are left out of
/// every mean. A query missing from the run counts as an empty ranking.
std::vector<std::string> evaluable_queries(const Qrels& qrels);

double ndcg_at_k(const RunResult& run, const Qrels& qrels, std::size_t k);
double mrr_at_k(const RunResult& run, const Qrels& qrels, std::size_t k);
double precision_at_k(const RunResult& run, const Qrels& qrels, std::size_t k);
double recall_at_k(const RunResult& run, const Qrels& qrels, std::size_t k);

struct MetricSet {
  double ndcg = 0.0;
  double mrr = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  bool operator==(const MetricSet&) const = default;
};

/// All four at once. Throws InvalidArgument("no evaluable queries").
MetricSet evaluate(const RunResult& run, const Qrels& qrels, std::size_t k);

using ChunkTextLookup = std::function<std::optional<std::string>(const std::string& chunk_id)>;

/// Fraction of gold queries with a top-k chunk whose text equals a gold
/// text or whose cosine with one is >= tau_hit. Run queries absent from
/// the gold map are skipped with a warning.
double hit_rate(const RunResult& run, const std::map<std::string, std::vector<std::string>>& gold,
                const ChunkTextLookup& text_of, const Embedder& embedder, std::size_t k, double tau_hit,
                std::vector<std::string>* warnings = nullptr);

struct ReportRow {
  std::string label;
  std::size_t k = 0;
  MetricSet metrics;
};

struct Report {
  std::string baseline;
  std::vector<ReportRow> rows;

  /// Row for (label, k); throws NotFound.
  const ReportRow& row(const std::string& label, std::size_t k) const;
  /// metrics(label, k) - metrics(baseline, k).
  MetricSet delta(const std::string& label, std::size_t k) const;

  /// Aligned table, then deltas, then one `ROW` line per row with full
  /// precision. LLM-judged columns are printed as n/a.
  std::string to_text() const;
  /// Reads the `BASELINE` and `ROW` lines back.
  static Report parse(const std::string& text);
};

/// Every run at every k; the baseline defaults to the first run.
Report compare_runs(std::span<const std::pair<std::string, RunResult>> runs, const Qrels& qrels,
                    std::span<const std::size_t> ks, const std::string& baseline = {});

}  // namespace finrag
