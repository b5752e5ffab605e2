#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "finrag/embedding.hpp"
#include "finrag/index.hpp"

namespace finrag {

struct CanonicalQuestion {
  std::string text;  // normalized
  EmbeddingVector embedding;
  std::string subject;
};

struct Cell {
  std::string value;
  std::vector<std::string> source_chunk_ids;
  bool verified = false;
  bool operator==(const Cell&) const = default;
};

struct MatchThresholds {
  double tau_seq = 0.85;
  double tau_bm25 = 0.6;
  double tau_sem = 0.9;

  /// Each threshold must lie in (0, 1].
  void validate() const;
};

/// Canonical questions x fiscal periods. Periods are ordered oldest first.
/// Not internally synchronized; callers serialize writers.
class MemoryBank {
 public:
  explicit MemoryBank(std::shared_ptr<const Embedder> embedder = nullptr);

  /// Normalizes and embeds; throws InvalidArgument on a duplicate or empty
  /// question. Returns the row index.
  std::size_t add_question(std::string_view text, std::string subject = {});
  /// Appends a period column; duplicates throw.
  std::size_t add_period(std::string_view label);

  void set_stop_entities(std::vector<std::string> entities) { stop_entities_ = std::move(entities); }
  const std::vector<std::string>& stop_entities() const { return stop_entities_; }

  void set_cell(std::size_t question, std::size_t period, Cell cell);
  const Cell* cell(std::size_t question, std::size_t period) const;
  /// Marks a populated cell verified, optionally replacing its value.
  /// Throws NotFound when the cell is empty or out of range.
  void verify(std::size_t question, std::size_t period, std::optional<std::string> value = std::nullopt);

  std::optional<std::size_t> find_question(std::string_view text) const;
  std::optional<std::size_t> find_period(std::string_view label) const;

  const std::vector<CanonicalQuestion>& questions() const { return questions_; }
  const std::vector<std::string>& periods() const { return periods_; }
  const std::map<std::pair<std::size_t, std::size_t>, Cell>& cells() const { return cells_; }
  std::size_t size() const { return questions_.size(); }
  bool empty() const { return questions_.empty(); }

  /// Lowercase, punctuation to spaces, stop entities and period labels
  /// removed, whitespace collapsed.
  std::string normalize(std::string_view q) const;
  /// Latest period whose label occurs in q (word-anchored), if any.
  std::optional<std::size_t> detect_period(std::string_view q) const;

  const Embedder& embedder() const { return *embedder_; }
  const InvertedIndex& question_index() const { return index_; }
  /// BM25 of each question against itself.
  const std::vector<double>& self_scores() const { return self_scores_; }

  nlohmann::json to_json() const;
  static MemoryBank from_json(const nlohmann::json& j, std::shared_ptr<const Embedder> embedder = nullptr);
  void save(const std::string& path) const;
  static MemoryBank load(const std::string& path, std::shared_ptr<const Embedder> embedder = nullptr);

 private:
  void reindex();

  std::shared_ptr<const Embedder> embedder_;
  std::vector<CanonicalQuestion> questions_;
  std::vector<std::string> periods_;
  std::vector<std::string> stop_entities_;
  std::map<std::pair<std::size_t, std::size_t>, Cell> cells_;
  InvertedIndex index_;
  std::vector<double> self_scores_;
};

/// Ratcliff-Obershelp ratio 2M/(|a|+|b|), symmetrized by taking the larger
/// of the two argument orders. Throws InvalidArgument on an empty string.
double subseq_similarity(std::string_view a, std::string_view b);

/// Per-question BM25 divided by the question's self-score, clamped to [0,1].
std::vector<double> bm25_match(std::string_view q, const MemoryBank& bank);
/// Per-question cosine of embed(q) with the question embedding.
std::vector<double> semantic_match(std::string_view q, const MemoryBank& bank);

struct MatchScores {
  double seq = 0.0;
  double bm25 = 0.0;
  double sem = 0.0;
  double best() const;
};

struct BankMatch {
  std::size_t question = 0;
  MatchScores scores;
};

/// True iff any score exceeds its threshold (strictly).
bool fires(const MatchScores& s, const MatchThresholds& th);

/// Scores for every question after normalizing q.
std::vector<MatchScores> match_scores(std::string_view q, const MemoryBank& bank);

/// Best firing question by max component score, ties to the lowest index.
std::optional<BankMatch> match(std::string_view q, const MemoryBank& bank, const MatchThresholds& th = {});

struct BankAnswer {
  std::string question;
  std::string period;
  std::string value;
  std::vector<std::string> sources;
  MatchScores scores;
  nlohmann::json to_json() const;
};

struct LookupResult {
  std::optional<BankAnswer> answer;
  std::string miss_reason;  // "no match", "unverified", "unknown period", "empty bank"
  bool hit() const { return answer.has_value(); }
};

/// Serves the verified cell of the matched question. Period comes from the
/// argument, else from the query text, else the latest column.
LookupResult lookup(std::string_view q, const std::optional<std::string>& period, const MemoryBank& bank,
                    const MatchThresholds& th = {});

}  // namespace finrag
