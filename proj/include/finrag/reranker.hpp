#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "finrag/embedding.hpp"
#include "finrag/knowledge_base.hpp"
#include "finrag/llm_gateway.hpp"

namespace finrag {

// ---------------------------------------------------------------------------
// Features and scoring
// ---------------------------------------------------------------------------

/// Relevance features for one (query, candidate) pair:
///   [0] embedding cosine
///   [1] unigram-set Jaccard
///   [2] bigram-set Jaccard
///   [3] BM25 of the candidate for the query, computed over the candidate
///       set and min-max normalized within it (0 when all tie)
///   [4] length ratio |c| / (|q| + |c|) in terms
///   [5] bias, always 1
inline constexpr std::size_t kFeatureDim = 6;
using FeatureVector = std::array<double, kFeatureDim>;

/// Computes features for a query against a candidate set, caching text
/// embeddings. Thread-safe.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(const Embedder& embedder) : embedder_(embedder) {}

  std::vector<FeatureVector> extract(std::string_view query, std::span<const std::string> candidates) const;

 private:
  EmbeddingVector cached_embed(const std::string& text) const;

  const Embedder& embedder_;
  mutable std::mutex mutex_;
  mutable std::unordered_map<std::string, EmbeddingVector> cache_;
};

/// Two-head linear scorer: z_yes = w_yes·φ, z_no = w_no·φ.
struct RerankModel {
  std::vector<double> w_yes;
  std::vector<double> w_no;
  std::string version = "zero";

  /// All-zero weights; scores 0.5 everywhere.
  static RerankModel zeros();
  /// Untuned starting point that ranks by embedding similarity alone.
  static RerankModel base();

  double z_yes(const FeatureVector& phi) const;
  double z_no(const FeatureVector& phi) const;
  double logit_diff(const FeatureVector& phi) const { return z_yes(phi) - z_no(phi); }

  void validate() const;
  bool operator==(const RerankModel&) const = default;

  void save(std::ostream& out) const;
  void save_file(const std::string& path) const;
  static RerankModel load(std::istream& in);
  static RerankModel load_file(const std::string& path);
};

inline constexpr std::string_view kModelMagic = "FINRAG-RERANK";
inline constexpr int kModelFormatVersion = 1;

double sigmoid(double x);

/// P(relevant | q, c) = σ(z_yes − z_no). Throws InvalidArgument on a
/// non-finite feature.
double score(const FeatureVector& phi, const RerankModel& model);

/// Scores one pair (the candidate set is {c}, so the BM25 feature is 0).
double score(std::string_view q, const std::string& c, const RerankModel& model,
             const FeatureExtractor& features);

/// Scores every candidate with features computed over the whole set.
std::vector<double> score_candidates(std::string_view q, std::span<const std::string> candidates,
                                     const RerankModel& model, const FeatureExtractor& features);

// ---------------------------------------------------------------------------
// Contrastive objective
// ---------------------------------------------------------------------------

/// −log(e^{s+} / (e^{s+} + Σ e^{s−})) via log-sum-exp. Throws
/// InvalidArgument when negatives are empty or any logit is non-finite.
double contrastive_loss(double logit_pos, std::span<const double> logits_neg);

struct LossGradient {
  double loss = 0.0;
  std::vector<double> grad_yes;
  std::vector<double> grad_no;
};

/// Loss of one group (positive first) under the model, with its analytic
/// gradient with respect to both heads.
LossGradient contrastive_gradient(const RerankModel& model, const FeatureVector& positive,
                                  std::span<const FeatureVector> negatives);

struct TrainingQuadruple {
  std::string q;
  std::vector<std::string> positives;
  std::vector<std::string> negatives;
  std::string prompt;
};

std::string_view default_rerank_prompt();

std::vector<TrainingQuadruple> read_quadruples(std::istream& in);
std::vector<TrainingQuadruple> read_quadruples_file(const std::string& path);
void write_quadruples(std::ostream& out, std::span<const TrainingQuadruple> quads);
void write_quadruples_file(const std::string& path, std::span<const TrainingQuadruple> quads);

struct TrainConfig {
  double learning_rate = 1e-2;
  std::size_t epochs = 100;
  /// Negatives per step (group size minus the one positive).
  std::size_t negatives_per_step = 7;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainResult {
  RerankModel model;
  /// Mean step loss per epoch, measured before each update.
  std::vector<double> epoch_loss;
};

/// Seeded SGD over the quadruples. Each epoch visits every trainable
/// quadruple once in shuffled order, sampling one positive and K negatives
/// (when fewer than K exist, all are used and repeated cyclically).
/// Quadruples without a positive or without any negative are skipped;
/// throws InvalidArgument when none remain.
TrainResult train(const RerankModel& model, std::span<const TrainingQuadruple> data,
                  const TrainConfig& cfg, const FeatureExtractor& features);

// ---------------------------------------------------------------------------
// Entity abstraction (Stage 1 augmentation)
// ---------------------------------------------------------------------------

enum class AbstractionStrategy { ProductPerson, CompanyName, Complete };

std::string_view to_string(AbstractionStrategy s);
AbstractionStrategy parse_strategy(std::string_view s);

/// companies[0] is the target company for CompanyName abstraction.
struct EntityLexicon {
  std::vector<std::string> companies;
  std::vector<std::string> products;
  std::vector<std::string> persons;
  std::vector<std::string> competitors;

  /// Throws InvalidArgument when lists overlap or the strategy's lists are
  /// empty.
  void validate(AbstractionStrategy strategy) const;

  static EntityLexicon from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

/// Masks entity mentions across q, positives, and negatives with one
/// consistent mapping. Matching is longest-first, case-insensitive, and
/// word-boundary anchored; text outside matches is untouched.
TrainingQuadruple abstract_entities(const TrainingQuadruple& quad, AbstractionStrategy strategy,
                                    const EntityLexicon& lexicon, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Stage 2 data: automated annotation and negative sampling
// ---------------------------------------------------------------------------

struct LabeledChunk {
  std::string id;
  std::string text;
  bool operator==(const LabeledChunk&) const = default;
};

struct AnnotationResult {
  std::vector<LabeledChunk> positives;
  std::vector<LabeledChunk> hard_negatives;
  std::vector<std::string> warnings;
};

/// Parses the strict two-line reply ("Relevant: Yes|No" then "Reason: ...").
std::optional<bool> parse_annotation(std::string_view reply);

/// One gateway call per chunk. Replies that fail parse_annotation, and
/// gateway errors, leave the chunk in neither set and add a warning.
AnnotationResult auto_annotate(std::string_view q, std::span<const LabeledChunk> retrieved,
                               LlmGateway& annotator, const std::string& model = "gpt-4o");

/// n_hard followed by a seeded uniform sample (without replacement) of
/// count_random corpus chunks that are neither positives nor hard
/// negatives. A short corpus yields what is available plus a warning.
std::vector<LabeledChunk> sample_negatives(std::span<const LabeledChunk> n_hard,
                                           std::span<const LabeledChunk> corpus,
                                           std::span<const LabeledChunk> positives,
                                           std::size_t count_random, std::uint64_t seed,
                                           std::vector<std::string>* warnings = nullptr);

// ---------------------------------------------------------------------------
// Two-stage domain-to-entity adaptation
// ---------------------------------------------------------------------------

struct TwoStageConfig {
  TrainConfig stage1;
  TrainConfig stage2;
  std::size_t retrieve_k_each = 10;
  std::size_t random_negatives = 8;
  std::string annotate_model = "gpt-4o";
  std::uint64_t seed = 0;
  std::size_t jobs = 4;
  /// Where to persist the intermediate general model; empty to skip.
  std::string general_model_path;
};

struct Stage2Dataset {
  std::vector<TrainingQuadruple> quadruples;
  std::vector<std::string> warnings;
};

/// Abstracts every human quadruple with the strategy and trains from base.
TrainResult train_general(const RerankModel& base, std::span<const TrainingQuadruple> d_human,
                          AbstractionStrategy strategy, const EntityLexicon& lexicon,
                          const TwoStageConfig& cfg, const FeatureExtractor& features);

/// Retrieves for each target query, annotates, adds random negatives.
/// Queries with no positive are dropped with a warning.
Stage2Dataset build_stage2_dataset(std::span<const std::string> q_target, const KnowledgeBase& kb,
                                   LlmGateway& annotator, const TwoStageConfig& cfg);

/// Trains the given model on the automatically annotated set. Passing the
/// base model here gives the Stage-2-only control.
TrainResult train_specialized(const RerankModel& model, std::span<const TrainingQuadruple> d_auto,
                              const TwoStageConfig& cfg, const FeatureExtractor& features);

struct TwoStageResult {
  RerankModel general;
  RerankModel specialized;
  std::vector<double> stage1_loss;
  std::vector<double> stage2_loss;
  std::size_t augmented_examples = 0;
  std::size_t auto_examples = 0;
  std::vector<std::string> warnings;
};

/// Stage 1 then Stage 2. Throws InvalidArgument when d_human or q_target
/// is empty.
TwoStageResult two_stage_pipeline(const RerankModel& base, std::span<const TrainingQuadruple> d_human,
                                  AbstractionStrategy strategy, const EntityLexicon& lexicon,
                                  std::span<const std::string> q_target, const KnowledgeBase& kb_target,
                                  LlmGateway& annotator, const TwoStageConfig& cfg);

}  // namespace finrag
