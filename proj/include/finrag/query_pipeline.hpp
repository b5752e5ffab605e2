#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "finrag/knowledge_base.hpp"
#include "finrag/llm_gateway.hpp"
#include "finrag/memory_bank.hpp"
#include "finrag/reranker.hpp"
#include "finrag/retrieval.hpp"

namespace finrag {

enum class Route { MemoryBank, Tool, DeepRetrieval, Direct };

std::string_view to_string(Route r);
/// Accepts the canonical names case-insensitively (also "memory_bank",
/// "deep_retrieval").
std::optional<Route> parse_route(std::string_view s);

struct ConversationTurn {
  std::string role;  // "user" or "assistant"
  std::string text;
  std::int64_t timestamp_ms = 0;
};

struct SubQuery {
  std::string text;
  Route route = Route::DeepRetrieval;
  bool operator==(const SubQuery&) const = default;
};

// ---------------------------------------------------------------------------
// Cost accounting
// ---------------------------------------------------------------------------

namespace step {
inline constexpr std::string_view kRewrite = "Query rewriting";
inline constexpr std::string_view kDecompose = "Query decomposition";
inline constexpr std::string_view kRetrieval = "Retrieval & re-ranking";
inline constexpr std::string_view kTool = "Tool use";
inline constexpr std::string_view kAnswer = "Sub-query answering";
inline constexpr std::string_view kDirect = "Direct answering";
inline constexpr std::string_view kMerge = "Final answer merging";
inline constexpr std::string_view kBankLookup = "Memory bank lookup";
}  // namespace step

struct CostRecord {
  std::string step;
  double wall_s = 0.0;
  std::string model;
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
  /// Sub-query index, or -1 for query-level steps.
  int subquery = -1;

  std::size_t tokens() const { return prompt_tokens + completion_tokens; }
  nlohmann::json to_json() const;
  static CostRecord from_json(const nlohmann::json& j);
};

/// Per-step records plus the sub-query count n and tool count t.
/// Appends are not synchronized; concurrent streams keep local ledgers and
/// merge them afterwards.
class CostLedger {
 public:
  void add(CostRecord r) { records_.push_back(std::move(r)); }
  void add_call(std::string_view step_name, const std::string& model, const Usage& usage, double wall_s,
                int subquery = -1);
  void append(const CostLedger& other);

  const std::vector<CostRecord>& records() const { return records_; }
  std::size_t total_tokens() const;
  std::size_t prompt_tokens() const;
  std::size_t completion_tokens() const;
  double total_wall_s() const;
  std::size_t count(std::string_view step_name) const;

  std::size_t n = 0;
  std::size_t t = 0;

  nlohmann::json to_json() const;
  static CostLedger from_json(const nlohmann::json& j);
  /// One JSON record per line.
  void write_jsonl(std::ostream& out) const;
  /// Everything except wall-clock fields; equal across reruns of a
  /// deterministic pipeline.
  std::string signature() const;

 private:
  std::vector<CostRecord> records_;
};

struct CostStep {
  std::string step;
  std::int64_t tokens = 0;
};

struct CostEstimate {
  int n = 1;
  int t = 0;
  std::int64_t tokens = 0;
  /// USD per thousand queries, from the total-row closed form.
  double usd_per_k_queries = 0.0;
  /// Same figure in thousandths of a dollar, exact.
  std::int64_t usd_milli_per_k_queries = 0;
  std::vector<CostStep> steps;

  std::int64_t step_token_sum() const;
  nlohmann::json to_json() const;
};

/// Tokens: 400 + 4950n + 100nt. USD per k queries: 0.11 + 1.4n + 0.028nt.
/// Steps: rewriting 600, tool use 250n + 100tn, sub-query answering 4500n,
/// merging 200(n-1). Throws InvalidArgument for n < 1 or t < 0.
CostEstimate estimate_cost(int n, int t);

// ---------------------------------------------------------------------------
// Tools
// ---------------------------------------------------------------------------

using ToolHandler = std::function<nlohmann::json(const nlohmann::json& args)>;

struct ToolSpec {
  std::string name;
  std::string description;
  nlohmann::json parameters = nlohmann::json::object();
  ToolHandler handler;

  ToolSchema schema() const { return {name, description, parameters}; }
};

class ToolRegistry {
 public:
  /// Throws InvalidArgument on an empty or duplicate name or missing handler.
  void add(ToolSpec spec);
  const ToolSpec* find(std::string_view name) const;
  const std::vector<ToolSpec>& specs() const { return specs_; }
  std::vector<ToolSchema> schemas() const;
  std::size_t size() const { return specs_.size(); }
  bool empty() const { return specs_.empty(); }

  /// Array of {name, description, parameters, canned} (offline handler
  /// returning `canned`) or {name, description, parameters, url} (POSTs the
  /// arguments as JSON and returns the parsed reply).
  static ToolRegistry from_json(const nlohmann::json& j);
  static ToolRegistry load(const std::string& path);

 private:
  std::vector<ToolSpec> specs_;
};

/// Handler that always returns `data`.
ToolHandler canned_handler(nlohmann::json data);
/// Handler POSTing the arguments to url.
ToolHandler http_handler(const std::string& url, std::chrono::seconds timeout = std::chrono::seconds(30));

// ---------------------------------------------------------------------------
// Evidence
// ---------------------------------------------------------------------------

struct RankedBundle {
  Bundle bundle;
  std::string text;
  double score = 0.0;
};

struct Evidence {
  Route stream = Route::DeepRetrieval;
  std::string subquery;
  std::string answer;
  std::vector<RankedBundle> bundles;
  std::vector<std::string> provenance;
  bool error = false;
  std::string error_reason;
  std::vector<std::string> notes;

  nlohmann::json to_json() const;
};

// ---------------------------------------------------------------------------
// Pipeline operations
// ---------------------------------------------------------------------------

struct PipelineConfig {
  std::size_t k_each = 10;
  std::size_t bundle_window = 2;
  double tau_bundle = 0.8;
  /// Re-ranked bundles passed to sub-query answering.
  std::size_t rerank_top = 10;
  /// Re-ranked bundles used when populating the memory bank.
  std::size_t high_recall_k = 30;
  std::size_t jobs = 4;
  ModelSlots models;
  MatchThresholds thresholds;
  /// When set, sub-query streams are dispatched in a seeded random order.
  std::optional<std::uint64_t> schedule_seed;

  static PipelineConfig from_json(const nlohmann::json& j);
  void validate() const;
};

/// Self-contained English rewrite of q given the history. On gateway
/// failure returns q and appends a warning.
std::string normalize_query(std::string_view q, std::span<const ConversationTurn> history, LlmGateway& gateway,
                            const ModelSlots& models = {}, CostLedger* ledger = nullptr,
                            std::vector<std::string>* warnings = nullptr);

/// Splits on top-level "and" and ";" and routes each unit: MemoryBank when
/// the bank matches, Tool when a tool keyword occurs, else DeepRetrieval.
std::vector<SubQuery> rule_decompose(std::string_view q, const MemoryBank* bank, const ToolRegistry* tools,
                                     const MatchThresholds& th = {});

/// Gateway decomposition; an empty or unparseable reply defers to
/// rule_decompose, unknown routes become DeepRetrieval with a warning.
/// Sets ledger->n to the number of sub-queries.
std::vector<SubQuery> decompose(std::string_view q, LlmGateway& gateway, const MemoryBank* bank,
                                const ToolRegistry* tools, const PipelineConfig& cfg = {},
                                CostLedger* ledger = nullptr, std::vector<std::string>* warnings = nullptr);

/// Offers every registered tool, dispatches the chosen call. Unknown tools
/// and handler failures come back as error evidence.
Evidence call_tool(const SubQuery& sq, const ToolRegistry& registry, LlmGateway& gateway,
                   const ModelSlots& models = {}, CostLedger* ledger = nullptr, int subquery_index = -1);

/// Retrieval, bundling, re-ranking to the top `top` bundles, and a
/// sub-answer from `answer_model`.
Evidence deep_retrieve(const SubQuery& sq, const KnowledgeBase& kb, const RerankModel& model,
                       const FeatureExtractor& features, LlmGateway& gateway, const PipelineConfig& cfg,
                       std::size_t top, const std::string& answer_model, CostLedger* ledger = nullptr,
                       int subquery_index = -1);

struct Handles {
  const KnowledgeBase* kb = nullptr;
  const MemoryBank* bank = nullptr;
  const ToolRegistry* tools = nullptr;
  const RerankModel* model = nullptr;
  LlmGateway* gateway = nullptr;
};

/// Runs each sub-query on its stream concurrently (cfg.jobs workers).
/// Evidence and ledger records come back in sub-query order. A stream
/// failure becomes error evidence for that sub-query only.
std::vector<Evidence> execute(std::span<const SubQuery> subqueries, const Handles& h, const PipelineConfig& cfg,
                              CostLedger* ledger = nullptr);

/// Single evidence: its answer as-is. Otherwise a gateway merge over the
/// stream-labelled concatenation of answers.
std::string synthesize(std::string_view q, std::span<const Evidence> evidence, LlmGateway& gateway,
                       const ModelSlots& models = {}, CostLedger* ledger = nullptr);

/// The labelled concatenation handed to the merge step.
std::string labelled_evidence(std::span<const Evidence> evidence);

struct PipelineResult {
  std::string query;
  std::string normalized;
  std::vector<SubQuery> subqueries;
  std::vector<Evidence> evidence;
  std::string answer;
  CostLedger ledger;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
};

/// normalize -> decompose -> execute -> synthesize.
PipelineResult answer_query(std::string_view q, std::span<const ConversationTurn> history, const Handles& h,
                            const PipelineConfig& cfg = {});

struct BankQuestion {
  std::string text;
  std::string subject;
};

/// Builds a bank whose cells come from deep retrieval with
/// cfg.high_recall_k bundles and the reasoning model. All cells start
/// unverified; failing cells stay empty.
MemoryBank init_bank(std::span<const BankQuestion> questions, std::span<const std::string> periods,
                     const KnowledgeBase& kb, const RerankModel& model, LlmGateway& gateway,
                     const PipelineConfig& cfg = {}, std::vector<std::string> stop_entities = {},
                     std::vector<std::string>* warnings = nullptr);

}  // namespace finrag
