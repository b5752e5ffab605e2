#include "finrag/query_pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "finrag/error.hpp"
#include "finrag/parallel.hpp"
#include "finrag/prompts.hpp"
#include "finrag/random.hpp"
#include "finrag/text.hpp"

#include "httplib.h"

namespace finrag {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

ChatRequest make_request(std::string_view task_name, const std::string& model, std::string_view system,
                         std::vector<std::string> context, std::string payload) {
  ChatRequest req;
  req.task = std::string(task_name);
  req.model = model;
  req.messages.push_back({"system", std::string(system)});
  for (auto& c : context) req.messages.push_back({"user", std::move(c)});
  req.messages.push_back({"user", std::move(payload)});
  return req;
}

// Gateway call with one ledger record.
ChatResponse tracked_call(LlmGateway& gateway, const ChatRequest& req, std::string_view step_name,
                          CostLedger* ledger, int subquery) {
  const auto t0 = Clock::now();
  auto resp = gateway.complete(req);
  if (ledger) ledger->add_call(step_name, req.model, resp.usage, seconds_since(t0), subquery);
  return resp;
}

}  // namespace

std::string_view to_string(Route r) {
  switch (r) {
    case Route::MemoryBank:
      return "MemoryBank";
    case Route::Tool:
      return "Tool";
    case Route::DeepRetrieval:
      return "DeepRetrieval";
    case Route::Direct:
      return "Direct";
  }
  return "DeepRetrieval";
}

std::optional<Route> parse_route(std::string_view s) {
  std::string key;
  for (char c : to_lower(s)) {
    if (c != '_' && c != '-' && c != ' ') key.push_back(c);
  }
  if (key == "memorybank") return Route::MemoryBank;
  if (key == "tool") return Route::Tool;
  if (key == "deepretrieval") return Route::DeepRetrieval;
  if (key == "direct") return Route::Direct;
  return std::nullopt;
}

// ---------------------------------------------------------------------------

json CostRecord::to_json() const {
  return {{"step", step},
          {"wall_s", wall_s},
          {"model", model},
          {"prompt_tokens", prompt_tokens},
          {"completion_tokens", completion_tokens},
          {"subquery", subquery}};
}

CostRecord CostRecord::from_json(const json& j) {
  CostRecord r;
  r.step = j.at("step").get<std::string>();
  r.wall_s = j.value("wall_s", 0.0);
  r.model = j.value("model", "");
  r.prompt_tokens = j.value("prompt_tokens", std::size_t{0});
  r.completion_tokens = j.value("completion_tokens", std::size_t{0});
  r.subquery = j.value("subquery", -1);
  return r;
}

void CostLedger::add_call(std::string_view step_name, const std::string& model, const Usage& usage, double wall_s,
                          int subquery) {
  records_.push_back({std::string(step_name), wall_s, model, usage.prompt_tokens, usage.completion_tokens, subquery});
}

void CostLedger::append(const CostLedger& other) {
  records_.insert(records_.end(), other.records_.begin(), other.records_.end());
}

std::size_t CostLedger::total_tokens() const { return prompt_tokens() + completion_tokens(); }

std::size_t CostLedger::prompt_tokens() const {
  std::size_t s = 0;
  for (const auto& r : records_) s += r.prompt_tokens;
  return s;
}

std::size_t CostLedger::completion_tokens() const {
  std::size_t s = 0;
  for (const auto& r : records_) s += r.completion_tokens;
  return s;
}

double CostLedger::total_wall_s() const {
  double s = 0.0;
  for (const auto& r : records_) s += r.wall_s;
  return s;
}

std::size_t CostLedger::count(std::string_view step_name) const {
  return static_cast<std::size_t>(
      std::count_if(records_.begin(), records_.end(), [&](const CostRecord& r) { return r.step == step_name; }));
}

json CostLedger::to_json() const {
  json recs = json::array();
  for (const auto& r : records_) recs.push_back(r.to_json());
  return {{"n", n},
          {"t", t},
          {"records", recs},
          {"total_tokens", total_tokens()},
          {"prompt_tokens", prompt_tokens()},
          {"completion_tokens", completion_tokens()},
          {"wall_s", total_wall_s()}};
}

CostLedger CostLedger::from_json(const json& j) {
  CostLedger l;
  l.n = j.value("n", std::size_t{0});
  l.t = j.value("t", std::size_t{0});
  for (const auto& r : j.value("records", json::array())) l.add(CostRecord::from_json(r));
  return l;
}

void CostLedger::write_jsonl(std::ostream& out) const {
  for (const auto& r : records_) out << r.to_json().dump() << '\n';
}

std::string CostLedger::signature() const {
  std::ostringstream s;
  s << "n=" << n << " t=" << t;
  for (const auto& r : records_) {
    s << '|' << r.step << ',' << r.model << ',' << r.prompt_tokens << ',' << r.completion_tokens << ',' << r.subquery;
  }
  return s.str();
}

std::int64_t CostEstimate::step_token_sum() const {
  std::int64_t s = 0;
  for (const auto& st : steps) s += st.tokens;
  return s;
}

json CostEstimate::to_json() const {
  json st = json::array();
  for (const auto& s : steps) st.push_back({{"step", s.step}, {"tokens", s.tokens}});
  return {{"n", n}, {"t", t}, {"tokens", tokens}, {"usd_per_k_queries", usd_per_k_queries}, {"steps", st}};
}

CostEstimate estimate_cost(int n, int t) {
  if (n < 1) throw InvalidArgument("estimate_cost: n must be >= 1");
  if (t < 0) throw InvalidArgument("estimate_cost: t must be >= 0");
  CostEstimate e;
  e.n = n;
  e.t = t;
  const std::int64_t N = n;
  const std::int64_t T = t;
  e.tokens = 400 + 4950 * N + 100 * N * T;
  e.usd_milli_per_k_queries = 110 + 1400 * N + 28 * N * T;
  e.usd_per_k_queries = static_cast<double>(e.usd_milli_per_k_queries) / 1000.0;
  e.steps = {{std::string(step::kRewrite), 600},
             {std::string(step::kTool), 250 * N + 100 * T * N},
             {std::string(step::kAnswer), 4500 * N},
             {std::string(step::kMerge), 200 * (N - 1)}};
  return e;
}

// ---------------------------------------------------------------------------

void ToolRegistry::add(ToolSpec spec) {
  if (spec.name.empty()) throw InvalidArgument("tool name is empty");
  if (!spec.handler) throw InvalidArgument("tool '" + spec.name + "' has no handler");
  if (find(spec.name)) throw InvalidArgument("duplicate tool name: " + spec.name);
  specs_.push_back(std::move(spec));
}

const ToolSpec* ToolRegistry::find(std::string_view name) const {
  for (const auto& s : specs_) {
    if (s.name == name) return &s;
  }
  return nullptr;
}

std::vector<ToolSchema> ToolRegistry::schemas() const {
  std::vector<ToolSchema> out;
  for (const auto& s : specs_) out.push_back(s.schema());
  return out;
}

ToolHandler canned_handler(json data) {
  return [data = std::move(data)](const json&) { return data; };
}

ToolHandler http_handler(const std::string& url, std::chrono::seconds timeout) {
  const auto scheme = url.find("://");
  const auto path_at = url.find('/', scheme == std::string::npos ? 0 : scheme + 3);
  const std::string host = path_at == std::string::npos ? url : url.substr(0, path_at);
  const std::string path = path_at == std::string::npos ? "/" : url.substr(path_at);
  return [host, path, timeout](const json& args) -> json {
    httplib::Client client(host);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    auto res = client.Post(path, args.dump(), "application/json");
    if (!res) throw Error("tool endpoint " + host + path + ": " + httplib::to_string(res.error()));
    if (res->status >= 400) throw Error("tool endpoint returned HTTP " + std::to_string(res->status));
    try {
      return json::parse(res->body);
    } catch (const json::exception&) {
      return res->body;
    }
  };
}

ToolRegistry ToolRegistry::from_json(const json& j) {
  ToolRegistry reg;
  const json& list = j.is_object() && j.contains("tools") ? j.at("tools") : j;
  if (!list.is_array()) throw FormatError("tool registry must be an array");
  for (const auto& t : list) {
    ToolSpec s;
    try {
      s.name = t.at("name").get<std::string>();
      s.description = t.value("description", "");
      s.parameters = t.value("parameters", json{{"type", "object"},
                                                {"properties", {{"query", {{"type", "string"}}}}}});
      if (t.contains("url")) {
        s.handler = http_handler(t.at("url").get<std::string>());
      } else {
        s.handler = canned_handler(t.value("canned", json(nullptr)));
      }
    } catch (const json::exception& e) {
      throw FormatError(std::string("tool registry: ") + e.what());
    }
    reg.add(std::move(s));
  }
  return reg;
}

ToolRegistry ToolRegistry::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

json Evidence::to_json() const {
  json bundles_j = json::array();
  for (const auto& b : bundles) {
    json members = json::array();
    for (const auto& m : b.bundle.members) members.push_back(m.str());
    bundles_j.push_back({{"anchor", b.bundle.anchor.str()}, {"members", members}, {"score", b.score}, {"text", b.text}});
  }
  json j = {{"stream", to_string(stream)},
            {"subquery", subquery},
            {"provenance", provenance},
            {"payload", {{"answer", answer}, {"bundles", bundles_j}}}};
  if (error) j["error"] = error_reason;
  if (!notes.empty()) j["notes"] = notes;
  return j;
}

void PipelineConfig::validate() const {
  if (k_each == 0) throw InvalidArgument("k_each must be >= 1");
  if (rerank_top == 0) throw InvalidArgument("rerank_top must be >= 1");
  if (!(tau_bundle >= -1.0 && tau_bundle <= 1.0)) throw InvalidArgument("tau_bundle must lie in [-1, 1]");
  thresholds.validate();
}

PipelineConfig PipelineConfig::from_json(const json& j) {
  PipelineConfig c;
  c.k_each = j.value("k_each", c.k_each);
  c.bundle_window = j.value("bundle_window", c.bundle_window);
  c.tau_bundle = j.value("tau_bundle", c.tau_bundle);
  c.rerank_top = j.value("rerank_top", c.rerank_top);
  c.high_recall_k = j.value("high_recall_k", 3 * c.rerank_top);
  c.jobs = j.value("jobs", c.jobs);
  if (j.contains("models")) c.models = ModelSlots::from_json(j.at("models"));
  if (j.contains("thresholds")) {
    const auto& t = j.at("thresholds");
    c.thresholds.tau_seq = t.value("tau_seq", c.thresholds.tau_seq);
    c.thresholds.tau_bm25 = t.value("tau_bm25", c.thresholds.tau_bm25);
    c.thresholds.tau_sem = t.value("tau_sem", c.thresholds.tau_sem);
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

std::string normalize_query(std::string_view q, std::span<const ConversationTurn> history, LlmGateway& gateway,
                            const ModelSlots& models, CostLedger* ledger, std::vector<std::string>* warnings) {
  if (normalize_whitespace(q).empty()) throw InvalidArgument("query is empty");
  std::vector<std::string> context;
  if (!history.empty()) {
    std::string h = "Conversation so far:";
    for (const auto& turn : history) h += "\n" + turn.role + ": " + turn.text;
    context.push_back(std::move(h));
  }
  const auto req = make_request(task::kRewrite, models.rewrite, prompts::query_rewrite(), std::move(context),
                                std::string(q));
  try {
    const auto resp = tracked_call(gateway, req, step::kRewrite, ledger, -1);
    const auto text = normalize_whitespace(resp.text.value_or(""));
    if (!text.empty()) return text;
    if (warnings) warnings->push_back("query rewrite returned no text; using the original query");
  } catch (const std::exception& e) {
    if (warnings) warnings->push_back(std::string("query rewrite failed: ") + e.what());
    spdlog::warn("query rewrite failed: {}", e.what());
  }
  return std::string(q);
}

namespace {

bool is_top_level_and(const std::vector<std::string>& words, std::size_t i) {
  return to_lower(words[i]) == "and";
}

// Splits on ';' and on the word "and" outside brackets and quotes. An
// "and" is only a separator when both sides keep at least two words.
std::vector<std::string> split_units(std::string_view q) {
  std::vector<std::string> pieces;
  std::string cur;
  int depth = 0;
  bool quoted = false;
  for (char c : q) {
    if (c == '"') quoted = !quoted;
    if (!quoted && (c == '(' || c == '[')) ++depth;
    if (!quoted && (c == ')' || c == ']') && depth > 0) --depth;
    if (c == ';' && depth == 0 && !quoted) {
      pieces.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  pieces.push_back(cur);

  std::vector<std::string> units;
  for (const auto& piece : pieces) {
    const auto words = split_words(piece);
    std::vector<int> depth_at(words.size(), 0);
    {
      int d = 0;
      bool qt = false;
      for (std::size_t w = 0; w < words.size(); ++w) {
        depth_at[w] = (d > 0 || qt) ? 1 : 0;
        for (char c : words[w]) {
          if (c == '"') qt = !qt;
          if (!qt && (c == '(' || c == '[')) ++d;
          if (!qt && (c == ')' || c == ']') && d > 0) --d;
        }
      }
    }
    std::size_t start = 0;
    for (std::size_t w = 0; w < words.size(); ++w) {
      if (depth_at[w] != 0 || !is_top_level_and(words, w)) continue;
      if (w - start >= 2 && words.size() - w - 1 >= 2) {
        units.push_back(join_words(words, start, w));
        start = w + 1;
      }
    }
    auto tail = join_words(words, start, words.size());
    if (!tail.empty()) units.push_back(std::move(tail));
  }
  return units;
}

Route rule_route(const std::string& unit, const MemoryBank* bank, const ToolRegistry* tools,
                 const MatchThresholds& th) {
  if (bank && !bank->empty() && match(unit, *bank, th)) return Route::MemoryBank;
  if (tools) {
    for (const auto& s : tools->specs()) {
      if (tool_matches_text(s.schema(), unit)) return Route::Tool;
    }
  }
  return Route::DeepRetrieval;
}

}  // namespace

std::vector<SubQuery> rule_decompose(std::string_view q, const MemoryBank* bank, const ToolRegistry* tools,
                                     const MatchThresholds& th) {
  std::vector<SubQuery> out;
  for (auto& unit : split_units(q)) {
    const auto route = rule_route(unit, bank, tools, th);
    out.push_back({std::move(unit), route});
  }
  if (out.empty()) out.push_back({normalize_whitespace(q), Route::DeepRetrieval});
  return out;
}

std::vector<SubQuery> decompose(std::string_view q, LlmGateway& gateway, const MemoryBank* bank,
                                const ToolRegistry* tools, const PipelineConfig& cfg, CostLedger* ledger,
                                std::vector<std::string>* warnings) {
  if (normalize_whitespace(q).empty()) throw InvalidArgument("query is empty");
  std::vector<std::string> context;
  {
    std::string c = "Available tools:";
    if (!tools || tools->empty()) c += " none";
    if (tools) {
      for (const auto& s : tools->specs()) c += "\n- " + s.name + ": " + s.description;
    }
    c += "\nMemory bank questions:";
    if (!bank || bank->empty()) c += " none";
    if (bank) {
      for (const auto& cq : bank->questions()) c += "\n- " + cq.text;
    }
    context.push_back(std::move(c));
  }
  const auto req =
      make_request(task::kDecompose, cfg.models.decompose, prompts::decompose(), std::move(context), std::string(q));

  std::vector<SubQuery> out;
  try {
    const auto resp = tracked_call(gateway, req, step::kDecompose, ledger, -1);
    const auto text = normalize_whitespace(resp.text.value_or(""));
    if (!text.empty()) {
      const auto j = json::parse(text);
      const json& list = j.is_object() ? j.at("subqueries") : j;
      for (const auto& item : list) {
        SubQuery sq;
        sq.text = normalize_whitespace(item.at("text").get<std::string>());
        if (sq.text.empty()) continue;
        const auto label = item.value("route", "");
        if (const auto r = parse_route(label)) {
          sq.route = *r;
        } else {
          sq.route = Route::DeepRetrieval;
          if (warnings) warnings->push_back("unknown route '" + label + "' for '" + sq.text + "'; using DeepRetrieval");
        }
        out.push_back(std::move(sq));
      }
    }
  } catch (const json::exception& e) {
    out.clear();
    if (warnings) warnings->push_back(std::string("decomposition reply not understood: ") + e.what());
  } catch (const std::exception& e) {
    out.clear();
    if (warnings) warnings->push_back(std::string("decomposition failed: ") + e.what());
  }
  if (out.empty()) out = rule_decompose(q, bank, tools, cfg.thresholds);
  if (ledger) ledger->n = out.size();
  return out;
}

Evidence call_tool(const SubQuery& sq, const ToolRegistry& registry, LlmGateway& gateway, const ModelSlots& models,
                   CostLedger* ledger, int subquery_index) {
  Evidence ev;
  ev.stream = Route::Tool;
  ev.subquery = sq.text;
  auto req = make_request(task::kToolSelect, models.tool, prompts::tool_select(), {}, sq.text);
  req.tools = registry.schemas();
  ChatResponse resp;
  try {
    resp = tracked_call(gateway, req, step::kTool, ledger, subquery_index);
  } catch (const std::exception& e) {
    ev.error = true;
    ev.error_reason = std::string("tool selection failed: ") + e.what();
    return ev;
  }
  if (resp.tool_calls.empty()) {
    ev.error = true;
    ev.error_reason = "no tool selected";
    return ev;
  }
  const auto& call = resp.tool_calls.front();
  const ToolSpec* spec = registry.find(call.name);
  ev.provenance.push_back("tool:" + call.name);
  if (!spec) {
    ev.error = true;
    ev.error_reason = "unknown tool '" + call.name + "'";
    return ev;
  }
  try {
    const auto out = spec->handler(call.arguments);
    ev.answer = out.is_string() ? out.get<std::string>() : out.dump();
  } catch (const std::exception& e) {
    ev.error = true;
    ev.error_reason = "tool '" + call.name + "' failed: " + e.what();
  }
  return ev;
}

namespace {

std::vector<RankedBundle> rank_bundles(const std::string& query, const KnowledgeBase& kb, const RerankModel& model,
                                       const FeatureExtractor& features, const PipelineConfig& cfg,
                                       std::size_t k_each, std::size_t top) {
  const auto candidates = multipath_retrieve(query, k_each, kb);
  const auto bundles = bundle_candidates(candidates, kb, cfg.bundle_window, cfg.tau_bundle);
  std::vector<std::string> texts;
  texts.reserve(bundles.size());
  for (const auto& b : bundles) texts.push_back(bundle_text(b, kb));
  std::vector<double> scores;
  if (!texts.empty()) scores = score_candidates(query, texts, model, features);
  std::vector<std::size_t> order(bundles.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<RankedBundle> out;
  for (std::size_t i = 0; i < order.size() && out.size() < top; ++i) {
    out.push_back({bundles[order[i]], texts[order[i]], scores[order[i]]});
  }
  return out;
}

std::string context_block(const std::vector<RankedBundle>& bundles) {
  std::string c = "Context passages:";
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    c += "\n[" + std::to_string(i + 1) + "] (" + bundles[i].bundle.anchor.str() + ") " + bundles[i].text;
  }
  return c;
}

std::vector<std::string> bundle_provenance(const std::vector<RankedBundle>& bundles) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& b : bundles) {
    for (const auto& m : b.bundle.members) {
      auto s = m.str();
      if (seen.insert(s).second) out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace

Evidence deep_retrieve(const SubQuery& sq, const KnowledgeBase& kb, const RerankModel& model,
                       const FeatureExtractor& features, LlmGateway& gateway, const PipelineConfig& cfg,
                       std::size_t top, const std::string& answer_model, CostLedger* ledger, int subquery_index) {
  Evidence ev;
  ev.stream = Route::DeepRetrieval;
  ev.subquery = sq.text;
  const auto t0 = Clock::now();
  ev.bundles = rank_bundles(sq.text, kb, model, features, cfg, cfg.k_each, top);
  if (ledger) ledger->add({std::string(step::kRetrieval), seconds_since(t0), "local", 0, 0, subquery_index});
  ev.provenance = bundle_provenance(ev.bundles);

  const auto req = make_request(task::kAnswer, answer_model, prompts::subquery_answer(), {context_block(ev.bundles)},
                                sq.text);
  try {
    const auto resp = tracked_call(gateway, req, step::kAnswer, ledger, subquery_index);
    ev.answer = resp.text.value_or("");
  } catch (const std::exception& e) {
    ev.error = true;
    ev.error_reason = std::string("sub-query answering failed: ") + e.what();
  }
  return ev;
}

namespace {

Evidence run_stream(const SubQuery& sq, const Handles& h, const PipelineConfig& cfg, const FeatureExtractor* features,
                    CostLedger& ledger, int index) {
  Evidence ev;
  ev.stream = sq.route;
  ev.subquery = sq.text;
  try {
    std::vector<std::string> notes;
    Route route = sq.route;
    if (route == Route::MemoryBank) {
      if (!h.bank) {
        notes.push_back("memory bank unavailable; falling through to deep retrieval");
        route = Route::DeepRetrieval;
      } else {
        const auto t0 = Clock::now();
        const auto r = lookup(sq.text, std::nullopt, *h.bank, cfg.thresholds);
        ledger.add({std::string(step::kBankLookup), seconds_since(t0), "local", 0, 0, index});
        if (r.hit()) {
          const auto& a = *r.answer;
          ev.answer = a.question + " (" + a.period + "): " + a.value;
          ev.provenance = a.sources;
          return ev;
        }
        notes.push_back("memory bank miss (" + r.miss_reason + "); falling through to deep retrieval");
        route = Route::DeepRetrieval;
      }
    }
    switch (route) {
      case Route::Tool:
        if (!h.tools) {
          ev.error = true;
          ev.error_reason = "no tool registry configured";
          return ev;
        }
        ev = call_tool(sq, *h.tools, *h.gateway, cfg.models, &ledger, index);
        break;
      case Route::Direct: {
        const auto req = make_request(task::kDirect, cfg.models.answer, prompts::direct_answer(), {}, sq.text);
        const auto resp = tracked_call(*h.gateway, req, step::kDirect, &ledger, index);
        ev.stream = Route::Direct;
        ev.answer = resp.text.value_or("");
        break;
      }
      default:
        if (!h.kb || !h.model || !features) {
          ev.stream = Route::DeepRetrieval;
          ev.error = true;
          ev.error_reason = "no knowledge base or re-ranker configured";
          return ev;
        }
        ev = deep_retrieve(sq, *h.kb, *h.model, *features, *h.gateway, cfg, cfg.rerank_top, cfg.models.answer,
                           &ledger, index);
        break;
    }
    ev.notes.insert(ev.notes.begin(), notes.begin(), notes.end());
  } catch (const std::exception& e) {
    ev.error = true;
    ev.error_reason = e.what();
  }
  return ev;
}

}  // namespace

std::vector<Evidence> execute(std::span<const SubQuery> subqueries, const Handles& h, const PipelineConfig& cfg,
                              CostLedger* ledger) {
  if (!h.gateway) throw InvalidArgument("execute: gateway handle is required");
  std::optional<FeatureExtractor> features;
  if (h.kb) features.emplace(h.kb->embedder());

  std::vector<std::size_t> order(subqueries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  if (cfg.schedule_seed) {
    Rng rng(*cfg.schedule_seed);
    shuffle(order, rng);
  }
  std::vector<Evidence> evidence(subqueries.size());
  std::vector<CostLedger> local(subqueries.size());
  parallel_for(order.size(), std::max<std::size_t>(cfg.jobs, 1), [&](std::size_t slot) {
    const auto i = order[slot];
    evidence[i] = run_stream(subqueries[i], h, cfg, features ? &*features : nullptr, local[i], static_cast<int>(i));
  });
  if (ledger) {
    for (const auto& l : local) ledger->append(l);
  }
  return evidence;
}

std::string labelled_evidence(std::span<const Evidence> evidence) {
  std::string out;
  for (const auto& ev : evidence) {
    if (!out.empty()) out += "\n\n";
    out += "[" + std::string(to_string(ev.stream)) + "] " + ev.subquery + "\n";
    out += ev.error ? "error: " + ev.error_reason : ev.answer;
  }
  return out;
}

std::string synthesize(std::string_view q, std::span<const Evidence> evidence, LlmGateway& gateway,
                       const ModelSlots& models, CostLedger* ledger) {
  if (evidence.empty()) throw InvalidArgument("synthesize: no evidence");
  const bool all_failed =
      std::all_of(evidence.begin(), evidence.end(), [](const Evidence& e) { return e.error; });
  if (all_failed) {
    std::string reasons;
    for (const auto& e : evidence) reasons += (reasons.empty() ? "" : "; ") + e.error_reason;
    return "Unable to answer: " + reasons;
  }
  if (evidence.size() == 1) return evidence.front().answer;

  const auto req = make_request(task::kMerge, models.merge, prompts::merge_answers(),
                                {"Original question: " + std::string(q)}, labelled_evidence(evidence));
  try {
    const auto resp = tracked_call(gateway, req, step::kMerge, ledger, -1);
    if (resp.text && !normalize_whitespace(*resp.text).empty()) return *resp.text;
  } catch (const std::exception& e) {
    spdlog::warn("answer merging failed: {}", e.what());
  }
  return labelled_evidence(evidence);
}

json PipelineResult::to_json() const {
  json sqs = json::array();
  for (const auto& s : subqueries) sqs.push_back({{"text", s.text}, {"route", to_string(s.route)}});
  json ev = json::array();
  for (const auto& e : evidence) ev.push_back(e.to_json());
  return {{"query", query},   {"normalized", normalized}, {"subqueries", sqs},
          {"evidence", ev},   {"answer", answer},         {"ledger", ledger.to_json()},
          {"warnings", warnings}};
}

PipelineResult answer_query(std::string_view q, std::span<const ConversationTurn> history, const Handles& h,
                            const PipelineConfig& cfg) {
  if (!h.gateway) throw InvalidArgument("answer_query: gateway handle is required");
  cfg.validate();
  PipelineResult r;
  r.query = std::string(q);
  r.ledger.t = h.tools ? h.tools->size() : 0;
  r.normalized = normalize_query(q, history, *h.gateway, cfg.models, &r.ledger, &r.warnings);
  r.subqueries = decompose(r.normalized, *h.gateway, h.bank, h.tools, cfg, &r.ledger, &r.warnings);
  r.ledger.n = r.subqueries.size();
  r.evidence = execute(r.subqueries, h, cfg, &r.ledger);
  r.answer = synthesize(r.normalized, r.evidence, *h.gateway, cfg.models, &r.ledger);
  return r;
}

MemoryBank init_bank(std::span<const BankQuestion> questions, std::span<const std::string> periods,
                     const KnowledgeBase& kb, const RerankModel& model, LlmGateway& gateway,
                     const PipelineConfig& cfg, std::vector<std::string> stop_entities,
                     std::vector<std::string>* warnings) {
  MemoryBank bank(kb.embedder_ptr());
  bank.set_stop_entities(std::move(stop_entities));
  for (const auto& p : periods) bank.add_period(p);
  for (const auto& q : questions) bank.add_question(q.text, q.subject);
  if (bank.empty()) return bank;

  const FeatureExtractor features(kb.embedder());
  const std::size_t nq = bank.size();
  const std::size_t np = bank.periods().size();
  std::vector<std::optional<Cell>> cells(nq * np);
  std::vector<std::string> errors(nq * np);
  parallel_for(nq * np, std::max<std::size_t>(cfg.jobs, 1), [&](std::size_t slot) {
    const std::size_t qi = slot / np;
    const std::size_t pi = slot % np;
    const std::string query = questions[qi].text + " " + bank.periods()[pi];
    try {
      const auto bundles = rank_bundles(query, kb, model, features, cfg, 3 * cfg.k_each, cfg.high_recall_k);
      const auto req = make_request(task::kBankInit, cfg.models.reasoning, prompts::bank_value(),
                                    {context_block(bundles)}, query);
      const auto resp = gateway.complete(req);
      const auto value = normalize_whitespace(resp.text.value_or(""));
      if (value.empty()) throw Error("empty value");
      Cell c;
      c.value = value;
      for (const auto& b : bundles) c.source_chunk_ids.push_back(b.bundle.anchor.str());
      c.verified = false;
      cells[slot] = std::move(c);
    } catch (const std::exception& e) {
      errors[slot] = e.what();
    }
  });
  for (std::size_t slot = 0; slot < cells.size(); ++slot) {
    if (cells[slot]) {
      bank.set_cell(slot / np, slot % np, std::move(*cells[slot]));
    } else if (warnings) {
      warnings->push_back("cell (" + bank.questions()[slot / np].text + ", " + bank.periods()[slot % np] +
                          ") left empty: " + errors[slot]);
    }
  }
  return bank;
}

}  // namespace finrag
