#include <algorithm>
#include <sstream>

#include <gtest/gtest.h>

#include "finrag/error.hpp"
#include "finrag/query_pipeline.hpp"
#include "finrag/synthetic.hpp"
#include "fixtures.hpp"

using namespace finrag;
using nlohmann::json;

namespace {

ToolRegistry price_tools() {
  ToolRegistry reg;
  reg.add({"stock_price", "Latest share price quote for a ticker",
           json{{"type", "object"}, {"properties", {{"ticker", {{"type", "string"}}}}}},
           canned_handler(json{{"ticker", "NVK"}, {"price", 41.5}})});
  return reg;
}

MemoryBank revenue_bank() {
  MemoryBank b(fixture::embedder());
  b.add_period("Q2");
  b.add_period("Q3");
  b.add_question("What was the revenue?");
  b.set_cell(0, 1, {"RMB 12.4 billion", {"NVK-2024Q2#1"}, true});
  return b;
}

const SyntheticData& synth() {
  static const auto d = generate_synthetic();
  return d;
}

const KnowledgeBase& synth_kb() {
  static const auto kb = synthetic_kb(synth());
  return kb;
}

MockScript script(std::initializer_list<MockRule> rules) {
  MockScript s;
  s.rules = rules;
  return s;
}

MockRule rule(std::string task, std::string contains, std::string text) {
  MockRule r;
  r.task = std::move(task);
  r.contains = std::move(contains);
  r.text = std::move(text);
  return r;
}

}  // namespace

TEST(CostEstimate, ReferenceTotals) {
  const auto e = estimate_cost(1, 0);
  EXPECT_EQ(e.tokens, 5350);
  EXPECT_EQ(e.usd_milli_per_k_queries, 1510);
  EXPECT_DOUBLE_EQ(e.usd_per_k_queries, 1.51);
  const auto f = estimate_cost(2, 1);
  EXPECT_EQ(f.tokens, 400 + 9900 + 200);
  EXPECT_EQ(f.usd_milli_per_k_queries, 110 + 2800 + 56);
  EXPECT_EQ(estimate_cost(1, 0).to_json()["tokens"], 5350);
}

TEST(CostEstimate, StepSumIdentity) {
  for (int n = 1; n <= 5; ++n)
    for (int t = 0; t <= 3; ++t) {
      const auto e = estimate_cost(n, t);
      EXPECT_EQ(e.step_token_sum(), e.tokens) << n << "," << t;
      EXPECT_EQ(e.tokens, 400 + 4950 * n + 100 * n * t);
    }
  EXPECT_EQ(estimate_cost(1, 2).steps.back().tokens, 0);
  EXPECT_THROW(estimate_cost(0, 0), InvalidArgument);
  EXPECT_THROW(estimate_cost(1, -1), InvalidArgument);
}

TEST(CostLedger, ConservationAndSerialization) {
  CostLedger l;
  l.add_call(step::kRewrite, "m", Usage{10, 5}, 0.1);
  l.add_call(step::kAnswer, "m", Usage{100, 50}, 0.2, 0);
  l.add({std::string(step::kRetrieval), 0.3, "local", 0, 0, 0});
  l.n = 1;
  std::size_t sum = 0;
  for (const auto& r : l.records()) sum += r.tokens();
  EXPECT_EQ(l.total_tokens(), sum);
  EXPECT_EQ(l.total_tokens(), 165u);
  EXPECT_EQ(l.count(step::kAnswer), 1u);
  const auto back = CostLedger::from_json(l.to_json());
  EXPECT_EQ(back.signature(), l.signature());
  std::ostringstream os;
  l.write_jsonl(os);
  const auto text = os.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
  CostLedger m = l;
  m.add({std::string(step::kRetrieval), 9.9, "local", 0, 0, 0});
  CostLedger w = l;
  w.add({std::string(step::kRetrieval), 0.0, "local", 0, 0, 0});
  EXPECT_EQ(m.signature(), w.signature());
}

TEST(Routes, ParseAndPrint) {
  EXPECT_EQ(parse_route("memory_bank"), Route::MemoryBank);
  EXPECT_EQ(parse_route("DeepRetrieval"), Route::DeepRetrieval);
  EXPECT_EQ(parse_route("tool"), Route::Tool);
  EXPECT_FALSE(parse_route("teleport"));
  EXPECT_EQ(to_string(Route::MemoryBank), "MemoryBank");
}

TEST(NormalizeQuery, IdentityScriptedAndLedger) {
  MockGateway identity;
  CostLedger ledger;
  ModelSlots models;
  models.rewrite = "rewrite-model";
  EXPECT_EQ(normalize_query("What was revenue?", {}, identity, models, &ledger), "What was revenue?");
  ASSERT_EQ(ledger.records().size(), 1u);
  EXPECT_EQ(ledger.records()[0].model, "rewrite-model");
  EXPECT_EQ(ledger.records()[0].step, step::kRewrite);

  MockGateway gw(script({rule("rewrite", "its revenue", "What was Zeekr's revenue in 2024Q2?")}));
  const std::vector<ConversationTurn> history{{"user", "Tell me about Zeekr in 2024Q2", 1},
                                              {"assistant", "Zeekr delivered 50k vehicles", 2}};
  EXPECT_EQ(normalize_query("and its revenue?", history, gw), "What was Zeekr's revenue in 2024Q2?");

  MockScript failing;
  MockRule f;
  f.fail = true;
  failing.rules.push_back(f);
  MockGateway bad(failing);
  std::vector<std::string> warnings;
  EXPECT_EQ(normalize_query("q?", {}, bad, {}, nullptr, &warnings), "q?");
  EXPECT_EQ(warnings.size(), 1u);
  EXPECT_THROW(normalize_query("  ", {}, identity), InvalidArgument);
}

TEST(Decompose, SimpleQueryDeepRetrieval) {
  MockGateway gw;
  CostLedger ledger;
  const auto sq = decompose("What drove gross margin changes?", gw, nullptr, nullptr, {}, &ledger);
  ASSERT_EQ(sq.size(), 1u);
  EXPECT_EQ(sq[0].route, Route::DeepRetrieval);
  EXPECT_EQ(ledger.n, 1u);
}

TEST(Decompose, BankAndToolRouting) {
  MockGateway gw;
  const auto bank = revenue_bank();
  const auto tools = price_tools();
  CostLedger ledger;
  const auto sq = decompose("What was Q3 revenue and the current share price?", gw, &bank, &tools, {}, &ledger);
  ASSERT_EQ(sq.size(), 2u);
  EXPECT_EQ(sq[0].text, "What was Q3 revenue");
  EXPECT_EQ(sq[0].route, Route::MemoryBank);
  EXPECT_EQ(sq[1].route, Route::Tool);
  EXPECT_EQ(ledger.n, sq.size());
}

TEST(Decompose, RuleSplitter) {
  const auto sq = rule_decompose("revenue and margin; research and development spend and hiring plans", nullptr, nullptr);
  ASSERT_EQ(sq.size(), 3u);
  EXPECT_EQ(sq[0].text, "revenue and margin");
  EXPECT_EQ(sq[1].text, "research and development spend");
  EXPECT_EQ(sq[2].text, "hiring plans");
  EXPECT_EQ(rule_decompose("profit (revenue and costs) trend", nullptr, nullptr).size(), 1u);
}

TEST(Decompose, ScriptedJsonAndFallbacks) {
  MockGateway gw(script({rule("decompose", "",
                              R"({"subqueries":[{"text":"a b","route":"Tool"},{"text":"c d","route":"Wormhole"},)"
                              R"({"text":"e f","route":"Direct"}]})")}));
  std::vector<std::string> warnings;
  CostLedger ledger;
  const auto sq = decompose("anything", gw, nullptr, nullptr, {}, &ledger, &warnings);
  ASSERT_EQ(sq.size(), 3u);
  EXPECT_EQ(sq[0].route, Route::Tool);
  EXPECT_EQ(sq[1].route, Route::DeepRetrieval);
  EXPECT_EQ(sq[2].route, Route::Direct);
  EXPECT_EQ(warnings.size(), 1u);
  EXPECT_EQ(ledger.n, 3u);

  MockGateway junk(script({rule("decompose", "", "not json at all")}));
  warnings.clear();
  const auto fb = decompose("one thing", junk, nullptr, nullptr, {}, nullptr, &warnings);
  ASSERT_EQ(fb.size(), 1u);
  EXPECT_EQ(fb[0].text, "one thing");
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(CallTool, CannedQuoteAndLedger) {
  MockGateway gw;
  const auto tools = price_tools();
  CostLedger ledger;
  const auto ev = call_tool({"What is the current share price?", Route::Tool}, tools, gw, {}, &ledger, 0);
  EXPECT_FALSE(ev.error);
  EXPECT_EQ(json::parse(ev.answer)["price"], 41.5);
  EXPECT_EQ(ev.provenance, (std::vector<std::string>{"tool:stock_price"}));
  ASSERT_EQ(ledger.count(step::kTool), 1u);
  EXPECT_GT(ledger.records()[0].tokens(), 0u);
}

TEST(CallTool, UnknownToolAndHandlerFailure) {
  MockScript s;
  MockRule r;
  r.task = "tool_select";
  r.tool_calls = {ToolCall{"teleporter", json::object()}};
  s.rules.push_back(r);
  MockGateway gw(s);
  const auto tools = price_tools();
  const auto ev = call_tool({"x y", Route::Tool}, tools, gw);
  EXPECT_TRUE(ev.error);
  EXPECT_NE(ev.error_reason.find("teleporter"), std::string::npos);

  ToolRegistry broken;
  broken.add({"stock_price", "share price", json::object(), [](const json&) -> json { throw Error("down"); }});
  MockGateway def;
  const auto e2 = call_tool({"share price now", Route::Tool}, broken, def);
  EXPECT_TRUE(e2.error);
  EXPECT_NE(e2.error_reason.find("down"), std::string::npos);

  const auto e3 = call_tool({"unrelated words", Route::Tool}, tools, def);
  EXPECT_TRUE(e3.error);
}

TEST(ToolRegistry, JsonAndErrors) {
  const auto reg = ToolRegistry::from_json(json::parse(R"([{"name":"fx","description":"exchange rates","canned":{"usd":7.1}}])"));
  ASSERT_EQ(reg.size(), 1u);
  EXPECT_EQ(reg.find("fx")->handler(json::object())["usd"], 7.1);
  ToolRegistry r;
  EXPECT_THROW(r.add({"", "", json::object(), canned_handler(1)}), InvalidArgument);
  EXPECT_THROW(r.add({"a", "", json::object(), nullptr}), InvalidArgument);
  r.add({"a", "", json::object(), canned_handler(1)});
  EXPECT_THROW(r.add({"a", "", json::object(), canned_handler(1)}), InvalidArgument);
  EXPECT_THROW(ToolRegistry::from_json(json::parse(R"({"x":1})")), FormatError);
}

TEST(DeepRetrieve, RankedBundlesNonIncreasing) {
  MockGateway gw;
  const auto model = RerankModel::base();
  const FeatureExtractor features(synth_kb().embedder());
  PipelineConfig cfg;
  CostLedger ledger;
  const auto ev = deep_retrieve({"What was the revenue of Norvik Auto in 2023Q3?", Route::DeepRetrieval}, synth_kb(),
                                model, features, gw, cfg, 5, "answer-model", &ledger, 0);
  EXPECT_FALSE(ev.error);
  ASSERT_EQ(ev.bundles.size(), 5u);
  for (std::size_t i = 1; i < ev.bundles.size(); ++i) EXPECT_GE(ev.bundles[i - 1].score, ev.bundles[i].score);
  EXPECT_EQ(ev.answer, "What was the revenue of Norvik Auto in 2023Q3?");
  EXPECT_EQ(ledger.count(step::kRetrieval), 1u);
  EXPECT_EQ(ledger.count(step::kAnswer), 1u);
  EXPECT_FALSE(ev.provenance.empty());
}

TEST(Execute, MixedRoutesInOrderWithBypass) {
  MockGateway gw;
  const auto bank = revenue_bank();
  const auto tools = price_tools();
  const auto model = RerankModel::base();
  const Handles h{&synth_kb(), &bank, &tools, &model, &gw};
  const std::vector<SubQuery> sq{{"What was Q3 revenue", Route::MemoryBank},
                                 {"current share price", Route::Tool},
                                 {"operating cash flow of Norvik Auto", Route::DeepRetrieval}};
  CostLedger ledger;
  const auto ev = execute(sq, h, {}, &ledger);
  ASSERT_EQ(ev.size(), 3u);
  EXPECT_EQ(ev[0].stream, Route::MemoryBank);
  EXPECT_EQ(ev[0].answer, "what was the revenue (Q3): RMB 12.4 billion");
  EXPECT_EQ(ev[0].provenance, (std::vector<std::string>{"NVK-2024Q2#1"}));
  EXPECT_EQ(ev[1].stream, Route::Tool);
  EXPECT_EQ(ev[2].stream, Route::DeepRetrieval);
  for (const auto& r : ledger.records()) {
    if (r.step == step::kRetrieval || r.step == step::kAnswer) EXPECT_NE(r.subquery, 0);
  }
  EXPECT_EQ(ledger.records().front().step, step::kBankLookup);
}

TEST(Execute, BankMissFallsThrough) {
  MockGateway gw;
  auto bank = revenue_bank();
  const auto model = RerankModel::base();
  const Handles h{&synth_kb(), &bank, nullptr, &model, &gw};
  const std::vector<SubQuery> sq{{"What was Q2 revenue", Route::MemoryBank}};
  const auto ev = execute(sq, h, {});
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0].stream, Route::DeepRetrieval);
  ASSERT_FALSE(ev[0].notes.empty());
  EXPECT_NE(ev[0].notes[0].find("unverified"), std::string::npos);
}

TEST(Execute, StreamIsolation) {
  const auto tools = price_tools();
  const auto model = RerankModel::base();
  const std::vector<SubQuery> sq{{"current share price", Route::Tool},
                                 {"net income of Norvik Auto", Route::DeepRetrieval},
                                 {"say hello politely", Route::Direct}};
  MockGateway ok;
  const Handles h{&synth_kb(), nullptr, &tools, &model, &ok};
  const auto base = execute(sq, h, {});
  MockScript s;
  MockRule f;
  f.task = "tool_select";
  f.fail = true;
  s.rules.push_back(f);
  MockGateway broken(s);
  const Handles hb{&synth_kb(), nullptr, &tools, &model, &broken};
  const auto hurt = execute(sq, hb, {});
  EXPECT_TRUE(hurt[0].error);
  EXPECT_FALSE(base[0].error);
  for (std::size_t i = 1; i < sq.size(); ++i) EXPECT_EQ(hurt[i].to_json(), base[i].to_json());
}

TEST(Synthesize, SingleMultipleAndErrors) {
  MockGateway gw;
  CostLedger ledger;
  Evidence a;
  a.stream = Route::MemoryBank;
  a.subquery = "q1";
  a.answer = "A1";
  Evidence b;
  b.stream = Route::Tool;
  b.subquery = "q2";
  b.answer = "A2";
  EXPECT_EQ(synthesize("q", std::vector<Evidence>{a}, gw, {}, &ledger), "A1");
  EXPECT_EQ(ledger.count(step::kMerge), 0u);
  const auto merged = synthesize("q", std::vector<Evidence>{a, b}, gw, {}, &ledger);
  EXPECT_EQ(merged, "[MemoryBank] q1\nA1\n\n[Tool] q2\nA2");
  EXPECT_EQ(ledger.count(step::kMerge), 1u);
  a.error = b.error = true;
  a.error_reason = "x";
  b.error_reason = "y";
  EXPECT_EQ(synthesize("q", std::vector<Evidence>{a, b}, gw), "Unable to answer: x; y");
}

TEST(AnswerQuery, EndToEndAndDeterminism) {
  const auto bank = revenue_bank();
  const auto tools = price_tools();
  const auto model = RerankModel::base();
  std::string first;
  std::string first_sig;
  for (std::size_t jobs : {1, 2, 4}) {
    for (std::uint64_t seed : {0, 1, 2}) {
      MockGateway gw;
      const Handles h{&synth_kb(), &bank, &tools, &model, &gw};
      PipelineConfig cfg;
      cfg.jobs = jobs;
      cfg.schedule_seed = seed;
      const auto r = answer_query("What was Q3 revenue and the current share price?", {}, h, cfg);
      ASSERT_EQ(r.evidence.size(), 2u);
      EXPECT_EQ(r.ledger.n, 2u);
      EXPECT_EQ(r.ledger.t, 1u);
      EXPECT_EQ(r.ledger.count(step::kMerge), 1u);
      EXPECT_EQ(r.ledger.count(step::kRetrieval), 0u);
      auto j = r.to_json();
      j.erase("ledger");
      if (first.empty()) {
        first = j.dump();
        first_sig = r.ledger.signature();
      }
      EXPECT_EQ(j.dump(), first);
      EXPECT_EQ(r.ledger.signature(), first_sig);
    }
  }
}

TEST(InitBank, ScriptedCellsUnverified) {
  MockGateway gw(script({rule("bank_init", "", "scripted value")}));
  const std::vector<BankQuestion> qs{{"What was the revenue of Norvik Auto?", "revenue"},
                                     {"What was the net income of Norvik Auto?", "net income"}};
  const std::vector<std::string> periods{"2024Q1", "2024Q2"};
  PipelineConfig cfg;
  cfg.high_recall_k = 4;
  const auto bank = init_bank(qs, periods, synth_kb(), RerankModel::base(), gw, cfg, {"Norvik Auto"});
  EXPECT_EQ(bank.size(), 2u);
  EXPECT_EQ(bank.cells().size(), 4u);
  for (const auto& [k, c] : bank.cells()) {
    EXPECT_EQ(c.value, "scripted value");
    EXPECT_FALSE(c.verified);
    EXPECT_EQ(c.source_chunk_ids.size(), 4u);
  }
  EXPECT_EQ(lookup("What was the revenue of Norvik Auto?", std::nullopt, bank).miss_reason, "unverified");
  EXPECT_TRUE(init_bank({}, periods, synth_kb(), RerankModel::base(), gw).empty());

  MockScript s;
  MockRule f;
  f.task = "bank_init";
  f.fail = true;
  s.rules.push_back(f);
  MockGateway bad(s);
  std::vector<std::string> warnings;
  const auto empty = init_bank(qs, periods, synth_kb(), RerankModel::base(), bad, cfg, {}, &warnings);
  EXPECT_TRUE(empty.cells().empty());
  EXPECT_EQ(warnings.size(), 4u);
}

TEST(PipelineConfig, JsonAndValidation) {
  const auto c = PipelineConfig::from_json(json::parse(R"({"k_each":5,"rerank_top":4,"models":{"answer":"m"},
    "thresholds":{"tau_seq":0.7}})"));
  EXPECT_EQ(c.k_each, 5u);
  EXPECT_EQ(c.high_recall_k, 12u);
  EXPECT_EQ(c.models.answer, "m");
  EXPECT_EQ(c.thresholds.tau_seq, 0.7);
  EXPECT_THROW(PipelineConfig::from_json(json{{"k_each", 0}}), InvalidArgument);
}
