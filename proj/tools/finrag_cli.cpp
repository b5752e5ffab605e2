// finrag: command-line entry point for every lifecycle stage.

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "finrag/curation.hpp"
#include "finrag/error.hpp"
#include "finrag/evaluation.hpp"
#include "finrag/memory_bank.hpp"
#include "finrag/query_pipeline.hpp"
#include "finrag/runs.hpp"
#include "finrag/service.hpp"
#include "finrag/synthetic.hpp"
#include "finrag/text.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace finrag;

namespace {

struct Globals {
  std::string config_path;
  std::string mock_script;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t jobs = 0;
  bool verbose = false;

  ServiceConfig cfg;
  json raw = json::object();
};

Globals g;

void load_config() {
  if (g.config_path.empty()) return;
  std::ifstream in(g.config_path);
  if (!in) throw Error("cannot open config " + g.config_path);
  g.raw = json::parse(in);
  g.cfg = ServiceConfig::from_json(g.raw, fs::absolute(g.config_path).parent_path().string());
  if (!g.seed_set && g.raw.contains("seed")) g.seed = g.raw["seed"].get<std::uint64_t>();
  if (g.jobs == 0 && g.raw.contains("jobs")) g.jobs = g.raw["jobs"].get<std::size_t>();
}

/// Flag value when given, else the config value.
std::string pick(const std::string& flag, const std::string& from_config) {
  return flag.empty() ? from_config : flag;
}

PipelineConfig pipeline_config() {
  auto p = g.cfg.pipeline;
  if (g.jobs) p.jobs = g.jobs;
  if (g.seed_set) p.schedule_seed = g.seed;
  return p;
}

std::shared_ptr<LlmGateway> gateway() { return make_gateway(g.cfg.gateway, g.mock_script); }

std::shared_ptr<const KnowledgeBase> load_kb(const std::string& dir) {
  if (dir.empty()) throw InvalidArgument("no knowledge base given (--kb or config 'kb')");
  return std::make_shared<KnowledgeBase>(KnowledgeBase::load(dir));
}

RerankModel load_model(const std::string& path) {
  return path.empty() ? RerankModel::base() : RerankModel::load_file(path);
}

void write_text(const std::string& path, const std::string& text) {
  if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  return json::parse(in);
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) spdlog::warn("{}", w);
}

// -- ingest / curate / index ------------------------------------------------

struct IngestOpts {
  std::string corpus, out;
  std::size_t chunk_length = kDefaultChunkLength;
};

int run_ingest(const IngestOpts& o) {
  const auto docs = read_corpus_file(o.corpus);
  std::vector<Chunk> chunks;
  for (const auto& d : docs) {
    auto c = chunk_document(d, o.chunk_length);
    chunks.insert(chunks.end(), std::make_move_iterator(c.begin()), std::make_move_iterator(c.end()));
  }
  write_chunks_file(o.out, chunks);
  std::cout << "documents=" << docs.size() << " chunks=" << chunks.size() << '\n';
  return 0;
}

struct CurateOpts {
  std::string chunks, out;
  double tau_sim = 0.95;
};

int run_curate(const CurateOpts& o) {
  CurationConfig cc;
  cc.tau_sim = o.tau_sim;
  cc.models = g.cfg.pipeline.models;
  if (g.jobs) cc.jobs = g.jobs;
  auto gw = gateway();
  CurationReport report;
  const auto curated = curate_chunks(read_chunks_file(o.chunks), cc, *gw, *default_embedder(), &report);
  write_chunks_file(o.out, curated);
  print_warnings(report.warnings);
  std::cout << "raw=" << report.raw_chunks << " transformed=" << report.transformed << " skipped=" << report.skipped
            << " unresolved=" << report.unresolved << " duplicates_removed=" << report.duplicates_removed
            << " final=" << report.final_chunks << '\n';
  return 0;
}

struct IndexOpts {
  std::string chunks, corpus, out;
  double tau_sim = 0.95;
};

int run_index(const IndexOpts& o) {
  const auto emb = default_embedder();
  KnowledgeBase kb;
  if (!o.corpus.empty()) {
    CurationConfig cc;
    cc.tau_sim = o.tau_sim;
    cc.models = g.cfg.pipeline.models;
    if (g.jobs) cc.jobs = g.jobs;
    auto gw = gateway();
    CurationReport report;
    const auto docs = read_corpus_file(o.corpus);
    kb = build_knowledge_base(docs, cc, *gw, emb, &report);
    print_warnings(report.warnings);
  } else {
    auto chunks = read_chunks_file(o.chunks);
    for (auto& c : chunks)
      if (!c.embedding) c.embedding = emb->embed(c.text);
    kb = KnowledgeBase::from_chunks(std::move(chunks), emb);
  }
  kb.save(o.out);
  std::cout << "chunks=" << kb.size() << " dir=" << o.out << '\n';
  return 0;
}

// -- query / chat -----------------------------------------------------------

struct QueryOpts {
  std::string kb, bank, tools, model, text;
  bool as_json = false;
};

struct Loaded {
  std::shared_ptr<const KnowledgeBase> kb;
  std::optional<MemoryBank> bank;
  std::optional<ToolRegistry> tools;
  RerankModel model;
  std::shared_ptr<LlmGateway> gw;

  Handles handles() const {
    return {kb.get(), bank ? &*bank : nullptr, tools ? &*tools : nullptr, &model, gw.get()};
  }
};

Loaded load_resources(const QueryOpts& o) {
  Loaded l;
  l.kb = load_kb(pick(o.kb, g.cfg.kb_dir));
  if (const auto b = pick(o.bank, g.cfg.bank_path); !b.empty()) l.bank = MemoryBank::load(b, l.kb->embedder_ptr());
  if (const auto t = pick(o.tools, g.cfg.tools_path); !t.empty()) l.tools = ToolRegistry::load(t);
  l.model = load_model(pick(o.model, g.cfg.model_path));
  l.gw = gateway();
  return l;
}

void print_result(const PipelineResult& r, bool as_json) {
  if (as_json) {
    std::cout << r.to_json().dump(2) << '\n';
    return;
  }
  std::cout << r.answer << '\n';
  for (const auto& ev : r.evidence) {
    std::cerr << "  [" << to_string(ev.stream) << "] " << ev.subquery;
    if (ev.error) std::cerr << " (error: " << ev.error_reason << ")";
    std::cerr << '\n';
  }
  std::cerr << "  tokens=" << r.ledger.total_tokens() << " n=" << r.ledger.n << '\n';
  print_warnings(r.warnings);
}

int run_query(const QueryOpts& o) {
  const auto l = load_resources(o);
  print_result(answer_query(o.text, {}, l.handles(), pipeline_config()), o.as_json);
  return 0;
}

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

int run_chat(const QueryOpts& o) {
  const auto l = load_resources(o);
  const auto cfg = pipeline_config();
  std::vector<ConversationTurn> history;
  CostLedger session;
  std::string line;
  std::cerr << "finrag chat; /quit to leave, /cost for the running ledger\n";
  while (true) {
    std::cerr << "> " << std::flush;
    if (!std::getline(std::cin, line)) break;
    if (line == "/quit" || line == "/exit") break;
    if (line == "/cost") {
      std::cout << "tokens=" << session.total_tokens() << " calls=" << session.records().size() << '\n';
      continue;
    }
    if (normalize_whitespace(line).empty()) continue;
    const auto r = answer_query(line, history, l.handles(), cfg);
    print_result(r, o.as_json);
    history.push_back({"user", line, now_ms()});
    history.push_back({"assistant", r.answer, now_ms()});
    session.append(r.ledger);
  }
  return 0;
}

// -- evaluation -------------------------------------------------------------

struct RetrieveOpts {
  std::string kb, queries, model, out, label = "finrag";
  std::size_t k_each = 10;
  bool no_rerank = false;
};

int run_retrieve(const RetrieveOpts& o) {
  const auto kb = load_kb(pick(o.kb, g.cfg.kb_dir));
  const auto queries = read_queries_file(o.queries);
  const auto model = load_model(pick(o.model, g.cfg.model_path));
  const auto run = retrieve_run(queries, *kb, o.k_each, o.no_rerank ? nullptr : &model);
  write_run_file(o.out, run, o.label);
  std::cout << "queries=" << run.size() << " run=" << o.out << '\n';
  return 0;
}

struct EvalOpts {
  std::vector<std::string> runs;
  std::string qrels, baseline, report;
  std::vector<std::size_t> ks;
};

int run_eval(EvalOpts o) {
  const auto qrels = read_qrels_file(o.qrels);
  if (o.ks.empty()) o.ks = {5, 10};
  std::vector<std::pair<std::string, RunResult>> runs;
  for (const auto& path : o.runs) {
    std::string label;
    auto run = read_run_file(path, &label);
    validate_run(run);
    if (label.empty()) label = fs::path(path).stem().string();
    runs.emplace_back(label, std::move(run));
  }
  if (runs.size() == 1 && o.report.empty()) {
    std::cout << std::fixed << std::setprecision(4);
    for (auto k : o.ks) {
      const auto m = evaluate(runs[0].second, qrels, k);
      std::cout << "ndcg@" << k << '=' << m.ndcg << '\n'
                << "mrr@" << k << '=' << m.mrr << '\n'
                << "precision@" << k << '=' << m.precision << '\n'
                << "recall@" << k << '=' << m.recall << '\n';
    }
    return 0;
  }
  const auto report = compare_runs(runs, qrels, o.ks, o.baseline);
  const auto text = report.to_text();
  if (!o.report.empty()) write_text(o.report, text);
  std::cout << text;
  return 0;
}

// -- re-ranker training -----------------------------------------------------

struct TrainOpts {
  std::string data, human, lexicon, queries, kb, init, out, stage = "both", strategy = "complete", general_out;
  std::size_t epochs = 0;
  double lr = 0.0;
};

std::string data_file(const std::string& flag, const std::string& data, const char* name) {
  if (!flag.empty()) return flag;
  if (data.empty()) return {};
  return (fs::path(data) / name).string();
}

TwoStageConfig two_stage_config(const TrainOpts& o) {
  TwoStageConfig c;
  c.seed = g.seed;
  c.stage1.seed = g.seed;
  c.stage2.seed = g.seed;
  if (o.epochs) c.stage1.epochs = c.stage2.epochs = o.epochs;
  if (o.lr > 0) c.stage1.learning_rate = c.stage2.learning_rate = o.lr;
  if (g.jobs) c.jobs = g.jobs;
  c.annotate_model = g.cfg.pipeline.models.annotate;
  c.general_model_path = o.general_out;
  return c;
}

std::vector<std::string> query_texts(const std::string& path) {
  std::vector<std::string> out;
  for (auto& q : read_queries_file(path)) out.push_back(std::move(q.text));
  return out;
}

std::shared_ptr<LlmGateway> annotator(const std::string& data) {
  if (g.mock_script.empty() && !data.empty() && fs::exists(fs::path(data) / "annotator.json")) {
    return std::make_shared<MockGateway>(MockScript::load((fs::path(data) / "annotator.json").string()));
  }
  return gateway();
}

void print_loss(const char* stage, const std::vector<double>& loss) {
  if (loss.empty()) return;
  std::cout << stage << "_loss_first=" << loss.front() << ' ' << stage << "_loss_last=" << loss.back() << '\n';
}

int run_train(const TrainOpts& o) {
  const auto cfg = two_stage_config(o);
  const auto base = load_model(o.init);
  const auto human_path = data_file(o.human, o.data, "human.jsonl");
  const auto lexicon_path = data_file(o.lexicon, o.data, "lexicon.json");
  const auto queries_path = data_file(o.queries, o.data, "queries_train.tsv");
  const auto strategy = parse_strategy(o.strategy);

  std::shared_ptr<const KnowledgeBase> kb;
  const auto need_target = o.stage != "s1";
  if (need_target) {
    const auto kb_dir = pick(o.kb, g.cfg.kb_dir);
    if (!kb_dir.empty()) {
      kb = load_kb(kb_dir);
    } else if (!o.data.empty() && fs::exists(fs::path(o.data) / "chunks.jsonl")) {
      auto chunks = read_chunks_file((fs::path(o.data) / "chunks.jsonl").string());
      const auto emb = default_embedder();
      for (auto& c : chunks)
        if (!c.embedding) c.embedding = emb->embed(c.text);
      kb = std::make_shared<KnowledgeBase>(KnowledgeBase::from_chunks(std::move(chunks), emb));
    } else {
      throw InvalidArgument("stage " + o.stage + " needs --kb or --data");
    }
  }
  const FeatureExtractor features(kb ? kb->embedder() : *default_embedder());

  RerankModel result;
  if (o.stage == "s1") {
    const auto tr = train_general(base, read_quadruples_file(human_path), strategy,
                                  EntityLexicon::from_json(read_json(lexicon_path)), cfg, features);
    print_loss("s1", tr.epoch_loss);
    result = tr.model;
  } else if (o.stage == "s2" || o.stage == "control-s2-only") {
    auto ann = annotator(o.data);
    const auto ds = build_stage2_dataset(query_texts(queries_path), *kb, *ann, cfg);
    print_warnings(ds.warnings);
    const auto tr = train_specialized(o.stage == "s2" ? base : RerankModel::base(), ds.quadruples, cfg, features);
    print_loss("s2", tr.epoch_loss);
    result = tr.model;
  } else if (o.stage == "both") {
    auto ann = annotator(o.data);
    const auto human = read_quadruples_file(human_path);
    const auto targets = query_texts(queries_path);
    const auto tr = two_stage_pipeline(base, human, strategy, EntityLexicon::from_json(read_json(lexicon_path)),
                                       targets, *kb, *ann, cfg);
    print_warnings(tr.warnings);
    print_loss("s1", tr.stage1_loss);
    print_loss("s2", tr.stage2_loss);
    result = tr.specialized;
  } else {
    throw InvalidArgument("unknown stage " + o.stage);
  }
  if (const auto parent = fs::path(o.out).parent_path(); !parent.empty()) fs::create_directories(parent);
  result.save_file(o.out);
  std::cout << "model=" << o.out << " version=" << result.version << '\n';
  return 0;
}

struct AnnotateOpts {
  std::string kb, queries, out, data;
};

int run_annotate(const AnnotateOpts& o) {
  const auto kb = load_kb(pick(o.kb, g.cfg.kb_dir));
  TrainOpts t;
  auto cfg = two_stage_config(t);
  auto ann = annotator(o.data);
  const auto ds = build_stage2_dataset(query_texts(o.queries), *kb, *ann, cfg);
  print_warnings(ds.warnings);
  write_quadruples_file(o.out, ds.quadruples);
  std::cout << "quadruples=" << ds.quadruples.size() << " out=" << o.out << '\n';
  return 0;
}

// -- memory bank ------------------------------------------------------------

struct BankInitOpts {
  std::string kb, questions, model, out;
  std::vector<std::string> periods, stop_entities;
};

int run_bank_init(const BankInitOpts& o) {
  const auto kb = load_kb(pick(o.kb, g.cfg.kb_dir));
  const auto spec = read_json(o.questions);
  std::vector<BankQuestion> qs;
  const auto& list = spec.is_array() ? spec : spec.at("questions");
  for (const auto& q : list) {
    if (q.is_string()) {
      qs.push_back({q.get<std::string>(), {}});
    } else {
      qs.push_back({q.at("text").get<std::string>(), q.value("subject", "")});
    }
  }
  auto periods = o.periods;
  if (periods.empty() && spec.is_object() && spec.contains("periods")) periods = spec["periods"].get<std::vector<std::string>>();
  auto stops = o.stop_entities;
  if (stops.empty() && spec.is_object() && spec.contains("stop_entities")) stops = spec["stop_entities"].get<std::vector<std::string>>();
  if (periods.empty()) throw InvalidArgument("no periods given");
  auto gw = gateway();
  std::vector<std::string> warnings;
  const auto bank = init_bank(qs, periods, *kb, load_model(pick(o.model, g.cfg.model_path)), *gw, pipeline_config(),
                              stops, &warnings);
  print_warnings(warnings);
  const auto out = pick(o.out, g.cfg.bank_path);
  if (out.empty()) throw InvalidArgument("no output path (--out or config 'bank')");
  bank.save(out);
  std::cout << "questions=" << bank.size() << " periods=" << bank.periods().size() << " cells=" << bank.cells().size()
            << " bank=" << out << '\n';
  return 0;
}

struct BankVerifyOpts {
  std::string bank, question, period, value;
  bool value_set = false;
};

int run_bank_verify(const BankVerifyOpts& o) {
  const auto path = pick(o.bank, g.cfg.bank_path);
  auto bank = MemoryBank::load(path);
  std::optional<std::size_t> qi;
  if (!o.question.empty() && std::all_of(o.question.begin(), o.question.end(), ::isdigit)) {
    qi = std::stoul(o.question);
    if (*qi >= bank.size()) qi.reset();
  } else {
    qi = bank.find_question(o.question);
  }
  if (!qi) throw NotFound("unknown question: " + o.question);
  const auto pi = bank.find_period(o.period);
  if (!pi) throw NotFound("unknown period: " + o.period);
  bank.verify(*qi, *pi, o.value_set ? std::optional<std::string>(o.value) : std::nullopt);
  bank.save(path);
  const auto* c = bank.cell(*qi, *pi);
  std::cout << "verified question=" << *qi << " period=" << bank.periods()[*pi] << " value=" << c->value << '\n';
  return 0;
}

struct BankLookupOpts {
  std::string bank, text, period;
};

int run_bank_lookup(const BankLookupOpts& o) {
  const auto bank = MemoryBank::load(pick(o.bank, g.cfg.bank_path));
  const auto th = g.cfg.pipeline.thresholds;
  const auto r = lookup(o.text, o.period.empty() ? std::nullopt : std::optional<std::string>(o.period), bank, th);
  if (!r.hit()) {
    std::cout << "miss: " << r.miss_reason << '\n';
    return 1;
  }
  std::cout << r.answer->to_json().dump(2) << '\n';
  return 0;
}

// -- misc -------------------------------------------------------------------

int run_cost(int n, int t, bool as_json) {
  const auto e = estimate_cost(n, t);
  if (as_json) {
    std::cout << e.to_json().dump(2) << '\n';
    return 0;
  }
  for (const auto& s : e.steps) std::cout << "  " << std::left << std::setw(24) << s.step << s.tokens << '\n';
  std::cout << "tokens=" << e.tokens << '\n';
  std::cout << "usd_per_1k_queries=" << e.usd_milli_per_k_queries / 1000 << '.' << std::setfill('0') << std::setw(3)
            << std::right << e.usd_milli_per_k_queries % 1000 << '\n';
  return 0;
}

Service* g_service = nullptr;

extern "C" void on_signal(int) {
  if (g_service) g_service->stop();
}

struct ServeOpts {
  std::string host, kb, bank, model, tools, session_dir;
  int port = 0;
};

int run_serve(const ServeOpts& o) {
  auto cfg = g.cfg;
  cfg.host = pick(o.host, cfg.host);
  if (o.port) cfg.port = o.port;
  cfg.kb_dir = pick(o.kb, cfg.kb_dir);
  cfg.bank_path = pick(o.bank, cfg.bank_path);
  cfg.model_path = pick(o.model, cfg.model_path);
  cfg.tools_path = pick(o.tools, cfg.tools_path);
  cfg.session_dir = pick(o.session_dir, cfg.session_dir);
  cfg.pipeline = pipeline_config();
  auto svc = Service::from_config(cfg, g.mock_script);
  g_service = svc.get();
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  spdlog::info("listening on {}:{}", cfg.host, cfg.port);
  std::cerr << "listening on http://" << cfg.host << ':' << cfg.port << '\n';
  if (!svc->listen(cfg.host, cfg.port)) {
    std::cerr << "error: cannot bind " << cfg.host << ':' << cfg.port << '\n';
    return 1;
  }
  return 0;
}

int run_synth(const std::string& out) {
  SyntheticConfig sc;
  if (g.seed_set) sc.seed = g.seed;
  const auto d = generate_synthetic(sc);
  d.write(out);
  std::cout << "chunks=" << d.chunks.size() << " train_queries=" << d.train_queries.size()
            << " eval_queries=" << d.eval_queries.size() << " dir=" << out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  auto logger = spdlog::stderr_color_mt("finrag");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);

  CLI::App app{"Financial document QA: curation, retrieval, re-ranking, memory bank, evaluation"};
  app.set_version_flag("--version", std::string(build_version()));
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.add_option("--config", g.config_path, "JSON config file (flags win)")->check(CLI::ExistingFile);
  app.add_option("--mock-script", g.mock_script, "scripted gateway responses")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "seed for every random choice");
  app.add_option("--jobs", g.jobs, "worker cap")->check(CLI::PositiveNumber);
  app.add_flag("-v,--verbose", g.verbose, "info-level logging");

  std::function<int()> action;

  IngestOpts ingest;
  auto* c_ingest = app.add_subcommand("ingest", "split a corpus into fixed-length chunks");
  c_ingest->add_option("--corpus", ingest.corpus, "corpus JSONL")->required()->check(CLI::ExistingFile);
  c_ingest->add_option("--out", ingest.out, "chunks JSONL")->required();
  c_ingest->add_option("--chunk-length", ingest.chunk_length)->check(CLI::PositiveNumber);
  c_ingest->callback([&] { action = [&] { return run_ingest(ingest); }; });

  CurateOpts curate;
  auto* c_curate = app.add_subcommand("curate", "transform, resolve, summarize and deduplicate chunks");
  c_curate->add_option("--chunks", curate.chunks)->required()->check(CLI::ExistingFile);
  c_curate->add_option("--out", curate.out)->required();
  c_curate->add_option("--tau-sim", curate.tau_sim)->check(CLI::Range(0.0, 1.0));
  c_curate->callback([&] { action = [&] { return run_curate(curate); }; });

  IndexOpts index;
  auto* c_index = app.add_subcommand("index", "build the sparse, dense and metadata indexes");
  auto* idx_chunks = c_index->add_option("--chunks", index.chunks, "curated chunks JSONL")->check(CLI::ExistingFile);
  auto* idx_corpus = c_index->add_option("--corpus", index.corpus, "raw corpus; runs curation first")
                         ->check(CLI::ExistingFile);
  idx_chunks->excludes(idx_corpus);
  c_index->add_option("--out", index.out, "knowledge base directory")->required();
  c_index->add_option("--tau-sim", index.tau_sim)->check(CLI::Range(0.0, 1.0));
  c_index->callback([&] {
    if (index.chunks.empty() && index.corpus.empty()) throw CLI::RequiredError("--chunks or --corpus");
    action = [&] { return run_index(index); };
  });

  QueryOpts query;
  const auto add_query_opts = [&](CLI::App* c) {
    c->add_option("--kb", query.kb, "knowledge base directory");
    c->add_option("--bank", query.bank, "memory bank JSON");
    c->add_option("--tools", query.tools, "tool registry JSON");
    c->add_option("--model", query.model, "re-ranker model file");
    c->add_flag("--json", query.as_json, "print the full result as JSON");
  };
  auto* c_query = app.add_subcommand("query", "answer one question");
  add_query_opts(c_query);
  c_query->add_option("text", query.text)->required();
  c_query->callback([&] { action = [&] { return run_query(query); }; });

  auto* c_chat = app.add_subcommand("chat", "multi-turn terminal session");
  add_query_opts(c_chat);
  c_chat->callback([&] { action = [&] { return run_chat(query); }; });

  RetrieveOpts retrieve;
  auto* c_retrieve = app.add_subcommand("retrieve", "write a ranked run for a query file");
  c_retrieve->add_option("--kb", retrieve.kb);
  c_retrieve->add_option("--queries", retrieve.queries, "id<TAB>text per line")->required()->check(CLI::ExistingFile);
  c_retrieve->add_option("--model", retrieve.model, "re-ranker model file");
  c_retrieve->add_option("--k-each", retrieve.k_each)->check(CLI::PositiveNumber);
  c_retrieve->add_option("--label", retrieve.label);
  c_retrieve->add_flag("--no-rerank", retrieve.no_rerank, "keep the fused retrieval order");
  c_retrieve->add_option("--out", retrieve.out)->required();
  c_retrieve->callback([&] { action = [&] { return run_retrieve(retrieve); }; });

  EvalOpts eval;
  auto* c_eval = app.add_subcommand("eval", "NDCG, MRR, precision and recall at k");
  c_eval->add_option("--run", eval.runs, "run file (repeatable)")->required()->check(CLI::ExistingFile);
  c_eval->add_option("--qrels", eval.qrels)->required()->check(CLI::ExistingFile);
  c_eval->add_option("--k", eval.ks, "cutoff (repeatable; default 5 and 10)")->check(CLI::PositiveNumber);
  c_eval->add_option("--baseline", eval.baseline, "run label for deltas");
  c_eval->add_option("--report", eval.report, "write the comparison report here");
  c_eval->callback([&] { action = [&] { return run_eval(eval); }; });

  TrainOpts train;
  auto* c_train = app.add_subcommand("train-reranker", "two-stage re-ranker adaptation");
  c_train->add_option("--stage", train.stage)
      ->check(CLI::IsMember({"s1", "s2", "both", "control-s2-only"}));
  c_train->add_option("--strategy", train.strategy, "product-person | company-name | complete");
  c_train->add_option("--data", train.data, "directory written by `synth`")->check(CLI::ExistingDirectory);
  c_train->add_option("--human", train.human, "human quadruples JSONL");
  c_train->add_option("--lexicon", train.lexicon, "entity lexicon JSON");
  c_train->add_option("--queries", train.queries, "target queries, id<TAB>text");
  c_train->add_option("--kb", train.kb, "target knowledge base");
  c_train->add_option("--init", train.init, "starting model (default: base)");
  c_train->add_option("--general-out", train.general_out, "also save the stage-1 model");
  c_train->add_option("--epochs", train.epochs);
  c_train->add_option("--lr", train.lr);
  c_train->add_option("--out", train.out)->required();
  c_train->callback([&] { action = [&] { return run_train(train); }; });

  AnnotateOpts annotate;
  auto* c_annotate = app.add_subcommand("annotate", "label retrieved chunks for target queries");
  c_annotate->add_option("--kb", annotate.kb);
  c_annotate->add_option("--queries", annotate.queries)->required()->check(CLI::ExistingFile);
  c_annotate->add_option("--data", annotate.data, "use <data>/annotator.json when no mock script is given");
  c_annotate->add_option("--out", annotate.out)->required();
  c_annotate->callback([&] { action = [&] { return run_annotate(annotate); }; });

  BankInitOpts bank_init;
  auto* c_binit = app.add_subcommand("bank-init", "populate a memory bank (all cells unverified)");
  c_binit->add_option("--kb", bank_init.kb);
  c_binit->add_option("--questions", bank_init.questions, "JSON list or {questions, periods, stop_entities}")
      ->required()
      ->check(CLI::ExistingFile);
  c_binit->add_option("--periods", bank_init.periods)->delimiter(',');
  c_binit->add_option("--stop-entities", bank_init.stop_entities)->delimiter(',');
  c_binit->add_option("--model", bank_init.model);
  c_binit->add_option("--out", bank_init.out);
  c_binit->callback([&] { action = [&] { return run_bank_init(bank_init); }; });

  BankVerifyOpts bank_verify;
  auto* c_bverify = app.add_subcommand("bank-verify", "mark a cell verified, optionally correcting it");
  c_bverify->add_option("--bank", bank_verify.bank);
  c_bverify->add_option("--question", bank_verify.question, "question text or index")->required();
  c_bverify->add_option("--period", bank_verify.period)->required();
  auto* value_opt = c_bverify->add_option("--value", bank_verify.value, "corrected value");
  c_bverify->callback([&] {
    bank_verify.value_set = value_opt->count() > 0;
    action = [&] { return run_bank_verify(bank_verify); };
  });

  BankLookupOpts bank_lookup;
  auto* c_blookup = app.add_subcommand("bank-lookup", "match a question against the bank");
  c_blookup->add_option("--bank", bank_lookup.bank);
  c_blookup->add_option("--period", bank_lookup.period);
  c_blookup->add_option("text", bank_lookup.text)->required();
  c_blookup->callback([&] { action = [&] { return run_bank_lookup(bank_lookup); }; });

  int cost_n = 1, cost_t = 0;
  bool cost_json = false;
  auto* c_cost = app.add_subcommand("cost-estimate", "analytic token and dollar cost per query");
  c_cost->add_option("--n", cost_n, "sub-queries")->check(CLI::PositiveNumber);
  c_cost->add_option("--t", cost_t, "tools")->check(CLI::NonNegativeNumber);
  c_cost->add_flag("--json", cost_json);
  c_cost->callback([&] { action = [&] { return run_cost(cost_n, cost_t, cost_json); }; });

  ServeOpts serve;
  auto* c_serve = app.add_subcommand("serve", "HTTP JSON API");
  c_serve->add_option("--host", serve.host);
  c_serve->add_option("--port", serve.port)->check(CLI::Range(1, 65535));
  c_serve->add_option("--kb", serve.kb);
  c_serve->add_option("--bank", serve.bank);
  c_serve->add_option("--model", serve.model);
  c_serve->add_option("--tools", serve.tools);
  c_serve->add_option("--session-dir", serve.session_dir);
  c_serve->callback([&] { action = [&] { return run_serve(serve); }; });

  std::string synth_out;
  auto* c_synth = app.add_subcommand("synth", "write the seeded synthetic corpus and labels");
  c_synth->add_option("--out", synth_out)->required();
  c_synth->callback([&] { action = [&] { return run_synth(synth_out); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  g.seed_set = app.get_option("--seed")->count() > 0;
  if (g.verbose) spdlog::set_level(spdlog::level::info);
  try {
    load_config();
    return action();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
