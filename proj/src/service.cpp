#include "finrag/service.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <spdlog/spdlog.h>

#include "finrag/error.hpp"

#include "httplib.h"

#ifndef FINRAG_VERSION
#define FINRAG_VERSION "0.0.0"
#endif

namespace finrag {

using nlohmann::json;

std::string_view build_version() { return FINRAG_VERSION; }

json error_body(const std::string& code, const std::string& message) {
  return {{"code", code}, {"message", message}};
}

namespace {

std::string resolve(const std::string& base, const std::string& p) {
  if (p.empty() || base.empty() || std::filesystem::path(p).is_absolute()) return p;
  return (std::filesystem::path(base) / p).string();
}

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

Service::Reply bad_request(const std::string& msg) { return {400, error_body("bad_request", msg)}; }
Service::Reply not_found(const std::string& msg) { return {404, error_body("not_found", msg)}; }

}  // namespace

ServiceConfig ServiceConfig::from_json(const json& j, const std::string& base_dir) {
  ServiceConfig c;
  try {
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    c.kb_dir = resolve(base_dir, j.value("kb", std::string()));
    c.bank_path = resolve(base_dir, j.value("bank", std::string()));
    c.model_path = resolve(base_dir, j.value("model", std::string()));
    c.tools_path = resolve(base_dir, j.value("tools", std::string()));
    c.session_dir = resolve(base_dir, j.value("session_dir", std::string()));
    if (j.contains("gateway")) {
      c.gateway = j.at("gateway");
      if (c.gateway.contains("script")) {
        c.gateway["script"] = resolve(base_dir, c.gateway["script"].get<std::string>());
      }
    }
    if (j.contains("pipeline")) c.pipeline = PipelineConfig::from_json(j.at("pipeline"));
  } catch (const json::exception& e) {
    throw FormatError(std::string("service config: ") + e.what());
  }
  if (c.port < 0 || c.port > 65535) throw InvalidArgument("service config: port out of range");
  return c;
}

ServiceConfig ServiceConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  try {
    return from_json(json::parse(in), std::filesystem::path(path).parent_path().string());
  } catch (const json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
}

json Session::to_json() const {
  json h = json::array();
  for (const auto& t : history) h.push_back({{"role", t.role}, {"text", t.text}, {"timestamp_ms", t.timestamp_ms}});
  return {{"session_id", id}, {"history", h}, {"ledger", ledger.to_json()}};
}

Service::Service(std::shared_ptr<const KnowledgeBase> kb, std::shared_ptr<MemoryBank> bank,
                 std::shared_ptr<const ToolRegistry> tools, RerankModel model, std::shared_ptr<LlmGateway> gateway,
                 PipelineConfig cfg)
    : kb_(std::move(kb)),
      bank_(std::move(bank)),
      tools_(std::move(tools)),
      model_(std::move(model)),
      gateway_(std::move(gateway)),
      cfg_(std::move(cfg)) {
  if (!gateway_) throw InvalidArgument("service needs a gateway");
  model_.validate();
  cfg_.validate();
}

Service::~Service() { stop(); }

std::unique_ptr<Service> Service::from_config(const ServiceConfig& cfg, const std::string& mock_script) {
  std::shared_ptr<const KnowledgeBase> kb;
  if (!cfg.kb_dir.empty()) kb = std::make_shared<KnowledgeBase>(KnowledgeBase::load(cfg.kb_dir));
  std::shared_ptr<MemoryBank> bank;
  if (!cfg.bank_path.empty()) {
    bank = std::make_shared<MemoryBank>(MemoryBank::load(cfg.bank_path, kb ? kb->embedder_ptr() : nullptr));
  }
  std::shared_ptr<const ToolRegistry> tools;
  if (!cfg.tools_path.empty()) tools = std::make_shared<ToolRegistry>(ToolRegistry::load(cfg.tools_path));
  auto model = cfg.model_path.empty() ? RerankModel::base() : RerankModel::load_file(cfg.model_path);
  auto gateway = make_gateway(cfg.gateway, mock_script);
  auto svc = std::make_unique<Service>(kb, bank, tools, std::move(model), std::move(gateway), cfg.pipeline);
  svc->set_bank_path(cfg.bank_path);
  svc->set_session_dir(cfg.session_dir);
  return svc;
}

std::shared_ptr<Session> Service::find_session(const std::string& id) const {
  std::shared_lock lock(sessions_mutex_);
  const auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

void Service::persist(const Session& s) const {
  if (session_dir_.empty()) return;
  try {
    std::filesystem::create_directories(session_dir_);
    std::ofstream out(std::filesystem::path(session_dir_) / (s.id + ".json"), std::ios::trunc);
    out << s.to_json().dump(2) << '\n';
  } catch (const std::exception& e) {
    spdlog::warn("could not persist session {}: {}", s.id, e.what());
  }
}

Service::Reply Service::create_session() {
  auto s = std::make_shared<Session>();
  {
    std::unique_lock lock(sessions_mutex_);
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%06zu", next_session_++);
    s->id = buf;
    s->ledger.t = tools_ ? tools_->size() : 0;
    sessions_[s->id] = s;
  }
  persist(*s);
  return {201, {{"session_id", s->id}}};
}

Service::Reply Service::query(const std::string& session_id, const json& body) {
  const auto s = find_session(session_id);
  if (!s) return not_found("unknown session " + session_id);
  if (!body.is_object() || !body.contains("text") || !body["text"].is_string()) {
    return bad_request("body must be an object with a string field 'text'");
  }
  const auto text = body["text"].get<std::string>();
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return bad_request("query text is empty");

  std::lock_guard session_lock(s->mutex);
  PipelineResult r;
  try {
    std::shared_lock bank_lock(bank_mutex_);
    Handles h{kb_.get(), bank_.get(), tools_.get(), &model_, gateway_.get()};
    r = answer_query(text, s->history, h, cfg_);
  } catch (const std::exception& e) {
    return {500, error_body("pipeline_error", e.what())};
  }
  s->history.push_back({"user", text, now_ms()});
  s->history.push_back({"assistant", r.answer, now_ms()});
  s->ledger.append(r.ledger);
  s->ledger.n += r.ledger.n;
  persist(*s);

  json evidence = json::array();
  for (const auto& e : r.evidence) evidence.push_back(e.to_json());
  json subs = json::array();
  for (const auto& sq : r.subqueries) subs.push_back({{"text", sq.text}, {"route", to_string(sq.route)}});
  return {200,
          {{"session_id", s->id},
           {"answer", r.answer},
           {"normalized", r.normalized},
           {"subqueries", subs},
           {"evidence", evidence},
           {"ledger_delta", r.ledger.to_json()},
           {"warnings", r.warnings}}};
}

Service::Reply Service::get_session(const std::string& session_id) const {
  const auto s = find_session(session_id);
  if (!s) return not_found("unknown session " + session_id);
  std::lock_guard lock(s->mutex);
  return {200, s->to_json()};
}

Service::Reply Service::memory_bank() const {
  if (!bank_) return {200, MemoryBank().to_json()};
  std::shared_lock lock(bank_mutex_);
  return {200, bank_->to_json()};
}

Service::Reply Service::verify(const json& body) {
  if (!bank_) return not_found("no memory bank loaded");
  if (!body.is_object() || !body.contains("question") || !body.contains("period")) {
    return bad_request("body must name 'question' and 'period'");
  }
  std::unique_lock lock(bank_mutex_);
  std::optional<std::size_t> qi;
  const auto& q = body["question"];
  if (q.is_number_unsigned() || q.is_number_integer()) {
    const auto v = q.get<long long>();
    if (v >= 0 && static_cast<std::size_t>(v) < bank_->size()) qi = static_cast<std::size_t>(v);
  } else if (q.is_string()) {
    qi = bank_->find_question(q.get<std::string>());
  }
  if (!qi) return not_found("unknown question");
  if (!body["period"].is_string()) return bad_request("'period' must be a string");
  const auto pi = bank_->find_period(body["period"].get<std::string>());
  if (!pi) return not_found("unknown period");
  std::optional<std::string> value;
  if (body.contains("value")) {
    if (!body["value"].is_string()) return bad_request("'value' must be a string");
    value = body["value"].get<std::string>();
  }
  try {
    bank_->verify(*qi, *pi, value);
  } catch (const NotFound& e) {
    return not_found(e.what());
  }
  if (!bank_path_.empty()) {
    try {
      bank_->save(bank_path_);
    } catch (const std::exception& e) {
      return {500, error_body("io_error", e.what())};
    }
  }
  const Cell* c = bank_->cell(*qi, *pi);
  return {200,
          {{"question", bank_->questions()[*qi].text},
           {"period", bank_->periods()[*pi]},
           {"value", c->value},
           {"sources", c->source_chunk_ids},
           {"verified", c->verified}}};
}

Service::Reply Service::cost_estimate(const std::string& n, const std::string& t) const {
  int nv = 1;
  int tv = 0;
  try {
    std::size_t used = 0;
    if (!n.empty()) {
      nv = std::stoi(n, &used);
      if (used != n.size()) throw std::invalid_argument(n);
    }
    if (!t.empty()) {
      tv = std::stoi(t, &used);
      if (used != t.size()) throw std::invalid_argument(t);
    }
  } catch (const std::exception&) {
    return bad_request("n and t must be integers");
  }
  try {
    return {200, estimate_cost(nv, tv).to_json()};
  } catch (const InvalidArgument& e) {
    return bad_request(e.what());
  }
}

Service::Reply Service::health() const {
  return {200,
          {{"status", "ok"},
           {"version", build_version()},
           {"chunks", kb_ ? kb_->size() : 0},
           {"bank_questions", bank_ ? bank_->size() : 0},
           {"tools", tools_ ? tools_->size() : 0}}};
}

void Service::install_routes() {
  server_ = std::make_unique<httplib::Server>();
  auto& srv = *server_;
  const auto send = [](httplib::Response& res, const Reply& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                           {"Access-Control-Allow-Headers", "Content-Type"},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  srv.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
  srv.Get("/healthz", [this, send](const httplib::Request&, httplib::Response& res) { send(res, health()); });
  srv.Post("/sessions", [this, send](const httplib::Request&, httplib::Response& res) { send(res, create_session()); });
  srv.Post(R"(/sessions/([^/]+)/query)", [this, send](const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception&) {
      send(res, bad_request("body is not valid JSON"));
      return;
    }
    send(res, query(req.matches[1], body));
  });
  srv.Get(R"(/sessions/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, get_session(req.matches[1]));
  });
  srv.Get("/memory-bank", [this, send](const httplib::Request&, httplib::Response& res) { send(res, memory_bank()); });
  srv.Post("/memory-bank/verify", [this, send](const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception&) {
      send(res, bad_request("body is not valid JSON"));
      return;
    }
    send(res, verify(body));
  });
  srv.Get("/cost-estimate", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, cost_estimate(req.get_param_value("n"), req.get_param_value("t")));
  });
  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      res.set_content(error_body(res.status == 404 ? "not_found" : "error", httplib::status_message(res.status)).dump(),
                      "application/json");
    }
  });
  srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
    std::string msg = "internal error";
    try {
      if (ep) std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      msg = e.what();
    } catch (...) {
    }
    res.status = 500;
    res.set_content(error_body("internal", msg).dump(), "application/json");
  });
}

bool Service::listen(const std::string& host, int port) {
  install_routes();
  spdlog::info("serving on {}:{}", host, port);
  return server_->listen(host, port);
}

int Service::bind_any(const std::string& host) {
  install_routes();
  return server_->bind_to_any_port(host);
}

bool Service::serve_bound() {
  if (!server_) return false;
  return server_->listen_after_bind();
}

void Service::stop() {
  if (server_) server_->stop();
}

}  // namespace finrag
