#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "finrag/knowledge_base.hpp"
#include "finrag/llm_gateway.hpp"
#include "finrag/memory_bank.hpp"
#include "finrag/query_pipeline.hpp"
#include "finrag/reranker.hpp"

namespace httplib {
class Server;
}

namespace finrag {

std::string_view build_version();

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string kb_dir;
  std::string bank_path;
  std::string model_path;
  std::string tools_path;
  std::string session_dir;
  nlohmann::json gateway = {{"backend", "mock"}};
  PipelineConfig pipeline;

  /// Relative paths resolve against base_dir.
  static ServiceConfig from_json(const nlohmann::json& j, const std::string& base_dir = {});
  static ServiceConfig load(const std::string& path);
};

struct Session {
  std::string id;
  std::vector<ConversationTurn> history;
  CostLedger ledger;
  std::mutex mutex;

  nlohmann::json to_json() const;
};

/// JSON API over one knowledge base, bank, tool registry and re-ranker.
/// Requests on different sessions run concurrently; requests on one
/// session are serialized.
class Service {
 public:
  Service(std::shared_ptr<const KnowledgeBase> kb, std::shared_ptr<MemoryBank> bank,
          std::shared_ptr<const ToolRegistry> tools, RerankModel model, std::shared_ptr<LlmGateway> gateway,
          PipelineConfig cfg = {});
  ~Service();

  /// Loads every resource named in the config; throws on failure.
  static std::unique_ptr<Service> from_config(const ServiceConfig& cfg, const std::string& mock_script = {});

  void set_bank_path(std::string path) { bank_path_ = std::move(path); }
  void set_session_dir(std::string dir) { session_dir_ = std::move(dir); }

  struct Reply {
    int status = 200;
    nlohmann::json body;
  };

  Reply create_session();
  Reply query(const std::string& session_id, const nlohmann::json& body);
  Reply get_session(const std::string& session_id) const;
  Reply memory_bank() const;
  Reply verify(const nlohmann::json& body);
  Reply cost_estimate(const std::string& n, const std::string& t) const;
  Reply health() const;

  /// Binds and serves until stop(). Returns false when binding fails.
  bool listen(const std::string& host, int port);
  /// Binds to an ephemeral port; returns it, or -1.
  int bind_any(const std::string& host);
  /// Serves on a socket bound by bind_any (blocking).
  bool serve_bound();
  void stop();

 private:
  void install_routes();
  std::shared_ptr<Session> find_session(const std::string& id) const;
  void persist(const Session& s) const;

  std::shared_ptr<const KnowledgeBase> kb_;
  std::shared_ptr<MemoryBank> bank_;
  std::shared_ptr<const ToolRegistry> tools_;
  RerankModel model_;
  std::shared_ptr<LlmGateway> gateway_;
  PipelineConfig cfg_;
  std::string bank_path_;
  std::string session_dir_;

  mutable std::shared_mutex bank_mutex_;
  mutable std::shared_mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::size_t next_session_ = 1;

  std::unique_ptr<httplib::Server> server_;
};

nlohmann::json error_body(const std::string& code, const std::string& message);

}  // namespace finrag
