#pragma once

#include <chrono>
#include <cstddef>
#include <memory>
#include <optional>
#include <semaphore>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace finrag {

/// Task tags carried on every request. The mock dispatches default
/// behavior on them; remote backends ignore them.
namespace task {
inline constexpr std::string_view kTransform = "transform";
inline constexpr std::string_view kCoreference = "coreference";
inline constexpr std::string_view kSummary = "summary";
inline constexpr std::string_view kRewrite = "rewrite";
inline constexpr std::string_view kDecompose = "decompose";
inline constexpr std::string_view kToolSelect = "tool_select";
inline constexpr std::string_view kAnswer = "answer";
inline constexpr std::string_view kDirect = "direct";
inline constexpr std::string_view kMerge = "merge";
inline constexpr std::string_view kAnnotate = "annotate";
inline constexpr std::string_view kBankInit = "bank_init";
}  // namespace task

struct ChatMessage {
  std::string role;
  std::string content;
};

/// Function-calling declaration offered to the model.
struct ToolSchema {
  std::string name;
  std::string description;
  nlohmann::json parameters = nlohmann::json::object();
};

struct ChatRequest {
  std::string task;
  std::string model;
  std::vector<ChatMessage> messages;
  std::vector<ToolSchema> tools;
  double temperature = 0.0;

  /// Content of the last user message (the text being operated on by
  /// convention; instructions travel in the system message).
  const std::string& payload() const;
  std::size_t char_count() const;
};

struct ToolCall {
  std::string name;
  nlohmann::json arguments = nlohmann::json::object();
};

struct Usage {
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
  std::size_t total() const { return prompt_tokens + completion_tokens; }
};

struct ChatResponse {
  std::optional<std::string> text;
  std::vector<ToolCall> tool_calls;
  Usage usage;
  bool usage_estimated = false;
};

/// ceil(chars / 4) over the whole exchange; prompt gets ceil(prompt/4) and
/// completion the remainder.
Usage estimate_usage(const ChatRequest& req, const ChatResponse& resp);

class GatewayError : public std::runtime_error {
 public:
  GatewayError(const std::string& what, int http_status = 0, int retries = 0)
      : std::runtime_error(what), http_status_(http_status), retries_(retries) {}
  int http_status() const { return http_status_; }
  int retries() const { return retries_; }

 private:
  int http_status_;
  int retries_;
};

/// Single chokepoint for LLM traffic. Implementations are shareable across
/// threads.
class LlmGateway {
 public:
  virtual ~LlmGateway() = default;
  virtual ChatResponse complete(const ChatRequest& req) = 0;
};

/// Model labels for each pipeline slot.
struct ModelSlots {
  std::string transform = "gpt-4o";
  std::string coreference = "gpt-4o";
  std::string summary = "gpt-4o";
  std::string rewrite = "deepseek-v3";
  std::string decompose = "deepseek-v3";
  std::string tool = "deepseek-v3";
  std::string answer = "deepseek-v3";
  std::string merge = "deepseek-v3";
  std::string annotate = "gpt-4o";
  std::string reasoning = "deepseek-r1";

  static ModelSlots from_json(const nlohmann::json& j);
};

/// One scripted rule. A rule matches when every non-empty selector matches:
/// `task` and `model` exactly, `contains` as a substring of any message.
/// Response text may use {{payload}} and {{first30}} placeholders.
struct MockRule {
  std::string task;
  std::string model;
  std::string contains;
  std::optional<std::string> text;
  std::vector<ToolCall> tool_calls;
  bool echo = false;
  bool fail = false;
  std::string fail_message = "scripted failure";
};

struct MockScript {
  std::vector<MockRule> rules;
  std::optional<MockRule> fallback;

  static MockScript from_json(const nlohmann::json& j);
  static MockScript load(const std::string& path);
};

/// Deterministic scripted backend. First matching rule wins; with no match
/// the fallback is used, else a built-in per-task default:
///   summary     -> first 30 words of the payload
///   decompose   -> empty text (caller uses its rule-based router)
///   tool_select -> keyword pick among offered tools, args {"query": payload}
///   otherwise   -> echo the payload (identity)
class MockGateway final : public LlmGateway {
 public:
  MockGateway() = default;
  explicit MockGateway(MockScript script) : script_(std::move(script)) {}

  ChatResponse complete(const ChatRequest& req) override;
  const MockScript& script() const { return script_; }

 private:
  MockScript script_;
};

/// Keywords by which a tool is recognized in free text: name tokens split
/// on '_' plus description words of five or more letters, minus stopwords.
std::vector<std::string> tool_keywords(const ToolSchema& tool);
bool tool_matches_text(const ToolSchema& tool, std::string_view text);

struct HttpGatewayConfig {
  std::string base_url = "https://api.openai.com";
  std::string path = "/v1/chat/completions";
  std::string api_key_env = "OPENAI_API_KEY";
  int max_retries = 2;
  std::chrono::milliseconds backoff{250};
  std::chrono::seconds timeout{120};
  std::ptrdiff_t max_concurrent = 4;

  static HttpGatewayConfig from_json(const nlohmann::json& j);
};

/// OpenAI-compatible chat-completions client. Retries 5xx and transport
/// errors with exponential backoff; 4xx fail immediately.
class HttpGateway final : public LlmGateway {
 public:
  explicit HttpGateway(HttpGatewayConfig cfg);
  ~HttpGateway() override;

  ChatResponse complete(const ChatRequest& req) override;

  static nlohmann::json to_wire(const ChatRequest& req);
  static ChatResponse from_wire(const nlohmann::json& body);

 private:
  HttpGatewayConfig cfg_;
  std::string api_key_;
  std::counting_semaphore<1024> slots_;
};

/// {"backend": "mock", "script": "..."} or {"backend": "http", ...}.
/// A non-empty mock_script_path overrides the config and selects the mock.
std::shared_ptr<LlmGateway> make_gateway(const nlohmann::json& cfg,
                                         const std::string& mock_script_path = {});

}  // namespace finrag
