#include <cstdlib>
#include <thread>

#include <spdlog/spdlog.h>

#include "finrag/error.hpp"
#include "finrag/llm_gateway.hpp"

#include "httplib.h"

namespace finrag {

using nlohmann::json;

HttpGatewayConfig HttpGatewayConfig::from_json(const json& j) {
  HttpGatewayConfig c;
  c.base_url = j.value("base_url", c.base_url);
  c.path = j.value("path", c.path);
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.max_retries = j.value("max_retries", c.max_retries);
  c.backoff = std::chrono::milliseconds(j.value("backoff_ms", static_cast<int>(c.backoff.count())));
  c.timeout = std::chrono::seconds(j.value("timeout_s", static_cast<int>(c.timeout.count())));
  c.max_concurrent = j.value("max_concurrent", c.max_concurrent);
  return c;
}

HttpGateway::HttpGateway(HttpGatewayConfig cfg)
    : cfg_(std::move(cfg)), slots_(std::clamp<std::ptrdiff_t>(cfg_.max_concurrent, 1, 1024)) {
  if (const char* key = std::getenv(cfg_.api_key_env.c_str())) api_key_ = key;
}

HttpGateway::~HttpGateway() = default;

json HttpGateway::to_wire(const ChatRequest& req) {
  json messages = json::array();
  for (const auto& m : req.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
  json body = {{"model", req.model}, {"messages", messages}, {"temperature", req.temperature}};
  if (!req.tools.empty()) {
    json tools = json::array();
    for (const auto& t : req.tools) {
      tools.push_back({{"type", "function"},
                       {"function",
                        {{"name", t.name}, {"description", t.description}, {"parameters", t.parameters}}}});
    }
    body["tools"] = tools;
  }
  return body;
}

ChatResponse HttpGateway::from_wire(const json& body) {
  ChatResponse resp;
  const auto& choices = body.at("choices");
  if (choices.empty()) throw GatewayError("response has no choices");
  const auto& msg = choices.at(0).at("message");
  if (msg.contains("content") && msg["content"].is_string()) resp.text = msg["content"].get<std::string>();
  if (msg.contains("tool_calls") && msg["tool_calls"].is_array()) {
    for (const auto& call : msg["tool_calls"]) {
      const auto& fn = call.at("function");
      ToolCall tc;
      tc.name = fn.at("name").get<std::string>();
      const auto& args = fn.value("arguments", json("{}"));
      tc.arguments = args.is_string() ? json::parse(args.get<std::string>(), nullptr, false) : args;
      if (tc.arguments.is_discarded()) tc.arguments = json::object();
      resp.tool_calls.push_back(std::move(tc));
    }
  }
  if (!resp.text && resp.tool_calls.empty()) throw GatewayError("response carries neither text nor tool calls");
  if (body.contains("usage") && body["usage"].is_object()) {
    resp.usage.prompt_tokens = body["usage"].value("prompt_tokens", 0);
    resp.usage.completion_tokens = body["usage"].value("completion_tokens", 0);
  }
  return resp;
}

ChatResponse HttpGateway::complete(const ChatRequest& req) {
  if (req.messages.empty()) throw InvalidArgument("chat request has no messages");
  slots_.acquire();
  struct Release {
    std::counting_semaphore<1024>& s;
    ~Release() { s.release(); }
  } release{slots_};

  httplib::Client client(cfg_.base_url);
  client.set_connection_timeout(cfg_.timeout);
  client.set_read_timeout(cfg_.timeout);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  const std::string body = to_wire(req).dump();

  int attempt = 0;
  for (;;) {
    auto res = client.Post(cfg_.path, headers, body, "application/json");
    const bool retryable = !res || res->status >= 500;
    if (res && res->status >= 200 && res->status < 300) {
      ChatResponse resp;
      try {
        resp = from_wire(json::parse(res->body));
      } catch (const json::exception& e) {
        throw GatewayError(std::string("malformed response: ") + e.what(), res->status, attempt);
      }
      if (resp.usage.total() == 0) {
        resp.usage = estimate_usage(req, resp);
        resp.usage_estimated = true;
      }
      return resp;
    }
    if (!retryable || attempt >= cfg_.max_retries) {
      const int status = res ? res->status : 0;
      const std::string reason = res ? "HTTP " + std::to_string(status) : httplib::to_string(res.error());
      throw GatewayError("chat completion failed: " + reason, status, attempt);
    }
    spdlog::warn("chat completion attempt {} failed; retrying", attempt + 1);
    std::this_thread::sleep_for(cfg_.backoff * (1 << attempt));
    ++attempt;
  }
}

}  // namespace finrag
