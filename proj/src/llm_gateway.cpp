#include "finrag/llm_gateway.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "finrag/error.hpp"
#include "finrag/text.hpp"

namespace finrag {

using nlohmann::json;

const std::string& ChatRequest::payload() const {
  static const std::string kEmpty;
  for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
    if (it->role == "user") return it->content;
  }
  return kEmpty;
}

std::size_t ChatRequest::char_count() const {
  std::size_t n = 0;
  for (const auto& m : messages) n += m.content.size();
  return n;
}

Usage estimate_usage(const ChatRequest& req, const ChatResponse& resp) {
  const std::size_t prompt_chars = req.char_count();
  std::size_t completion_chars = resp.text ? resp.text->size() : 0;
  for (const auto& call : resp.tool_calls) {
    completion_chars += call.name.size() + call.arguments.dump().size();
  }
  const auto ceil4 = [](std::size_t c) { return (c + 3) / 4; };
  Usage u;
  u.prompt_tokens = ceil4(prompt_chars);
  u.completion_tokens = ceil4(prompt_chars + completion_chars) - u.prompt_tokens;
  return u;
}

ModelSlots ModelSlots::from_json(const json& j) {
  ModelSlots s;
  s.transform = j.value("transform", s.transform);
  s.coreference = j.value("coreference", s.coreference);
  s.summary = j.value("summary", s.summary);
  s.rewrite = j.value("rewrite", s.rewrite);
  s.decompose = j.value("decompose", s.decompose);
  s.tool = j.value("tool", s.tool);
  s.answer = j.value("answer", s.answer);
  s.merge = j.value("merge", s.merge);
  s.annotate = j.value("annotate", s.annotate);
  s.reasoning = j.value("reasoning", s.reasoning);
  return s;
}

namespace {

MockRule rule_from_json(const json& j) {
  MockRule r;
  r.task = j.value("task", "");
  r.model = j.value("model", "");
  r.contains = j.value("contains", "");
  if (j.contains("text")) r.text = j["text"].get<std::string>();
  for (const auto& c : j.value("tool_calls", json::array())) {
    r.tool_calls.push_back(ToolCall{c.at("name").get<std::string>(),
                                    c.value("arguments", json::object())});
  }
  r.echo = j.value("echo", false);
  r.fail = j.value("fail", false);
  r.fail_message = j.value("fail_message", r.fail_message);
  return r;
}

bool rule_matches(const MockRule& r, const ChatRequest& req) {
  if (!r.task.empty() && r.task != req.task) return false;
  if (!r.model.empty() && r.model != req.model) return false;
  if (r.contains.empty()) return true;
  return std::any_of(req.messages.begin(), req.messages.end(), [&](const ChatMessage& m) {
    return m.content.find(r.contains) != std::string::npos;
  });
}

void replace_all(std::string& s, std::string_view from, const std::string& to) {
  for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

ChatResponse apply_rule(const MockRule& r, const ChatRequest& req) {
  if (r.fail) throw GatewayError(r.fail_message);
  ChatResponse resp;
  if (r.echo) {
    resp.text = req.payload();
  } else if (r.text) {
    std::string t = *r.text;
    replace_all(t, "{{payload}}", req.payload());
    replace_all(t, "{{first30}}", first_words(req.payload(), 30));
    resp.text = std::move(t);
  }
  resp.tool_calls = r.tool_calls;
  if (!resp.text && resp.tool_calls.empty()) resp.text = std::string();
  return resp;
}

ChatResponse builtin_default(const ChatRequest& req) {
  ChatResponse resp;
  if (req.task == task::kSummary) {
    resp.text = first_words(req.payload(), 30);
  } else if (req.task == task::kDecompose) {
    resp.text = std::string();
  } else if (req.task == task::kToolSelect) {
    for (const auto& tool : req.tools) {
      if (tool_matches_text(tool, req.payload())) {
        resp.tool_calls.push_back(ToolCall{tool.name, json{{"query", req.payload()}}});
        break;
      }
    }
    if (resp.tool_calls.empty()) resp.text = std::string("no tool applies");
  } else {
    resp.text = req.payload();
  }
  return resp;
}

const std::set<std::string>& keyword_stopwords() {
  static const std::set<std::string> kStop = {
      "about", "after", "based", "current", "given", "other", "returns", "their",
      "these", "those", "value", "which", "while", "where", "would", "should",
      "could", "using", "through", "within", "between"};
  return kStop;
}

}  // namespace

MockScript MockScript::from_json(const json& j) {
  MockScript s;
  for (const auto& r : j.value("rules", json::array())) s.rules.push_back(rule_from_json(r));
  if (j.contains("default")) s.fallback = rule_from_json(j["default"]);
  return s;
}

MockScript MockScript::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open mock script " + path);
  try {
    return from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw FormatError("mock script " + path + ": " + e.what());
  }
}

ChatResponse MockGateway::complete(const ChatRequest& req) {
  if (req.messages.empty()) throw InvalidArgument("chat request has no messages");
  ChatResponse resp;
  const auto it = std::find_if(script_.rules.begin(), script_.rules.end(),
                               [&](const MockRule& r) { return rule_matches(r, req); });
  if (it != script_.rules.end()) {
    resp = apply_rule(*it, req);
  } else if (script_.fallback) {
    resp = apply_rule(*script_.fallback, req);
  } else {
    resp = builtin_default(req);
  }
  resp.usage = estimate_usage(req, resp);
  resp.usage_estimated = true;
  return resp;
}

std::vector<std::string> tool_keywords(const ToolSchema& tool) {
  std::vector<std::string> out;
  std::string token;
  for (char c : to_lower(tool.name) + "_") {
    if (c == '_' || c == '-' || c == ' ') {
      if (token.size() >= 3) out.push_back(token);
      token.clear();
    } else {
      token.push_back(c);
    }
  }
  for (const auto& w : split_words(strip_punctuation(tool.description))) {
    if (w.size() >= 5 && !keyword_stopwords().contains(w)) out.push_back(w);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

bool tool_matches_text(const ToolSchema& tool, std::string_view text) {
  const auto words = split_words(strip_punctuation(text));
  const std::set<std::string> present(words.begin(), words.end());
  for (const auto& k : tool_keywords(tool)) {
    if (present.contains(k)) return true;
  }
  return false;
}

std::shared_ptr<LlmGateway> make_gateway(const json& cfg, const std::string& mock_script_path) {
  if (!mock_script_path.empty()) {
    return std::make_shared<MockGateway>(MockScript::load(mock_script_path));
  }
  const auto backend = cfg.value("backend", "mock");
  if (backend == "mock") {
    const auto script = cfg.value("script", "");
    if (script.empty()) return std::make_shared<MockGateway>();
    return std::make_shared<MockGateway>(MockScript::load(script));
  }
  if (backend == "http") return std::make_shared<HttpGateway>(HttpGatewayConfig::from_json(cfg));
  throw InvalidArgument("unknown gateway backend: " + backend);
}

}  // namespace finrag
