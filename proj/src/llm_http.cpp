#include <cmath>
#include <cstdlib>

#include "httplib.h"
#include "tqaprm/error.hpp"
#include "tqaprm/llm.hpp"

namespace tqaprm::llm {

namespace {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path without trailing slash
};

ParsedUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("base URL needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  ParsedUrl out;
  out.origin = url.substr(0, path_start);
  if (path_start != std::string::npos) out.prefix = url.substr(path_start);
  while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
  return out;
}

class HttpBackend final : public Backend {
 public:
  explicit HttpBackend(HttpConfig config) : config_(std::move(config)), url_(split_url(config_.base_url)) {}

  GenerationResult generate(const GenerationRequest& request) override {
    const auto body = chat_completions_body(request, config_).dump();
    httplib::Client client(url_.origin);
    client.set_connection_timeout(std::chrono::seconds(10));
    client.set_read_timeout(config_.timeout);
    client.set_write_timeout(config_.timeout);
    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

    const auto start = std::chrono::steady_clock::now();
    auto res = client.Post(url_.prefix + "/chat/completions", headers, body, "application/json");
    const auto latency = std::chrono::steady_clock::now() - start;
    if (!res) throw TransportError("request to " + config_.base_url + " failed: " + httplib::to_string(res.error()));
    if (res->status == 408 || res->status == 429 || res->status >= 500) {
      throw TransportError("HTTP " + std::to_string(res->status) + " from " + config_.base_url);
    }
    if (res->status < 200 || res->status >= 300) {
      throw ProtocolError("HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 512));
    }
    json parsed;
    try {
      parsed = json::parse(res->body);
    } catch (const json::parse_error& e) {
      throw ProtocolError(std::string("response is not JSON: ") + e.what());
    }
    auto result = parse_chat_completions(parsed, request.sample_count);
    result.backend_latency = std::chrono::duration_cast<std::chrono::nanoseconds>(latency);
    return result;
  }

 private:
  HttpConfig config_;
  ParsedUrl url_;
};

}  // namespace

HttpConfig http_config_from_env(HttpConfig config) {
  if (config.base_url.empty()) {
    if (const char* v = std::getenv("HARNESS_API_BASE")) config.base_url = v;
  }
  if (config.api_key.empty()) {
    if (const char* v = std::getenv("HARNESS_API_KEY")) config.api_key = v;
  }
  return config;
}

json chat_completions_body(const GenerationRequest& request, const HttpConfig& config) {
  json messages = json::array();
  for (const auto& m : request.messages) messages.push_back(to_json(m));
  json body{{"model", config.model},
            {"messages", std::move(messages)},
            {"temperature", request.temperature},
            {"n", request.sample_count},
            {"max_tokens", request.max_tokens}};
  if (request.seed) body["seed"] = *request.seed;
  if (request.want_token_probs) {
    body["logprobs"] = true;
    body["top_logprobs"] = config.top_logprobs;
  }
  return body;
}

GenerationResult parse_chat_completions(const json& body, int expected) {
  try {
    const auto& choices = body.at("choices");
    if (!choices.is_array()) throw ProtocolError("\"choices\" is not a list");
    std::vector<std::pair<int, Completion>> indexed;
    int fallback_index = 0;
    for (const auto& choice : choices) {
      Completion c;
      const auto& content = choice.at("message").at("content");
      c.text = content.is_null() ? std::string() : content.get<std::string>();
      if (auto lp = choice.find("logprobs"); lp != choice.end() && lp->is_object() && lp->contains("content") &&
                                               lp->at("content").is_array()) {
        std::vector<TokenPosition> tokens;
        for (const auto& pos : lp->at("content")) {
          TokenPosition tp;
          tp.token = pos.at("token").get<std::string>();
          if (auto top = pos.find("top_logprobs"); top != pos.end() && top->is_array() && !top->empty()) {
            for (const auto& cand : *top) {
              tp.candidates.emplace_back(cand.at("token").get<std::string>(),
                                         std::exp(cand.at("logprob").get<double>()));
            }
          } else {
            tp.candidates.emplace_back(tp.token, std::exp(pos.at("logprob").get<double>()));
          }
          tokens.push_back(std::move(tp));
        }
        c.token_probs = std::move(tokens);
      }
      const int index = choice.contains("index") ? choice.at("index").get<int>() : fallback_index;
      ++fallback_index;
      indexed.emplace_back(index, std::move(c));
    }
    std::stable_sort(indexed.begin(), indexed.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    GenerationResult result;
    for (auto& [_, c] : indexed) result.completions.push_back(std::move(c));
    if (static_cast<int>(result.completions.size()) != expected) {
      throw ProtocolError("expected " + std::to_string(expected) + " choices, got " +
                          std::to_string(result.completions.size()));
    }
    return result;
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed chat-completions payload: ") + e.what());
  }
}

BackendPtr http_backend(HttpConfig config) {
  if (config.base_url.empty()) throw ConfigError("no endpoint: set base_url or HARNESS_API_BASE");
  return std::make_shared<HttpBackend>(std::move(config));
}

}  // namespace tqaprm::llm
