#include "tqaprm/llm.hpp"

#include <algorithm>
#include <cmath>
#include <semaphore>
#include <thread>

#include <spdlog/spdlog.h>

#include "tqaprm/error.hpp"

namespace tqaprm::llm {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

class RetryingBackend final : public Backend {
 public:
  RetryingBackend(BackendPtr inner, RetryPolicy policy) : inner_(std::move(inner)), policy_(policy) {}

  GenerationResult generate(const GenerationRequest& request) override {
    auto backoff = std::chrono::duration<double, std::milli>(policy_.initial_backoff);
    std::string last_error;
    for (int attempt = 1; attempt <= policy_.max_attempts; ++attempt) {
      try {
        return inner_->generate(request);
      } catch (const TransportError& e) {
        last_error = e.what();
        spdlog::warn("backend attempt {}/{} failed: {}", attempt, policy_.max_attempts, last_error);
      }
      if (attempt < policy_.max_attempts) {
        std::this_thread::sleep_for(backoff);
        backoff *= policy_.multiplier;
      }
    }
    throw RetriesExhaustedError(policy_.max_attempts, last_error);
  }

 private:
  BackendPtr inner_;
  RetryPolicy policy_;
};

class BoundedBackend final : public Backend {
 public:
  BoundedBackend(BackendPtr inner, std::size_t limit)
      : inner_(std::move(inner)), slots_(static_cast<std::ptrdiff_t>(limit)) {}

  GenerationResult generate(const GenerationRequest& request) override {
    slots_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{slots_};
    return inner_->generate(request);
  }

 private:
  BackendPtr inner_;
  std::counting_semaphore<> slots_;
};

}  // namespace

std::string_view to_string(Role role) noexcept {
  switch (role) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

Role parse_role(std::string_view text) {
  if (text == "system") return Role::System;
  if (text == "user") return Role::User;
  if (text == "assistant") return Role::Assistant;
  throw ProtocolError("unknown role \"" + std::string(text) + "\"");
}

json to_json(const ChatMessage& message) {
  return json{{"role", std::string(to_string(message.role))}, {"content", message.content}};
}

ChatMessage message_from_json(const json& j) {
  return ChatMessage{parse_role(j.at("role").get<std::string>()), j.at("content").get<std::string>()};
}

void validate(const GenerationRequest& request) {
  if (request.messages.empty()) throw ValidationError("request has no messages");
  if (request.sample_count < 1) throw ValidationError("sample_count must be >= 1");
  if (request.max_tokens < 1) throw ValidationError("max_tokens must be >= 1");
  if (!std::isfinite(request.temperature) || request.temperature < 0.0) {
    throw ValidationError("temperature must be finite and >= 0");
  }
  for (const auto& m : request.messages) {
    if (m.role != Role::System && m.content.empty()) {
      throw ValidationError("user/assistant message content must be non-empty");
    }
  }
}

json to_json(const GenerationResult& result) {
  json completions = json::array();
  for (const auto& c : result.completions) {
    json entry{{"text", c.text}};
    if (c.token_probs) {
      json tokens = json::array();
      for (const auto& pos : *c.token_probs) {
        json cands = json::array();
        for (const auto& [tok, p] : pos.candidates) cands.push_back(json::array({tok, p}));
        tokens.push_back(json{{"token", pos.token}, {"candidates", std::move(cands)}});
      }
      entry["token_probs"] = std::move(tokens);
    }
    completions.push_back(std::move(entry));
  }
  return json{{"completions", std::move(completions)},
              {"backend_latency_ns", result.backend_latency.count()}};
}

GenerationResult result_from_json(const json& j) {
  GenerationResult result;
  for (const auto& c : j.at("completions")) {
    Completion completion;
    completion.text = c.at("text").get<std::string>();
    if (auto it = c.find("token_probs"); it != c.end()) {
      std::vector<TokenPosition> tokens;
      for (const auto& pos : *it) {
        TokenPosition tp;
        tp.token = pos.at("token").get<std::string>();
        for (const auto& cand : pos.at("candidates")) {
          tp.candidates.emplace_back(cand.at(0).get<std::string>(), cand.at(1).get<double>());
        }
        tokens.push_back(std::move(tp));
      }
      completion.token_probs = std::move(tokens);
    }
    result.completions.push_back(std::move(completion));
  }
  result.backend_latency = std::chrono::nanoseconds(j.value("backend_latency_ns", std::int64_t{0}));
  return result;
}

GenerationResult generate(const GenerationRequest& request, Backend& backend) {
  validate(request);
  auto result = backend.generate(request);
  if (static_cast<int>(result.completions.size()) != request.sample_count) {
    throw ProtocolError("expected " + std::to_string(request.sample_count) + " completions, got " +
                        std::to_string(result.completions.size()));
  }
  for (const auto& c : result.completions) {
    if (!c.token_probs) continue;
    for (const auto& pos : *c.token_probs) {
      for (const auto& cand : pos.candidates) {
        if (!(cand.second >= 0.0 && cand.second <= 1.0)) {
          throw ProtocolError("token probability outside [0,1]");
        }
      }
    }
  }
  return result;
}

double candidate_prob(const TokenPosition& position, std::string_view token) {
  double p = 0.0;
  for (const auto& [cand, prob] : position.candidates) {
    if (trim(cand) == token) p += prob;
  }
  return p;
}

std::optional<std::size_t> token_index_at(const std::vector<TokenPosition>& tokens,
                                          std::size_t offset) {
  std::size_t start = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto end = start + tokens[i].token.size();
    if (offset >= start && offset < end) return i;
    start = end;
  }
  return std::nullopt;
}

double token_choice_prob(const GenerationResult& result, std::size_t completion_index,
                         const std::string& target, const std::set<std::string>& alternatives,
                         std::optional<std::size_t> position) {
  if (completion_index >= result.completions.size()) {
    throw ValidationError("completion index out of range");
  }
  const auto& completion = result.completions[completion_index];
  if (!completion.token_probs) throw CapabilityError("completion carries no token probabilities");
  const auto& tokens = *completion.token_probs;

  if (!position) {
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const auto tok = trim(tokens[i].token);
      if (tok == target || alternatives.count(std::string(tok))) {
        position = i;
        break;
      }
    }
    if (!position) throw ValidationError("no position emits \"" + target + "\" or an alternative");
  }
  if (*position >= tokens.size()) throw ValidationError("token position out of range");
  if (alternatives.empty()) return 1.0;

  const auto& pos = tokens[*position];
  const double p_target = candidate_prob(pos, target);
  double total = p_target;
  for (const auto& alt : alternatives) {
    if (alt != target) total += candidate_prob(pos, alt);
  }
  if (total <= 0.0) return 0.0;
  return std::clamp(p_target / total, 0.0, 1.0);
}

BackendPtr with_retry(BackendPtr inner, RetryPolicy policy) {
  if (policy.max_attempts < 1) policy.max_attempts = 1;
  return std::make_shared<RetryingBackend>(std::move(inner), policy);
}

BackendPtr bounded(BackendPtr inner, std::size_t max_in_flight) {
  if (max_in_flight == 0) max_in_flight = 1;
  return std::make_shared<BoundedBackend>(std::move(inner), max_in_flight);
}

}  // namespace tqaprm::llm
