#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "tqaprm/json_io.hpp"

namespace tqaprm::llm {

enum class Role { System, User, Assistant };

std::string_view to_string(Role role) noexcept;
Role parse_role(std::string_view text);

struct ChatMessage {
  Role role = Role::User;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

json to_json(const ChatMessage& message);
ChatMessage message_from_json(const json& j);

struct GenerationRequest {
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int sample_count = 1;
  int max_tokens = 2048;
  bool want_token_probs = false;
  std::optional<std::int64_t> seed;
};

/// Throws ValidationError when the request breaks its invariants.
void validate(const GenerationRequest& request);

/// Candidate distribution at one generated position.
struct TokenPosition {
  std::string token;                                       // the emitted token
  std::vector<std::pair<std::string, double>> candidates;  // (token, probability)
};

struct Completion {
  std::string text;
  std::optional<std::vector<TokenPosition>> token_probs;
};

struct GenerationResult {
  std::vector<Completion> completions;
  std::chrono::nanoseconds backend_latency{0};
  bool from_cache = false;
};

json to_json(const GenerationResult& result);
GenerationResult result_from_json(const json& j);

/// A chat-generation endpoint. Implementations must be safe to call from
/// several threads at once.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual GenerationResult generate(const GenerationRequest& request) = 0;
};

using BackendPtr = std::shared_ptr<Backend>;

/// Validates the request, calls the backend and checks that the result
/// carries exactly `sample_count` completions with probabilities in [0,1].
GenerationResult generate(const GenerationRequest& request, Backend& backend);

/// Sum of the probabilities of candidates equal to `token` once surrounding
/// whitespace is removed.
double candidate_prob(const TokenPosition& position, std::string_view token);

/// Index of the token that covers byte `offset` of the completion text
/// (token texts are concatenated in order). nullopt if out of range.
std::optional<std::size_t> token_index_at(const std::vector<TokenPosition>& tokens,
                                          std::size_t offset);

/// p(target) / sum of p over {target} ∪ alternatives at `position`.
///
/// When `position` is omitted the first position whose emitted token is the
/// target or one of the alternatives is used. Token texts are compared with
/// surrounding whitespace removed. Returns 1 when `alternatives` is empty.
/// Throws CapabilityError when the completion has no probabilities and
/// ValidationError when no position qualifies.
double token_choice_prob(const GenerationResult& result, std::size_t completion_index,
                         const std::string& target, const std::set<std::string>& alternatives,
                         std::optional<std::size_t> position = std::nullopt);

// ---------------------------------------------------------------------------
// Decorators

struct RetryPolicy {
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
};

/// Retries TransportError with exponential backoff; after the last attempt a
/// RetriesExhaustedError is thrown. Other errors propagate unchanged.
BackendPtr with_retry(BackendPtr inner, RetryPolicy policy = {});

/// Caps the number of concurrent in-flight requests to `max_in_flight`.
BackendPtr bounded(BackendPtr inner, std::size_t max_in_flight = 8);

// ---------------------------------------------------------------------------
// Response cache

struct CacheStats {
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t corrupt = 0;
};

/// Content-addressed on-disk response store. Each entry is a JSON file named
/// by its key under `<dir>/<key[0:2]>/<key>.json`.
class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir);

  const std::filesystem::path& dir() const noexcept { return dir_; }

  /// Stable digest of (namespace, messages, temperature, sample_count,
  /// max_tokens, seed, want_token_probs). The endpoint URL is not part of it.
  static std::string key(const GenerationRequest& request, std::string_view ns = {});

  /// nullopt on a miss. A corrupt entry logs a warning, counts toward
  /// `stats().corrupt` and is reported as a miss.
  std::optional<GenerationResult> load(const std::string& key);
  void store(const std::string& key, const GenerationRequest& request,
             const GenerationResult& result);

  CacheStats stats() const;

 private:
  std::filesystem::path entry_path(const std::string& key) const;

  std::filesystem::path dir_;
  mutable std::mutex write_mutex_;
  mutable std::mutex stats_mutex_;
  CacheStats stats_;
};

/// Serves repeated requests from `store` without calling `inner`.
BackendPtr cached(BackendPtr inner, std::shared_ptr<ResponseCache> store, std::string ns = {});

// ---------------------------------------------------------------------------
// Scripted backend (deterministic test double)

struct ScriptRule {
  /// Every substring must occur in the concatenated message contents.
  std::vector<std::string> match;
  std::vector<std::string> completions;
  /// Rule may serve a single request only.
  bool once = false;
  /// Explicit per-completion token probabilities (parallel to completions).
  std::vector<std::vector<TokenPosition>> token_probs;
  /// Alternatively, p(Yes) for every boxed Yes/No judgement; the completion
  /// is tokenised on word boundaries and other tokens get probability 1.
  std::optional<double> judgement_yes_prob;
  std::chrono::milliseconds latency{0};
};

struct Script {
  std::vector<ScriptRule> rules;
};

Script script_from_json(const json& j);
Script load_script(const std::filesystem::path& path);

/// Rules are tried in order; the first whose substrings all match serves the
/// request. With a seed, completion j of the response is
/// `completions[(seed + j) % size]`; without one a per-rule cursor advances.
/// An unmatched request raises ScriptedMissError naming the nearest rule.
BackendPtr scripted_backend(Script script);

/// Word-boundary tokenisation used by the scripted backend.
std::vector<TokenPosition> synthesize_token_probs(const std::string& text, double yes_prob);

// ---------------------------------------------------------------------------
// HTTP chat-completions backend

struct HttpConfig {
  std::string base_url;  // e.g. https://host/v1
  std::string api_key;
  std::string model;
  int top_logprobs = 5;
  std::chrono::seconds timeout{120};
};

/// Fills `base_url` / `api_key` from HARNESS_API_BASE / HARNESS_API_KEY when
/// they are empty.
HttpConfig http_config_from_env(HttpConfig config);

/// Speaks the chat-completions wire contract. Connection failures, 408,
/// 429 and 5xx raise TransportError; other statuses and malformed bodies
/// raise ProtocolError.
BackendPtr http_backend(HttpConfig config);

/// Request body for the chat-completions endpoint.
json chat_completions_body(const GenerationRequest& request, const HttpConfig& config);
/// Parses a chat-completions response body.
GenerationResult parse_chat_completions(const json& body, int expected);

}  // namespace tqaprm::llm
