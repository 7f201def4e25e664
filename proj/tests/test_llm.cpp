#include "doctest.h"
#include "support.hpp"

#include <atomic>
#include <thread>

#include "httplib.h"
#include "tqaprm/error.hpp"
#include "tqaprm/llm.hpp"

using namespace tqaprm;
using namespace tqaprm::llm;

namespace {

GenerationRequest ask(const std::string& text, int n = 1, std::optional<std::int64_t> seed = std::nullopt) {
  GenerationRequest r;
  r.messages = {{Role::User, text}};
  r.sample_count = n;
  r.seed = seed;
  return r;
}

/// Counts calls and fails the first `failures` of them with TransportError.
class Flaky final : public Backend {
 public:
  explicit Flaky(int failures) : failures_(failures) {}
  GenerationResult generate(const GenerationRequest& request) override {
    if (calls++ < failures_) throw TransportError("connection reset");
    GenerationResult r;
    for (int i = 0; i < request.sample_count; ++i) r.completions.push_back({"ok " + std::to_string(i), {}});
    return r;
  }
  std::atomic<int> calls{0};

 private:
  int failures_;
};

}  // namespace

TEST_CASE("request validation") {
  CHECK_THROWS_AS(validate(GenerationRequest{}), ValidationError);
  auto r = ask("hi");
  r.sample_count = 0;
  CHECK_THROWS_AS(validate(r), ValidationError);
  r = ask("hi");
  r.temperature = -1;
  CHECK_THROWS_AS(validate(r), ValidationError);
  r = ask("");
  CHECK_THROWS_AS(validate(r), ValidationError);
  CHECK_NOTHROW(validate(ask("hi")));
}

TEST_CASE("scripted backend") {
  Script script;
  script.rules.push_back({{"alpha", "beta"}, {"both"}, false, {}, std::nullopt, {}});
  script.rules.push_back({{"alpha"}, {"a0", "a1", "a2"}, false, {}, std::nullopt, {}});
  script.rules.push_back({{"once"}, {"first"}, true, {}, std::nullopt, {}});
  script.rules.push_back({{"once"}, {"later"}, false, {}, std::nullopt, {}});
  auto backend = scripted_backend(script);

  CHECK(generate(ask("alpha beta"), *backend).completions[0].text == "both");

  SUBCASE("seeded completions are positional") {
    auto r = generate(ask("alpha", 4, 1), *backend);
    REQUIRE(r.completions.size() == 4);
    CHECK(r.completions[0].text == "a1");
    CHECK(r.completions[1].text == "a2");
    CHECK(r.completions[2].text == "a0");
    CHECK(generate(ask("alpha", 4, 1), *backend).completions[0].text == "a1");
  }
  SUBCASE("unseeded cursor advances") {
    CHECK(generate(ask("alpha"), *backend).completions[0].text == "a0");
    CHECK(generate(ask("alpha"), *backend).completions[0].text == "a1");
  }
  SUBCASE("once rules are consumed") {
    CHECK(generate(ask("once"), *backend).completions[0].text == "first");
    CHECK(generate(ask("once"), *backend).completions[0].text == "later");
  }
  SUBCASE("miss names the request") { CHECK_THROWS_AS(generate(ask("gamma"), *backend), ScriptedMissError); }
}

TEST_CASE("scripted token probabilities") {
  const auto tokens = synthesize_token_probs("**Judgement**: $\\boxed{Yes}$", 0.8);
  REQUIRE_FALSE(tokens.empty());
  std::string joined;
  for (const auto& t : tokens) joined += t.token;
  CHECK(joined == "**Judgement**: $\\boxed{Yes}$");

  GenerationResult r;
  r.completions.push_back({"x", tokens});
  CHECK(token_choice_prob(r, 0, "Yes", {"No"}) == doctest::Approx(0.8));
  CHECK(token_choice_prob(r, 0, "No", {"Yes"}) == doctest::Approx(0.2));

  GenerationResult bare;
  bare.completions.push_back({"x", std::nullopt});
  CHECK_THROWS_AS(token_choice_prob(bare, 0, "Yes", {"No"}), CapabilityError);

  const auto idx = token_index_at(tokens, joined.find("Yes"));
  REQUIRE(idx);
  CHECK(tokens[*idx].token == "Yes");
  CHECK_FALSE(token_index_at(tokens, joined.size()));
}

TEST_CASE("script_from_json") {
  const auto script = script_from_json(json::parse(R"({"rules": [
    {"match": "q", "completion": "a", "once": true, "latency_ms": 3},
    {"match": ["r"], "completions": ["b"], "token_probs": [[{"token": "b", "candidates": [["b", 0.7], ["c", 0.3]]}]]}
  ]})"));
  REQUIRE(script.rules.size() == 2);
  CHECK(script.rules[0].once);
  CHECK(script.rules[0].latency.count() == 3);
  CHECK(script.rules[1].token_probs[0][0].candidates[1].second == doctest::Approx(0.3));
}

TEST_CASE("retry decorator") {
  RetryPolicy fast{3, std::chrono::milliseconds(1), 2.0};
  auto ok_after_two = std::make_shared<Flaky>(2);
  CHECK(generate(ask("x"), *with_retry(ok_after_two, fast)).completions[0].text == "ok 0");
  CHECK(ok_after_two->calls == 3);

  auto never = std::make_shared<Flaky>(100);
  try {
    generate(ask("x"), *with_retry(never, fast));
    FAIL("expected exhaustion");
  } catch (const RetriesExhaustedError& e) {
    CHECK(e.attempts() == 3);
  }
}

TEST_CASE("response cache") {
  testing::TempDir dir("cache");
  auto store = std::make_shared<ResponseCache>(dir.path());
  auto inner = std::make_shared<Flaky>(0);
  auto backend = cached(inner, store, "ns");

  const auto first = generate(ask("hello", 2, 7), *backend);
  const auto second = generate(ask("hello", 2, 7), *backend);
  CHECK_FALSE(first.from_cache);
  CHECK(second.from_cache);
  CHECK(second.completions[1].text == first.completions[1].text);
  CHECK(inner->calls == 1);
  CHECK(store->stats().hits == 1);

  SUBCASE("key covers the sampling parameters") {
    CHECK(ResponseCache::key(ask("hello", 2, 7), "ns") != ResponseCache::key(ask("hello", 2, 8), "ns"));
    CHECK(ResponseCache::key(ask("hello", 2, 7), "ns") != ResponseCache::key(ask("hello", 2, 7), "other"));
    auto probs = ask("hello", 2, 7);
    probs.want_token_probs = true;
    CHECK(ResponseCache::key(ask("hello", 2, 7)) != ResponseCache::key(probs));
  }
  SUBCASE("corrupt entries are misses") {
    for (const auto& e : std::filesystem::recursive_directory_iterator(dir.path())) {
      if (e.is_regular_file()) write_file_atomic(e.path(), "{not json");
    }
    auto fresh = std::make_shared<ResponseCache>(dir.path());
    CHECK_FALSE(fresh->load(ResponseCache::key(ask("hello", 2, 7), "ns")));
    CHECK(fresh->stats().corrupt == 1);
  }
}

TEST_CASE("bounded decorator caps concurrency") {
  class Slow final : public Backend {
   public:
    GenerationResult generate(const GenerationRequest&) override {
      const int now = ++active;
      int seen = peak.load();
      while (now > seen && !peak.compare_exchange_weak(seen, now)) {
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
      --active;
      return GenerationResult{{{"x", {}}}, {}, false};
    }
    std::atomic<int> active{0}, peak{0};
  };
  auto slow = std::make_shared<Slow>();
  auto b = bounded(slow, 2);
  std::vector<std::jthread> threads;
  for (int i = 0; i < 6; ++i) threads.emplace_back([&] { b->generate(ask("x")); });
  threads.clear();
  CHECK(slow->peak <= 2);
}

TEST_CASE("chat-completions wire format") {
  HttpConfig cfg;
  cfg.model = "m";
  auto req = ask("hi", 2, 5);
  req.want_token_probs = true;
  const auto body = chat_completions_body(req, cfg);
  CHECK(body["model"] == "m");
  CHECK(body["n"] == 2);
  CHECK(body["seed"] == 5);
  CHECK(body["logprobs"] == true);
  CHECK(body["messages"][0]["role"] == "user");

  const auto parsed = parse_chat_completions(json::parse(R"({"choices": [
    {"index": 1, "message": {"content": "second"}},
    {"index": 0, "message": {"content": "first"},
     "logprobs": {"content": [{"token": "Yes", "logprob": -0.1,
                               "top_logprobs": [{"token": "Yes", "logprob": -0.1}, {"token": "No", "logprob": -2.3}]}]}}
  ]})"),
                                             2);
  CHECK(parsed.completions[0].text == "first");
  REQUIRE(parsed.completions[0].token_probs);
  CHECK((*parsed.completions[0].token_probs)[0].candidates[1].second == doctest::Approx(std::exp(-2.3)));
  CHECK_THROWS_AS(parse_chat_completions(json::parse(R"({"choices": []})"), 1), ProtocolError);
  CHECK_THROWS_AS(parse_chat_completions(json::parse(R"({"oops": 1})"), 1), ProtocolError);
}

TEST_CASE("http backend against a loopback server") {
  httplib::Server server;
  std::atomic<int> hits{0};
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    const auto body = json::parse(req.body);
    if (body["messages"][0]["content"] == "busy" && hits++ == 0) {
      res.status = 503;
      return;
    }
    if (body["messages"][0]["content"] == "bad") {
      res.status = 400;
      res.set_content("{\"error\":\"nope\"}", "application/json");
      return;
    }
    json choices = json::array();
    for (int i = 0; i < body["n"].get<int>(); ++i) {
      choices.push_back({{"index", i}, {"message", {{"role", "assistant"}, {"content", "r" + std::to_string(i)}}}});
    }
    res.set_content(json{{"choices", choices}}.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::jthread loop([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  HttpConfig cfg;
  cfg.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  cfg.model = "m";
  cfg.timeout = std::chrono::seconds(5);
  auto backend = with_retry(http_backend(cfg), RetryPolicy{3, std::chrono::milliseconds(1), 2.0});

  CHECK(generate(ask("hi", 3), *backend).completions[2].text == "r2");
  CHECK(generate(ask("busy"), *backend).completions[0].text == "r0");
  CHECK(hits == 2);
  CHECK_THROWS_AS(generate(ask("bad"), *backend), ProtocolError);
  server.stop();
}
