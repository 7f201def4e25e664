#include "doctest.h"
#include "support.hpp"

#include <algorithm>

#include "tqaprm/config.hpp"

using namespace tqaprm;
using namespace tqaprm::pipeline;

namespace {

json fixture_config() { return json::parse(testing::slurp(testing::fixture("pipeline.json"))); }

bool mentions(const std::vector<std::string>& violations, const std::string& needle) {
  return std::any_of(violations.begin(), violations.end(),
                     [&](const std::string& v) { return v.find(needle) != std::string::npos; });
}

}  // namespace

TEST_CASE("fixture config loads") {
  std::vector<std::string> violations;
  const auto c = config_from_json(fixture_config(), TQAPRM_FIXTURES, violations);
  CHECK(violations.empty());
  CHECK(validate_config(c).empty());
  CHECK(c.dataset_path == testing::fixture("mini_dataset.jsonl"));
  CHECK(c.timing == verify::Timing::BackendReported);
  CHECK(c.train.rollouts == 4);
  CHECK(c.effective_budgets() == std::vector<std::size_t>{1, 2, 4, 8});

  std::vector<std::string> again;
  const auto round = config_from_json(config_to_json(c), "/", again);
  CHECK(again.empty());
  CHECK(config_to_json(round) == config_to_json(c));
}

TEST_CASE("violations are collected") {
  auto doc = fixture_config();
  doc["paths"] = 0;
  doc["bogus"] = 1;
  doc["temperature"] = "hot";
  doc["verifiers"] = json::array({"genprm"});
  doc["dataset"]["path"] = "missing.jsonl";
  std::vector<std::string> violations;
  const auto c = config_from_json(doc, TQAPRM_FIXTURES, violations);
  for (auto& v : validate_config(c)) violations.push_back(v);
  CHECK(mentions(violations, "bogus"));
  CHECK(mentions(violations, "temperature"));
  CHECK(mentions(violations, "path budget must be >= 1"));
  CHECK(mentions(violations, "dataset file not found"));
  CHECK(mentions(violations, "executor"));
}

TEST_CASE("budgets") {
  std::vector<std::string> v;
  auto doc = fixture_config();
  doc["paths"] = 6;
  CHECK(config_from_json(doc, TQAPRM_FIXTURES, v).effective_budgets() == std::vector<std::size_t>{1, 2, 4, 6});
  doc["budgets"] = json::array({3, 9});
  const auto c = config_from_json(doc, TQAPRM_FIXTURES, v);
  CHECK(mentions(validate_config(c), "budget"));
}

TEST_CASE("overrides") {
  auto doc = fixture_config();
  apply_override(doc, "train.tau", "0.8");
  apply_override(doc, "backend.model", "gpt-x");
  apply_override(doc, "verifiers", "[\"textual\", \"judge\"]");
  CHECK(doc["train"]["tau"] == 0.8);
  CHECK(doc["backend"]["model"] == "gpt-x");
  CHECK(doc["verifiers"].size() == 2);
  apply_override(doc, "limits.timeout_ms", "250");
  std::vector<std::string> v;
  const auto c = config_from_json(doc, TQAPRM_FIXTURES, v);
  CHECK(v.empty());
  CHECK(c.limits.wall_timeout == std::chrono::milliseconds(250));
  CHECK(c.verifiers.size() == 2);
}
