#include "doctest.h"
#include "support.hpp"

#include "tqaprm/error.hpp"
#include "tqaprm/selector.hpp"

using namespace tqaprm;
using namespace tqaprm::selection;
using data::TaskKind;

namespace {

CandidateSet make(std::vector<std::pair<std::optional<std::string>, std::vector<double>>> items) {
  CandidateSet set{"x", {}};
  int id = 0;
  for (auto& [answer, rewards] : items) set.candidates.push_back({id++, answer, rewards});
  return set;
}

}  // namespace

TEST_CASE("aggregation") {
  CHECK(aggregate({0.2, 0.4, 0.9}, AggregationRule::Mean) == doctest::Approx(0.5));
  CHECK(aggregate({0.2, 0.4, 0.9}, AggregationRule::Min) == 0.2);
  CHECK(aggregate({0.2, 0.4, 0.9}, AggregationRule::Last) == 0.9);
  CHECK_THROWS_AS(aggregate({}, AggregationRule::Mean), ValidationError);
  CHECK(parse_aggregation("min") == AggregationRule::Min);
  CHECK_FALSE(parse_aggregation("max"));
}

TEST_CASE("candidate validation") {
  CHECK_THROWS_AS(validate(CandidateSet{"x", {}}), ValidationError);
  CHECK_THROWS_AS(validate(CandidateSet{"x", {{1, "a", {0.5}}, {0, "b", {0.5}}}}), ValidationError);
  CHECK_THROWS_AS(validate(make({{"a", {1.5}}})), ValidationError);
  CHECK_NOTHROW(validate(make({{"a", {0.5}}, {std::nullopt, {}}})));
  CHECK(prefix(make({{"a", {}}, {"b", {}}, {"c", {}}}), 2).candidates.size() == 2);
  CHECK(prefix(make({{"a", {}}}), 8).candidates.size() == 1);
}

TEST_CASE("best-of-n") {
  const auto set = make({{"a", {0.5, 0.5}}, {"b", {1.0, 0.0}}, {"c", {0.9, 0.3}}});
  CHECK(best_of_n(set).chosen_path_id == 2);
  CHECK(best_of_n(set, AggregationRule::Min).chosen_path_id == 0);
  CHECK(best_of_n(make({{"a", {0.5}}, {"b", {0.25, 0.75}}})).chosen_path_id == 0);
  CHECK(best_of_n(set).score == doctest::Approx(0.6));
}

TEST_CASE("majority vote") {
  SUBCASE("normalized answers are pooled") {
    const auto r = majority_vote(make({{"Oslo", {}}, {"Bergen", {}}, {"oslo.", {}}}), TaskKind::FreeForm);
    CHECK(r.chosen_path_id == 0);
    CHECK(r.score == doctest::Approx(2.0 / 3.0));
  }
  SUBCASE("ties pick the earliest path") {
    CHECK(majority_vote(make({{"b", {}}, {"a", {}}}), TaskKind::FreeForm).chosen_path_id == 0);
    CHECK(majority_vote(make({{"a", {}}, {"b", {}}, {"b", {}}, {"a", {}}}), TaskKind::FreeForm).chosen_path_id == 0);
  }
  SUBCASE("missing answers") {
    CHECK(majority_vote(make({{std::nullopt, {}}, {"a", {}}}), TaskKind::FreeForm).chosen_path_id == 1);
    const auto r = majority_vote(make({{std::nullopt, {}}, {std::nullopt, {}}, {"a", {}}}), TaskKind::FreeForm);
    CHECK_FALSE(r.answer);
    CHECK(r.chosen_path_id == 0);
  }
}

TEST_CASE("oracle and pass@1") {
  const auto set = make({{"a", {}}, {"b", {}}, {"B", {}}});
  CHECK(oracle_select(set, "b", TaskKind::FreeForm).chosen_path_id == 1);
  CHECK(oracle_select(set, "b", TaskKind::FreeForm).score == 1.0);
  CHECK(oracle_select(set, "z", TaskKind::FreeForm).chosen_path_id == 0);
  CHECK(oracle_select(set, "z", TaskKind::FreeForm).score == 0.0);
  CHECK(pass_at_1(set, "a", TaskKind::FreeForm));
  CHECK_FALSE(pass_at_1(set, "b", TaskKind::FreeForm));
  CHECK(select(Strategy::PassAt1, set, "a", TaskKind::FreeForm).score == 1.0);
  CHECK(parse_strategy("pass@1") == Strategy::PassAt1);
  CHECK(parse_strategy("best-of-n") == Strategy::BestOfN);
}

TEST_CASE("selection json") {
  const auto set = make({{"a", {0.2}}, {std::nullopt, {0.9}}});
  const auto r = best_of_n(set);
  const auto j = to_json(r, "x", 2);
  CHECK(j["answer"].is_null());
  const auto back = selection_from_json(j);
  CHECK(back.instance_id == "x");
  CHECK(back.budget == 2);
  CHECK(back.result.chosen_path_id == 1);
  CHECK(back.result.strategy == Strategy::BestOfN);
}
