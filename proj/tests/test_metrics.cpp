#include "doctest.h"
#include "support.hpp"

#include "tqaprm/error.hpp"
#include "tqaprm/metrics.hpp"

using namespace tqaprm;
using namespace tqaprm::metrics;

namespace {

data::TQAInstance inst(const std::string& id, const std::string& gold) {
  return {id, {{"A"}, {}}, "q", gold, data::TaskKind::FreeForm};
}

selection::SelectionResult picked(const std::string& answer) {
  return {selection::Strategy::BestOfN, 0, answer, 1.0};
}

}  // namespace

TEST_CASE("answer accuracy") {
  std::map<SelectionKey, selection::SelectionResult> sel;
  sel[{"a", "best-of-n", 1}] = picked("1");
  sel[{"b", "best-of-n", 1}] = picked("x");
  sel[{"a", "best-of-n", 2}] = picked("1");
  sel[{"b", "best-of-n", 2}] = picked("2");
  const auto table = answer_accuracy(sel, {inst("a", "1"), inst("b", "2")});
  CHECK(table.em.at("best-of-n").at(1) == doctest::Approx(0.5));
  CHECK(table.em.at("best-of-n").at(2) == doctest::Approx(1.0));

  sel.erase({"b", "best-of-n", 2});
  CHECK_THROWS_AS(answer_accuracy(sel, {inst("a", "1"), inst("b", "2")}), ValidationError);
}

TEST_CASE("process accuracy") {
  std::map<StepKey, double> rewards{{{"a", 0, 1}, 0.9}, {{"a", 0, 2}, 0.2}, {{"a", 1, 1}, 0.5}, {{"b", 0, 1}, 0.1}};
  std::vector<AnnotationRecord> ann{{"a", 0, 1, HumanLabel::Correct},
                                    {"a", 0, 2, HumanLabel::Correct},
                                    {"a", 1, 1, HumanLabel::Incorrect},
                                    {"b", 0, 1, HumanLabel::Incorrect}};
  const auto s = process_accuracy(rewards, ann);
  CHECK(s.confusion.tp == 1);
  CHECK(s.confusion.fn == 1);
  CHECK(s.confusion.fp == 1);
  CHECK(s.confusion.tn == 1);
  CHECK(s.accuracy == doctest::Approx(0.5));
  CHECK(s.macro_accuracy == doctest::Approx((0.5 + 0.0 + 1.0) / 3));
  CHECK(*s.precision == doctest::Approx(0.5));
  CHECK(*s.recall == doctest::Approx(0.5));

  ann.push_back({"z", 3, 1, HumanLabel::Correct});
  try {
    process_accuracy(rewards, ann);
    FAIL("expected missing verdict error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("z") != std::string::npos);
  }
  ann.pop_back();
  ann.push_back(ann.front());
  CHECK_THROWS_AS(process_accuracy(rewards, ann), ValidationError);
}

TEST_CASE("annotation files") {
  testing::TempDir dir("ann");
  write_file_atomic(dir / "a.jsonl", to_json(AnnotationRecord{"a", 2, 3, HumanLabel::Incorrect}).dump() + "\n");
  const auto loaded = load_annotations(dir / "a.jsonl");
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].path_id == 2);
  CHECK(loaded[0].label == HumanLabel::Incorrect);
  CHECK(to_json(loaded[0])["label"] == "incorrect");
}

TEST_CASE("bins") {
  CHECK(bin_index(0.0) == 0);
  CHECK(bin_index(0.1999) == 0);
  CHECK(bin_index(0.2) == 1);
  CHECK(bin_index(0.8) == 4);
  CHECK(bin_index(1.0) == 4);
  CHECK(bin_index(-3) == 0);
  CHECK(bin_index(7) == 4);
  const auto bins = bin_analysis({{0.1, true}, {0.9, true}, {0.95, false}});
  REQUIRE(bins.size() == 5);
  CHECK(bins[0].em == 1.0);
  CHECK(bins[4].count == 2);
  CHECK(*bins[4].em == doctest::Approx(0.5));
  CHECK_FALSE(bins[2].em);
  CHECK(bins[4].closed_upper);
  CHECK_FALSE(bins[3].closed_upper);
}

TEST_CASE("consistency") {
  CHECK(classify_consistency({1, 1, 1, 0, 0}) == ConsistencyClass::Consistent);
  CHECK(classify_consistency({0, 1, 1, 0, 1}) == ConsistencyClass::Inconsistent);
  CHECK(classify_consistency({0}) == ConsistencyClass::Consistent);
  CHECK_THROWS_AS(classify_consistency({}), ValidationError);
}

TEST_CASE("timing report") {
  const auto rows = timing_report({{"d", "textual", std::chrono::milliseconds(1000)},
                                   {"d", "textual", std::chrono::milliseconds(3000)},
                                   {"d", "genprm", std::chrono::milliseconds(500)}});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].verifier == "genprm");
  CHECK(rows[1].mean_seconds == doctest::Approx(2.0));
  CHECK(rows[1].spans == 2);
}
