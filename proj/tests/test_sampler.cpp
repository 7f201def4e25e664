#include "doctest.h"
#include "support.hpp"

#include "tqaprm/error.hpp"
#include "tqaprm/sampler.hpp"

using namespace tqaprm;
using namespace tqaprm::sampling;

namespace {

data::TQAInstance instance() {
  return {"i1", {{"City", "Pop"}, {{"Oslo", "709,000"}}}, "Largest city?", "Oslo", data::TaskKind::FreeForm};
}

/// Fails every request after the first `ok` ones.
class Breaks final : public llm::Backend {
 public:
  explicit Breaks(int ok) : ok_(ok) {}
  llm::GenerationResult generate(const llm::GenerationRequest&) override {
    if (calls_++ >= ok_) throw TransportError("down");
    return {{{"Step 1: look.\nStep 2: done. \\boxed{Oslo}", {}}}, {}, false};
  }

 private:
  int ok_;
  int calls_ = 0;
};

}  // namespace

TEST_CASE("segmentation") {
  SUBCASE("step markers") {
    const auto r = segment("Intro line.\nStep 1: read the table.\nStep 2: add 1 and 2.\nStep 3: \\boxed{3}");
    CHECK(r.segmentation == Segmentation::Markers);
    REQUIRE(r.steps.size() == 3);
    CHECK(r.steps[0].index == 1);
    CHECK(r.steps[0].text == "Intro line.\nStep 1: read the table.");
    CHECK(r.steps[2].text == "Step 3: \\boxed{3}");
  }
  SUBCASE("paragraphs") {
    const auto r = segment("First we look.\n\n\nThen we count.\n\nAnswer \\boxed{2}");
    CHECK(r.segmentation == Segmentation::Paragraphs);
    CHECK(r.steps.size() == 3);
  }
  SUBCASE("single") {
    const auto r = segment("Only one step 1: here");
    CHECK(r.segmentation == Segmentation::Single);
    CHECK(r.steps.size() == 1);
  }
  CHECK_THROWS_AS(segment("  \n "), ValidationError);
}

TEST_CASE("final answer extraction") {
  CHECK(extract_final_answer("a \\boxed{1} then \\boxed{ {2} }") == std::optional<std::string>("{2}"));
  CHECK(extract_final_answer("Final answer: \\boxed{February 1, 2013}") ==
        std::optional<std::string>("February 1, 2013"));
  CHECK_FALSE(extract_final_answer("no box here"));
  CHECK_FALSE(extract_final_answer("\\boxed{unclosed"));
}

TEST_CASE("policy prompt") {
  const auto msgs = build_policy_prompt(instance());
  REQUIRE(msgs.size() == 1);
  CHECK(msgs[0].role == llm::Role::User);
  CHECK(msgs[0].content.find("Please reason step by step") != std::string::npos);
  CHECK(msgs[0].content.find("Question is: Largest city?") != std::string::npos);
  CHECK(policy_instruction(data::TaskKind::Binary).find("True/False") != std::string_view::npos);
  CHECK(policy_instruction(data::TaskKind::Ternary).find("not enough info") != std::string_view::npos);
}

TEST_CASE("sample_paths") {
  llm::Script script;
  script.rules.push_back({{"Largest city?"},
                          {"Step 1: a\nStep 2: \\boxed{Oslo}", "Step 1: b\nStep 2: \\boxed{Bergen}", "no steps"},
                          false,
                          {},
                          std::nullopt,
                          {}});
  auto backend = llm::scripted_backend(script);
  SamplingOptions opts;
  opts.n = 4;
  opts.seed = 0;
  for (bool batch : {true, false}) {
    opts.batch = batch;
    const auto paths = sample_paths(instance(), opts, *backend);
    REQUIRE(paths.size() == 4);
    CHECK(paths[0].path_id == 0);
    CHECK(paths[0].final_answer == std::optional<std::string>("Oslo"));
    CHECK(paths[1].final_answer == std::optional<std::string>("Bergen"));
    CHECK_FALSE(paths[2].final_answer);
    CHECK(paths[3].raw == paths[0].raw);
  }

  SUBCASE("failure keeps the paths drawn so far") {
    Breaks breaks(2);
    opts.batch = false;
    try {
      sample_paths(instance(), opts, breaks);
      FAIL("expected a sampling error");
    } catch (const SamplingError& e) {
      CHECK(e.partial().size() == 2);
    }
  }

  SUBCASE("json round trip") {
    const auto p = sample_paths(instance(), opts, *backend)[1];
    const auto [id, back] = path_from_json(to_json(p, "i1"));
    CHECK(id == "i1");
    CHECK(back.steps == p.steps);
    CHECK(back.final_answer == p.final_answer);
  }
}
