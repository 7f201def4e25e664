#include "doctest.h"
#include "support.hpp"

#include "tqaprm/error.hpp"
#include "tqaprm/sandbox.hpp"

using namespace tqaprm;
using namespace tqaprm::sandbox;

namespace {

ExecutorCommand stub() { return {{"/bin/sh", testing::fixture("stub_executor.sh").string()}}; }

ExecutionLimits quick() {
  ExecutionLimits l;
  l.wall_timeout = std::chrono::milliseconds(500);
  return l;
}

}  // namespace

TEST_CASE("code block extraction") {
  const auto ex = extract_code_blocks(
      "intro\n```python\nprint(1+1)\n```\ntext\n```\nx = 1\n```\n```json\n{}\n```\n```py\n\n```\n```python\nopen");
  REQUIRE(ex.blocks.size() == 3);
  CHECK(ex.blocks[0].source == "print(1+1)");
  CHECK(ex.blocks[0].fence_language == "python");
  CHECK(is_executable(ex.blocks[0]));
  CHECK(is_executable(ex.blocks[1]));
  CHECK_FALSE(is_executable(ex.blocks[2]));
  CHECK(ex.diagnostics.size() == 1);
  CHECK(ex.blocks[0].offset == 6);
}

TEST_CASE("execute through the stub executor") {
  CodeBlock ok{"print(1+1)\n", "python", 0};
  const auto r = execute(ok, quick(), stub());
  CHECK(r.status == ExecStatus::Ok);
  CHECK(r.stdout_text == "2\n");
  CHECK(format_feedback(r) == "[Code Output]\n2");

  const auto failed = execute(CodeBlock{"fail()\n", "python", 0}, quick(), stub());
  CHECK(failed.status == ExecStatus::Error);
  CHECK(failed.exit_code == 1);
  CHECK(failed.stderr_text.find("Traceback") != std::string::npos);
  CHECK(format_feedback(failed).find("[Error]") != std::string::npos);

  const auto start = std::chrono::steady_clock::now();
  const auto spun = execute(CodeBlock{"while True: pass\n", "python", 0}, quick(), stub());
  CHECK(spun.status == ExecStatus::Timeout);
  CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(3));
  CHECK(format_feedback(spun).find("[Timeout]") != std::string::npos);
}

TEST_CASE("output limit") {
  auto limits = quick();
  limits.max_output_bytes = 8;
  const auto r = execute(CodeBlock{"print('abcdefghijklmnop')\n", "python", 0}, limits,
                         ExecutorCommand{{"/bin/sh", "-c", "cat >/dev/null; echo abcdefghijklmnop"}});
  CHECK(r.truncated);
  CHECK(r.stdout_text.size() <= 8);
  CHECK(format_feedback(r).find(kTruncationMarker) != std::string::npos);
}

TEST_CASE("context is visible to the child") {
  ExecutionContext ctx;
  ctx.table_text = "[['A'], ['1']]";
  ctx.extra_env["EXTRA"] = "yes";
  const auto r = execute(CodeBlock{"x", "", 0}, quick(),
                         ExecutorCommand{{"/bin/sh", "-c", std::string("cat >/dev/null; cat \"$") + kTableFileEnv +
                                                               "\"; echo; echo $EXTRA; echo {timeout}"}},
                         ctx);
  CHECK(r.stdout_text == "[['A'], ['1']]\nyes\n1\n");
}

TEST_CASE("unresolvable executor") {
  CHECK_THROWS_AS(execute(CodeBlock{"x", "", 0}, quick(), ExecutorCommand{{}}), ConfigError);
  CHECK_THROWS_AS(execute(CodeBlock{"x", "", 0}, quick(), ExecutorCommand{{"/nonexistent/python"}}), ConfigError);
}
