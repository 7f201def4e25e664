#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace tqaprm::sandbox {

struct CodeBlock {
  std::string source;
  std::string fence_language;  // verbatim info string, may be empty
  std::size_t offset = 0;      // position of the opening fence in the turn
};

struct Extraction {
  std::vector<CodeBlock> blocks;
  std::vector<std::string> diagnostics;
};

/// All ``` fenced blocks in order. An unterminated fence yields no block and a
/// diagnostic; blocks with an empty body are skipped.
Extraction extract_code_blocks(std::string_view turn);

/// True for the fence tags that are executed (python, py, or none).
bool is_executable(const CodeBlock& block) noexcept;

struct ExecutionLimits {
  std::chrono::milliseconds wall_timeout{10'000};
  std::size_t max_output_bytes = 64 * 1024;
  /// Empty: a fresh temporary directory is created and removed per run.
  std::filesystem::path working_dir;
};

enum class ExecStatus { Ok, Error, Timeout, OutputTruncated };

std::string_view to_string(ExecStatus status) noexcept;

struct ExecutionResult {
  ExecStatus status = ExecStatus::Ok;
  std::string stdout_text;
  std::string stderr_text;
  std::chrono::milliseconds duration{0};
  bool truncated = false;
  int exit_code = 0;
};

/// argv template. `{timeout}` expands to the whole-second timeout (rounded
/// up) and `{workdir}` to the working directory.
struct ExecutorCommand {
  std::vector<std::string> argv;
};

/// Environment variable through which the child finds the serialized table.
inline constexpr const char* kTableFileEnv = "TQAPRM_TABLE_FILE";

struct ExecutionContext {
  /// Written to `table.txt` in the working directory when non-empty.
  std::string table_text;
  std::map<std::string, std::string> extra_env;
};

/// Runs `block` in a child process: source on stdin, streams captured up to
/// the byte limit, the child's process group killed at the wall timeout.
/// Throws ConfigError when the executor cannot be resolved.
ExecutionResult execute(const CodeBlock& block, const ExecutionLimits& limits, const ExecutorCommand& executor,
                        const ExecutionContext& context = {});

/// "[Code Output]\n" + stdout, with an error or timeout banner and stderr for
/// failed runs and a trailing marker when output was truncated.
std::string format_feedback(const ExecutionResult& result);

inline constexpr std::string_view kTruncationMarker = "[Output truncated]";

/// Executes code blocks on behalf of a verifier. Implementations must be
/// safe to call concurrently.
class Runner {
 public:
  virtual ~Runner() = default;
  virtual ExecutionResult run(const CodeBlock& block, const ExecutionContext& context) = 0;
};

/// Runs each block in a fresh child process via `execute`.
class SubprocessRunner final : public Runner {
 public:
  SubprocessRunner(ExecutorCommand executor, ExecutionLimits limits)
      : executor_(std::move(executor)), limits_(std::move(limits)) {}

  ExecutionResult run(const CodeBlock& block, const ExecutionContext& context) override {
    return execute(block, limits_, executor_, context);
  }

 private:
  ExecutorCommand executor_;
  ExecutionLimits limits_;
};

}  // namespace tqaprm::sandbox
