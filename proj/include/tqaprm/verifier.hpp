#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tqaprm/dataset.hpp"
#include "tqaprm/llm.hpp"
#include "tqaprm/sampler.hpp"
#include "tqaprm/sandbox.hpp"

namespace tqaprm::verify {

/// Verification strategies. GenPRM is the only one that runs code; Judge is
/// the LLM-as-a-judge baseline.
enum class VerifierKind { Textual, MDA, RRA, GenPRM, Judge };

std::string_view to_string(VerifierKind kind) noexcept;
std::optional<VerifierKind> parse_verifier_kind(std::string_view text) noexcept;

enum class Judgement { Yes, No, Unparsed };

std::string_view to_string(Judgement j) noexcept;
Judgement parse_judgement(std::string_view text);

/// Why a verdict is Unparsed.
enum class FormatIssue {
  None,
  MissingSection,  // no "### Paragraph k" header for this step
  MissingOutput,   // section without a closed <output> tag
  MissingBox,      // <output> without \boxed{...}
  BadLabel,        // boxed content is neither Yes nor No
};

std::string_view to_string(FormatIssue issue) noexcept;

struct CodeRound {
  std::string code;
  std::string output;  // captured stdout, or the framed error text
  sandbox::ExecStatus status = sandbox::ExecStatus::Ok;
};

struct StepVerdict {
  int step_index = 1;
  std::string rationale;
  std::vector<CodeRound> code_rounds;
  Judgement judgement = Judgement::Unparsed;
  double reward = 0.0;
  FormatIssue issue = FormatIssue::MissingSection;
  /// Byte offset of the boxed judgement token in the parsed text.
  std::optional<std::size_t> judgement_offset;
};

struct VerificationTranscript {
  std::string instance_id;
  int path_id = 0;
  VerifierKind kind = VerifierKind::Textual;
  std::vector<StepVerdict> verdicts;
  std::vector<llm::ChatMessage> raw_turns;
  std::chrono::milliseconds wall_time{0};
  /// Code-round limit reached while the model was still emitting code.
  bool truncated = false;
};

json to_json(const VerificationTranscript& transcript);
VerificationTranscript transcript_from_json(const json& j);

/// "<paragraph_1>\n...\n</paragraph_1>" blocks joined by blank lines.
std::string render_solution(const sampling::ReasoningPath& path);

/// The kind's prompt with the problem and tagged solution filled in, as a
/// single user message.
std::vector<llm::ChatMessage> build_verification_prompt(VerifierKind kind, const data::TQAInstance& instance,
                                                        const sampling::ReasoningPath& path);

/// Splits on "### Paragraph k" headers and reads each section's tagged
/// rationale and boxed judgement. Always returns `expected_steps` verdicts;
/// steps without a usable section are Unparsed. Rewards are left at 0.
std::vector<StepVerdict> parse_transcript(std::string_view text, std::size_t expected_steps);

/// Section boundaries found by parse_transcript: (step index, begin, end).
struct Section {
  int index = 0;
  std::size_t begin = 0;
  std::size_t end = 0;
};
std::vector<Section> find_sections(std::string_view text);

struct JudgementProbs {
  double yes = 0.0;
  double no = 0.0;
};

/// Reads p(Yes) and p(No) at a token position. Candidate tokens are compared
/// after stripping whitespace and `{ } $ *`.
std::optional<JudgementProbs> judgement_probs(const llm::TokenPosition& position);

struct RewardPolicy {
  double unparsed_reward = 0.0;
  bool use_token_probs = true;
};

/// p(Yes) / (p(Yes) + p(No)) when probabilities are given and non-degenerate;
/// otherwise Yes -> 1, No -> 0 and Unparsed -> policy.unparsed_reward.
double step_reward(const StepVerdict& verdict, std::optional<JudgementProbs> probs,
                   const RewardPolicy& policy = {});

enum class Timing {
  Measured,         ///< wall clock around the dialogue
  BackendReported,  ///< sum of backend-reported latencies (reproducible)
};

struct VerifierOptions {
  RewardPolicy reward;
  int max_code_rounds = 4;
  double temperature = 0.0;
  int max_tokens = 4096;
  bool want_token_probs = true;
  std::optional<std::int64_t> seed;
  Timing timing = Timing::Measured;
};

/// Runs one verification dialogue. For GenPRM, each assistant turn with
/// executable code fences is followed by a user turn carrying the framed
/// outputs and another backend call, up to `max_code_rounds` rounds. Sandbox
/// errors are fed back as text. Throws ValidationError when GenPRM is asked
/// for without a runner or the path has no steps.
VerificationTranscript run_verification(VerifierKind kind, const data::TQAInstance& instance,
                                        const sampling::ReasoningPath& path, llm::Backend& backend,
                                        sandbox::Runner* runner, const VerifierOptions& options = {});

}  // namespace tqaprm::verify
