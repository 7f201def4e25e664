#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tqaprm/dataset.hpp"
#include "tqaprm/llm.hpp"
#include "tqaprm/sampler.hpp"
#include "tqaprm/verifier.hpp"

namespace tqaprm::rpe {

/// Monte-Carlo success rate of continuations from the first `step_index`
/// steps of a path (0 = the bare problem).
struct RolloutEstimate {
  int step_index = 0;
  int successes = 0;
  int rollouts = 0;
  double rate = 0.0;
  /// Fewer rollouts completed than requested.
  bool partial = false;
};

RolloutEstimate make_estimate(int step_index, int successes, int rollouts);

/// Policy prompt followed by an assistant turn holding steps 1..i (omitted
/// for i = 0), so the backend continues the solution.
std::vector<llm::ChatMessage> continuation_prompt(const data::TQAInstance& instance,
                                                  const sampling::ReasoningPath& path, int step_index);

struct RolloutOptions {
  int rollouts = 8;
  double temperature = 0.6;
  int max_tokens = 2048;
  std::optional<std::int64_t> seed;
};

/// Draws `options.rollouts` single-sample continuations (seeded seed+j) and
/// counts those whose boxed answer, read from prefix plus continuation,
/// matches the gold answer. When the backend fails after at least one
/// rollout, the estimate covers the completed ones and is marked partial.
RolloutEstimate estimate_prefix_success(const data::TQAInstance& instance, const sampling::ReasoningPath& path,
                                        int step_index, llm::Backend& backend, const RolloutOptions& options = {});

/// Estimates for every prefix length 0..|steps|.
std::vector<RolloutEstimate> estimate_all_prefixes(const data::TQAInstance& instance,
                                                   const sampling::ReasoningPath& path, llm::Backend& backend,
                                                   const RolloutOptions& options = {});

enum class Label { Yes, No, Undefined };

std::string_view to_string(Label label) noexcept;

struct RPELabel {
  int step_index = 1;
  std::optional<double> ratio;
  Label label = Label::Undefined;
};

/// ratio = curr.rate / prev.rate; Yes iff ratio >= tau. Undefined when the
/// previous rate is zero. Throws ValidationError unless the steps are
/// consecutive.
RPELabel relative_progress(const RolloutEstimate& prev, const RolloutEstimate& curr, double tau = 1.0);

/// Labels for steps 1..n from estimates for prefixes 0..n.
std::vector<RPELabel> label_steps(const std::vector<RolloutEstimate>& estimates, double tau = 1.0);

enum class DiscardReason { Disagreement, Incomplete, BadFormat, BadLabel };

std::string_view to_string(DiscardReason reason) noexcept;

enum class UndefinedPolicy {
  Discard,   ///< an Undefined step counts as a disagreement
  Tolerate,  ///< Undefined steps are left out of the comparison
};

enum class CompareMode {
  PerStep,    ///< every step's labels must agree
  Aggregate,  ///< only "all steps correct" must agree per instance
};

struct FilterOptions {
  UndefinedPolicy undefined = UndefinedPolicy::Discard;
  CompareMode compare = CompareMode::PerStep;
};

/// Reasons are checked in the order Incomplete, BadFormat, BadLabel,
/// Disagreement; nullopt keeps the instance. Throws ValidationError when the
/// label sequences are not aligned step for step.
std::optional<DiscardReason> filter_training_instance(const std::vector<RPELabel>& rpe,
                                                      const verify::VerificationTranscript& rationale,
                                                      const FilterOptions& options = {});

/// True when the rationale stops inside an open tag or code fence.
bool has_unclosed_structure(std::string_view text);

struct TrainingRecord {
  std::string instance_id;
  int path_id = 0;
  std::vector<RPELabel> rpe;
  verify::VerificationTranscript rationale;
};

struct TrainingConversation {
  std::vector<llm::ChatMessage> turns;
  std::vector<Label> labels;
  std::string instance_id;
  int path_id = 0;
};

struct FilterReport {
  std::size_t total = 0;
  std::size_t kept = 0;
  std::vector<std::pair<std::string, DiscardReason>> discarded;  // (record id, reason)
};

struct TrainingSet {
  std::vector<TrainingConversation> conversations;
  FilterReport report;
};

/// Filters the records and formats the kept ones as conversations, ordered by
/// (instance_id, path_id). Throws ValidationError on duplicate provenance.
TrainingSet build_training_set(std::vector<TrainingRecord> records, const FilterOptions& options = {});

/// Writes one conversation per line, atomically. `tau` is recorded in each
/// line so exports state the threshold they were labeled with.
FilterReport export_conversations(const std::vector<TrainingRecord>& records, const std::filesystem::path& out,
                                  double tau, const FilterOptions& options = {});

json to_json(const TrainingConversation& conversation, double tau);
json to_json(const FilterReport& report);
json to_json(const RolloutEstimate& estimate);
json to_json(const RPELabel& label);

}  // namespace tqaprm::rpe
