#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tqaprm/dataset.hpp"
#include "tqaprm/error.hpp"
#include "tqaprm/llm.hpp"

namespace tqaprm::sampling {

struct Step {
  int index = 1;  // 1-based
  std::string text;

  bool operator==(const Step&) const = default;
};

/// How a completion was split into steps.
enum class Segmentation {
  Markers,     ///< explicit "Step k:" markers
  Paragraphs,  ///< blank-line paragraphs
  Single,      ///< neither; the whole completion is one step
};

std::string_view to_string(Segmentation s) noexcept;

struct ReasoningPath {
  int path_id = 0;
  std::string raw;
  std::vector<Step> steps;
  std::optional<std::string> final_answer;
  Segmentation segmentation = Segmentation::Single;
};

/// Policy prompt for an instance: the task-kind instruction, the table and
/// the question in a single user message.
std::vector<llm::ChatMessage> build_policy_prompt(const data::TQAInstance& instance);

/// The instruction line used for a task kind.
std::string_view policy_instruction(data::TaskKind kind) noexcept;

struct SegmentResult {
  std::vector<Step> steps;
  Segmentation segmentation = Segmentation::Single;
};

/// Splits on "Step k:" markers when at least two are present, otherwise on
/// blank lines. Text before the first marker is kept with step 1. Throws
/// ValidationError when `raw` is blank.
SegmentResult segment(std::string_view raw);
std::vector<Step> segment_steps(std::string_view raw);

/// Content of the last balanced `\boxed{...}` group, trimmed.
std::optional<std::string> extract_final_answer(std::string_view raw);

ReasoningPath make_path(int path_id, std::string raw);

struct SamplingOptions {
  int n = 8;
  double temperature = 0.6;
  int max_tokens = 2048;
  std::optional<std::int64_t> seed;
  /// One request with sample_count n; otherwise n single-sample requests
  /// (seeded seed+j), which lets a failure keep the paths already drawn.
  bool batch = true;
};

/// Error raised when sampling an instance fails; carries the paths that were
/// obtained before the failure.
class SamplingError : public Error {
 public:
  SamplingError(const std::string& what, std::vector<ReasoningPath> partial)
      : Error(ErrorCode::Sampling, what), partial_(std::move(partial)) {}
  const std::vector<ReasoningPath>& partial() const noexcept { return partial_; }

 private:
  std::vector<ReasoningPath> partial_;
};

std::vector<ReasoningPath> sample_paths(const data::TQAInstance& instance, const SamplingOptions& options,
                                        llm::Backend& backend);

json to_json(const ReasoningPath& path, std::string_view instance_id);
/// Returns (instance_id, path).
std::pair<std::string, ReasoningPath> path_from_json(const json& j);

}  // namespace tqaprm::sampling
