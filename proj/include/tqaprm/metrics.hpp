#pragma once

#include <array>
#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tqaprm/dataset.hpp"
#include "tqaprm/selector.hpp"
#include "tqaprm/verifier.hpp"

namespace tqaprm::metrics {

/// Exact-match accuracy per (strategy, budget).
struct AccuracyTable {
  /// strategy -> budget -> EM
  std::map<std::string, std::map<std::size_t, double>> em;
};

struct SelectionKey {
  std::string instance_id;
  std::string strategy;
  std::size_t budget = 0;
  auto operator<=>(const SelectionKey&) const = default;
};

/// EM per strategy and budget over `golds`. Every (instance, strategy,
/// budget) combination present for any instance must be present for all;
/// a missing one raises ValidationError.
AccuracyTable answer_accuracy(const std::map<SelectionKey, selection::SelectionResult>& selections,
                              const std::vector<data::TQAInstance>& golds);

/// Budgets reported on the Best@N curve.
inline constexpr std::array<std::size_t, 4> kCurveBudgets = {1, 2, 4, 8};

enum class HumanLabel { Correct, Incorrect };

struct AnnotationRecord {
  std::string instance_id;
  int path_id = 0;
  int step_index = 1;
  HumanLabel label = HumanLabel::Correct;
};

json to_json(const AnnotationRecord& record);
AnnotationRecord annotation_from_json(const json& j);
std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path);

struct Confusion {
  std::size_t tp = 0;  // predicted correct, annotated correct
  std::size_t fp = 0;  // predicted correct, annotated incorrect
  std::size_t tn = 0;
  std::size_t fn = 0;
  std::size_t total() const noexcept { return tp + fp + tn + fn; }
};

struct ProcessScores {
  Confusion confusion;
  double accuracy = 0.0;  // micro, over steps
  /// Mean of per-path step accuracies.
  double macro_accuracy = 0.0;
  std::optional<double> precision;
  std::optional<double> recall;
};

struct StepKey {
  std::string instance_id;
  int path_id = 0;
  int step_index = 1;
  auto operator<=>(const StepKey&) const = default;
};

/// Step-verification quality. A step is predicted correct iff its reward is
/// at least `threshold`. Throws ValidationError listing annotations without
/// a verdict, or on duplicate annotations.
ProcessScores process_accuracy(const std::map<StepKey, double>& rewards,
                               const std::vector<AnnotationRecord>& annotations, double threshold = 0.5);

std::map<StepKey, double> step_rewards(const std::vector<verify::VerificationTranscript>& transcripts);

struct BinStat {
  double lower = 0.0;
  double upper = 0.0;
  bool closed_upper = false;
  std::size_t count = 0;
  std::size_t correct = 0;
  std::optional<double> em;  // nullopt for an empty bin
};

/// Index of the score bin [0,.2) [.2,.4) [.4,.6) [.6,.8) [.8,1]. Scores
/// outside [0,1] are clamped.
std::size_t bin_index(double score) noexcept;

/// Per-bin count and EM for (mean step score, answer correct) pairs.
std::vector<BinStat> bin_analysis(const std::vector<std::pair<double, bool>>& paths);

enum class ConsistencyClass { Consistent, Inconsistent };

std::string_view to_string(ConsistencyClass c) noexcept;

/// Consistent iff the labels never rise (no 0 followed later by a 1).
/// Throws ValidationError on an empty sequence.
ConsistencyClass classify_consistency(const std::vector<int>& labels);

struct TimingSpan {
  std::string dataset;
  std::string verifier;
  std::chrono::milliseconds duration{0};
};

struct TimingRow {
  std::string dataset;
  std::string verifier;
  std::size_t spans = 0;
  double mean_seconds = 0.0;
};

/// Mean seconds per span grouped by (dataset, verifier), in key order.
std::vector<TimingRow> timing_report(const std::vector<TimingSpan>& spans);

}  // namespace tqaprm::metrics
