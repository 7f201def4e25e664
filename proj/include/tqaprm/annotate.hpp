#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tqaprm/dataset.hpp"
#include "tqaprm/metrics.hpp"
#include "tqaprm/sampler.hpp"

namespace tqaprm::annotate {

/// One step awaiting (or carrying) a human label, with the context needed to
/// judge it.
struct StepItem {
  metrics::StepKey key;
  std::string step_text;
  std::string question;
  std::string table_text;
  std::optional<std::string> final_answer;
  std::string gold;
  std::optional<metrics::HumanLabel> label;
};

using PathsByInstance = std::map<std::string, std::vector<sampling::ReasoningPath>>;

PathsByInstance load_paths(const std::filesystem::path& file);

/// Every step of every path, in dataset order then path and step order.
std::vector<StepItem> collect_items(const std::vector<data::TQAInstance>& instances, const PathsByInstance& paths);

json to_json(const StepItem& item);

/// Writes the items as a labeling template (label null where unlabeled).
void export_template(const std::vector<StepItem>& items, const std::filesystem::path& out);

/// Reads labeled records (unlabeled template lines are skipped) and checks
/// each against `items`. Unknown steps raise ValidationError listing them.
std::vector<metrics::AnnotationRecord> import_annotations(const std::filesystem::path& file,
                                                          const std::vector<StepItem>& items);

void write_annotations(const std::vector<metrics::AnnotationRecord>& records, const std::filesystem::path& out);

/// Sequential labeling over the unlabeled items. Labels are kept in memory
/// until save(), which rewrites the store atomically.
class Session {
 public:
  Session(std::vector<StepItem> items, std::vector<metrics::AnnotationRecord> existing,
          std::filesystem::path store);

  /// The next unlabeled item, or nullopt when all are labeled or skipped.
  const StepItem* current() const;
  void label(metrics::HumanLabel label);
  void skip();
  void save() const;

  std::size_t labeled() const noexcept { return labels_.size(); }
  std::size_t total() const noexcept { return items_.size(); }

 private:
  void advance();

  std::vector<StepItem> items_;
  std::map<metrics::StepKey, metrics::HumanLabel> labels_;
  std::filesystem::path store_;
  std::size_t cursor_ = 0;
};

}  // namespace tqaprm::annotate
