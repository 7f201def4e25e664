#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tqaprm/annotate.hpp"
#include "tqaprm/config.hpp"
#include "tqaprm/llm.hpp"
#include "tqaprm/sandbox.hpp"

namespace tqaprm::pipeline {

enum class Stage { Sample, Verify, Select, Eval, BuildTrain };

std::string_view to_string(Stage stage) noexcept;
std::optional<Stage> parse_stage(std::string_view text) noexcept;

struct StageSummary {
  Stage stage = Stage::Sample;
  /// Inputs, config and outputs matched the manifest; nothing was rerun.
  bool up_to_date = false;
  std::vector<std::string> artifacts;  // relative to the output directory
  json details = json::object();
};

json to_json(const StageSummary& summary);

/// Artifact locations relative to the output directory.
namespace artifact {
inline constexpr const char* kPaths = "paths.jsonl";
inline constexpr const char* kSelections = "selections.jsonl";
inline constexpr const char* kReport = "eval/report.json";
inline constexpr const char* kAccuracyCsv = "eval/accuracy.csv";
inline constexpr const char* kBinsCsv = "eval/bins.csv";
inline constexpr const char* kTimingCsv = "eval/timing.csv";
inline constexpr const char* kProcessCsv = "eval/process.csv";
inline constexpr const char* kConversations = "train/conversations.jsonl";
inline constexpr const char* kTrainReport = "train/report.json";
inline constexpr const char* kRollouts = "train/rollouts.jsonl";
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kAnnotations = "annotations.jsonl";
std::string transcripts(verify::VerifierKind kind);
}  // namespace artifact

/// Runs the file-coupled stages sample -> verify -> select -> eval and
/// build-train. Each stage reads its predecessor's artifacts from the output
/// directory, writes its own atomically and records digests in a manifest;
/// a rerun whose inputs, config and outputs all match is skipped.
class Pipeline {
 public:
  /// Throws ValidationError listing every config violation.
  explicit Pipeline(RunConfig config);
  ~Pipeline();

  const RunConfig& config() const noexcept { return config_; }

  /// Replaces the backend built from config (tests, embedding).
  void set_policy_backend(llm::BackendPtr backend);
  void set_verifier_backend(llm::BackendPtr backend);
  void set_runner(std::shared_ptr<sandbox::Runner> runner);

  /// Throws MissingArtifactError naming the prior stage when an input is
  /// absent.
  StageSummary run(Stage stage);

  /// Steps of the sampled paths, for labeling.
  std::vector<annotate::StepItem> annotation_items() const;
  /// Writes a labeling template for every sampled step.
  std::size_t export_annotation_template(const std::filesystem::path& out) const;
  /// Validates an annotation file against the sampled steps and stores it as
  /// the run's annotations.
  std::size_t import_annotations(const std::filesystem::path& file) const;
  /// Labeling session backed by the run's annotation store.
  std::unique_ptr<annotate::Session> open_session() const;

 private:
  struct Backends;

  llm::Backend& policy();
  llm::Backend& verifier();
  sandbox::Runner* runner();

  StageSummary sample();
  StageSummary verify();
  StageSummary select();
  StageSummary evaluate();
  StageSummary build_train();

  std::filesystem::path out(const std::string& rel) const { return config_.output_dir / rel; }
  void require(const std::string& rel, Stage producer) const;
  std::optional<std::filesystem::path> annotation_file() const;

  RunConfig config_;
  std::unique_ptr<Backends> backends_;
};

}  // namespace tqaprm::pipeline
