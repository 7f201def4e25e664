#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tqaprm/dataset.hpp"
#include "tqaprm/rpe.hpp"
#include "tqaprm/sandbox.hpp"
#include "tqaprm/selector.hpp"
#include "tqaprm/verifier.hpp"

namespace tqaprm::pipeline {

struct BackendConfig {
  std::string type = "scripted";  // scripted | http
  std::filesystem::path script;
  std::string base_url;  // http; falls back to HARNESS_API_BASE
  std::string model;
  int top_logprobs = 5;
  int timeout_s = 120;
};

struct TrainConfig {
  int rollouts = 8;
  double tau = 1.0;
  rpe::UndefinedPolicy undefined = rpe::UndefinedPolicy::Discard;
  rpe::CompareMode compare = rpe::CompareMode::PerStep;
  verify::VerifierKind rationale = verify::VerifierKind::GenPRM;
};

struct RunConfig {
  std::filesystem::path dataset_path;
  data::TaskKind kind = data::TaskKind::FreeForm;
  std::string dataset_name = "dataset";

  int paths = 8;
  double temperature = 0.6;
  int max_tokens = 2048;
  bool batch = true;

  std::vector<verify::VerifierKind> verifiers{verify::VerifierKind::Textual};
  int verifier_max_tokens = 4096;
  selection::AggregationRule aggregation = selection::AggregationRule::Mean;
  std::vector<selection::Strategy> strategies{selection::Strategy::BestOfN, selection::Strategy::Majority,
                                              selection::Strategy::Oracle, selection::Strategy::PassAt1};
  /// Empty: every curve budget up to `paths`, plus `paths` itself.
  std::vector<int> budgets;

  std::vector<std::string> executor;
  sandbox::ExecutionLimits limits;
  int code_rounds = 4;

  std::optional<std::filesystem::path> cache_dir;
  std::int64_t seed = 0;
  std::filesystem::path output_dir = "out";
  int concurrency = 4;

  BackendConfig backend;
  std::optional<BackendConfig> verifier_backend;

  verify::RewardPolicy reward;
  double threshold = 0.5;
  verify::Timing timing = verify::Timing::Measured;

  TrainConfig train;
  std::optional<std::filesystem::path> annotations;

  const BackendConfig& verification_backend() const { return verifier_backend ? *verifier_backend : backend; }
  /// Budgets in ascending order, defaults applied.
  std::vector<std::size_t> effective_budgets() const;
};

/// Reads a config document. Relative paths resolve against `base_dir`.
/// Unknown keys and ill-typed values are appended to `violations` and leave
/// the corresponding field at its default.
RunConfig config_from_json(const json& doc, const std::filesystem::path& base_dir,
                           std::vector<std::string>& violations);

json config_to_json(const RunConfig& config);

/// Every semantic violation, e.g. "path budget must be >= 1". Empty when the
/// config is usable.
std::vector<std::string> validate_config(const RunConfig& config);

/// Sets `dotted.key` in a config document; `value` is parsed as JSON when
/// possible and used as a string otherwise.
void apply_override(json& doc, const std::string& dotted_key, const std::string& value);

}  // namespace tqaprm::pipeline
