#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tqaprm/dataset.hpp"

namespace tqaprm::selection {

struct Candidate {
  int path_id = 0;
  std::optional<std::string> answer;
  std::vector<double> step_rewards;
};

struct CandidateSet {
  std::string instance_id;
  std::vector<Candidate> candidates;  // ordered by path_id
};

/// Throws ValidationError on an empty set, unordered or duplicate path ids,
/// or rewards outside [0, 1].
void validate(const CandidateSet& set);

/// The first `n` candidates (all of them when n exceeds the set size).
CandidateSet prefix(const CandidateSet& set, std::size_t n);

enum class AggregationRule { Mean, Min, Last };

std::string_view to_string(AggregationRule rule) noexcept;
std::optional<AggregationRule> parse_aggregation(std::string_view text) noexcept;

/// Throws ValidationError on an empty list.
double aggregate(const std::vector<double>& rewards, AggregationRule rule);

enum class Strategy { BestOfN, Majority, Oracle, PassAt1 };

std::string_view to_string(Strategy strategy) noexcept;
std::optional<Strategy> parse_strategy(std::string_view text) noexcept;

struct SelectionResult {
  Strategy strategy = Strategy::BestOfN;
  int chosen_path_id = 0;
  std::optional<std::string> answer;
  double score = 0.0;
};

/// Highest aggregated step reward; ties go to the lowest path id.
SelectionResult best_of_n(const CandidateSet& set, AggregationRule rule = AggregationRule::Mean);

/// Most frequent normalized answer; ties go to the earliest path in any
/// maximal class. Paths without an answer form one class that wins only when
/// it outnumbers every present answer. Score is the winning vote share.
SelectionResult majority_vote(const CandidateSet& set, data::TaskKind kind);

/// First candidate matching `gold`, else the first candidate.
SelectionResult oracle_select(const CandidateSet& set, std::string_view gold, data::TaskKind kind);

/// Path 0 as a selection.
SelectionResult first_path(const CandidateSet& set);

bool pass_at_1(const CandidateSet& set, std::string_view gold, data::TaskKind kind);

SelectionResult select(Strategy strategy, const CandidateSet& set, std::string_view gold, data::TaskKind kind,
                       AggregationRule rule = AggregationRule::Mean);

json to_json(const SelectionResult& result, std::string_view instance_id, std::size_t budget);

struct SelectionRecord {
  std::string instance_id;
  std::size_t budget = 0;
  SelectionResult result;
};
SelectionRecord selection_from_json(const json& j);

}  // namespace tqaprm::selection
