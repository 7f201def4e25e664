#include "tqaprm/selector.hpp"

#include <algorithm>
#include <map>
#include <numeric>

#include "tqaprm/error.hpp"

namespace tqaprm::selection {

namespace {

SelectionResult pick(Strategy strategy, const Candidate& c, double score) {
  return SelectionResult{strategy, c.path_id, c.answer, score};
}

void require_nonempty(const CandidateSet& set) {
  if (set.candidates.empty()) throw ValidationError("candidate set " + set.instance_id + " is empty");
}

}  // namespace

void validate(const CandidateSet& set) {
  require_nonempty(set);
  for (std::size_t i = 0; i < set.candidates.size(); ++i) {
    const auto& c = set.candidates[i];
    if (i > 0 && c.path_id <= set.candidates[i - 1].path_id) {
      throw ValidationError("candidate set " + set.instance_id + ": path ids must be unique and ascending");
    }
    for (double r : c.step_rewards) {
      if (!(r >= 0.0 && r <= 1.0)) {
        throw ValidationError("candidate set " + set.instance_id + ": reward outside [0,1] on path " +
                              std::to_string(c.path_id));
      }
    }
  }
}

CandidateSet prefix(const CandidateSet& set, std::size_t n) {
  CandidateSet out{set.instance_id, {}};
  const auto take = std::min(n, set.candidates.size());
  out.candidates.assign(set.candidates.begin(), set.candidates.begin() + static_cast<std::ptrdiff_t>(take));
  return out;
}

std::string_view to_string(AggregationRule rule) noexcept {
  switch (rule) {
    case AggregationRule::Mean: return "mean";
    case AggregationRule::Min: return "min";
    case AggregationRule::Last: return "last";
  }
  return "mean";
}

std::optional<AggregationRule> parse_aggregation(std::string_view text) noexcept {
  for (auto r : {AggregationRule::Mean, AggregationRule::Min, AggregationRule::Last}) {
    if (to_string(r) == text) return r;
  }
  return std::nullopt;
}

double aggregate(const std::vector<double>& rewards, AggregationRule rule) {
  if (rewards.empty()) throw ValidationError("cannot aggregate an empty reward list");
  switch (rule) {
    case AggregationRule::Mean:
      return std::accumulate(rewards.begin(), rewards.end(), 0.0) / static_cast<double>(rewards.size());
    case AggregationRule::Min: return *std::min_element(rewards.begin(), rewards.end());
    case AggregationRule::Last: return rewards.back();
  }
  return 0.0;
}

std::string_view to_string(Strategy strategy) noexcept {
  switch (strategy) {
    case Strategy::BestOfN: return "best-of-n";
    case Strategy::Majority: return "majority";
    case Strategy::Oracle: return "oracle";
    case Strategy::PassAt1: return "pass@1";
  }
  return "best-of-n";
}

std::optional<Strategy> parse_strategy(std::string_view text) noexcept {
  for (auto s : {Strategy::BestOfN, Strategy::Majority, Strategy::Oracle, Strategy::PassAt1}) {
    if (to_string(s) == text) return s;
  }
  return std::nullopt;
}

SelectionResult best_of_n(const CandidateSet& set, AggregationRule rule) {
  require_nonempty(set);
  std::optional<std::size_t> best;
  double best_score = 0.0;
  for (std::size_t i = 0; i < set.candidates.size(); ++i) {
    const auto& c = set.candidates[i];
    if (c.step_rewards.empty()) {
      throw ValidationError("path " + std::to_string(c.path_id) + " of " + set.instance_id + " has no step rewards");
    }
    const double score = aggregate(c.step_rewards, rule);
    if (!best || score > best_score ||
        (score == best_score && c.path_id < set.candidates[*best].path_id)) {
      best = i;
      best_score = score;
    }
  }
  return pick(Strategy::BestOfN, set.candidates[*best], best_score);
}

SelectionResult majority_vote(const CandidateSet& set, data::TaskKind kind) {
  require_nonempty(set);
  std::map<std::string, int> counts;
  std::vector<std::optional<std::string>> keys;
  int absent = 0;
  for (const auto& c : set.candidates) {
    if (!c.answer) {
      ++absent;
      keys.emplace_back();
      continue;
    }
    auto key = data::normalize_answer(*c.answer, kind);
    ++counts[key];
    keys.emplace_back(std::move(key));
  }
  int top = 0;
  for (const auto& [key, n] : counts) top = std::max(top, n);

  const double total = static_cast<double>(set.candidates.size());
  if (absent > top) {
    for (std::size_t i = 0; i < set.candidates.size(); ++i) {
      if (!keys[i]) return pick(Strategy::Majority, set.candidates[i], absent / total);
    }
  }
  for (std::size_t i = 0; i < set.candidates.size(); ++i) {
    if (keys[i] && counts[*keys[i]] == top) return pick(Strategy::Majority, set.candidates[i], top / total);
  }
  return pick(Strategy::Majority, set.candidates.front(), 0.0);
}

SelectionResult oracle_select(const CandidateSet& set, std::string_view gold, data::TaskKind kind) {
  require_nonempty(set);
  for (const auto& c : set.candidates) {
    if (data::answer_matches(c.answer, gold, kind)) return pick(Strategy::Oracle, c, 1.0);
  }
  return pick(Strategy::Oracle, set.candidates.front(), 0.0);
}

SelectionResult first_path(const CandidateSet& set) {
  require_nonempty(set);
  return pick(Strategy::PassAt1, set.candidates.front(), 0.0);
}

bool pass_at_1(const CandidateSet& set, std::string_view gold, data::TaskKind kind) {
  require_nonempty(set);
  return data::answer_matches(set.candidates.front().answer, gold, kind);
}

SelectionResult select(Strategy strategy, const CandidateSet& set, std::string_view gold, data::TaskKind kind,
                       AggregationRule rule) {
  switch (strategy) {
    case Strategy::BestOfN: return best_of_n(set, rule);
    case Strategy::Majority: return majority_vote(set, kind);
    case Strategy::Oracle: return oracle_select(set, gold, kind);
    case Strategy::PassAt1: {
      auto r = first_path(set);
      r.score = pass_at_1(set, gold, kind) ? 1.0 : 0.0;
      return r;
    }
  }
  throw ValidationError("unknown strategy");
}

json to_json(const SelectionResult& result, std::string_view instance_id, std::size_t budget) {
  return json{{"instance_id", instance_id},
              {"strategy", std::string(to_string(result.strategy))},
              {"budget", budget},
              {"chosen_path_id", result.chosen_path_id},
              {"answer", result.answer ? json(*result.answer) : json(nullptr)},
              {"score", result.score}};
}

SelectionRecord selection_from_json(const json& j) {
  SelectionRecord rec;
  rec.instance_id = j.at("instance_id").get<std::string>();
  rec.budget = j.at("budget").get<std::size_t>();
  const auto name = j.at("strategy").get<std::string>();
  const auto strategy = parse_strategy(name);
  if (!strategy) throw ParseError(0, "unknown strategy \"" + name + "\"");
  rec.result.strategy = *strategy;
  rec.result.chosen_path_id = j.at("chosen_path_id").get<int>();
  if (const auto& a = j.at("answer"); !a.is_null()) rec.result.answer = a.get<std::string>();
  rec.result.score = j.at("score").get<double>();
  return rec;
}

}  // namespace tqaprm::selection
