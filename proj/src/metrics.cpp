#include "tqaprm/metrics.hpp"

#include <algorithm>
#include <set>

#include "tqaprm/error.hpp"
#include "tqaprm/json_io.hpp"

namespace tqaprm::metrics {

namespace {

std::string describe(const StepKey& k) {
  return k.instance_id + "/" + std::to_string(k.path_id) + "/" + std::to_string(k.step_index);
}

constexpr std::array<double, 6> kBinEdges = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};

}  // namespace

AccuracyTable answer_accuracy(const std::map<SelectionKey, selection::SelectionResult>& selections,
                              const std::vector<data::TQAInstance>& golds) {
  std::set<std::pair<std::string, std::size_t>> combos;
  for (const auto& [key, result] : selections) combos.emplace(key.strategy, key.budget);

  AccuracyTable table;
  if (golds.empty()) return table;
  for (const auto& [strategy, budget] : combos) {
    std::size_t correct = 0;
    for (const auto& inst : golds) {
      const auto it = selections.find(SelectionKey{inst.id, strategy, budget});
      if (it == selections.end()) {
        throw ValidationError("no " + strategy + " selection at budget " + std::to_string(budget) +
                              " for instance " + inst.id);
      }
      if (data::answer_matches(it->second.answer, inst.gold, inst.kind)) ++correct;
    }
    table.em[strategy][budget] = static_cast<double>(correct) / static_cast<double>(golds.size());
  }
  return table;
}

json to_json(const AnnotationRecord& record) {
  return json{{"instance_id", record.instance_id},
              {"path_id", record.path_id},
              {"step_index", record.step_index},
              {"label", record.label == HumanLabel::Correct ? "correct" : "incorrect"}};
}

AnnotationRecord annotation_from_json(const json& j) {
  AnnotationRecord r;
  r.instance_id = j.at("instance_id").get<std::string>();
  r.path_id = j.at("path_id").get<int>();
  r.step_index = j.at("step_index").get<int>();
  const auto label = j.at("label").get<std::string>();
  if (label == "correct") r.label = HumanLabel::Correct;
  else if (label == "incorrect") r.label = HumanLabel::Incorrect;
  else throw ValidationError("annotation label must be correct|incorrect, got \"" + label + "\"");
  return r;
}

std::vector<AnnotationRecord> load_annotations(const std::filesystem::path& path) {
  std::vector<AnnotationRecord> out;
  for_each_jsonl(path, [&](std::size_t line, const json& j) {
    try {
      out.push_back(annotation_from_json(j));
    } catch (const json::exception& e) {
      throw ParseError(line, e.what());
    } catch (const ValidationError& e) {
      throw ParseError(line, e.what());
    }
  });
  return out;
}

ProcessScores process_accuracy(const std::map<StepKey, double>& rewards,
                               const std::vector<AnnotationRecord>& annotations, double threshold) {
  std::vector<std::string> missing;
  std::set<StepKey> seen;
  for (const auto& a : annotations) {
    StepKey key{a.instance_id, a.path_id, a.step_index};
    if (!seen.insert(key).second) throw ValidationError("duplicate annotation " + describe(key));
    if (!rewards.count(key)) missing.push_back(describe(key));
  }
  if (!missing.empty()) {
    std::string msg = "annotations without a verdict:";
    for (const auto& m : missing) msg += " " + m;
    throw ValidationError(msg);
  }

  ProcessScores scores;
  std::map<std::pair<std::string, int>, std::pair<std::size_t, std::size_t>> per_path;  // (right, total)
  for (const auto& a : annotations) {
    const bool predicted = rewards.at(StepKey{a.instance_id, a.path_id, a.step_index}) >= threshold;
    const bool actual = a.label == HumanLabel::Correct;
    auto& c = scores.confusion;
    if (predicted && actual) ++c.tp;
    else if (predicted) ++c.fp;
    else if (actual) ++c.fn;
    else ++c.tn;
    auto& p = per_path[{a.instance_id, a.path_id}];
    p.first += predicted == actual ? 1 : 0;
    ++p.second;
  }
  const auto& c = scores.confusion;
  if (c.total() > 0) scores.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  if (!per_path.empty()) {
    double sum = 0.0;
    for (const auto& [key, p] : per_path) sum += static_cast<double>(p.first) / static_cast<double>(p.second);
    scores.macro_accuracy = sum / static_cast<double>(per_path.size());
  }
  if (c.tp + c.fp > 0) scores.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) scores.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  return scores;
}

std::map<StepKey, double> step_rewards(const std::vector<verify::VerificationTranscript>& transcripts) {
  std::map<StepKey, double> out;
  for (const auto& t : transcripts) {
    for (const auto& v : t.verdicts) out[StepKey{t.instance_id, t.path_id, v.step_index}] = v.reward;
  }
  return out;
}

std::size_t bin_index(double score) noexcept {
  if (!(score > 0.0)) return 0;
  for (std::size_t i = 1; i + 1 < kBinEdges.size(); ++i) {
    if (score < kBinEdges[i]) return i - 1;
  }
  return kBinEdges.size() - 2;
}

std::vector<BinStat> bin_analysis(const std::vector<std::pair<double, bool>>& paths) {
  std::vector<BinStat> bins(kBinEdges.size() - 1);
  for (std::size_t i = 0; i < bins.size(); ++i) {
    bins[i].lower = kBinEdges[i];
    bins[i].upper = kBinEdges[i + 1];
    bins[i].closed_upper = i + 1 == bins.size();
  }
  for (const auto& [score, correct] : paths) {
    auto& b = bins[bin_index(score)];
    ++b.count;
    if (correct) ++b.correct;
  }
  for (auto& b : bins) {
    if (b.count > 0) b.em = static_cast<double>(b.correct) / static_cast<double>(b.count);
  }
  return bins;
}

std::string_view to_string(ConsistencyClass c) noexcept {
  return c == ConsistencyClass::Consistent ? "consistent" : "inconsistent";
}

ConsistencyClass classify_consistency(const std::vector<int>& labels) {
  if (labels.empty()) throw ValidationError("cannot classify an empty label sequence");
  for (std::size_t i = 1; i < labels.size(); ++i) {
    if (labels[i] > labels[i - 1]) return ConsistencyClass::Inconsistent;
  }
  return ConsistencyClass::Consistent;
}

std::vector<TimingRow> timing_report(const std::vector<TimingSpan>& spans) {
  std::map<std::pair<std::string, std::string>, std::pair<std::size_t, std::chrono::milliseconds>> groups;
  for (const auto& s : spans) {
    auto& g = groups[{s.dataset, s.verifier}];
    ++g.first;
    g.second += s.duration;
  }
  std::vector<TimingRow> rows;
  for (const auto& [key, g] : groups) {
    rows.push_back(TimingRow{key.first, key.second, g.first,
                             static_cast<double>(g.second.count()) / 1000.0 / static_cast<double>(g.first)});
  }
  return rows;
}

}  // namespace tqaprm::metrics
