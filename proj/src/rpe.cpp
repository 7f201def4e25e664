#include "tqaprm/rpe.hpp"

#include <algorithm>
#include <set>

#include <spdlog/spdlog.h>

#include "tqaprm/error.hpp"
#include "tqaprm/json_io.hpp"

namespace tqaprm::rpe {

namespace {

std::string record_id(std::string_view instance_id, int path_id) {
  return std::string(instance_id) + "#" + std::to_string(path_id);
}

std::string join_steps(const sampling::ReasoningPath& path, int upto) {
  std::string out;
  for (int i = 0; i < upto; ++i) {
    if (!out.empty()) out += '\n';
    out += path.steps[static_cast<std::size_t>(i)].text;
  }
  return out;
}

std::size_t count(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string_view::npos; pos = text.find(needle, pos + needle.size())) ++n;
  return n;
}

bool agrees(Label rpe, verify::Judgement rationale) {
  return (rpe == Label::Yes && rationale == verify::Judgement::Yes) ||
         (rpe == Label::No && rationale == verify::Judgement::No);
}

}  // namespace

RolloutEstimate make_estimate(int step_index, int successes, int rollouts) {
  if (rollouts < 0 || successes < 0 || successes > rollouts) {
    throw ValidationError("estimate needs 0 <= successes <= rollouts");
  }
  RolloutEstimate e;
  e.step_index = step_index;
  e.successes = successes;
  e.rollouts = rollouts;
  e.rate = rollouts > 0 ? static_cast<double>(successes) / rollouts : 0.0;
  return e;
}

std::vector<llm::ChatMessage> continuation_prompt(const data::TQAInstance& instance,
                                                  const sampling::ReasoningPath& path, int step_index) {
  if (step_index < 0 || static_cast<std::size_t>(step_index) > path.steps.size()) {
    throw ValidationError("prefix length " + std::to_string(step_index) + " outside 0.." +
                          std::to_string(path.steps.size()));
  }
  auto messages = sampling::build_policy_prompt(instance);
  if (step_index > 0) messages.push_back({llm::Role::Assistant, join_steps(path, step_index)});
  return messages;
}

RolloutEstimate estimate_prefix_success(const data::TQAInstance& instance, const sampling::ReasoningPath& path,
                                        int step_index, llm::Backend& backend, const RolloutOptions& options) {
  if (options.rollouts < 1) throw ValidationError("rollout count must be >= 1");
  const auto messages = continuation_prompt(instance, path, step_index);
  const auto prefix = step_index > 0 ? messages.back().content : std::string();

  int successes = 0;
  int done = 0;
  for (int j = 0; j < options.rollouts; ++j) {
    llm::GenerationRequest request;
    request.messages = messages;
    request.temperature = options.temperature;
    request.max_tokens = options.max_tokens;
    if (options.seed) request.seed = *options.seed + j;
    std::string continuation;
    try {
      continuation = llm::generate(request, backend).completions.front().text;
    } catch (const Error& e) {
      if (done == 0) throw;
      spdlog::warn("rollouts for {} prefix {} stopped after {}/{}: {}", instance.id, step_index, done,
                   options.rollouts, e.what());
      auto partial = make_estimate(step_index, successes, done);
      partial.partial = true;
      return partial;
    }
    ++done;
    const auto answer = sampling::extract_final_answer(prefix.empty() ? continuation : prefix + "\n" + continuation);
    if (data::answer_matches(answer, instance.gold, instance.kind)) ++successes;
  }
  return make_estimate(step_index, successes, done);
}

std::vector<RolloutEstimate> estimate_all_prefixes(const data::TQAInstance& instance,
                                                   const sampling::ReasoningPath& path, llm::Backend& backend,
                                                   const RolloutOptions& options) {
  std::vector<RolloutEstimate> out;
  for (int i = 0; i <= static_cast<int>(path.steps.size()); ++i) {
    out.push_back(estimate_prefix_success(instance, path, i, backend, options));
  }
  return out;
}

std::string_view to_string(Label label) noexcept {
  switch (label) {
    case Label::Yes: return "Yes";
    case Label::No: return "No";
    case Label::Undefined: return "Undefined";
  }
  return "Undefined";
}

RPELabel relative_progress(const RolloutEstimate& prev, const RolloutEstimate& curr, double tau) {
  if (prev.step_index + 1 != curr.step_index) {
    throw ValidationError("estimates for prefixes " + std::to_string(prev.step_index) + " and " +
                          std::to_string(curr.step_index) + " are not consecutive");
  }
  RPELabel label;
  label.step_index = curr.step_index;
  if (prev.rollouts == 0 || prev.rate <= 0.0) return label;
  label.ratio = curr.rate / prev.rate;
  label.label = *label.ratio >= tau ? Label::Yes : Label::No;
  return label;
}

std::vector<RPELabel> label_steps(const std::vector<RolloutEstimate>& estimates, double tau) {
  std::vector<RPELabel> labels;
  for (std::size_t i = 1; i < estimates.size(); ++i) {
    labels.push_back(relative_progress(estimates[i - 1], estimates[i], tau));
  }
  return labels;
}

std::string_view to_string(DiscardReason reason) noexcept {
  switch (reason) {
    case DiscardReason::Disagreement: return "disagreement";
    case DiscardReason::Incomplete: return "incomplete";
    case DiscardReason::BadFormat: return "bad_format";
    case DiscardReason::BadLabel: return "bad_label";
  }
  return "disagreement";
}

bool has_unclosed_structure(std::string_view text) {
  for (std::string_view tag : {"analyze", "verify", "output", "rephrase", "react"}) {
    const auto opens = count(text, "<" + std::string(tag) + ">");
    const auto closes = count(text, "</" + std::string(tag) + ">");
    if (opens > closes) return true;
  }
  return count(text, "```") % 2 != 0;
}

std::optional<DiscardReason> filter_training_instance(const std::vector<RPELabel>& rpe,
                                                      const verify::VerificationTranscript& rationale,
                                                      const FilterOptions& options) {
  const auto& verdicts = rationale.verdicts;
  if (rpe.size() != verdicts.size()) {
    throw ValidationError("RPE labels cover " + std::to_string(rpe.size()) + " steps, rationale covers " +
                          std::to_string(verdicts.size()));
  }
  for (std::size_t i = 0; i < rpe.size(); ++i) {
    if (rpe[i].step_index != verdicts[i].step_index) throw ValidationError("RPE and rationale steps misaligned");
  }

  std::string assistant_text;
  for (const auto& turn : rationale.raw_turns) {
    if (turn.role == llm::Role::Assistant) assistant_text += turn.content + "\n";
  }
  if (rationale.truncated || has_unclosed_structure(assistant_text)) return DiscardReason::Incomplete;

  for (const auto& v : verdicts) {
    if (v.issue == verify::FormatIssue::MissingSection || v.issue == verify::FormatIssue::MissingOutput ||
        v.issue == verify::FormatIssue::MissingBox) {
      return DiscardReason::BadFormat;
    }
  }
  for (const auto& v : verdicts) {
    if (v.issue == verify::FormatIssue::BadLabel || v.judgement == verify::Judgement::Unparsed) {
      return DiscardReason::BadLabel;
    }
  }

  const bool tolerate = options.undefined == UndefinedPolicy::Tolerate;
  if (options.compare == CompareMode::PerStep) {
    for (std::size_t i = 0; i < rpe.size(); ++i) {
      if (rpe[i].label == Label::Undefined && tolerate) continue;
      if (!agrees(rpe[i].label, verdicts[i].judgement)) return DiscardReason::Disagreement;
    }
    return std::nullopt;
  }

  bool rpe_correct = true;
  bool rationale_correct = true;
  for (std::size_t i = 0; i < rpe.size(); ++i) {
    if (rpe[i].label == Label::Undefined) {
      if (!tolerate) return DiscardReason::Disagreement;
    } else if (rpe[i].label == Label::No) {
      rpe_correct = false;
    }
    if (verdicts[i].judgement == verify::Judgement::No) rationale_correct = false;
  }
  if (rpe_correct != rationale_correct) return DiscardReason::Disagreement;
  return std::nullopt;
}

TrainingSet build_training_set(std::vector<TrainingRecord> records, const FilterOptions& options) {
  std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return a.instance_id != b.instance_id ? a.instance_id < b.instance_id : a.path_id < b.path_id;
  });
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].instance_id == records[i - 1].instance_id && records[i].path_id == records[i - 1].path_id) {
      throw ValidationError("duplicate training record " + record_id(records[i].instance_id, records[i].path_id));
    }
  }

  TrainingSet set;
  set.report.total = records.size();
  for (auto& r : records) {
    if (auto reason = filter_training_instance(r.rpe, r.rationale, options)) {
      set.report.discarded.emplace_back(record_id(r.instance_id, r.path_id), *reason);
      continue;
    }
    TrainingConversation c;
    c.turns = std::move(r.rationale.raw_turns);
    for (const auto& l : r.rpe) {
      // Tolerated Undefined steps take the rationale's judgement, which is
      // what the conversation itself asserts.
      if (l.label != Label::Undefined) {
        c.labels.push_back(l.label);
      } else {
        const auto j = r.rationale.verdicts[static_cast<std::size_t>(l.step_index - 1)].judgement;
        c.labels.push_back(j == verify::Judgement::Yes ? Label::Yes : Label::No);
      }
    }
    c.instance_id = r.instance_id;
    c.path_id = r.path_id;
    set.conversations.push_back(std::move(c));
  }
  set.report.kept = set.conversations.size();
  return set;
}

FilterReport export_conversations(const std::vector<TrainingRecord>& records, const std::filesystem::path& out,
                                  double tau, const FilterOptions& options) {
  auto set = build_training_set(records, options);
  std::string body;
  for (const auto& c : set.conversations) body += to_json(c, tau).dump() + "\n";
  write_file_atomic(out, body);
  return set.report;
}

json to_json(const TrainingConversation& conversation, double tau) {
  json turns = json::array();
  for (const auto& m : conversation.turns) turns.push_back(llm::to_json(m));
  json labels = json::array();
  for (auto l : conversation.labels) labels.push_back(std::string(to_string(l)));
  return json{{"turns", std::move(turns)},
              {"labels", std::move(labels)},
              {"provenance", {{"instance_id", conversation.instance_id}, {"path_id", conversation.path_id}}},
              {"tau", tau}};
}

json to_json(const FilterReport& report) {
  json discarded = json::array();
  for (const auto& [id, reason] : report.discarded) {
    discarded.push_back(json{{"record", id}, {"reason", std::string(to_string(reason))}});
  }
  return json{{"total", report.total}, {"kept", report.kept}, {"discarded", std::move(discarded)}};
}

json to_json(const RolloutEstimate& estimate) {
  return json{{"step_index", estimate.step_index},
              {"successes", estimate.successes},
              {"rollouts", estimate.rollouts},
              {"rate", estimate.rate},
              {"partial", estimate.partial}};
}

json to_json(const RPELabel& label) {
  return json{{"step_index", label.step_index},
              {"ratio", label.ratio ? json(*label.ratio) : json(nullptr)},
              {"label", std::string(to_string(label.label))}};
}

}  // namespace tqaprm::rpe
