#include "tqaprm/verifier.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <regex>
#include <set>

#include <spdlog/spdlog.h>

#include "tqaprm/error.hpp"

namespace tqaprm::verify {

namespace {

constexpr std::string_view kPromptHead =
    "The following is the table question answering problem and a solution (split into paragraphs, enclosed with "
    "tags and indexed from 1):\n"
    "[Table Question Answering Problem]\n";

constexpr std::string_view kTextualTail =
    "Your task is to verify the correctness of the paragraph in the solution.  Split your verification by "
    "`### Paragraph {ID}`.\n"
    "Your verification for each paragraph should be constructed by 2 parts, wrapped by '<analyze></analyze>' and "
    "'<output></output>' separately.\n"
    "1. In `<analyze>` part, you need to analyze the reasoning process and explain why the paragraph is correct or "
    "incorrect in detail.\n"
    "2. In `<output>` part, judge if this paragraph is correct or incorrect and put the answer into `<output>` part, "
    "e.g., ``<output> **Judgement**: \\boxed{Yes/No} </output>``. Every Paragraph must have an `<output>` part.";

constexpr std::string_view kMdaTail =
    "Your task is to verify the logical and factual correctness of each solution paragraph.\n"
    "Split your verification by '###Paragraph {ID}'.\n"
    "Your verification for each paragraph should be constructed by 2 parts, wrapped by '<analyze></analyze>',  and "
    "'<output></output>' separately.\n"
    "1. In `<analyze>` part, address these five aspects:\n"
    "Part 1: **Restatement**: Verbalize the claim, statement, or answer this paragraph makes.\n"
    "Part 2. **Data Check**: Traverse the table and quote row and column to show where the evidence comes from.\n"
    "Part 3.  **Logical Consistency**: Check if the claim is logically valid.\n"
    "Part 4.  **Numeric Accuracy**: Check if calculations such as sums, percentages, and table lookups, are "
    "computed correctly.\n"
    "Part 5. **Format**: Verify that the final paragraph puts the final answer using \\boxed{Final Answer}.\n"
    "If any aspect is wrong, then the paragraph is wrong.\n"
    "2. In `<output>` part, judge if this paragraph is correct or incorrect and put the answer into `<output>` part, "
    "e.g., ''<output>**Judgement**: $\\boxed{Yes/No}</output>''. Every Paragraph must have an `<output>` part.";

constexpr std::string_view kRraTail =
    "Your task is to verify the correctness of paragraphs in the solution. Split your verification by "
    "`### Paragraph {ID}`. \n"
    "Your verification for each paragraph should be constructed by 4 parts, wrapped by `<rephrase></rephrase>`, "
    "`<react></react>`, `<analyze></analyze>` and `<output></output>` separately.\n"
    "1. In `<rephrase>` part,  rephrase the paragraph as a clear, self-contained question, preserving all "
    "information from the original paragraph.\n"
    "2. In `<react>` part, use alternating steps of **Thought**, **Action**, **Observation** to systematically "
    "solve the problem from <rephrase> part.\n"
    "**Thought**: Based on the information currently available, reason through the problem and determine the goal "
    "of the next action.\n"
    "**Action**: Each action must be one of the following five types: 1. LOOKUP_ROW[row]: Find a row in the table "
    "whose label matches the given text. 2. LOOKUP_COLUMN[column]: Find a column in the table whose header matches "
    "the given text. 3. READ_CELL[row, column]: Retrieve the value in the specified row and column. "
    "4. COMPUTATION[values]: Perform arithmetic or other clearly defined mathematical operations on the provided "
    "values. 5. Finish[answer]: Once a clear answer has been determined, use this action to return the answer and "
    "terminate the task.\n"
    "**Observation**: Record the factual result of the action.\n"
    "3. In `<analyze>` part, based on '<rephrase>' and '<react>' results, analyze in detail if the current "
    "paragraph is correct or incorrect, citing the relevant evidence.\n"
    "4. In `<output>` part, make a final judgement and put the judgement into `<output>` part, e.g., "
    "``<output> **Judgement**: $\\boxed{Yes/No} </output>``.";

constexpr std::string_view kGenPrmTail =
    "Your task is to verify the correctness of paragraph in the solution.  Split your verification by "
    "`### Paragraph {ID}`.\n"
    "Your verification for each paragraph should be constructed by 3 parts, wrapped by '<analyze></analyze>', "
    "'<verify></verify>' and '<output></output>' separately.\n"
    "1. In `<analyze>` part, you need to analyze the reasoning process and explain why the paragraph is correct or "
    "incorrect in detail.\n"
    "2. In '<verify>' part, you must write **Python code** in the form of ```python {CODE}``` to verify every "
    "details in the current paragraph that can be verified by code. You must use python code to verify every "
    "details in the paragraph. Make sure to print the critic results in the code. Every code will be executed "
    "automatically by system. You need to analyze the `[Code Output]` after code executing. Pay attention that you "
    "must follow the format of ```python{CODE}``` when you write the code, otherwise the code will not be "
    "executed.\n"
    "3. In `<output>` part, judge if this paragraph is correct or incorrect and put the answer into `<output>` part, "
    "e.g., ``<output> **Judgement**: \\boxed{Yes/No} </output>``. Every Paragraph must have an `<output>` part.";

constexpr std::string_view kJudgeTail =
    "Your task is to verify the correctness of paragraph in the solution.  Split your verification by "
    "`### Paragraph {ID}`.\n"
    "Your verification for each paragraph should be constructed by 2 parts, wrapped by `<analyze></analyze>` and "
    "`<output></output>` separately.\n"
    "1. In `<analyze>` part, you need to analyze the reasoning process and explain why the paragraph is correct or "
    "incorrect in detail.\n"
    "2. In `<output>` part, judge if this paragraph is correct or incorrect and put the answer into `<output>` part, "
    "e.g., ``<output> **Judgement**: $\\boxed{Yes/No} </output>``. Every Paragraph must have an `<output>` part.'";

std::string_view prompt_tail(VerifierKind kind) {
  switch (kind) {
    case VerifierKind::Textual: return kTextualTail;
    case VerifierKind::MDA: return kMdaTail;
    case VerifierKind::RRA: return kRraTail;
    case VerifierKind::GenPRM: return kGenPrmTail;
    case VerifierKind::Judge: return kJudgeTail;
  }
  return kTextualTail;
}

constexpr std::array<std::string_view, 4> kRationaleTags = {"analyze", "rephrase", "react", "verify"};
constexpr std::string_view kBoxed = "\\boxed{";
constexpr std::string_view kFeedbackHeader = "[Code Output]\n";

bool is_label_noise(char c) {
  return std::isspace(static_cast<unsigned char>(c)) || c == '$' || c == '*' || c == '{' || c == '}';
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

/// End of the group opened just before `from`, i.e. the index of its closing
/// brace, or npos when unbalanced.
std::size_t closing_brace(std::string_view text, std::size_t from) {
  int depth = 1;
  for (std::size_t i = from; i < text.size(); ++i) {
    if (text[i] == '{') ++depth;
    else if (text[i] == '}' && --depth == 0) return i;
  }
  return std::string_view::npos;
}

std::string section_rationale(std::string_view body) {
  std::vector<std::pair<std::size_t, std::string_view>> parts;
  for (const auto tag : kRationaleTags) {
    const std::string open = "<" + std::string(tag) + ">";
    const std::string close = "</" + std::string(tag) + ">";
    std::size_t pos = 0;
    while ((pos = body.find(open, pos)) != std::string_view::npos) {
      const auto start = pos + open.size();
      auto end = body.find(close, start);
      const bool closed = end != std::string_view::npos;
      if (!closed) end = body.size();
      parts.emplace_back(pos, trim(body.substr(start, end - start)));
      pos = closed ? end + close.size() : body.size();
    }
  }
  std::sort(parts.begin(), parts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  std::string out;
  for (const auto& [pos, text] : parts) {
    if (text.empty()) continue;
    if (!out.empty()) out += "\n\n";
    out += text;
  }
  return out;
}

void read_judgement(std::string_view text, std::size_t begin, std::size_t end, StepVerdict& verdict) {
  const auto body = text.substr(begin, end - begin);
  const auto open = body.find("<output>");
  if (open == std::string_view::npos) {
    verdict.issue = FormatIssue::MissingOutput;
    return;
  }
  const auto close = body.find("</output>", open);
  if (close == std::string_view::npos) {
    verdict.issue = FormatIssue::MissingOutput;
    return;
  }
  const auto output = body.substr(0, close);
  const auto box = output.find(kBoxed, open);
  if (box == std::string_view::npos) {
    verdict.issue = FormatIssue::MissingBox;
    return;
  }
  const auto content_begin = box + kBoxed.size();
  const auto content_end = closing_brace(output, content_begin);
  if (content_end == std::string_view::npos) {
    verdict.issue = FormatIssue::MissingBox;
    return;
  }
  const auto judgement = parse_judgement(output.substr(content_begin, content_end - content_begin));
  if (judgement == Judgement::Unparsed) {
    verdict.issue = FormatIssue::BadLabel;
    return;
  }
  auto first = content_begin;
  while (first < content_end && is_label_noise(output[first])) ++first;
  verdict.judgement = judgement;
  verdict.issue = FormatIssue::None;
  verdict.judgement_offset = begin + first;
}

/// Text handed to the parser plus where each assistant turn starts in it.
struct Combined {
  std::string text;
  struct Turn {
    std::size_t begin = 0;
    std::size_t end = 0;
    llm::Completion completion;
  };
  std::vector<Turn> turns;
};

struct PendingRound {
  std::size_t offset = 0;  // of the code block in the combined text
  CodeRound round;
};

CodeRound run_block(sandbox::Runner& runner, const sandbox::CodeBlock& block,
                    const sandbox::ExecutionContext& context) {
  CodeRound round;
  round.code = block.source;
  std::string feedback;
  try {
    const auto result = runner.run(block, context);
    feedback = sandbox::format_feedback(result);
    round.status = result.status;
  } catch (const std::exception& e) {
    spdlog::warn("sandbox failure: {}", e.what());
    feedback = std::string(kFeedbackHeader) + "[Error] Sandbox failure: " + e.what();
    round.status = sandbox::ExecStatus::Error;
  }
  round.output = feedback.substr(std::min(feedback.size(), kFeedbackHeader.size()));
  return round;
}

json round_to_json(const CodeRound& round) {
  return json{{"code", round.code}, {"output", round.output}, {"status", std::string(sandbox::to_string(round.status))}};
}

sandbox::ExecStatus parse_status(std::string_view s) {
  for (auto st : {sandbox::ExecStatus::Ok, sandbox::ExecStatus::Error, sandbox::ExecStatus::Timeout,
                  sandbox::ExecStatus::OutputTruncated}) {
    if (sandbox::to_string(st) == s) return st;
  }
  throw ParseError(0, "unknown execution status \"" + std::string(s) + "\"");
}

FormatIssue parse_issue(std::string_view s) {
  for (auto issue : {FormatIssue::None, FormatIssue::MissingSection, FormatIssue::MissingOutput,
                     FormatIssue::MissingBox, FormatIssue::BadLabel}) {
    if (to_string(issue) == s) return issue;
  }
  throw ParseError(0, "unknown format issue \"" + std::string(s) + "\"");
}

}  // namespace

std::string_view to_string(VerifierKind kind) noexcept {
  switch (kind) {
    case VerifierKind::Textual: return "textual";
    case VerifierKind::MDA: return "mda";
    case VerifierKind::RRA: return "rra";
    case VerifierKind::GenPRM: return "genprm";
    case VerifierKind::Judge: return "judge";
  }
  return "textual";
}

std::optional<VerifierKind> parse_verifier_kind(std::string_view text) noexcept {
  for (auto k : {VerifierKind::Textual, VerifierKind::MDA, VerifierKind::RRA, VerifierKind::GenPRM,
                 VerifierKind::Judge}) {
    if (to_string(k) == text) return k;
  }
  return std::nullopt;
}

std::string_view to_string(Judgement j) noexcept {
  switch (j) {
    case Judgement::Yes: return "Yes";
    case Judgement::No: return "No";
    case Judgement::Unparsed: return "Unparsed";
  }
  return "Unparsed";
}

Judgement parse_judgement(std::string_view text) {
  std::string core;
  for (char c : text) {
    if (!is_label_noise(c)) core += c;
  }
  const auto l = lower(core);
  if (l == "yes") return Judgement::Yes;
  if (l == "no") return Judgement::No;
  return Judgement::Unparsed;
}

std::string_view to_string(FormatIssue issue) noexcept {
  switch (issue) {
    case FormatIssue::None: return "none";
    case FormatIssue::MissingSection: return "missing_section";
    case FormatIssue::MissingOutput: return "missing_output";
    case FormatIssue::MissingBox: return "missing_box";
    case FormatIssue::BadLabel: return "bad_label";
  }
  return "none";
}

std::string render_solution(const sampling::ReasoningPath& path) {
  std::string out;
  for (const auto& step : path.steps) {
    if (!out.empty()) out += "\n\n";
    const auto tag = "paragraph_" + std::to_string(step.index);
    out += "<" + tag + ">\n" + step.text + "\n</" + tag + ">";
  }
  return out;
}

std::vector<llm::ChatMessage> build_verification_prompt(VerifierKind kind, const data::TQAInstance& instance,
                                                        const sampling::ReasoningPath& path) {
  if (path.steps.empty()) throw ValidationError("path " + std::to_string(path.path_id) + " has no steps");
  std::string prompt(kPromptHead);
  prompt += data::render_problem(instance);
  prompt += "\n[Solution]\n";
  prompt += render_solution(path);
  prompt += '\n';
  prompt += prompt_tail(kind);
  return {llm::ChatMessage{llm::Role::User, std::move(prompt)}};
}

std::vector<Section> find_sections(std::string_view text) {
  static const std::regex header(R"(###[ \t]*Paragraph[ \t]*\{?(\d+)\}?)");
  std::vector<Section> sections;
  const std::string owned(text);
  for (auto it = std::sregex_iterator(owned.begin(), owned.end(), header); it != std::sregex_iterator(); ++it) {
    Section s;
    const auto digits = (*it)[1].str();
    s.index = digits.size() > 6 ? 0 : std::stoi(digits);
    s.begin = static_cast<std::size_t>(it->position(0));
    if (!sections.empty()) sections.back().end = s.begin;
    sections.push_back(s);
  }
  if (!sections.empty()) sections.back().end = text.size();
  return sections;
}

std::vector<StepVerdict> parse_transcript(std::string_view text, std::size_t expected_steps) {
  std::vector<StepVerdict> verdicts(expected_steps);
  for (std::size_t i = 0; i < expected_steps; ++i) verdicts[i].step_index = static_cast<int>(i) + 1;

  std::set<int> seen;
  for (const auto& section : find_sections(text)) {
    if (section.index < 1 || static_cast<std::size_t>(section.index) > expected_steps) continue;
    if (!seen.insert(section.index).second) continue;
    auto& verdict = verdicts[static_cast<std::size_t>(section.index) - 1];
    verdict.rationale = section_rationale(text.substr(section.begin, section.end - section.begin));
    read_judgement(text, section.begin, section.end, verdict);
  }
  return verdicts;
}

std::optional<JudgementProbs> judgement_probs(const llm::TokenPosition& position) {
  JudgementProbs probs;
  bool any = false;
  for (const auto& [token, p] : position.candidates) {
    std::string core;
    for (char c : token) {
      if (!is_label_noise(c)) core += c;
    }
    const auto l = lower(core);
    if (l == "yes") {
      probs.yes += p;
      any = true;
    } else if (l == "no") {
      probs.no += p;
      any = true;
    }
  }
  if (!any) return std::nullopt;
  return probs;
}

double step_reward(const StepVerdict& verdict, std::optional<JudgementProbs> probs, const RewardPolicy& policy) {
  if (verdict.judgement == Judgement::Unparsed) return std::clamp(policy.unparsed_reward, 0.0, 1.0);
  if (policy.use_token_probs && probs) {
    const double total = probs->yes + probs->no;
    if (total > 0.0) return std::clamp(probs->yes / total, 0.0, 1.0);
  }
  return verdict.judgement == Judgement::Yes ? 1.0 : 0.0;
}

VerificationTranscript run_verification(VerifierKind kind, const data::TQAInstance& instance,
                                        const sampling::ReasoningPath& path, llm::Backend& backend,
                                        sandbox::Runner* runner, const VerifierOptions& options) {
  if (kind == VerifierKind::GenPRM && runner == nullptr) {
    throw ValidationError("genprm verification requires a sandbox");
  }
  if (options.max_code_rounds < 0) throw ValidationError("code round limit must be >= 0");

  VerificationTranscript transcript;
  transcript.instance_id = instance.id;
  transcript.path_id = path.path_id;
  transcript.kind = kind;

  const auto started = std::chrono::steady_clock::now();
  std::chrono::nanoseconds backend_time{0};

  auto messages = build_verification_prompt(kind, instance, path);
  transcript.raw_turns = messages;

  Combined combined;
  std::vector<PendingRound> rounds;
  sandbox::ExecutionContext context;
  if (kind == VerifierKind::GenPRM) context.table_text = data::serialize_table(instance.table);

  int rounds_done = 0;
  while (true) {
    llm::GenerationRequest request;
    request.messages = messages;
    request.temperature = options.temperature;
    request.max_tokens = options.max_tokens;
    request.want_token_probs = options.want_token_probs;
    request.seed = options.seed;
    auto result = llm::generate(request, backend);
    backend_time += result.backend_latency;

    auto completion = std::move(result.completions.front());
    const auto turn_text = completion.text;
    messages.push_back({llm::Role::Assistant, turn_text});
    transcript.raw_turns.push_back(messages.back());

    if (!combined.text.empty()) combined.text += '\n';
    Combined::Turn turn;
    turn.begin = combined.text.size();
    combined.text += turn_text;
    turn.end = combined.text.size();
    turn.completion = std::move(completion);
    combined.turns.push_back(std::move(turn));

    if (kind != VerifierKind::GenPRM) break;

    std::vector<sandbox::CodeBlock> executable;
    for (auto& block : sandbox::extract_code_blocks(turn_text).blocks) {
      if (sandbox::is_executable(block)) executable.push_back(std::move(block));
    }
    if (executable.empty()) break;
    if (rounds_done >= options.max_code_rounds) {
      transcript.truncated = true;
      break;
    }
    ++rounds_done;

    std::string feedback;
    for (const auto& block : executable) {
      auto round = run_block(*runner, block, context);
      if (!feedback.empty()) feedback += "\n\n";
      feedback += std::string(kFeedbackHeader) + round.output;
      rounds.push_back({combined.turns.back().begin + block.offset, std::move(round)});
    }
    messages.push_back({llm::Role::User, feedback});
    transcript.raw_turns.push_back(messages.back());
    combined.text += '\n';
    combined.text += feedback;
  }

  transcript.verdicts = parse_transcript(combined.text, path.steps.size());

  std::vector<Section> first_sections;
  {
    std::set<int> seen;
    for (const auto& s : find_sections(combined.text)) {
      if (seen.insert(s.index).second) first_sections.push_back(s);
    }
  }
  for (auto& pending : rounds) {
    for (const auto& s : first_sections) {
      if (pending.offset < s.begin || pending.offset >= s.end) continue;
      if (s.index >= 1 && static_cast<std::size_t>(s.index) <= transcript.verdicts.size()) {
        transcript.verdicts[static_cast<std::size_t>(s.index) - 1].code_rounds.push_back(std::move(pending.round));
      }
      break;
    }
  }

  for (auto& verdict : transcript.verdicts) {
    std::optional<JudgementProbs> probs;
    if (verdict.judgement_offset) {
      const auto at = *verdict.judgement_offset;
      for (const auto& turn : combined.turns) {
        if (at < turn.begin || at >= turn.end || !turn.completion.token_probs) continue;
        const auto& tokens = *turn.completion.token_probs;
        if (auto idx = llm::token_index_at(tokens, at - turn.begin)) probs = judgement_probs(tokens[*idx]);
        break;
      }
    }
    verdict.reward = step_reward(verdict, probs, options.reward);
  }

  if (options.timing == Timing::BackendReported) {
    transcript.wall_time = std::chrono::duration_cast<std::chrono::milliseconds>(backend_time);
  } else {
    transcript.wall_time =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started);
  }
  return transcript;
}

json to_json(const VerificationTranscript& transcript) {
  json verdicts = json::array();
  for (const auto& v : transcript.verdicts) {
    json rounds = json::array();
    for (const auto& r : v.code_rounds) rounds.push_back(round_to_json(r));
    verdicts.push_back(json{{"index", v.step_index},
                            {"judgement", std::string(to_string(v.judgement))},
                            {"reward", v.reward},
                            {"rationale", v.rationale},
                            {"code_rounds", std::move(rounds)},
                            {"issue", std::string(to_string(v.issue))}});
  }
  json turns = json::array();
  for (const auto& m : transcript.raw_turns) turns.push_back(llm::to_json(m));
  return json{{"instance_id", transcript.instance_id},
              {"path_id", transcript.path_id},
              {"kind", std::string(to_string(transcript.kind))},
              {"verdicts", std::move(verdicts)},
              {"wall_time_ms", transcript.wall_time.count()},
              {"truncated", transcript.truncated},
              {"turns", std::move(turns)}};
}

VerificationTranscript transcript_from_json(const json& j) {
  VerificationTranscript t;
  t.instance_id = j.at("instance_id").get<std::string>();
  t.path_id = j.at("path_id").get<int>();
  const auto kind = j.at("kind").get<std::string>();
  const auto parsed = parse_verifier_kind(kind);
  if (!parsed) throw ParseError(0, "unknown verifier kind \"" + kind + "\"");
  t.kind = *parsed;
  for (const auto& v : j.at("verdicts")) {
    StepVerdict verdict;
    verdict.step_index = v.at("index").get<int>();
    verdict.judgement = parse_judgement(v.at("judgement").get<std::string>());
    verdict.reward = v.at("reward").get<double>();
    verdict.rationale = v.value("rationale", std::string());
    verdict.issue = verdict.judgement == Judgement::Unparsed ? FormatIssue::MissingSection : FormatIssue::None;
    if (auto it = v.find("issue"); it != v.end()) verdict.issue = parse_issue(it->get<std::string>());
    if (auto it = v.find("code_rounds"); it != v.end()) {
      for (const auto& r : *it) {
        CodeRound round;
        round.code = r.at("code").get<std::string>();
        round.output = r.at("output").get<std::string>();
        round.status = parse_status(r.value("status", std::string("ok")));
        verdict.code_rounds.push_back(std::move(round));
      }
    }
    t.verdicts.push_back(std::move(verdict));
  }
  t.wall_time = std::chrono::milliseconds(j.value("wall_time_ms", std::int64_t{0}));
  t.truncated = j.value("truncated", false);
  if (auto it = j.find("turns"); it != j.end()) {
    for (const auto& m : *it) t.raw_turns.push_back(llm::message_from_json(m));
  }
  return t;
}

}  // namespace tqaprm::verify
