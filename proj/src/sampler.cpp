#include "tqaprm/sampler.hpp"

#include <cctype>

#include "tqaprm/error.hpp"

namespace tqaprm::sampling {

namespace {

constexpr std::string_view kFreeFormInstruction =
    "Please inspect the table(s) and then provide an Answer to the question.  Please reason step by step. "
    "Attention: You MUST put your final answer using the following format: Final answer: \\boxed{final answer}. "
    "Attention: You MUST put your final answer using the following format: Final answer: \\boxed{final answer}.";

constexpr std::string_view kBinaryInstruction =
    "Please inspect the table(s) and then provide a True or False answer to the question.  Please reason step by "
    "step. Attention: You MUST put your final answer using the following format: Final answer: \\boxed{True/False}, "
    "Attention: You MUST put your final answer using the following format: Final answer: \\boxed{True/False}.";

constexpr std::string_view kTernaryInstruction =
    "Please inspect the table(s) and then provide an Answer to the question.  Please reason step by step. "
    "Attention: You MUST put your final answer using the following format: Final answer: "
    "\\boxed{True/False/not enough info}, Attention: You MUST put your final answer using the following format: "
    "Final answer:\\boxed{True/False/not enough info}.";

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
bool is_blank(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

std::string trim_copy(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && is_blank(s[b])) ++b;
  while (e > b && is_blank(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

// Offsets at which "Step k:" markers begin. A marker preceded on its line
// only by markdown decoration splits at the line start instead.
std::vector<std::size_t> marker_offsets(std::string_view raw) {
  std::vector<std::size_t> out;
  std::size_t pos = 0;
  while ((pos = raw.find("Step", pos)) != std::string_view::npos) {
    const std::size_t at = pos;
    pos += 4;
    if (at > 0 && is_alnum(raw[at - 1])) continue;
    std::size_t i = pos;
    while (i < raw.size() && (raw[i] == ' ' || raw[i] == '\t')) ++i;
    const std::size_t digits = i;
    while (i < raw.size() && std::isdigit(static_cast<unsigned char>(raw[i]))) ++i;
    if (i == digits) continue;
    while (i < raw.size() && (raw[i] == ' ' || raw[i] == '\t')) ++i;
    if (i >= raw.size() || raw[i] != ':') continue;

    std::size_t split = at;
    std::size_t line_start = 0;
    if (at > 0) {
      const auto nl = raw.rfind('\n', at - 1);
      line_start = nl == std::string_view::npos ? 0 : nl + 1;
    }
    bool decoration_only = true;
    for (std::size_t k = line_start; k < at; ++k) {
      const char c = raw[k];
      if (!(c == ' ' || c == '\t' || c == '*' || c == '#' || c == '-' || c == '>')) {
        decoration_only = false;
        break;
      }
    }
    if (decoration_only) split = line_start;
    if (out.empty() || split > out.back()) out.push_back(split);
  }
  return out;
}

std::vector<std::string> split_paragraphs(std::string_view raw) {
  std::vector<std::string> out;
  std::string current;
  std::size_t pos = 0;
  while (pos <= raw.size()) {
    auto nl = raw.find('\n', pos);
    const auto line = raw.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    const bool blank = trim_copy(line).empty();
    if (blank) {
      if (auto t = trim_copy(current); !t.empty()) out.push_back(std::move(t));
      current.clear();
    } else {
      if (!current.empty()) current += '\n';
      current += line;
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  if (auto t = trim_copy(current); !t.empty()) out.push_back(std::move(t));
  return out;
}

}  // namespace

std::string_view to_string(Segmentation s) noexcept {
  switch (s) {
    case Segmentation::Markers: return "markers";
    case Segmentation::Paragraphs: return "paragraphs";
    case Segmentation::Single: return "single";
  }
  return "single";
}

std::string_view policy_instruction(data::TaskKind kind) noexcept {
  switch (kind) {
    case data::TaskKind::FreeForm: return kFreeFormInstruction;
    case data::TaskKind::Binary: return kBinaryInstruction;
    case data::TaskKind::Ternary: return kTernaryInstruction;
  }
  return kFreeFormInstruction;
}

std::vector<llm::ChatMessage> build_policy_prompt(const data::TQAInstance& instance) {
  std::string content(policy_instruction(instance.kind));
  content += '\n';
  content += data::render_problem(instance);
  return {llm::ChatMessage{llm::Role::User, std::move(content)}};
}

SegmentResult segment(std::string_view raw) {
  if (trim_copy(raw).empty()) throw ValidationError("empty reasoning path");
  SegmentResult result;

  const auto markers = marker_offsets(raw);
  if (markers.size() >= 2) {
    result.segmentation = Segmentation::Markers;
    for (std::size_t k = 0; k < markers.size(); ++k) {
      const std::size_t begin = k == 0 ? 0 : markers[k];
      const std::size_t end = k + 1 < markers.size() ? markers[k + 1] : raw.size();
      result.steps.push_back(Step{static_cast<int>(k + 1), trim_copy(raw.substr(begin, end - begin))});
    }
    return result;
  }

  auto paragraphs = split_paragraphs(raw);
  result.segmentation = paragraphs.size() >= 2 ? Segmentation::Paragraphs : Segmentation::Single;
  int index = 1;
  for (auto& p : paragraphs) result.steps.push_back(Step{index++, std::move(p)});
  return result;
}

std::vector<Step> segment_steps(std::string_view raw) { return segment(raw).steps; }

std::optional<std::string> extract_final_answer(std::string_view raw) {
  constexpr std::string_view kOpen = "\\boxed{";
  std::size_t search = raw.size();
  while (true) {
    const auto at = raw.rfind(kOpen, search);
    if (at == std::string_view::npos) return std::nullopt;
    int depth = 1;
    std::size_t i = at + kOpen.size();
    for (; i < raw.size() && depth > 0; ++i) {
      if (raw[i] == '{') ++depth;
      else if (raw[i] == '}') --depth;
    }
    if (depth == 0) {
      const auto begin = at + kOpen.size();
      return trim_copy(raw.substr(begin, i - 1 - begin));
    }
    if (at == 0) return std::nullopt;
    search = at - 1;
  }
}

ReasoningPath make_path(int path_id, std::string raw) {
  ReasoningPath path;
  path.path_id = path_id;
  path.final_answer = extract_final_answer(raw);
  if (!trim_copy(raw).empty()) {
    auto seg = segment(raw);
    path.steps = std::move(seg.steps);
    path.segmentation = seg.segmentation;
  }
  path.raw = std::move(raw);
  return path;
}

std::vector<ReasoningPath> sample_paths(const data::TQAInstance& instance, const SamplingOptions& options,
                                        llm::Backend& backend) {
  if (options.n < 1) throw ValidationError("path budget must be >= 1");
  llm::GenerationRequest request;
  request.messages = build_policy_prompt(instance);
  request.temperature = options.temperature;
  request.max_tokens = options.max_tokens;

  std::vector<ReasoningPath> paths;
  if (options.batch) {
    request.sample_count = options.n;
    request.seed = options.seed;
    try {
      auto result = llm::generate(request, backend);
      for (std::size_t j = 0; j < result.completions.size(); ++j) {
        paths.push_back(make_path(static_cast<int>(j), std::move(result.completions[j].text)));
      }
    } catch (const Error& e) {
      throw SamplingError("sampling " + instance.id + " failed: " + e.what(), std::move(paths));
    }
    return paths;
  }

  request.sample_count = 1;
  for (int j = 0; j < options.n; ++j) {
    request.seed = options.seed.value_or(0) + j;
    try {
      auto result = llm::generate(request, backend);
      paths.push_back(make_path(j, std::move(result.completions.front().text)));
    } catch (const Error& e) {
      throw SamplingError("sampling " + instance.id + " failed at path " + std::to_string(j) + ": " + e.what(),
                          std::move(paths));
    }
  }
  return paths;
}

json to_json(const ReasoningPath& path, std::string_view instance_id) {
  json steps = json::array();
  for (const auto& s : path.steps) steps.push_back(s.text);
  return json{{"instance_id", std::string(instance_id)},
              {"path_id", path.path_id},
              {"raw", path.raw},
              {"steps", std::move(steps)},
              {"final_answer", path.final_answer ? json(*path.final_answer) : json(nullptr)},
              {"segmentation", std::string(to_string(path.segmentation))}};
}

std::pair<std::string, ReasoningPath> path_from_json(const json& j) {
  ReasoningPath path;
  path.path_id = j.at("path_id").get<int>();
  path.raw = j.at("raw").get<std::string>();
  int index = 1;
  for (const auto& s : j.at("steps")) path.steps.push_back(Step{index++, s.get<std::string>()});
  if (auto it = j.find("final_answer"); it != j.end() && it->is_string()) path.final_answer = it->get<std::string>();
  const auto seg = j.value("segmentation", std::string("markers"));
  path.segmentation = seg == "paragraphs" ? Segmentation::Paragraphs
                      : seg == "single"   ? Segmentation::Single
                                          : Segmentation::Markers;
  return {j.at("instance_id").get<std::string>(), std::move(path)};
}

}  // namespace tqaprm::sampling
