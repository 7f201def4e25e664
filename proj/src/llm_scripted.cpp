#include <algorithm>
#include <atomic>
#include <cctype>
#include <thread>

#include "tqaprm/error.hpp"
#include "tqaprm/llm.hpp"

namespace tqaprm::llm {

namespace {

std::size_t longest_common_substring(std::string_view a, std::string_view b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), curr(b.size() + 1, 0);
  std::size_t best = 0;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      curr[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : 0;
      best = std::max(best, curr[j]);
    }
    std::swap(prev, curr);
  }
  return best;
}

std::string describe(const ScriptRule& rule) {
  json j = rule.match;
  return j.dump();
}

class ScriptedBackend final : public Backend {
 public:
  explicit ScriptedBackend(Script script) : script_(std::move(script)), state_(script_.rules.size()) {
    if (script_.rules.empty()) throw ValidationError("script has no rules");
    for (const auto& rule : script_.rules) {
      if (rule.completions.empty()) throw ValidationError("script rule " + describe(rule) + " has no completions");
      if (!rule.token_probs.empty() && rule.token_probs.size() != rule.completions.size()) {
        throw ValidationError("script rule " + describe(rule) + ": token_probs must parallel completions");
      }
    }
  }

  GenerationResult generate(const GenerationRequest& request) override {
    std::string text;
    for (const auto& m : request.messages) {
      text += m.content;
      text += '\n';
    }

    const ScriptRule* rule = nullptr;
    std::size_t index = 0;
    bool consumed_match = false;
    for (std::size_t r = 0; r < script_.rules.size(); ++r) {
      const auto& candidate = script_.rules[r];
      const bool matches = std::all_of(candidate.match.begin(), candidate.match.end(),
                                       [&](const std::string& s) { return text.find(s) != std::string::npos; });
      if (!matches) continue;
      if (candidate.once && state_[r].used.exchange(true)) {
        consumed_match = true;
        continue;
      }
      rule = &candidate;
      index = r;
      break;
    }
    if (!rule) throw miss(text, consumed_match);

    const auto n = rule->completions.size();
    std::size_t start = 0;
    if (request.seed) {
      const auto s = static_cast<long long>(*request.seed % static_cast<long long>(n));
      start = static_cast<std::size_t>(s < 0 ? s + static_cast<long long>(n) : s);
    } else {
      start = state_[index].cursor.fetch_add(static_cast<std::size_t>(request.sample_count)) % n;
    }

    GenerationResult result;
    for (int j = 0; j < request.sample_count; ++j) {
      const auto k = (start + static_cast<std::size_t>(j)) % n;
      Completion c;
      c.text = rule->completions[k];
      if (request.want_token_probs) {
        if (!rule->token_probs.empty()) c.token_probs = rule->token_probs[k];
        else if (rule->judgement_yes_prob) c.token_probs = synthesize_token_probs(c.text, *rule->judgement_yes_prob);
      }
      result.completions.push_back(std::move(c));
    }
    if (rule->latency.count() > 0) std::this_thread::sleep_for(rule->latency);
    result.backend_latency = rule->latency;
    return result;
  }

 private:
  struct RuleState {
    std::atomic<bool> used{false};
    std::atomic<std::size_t> cursor{0};
  };

  ScriptedMissError miss(const std::string& text, bool consumed) const {
    std::size_t best_score = 0;
    const ScriptRule* nearest = &script_.rules.front();
    for (const auto& rule : script_.rules) {
      std::size_t score = 0;
      for (const auto& m : rule.match) score += longest_common_substring(m, text);
      if (score > best_score) {
        best_score = score;
        nearest = &rule;
      }
    }
    std::string msg = consumed ? "scripted request matched only consumed once-rules"
                               : "no scripted rule matches the request";
    msg += "; nearest matcher: " + describe(*nearest);
    return ScriptedMissError(msg);
  }

  Script script_;
  std::vector<RuleState> state_;
};

bool is_word(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

}  // namespace

std::vector<TokenPosition> synthesize_token_probs(const std::string& text, double yes_prob) {
  std::vector<TokenPosition> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    const std::size_t begin = i;
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t core = i;
    if (i < text.size()) {
      if (is_word(text[i])) {
        while (i < text.size() && is_word(text[i])) ++i;
      } else {
        ++i;
      }
    }
    TokenPosition pos;
    pos.token = text.substr(begin, i - begin);
    const std::string_view word(text.data() + core, i - core);
    const bool judgement = (word == "Yes" || word == "No") && core >= 6 &&
                           std::string_view(text).substr(core - 6, 6) == "boxed{";
    if (judgement) {
      pos.candidates = {{"Yes", yes_prob}, {"No", 1.0 - yes_prob}};
    } else {
      pos.candidates = {{pos.token, 1.0}};
    }
    tokens.push_back(std::move(pos));
  }
  return tokens;
}

Script script_from_json(const json& j) {
  Script script;
  const auto& rules = j.is_array() ? j : j.at("rules");
  for (const auto& r : rules) {
    ScriptRule rule;
    const auto& m = r.at("match");
    if (m.is_string()) rule.match.push_back(m.get<std::string>());
    else rule.match = m.get<std::vector<std::string>>();
    if (r.contains("completion")) rule.completions.push_back(r.at("completion").get<std::string>());
    if (r.contains("completions")) {
      for (const auto& c : r.at("completions")) rule.completions.push_back(c.get<std::string>());
    }
    rule.once = r.value("once", false);
    if (r.contains("judgement_yes_prob")) rule.judgement_yes_prob = r.at("judgement_yes_prob").get<double>();
    rule.latency = std::chrono::milliseconds(r.value("latency_ms", 0));
    if (r.contains("token_probs")) {
      for (const auto& per_completion : r.at("token_probs")) {
        std::vector<TokenPosition> tokens;
        for (const auto& pos : per_completion) {
          TokenPosition tp;
          tp.token = pos.at("token").get<std::string>();
          for (const auto& cand : pos.at("candidates")) {
            tp.candidates.emplace_back(cand.at(0).get<std::string>(), cand.at(1).get<double>());
          }
          tokens.push_back(std::move(tp));
        }
        rule.token_probs.push_back(std::move(tokens));
      }
    }
    script.rules.push_back(std::move(rule));
  }
  return script;
}

Script load_script(const std::filesystem::path& path) {
  try {
    return script_from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw ParseError(0, "script " + path.string() + ": " + e.what());
  }
}

BackendPtr scripted_backend(Script script) { return std::make_shared<ScriptedBackend>(std::move(script)); }

}  // namespace tqaprm::llm
