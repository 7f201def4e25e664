#include "tqaprm/config.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "tqaprm/error.hpp"
#include "tqaprm/metrics.hpp"

namespace tqaprm::pipeline {

namespace {

using Violations = std::vector<std::string>;

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_relative() && !base.empty() ? base / path : path;
}

/// Typed field reader that records violations instead of throwing.
class Reader {
 public:
  Reader(const json& obj, std::string prefix, Violations& v) : obj_(obj), prefix_(std::move(prefix)), v_(v) {}

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    if (it == obj_.end() || it->is_null()) return;
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      v_.push_back("'" + prefix_ + key + "' has the wrong type");
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    if (it == obj_.end() || it->is_null()) return nullptr;
    if (!it->is_object()) {
      v_.push_back("'" + prefix_ + key + "' must be an object");
      return nullptr;
    }
    return &*it;
  }

  bool has(const char* key) const { return obj_.contains(key) && !obj_.at(key).is_null(); }

  void finish() {
    for (const auto& [key, value] : obj_.items()) {
      if (!seen_.count(key)) v_.push_back("unknown config key '" + prefix_ + key + "'");
    }
  }

 private:
  const json& obj_;
  std::string prefix_;
  Violations& v_;
  std::set<std::string> seen_;
};

template <typename E, typename Parse>
void get_enum(Reader& r, const char* key, const std::string& prefix, E& out, Parse parse, Violations& v) {
  std::string text;
  r.get(key, text);
  if (text.empty()) return;
  if (auto parsed = parse(text)) out = *parsed;
  else v.push_back("'" + prefix + key + "' has unknown value \"" + text + "\"");
}

BackendConfig read_backend(const json& obj, const std::string& prefix, const std::filesystem::path& base,
                           Violations& v) {
  BackendConfig b;
  Reader r(obj, prefix, v);
  r.get("type", b.type);
  std::string script;
  r.get("script", script);
  if (!script.empty()) b.script = resolve(base, script);
  r.get("base_url", b.base_url);
  r.get("model", b.model);
  r.get("top_logprobs", b.top_logprobs);
  r.get("timeout_s", b.timeout_s);
  r.finish();
  return b;
}

json backend_to_json(const BackendConfig& b) {
  return json{{"type", b.type},         {"script", b.script.string()}, {"base_url", b.base_url},
              {"model", b.model},       {"top_logprobs", b.top_logprobs}, {"timeout_s", b.timeout_s}};
}

void check_backend(const BackendConfig& b, const std::string& name, Violations& v) {
  if (b.type == "scripted") {
    if (b.script.empty()) v.push_back(name + ": scripted backend needs a script file");
    else if (!std::filesystem::exists(b.script)) v.push_back(name + ": script file not found: " + b.script.string());
  } else if (b.type == "http") {
    if (b.base_url.empty() && !std::getenv("HARNESS_API_BASE")) {
      v.push_back(name + ": http backend needs base_url or HARNESS_API_BASE");
    }
    if (b.top_logprobs < 0) v.push_back(name + ": top_logprobs must be >= 0");
    if (b.timeout_s < 1) v.push_back(name + ": timeout_s must be >= 1");
  } else {
    v.push_back(name + ": type must be scripted|http, got \"" + b.type + "\"");
  }
}

std::string undefined_name(rpe::UndefinedPolicy p) { return p == rpe::UndefinedPolicy::Discard ? "discard" : "tolerate"; }
std::string compare_name(rpe::CompareMode m) { return m == rpe::CompareMode::PerStep ? "per-step" : "aggregate"; }

}  // namespace

std::vector<std::size_t> RunConfig::effective_budgets() const {
  std::set<std::size_t> out;
  if (budgets.empty()) {
    for (std::size_t b : metrics::kCurveBudgets) {
      if (b <= static_cast<std::size_t>(std::max(paths, 0))) out.insert(b);
    }
    if (paths > 0) out.insert(static_cast<std::size_t>(paths));
  } else {
    for (int b : budgets) {
      if (b > 0) out.insert(static_cast<std::size_t>(b));
    }
  }
  return {out.begin(), out.end()};
}

RunConfig config_from_json(const json& doc, const std::filesystem::path& base_dir, Violations& v) {
  RunConfig c;
  if (!doc.is_object()) {
    v.push_back("config must be a JSON object");
    return c;
  }
  Reader r(doc, "", v);

  if (const auto* ds = r.sub("dataset")) {
    Reader d(*ds, "dataset.", v);
    std::string path;
    d.get("path", path);
    if (!path.empty()) c.dataset_path = resolve(base_dir, path);
    get_enum(d, "kind", "dataset.", c.kind, data::parse_task_kind, v);
    d.get("name", c.dataset_name);
    d.finish();
  }
  r.get("paths", c.paths);
  r.get("temperature", c.temperature);
  r.get("max_tokens", c.max_tokens);
  r.get("batch", c.batch);

  std::vector<std::string> names;
  r.get("verifiers", names);
  if (!names.empty()) {
    c.verifiers.clear();
    for (const auto& n : names) {
      if (auto k = verify::parse_verifier_kind(n)) c.verifiers.push_back(*k);
      else v.push_back("'verifiers' has unknown value \"" + n + "\"");
    }
  }
  r.get("verifier_max_tokens", c.verifier_max_tokens);
  get_enum(r, "aggregation", "", c.aggregation, selection::parse_aggregation, v);
  names.clear();
  r.get("strategies", names);
  if (!names.empty()) {
    c.strategies.clear();
    for (const auto& n : names) {
      if (auto s = selection::parse_strategy(n)) c.strategies.push_back(*s);
      else v.push_back("'strategies' has unknown value \"" + n + "\"");
    }
  }
  r.get("budgets", c.budgets);

  r.get("executor", c.executor);
  if (const auto* lim = r.sub("limits")) {
    Reader l(*lim, "limits.", v);
    std::int64_t timeout_ms = c.limits.wall_timeout.count();
    l.get("timeout_ms", timeout_ms);
    c.limits.wall_timeout = std::chrono::milliseconds(timeout_ms);
    l.get("max_output_bytes", c.limits.max_output_bytes);
    l.finish();
  }
  r.get("code_rounds", c.code_rounds);

  std::string cache;
  r.get("cache_dir", cache);
  if (!cache.empty()) c.cache_dir = resolve(base_dir, cache);
  r.get("seed", c.seed);
  std::string out;
  r.get("output_dir", out);
  c.output_dir = resolve(base_dir, out.empty() ? c.output_dir.string() : out);
  r.get("concurrency", c.concurrency);

  if (const auto* b = r.sub("backend")) c.backend = read_backend(*b, "backend.", base_dir, v);
  if (const auto* b = r.sub("verifier_backend")) c.verifier_backend = read_backend(*b, "verifier_backend.", base_dir, v);

  if (const auto* rw = r.sub("reward")) {
    Reader w(*rw, "reward.", v);
    w.get("unparsed", c.reward.unparsed_reward);
    w.get("token_probs", c.reward.use_token_probs);
    w.finish();
  }
  r.get("threshold", c.threshold);
  get_enum(r, "timing", "", c.timing,
           [](const std::string& s) -> std::optional<verify::Timing> {
             if (s == "measured") return verify::Timing::Measured;
             if (s == "backend") return verify::Timing::BackendReported;
             return std::nullopt;
           },
           v);

  if (const auto* t = r.sub("train")) {
    Reader tr(*t, "train.", v);
    tr.get("rollouts", c.train.rollouts);
    tr.get("tau", c.train.tau);
    get_enum(tr, "undefined", "train.", c.train.undefined,
             [](const std::string& s) -> std::optional<rpe::UndefinedPolicy> {
               if (s == "discard") return rpe::UndefinedPolicy::Discard;
               if (s == "tolerate") return rpe::UndefinedPolicy::Tolerate;
               return std::nullopt;
             },
             v);
    get_enum(tr, "compare", "train.", c.train.compare,
             [](const std::string& s) -> std::optional<rpe::CompareMode> {
               if (s == "per-step") return rpe::CompareMode::PerStep;
               if (s == "aggregate") return rpe::CompareMode::Aggregate;
               return std::nullopt;
             },
             v);
    get_enum(tr, "rationale", "train.", c.train.rationale, verify::parse_verifier_kind, v);
    tr.finish();
  }
  std::string ann;
  r.get("annotations", ann);
  if (!ann.empty()) c.annotations = resolve(base_dir, ann);
  r.finish();
  return c;
}

json config_to_json(const RunConfig& c) {
  json verifiers = json::array();
  for (auto k : c.verifiers) verifiers.push_back(std::string(verify::to_string(k)));
  json strategies = json::array();
  for (auto s : c.strategies) strategies.push_back(std::string(selection::to_string(s)));
  json doc{
      {"dataset", {{"path", c.dataset_path.string()}, {"kind", std::string(data::to_string(c.kind))},
                   {"name", c.dataset_name}}},
      {"paths", c.paths},
      {"temperature", c.temperature},
      {"max_tokens", c.max_tokens},
      {"batch", c.batch},
      {"verifiers", verifiers},
      {"verifier_max_tokens", c.verifier_max_tokens},
      {"aggregation", std::string(selection::to_string(c.aggregation))},
      {"strategies", strategies},
      {"budgets", c.effective_budgets()},
      {"executor", c.executor},
      {"limits", {{"timeout_ms", c.limits.wall_timeout.count()}, {"max_output_bytes", c.limits.max_output_bytes}}},
      {"code_rounds", c.code_rounds},
      {"cache_dir", c.cache_dir ? json(c.cache_dir->string()) : json(nullptr)},
      {"seed", c.seed},
      {"output_dir", c.output_dir.string()},
      {"concurrency", c.concurrency},
      {"backend", backend_to_json(c.backend)},
      {"verifier_backend", backend_to_json(c.verification_backend())},
      {"reward", {{"unparsed", c.reward.unparsed_reward}, {"token_probs", c.reward.use_token_probs}}},
      {"threshold", c.threshold},
      {"timing", c.timing == verify::Timing::Measured ? "measured" : "backend"},
      {"train", {{"rollouts", c.train.rollouts},
                 {"tau", c.train.tau},
                 {"undefined", undefined_name(c.train.undefined)},
                 {"compare", compare_name(c.train.compare)},
                 {"rationale", std::string(verify::to_string(c.train.rationale))}}},
      {"annotations", c.annotations ? json(c.annotations->string()) : json(nullptr)},
  };
  return doc;
}

std::vector<std::string> validate_config(const RunConfig& c) {
  Violations v;
  if (c.dataset_path.empty()) v.push_back("dataset path is not set");
  else if (!std::filesystem::is_regular_file(c.dataset_path)) {
    v.push_back("dataset file not found: " + c.dataset_path.string());
  }
  if (c.paths < 1) v.push_back("path budget must be >= 1");
  if (!std::isfinite(c.temperature) || c.temperature < 0.0) v.push_back("temperature must be >= 0");
  if (c.max_tokens < 1) v.push_back("max_tokens must be >= 1");
  if (c.verifier_max_tokens < 1) v.push_back("verifier_max_tokens must be >= 1");
  if (c.verifiers.empty()) v.push_back("at least one verifier is required");
  if (c.strategies.empty()) v.push_back("at least one strategy is required");
  for (int b : c.budgets) {
    if (b < 1) v.push_back("budget " + std::to_string(b) + " must be >= 1");
    else if (b > c.paths) v.push_back("budget " + std::to_string(b) + " exceeds the path budget " + std::to_string(c.paths));
  }
  const bool needs_code = std::find(c.verifiers.begin(), c.verifiers.end(), verify::VerifierKind::GenPRM) !=
                              c.verifiers.end() ||
                          c.train.rationale == verify::VerifierKind::GenPRM;
  if (needs_code && c.executor.empty()) v.push_back("executor command is required for genprm verification");
  if (c.limits.wall_timeout.count() <= 0) v.push_back("limits.timeout_ms must be > 0");
  if (c.limits.max_output_bytes == 0) v.push_back("limits.max_output_bytes must be > 0");
  if (c.code_rounds < 0) v.push_back("code_rounds must be >= 0");
  if (c.concurrency < 1) v.push_back("concurrency must be >= 1");
  if (c.output_dir.empty()) v.push_back("output_dir is not set");
  check_backend(c.backend, "backend", v);
  if (c.verifier_backend) check_backend(*c.verifier_backend, "verifier_backend", v);
  if (!(c.reward.unparsed_reward >= 0.0 && c.reward.unparsed_reward <= 1.0)) {
    v.push_back("reward.unparsed must lie in [0, 1]");
  }
  if (!(c.threshold >= 0.0 && c.threshold <= 1.0)) v.push_back("threshold must lie in [0, 1]");
  if (c.train.rollouts < 1) v.push_back("train.rollouts must be >= 1");
  if (!(c.train.tau > 0.0) || !std::isfinite(c.train.tau)) v.push_back("train.tau must be > 0");
  if (c.annotations && !std::filesystem::is_regular_file(*c.annotations)) {
    v.push_back("annotations file not found: " + c.annotations->string());
  }
  return v;
}

void apply_override(json& doc, const std::string& dotted_key, const std::string& value) {
  if (dotted_key.empty()) throw ValidationError("empty override key");
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted_key.find('.', start);
    const auto part = dotted_key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ValidationError("malformed override key '" + dotted_key + "'");
    if (!node->is_object()) *node = json::object();
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  try {
    *node = json::parse(value);
  } catch (const json::exception&) {
    *node = value;
  }
}

}  // namespace tqaprm::pipeline
