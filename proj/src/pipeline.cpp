#include "tqaprm/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

#include <spdlog/fmt/fmt.h>
#include <spdlog/spdlog.h>

#include "tqaprm/error.hpp"
#include "tqaprm/json_io.hpp"
#include "tqaprm/metrics.hpp"
#include "tqaprm/rpe.hpp"
#include "tqaprm/sampler.hpp"
#include "tqaprm/selector.hpp"
#include "tqaprm/verifier.hpp"

namespace tqaprm::pipeline {

namespace {

namespace fs = std::filesystem;

/// Runs fn(0..n-1) on up to `workers` threads; results keep index order.
/// Every job runs; failures are rethrown afterwards, the first one verbatim
/// when it is the only one.
template <typename F>
auto parallel_map(std::size_t n, int workers, F fn) -> std::vector<decltype(fn(std::size_t{}))> {
  using R = decltype(fn(std::size_t{}));
  std::vector<std::optional<R>> slots(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        slots[i].emplace(fn(i));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto count = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(workers, 1)));
  if (count <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < count; ++t) pool.emplace_back(work);
  }

  std::vector<std::exception_ptr> failed;
  for (auto& e : errors) {
    if (e) failed.push_back(e);
  }
  if (failed.size() == 1) std::rethrow_exception(failed.front());
  if (!failed.empty()) {
    ErrorCode code = ErrorCode::Internal;
    std::string first;
    try {
      std::rethrow_exception(failed.front());
    } catch (const Error& e) {
      code = e.code();
      first = e.what();
    } catch (const std::exception& e) {
      first = e.what();
    }
    throw Error(code, std::to_string(failed.size()) + " of " + std::to_string(n) + " jobs failed; first: " + first);
  }
  std::vector<R> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

std::string csv_number(double v) { return fmt::format("{:.6f}", v); }

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string strategy_label(selection::Strategy s, std::optional<verify::VerifierKind> kind) {
  std::string label(selection::to_string(s));
  if (kind) label += "/" + std::string(verify::to_string(*kind));
  return label;
}

struct PathKey {
  std::string instance_id;
  int path_id = 0;
  auto operator<=>(const PathKey&) const = default;
};

std::vector<verify::VerificationTranscript> load_transcripts(const fs::path& file) {
  std::vector<verify::VerificationTranscript> out;
  for_each_jsonl(file, [&](std::size_t line, const json& j) {
    try {
      out.push_back(verify::transcript_from_json(j));
    } catch (const json::exception& e) {
      throw ParseError(line, e.what());
    }
  });
  return out;
}

std::string write_jsonl(const fs::path& file, const std::vector<json>& records) {
  write_file_atomic(file, to_jsonl(records));
  return file.string();
}

/// Stage manifest: per stage the config subset, input digests and output
/// digests of the last successful run.
class Manifest {
 public:
  explicit Manifest(fs::path file) : file_(std::move(file)) {
    if (fs::exists(file_)) {
      try {
        doc_ = json::parse(read_file(file_));
      } catch (const json::exception& e) {
        spdlog::warn("ignoring unreadable manifest {}: {}", file_.string(), e.what());
      }
    }
    if (!doc_.is_object()) doc_ = json::object();
  }

  std::optional<json> fresh(std::string_view stage, const json& fingerprint, const fs::path& root) const {
    const auto it = doc_.find(std::string(stage));
    if (it == doc_.end() || it->value("fingerprint", json()) != fingerprint) return std::nullopt;
    const auto outputs = it->value("outputs", json::object());
    for (const auto& [rel, digest] : outputs.items()) {
      const auto p = root / rel;
      if (!fs::is_regular_file(p) || file_sha256(p) != digest.get<std::string>()) return std::nullopt;
    }
    return it->value("details", json::object());
  }

  void record(std::string_view stage, const json& fingerprint, const std::vector<std::string>& outputs,
              const json& details, const fs::path& root) {
    json digests = json::object();
    for (const auto& rel : outputs) digests[rel] = file_sha256(root / rel);
    doc_[std::string(stage)] = json{{"fingerprint", fingerprint}, {"outputs", digests}, {"details", details}};
    write_file_atomic(file_, doc_.dump(2) + "\n");
  }

 private:
  fs::path file_;
  json doc_;
};

json backend_fingerprint(const BackendConfig& b) {
  json j{{"type", b.type}, {"model", b.model}, {"top_logprobs", b.top_logprobs}};
  if (b.type == "scripted" && fs::is_regular_file(b.script)) j["script_sha256"] = file_sha256(b.script);
  return j;
}

llm::BackendPtr make_backend(const BackendConfig& b, const RunConfig& config,
                             const std::shared_ptr<llm::ResponseCache>& cache) {
  llm::BackendPtr inner;
  std::string ns;
  if (b.type == "scripted") {
    inner = llm::scripted_backend(llm::load_script(b.script));
    ns = "scripted:" + file_sha256(b.script);
  } else if (b.type == "http") {
    llm::HttpConfig http;
    http.base_url = b.base_url;
    http.model = b.model;
    http.top_logprobs = b.top_logprobs;
    http.timeout = std::chrono::seconds(b.timeout_s);
    inner = llm::with_retry(llm::http_backend(llm::http_config_from_env(std::move(http))));
    ns = "http:" + b.model;
  } else {
    throw ConfigError("unknown backend type \"" + b.type + "\"");
  }
  inner = llm::bounded(std::move(inner), static_cast<std::size_t>(config.concurrency));
  if (cache) inner = llm::cached(std::move(inner), cache, ns);
  return inner;
}

bool uses(const std::vector<verify::VerifierKind>& kinds, verify::VerifierKind k) {
  return std::find(kinds.begin(), kinds.end(), k) != kinds.end();
}

}  // namespace

std::string_view to_string(Stage stage) noexcept {
  switch (stage) {
    case Stage::Sample: return "sample";
    case Stage::Verify: return "verify";
    case Stage::Select: return "select";
    case Stage::Eval: return "eval";
    case Stage::BuildTrain: return "build-train";
  }
  return "sample";
}

std::optional<Stage> parse_stage(std::string_view text) noexcept {
  for (auto s : {Stage::Sample, Stage::Verify, Stage::Select, Stage::Eval, Stage::BuildTrain}) {
    if (to_string(s) == text) return s;
  }
  return std::nullopt;
}

json to_json(const StageSummary& summary) {
  return json{{"stage", std::string(to_string(summary.stage))},
              {"up_to_date", summary.up_to_date},
              {"artifacts", summary.artifacts},
              {"details", summary.details}};
}

std::string artifact::transcripts(verify::VerifierKind kind) {
  return "transcripts." + std::string(verify::to_string(kind)) + ".jsonl";
}

struct Pipeline::Backends {
  std::mutex mu;
  llm::BackendPtr policy;
  llm::BackendPtr verifier;
  std::shared_ptr<sandbox::Runner> runner;
  std::shared_ptr<llm::ResponseCache> cache;
};

Pipeline::Pipeline(RunConfig config) : config_(std::move(config)), backends_(std::make_unique<Backends>()) {
  const auto violations = validate_config(config_);
  if (!violations.empty()) {
    std::string msg = "invalid config:";
    for (const auto& v : violations) msg += "\n  - " + v;
    throw ValidationError(msg);
  }
}

Pipeline::~Pipeline() = default;

void Pipeline::set_policy_backend(llm::BackendPtr backend) { backends_->policy = std::move(backend); }
void Pipeline::set_verifier_backend(llm::BackendPtr backend) { backends_->verifier = std::move(backend); }
void Pipeline::set_runner(std::shared_ptr<sandbox::Runner> runner) { backends_->runner = std::move(runner); }

llm::Backend& Pipeline::policy() {
  std::lock_guard lock(backends_->mu);
  if (config_.cache_dir && !backends_->cache) backends_->cache = std::make_shared<llm::ResponseCache>(*config_.cache_dir);
  if (!backends_->policy) backends_->policy = make_backend(config_.backend, config_, backends_->cache);
  return *backends_->policy;
}

llm::Backend& Pipeline::verifier() {
  std::lock_guard lock(backends_->mu);
  if (config_.cache_dir && !backends_->cache) backends_->cache = std::make_shared<llm::ResponseCache>(*config_.cache_dir);
  if (!backends_->verifier) backends_->verifier = make_backend(config_.verification_backend(), config_, backends_->cache);
  return *backends_->verifier;
}

sandbox::Runner* Pipeline::runner() {
  std::lock_guard lock(backends_->mu);
  if (!backends_->runner) {
    if (config_.executor.empty()) throw ConfigError("no executor command configured");
    backends_->runner =
        std::make_shared<sandbox::SubprocessRunner>(sandbox::ExecutorCommand{config_.executor}, config_.limits);
  }
  return backends_->runner.get();
}

void Pipeline::require(const std::string& rel, Stage producer) const {
  if (!fs::is_regular_file(out(rel))) {
    throw MissingArtifactError("missing " + out(rel).string() + "; run the '" + std::string(to_string(producer)) +
                               "' stage first");
  }
}

std::optional<fs::path> Pipeline::annotation_file() const {
  if (config_.annotations) return config_.annotations;
  if (fs::is_regular_file(out(artifact::kAnnotations))) return out(artifact::kAnnotations);
  return std::nullopt;
}

StageSummary Pipeline::run(Stage stage) {
  const auto cfg = config_to_json(config_);
  json fingerprint{{"stage", std::string(to_string(stage))}};
  json inputs = json::object();
  auto input = [&](const std::string& name, const fs::path& p) {
    inputs[name] = fs::is_regular_file(p) ? json(file_sha256(p)) : json(nullptr);
  };
  auto pick = [&](std::initializer_list<const char*> keys) {
    json j = json::object();
    for (const char* k : keys) j[k] = cfg.at(k);
    return j;
  };
  input("dataset", config_.dataset_path);
  json dataset_cfg{{"kind", cfg["dataset"]["kind"]}, {"name", cfg["dataset"]["name"]}};

  std::vector<std::string> expected_inputs;
  switch (stage) {
    case Stage::Sample:
      fingerprint["config"] = pick({"paths", "temperature", "max_tokens", "batch", "seed"});
      fingerprint["config"]["backend"] = backend_fingerprint(config_.backend);
      break;
    case Stage::Verify:
      require(artifact::kPaths, Stage::Sample);
      input(artifact::kPaths, out(artifact::kPaths));
      fingerprint["config"] = pick({"verifiers", "verifier_max_tokens", "code_rounds", "executor", "limits", "seed",
                                    "reward", "timing"});
      fingerprint["config"]["verifier_backend"] = backend_fingerprint(config_.verification_backend());
      break;
    case Stage::Select:
      require(artifact::kPaths, Stage::Sample);
      input(artifact::kPaths, out(artifact::kPaths));
      if (std::find(config_.strategies.begin(), config_.strategies.end(), selection::Strategy::BestOfN) !=
          config_.strategies.end()) {
        for (auto k : config_.verifiers) {
          require(artifact::transcripts(k), Stage::Verify);
          input(artifact::transcripts(k), out(artifact::transcripts(k)));
        }
      }
      fingerprint["config"] = pick({"strategies", "aggregation", "budgets", "verifiers", "reward"});
      break;
    case Stage::Eval: {
      require(artifact::kSelections, Stage::Select);
      require(artifact::kPaths, Stage::Sample);
      input(artifact::kSelections, out(artifact::kSelections));
      input(artifact::kPaths, out(artifact::kPaths));
      for (auto k : config_.verifiers) input(artifact::transcripts(k), out(artifact::transcripts(k)));
      if (auto ann = annotation_file()) input("annotations", *ann);
      fingerprint["config"] = pick({"threshold", "verifiers", "reward"});
      break;
    }
    case Stage::BuildTrain:
      require(artifact::kPaths, Stage::Sample);
      input(artifact::kPaths, out(artifact::kPaths));
      fingerprint["config"] = pick({"train", "temperature", "max_tokens", "seed", "verifier_max_tokens", "code_rounds",
                                    "executor", "limits", "reward", "timing"});
      fingerprint["config"]["backend"] = backend_fingerprint(config_.backend);
      fingerprint["config"]["verifier_backend"] = backend_fingerprint(config_.verification_backend());
      break;
  }
  fingerprint["config"]["dataset"] = dataset_cfg;
  fingerprint["inputs"] = inputs;

  Manifest manifest(out(artifact::kManifest));
  if (auto details = manifest.fresh(to_string(stage), fingerprint, config_.output_dir)) {
    StageSummary s;
    s.stage = stage;
    s.up_to_date = true;
    s.details = *details;
    spdlog::info("{}: up to date", to_string(stage));
    return s;
  }

  StageSummary summary;
  switch (stage) {
    case Stage::Sample: summary = sample(); break;
    case Stage::Verify: summary = verify(); break;
    case Stage::Select: summary = select(); break;
    case Stage::Eval: summary = evaluate(); break;
    case Stage::BuildTrain: summary = build_train(); break;
  }
  summary.stage = stage;
  manifest.record(to_string(stage), fingerprint, summary.artifacts, summary.details, config_.output_dir);
  return summary;
}

StageSummary Pipeline::sample() {
  const auto instances = data::load_dataset(config_.dataset_path, config_.kind);
  sampling::SamplingOptions options;
  options.n = config_.paths;
  options.temperature = config_.temperature;
  options.max_tokens = config_.max_tokens;
  options.seed = config_.seed;
  options.batch = config_.batch;
  auto& backend = policy();

  const auto results = parallel_map(instances.size(), config_.concurrency, [&](std::size_t i) {
    return sampling::sample_paths(instances[i], options, backend);
  });

  std::vector<json> records;
  std::map<std::string, int> segmentation;
  int unanswered = 0;
  int empty = 0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    for (const auto& path : results[i]) {
      records.push_back(sampling::to_json(path, instances[i].id));
      ++segmentation[std::string(sampling::to_string(path.segmentation))];
      if (!path.final_answer) ++unanswered;
      if (path.steps.empty()) ++empty;
    }
  }
  write_jsonl(out(artifact::kPaths), records);

  StageSummary s;
  s.artifacts = {artifact::kPaths};
  s.details = json{{"instances", instances.size()},
                   {"paths", records.size()},
                   {"unanswered", unanswered},
                   {"empty", empty},
                   {"segmentation", segmentation}};
  return s;
}

StageSummary Pipeline::verify() {
  const auto instances = data::load_dataset(config_.dataset_path, config_.kind);
  const auto paths = annotate::load_paths(out(artifact::kPaths));

  std::vector<std::pair<const data::TQAInstance*, const sampling::ReasoningPath*>> jobs;
  std::set<std::string> known;
  for (const auto& inst : instances) {
    known.insert(inst.id);
    if (auto it = paths.find(inst.id); it != paths.end()) {
      for (const auto& p : it->second) jobs.emplace_back(&inst, &p);
    }
  }
  for (const auto& [id, ps] : paths) {
    if (!known.count(id)) throw ValidationError(std::string(artifact::kPaths) + " names unknown instance " + id);
  }

  verify::VerifierOptions options;
  options.reward = config_.reward;
  options.max_code_rounds = config_.code_rounds;
  options.max_tokens = config_.verifier_max_tokens;
  options.want_token_probs = config_.reward.use_token_probs;
  options.seed = config_.seed;
  options.timing = config_.timing;

  StageSummary s;
  auto& backend = verifier();
  for (auto kind : config_.verifiers) {
    sandbox::Runner* sandbox = kind == verify::VerifierKind::GenPRM ? runner() : nullptr;
    const auto transcripts = parallel_map(jobs.size(), config_.concurrency, [&](std::size_t i) {
      const auto& [inst, path] = jobs[i];
      if (path->steps.empty()) {
        verify::VerificationTranscript t;
        t.instance_id = inst->id;
        t.path_id = path->path_id;
        t.kind = kind;
        return t;
      }
      return verify::run_verification(kind, *inst, *path, backend, sandbox, options);
    });

    std::vector<json> records;
    std::map<std::string, int> judgements;
    int rounds = 0;
    int truncated = 0;
    for (const auto& t : transcripts) {
      records.push_back(verify::to_json(t));
      for (const auto& v : t.verdicts) {
        ++judgements[std::string(verify::to_string(v.judgement))];
        rounds += static_cast<int>(v.code_rounds.size());
      }
      if (t.truncated) ++truncated;
    }
    const auto rel = artifact::transcripts(kind);
    write_jsonl(out(rel), records);
    s.artifacts.push_back(rel);
    s.details[std::string(verify::to_string(kind))] =
        json{{"transcripts", records.size()}, {"judgements", judgements}, {"code_rounds", rounds},
             {"truncated", truncated}};
  }
  return s;
}

StageSummary Pipeline::select() {
  const auto instances = data::load_dataset(config_.dataset_path, config_.kind);
  const auto paths = annotate::load_paths(out(artifact::kPaths));
  const bool best_of_n = std::find(config_.strategies.begin(), config_.strategies.end(),
                                   selection::Strategy::BestOfN) != config_.strategies.end();

  std::map<verify::VerifierKind, std::map<PathKey, std::vector<double>>> rewards;
  if (best_of_n) {
    for (auto kind : config_.verifiers) {
      auto& table = rewards[kind];
      for (const auto& t : load_transcripts(out(artifact::transcripts(kind)))) {
        auto& r = table[PathKey{t.instance_id, t.path_id}];
        for (const auto& v : t.verdicts) r.push_back(v.reward);
      }
    }
  }

  std::vector<json> records;
  std::size_t instances_selected = 0;
  for (const auto& inst : instances) {
    const auto it = paths.find(inst.id);
    if (it == paths.end() || it->second.empty()) {
      throw ValidationError("instance " + inst.id + " has no sampled paths; rerun the 'sample' stage");
    }
    ++instances_selected;
    selection::CandidateSet base{inst.id, {}};
    for (const auto& p : it->second) base.candidates.push_back({p.path_id, p.final_answer, {}});
    selection::validate(base);

    for (auto budget : config_.effective_budgets()) {
      const auto sub = selection::prefix(base, budget);
      json unanswered = json::array();
      for (const auto& c : sub.candidates) {
        if (!c.answer) unanswered.push_back(c.path_id);
      }
      auto emit = [&](const selection::SelectionResult& r, std::optional<verify::VerifierKind> kind) {
        auto rec = selection::to_json(r, inst.id, budget);
        rec["verifier"] = kind ? json(std::string(verify::to_string(*kind))) : json(nullptr);
        rec["unanswered_paths"] = unanswered;
        records.push_back(std::move(rec));
      };
      for (auto strategy : config_.strategies) {
        if (strategy != selection::Strategy::BestOfN) {
          emit(selection::select(strategy, sub, inst.gold, inst.kind, config_.aggregation), std::nullopt);
          continue;
        }
        for (auto kind : config_.verifiers) {
          auto scored = sub;
          for (auto& c : scored.candidates) {
            const auto r = rewards[kind].find(PathKey{inst.id, c.path_id});
            if (r == rewards[kind].end()) {
              throw MissingArtifactError(artifact::transcripts(kind) + " has no record for " + inst.id + " path " +
                                         std::to_string(c.path_id) + "; rerun the 'verify' stage");
            }
            c.step_rewards = r->second.empty() ? std::vector<double>{config_.reward.unparsed_reward} : r->second;
          }
          emit(selection::best_of_n(scored, config_.aggregation), kind);
        }
      }
    }
  }
  write_jsonl(out(artifact::kSelections), records);

  StageSummary s;
  s.artifacts = {artifact::kSelections};
  s.details = json{{"instances", instances_selected}, {"selections", records.size()}};
  return s;
}

StageSummary Pipeline::evaluate() {
  const auto instances = data::load_dataset(config_.dataset_path, config_.kind);
  const auto paths = annotate::load_paths(out(artifact::kPaths));

  std::map<metrics::SelectionKey, selection::SelectionResult> selections;
  for_each_jsonl(out(artifact::kSelections), [&](std::size_t line, const json& j) {
    try {
      auto rec = selection::selection_from_json(j);
      std::optional<verify::VerifierKind> kind;
      if (const auto v = j.value("verifier", json()); v.is_string()) kind = verify::parse_verifier_kind(v.get<std::string>());
      selections[{rec.instance_id, strategy_label(rec.result.strategy, kind), rec.budget}] = rec.result;
    } catch (const json::exception& e) {
      throw ParseError(line, e.what());
    }
  });
  const auto accuracy = metrics::answer_accuracy(selections, instances);

  std::map<PathKey, const sampling::ReasoningPath*> path_index;
  for (const auto& [id, ps] : paths) {
    for (const auto& p : ps) path_index[{id, p.path_id}] = &p;
  }
  std::map<std::string, const data::TQAInstance*> instance_index;
  for (const auto& inst : instances) instance_index[inst.id] = &inst;

  std::optional<std::vector<metrics::AnnotationRecord>> annotations;
  if (auto file = annotation_file()) annotations = metrics::load_annotations(*file);

  StageSummary s;
  json report{{"dataset", config_.dataset_name},
              {"kind", std::string(data::to_string(config_.kind))},
              {"instances", instances.size()},
              {"accuracy", json::object()},
              {"verifiers", json::object()}};
  std::string accuracy_csv = "strategy,budget,em\n";
  for (const auto& [label, curve] : accuracy.em) {
    for (const auto& [budget, em] : curve) {
      report["accuracy"][label][std::to_string(budget)] = em;
      accuracy_csv += csv_field(label) + "," + std::to_string(budget) + "," + csv_number(em) + "\n";
    }
  }

  std::string bins_csv = "verifier,lower,upper,count,correct,em\n";
  std::string timing_csv = "dataset,verifier,instances,mean_seconds\n";
  std::string process_csv = "verifier,accuracy,macro_accuracy,precision,recall,tp,fp,tn,fn\n";
  std::vector<metrics::TimingSpan> spans;
  bool any_process = false;

  for (auto kind : config_.verifiers) {
    const auto rel = artifact::transcripts(kind);
    if (!fs::is_regular_file(out(rel))) continue;
    const auto transcripts = load_transcripts(out(rel));
    const std::string name(verify::to_string(kind));
    json section = json::object();

    std::vector<std::pair<double, bool>> scored;
    std::map<std::string, std::chrono::milliseconds> per_instance;
    std::size_t consistent = 0;
    std::size_t inconsistent = 0;
    for (const auto& t : transcripts) {
      const auto p = path_index.find({t.instance_id, t.path_id});
      const auto inst = instance_index.find(t.instance_id);
      if (p == path_index.end() || inst == instance_index.end()) {
        throw ValidationError(rel + " refers to unknown path " + t.instance_id + "/" + std::to_string(t.path_id) +
                              "; rerun the 'verify' stage");
      }
      std::vector<double> rewards;
      std::vector<int> labels;
      for (const auto& v : t.verdicts) {
        rewards.push_back(v.reward);
        labels.push_back(v.reward >= config_.threshold ? 1 : 0);
      }
      const double score = rewards.empty() ? config_.reward.unparsed_reward
                                           : selection::aggregate(rewards, selection::AggregationRule::Mean);
      scored.emplace_back(score, data::answer_matches(p->second->final_answer, inst->second->gold, inst->second->kind));
      if (!labels.empty()) {
        (metrics::classify_consistency(labels) == metrics::ConsistencyClass::Consistent ? consistent : inconsistent)++;
      }
      per_instance[t.instance_id] += t.wall_time;
    }

    json bins = json::array();
    for (const auto& b : metrics::bin_analysis(scored)) {
      bins.push_back(json{{"lower", b.lower},
                          {"upper", b.upper},
                          {"closed_upper", b.closed_upper},
                          {"count", b.count},
                          {"correct", b.correct},
                          {"em", b.em ? json(*b.em) : json(nullptr)}});
      bins_csv += name + "," + csv_number(b.lower) + "," + csv_number(b.upper) + "," + std::to_string(b.count) + "," +
                  std::to_string(b.correct) + "," + (b.em ? csv_number(*b.em) : std::string("NA")) + "\n";
    }
    section["bins"] = bins;
    section["consistency"] = json{{"consistent", consistent}, {"inconsistent", inconsistent}};
    for (const auto& [id, d] : per_instance) spans.push_back({config_.dataset_name, name, d});

    if (annotations) {
      const auto scores = metrics::process_accuracy(metrics::step_rewards(transcripts), *annotations, config_.threshold);
      const auto& c = scores.confusion;
      section["process"] = json{{"accuracy", scores.accuracy},
                                {"macro_accuracy", scores.macro_accuracy},
                                {"precision", scores.precision ? json(*scores.precision) : json(nullptr)},
                                {"recall", scores.recall ? json(*scores.recall) : json(nullptr)},
                                {"confusion", {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}}},
                                {"threshold", config_.threshold}};
      process_csv += name + "," + csv_number(scores.accuracy) + "," + csv_number(scores.macro_accuracy) + "," +
                     (scores.precision ? csv_number(*scores.precision) : "NA") + "," +
                     (scores.recall ? csv_number(*scores.recall) : "NA") + "," + std::to_string(c.tp) + "," +
                     std::to_string(c.fp) + "," + std::to_string(c.tn) + "," + std::to_string(c.fn) + "\n";
      any_process = true;
    }
    report["verifiers"][name] = std::move(section);
  }

  if (annotations) {
    std::map<PathKey, std::map<int, int>> human;
    for (const auto& a : *annotations) {
      human[{a.instance_id, a.path_id}][a.step_index] = a.label == metrics::HumanLabel::Correct ? 1 : 0;
    }
    std::size_t consistent = 0;
    std::size_t inconsistent = 0;
    for (const auto& [key, steps] : human) {
      std::vector<int> labels;
      for (const auto& [idx, l] : steps) labels.push_back(l);
      (metrics::classify_consistency(labels) == metrics::ConsistencyClass::Consistent ? consistent : inconsistent)++;
    }
    report["annotated_consistency"] = json{{"consistent", consistent}, {"inconsistent", inconsistent}};
  }

  json timing = json::array();
  for (const auto& row : metrics::timing_report(spans)) {
    timing.push_back(json{{"dataset", row.dataset}, {"verifier", row.verifier}, {"instances", row.spans},
                          {"mean_seconds", row.mean_seconds}});
    timing_csv += csv_field(row.dataset) + "," + row.verifier + "," + std::to_string(row.spans) + "," +
                  csv_number(row.mean_seconds) + "\n";
  }
  report["timing"] = timing;

  write_file_atomic(out(artifact::kReport), report.dump(2) + "\n");
  write_file_atomic(out(artifact::kAccuracyCsv), accuracy_csv);
  write_file_atomic(out(artifact::kBinsCsv), bins_csv);
  write_file_atomic(out(artifact::kTimingCsv), timing_csv);
  s.artifacts = {artifact::kReport, artifact::kAccuracyCsv, artifact::kBinsCsv, artifact::kTimingCsv};
  if (any_process) {
    write_file_atomic(out(artifact::kProcessCsv), process_csv);
    s.artifacts.push_back(artifact::kProcessCsv);
  }
  s.details = json{{"accuracy", report["accuracy"]}};
  return s;
}

StageSummary Pipeline::build_train() {
  const auto instances = data::load_dataset(config_.dataset_path, config_.kind);
  const auto paths = annotate::load_paths(out(artifact::kPaths));

  std::vector<std::pair<const data::TQAInstance*, const sampling::ReasoningPath*>> jobs;
  std::size_t skipped = 0;
  for (const auto& inst : instances) {
    const auto it = paths.find(inst.id);
    if (it == paths.end()) continue;
    for (const auto& p : it->second) {
      if (p.steps.empty()) ++skipped;
      else jobs.emplace_back(&inst, &p);
    }
  }

  rpe::RolloutOptions rollouts;
  rollouts.rollouts = config_.train.rollouts;
  rollouts.temperature = config_.temperature;
  rollouts.max_tokens = config_.max_tokens;
  rollouts.seed = config_.seed;

  verify::VerifierOptions voptions;
  voptions.reward = config_.reward;
  voptions.max_code_rounds = config_.code_rounds;
  voptions.max_tokens = config_.verifier_max_tokens;
  voptions.want_token_probs = false;
  voptions.seed = config_.seed;
  voptions.timing = config_.timing;

  const auto kind = config_.train.rationale;
  auto& policy_backend = policy();
  auto& verifier_backend = verifier();
  sandbox::Runner* sandbox = kind == verify::VerifierKind::GenPRM ? runner() : nullptr;

  struct Built {
    rpe::TrainingRecord record;
    std::vector<rpe::RolloutEstimate> estimates;
  };
  auto built = parallel_map(jobs.size(), config_.concurrency, [&](std::size_t i) {
    const auto& [inst, path] = jobs[i];
    Built b;
    b.estimates = rpe::estimate_all_prefixes(*inst, *path, policy_backend, rollouts);
    b.record.instance_id = inst->id;
    b.record.path_id = path->path_id;
    b.record.rpe = rpe::label_steps(b.estimates, config_.train.tau);
    b.record.rationale = verify::run_verification(kind, *inst, *path, verifier_backend, sandbox, voptions);
    return b;
  });

  std::vector<json> rollout_records;
  std::vector<rpe::TrainingRecord> records;
  for (auto& b : built) {
    json est = json::array();
    for (const auto& e : b.estimates) est.push_back(rpe::to_json(e));
    json labels = json::array();
    for (const auto& l : b.record.rpe) labels.push_back(rpe::to_json(l));
    rollout_records.push_back(json{{"instance_id", b.record.instance_id},
                                   {"path_id", b.record.path_id},
                                   {"estimates", std::move(est)},
                                   {"labels", std::move(labels)},
                                   {"tau", config_.train.tau}});
    records.push_back(std::move(b.record));
  }
  write_jsonl(out(artifact::kRollouts), rollout_records);

  rpe::FilterOptions filter;
  filter.undefined = config_.train.undefined;
  filter.compare = config_.train.compare;
  const auto report = rpe::export_conversations(records, out(artifact::kConversations), config_.train.tau, filter);
  auto report_json = rpe::to_json(report);
  report_json["tau"] = config_.train.tau;
  report_json["rationale"] = std::string(verify::to_string(kind));
  report_json["skipped_empty_paths"] = skipped;
  write_file_atomic(out(artifact::kTrainReport), report_json.dump(2) + "\n");

  StageSummary s;
  s.artifacts = {artifact::kRollouts, artifact::kConversations, artifact::kTrainReport};
  s.details = json{{"total", report.total}, {"kept", report.kept}, {"discarded", report.discarded.size()},
                   {"skipped_empty_paths", skipped}};
  return s;
}

std::vector<annotate::StepItem> Pipeline::annotation_items() const {
  require(artifact::kPaths, Stage::Sample);
  const auto instances = data::load_dataset(config_.dataset_path, config_.kind);
  return annotate::collect_items(instances, annotate::load_paths(out(artifact::kPaths)));
}

std::size_t Pipeline::export_annotation_template(const fs::path& file) const {
  auto items = annotation_items();
  if (auto existing = annotation_file()) {
    std::map<metrics::StepKey, metrics::HumanLabel> labels;
    for (const auto& a : metrics::load_annotations(*existing)) labels[{a.instance_id, a.path_id, a.step_index}] = a.label;
    for (auto& item : items) {
      if (auto it = labels.find(item.key); it != labels.end()) item.label = it->second;
    }
  }
  annotate::export_template(items, file);
  return items.size();
}

std::size_t Pipeline::import_annotations(const fs::path& file) const {
  const auto records = annotate::import_annotations(file, annotation_items());
  annotate::write_annotations(records, out(artifact::kAnnotations));
  return records.size();
}

std::unique_ptr<annotate::Session> Pipeline::open_session() const {
  auto items = annotation_items();
  std::vector<metrics::AnnotationRecord> existing;
  if (fs::is_regular_file(out(artifact::kAnnotations))) existing = metrics::load_annotations(out(artifact::kAnnotations));
  return std::make_unique<annotate::Session>(std::move(items), std::move(existing), out(artifact::kAnnotations));
}

}  // namespace tqaprm::pipeline
