// Command-line front end. Talks to the harness only through the C API.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tqaprm/tqaprm.h"

namespace {

using json = nlohmann::json;

enum Exit { kOk = 0, kInvalid = 1, kRuntime = 2 };

int exit_code(tqaprm_status s) {
  switch (s) {
    case TQAPRM_OK: return kOk;
    case TQAPRM_E_INVALID_ARGUMENT:
    case TQAPRM_E_PARSE:
    case TQAPRM_E_VALIDATION:
    case TQAPRM_E_CONFIG: return kInvalid;
    default: return kRuntime;
  }
}

int fail(tqaprm_status s) {
  std::cerr << "error [" << tqaprm_status_name(s) << "]: " << tqaprm_last_error() << "\n";
  return exit_code(s);
}

/// Owns a string handed out by the library.
struct Owned {
  char* p = nullptr;
  ~Owned() { tqaprm_string_free(p); }
  std::string str() const { return p ? p : ""; }
};

struct Options {
  std::string config_path;
  std::vector<std::string> sets;
  std::map<std::string, std::string> overrides;
  std::string log_level = "warn";
};

void set(Options& o, const std::string& key, const std::string& value) { o.overrides[key] = value; }

/// Elements that read as JSON (numbers) keep their type; the rest are strings.
std::string json_list(const std::vector<std::string>& items) {
  json out = json::array();
  for (const auto& item : items) {
    auto parsed = json::parse(item, nullptr, false);
    out.push_back(parsed.is_discarded() || parsed.is_object() || parsed.is_array() ? json(item) : parsed);
  }
  return out.dump();
}

struct Loaded {
  std::string text;
  std::string base_dir;
};

Loaded load_config(const Options& o) {
  if (o.config_path.empty()) return {"{}", std::filesystem::current_path().string()};
  std::ifstream in(o.config_path);
  if (!in) throw std::runtime_error("cannot read config file " + o.config_path);
  std::stringstream ss;
  ss << in.rdbuf();
  auto dir = std::filesystem::absolute(o.config_path).parent_path();
  return {ss.str(), dir.string()};
}

std::string overrides_json(const Options& o) {
  json j = json::object();
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw std::runtime_error("--set expects KEY=VALUE, got '" + s + "'");
    j[s.substr(0, eq)] = s.substr(eq + 1);
  }
  for (const auto& [k, v] : o.overrides) j[k] = v;
  return j.dump();
}

class Session {
 public:
  explicit Session(tqaprm_pipeline* p) : pipeline_(p) {}
  ~Session() { tqaprm_pipeline_close(pipeline_); }
  tqaprm_pipeline* get() const { return pipeline_; }

 private:
  tqaprm_pipeline* pipeline_;
};

int open(const Options& o, tqaprm_pipeline** out) {
  const auto cfg = load_config(o);
  const auto ov = overrides_json(o);
  if (auto s = tqaprm_set_log_level(o.log_level.c_str()); s != TQAPRM_OK) return fail(s);
  if (auto s = tqaprm_pipeline_open(cfg.text.c_str(), ov.c_str(), cfg.base_dir.c_str(), out); s != TQAPRM_OK) {
    return fail(s);
  }
  return kOk;
}

int check(const Options& o) {
  const auto cfg = load_config(o);
  const auto ov = overrides_json(o);
  Owned violations, resolved;
  if (auto s = tqaprm_config_check(cfg.text.c_str(), ov.c_str(), cfg.base_dir.c_str(), &violations.p, &resolved.p);
      s != TQAPRM_OK) {
    return fail(s);
  }
  const auto list = json::parse(violations.str());
  if (!list.empty()) {
    std::cerr << "invalid config:\n";
    for (const auto& v : list) std::cerr << "  - " << v.get<std::string>() << "\n";
    return kInvalid;
  }
  std::cout << resolved.str() << "\n";
  return kOk;
}

int run_stages(const Options& o, const std::vector<std::string>& stages) {
  tqaprm_pipeline* raw = nullptr;
  if (int rc = open(o, &raw); rc != kOk) return rc;
  Session pipeline(raw);
  for (const auto& stage : stages) {
    Owned summary;
    if (auto s = tqaprm_pipeline_run(pipeline.get(), stage.c_str(), &summary.p); s != TQAPRM_OK) return fail(s);
    std::cout << json::parse(summary.str()).dump(2) << "\n";
  }
  return kOk;
}

int label_loop(tqaprm_pipeline* pipeline) {
  tqaprm_session* session = nullptr;
  if (auto s = tqaprm_session_open(pipeline, &session); s != TQAPRM_OK) return fail(s);
  struct Close {
    tqaprm_session* s;
    ~Close() { tqaprm_session_close(s); }
  } close{session};

  std::string line;
  while (true) {
    Owned item;
    if (auto s = tqaprm_session_current(session, &item.p); s != TQAPRM_OK) return fail(s);
    std::size_t labeled = 0, total = 0;
    tqaprm_session_progress(session, &labeled, &total);
    if (!item.p) {
      std::cout << "All steps labeled (" << labeled << "/" << total << ").\n";
      break;
    }
    const auto j = json::parse(item.str());
    std::cout << "\n[" << labeled << "/" << total << "] " << j["instance_id"].get<std::string>() << " path "
              << j["path_id"] << " step " << j["step_index"] << "\n"
              << "Table: " << j["table"].get<std::string>() << "\n"
              << "Question: " << j["question"].get<std::string>() << "\n"
              << "Gold: " << j["gold"].get<std::string>()
              << "   Path answer: " << (j["final_answer"].is_null() ? "(none)" : j["final_answer"].get<std::string>())
              << "\n---\n"
              << j["step"].get<std::string>() << "\n---\n"
              << "[c]orrect  [i]ncorrect  [s]kip  [q]uit > " << std::flush;
    if (!std::getline(std::cin, line) || line == "q") break;
    tqaprm_status s = TQAPRM_OK;
    if (line == "c") s = tqaprm_session_label(session, "correct");
    else if (line == "i") s = tqaprm_session_label(session, "incorrect");
    else if (line == "s") s = tqaprm_session_skip(session);
    else {
      std::cout << "unrecognized input\n";
      continue;
    }
    if (s != TQAPRM_OK) return fail(s);
    if (auto saved = tqaprm_session_save(session); saved != TQAPRM_OK) return fail(saved);
  }
  if (auto s = tqaprm_session_save(session); s != TQAPRM_OK) return fail(s);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Test-time scaling harness for table question answering"};
  app.require_subcommand(1);
  app.fallthrough();

  Options o;
  app.add_option("-c,--config", o.config_path, "Run config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--set", o.sets, "Override a config key: dotted.key=value")->take_all();
  app.add_option("--log-level", o.log_level, "trace|debug|info|warn|error|off");

  auto opt = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(flag, [&o, key](const std::string& v) { set(o, key, v); }, help);
  };
  auto list = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
    sub->add_option_function<std::vector<std::string>>(
        flag, [&o, key](const std::vector<std::string>& v) { set(o, key, json_list(v)); }, help);
  };

  auto* check_cmd = app.add_subcommand("check", "Validate the config and print it resolved");

  auto* sample = app.add_subcommand("sample", "Sample reasoning paths from the policy model");
  opt(sample, "--paths", "paths", "Path budget N");
  opt(sample, "--temperature", "temperature", "Sampling temperature");
  opt(sample, "--max-tokens", "max_tokens", "Completion token limit");
  opt(sample, "--seed", "seed", "Seed");

  auto* verify = app.add_subcommand("verify", "Grade every step of every path");
  list(verify, "--verifier", "verifiers", "textual|mda|rra|genprm|judge (repeatable)");
  opt(verify, "--code-rounds", "code_rounds", "Code round limit per path");

  auto* select = app.add_subcommand("select", "Choose an answer per instance");
  list(select, "--strategy", "strategies", "best-of-n|majority|oracle|pass@1 (repeatable)");
  opt(select, "--aggregation", "aggregation", "mean|min|last");
  list(select, "--budget", "budgets", "Path budgets to evaluate (repeatable)");

  auto* eval = app.add_subcommand("eval", "Compute answer and step metrics");
  opt(eval, "--threshold", "threshold", "Reward threshold for a correct step");
  opt(eval, "--annotations", "annotations", "Human step labels (JSONL)");

  auto* train = app.add_subcommand("build-train", "Build PRM training conversations");
  opt(train, "--rollouts", "train.rollouts", "Monte-Carlo rollouts per prefix");
  opt(train, "--tau", "train.tau", "Progress ratio threshold");

  auto* all = app.add_subcommand("run", "sample, verify, select and eval in sequence");

  auto* annotate = app.add_subcommand("annotate", "Import, export or enter step labels");
  annotate->require_subcommand(1);
  std::string export_path, import_path;
  auto* ann_export = annotate->add_subcommand("export", "Write a labeling template");
  ann_export->add_option("--out", export_path, "Template file")->required();
  auto* ann_import = annotate->add_subcommand("import", "Load labeled records into the run");
  ann_import->add_option("--file", import_path, "Labeled JSONL")->required()->check(CLI::ExistingFile);
  auto* ann_label = annotate->add_subcommand("label", "Label steps interactively");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInvalid;
  }

  try {
    if (check_cmd->parsed()) return check(o);
    if (sample->parsed()) return run_stages(o, {"sample"});
    if (verify->parsed()) return run_stages(o, {"verify"});
    if (select->parsed()) return run_stages(o, {"select"});
    if (eval->parsed()) return run_stages(o, {"eval"});
    if (train->parsed()) return run_stages(o, {"build-train"});
    if (all->parsed()) return run_stages(o, {"sample", "verify", "select", "eval"});

    tqaprm_pipeline* raw = nullptr;
    if (int rc = open(o, &raw); rc != kOk) return rc;
    Session pipeline(raw);
    std::size_t n = 0;
    if (ann_export->parsed()) {
      if (auto s = tqaprm_annotations_export(pipeline.get(), export_path.c_str(), &n); s != TQAPRM_OK) return fail(s);
      std::cout << "wrote " << n << " steps to " << export_path << "\n";
      return kOk;
    }
    if (ann_import->parsed()) {
      if (auto s = tqaprm_annotations_import(pipeline.get(), import_path.c_str(), &n); s != TQAPRM_OK) return fail(s);
      std::cout << "imported " << n << " labels\n";
      return kOk;
    }
    if (ann_label->parsed()) return label_loop(pipeline.get());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  }
  return kOk;
}
