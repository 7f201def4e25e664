#include "tqaprm/tqaprm.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <string>

#include <spdlog/spdlog.h>

#include "tqaprm/config.hpp"
#include "tqaprm/error.hpp"
#include "tqaprm/metrics.hpp"
#include "tqaprm/pipeline.hpp"
#include "tqaprm/selector.hpp"
#include "tqaprm/verifier.hpp"

using namespace tqaprm;

struct tqaprm_pipeline {
  std::unique_ptr<pipeline::Pipeline> impl;
};

struct tqaprm_session {
  std::unique_ptr<annotate::Session> impl;
};

namespace {

thread_local std::string g_last_error;

tqaprm_status status_of(ErrorCode code) { return static_cast<tqaprm_status>(static_cast<int>(code) + 1); }

char* dup(const std::string& s) {
  auto* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

template <typename F>
tqaprm_status guarded(F fn) {
  g_last_error.clear();
  try {
    fn();
    return TQAPRM_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_of(e.code());
  } catch (const json::exception& e) {
    g_last_error = e.what();
    return TQAPRM_E_PARSE;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return TQAPRM_E_INTERNAL;
  } catch (...) {
    g_last_error = "unknown failure";
    return TQAPRM_E_INTERNAL;
  }
}

void need(const void* p, const char* name) {
  if (!p) throw Error(ErrorCode::InvalidArgument, std::string(name) + " must not be null");
}

data::TaskKind kind_arg(const char* kind) {
  need(kind, "kind");
  if (auto k = data::parse_task_kind(kind)) return *k;
  throw Error(ErrorCode::InvalidArgument, "unknown task kind \"" + std::string(kind) + "\"");
}

pipeline::RunConfig resolve_config(const char* config_json, const char* overrides_json, const char* base_dir,
                                   std::vector<std::string>& violations) {
  need(config_json, "config_json");
  json doc = json::parse(config_json);
  if (overrides_json) {
    const auto overrides = json::parse(overrides_json);
    if (!overrides.is_object()) throw Error(ErrorCode::InvalidArgument, "overrides must be a JSON object");
    for (const auto& [key, value] : overrides.items()) {
      pipeline::apply_override(doc, key, value.is_string() ? value.get<std::string>() : value.dump());
    }
  }
  auto config = pipeline::config_from_json(doc, base_dir ? base_dir : "", violations);
  for (auto& v : pipeline::validate_config(config)) violations.push_back(std::move(v));
  return config;
}

}  // namespace

extern "C" {

const char* tqaprm_version(void) { return "0.1.0"; }

const char* tqaprm_status_name(tqaprm_status status) {
  if (status == TQAPRM_OK) return "ok";
  if (status < TQAPRM_OK || status > TQAPRM_E_INTERNAL) return "unknown";
  return to_string(static_cast<ErrorCode>(static_cast<int>(status) - 1));
}

const char* tqaprm_last_error(void) { return g_last_error.c_str(); }

void tqaprm_string_free(char* s) { std::free(s); }

tqaprm_status tqaprm_set_log_level(const char* level) {
  return guarded([&] {
    need(level, "level");
    const auto parsed = spdlog::level::from_str(level);
    if (parsed == spdlog::level::off && std::strcmp(level, "off") != 0) {
      throw Error(ErrorCode::InvalidArgument, "unknown log level \"" + std::string(level) + "\"");
    }
    spdlog::set_level(parsed);
  });
}

tqaprm_status tqaprm_config_check(const char* config_json, const char* overrides_json, const char* base_dir,
                                  char** violations_json, char** resolved_json) {
  return guarded([&] {
    need(violations_json, "violations_json");
    std::vector<std::string> violations;
    const auto config = resolve_config(config_json, overrides_json, base_dir, violations);
    *violations_json = dup(json(violations).dump());
    if (resolved_json) *resolved_json = dup(pipeline::config_to_json(config).dump(2));
  });
}

tqaprm_status tqaprm_pipeline_open(const char* config_json, const char* overrides_json, const char* base_dir,
                                   tqaprm_pipeline** out) {
  return guarded([&] {
    need(out, "out");
    *out = nullptr;
    std::vector<std::string> violations;
    auto config = resolve_config(config_json, overrides_json, base_dir, violations);
    if (!violations.empty()) {
      std::string msg = "invalid config:";
      for (const auto& v : violations) msg += "\n  - " + v;
      throw ValidationError(msg);
    }
    auto handle = std::make_unique<tqaprm_pipeline>();
    handle->impl = std::make_unique<pipeline::Pipeline>(std::move(config));
    *out = handle.release();
  });
}

void tqaprm_pipeline_close(tqaprm_pipeline* pipeline) { delete pipeline; }

tqaprm_status tqaprm_pipeline_run(tqaprm_pipeline* pipeline, const char* stage, char** summary_json) {
  return guarded([&] {
    need(pipeline, "pipeline");
    need(stage, "stage");
    const auto parsed = pipeline::parse_stage(stage);
    if (!parsed) throw Error(ErrorCode::InvalidArgument, "unknown stage \"" + std::string(stage) + "\"");
    const auto summary = pipeline->impl->run(*parsed);
    if (summary_json) *summary_json = dup(pipeline::to_json(summary).dump());
  });
}

tqaprm_status tqaprm_annotations_export(tqaprm_pipeline* pipeline, const char* path, size_t* count) {
  return guarded([&] {
    need(pipeline, "pipeline");
    need(path, "path");
    const auto n = pipeline->impl->export_annotation_template(path);
    if (count) *count = n;
  });
}

tqaprm_status tqaprm_annotations_import(tqaprm_pipeline* pipeline, const char* path, size_t* count) {
  return guarded([&] {
    need(pipeline, "pipeline");
    need(path, "path");
    const auto n = pipeline->impl->import_annotations(path);
    if (count) *count = n;
  });
}

tqaprm_status tqaprm_session_open(tqaprm_pipeline* pipeline, tqaprm_session** out) {
  return guarded([&] {
    need(pipeline, "pipeline");
    need(out, "out");
    auto handle = std::make_unique<tqaprm_session>();
    handle->impl = pipeline->impl->open_session();
    *out = handle.release();
  });
}

tqaprm_status tqaprm_session_current(tqaprm_session* session, char** item_json) {
  return guarded([&] {
    need(session, "session");
    need(item_json, "item_json");
    *item_json = nullptr;
    if (const auto* item = session->impl->current()) {
      auto j = annotate::to_json(*item);
      j["table"] = item->table_text;
      *item_json = dup(j.dump());
    }
  });
}

tqaprm_status tqaprm_session_label(tqaprm_session* session, const char* label) {
  return guarded([&] {
    need(session, "session");
    need(label, "label");
    const std::string l(label);
    if (l == "correct") session->impl->label(metrics::HumanLabel::Correct);
    else if (l == "incorrect") session->impl->label(metrics::HumanLabel::Incorrect);
    else throw Error(ErrorCode::InvalidArgument, "label must be correct|incorrect");
  });
}

tqaprm_status tqaprm_session_skip(tqaprm_session* session) {
  return guarded([&] {
    need(session, "session");
    session->impl->skip();
  });
}

tqaprm_status tqaprm_session_save(tqaprm_session* session) {
  return guarded([&] {
    need(session, "session");
    session->impl->save();
  });
}

void tqaprm_session_progress(const tqaprm_session* session, size_t* labeled, size_t* total) {
  if (!session) return;
  if (labeled) *labeled = session->impl->labeled();
  if (total) *total = session->impl->total();
}

void tqaprm_session_close(tqaprm_session* session) { delete session; }

tqaprm_status tqaprm_normalize_answer(const char* text, const char* kind, char** out) {
  return guarded([&] {
    need(text, "text");
    need(out, "out");
    *out = dup(data::normalize_answer(text, kind_arg(kind)));
  });
}

tqaprm_status tqaprm_exact_match(const char* pred, const char* gold, const char* kind, int* match) {
  return guarded([&] {
    need(pred, "pred");
    need(gold, "gold");
    need(match, "match");
    *match = data::exact_match(std::string_view(pred), std::string_view(gold), kind_arg(kind)) ? 1 : 0;
  });
}

tqaprm_status tqaprm_serialize_table(const char* table_json, char** out) {
  return guarded([&] {
    need(table_json, "table_json");
    need(out, "out");
    const auto j = json::parse(table_json);
    data::Table table;
    table.header = j.at("header").get<std::vector<std::string>>();
    table.rows = j.at("rows").get<std::vector<std::vector<std::string>>>();
    data::validate(table);
    *out = dup(data::serialize_table(table));
  });
}

tqaprm_status tqaprm_select(const char* candidates_json, const char* strategy, const char* gold, const char* kind,
                            const char* aggregation, char** result_json) {
  return guarded([&] {
    need(candidates_json, "candidates_json");
    need(strategy, "strategy");
    need(result_json, "result_json");
    const auto j = json::parse(candidates_json);
    selection::CandidateSet set;
    set.instance_id = j.value("instance_id", std::string());
    for (const auto& c : j.at("candidates")) {
      selection::Candidate cand;
      cand.path_id = c.at("path_id").get<int>();
      if (const auto a = c.value("answer", json()); a.is_string()) cand.answer = a.get<std::string>();
      cand.step_rewards = c.value("step_rewards", std::vector<double>{});
      set.candidates.push_back(std::move(cand));
    }
    selection::validate(set);
    const auto s = selection::parse_strategy(strategy);
    if (!s) throw Error(ErrorCode::InvalidArgument, "unknown strategy \"" + std::string(strategy) + "\"");
    auto rule = selection::AggregationRule::Mean;
    if (aggregation) {
      const auto r = selection::parse_aggregation(aggregation);
      if (!r) throw Error(ErrorCode::InvalidArgument, "unknown aggregation \"" + std::string(aggregation) + "\"");
      rule = *r;
    }
    const auto result = selection::select(*s, set, gold ? gold : "", kind_arg(kind), rule);
    *result_json = dup(selection::to_json(result, set.instance_id, set.candidates.size()).dump());
  });
}

tqaprm_status tqaprm_parse_transcript(const char* text, size_t expected_steps, char** verdicts_json) {
  return guarded([&] {
    need(text, "text");
    need(verdicts_json, "verdicts_json");
    json out = json::array();
    for (const auto& v : verify::parse_transcript(text, expected_steps)) {
      out.push_back(json{{"index", v.step_index},
                         {"judgement", std::string(verify::to_string(v.judgement))},
                         {"reward", verify::step_reward(v, std::nullopt)},
                         {"rationale", v.rationale},
                         {"issue", std::string(verify::to_string(v.issue))}});
    }
    *verdicts_json = dup(out.dump());
  });
}

tqaprm_status tqaprm_classify_consistency(const int* labels, size_t count, int* consistent) {
  return guarded([&] {
    need(consistent, "consistent");
    if (count > 0) need(labels, "labels");
    for (size_t i = 0; i < count; ++i) {
      if (labels[i] != 0 && labels[i] != 1) throw Error(ErrorCode::InvalidArgument, "labels must be 0 or 1");
    }
    const std::vector<int> seq(labels, labels + count);
    *consistent = metrics::classify_consistency(seq) == metrics::ConsistencyClass::Consistent ? 1 : 0;
  });
}

}  // extern "C"
