#include "tqaprm/annotate.hpp"

#include <set>

#include "tqaprm/error.hpp"
#include "tqaprm/json_io.hpp"

namespace tqaprm::annotate {

namespace {

std::string describe(const metrics::StepKey& k) {
  return k.instance_id + "/" + std::to_string(k.path_id) + "/" + std::to_string(k.step_index);
}

}  // namespace

PathsByInstance load_paths(const std::filesystem::path& file) {
  PathsByInstance out;
  for_each_jsonl(file, [&](std::size_t line, const json& j) {
    try {
      auto [id, path] = sampling::path_from_json(j);
      out[id].push_back(std::move(path));
    } catch (const json::exception& e) {
      throw ParseError(line, e.what());
    }
  });
  return out;
}

std::vector<StepItem> collect_items(const std::vector<data::TQAInstance>& instances, const PathsByInstance& paths) {
  std::vector<StepItem> items;
  for (const auto& inst : instances) {
    const auto it = paths.find(inst.id);
    if (it == paths.end()) continue;
    const auto table = data::serialize_table(inst.table, data::NonAscii::Verbatim);
    for (const auto& path : it->second) {
      for (const auto& step : path.steps) {
        StepItem item;
        item.key = {inst.id, path.path_id, step.index};
        item.step_text = step.text;
        item.question = inst.question;
        item.table_text = table;
        item.final_answer = path.final_answer;
        item.gold = inst.gold;
        items.push_back(std::move(item));
      }
    }
  }
  return items;
}

json to_json(const StepItem& item) {
  json label = nullptr;
  if (item.label) label = *item.label == metrics::HumanLabel::Correct ? "correct" : "incorrect";
  return json{{"instance_id", item.key.instance_id},
              {"path_id", item.key.path_id},
              {"step_index", item.key.step_index},
              {"label", label},
              {"step", item.step_text},
              {"question", item.question},
              {"final_answer", item.final_answer ? json(*item.final_answer) : json(nullptr)},
              {"gold", item.gold}};
}

void export_template(const std::vector<StepItem>& items, const std::filesystem::path& out) {
  std::string body;
  for (const auto& item : items) body += to_json(item).dump() + "\n";
  write_file_atomic(out, body);
}

std::vector<metrics::AnnotationRecord> import_annotations(const std::filesystem::path& file,
                                                          const std::vector<StepItem>& items) {
  std::set<metrics::StepKey> known;
  for (const auto& item : items) known.insert(item.key);

  std::vector<metrics::AnnotationRecord> records;
  std::set<metrics::StepKey> seen;
  std::vector<std::string> unknown;
  for_each_jsonl(file, [&](std::size_t line, const json& j) {
    if (j.contains("label") && j.at("label").is_null()) return;
    metrics::AnnotationRecord r;
    try {
      r = metrics::annotation_from_json(j);
    } catch (const json::exception& e) {
      throw ParseError(line, e.what());
    } catch (const ValidationError& e) {
      throw ParseError(line, e.what());
    }
    const metrics::StepKey key{r.instance_id, r.path_id, r.step_index};
    if (!seen.insert(key).second) throw ParseError(line, "duplicate annotation " + describe(key));
    if (!known.count(key)) unknown.push_back(describe(key));
    records.push_back(std::move(r));
  });
  if (!unknown.empty()) {
    std::string msg = "annotations for unknown steps:";
    for (const auto& u : unknown) msg += " " + u;
    throw ValidationError(msg);
  }
  return records;
}

void write_annotations(const std::vector<metrics::AnnotationRecord>& records, const std::filesystem::path& out) {
  std::string body;
  for (const auto& r : records) body += metrics::to_json(r).dump() + "\n";
  write_file_atomic(out, body);
}

Session::Session(std::vector<StepItem> items, std::vector<metrics::AnnotationRecord> existing,
                 std::filesystem::path store)
    : items_(std::move(items)), store_(std::move(store)) {
  for (const auto& r : existing) labels_[{r.instance_id, r.path_id, r.step_index}] = r.label;
  advance();
}

const StepItem* Session::current() const { return cursor_ < items_.size() ? &items_[cursor_] : nullptr; }

void Session::label(metrics::HumanLabel label) {
  if (cursor_ >= items_.size()) throw ValidationError("no step left to label");
  items_[cursor_].label = label;
  labels_[items_[cursor_].key] = label;
  ++cursor_;
  advance();
}

void Session::skip() {
  if (cursor_ < items_.size()) ++cursor_;
  advance();
}

void Session::save() const {
  std::vector<metrics::AnnotationRecord> records;
  for (const auto& [key, label] : labels_) {
    records.push_back(metrics::AnnotationRecord{key.instance_id, key.path_id, key.step_index, label});
  }
  write_annotations(records, store_);
}

void Session::advance() {
  while (cursor_ < items_.size() && labels_.count(items_[cursor_].key)) ++cursor_;
}

}  // namespace tqaprm::annotate
