#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tqaprm/json_io.hpp"

namespace tqaprm::data {

enum class TaskKind { FreeForm, Binary, Ternary };

std::string_view to_string(TaskKind kind) noexcept;
/// Accepts `freeform|binary|ternary` (case-insensitive).
std::optional<TaskKind> parse_task_kind(std::string_view text) noexcept;

/// Header plus data rows, all plain-text cells.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// Throws ValidationError if a row's arity differs from the header's.
void validate(const Table& table);

struct TQAInstance {
  std::string id;
  Table table;
  std::string question;
  std::string gold;
  TaskKind kind = TaskKind::FreeForm;
};

/// Loads a line-delimited dataset. Every record must carry `id`, `table`
/// (first list is the header), `question`, `answer` and `kind`; the record
/// kind must equal `kind`, and for label tasks the gold must be an admitted
/// label. Errors name the offending line.
std::vector<TQAInstance> load_dataset(const std::filesystem::path& path, TaskKind kind);

TQAInstance instance_from_json(const json& record, std::size_t line = 0);
json to_json(const TQAInstance& instance);

/// How non-ASCII characters are written by serialize_table.
enum class NonAscii {
  Escaped,   ///< `\uXXXX`, as in the reference prompts
  Verbatim,  ///< raw UTF-8
};

/// Renders the table as a Python-style list of lists of quoted cells,
/// header first: `[['A', 'B'], ['1', '2']]`.
std::string serialize_table(const Table& table, NonAscii style = NonAscii::Escaped);

/// "Table is: ...\nQuestion is: ..." block embedded in every prompt.
std::string render_problem(const TQAInstance& instance);

/// Sentinel produced for labels outside a task's admitted set; never matches.
inline constexpr std::string_view kInvalidLabel = "<invalid>";

/// Canonical answer form used for exact match.
///
/// - surrounding whitespace and terminal punctuation (. , ; : ! ?) removed,
///   internal whitespace runs collapsed to one space
/// - ASCII case folded
/// - numbers: thousands separators and a leading '+' dropped, trailing
///   fractional zeros removed ("4.0" -> "4", "1,250.50" -> "1250.5")
/// - Binary: true/false -> "True"/"False"; Ternary additionally
///   "not enough info"; anything else -> kInvalidLabel
std::string normalize_answer(std::string_view text, TaskKind kind);

bool exact_match(std::string_view pred, std::string_view gold, TaskKind kind);

/// exact_match for a possibly absent prediction; absent never matches.
bool answer_matches(const std::optional<std::string>& pred, std::string_view gold, TaskKind kind);

}  // namespace tqaprm::data
