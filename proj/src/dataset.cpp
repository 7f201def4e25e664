#include "tqaprm/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <unordered_set>

#include "tqaprm/error.hpp"

namespace tqaprm::data {

namespace {

std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_terminal_punct(char c) {
  return c == '.' || c == ',' || c == ';' || c == ':' || c == '!' || c == '?';
}

// Decodes one UTF-8 code point starting at s[i]; returns the number of bytes
// consumed, or 0 for an invalid sequence.
std::size_t decode_utf8(std::string_view s, std::size_t i, std::uint32_t& cp) {
  auto b0 = static_cast<unsigned char>(s[i]);
  std::size_t len = 0;
  if (b0 < 0x80) { cp = b0; return 1; }
  if ((b0 & 0xE0) == 0xC0) { cp = b0 & 0x1F; len = 2; }
  else if ((b0 & 0xF0) == 0xE0) { cp = b0 & 0x0F; len = 3; }
  else if ((b0 & 0xF8) == 0xF0) { cp = b0 & 0x07; len = 4; }
  else return 0;
  if (i + len > s.size()) return 0;
  for (std::size_t k = 1; k < len; ++k) {
    auto b = static_cast<unsigned char>(s[i + k]);
    if ((b & 0xC0) != 0x80) return 0;
    cp = (cp << 6) | (b & 0x3F);
  }
  return len;
}

void append_hex(std::string& out, std::uint32_t value, int digits) {
  static constexpr char kHex[] = "0123456789abcdef";
  for (int shift = (digits - 1) * 4; shift >= 0; shift -= 4) out += kHex[(value >> shift) & 0xF];
}

// Python str.__repr__ quoting, restricted to the cases that occur in tables.
std::string quote_cell(std::string_view cell, NonAscii style) {
  const bool has_single = cell.find('\'') != std::string_view::npos;
  const bool has_double = cell.find('"') != std::string_view::npos;
  const char quote = (has_single && !has_double) ? '"' : '\'';
  std::string out;
  out.reserve(cell.size() + 2);
  out += quote;
  for (std::size_t i = 0; i < cell.size();) {
    const char c = cell[i];
    auto uc = static_cast<unsigned char>(c);
    if (uc < 0x80) {
      if (c == quote || c == '\\') { out += '\\'; out += c; }
      else if (c == '\n') out += "\\n";
      else if (c == '\r') out += "\\r";
      else if (c == '\t') out += "\\t";
      else if (uc < 0x20 || uc == 0x7F) { out += "\\x"; append_hex(out, uc, 2); }
      else out += c;
      ++i;
      continue;
    }
    std::uint32_t cp = 0;
    const std::size_t len = decode_utf8(cell, i, cp);
    if (len == 0) {
      out += "\\x";
      append_hex(out, uc, 2);
      ++i;
      continue;
    }
    if (cp < 0xA0) {
      out += "\\x";
      append_hex(out, cp, 2);
    } else if (style == NonAscii::Verbatim) {
      out.append(cell.substr(i, len));
    } else if (cp <= 0xFFFF) {
      out += "\\u";
      append_hex(out, cp, 4);
    } else {
      const std::uint32_t v = cp - 0x10000;
      out += "\\u";
      append_hex(out, 0xD800 + (v >> 10), 4);
      out += "\\u";
      append_hex(out, 0xDC00 + (v & 0x3FF), 4);
    }
    i += len;
  }
  out += quote;
  return out;
}

void append_row(std::string& out, const std::vector<std::string>& row, NonAscii style) {
  out += '[';
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (i) out += ", ";
    out += quote_cell(row[i], style);
  }
  out += ']';
}

// "1,234.50" -> "1234.5"; returns nullopt when `s` is not a plain number.
std::optional<std::string> canonical_number(std::string_view s) {
  std::size_t i = 0;
  bool negative = false;
  if (i < s.size() && (s[i] == '+' || s[i] == '-')) {
    negative = s[i] == '-';
    ++i;
  }
  std::string integer;
  std::size_t group = 0;
  bool grouped = false;
  bool first_group = true;
  for (; i < s.size() && s[i] != '.'; ++i) {
    const char c = s[i];
    if (std::isdigit(static_cast<unsigned char>(c))) {
      integer += c;
      ++group;
    } else if (c == ',') {
      if (group == 0 || (first_group && group > 3) || (!first_group && group != 3)) return std::nullopt;
      grouped = true;
      first_group = false;
      group = 0;
    } else {
      return std::nullopt;
    }
  }
  if (integer.empty()) return std::nullopt;
  if (grouped && group != 3) return std::nullopt;
  std::string fraction;
  if (i < s.size()) {
    ++i;  // '.'
    for (; i < s.size(); ++i) {
      if (!std::isdigit(static_cast<unsigned char>(s[i]))) return std::nullopt;
      fraction += s[i];
    }
  }
  while (!fraction.empty() && fraction.back() == '0') fraction.pop_back();
  std::string out;
  if (negative && (integer.find_first_not_of('0') != std::string::npos || !fraction.empty())) out += '-';
  out += integer;
  if (!fraction.empty()) {
    out += '.';
    out += fraction;
  }
  return out;
}

std::string basic_normalize(std::string_view text) {
  std::string collapsed;
  bool pending_space = false;
  for (char c : text) {
    if (is_space(c)) {
      pending_space = !collapsed.empty();
      continue;
    }
    if (pending_space) collapsed += ' ';
    pending_space = false;
    collapsed += c;
  }
  while (!collapsed.empty() && (is_terminal_punct(collapsed.back()) || is_space(collapsed.back()))) {
    collapsed.pop_back();
  }
  return lower_ascii(collapsed);
}

const std::string& string_field(const json& record, const char* key, std::size_t line) {
  auto it = record.find(key);
  if (it == record.end()) throw ParseError(line, std::string("missing field \"") + key + "\"");
  if (!it->is_string()) throw ParseError(line, std::string("field \"") + key + "\" must be a string");
  return it->get_ref<const std::string&>();
}

}  // namespace

std::string_view to_string(TaskKind kind) noexcept {
  switch (kind) {
    case TaskKind::FreeForm: return "freeform";
    case TaskKind::Binary: return "binary";
    case TaskKind::Ternary: return "ternary";
  }
  return "freeform";
}

std::optional<TaskKind> parse_task_kind(std::string_view text) noexcept {
  const auto t = lower_ascii(text);
  if (t == "freeform") return TaskKind::FreeForm;
  if (t == "binary") return TaskKind::Binary;
  if (t == "ternary") return TaskKind::Ternary;
  return std::nullopt;
}

void validate(const Table& table) {
  if (table.header.empty()) throw ValidationError("table header is empty");
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    if (table.rows[r].size() != table.header.size()) {
      throw ValidationError("table row " + std::to_string(r + 1) + " has " +
                            std::to_string(table.rows[r].size()) + " cells, header has " +
                            std::to_string(table.header.size()));
    }
  }
}

TQAInstance instance_from_json(const json& record, std::size_t line) {
  if (!record.is_object()) throw ParseError(line, "record is not an object");
  TQAInstance inst;
  inst.id = string_field(record, "id", line);
  inst.question = string_field(record, "question", line);
  inst.gold = string_field(record, "answer", line);
  const auto& kind_text = string_field(record, "kind", line);
  auto kind = parse_task_kind(kind_text);
  if (!kind) throw ParseError(line, "unknown kind \"" + kind_text + "\"");
  inst.kind = *kind;

  auto table_it = record.find("table");
  if (table_it == record.end()) throw ParseError(line, "missing field \"table\"");
  if (!table_it->is_array() || table_it->empty()) {
    throw ParseError(line, "field \"table\" must be a non-empty list of lists");
  }
  bool first = true;
  for (const auto& row_json : *table_it) {
    if (!row_json.is_array()) throw ParseError(line, "table rows must be lists");
    std::vector<std::string> row;
    row.reserve(row_json.size());
    for (const auto& cell : row_json) {
      if (!cell.is_string()) throw ParseError(line, "table cells must be strings");
      row.push_back(cell.get<std::string>());
    }
    if (first) inst.table.header = std::move(row);
    else inst.table.rows.push_back(std::move(row));
    first = false;
  }
  try {
    validate(inst.table);
  } catch (const ValidationError& e) {
    throw ValidationError("line " + std::to_string(line) + ": " + e.what());
  }
  if (basic_normalize(inst.gold).empty()) {
    throw ValidationError("line " + std::to_string(line) + ": empty answer");
  }
  return inst;
}

json to_json(const TQAInstance& instance) {
  json table = json::array();
  table.push_back(instance.table.header);
  for (const auto& row : instance.table.rows) table.push_back(row);
  return json{{"id", instance.id},
              {"table", std::move(table)},
              {"question", instance.question},
              {"answer", instance.gold},
              {"kind", std::string(to_string(instance.kind))}};
}

std::vector<TQAInstance> load_dataset(const std::filesystem::path& path, TaskKind kind) {
  std::vector<TQAInstance> out;
  std::unordered_set<std::string> ids;
  for_each_jsonl(path, [&](std::size_t line, const json& record) {
    auto inst = instance_from_json(record, line);
    const auto where = "line " + std::to_string(line) + ": ";
    if (inst.kind != kind) {
      throw ValidationError(where + "record kind " + std::string(to_string(inst.kind)) +
                            " does not match dataset kind " + std::string(to_string(kind)));
    }
    if (kind != TaskKind::FreeForm && normalize_answer(inst.gold, kind) == kInvalidLabel) {
      throw ValidationError(where + "answer \"" + inst.gold + "\" is not a valid " +
                            std::string(to_string(kind)) + " label");
    }
    if (!ids.insert(inst.id).second) throw ValidationError(where + "duplicate id \"" + inst.id + "\"");
    out.push_back(std::move(inst));
  });
  return out;
}

std::string serialize_table(const Table& table, NonAscii style) {
  std::string out = "[";
  append_row(out, table.header, style);
  for (const auto& row : table.rows) {
    out += ", ";
    append_row(out, row, style);
  }
  out += ']';
  return out;
}

std::string render_problem(const TQAInstance& instance) {
  return "Table is: " + serialize_table(instance.table) + "\nQuestion is: " + instance.question;
}

std::string normalize_answer(std::string_view text, TaskKind kind) {
  std::string base = basic_normalize(text);
  switch (kind) {
    case TaskKind::FreeForm:
      if (auto num = canonical_number(base)) return *num;
      return base;
    case TaskKind::Binary:
    case TaskKind::Ternary:
      if (base == "true") return "True";
      if (base == "false") return "False";
      if (kind == TaskKind::Ternary && base == "not enough info") return "not enough info";
      return std::string(kInvalidLabel);
  }
  return base;
}

bool exact_match(std::string_view pred, std::string_view gold, TaskKind kind) {
  const auto p = normalize_answer(pred, kind);
  if (p == kInvalidLabel) return false;
  return p == normalize_answer(gold, kind);
}

bool answer_matches(const std::optional<std::string>& pred, std::string_view gold, TaskKind kind) {
  return pred.has_value() && exact_match(std::string_view(*pred), gold, kind);
}

}  // namespace tqaprm::data
