#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace tqaprm {

using json = nlohmann::json;

/// Calls `fn(line_number, record)` for every non-blank line of a
/// line-delimited JSON file. Lines that fail to parse raise ParseError.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(std::size_t, const json&)>& fn);

std::string read_file(const std::filesystem::path& path);

/// Writes via a sibling temp file and rename, so readers never observe a
/// partially written artifact. On failure the temp file is removed.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// One compact JSON document per line, '\n'-terminated.
std::string to_jsonl(const std::vector<json>& records);

std::string sha256_hex(std::string_view data);
std::string file_sha256(const std::filesystem::path& path);

}  // namespace tqaprm
