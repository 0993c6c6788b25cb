#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

namespace guilt {

using Json = nlohmann::json;

/// Reads a whole file. Throws InvalidInput when the file cannot be opened.
std::string read_file(const std::filesystem::path& path);

/// Writes via a sibling temporary file and rename, so readers never observe a
/// partially written artifact.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

/// Parses one JSON object per line. Blank lines are skipped. A final line
/// without a trailing newline is treated as a torn append and ignored when
/// `tolerate_torn_tail` is set.
std::vector<Json> read_jsonl(const std::filesystem::path& path, bool tolerate_torn_tail = false);

void write_jsonl_atomic(const std::filesystem::path& path, const std::vector<Json>& rows);

/// Appends one line with a single write(2) on an O_APPEND descriptor, then fsyncs.
void append_line_durable(const std::filesystem::path& path, const std::string& line);

/// Canonical single-line serialization (sorted keys, no whitespace).
std::string canonical_dump(const Json& value);

}  // namespace guilt
