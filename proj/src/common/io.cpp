#include "guilt/common/io.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "guilt/common/error.hpp"

namespace guilt {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidInput("cannot write " + tmp.string());
    out << contents;
    out.flush();
    if (!out) throw InvalidInput("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<Json> read_jsonl(const std::filesystem::path& path, bool tolerate_torn_tail) {
  const std::string text = read_file(path);
  std::vector<Json> rows;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    const auto end = text.find('\n', pos);
    const bool torn = end == std::string::npos;
    const std::string_view line(text.data() + pos, (torn ? text.size() : end) - pos);
    pos = torn ? text.size() : end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    if (torn && tolerate_torn_tail) {
      // An unterminated final line is an interrupted append unless it parses cleanly.
      auto parsed = Json::parse(line, nullptr, false);
      if (parsed.is_discarded()) break;
      rows.push_back(std::move(parsed));
      break;
    }
    try {
      rows.push_back(Json::parse(line));
    } catch (const Json::parse_error& e) {
      throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

void write_jsonl_atomic(const std::filesystem::path& path, const std::vector<Json>& rows) {
  std::string out;
  for (const auto& row : rows) {
    out += canonical_dump(row);
    out += '\n';
  }
  write_file_atomic(path, out);
}

void append_line_durable(const std::filesystem::path& path, const std::string& line) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0) throw InvalidInput("cannot open " + path.string() + ": " + std::strerror(errno));
  std::string record = line;
  record += '\n';
  const auto written = ::write(fd, record.data(), record.size());
  const int saved = errno;
  ::fsync(fd);
  ::close(fd);
  if (written != static_cast<ssize_t>(record.size())) {
    throw InvalidInput("append to " + path.string() + " failed: " + std::strerror(saved));
  }
}

std::string canonical_dump(const Json& value) {
  // nlohmann::json objects are std::map backed, so keys are already sorted.
  return value.dump(-1, ' ', false, Json::error_handler_t::strict);
}

}  // namespace guilt
