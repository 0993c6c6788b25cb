#include "job.hpp"

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <ctime>

#include "guilt/cli/cli.hpp"
#include "guilt/common/hash.hpp"

namespace guilt::cli {
namespace {

bool is_bookkeeping(const fs::path& rel) {
  const std::string first = rel.begin()->string();
  return first.starts_with(".staging-") || first.starts_with("manifest.");
}

// The manifest that lists `file` among its outputs: one next to it, or for a
// directory written in place, one inside it.
Json upstream_manifest(const fs::path& file) {
  std::vector<std::pair<fs::path, std::string>> candidates;  // (directory, output path to match)
  candidates.emplace_back(file.parent_path().empty() ? fs::path(".") : file.parent_path(), file.filename().string());
  if (fs::is_directory(file)) candidates.emplace_back(file, ".");
  for (const auto& [dir, wanted] : candidates) {
    std::error_code ec;
    std::vector<fs::path> manifests;
    for (const auto& entry : fs::directory_iterator(dir, ec)) {
      const std::string name = entry.path().filename().string();
      if (entry.is_regular_file() && name.starts_with("manifest.") && name.ends_with(".json")) {
        manifests.push_back(entry.path());
      }
    }
    std::sort(manifests.begin(), manifests.end());
    for (const auto& m : manifests) {
      Json j;
      try {
        j = Json::parse(read_file(m));
      } catch (const std::exception&) {
        continue;
      }
      if (!j.contains("outputs")) continue;
      for (const auto& out : j["outputs"]) {
        if (out.value("path", "") == wanted) {
          return Json{{"path", m.filename().string()},
                      {"sha256", sha256_file(m)},
                      {"command", j.value("command", "")}};
        }
      }
    }
  }
  return nullptr;
}

}  // namespace

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string content_hash(const fs::path& path) {
  if (fs::is_regular_file(path)) return sha256_file(path);
  std::vector<std::pair<std::string, std::string>> files;
  for (const auto& entry : fs::recursive_directory_iterator(path)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), path);
    if (is_bookkeeping(rel)) continue;
    files.emplace_back(rel.generic_string(), sha256_file(entry.path()));
  }
  std::sort(files.begin(), files.end());
  std::string listing;
  for (const auto& [rel, hash] : files) listing += rel + " " + hash + "\n";
  return sha256_hex(listing);
}

Job::Job(std::string command, std::vector<std::string> argv, fs::path out_dir, bool dry_run)
    : command_(std::move(command)),
      argv_(std::move(argv)),
      out_dir_(std::move(out_dir)),
      dry_run_(dry_run),
      started_at_(utc_now()) {}

Job::~Job() {
  if (committed_ || dry_run_) return;
  std::error_code ec;
  if (!staging_.empty()) fs::remove_all(staging_, ec);
  if (created_out_dir_ && !in_place_ && fs::is_empty(out_dir_, ec)) fs::remove(out_dir_, ec);
}

std::string Job::manifest_name() const {
  std::string name = command_;
  std::replace(name.begin(), name.end(), ' ', '-');
  return "manifest." + name + ".json";
}

fs::path Job::input(const std::string& path) {
  const fs::path p(path);
  if (path.empty() || !fs::exists(p)) throw MissingInput("missing input: " + path);
  inputs_.push_back(Json{{"path", path}, {"sha256", content_hash(p)}, {"upstream_manifest", upstream_manifest(p)}});
  return p;
}

void Job::ensure_staging() {
  if (!staging_.empty()) return;
  if (!fs::exists(out_dir_)) {
    fs::create_directories(out_dir_);
    created_out_dir_ = true;
  }
  staging_ = out_dir_ / (".staging-" + std::to_string(::getpid()));
  fs::remove_all(staging_);
  fs::create_directories(staging_);
}

fs::path Job::output(const std::string& name) {
  const fs::path rel = fs::path(name).lexically_normal();
  if (name.empty() || rel.is_absolute() || rel.begin()->string() == ".." || is_bookkeeping(rel)) {
    throw UsageError("output '" + name + "' must be a relative path inside the output directory");
  }
  outputs_.push_back(rel.generic_string());
  if (dry_run_) return out_dir_ / rel;
  ensure_staging();
  const fs::path staged = staging_ / rel;
  if (staged.has_parent_path()) fs::create_directories(staged.parent_path());
  return staged;
}

fs::path Job::output_dir_in_place() {
  in_place_ = true;
  if (!dry_run_ && !fs::exists(out_dir_)) {
    fs::create_directories(out_dir_);
    created_out_dir_ = true;
  }
  return out_dir_;
}

fs::path Job::commit() {
  const fs::path manifest_path = out_dir_ / manifest_name();
  if (dry_run_) return manifest_path;
  Json outputs = Json::array();
  for (const auto& rel : outputs_) {
    const fs::path staged = staging_ / rel;
    if (!fs::exists(staged)) throw std::runtime_error("command did not produce " + rel);
    const fs::path target = out_dir_ / rel;
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::remove_all(target);
    fs::rename(staged, target);
    outputs.push_back(Json{{"path", rel}, {"sha256", content_hash(target)}});
  }
  if (in_place_) outputs.push_back(Json{{"path", "."}, {"sha256", content_hash(out_dir_)}});
  if (!staging_.empty()) fs::remove_all(staging_);
  const Json manifest = {{"command", command_},
                         {"argv", argv_},
                         {"config", config_},
                         {"seed", seed_},
                         {"inputs", inputs_},
                         {"outputs", outputs},
                         {"version", std::string(kVersion)},
                         {"started_at", started_at_},
                         {"finished_at", utc_now()}};
  write_file_atomic(manifest_path, manifest.dump(2) + "\n");
  committed_ = true;
  return manifest_path;
}

}  // namespace guilt::cli
