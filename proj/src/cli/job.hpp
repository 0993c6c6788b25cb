#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "guilt/common/io.hpp"

namespace guilt::cli {

namespace fs = std::filesystem;

/// Bad flag values that CLI11 cannot check on its own.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MissingInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Hash of a file, or of a directory as the sorted list of (relative path, file hash).
std::string content_hash(const fs::path& path);

/// One artifact-producing command. Inputs are checked and hashed before
/// anything is written. Outputs are staged in a hidden directory inside the
/// output directory and moved into place by commit(), which also writes the
/// manifest. Without commit() the staging directory is removed, along with
/// the output directory itself when this job created it.
class Job {
 public:
  Job(std::string command, std::vector<std::string> argv, fs::path out_dir, bool dry_run);
  ~Job();
  Job(const Job&) = delete;
  Job& operator=(const Job&) = delete;

  /// Throws MissingInput when absent. Records the hash and the manifest that
  /// produced the file, when one sits next to it.
  fs::path input(const std::string& path);

  /// Staging location for an output named relative to the output directory.
  /// Absolute names and names leaving the directory are usage errors.
  fs::path output(const std::string& name);

  /// The output directory itself, for commands that write in place so that
  /// an interrupted run can resume. Recorded as one directory output.
  fs::path output_dir_in_place();

  void set_config(Json config) { config_ = std::move(config); }
  void set_seed(std::uint64_t seed) { seed_ = seed; }

  bool dry_run() const { return dry_run_; }
  const fs::path& out_dir() const { return out_dir_; }
  std::string manifest_name() const;

  /// Moves staged outputs into place and writes the manifest. Returns its path.
  fs::path commit();

 private:
  void ensure_staging();

  std::string command_;
  std::vector<std::string> argv_;
  fs::path out_dir_;
  bool dry_run_ = false;
  bool created_out_dir_ = false;
  bool committed_ = false;
  bool in_place_ = false;
  fs::path staging_;
  std::vector<std::string> outputs_;
  Json inputs_ = Json::array();
  Json config_ = Json::object();
  std::uint64_t seed_ = 0;
  std::string started_at_;
};

std::string utc_now();

}  // namespace guilt::cli
