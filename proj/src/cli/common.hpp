#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "guilt/annotation/store.hpp"
#include "guilt/cli/cli.hpp"
#include "guilt/corpus/corpus.hpp"
#include "guilt/stats/agreement.hpp"
#include "job.hpp"

namespace guilt::cli {

struct Globals {
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  bool dry_run = false;
  std::vector<std::string> argv;
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;
};

/// Leaf subcommands and the actions that run once parsing has finished.
class Registry {
 public:
  explicit Registry(Globals& globals) : globals_(globals) {}

  void add(CLI::App* leaf, std::function<int()> action) { leaves_.emplace_back(leaf, std::move(action)); }
  Globals& globals() { return globals_; }
  const std::vector<std::pair<CLI::App*, std::function<int()>>>& leaves() const { return leaves_; }

  /// A job for the leaf, with the resolved flag values as its config.
  std::unique_ptr<Job> job(const CLI::App* leaf) const;

 private:
  Globals& globals_;
  std::vector<std::pair<CLI::App*, std::function<int()>>> leaves_;
};

/// Flag values after defaults and config file, keyed by long name.
Json resolved_config(const CLI::App* leaf);

void add_data_commands(CLI::App& app, Registry& registry);
void add_stats_commands(CLI::App& app, Registry& registry);
void add_model_commands(CLI::App& app, Registry& registry);

// ---- shared helpers ---------------------------------------------------------

/// Shortest round-trip decimal form.
std::string num(double v);

/// Accepts reader_perception / RP etc.
annotation::Question guilt_question(const std::string& s);

std::string write_csv(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::size_t column(const std::string& name) const;
};

/// Plain comma-separated values without quoting.
CsvTable read_csv(const std::string& text);

/// Rebuilds word statistics from a word_stats.csv written by `stats words`.
std::vector<stats::WordStats> read_word_stats(const std::string& text);

/// Bar chart with one bar per value.
std::string svg_bars(const std::string& title, const std::vector<std::string>& labels, const std::vector<double>& values);

/// Scatter plot; points with a nonempty label get a text tag.
std::string svg_scatter(const std::string& title, const std::string& x_label, const std::string& y_label,
                        const std::vector<double>& x, const std::vector<double>& y,
                        const std::vector<std::string>& labels, bool log_axes);

}  // namespace guilt::cli
