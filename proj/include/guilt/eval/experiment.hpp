#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "guilt/annotation/store.hpp"
#include "guilt/corpus/corpus.hpp"
#include "guilt/eval/grid.hpp"
#include "guilt/model/checkpoint.hpp"
#include "guilt/model/train.hpp"

namespace guilt::eval {

struct Variant {
  model::Pooling pooling = model::Pooling::MEAN;
  bool pretrained = false;
  bool token_supervision = false;

  /// "CLS", "MEAN+pretrain", "MEAN+pretrain+token", ...
  std::string name() const;
  static Variant parse(const std::string& name);
  bool operator==(const Variant&) const = default;
};

/// The eight pooling x pretraining x token-supervision combinations.
std::vector<Variant> all_variants();

/// "tiny": a randomly initialized small encoder with a vocabulary learned
/// from the story bodies. Anything else is read as an encoder directory.
model::EncoderBundle build_encoder(const std::string& source, std::span<const corpus::Story> stories,
                                  std::uint64_t seed);

struct ExperimentPlan {
  std::size_t repeats = 20;
  double test_fraction = 0.15;
  std::size_t folds = 5;
  std::vector<annotation::Question> questions = {annotation::Question::ReaderPerception,
                                                 annotation::Question::AuthorBelief};
  std::vector<Variant> variants = all_variants();
  // Encoder directories (ours or a published BERT). "tiny" builds a small
  // randomly initialized encoder with a vocabulary learned from the stories.
  std::string encoder = "tiny";
  std::string pretrained_encoder;
  std::size_t max_length = 400;
  std::uint64_t seed = 0;
  std::size_t bootstrap_resamples = 10000;
  bool oversample_tails = false;
  // Training grids; empty means the reference grid. Pooling, question and
  // token supervision are overwritten per variant.
  std::vector<model::TrainConfig> grid_rating_only;
  std::vector<model::TrainConfig> grid_token;

  void validate() const;
  std::vector<model::TrainConfig> grid_for(const Variant& v, annotation::Question q) const;
};

Json to_json(const ExperimentPlan& p);
ExperimentPlan plan_from_json(const Json& j);

struct Split {
  std::vector<std::string> train;  // story ids, sorted
  std::vector<std::string> test;
  std::string hash;                // sha256 over both lists
};

/// Seeded 85/15-style split of story ids; the test side has
/// round(test_fraction * n) stories.
Split make_split(std::span<const std::string> story_ids, double test_fraction, std::uint64_t seed);
std::string split_hash(const Split& s);

struct RunResult {
  Variant variant;
  annotation::Question question = annotation::Question::ReaderPerception;
  std::size_t repeat = 0;
  std::string split_hash;
  GridSearchResult search;
  model::TrainConfig selected;
  double test_mse = 0.0;
  std::vector<std::string> test_ids;
  std::vector<double> test_predictions;
};

Json to_json(const RunResult& r);
RunResult run_result_from_json(const Json& j);

struct BaselineResult {
  annotation::Question question = annotation::Question::ReaderPerception;
  std::size_t repeat = 0;
  std::string split_hash;
  double test_mse = 0.0;
};

/// Everything the report is computed from; persisted under the output directory.
struct ExperimentRecord {
  ExperimentPlan plan;
  std::vector<Split> splits;  // per repeat
  std::vector<BaselineResult> baselines;
  std::vector<RunResult> runs;
};

using ProgressFn = std::function<void(const std::string& message)>;

/// Runs every (variant, question, repeat) cell. Each finished cell is written
/// to out_dir/runs/<key>/result.json, where key hashes everything the result
/// depends on; existing results are reused, so an interrupted run resumes.
ExperimentRecord run_experiment(const ExperimentPlan& plan, std::span<const corpus::Story> stories,
                                std::span<const annotation::AggregatedStory> aggregated,
                                const std::filesystem::path& out_dir, const ProgressFn& progress = {});

/// Reloads a finished experiment from out_dir (plan.json, splits.json, runs/).
ExperimentRecord load_experiment(const std::filesystem::path& out_dir);

struct CellSummary {
  std::string row;  // variant name or "Mean Baseline"
  annotation::Question question = annotation::Question::ReaderPerception;
  std::vector<double> mse;  // by repeat
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation
  double ci_lo = 0.0;
  double ci_hi = 0.0;
};

struct PairwiseTest {
  annotation::Question question = annotation::Question::ReaderPerception;
  std::string a;
  std::string b;
  std::size_t n = 0;
  double w_plus = 0.0;
  double p = 1.0;  // NaN when every paired difference is zero
  bool exact = true;
};

struct EvalReport {
  std::vector<CellSummary> cells;
  std::vector<PairwiseTest> tests;
  Json metadata;
};

/// Pure function of the record: regeneration is bit-identical.
EvalReport make_report(const ExperimentRecord& record);

std::string table_csv(const EvalReport& r);
std::string intervals_csv(const EvalReport& r);
std::string significance_csv(const EvalReport& r);

/// Writes table.csv, intervals.csv, significance.csv and report.json.
void write_report(const EvalReport& r, const std::filesystem::path& dir);

}  // namespace guilt::eval
