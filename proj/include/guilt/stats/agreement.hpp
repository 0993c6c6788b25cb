#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "guilt/annotation/store.hpp"
#include "guilt/common/io.hpp"
#include "guilt/corpus/corpus.hpp"
#include "guilt/stats/tests.hpp"

namespace guilt::stats {

using annotation::Question;

// ---- rating agreement -------------------------------------------------------

/// Mean squared deviation of a story's ratings from their own mean. nullopt
/// for fewer than two ratings.
std::optional<double> story_mse(std::span<const double> ratings);

/// Per-story slider values for one question (doesn't-apply responses dropped).
using StoryRatings = std::vector<std::vector<double>>;

StoryRatings collect_ratings(std::span<const corpus::Story> stories, std::span<const annotation::Annotation> annotations,
                             Question question);

/// Per-story MSE values for stories with at least two ratings.
std::vector<double> story_mses(const StoryRatings& ratings);
double mean_story_mse(const StoryRatings& ratings);

/// Permutes the pooled ratings across stories, preserving each story's count.
StoryRatings shuffle_ratings(const StoryRatings& ratings, std::uint64_t seed);

/// Mean story MSE after each of `reps` independent shuffles.
std::vector<double> shuffled_mse_baseline(const StoryRatings& ratings, std::uint64_t seed, std::size_t reps);

struct MseAgreement {
  double actual_mean_mse = 0.0;
  double shuffled_mean_mse = 0.0;
  WelchResult welch;  // per-story MSEs, shuffled vs actual
};

MseAgreement mse_agreement_test(const StoryRatings& ratings, std::uint64_t seed);

// ---- highlight agreement ----------------------------------------------------

enum class UnitMode { Token, Character };

/// One story's highlight indicators for one question: a row per contributing
/// annotation, a column per unit (word token or character).
struct StoryHighlights {
  std::string story_id;
  std::size_t n_units = 0;
  std::vector<std::vector<std::uint8_t>> rows;
};

std::vector<StoryHighlights> collect_highlights(std::span<const corpus::Story> stories,
                                                std::span<const annotation::Annotation> annotations, Question question,
                                                UnitMode mode = UnitMode::Token);

/// Nominal Krippendorff's alpha from per-unit value counts (one vector of
/// category counts per unit; units with fewer than two values are unpairable
/// and ignored). Throws DegenerateStatistic when expected disagreement is zero.
double krippendorff_alpha_nominal(std::span<const std::vector<std::size_t>> unit_value_counts);

/// Binary alpha treating every (story, unit) as a unit and annotations as coders.
double krippendorff_alpha(std::span<const StoryHighlights> highlights);

/// Fraction of (annotation, unit) pairs marked highlighted.
double chance_highlight_rate(std::span<const StoryHighlights> highlights);

/// Permutes each annotation's row within its story (count of highlighted units preserved).
std::vector<StoryHighlights> shuffle_highlights(std::span<const StoryHighlights> highlights, std::uint64_t seed);

struct MajorityAgreement {
  double actual_rate = 0.0;    // share of units highlighted by at least half the annotators
  double shuffled_rate = 0.0;
  WelchResult welch;           // per-unit indicators, actual vs shuffled
};

MajorityAgreement majority_agreement_test(std::span<const StoryHighlights> highlights, std::uint64_t seed);

struct HighlightLengthSummary {
  std::size_t count = 0;
  std::size_t min_chars = 0;
  std::size_t max_chars = 0;
  double median_chars = 0.0;
  double share_under_200 = 0.0;
};

HighlightLengthSummary highlight_lengths(std::span<const annotation::Annotation> annotations, Question question);

/// Histogram of slider values on [0,1].
std::vector<std::size_t> rating_histogram(const StoryRatings& ratings, std::size_t bins);

// ---- word level -------------------------------------------------------------

struct WordStats {
  std::string word;
  std::size_t corpus_frequency = 0;  // occurrences in story text
  std::size_t frequency = 0;         // (annotation, occurrence) pairs, the proportion denominator
  std::size_t highlight_count = 0;
  double proportion = 0.0;
  std::map<Question, std::size_t> frequency_by_question;
  std::map<Question, std::size_t> highlight_by_question;

  double proportion_for(Question q) const;
};

std::set<std::string> load_stopwords(const std::filesystem::path& path);
/// The bundled English stopword list.
std::set<std::string> default_stopwords();

/// Word statistics over both guilt questions, punctuation and stopwords
/// removed, sorted by word.
std::vector<WordStats> word_stats(std::span<const corpus::Story> stories,
                                  std::span<const annotation::Annotation> annotations,
                                  const std::set<std::string>& stopwords);

std::vector<WordStats> filter_min_frequency(std::span<const WordStats> words, std::size_t min_freq);

/// Top-k words by highlight count (ties broken by word).
std::vector<WordStats> most_highlighted(std::span<const WordStats> words, std::size_t k);

struct QuestionDifference {
  std::string word;
  double reader_perception = 0.0;
  double author_belief = 0.0;
  double difference = 0.0;  // author_belief - reader_perception
};

/// Words ordered by |AB proportion - RP proportion|, largest first.
std::vector<QuestionDifference> question_differences(std::span<const WordStats> words, std::size_t k);

/// Pearson r between highlight counts and frequencies.
double highlight_frequency_correlation(std::span<const WordStats> words);

// ---- report -----------------------------------------------------------------

struct QuestionAgreement {
  double mean_story_mse = 0.0;
  std::size_t stories_with_two_ratings = 0;
  double shuffled_mean_mse = 0.0;
  WelchResult welch;
  std::optional<double> krippendorff_alpha;
  double chance_rate = 0.0;
  MajorityAgreement majority;
};

struct AgreementReport {
  std::map<Question, QuestionAgreement> questions;
  double chance_rate = 0.0;  // pooled over both guilt questions
  std::uint64_t seed = 0;
  std::size_t shuffle_reps = 0;
  UnitMode unit_mode = UnitMode::Token;
};

AgreementReport agreement_report(std::span<const corpus::Story> stories,
                                 std::span<const annotation::Annotation> annotations, std::uint64_t seed,
                                 std::size_t shuffle_reps, UnitMode mode = UnitMode::Token);

Json to_json(const AgreementReport& report);
Json to_json(const WelchResult& r);

}  // namespace guilt::stats
