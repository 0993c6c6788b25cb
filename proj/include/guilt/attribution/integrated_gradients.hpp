#pragma once

#include <cstddef>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "guilt/corpus/corpus.hpp"
#include "guilt/model/model.hpp"
#include "guilt/stats/agreement.hpp"

namespace guilt::attribution {

using model::Matrix;

/// A scalar function of an input matrix with its gradient.
class ScalarFunction {
 public:
  virtual ~ScalarFunction() = default;
  virtual double value(const Matrix& x) const = 0;
  /// Returns F(x) and writes dF/dx into `grad`.
  virtual double value_and_gradient(const Matrix& x, Matrix& grad) const = 0;
};

struct PathAttribution {
  Matrix per_dimension;           // (x - x') * mean gradient along the path
  std::vector<double> per_row;    // per_dimension summed over columns
  double f_input = 0.0;
  double f_baseline = 0.0;
  double completeness_delta = 0.0;  // |sum attributions - (F(x) - F(x'))|
  std::size_t steps = 0;
};

/// Integrated Gradients with the midpoint rule: gradients are averaged at
/// alpha = (k + 1/2) / steps, k = 0..steps-1. Throws InvalidInput for
/// steps == 0, mismatched shapes, or a non-finite value or gradient.
PathAttribution integrated_gradients(const ScalarFunction& f, const Matrix& input, const Matrix& baseline,
                                     std::size_t steps);

/// The rating output of a task model as a function of its input embeddings.
class RatingFunction : public ScalarFunction {
 public:
  explicit RatingFunction(const model::GuiltModel& m) : model_(m) {}
  double value(const Matrix& x) const override;
  double value_and_gradient(const Matrix& x, Matrix& grad) const override;

 private:
  const model::GuiltModel& model_;
};

struct AttributionResult {
  std::string story_id;
  std::vector<double> scores;  // aligned with the story's word tokens; truncated tail omitted
  std::size_t truncated_words = 0;
  double completeness_delta = 0.0;
  double f_input = 0.0;
  double f_baseline = 0.0;
  std::size_t steps = 0;
};

Json to_json(const AttributionResult& r);
AttributionResult attribution_from_json(const Json& j);

/// Attributes the rating to word tokens: the baseline replaces every subword
/// with the padding token and keeps the start and end markers; subword
/// attributions are summed per word.
AttributionResult attribute_story(const model::GuiltModel& m, const corpus::Story& story, std::size_t steps = 64);

struct WordImportance {
  std::string word;
  double mean_importance = 0.0;
  std::size_t frequency = 0;  // occurrences across the attributed stories
  bool top_highlighted = false;
};

/// Mean signed importance per lowercased word over every occurrence in the
/// results. Punctuation and stopwords are dropped; words in `top_highlighted`
/// are flagged. Sorted by word.
std::vector<WordImportance> aggregate_importance(std::span<const AttributionResult> results,
                                                 std::span<const corpus::Story> stories,
                                                 const std::set<std::string>& stopwords,
                                                 const std::set<std::string>& top_highlighted = {});

struct HighlightComparison {
  std::size_t words = 0;
  double pearson_r = 0.0;           // |importance| vs highlight proportion
  std::size_t above_chance = 0;
  double welch_t = 0.0;
  double welch_p = 1.0;             // one-sided: above-chance words have higher importance
  double chance_rate = 0.0;
};

/// Compares importance with highlighting over the shared vocabulary. Throws
/// InvalidInput when fewer than 3 words are shared.
HighlightComparison compare_to_highlights(std::span<const WordImportance> importance,
                                          std::span<const stats::WordStats> word_stats, double chance_rate);

}  // namespace guilt::attribution
