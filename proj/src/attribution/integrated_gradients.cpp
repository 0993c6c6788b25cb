#include "guilt/attribution/integrated_gradients.hpp"

#include <cmath>
#include <map>

#include "guilt/common/error.hpp"
#include "guilt/stats/tests.hpp"

namespace guilt::attribution {

PathAttribution integrated_gradients(const ScalarFunction& f, const Matrix& input, const Matrix& baseline,
                                     std::size_t steps) {
  if (steps == 0) throw InvalidInput("integrated gradients needs at least one step");
  if (input.rows() != baseline.rows() || input.cols() != baseline.cols()) {
    throw InvalidInput("input and baseline shapes differ");
  }
  const Matrix diff = input - baseline;
  Matrix grad_sum = Matrix::Zero(input.rows(), input.cols());
  Matrix grad(input.rows(), input.cols());
  for (std::size_t k = 0; k < steps; ++k) {
    const double alpha = (static_cast<double>(k) + 0.5) / static_cast<double>(steps);
    const double v = f.value_and_gradient(baseline + alpha * diff, grad);
    if (!std::isfinite(v) || !grad.allFinite()) throw InvalidInput("model output is not differentiable along the path");
    grad_sum += grad;
  }
  PathAttribution out;
  out.steps = steps;
  out.per_dimension = diff.array() * (grad_sum / static_cast<double>(steps)).array();
  out.per_row.resize(static_cast<std::size_t>(input.rows()));
  for (Eigen::Index r = 0; r < input.rows(); ++r) out.per_row[static_cast<std::size_t>(r)] = out.per_dimension.row(r).sum();
  out.f_input = f.value(input);
  out.f_baseline = f.value(baseline);
  if (!std::isfinite(out.f_input) || !std::isfinite(out.f_baseline)) {
    throw InvalidInput("model output is not finite at the path ends");
  }
  out.completeness_delta = std::abs(out.per_dimension.sum() - (out.f_input - out.f_baseline));
  return out;
}

double RatingFunction::value(const Matrix& x) const { return model_.forward_embeds(x, false).rating; }

double RatingFunction::value_and_gradient(const Matrix& x, Matrix& grad) const {
  const auto pass = model_.forward_embeds(x, true);
  grad = model_.backward(pass, 1.0, model::Vector::Zero(x.rows()), nullptr);
  return pass.rating;
}

Json to_json(const AttributionResult& r) {
  return Json{{"story_id", r.story_id},         {"scores", r.scores},   {"truncated_words", r.truncated_words},
              {"completeness_delta", r.completeness_delta}, {"f_input", r.f_input}, {"f_baseline", r.f_baseline},
              {"steps", r.steps}};
}

AttributionResult attribution_from_json(const Json& j) {
  try {
    AttributionResult r;
    r.story_id = j.at("story_id").get<std::string>();
    r.scores = j.at("scores").get<std::vector<double>>();
    r.truncated_words = j.value("truncated_words", std::size_t{0});
    r.completeness_delta = j.at("completeness_delta").get<double>();
    r.f_input = j.value("f_input", 0.0);
    r.f_baseline = j.value("f_baseline", 0.0);
    r.steps = j.at("steps").get<std::size_t>();
    return r;
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("bad attribution record: ") + e.what());
  }
}

AttributionResult attribute_story(const model::GuiltModel& m, const corpus::Story& story, std::size_t steps) {
  if (story.tokens.empty()) throw InvalidInput("story " + story.id + " has no tokens");
  const auto& tok = m.tokenizer();
  const auto enc = tok.encode(story.tokens, m.options().max_length);
  std::vector<int> baseline_ids = enc.ids;
  for (std::size_t i = 0; i < baseline_ids.size(); ++i) {
    if (enc.word_index[i] >= 0) baseline_ids[i] = tok.pad_id();
  }
  const Matrix input = m.encoder().embed(m.params(), enc.ids);
  const Matrix baseline = m.encoder().embed(m.params(), baseline_ids);
  const PathAttribution path = integrated_gradients(RatingFunction(m), input, baseline, steps);

  AttributionResult out;
  out.story_id = story.id;
  out.scores.assign(enc.kept_words, 0.0);
  for (std::size_t i = 0; i < enc.ids.size(); ++i) {
    if (enc.word_index[i] >= 0) out.scores[static_cast<std::size_t>(enc.word_index[i])] += path.per_row[i];
  }
  out.truncated_words = story.tokens.size() - enc.kept_words;
  out.completeness_delta = path.completeness_delta;
  out.f_input = path.f_input;
  out.f_baseline = path.f_baseline;
  out.steps = steps;
  return out;
}

std::vector<WordImportance> aggregate_importance(std::span<const AttributionResult> results,
                                                 std::span<const corpus::Story> stories,
                                                 const std::set<std::string>& stopwords,
                                                 const std::set<std::string>& top_highlighted) {
  std::map<std::string, const corpus::Story*> by_id;
  for (const auto& s : stories) by_id.emplace(s.id, &s);
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const auto& r : results) {
    auto it = by_id.find(r.story_id);
    if (it == by_id.end()) throw InvalidInput("attribution for unknown story " + r.story_id);
    const auto& tokens = it->second->tokens;
    if (r.scores.size() > tokens.size()) throw SchemaError("attribution longer than story " + r.story_id);
    for (std::size_t i = 0; i < r.scores.size(); ++i) {
      if (is_punctuation_token(tokens[i].surface)) continue;
      const std::string w = to_lower_ascii(tokens[i].surface);
      if (stopwords.contains(w)) continue;
      auto& [sum, n] = acc[w];
      sum += r.scores[i];
      ++n;
    }
  }
  std::vector<WordImportance> out;
  for (const auto& [w, v] : acc) {
    out.push_back({w, v.first / static_cast<double>(v.second), v.second, top_highlighted.contains(w)});
  }
  return out;
}

HighlightComparison compare_to_highlights(std::span<const WordImportance> importance,
                                          std::span<const stats::WordStats> word_stats, double chance_rate) {
  std::map<std::string, const stats::WordStats*> stats_by_word;
  for (const auto& w : word_stats) stats_by_word.emplace(w.word, &w);
  std::vector<double> abs_importance, proportion, above, other;
  for (const auto& w : importance) {
    auto it = stats_by_word.find(w.word);
    if (it == stats_by_word.end()) continue;
    abs_importance.push_back(std::abs(w.mean_importance));
    proportion.push_back(it->second->proportion);
    (it->second->proportion > chance_rate ? above : other).push_back(w.mean_importance);
  }
  if (abs_importance.size() < 3) throw InvalidInput("too few words shared between attributions and highlights");
  HighlightComparison out;
  out.words = abs_importance.size();
  out.chance_rate = chance_rate;
  out.pearson_r = stats::pearson(abs_importance, proportion);
  out.above_chance = above.size();
  if (above.size() >= 2 && other.size() >= 2) {
    const auto welch = stats::welch_t_test(above, other);
    out.welch_t = welch.t;
    out.welch_p = stats::welch_greater_p(welch);
  }
  return out;
}

}  // namespace guilt::attribution
