#include "guilt/stats/agreement.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "guilt/common/error.hpp"
#include "guilt/common/random.hpp"
#include "guilt/common/text.hpp"

namespace guilt::stats {

std::optional<double> story_mse(std::span<const double> ratings) {
  if (ratings.size() < 2) return std::nullopt;
  double m = mean(ratings);
  // Second pass removes the rounding error of the first, so equal ratings give exactly 0.
  double correction = 0.0;
  for (double r : ratings) correction += r - m;
  m += correction / static_cast<double>(ratings.size());
  double ss = 0.0;
  for (double r : ratings) ss += (r - m) * (r - m);
  return ss / static_cast<double>(ratings.size());
}

StoryRatings collect_ratings(std::span<const corpus::Story> stories, std::span<const annotation::Annotation> annotations,
                             Question question) {
  const auto grouped = annotation::by_story(annotations);
  StoryRatings out;
  for (const auto& story : stories) {
    std::vector<double> values;
    if (auto it = grouped.find(story.id); it != grouped.end()) {
      for (const auto& a : it->second) {
        if (a.question == question && a.slider) values.push_back(*a.slider);
      }
    }
    out.push_back(std::move(values));
  }
  return out;
}

std::vector<double> story_mses(const StoryRatings& ratings) {
  std::vector<double> out;
  for (const auto& r : ratings) {
    if (auto mse = story_mse(r)) out.push_back(*mse);
  }
  return out;
}

double mean_story_mse(const StoryRatings& ratings) {
  const auto mses = story_mses(ratings);
  if (mses.empty()) throw DegenerateStatistic("no story has two ratings");
  return mean(mses);
}

StoryRatings shuffle_ratings(const StoryRatings& ratings, std::uint64_t seed) {
  std::vector<double> pooled;
  for (const auto& r : ratings) pooled.insert(pooled.end(), r.begin(), r.end());
  Rng rng(seed);
  rng.shuffle(pooled);
  StoryRatings out;
  std::size_t k = 0;
  for (const auto& r : ratings) {
    out.emplace_back(pooled.begin() + static_cast<std::ptrdiff_t>(k),
                     pooled.begin() + static_cast<std::ptrdiff_t>(k + r.size()));
    k += r.size();
  }
  return out;
}

std::vector<double> shuffled_mse_baseline(const StoryRatings& ratings, std::uint64_t seed, std::size_t reps) {
  std::vector<double> out;
  out.reserve(reps);
  for (std::size_t rep = 0; rep < reps; ++rep) out.push_back(mean_story_mse(shuffle_ratings(ratings, derive_seed(seed, rep))));
  return out;
}

MseAgreement mse_agreement_test(const StoryRatings& ratings, std::uint64_t seed) {
  const auto actual = story_mses(ratings);
  const auto shuffled = story_mses(shuffle_ratings(ratings, seed));
  MseAgreement out;
  out.actual_mean_mse = mean(actual);
  out.shuffled_mean_mse = mean(shuffled);
  out.welch = welch_t_test(shuffled, actual);
  return out;
}

std::vector<StoryHighlights> collect_highlights(std::span<const corpus::Story> stories,
                                                std::span<const annotation::Annotation> annotations, Question question,
                                                UnitMode mode) {
  const auto grouped = annotation::by_story(annotations);
  std::vector<StoryHighlights> out;
  for (const auto& story : stories) {
    StoryHighlights sh;
    sh.story_id = story.id;
    sh.n_units = mode == UnitMode::Token ? story.tokens.size() : story.body.size();
    if (auto it = grouped.find(story.id); it != grouped.end()) {
      for (const auto& a : it->second) {
        if (a.question != question || a.doesnt_apply) continue;
        sh.rows.push_back(mode == UnitMode::Token ? annotation::token_highlight_mask(story, a.highlights)
                                                  : annotation::char_highlight_mask(story.body.size(), a.highlights));
      }
    }
    if (!sh.rows.empty()) out.push_back(std::move(sh));
  }
  return out;
}

double krippendorff_alpha_nominal(std::span<const std::vector<std::size_t>> unit_value_counts) {
  std::size_t categories = 0;
  for (const auto& u : unit_value_counts) categories = std::max(categories, u.size());
  std::vector<std::vector<double>> coincidence(categories, std::vector<double>(categories, 0.0));
  for (const auto& u : unit_value_counts) {
    const std::size_t m = std::accumulate(u.begin(), u.end(), std::size_t{0});
    if (m < 2) continue;
    const double scale = 1.0 / static_cast<double>(m - 1);
    for (std::size_t c = 0; c < u.size(); ++c) {
      if (u[c] == 0) continue;
      for (std::size_t k = 0; k < u.size(); ++k) {
        const double pairs = c == k ? static_cast<double>(u[c]) * static_cast<double>(u[c] - 1)
                                    : static_cast<double>(u[c]) * static_cast<double>(u[k]);
        coincidence[c][k] += pairs * scale;
      }
    }
  }
  std::vector<double> marginal(categories, 0.0);
  double n = 0.0;
  for (std::size_t c = 0; c < categories; ++c) {
    marginal[c] = std::accumulate(coincidence[c].begin(), coincidence[c].end(), 0.0);
    n += marginal[c];
  }
  double observed = 0.0, expected = 0.0;
  for (std::size_t c = 0; c < categories; ++c) {
    for (std::size_t k = 0; k < categories; ++k) {
      if (c == k) continue;
      observed += coincidence[c][k];
      expected += marginal[c] * marginal[k];
    }
  }
  if (n < 2.0 || expected == 0.0) throw DegenerateStatistic("krippendorff alpha undefined: no expected disagreement");
  return 1.0 - (n - 1.0) * observed / expected;
}

double krippendorff_alpha(std::span<const StoryHighlights> highlights) {
  std::vector<std::vector<std::size_t>> units;
  for (const auto& story : highlights) {
    if (story.rows.size() < 2) continue;
    for (std::size_t u = 0; u < story.n_units; ++u) {
      std::size_t ones = 0;
      for (const auto& row : story.rows) ones += row[u];
      units.push_back({story.rows.size() - ones, ones});
    }
  }
  return krippendorff_alpha_nominal(units);
}

double chance_highlight_rate(std::span<const StoryHighlights> highlights) {
  std::size_t pairs = 0, marked = 0;
  for (const auto& story : highlights) {
    for (const auto& row : story.rows) {
      pairs += row.size();
      marked += static_cast<std::size_t>(std::count(row.begin(), row.end(), std::uint8_t{1}));
    }
  }
  return pairs == 0 ? 0.0 : static_cast<double>(marked) / static_cast<double>(pairs);
}

std::vector<StoryHighlights> shuffle_highlights(std::span<const StoryHighlights> highlights, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<StoryHighlights> out(highlights.begin(), highlights.end());
  for (auto& story : out) {
    for (auto& row : story.rows) rng.shuffle(row);
  }
  return out;
}

namespace {

std::vector<double> majority_indicators(std::span<const StoryHighlights> highlights) {
  std::vector<double> out;
  for (const auto& story : highlights) {
    const auto annotators = static_cast<double>(story.rows.size());
    for (std::size_t u = 0; u < story.n_units; ++u) {
      std::size_t ones = 0;
      for (const auto& row : story.rows) ones += row[u];
      out.push_back(ones > 0 && static_cast<double>(ones) >= 0.5 * annotators ? 1.0 : 0.0);
    }
  }
  return out;
}

}  // namespace

MajorityAgreement majority_agreement_test(std::span<const StoryHighlights> highlights, std::uint64_t seed) {
  const auto actual = majority_indicators(highlights);
  const auto shuffled = majority_indicators(shuffle_highlights(highlights, seed));
  MajorityAgreement out;
  out.actual_rate = mean(actual);
  out.shuffled_rate = mean(shuffled);
  out.welch = welch_t_test(actual, shuffled);
  return out;
}

HighlightLengthSummary highlight_lengths(std::span<const annotation::Annotation> annotations, Question question) {
  std::vector<std::size_t> lengths;
  for (const auto& a : annotations) {
    if (a.question != question) continue;
    for (const auto& h : a.highlights) lengths.push_back(h.end - h.start);
  }
  HighlightLengthSummary out;
  out.count = lengths.size();
  if (lengths.empty()) return out;
  std::sort(lengths.begin(), lengths.end());
  out.min_chars = lengths.front();
  out.max_chars = lengths.back();
  const auto mid = lengths.size() / 2;
  out.median_chars = lengths.size() % 2 == 1 ? static_cast<double>(lengths[mid])
                                             : 0.5 * static_cast<double>(lengths[mid - 1] + lengths[mid]);
  const auto under = std::count_if(lengths.begin(), lengths.end(), [](std::size_t l) { return l < 200; });
  out.share_under_200 = static_cast<double>(under) / static_cast<double>(lengths.size());
  return out;
}

std::vector<std::size_t> rating_histogram(const StoryRatings& ratings, std::size_t bins) {
  std::vector<std::size_t> out(bins, 0);
  for (const auto& story : ratings) {
    for (double r : story) {
      auto bin = static_cast<std::size_t>(r * static_cast<double>(bins));
      ++out[std::min(bin, bins - 1)];
    }
  }
  return out;
}

double WordStats::proportion_for(Question q) const {
  const auto f = frequency_by_question.find(q);
  if (f == frequency_by_question.end() || f->second == 0) return 0.0;
  const auto h = highlight_by_question.find(q);
  return static_cast<double>(h == highlight_by_question.end() ? 0 : h->second) / static_cast<double>(f->second);
}

std::set<std::string> load_stopwords(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open stopword list " + path.string());
  std::set<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto last = line.find_last_not_of(" \t\r");
    out.insert(to_lower_ascii(line.substr(first, last - first + 1)));
  }
  return out;
}

std::set<std::string> default_stopwords() {
  return load_stopwords(std::filesystem::path(GUILT_DATA_DIR) / "stopwords_en.txt");
}

std::vector<WordStats> word_stats(std::span<const corpus::Story> stories,
                                  std::span<const annotation::Annotation> annotations,
                                  const std::set<std::string>& stopwords) {
  const auto grouped = annotation::by_story(annotations);
  std::map<std::string, WordStats> table;
  for (const auto& story : stories) {
    std::vector<std::string> words(story.tokens.size());
    std::vector<bool> counted(story.tokens.size(), false);
    for (std::size_t t = 0; t < story.tokens.size(); ++t) {
      words[t] = to_lower_ascii(story.tokens[t].surface);
      counted[t] = !is_punctuation_token(words[t]) && !stopwords.contains(words[t]);
      if (counted[t]) {
        auto& ws = table[words[t]];
        ws.word = words[t];
        ++ws.corpus_frequency;
      }
    }
    auto it = grouped.find(story.id);
    if (it == grouped.end()) continue;
    for (const auto& a : it->second) {
      if (a.question == Question::AttentionCheck || a.doesnt_apply) continue;
      const auto mask = annotation::token_highlight_mask(story, a.highlights);
      for (std::size_t t = 0; t < mask.size(); ++t) {
        if (!counted[t]) continue;
        auto& ws = table[words[t]];
        ++ws.frequency;
        ++ws.frequency_by_question[a.question];
        if (mask[t]) {
          ++ws.highlight_count;
          ++ws.highlight_by_question[a.question];
        }
      }
    }
  }
  std::vector<WordStats> out;
  out.reserve(table.size());
  for (auto& [word, ws] : table) {
    ws.proportion = ws.frequency == 0 ? 0.0 : static_cast<double>(ws.highlight_count) / static_cast<double>(ws.frequency);
    out.push_back(std::move(ws));
  }
  return out;
}

std::vector<WordStats> filter_min_frequency(std::span<const WordStats> words, std::size_t min_freq) {
  std::vector<WordStats> out;
  std::copy_if(words.begin(), words.end(), std::back_inserter(out),
               [&](const WordStats& w) { return w.frequency >= min_freq; });
  return out;
}

std::vector<WordStats> most_highlighted(std::span<const WordStats> words, std::size_t k) {
  std::vector<WordStats> out(words.begin(), words.end());
  std::sort(out.begin(), out.end(), [](const WordStats& a, const WordStats& b) {
    return a.highlight_count != b.highlight_count ? a.highlight_count > b.highlight_count : a.word < b.word;
  });
  if (out.size() > k) out.resize(k);
  return out;
}

std::vector<QuestionDifference> question_differences(std::span<const WordStats> words, std::size_t k) {
  std::vector<QuestionDifference> out;
  for (const auto& w : words) {
    QuestionDifference d;
    d.word = w.word;
    d.reader_perception = w.proportion_for(Question::ReaderPerception);
    d.author_belief = w.proportion_for(Question::AuthorBelief);
    d.difference = d.author_belief - d.reader_perception;
    out.push_back(d);
  }
  std::sort(out.begin(), out.end(), [](const QuestionDifference& a, const QuestionDifference& b) {
    const double da = std::abs(a.difference), db = std::abs(b.difference);
    return da != db ? da > db : a.word < b.word;
  });
  if (out.size() > k) out.resize(k);
  return out;
}

double highlight_frequency_correlation(std::span<const WordStats> words) {
  std::vector<double> counts, freqs;
  for (const auto& w : words) {
    counts.push_back(static_cast<double>(w.highlight_count));
    freqs.push_back(static_cast<double>(w.frequency));
  }
  return pearson(counts, freqs);
}

AgreementReport agreement_report(std::span<const corpus::Story> stories,
                                 std::span<const annotation::Annotation> annotations, std::uint64_t seed,
                                 std::size_t shuffle_reps, UnitMode mode) {
  AgreementReport report;
  report.seed = seed;
  report.shuffle_reps = shuffle_reps;
  report.unit_mode = mode;
  std::vector<StoryHighlights> pooled;
  for (Question q : annotation::kGuiltQuestions) {
    QuestionAgreement qa;
    const auto ratings = collect_ratings(stories, annotations, q);
    const auto mses = story_mses(ratings);
    qa.stories_with_two_ratings = mses.size();
    if (mses.empty()) continue;
    qa.mean_story_mse = mean(mses);
    const auto baseline = shuffled_mse_baseline(ratings, seed, std::max<std::size_t>(shuffle_reps, 1));
    qa.shuffled_mean_mse = mean(baseline);
    try {
      qa.welch = mse_agreement_test(ratings, seed).welch;
    } catch (const DegenerateStatistic&) {
      qa.welch = {};
    }
    const auto highlights = collect_highlights(stories, annotations, q, mode);
    try {
      qa.krippendorff_alpha = krippendorff_alpha(highlights);
    } catch (const DegenerateStatistic&) {
      qa.krippendorff_alpha.reset();
    }
    qa.chance_rate = chance_highlight_rate(highlights);
    try {
      qa.majority = majority_agreement_test(highlights, seed);
    } catch (const DegenerateStatistic&) {
      qa.majority = {};
    }
    pooled.insert(pooled.end(), highlights.begin(), highlights.end());
    report.questions.emplace(q, qa);
  }
  report.chance_rate = chance_highlight_rate(pooled);
  return report;
}

Json to_json(const WelchResult& r) { return Json{{"t", r.t}, {"df", r.df}, {"p", r.p}}; }

Json to_json(const AgreementReport& report) {
  Json questions = Json::object();
  for (const auto& [q, qa] : report.questions) {
    questions[std::string(annotation::to_string(q))] = Json{
        {"mean_story_mse", qa.mean_story_mse},
        {"stories_with_two_ratings", qa.stories_with_two_ratings},
        {"shuffled_mean_mse", qa.shuffled_mean_mse},
        {"welch_shuffled_vs_actual", to_json(qa.welch)},
        {"krippendorff_alpha", qa.krippendorff_alpha ? Json(*qa.krippendorff_alpha) : Json(nullptr)},
        {"chance_rate", qa.chance_rate},
        {"majority_actual_rate", qa.majority.actual_rate},
        {"majority_shuffled_rate", qa.majority.shuffled_rate},
        {"majority_welch", to_json(qa.majority.welch)},
    };
  }
  return Json{{"questions", std::move(questions)},
              {"chance_rate", report.chance_rate},
              {"seed", report.seed},
              {"shuffle_reps", report.shuffle_reps},
              {"unit_mode", report.unit_mode == UnitMode::Token ? "token" : "character"}};
}

}  // namespace guilt::stats
