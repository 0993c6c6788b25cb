#include <algorithm>

#include "common.hpp"
#include "guilt/stats/agreement.hpp"

namespace guilt::cli {
namespace {

using annotation::Question;

struct Inputs {
  std::string stories, sessions;
  std::string units = "token";
};

void add_input_flags(CLI::App* cmd, Inputs& in) {
  cmd->add_option("--stories", in.stories, "Kept stories")->required();
  cmd->add_option("--sessions", in.sessions, "Kept sessions")->required();
}

stats::UnitMode unit_mode(const std::string& s) {
  return s == "character" ? stats::UnitMode::Character : stats::UnitMode::Token;
}

std::string qname(Question q) { return std::string(annotation::short_name(q)); }

void add_agreement(CLI::App* parent, Registry& reg) {
  struct Opts : Inputs {
    std::size_t reps = 20;
    std::size_t bins = 20;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = parent->add_subcommand("agreement", "Rating and highlight agreement against shuffled baselines");
  add_input_flags(cmd, *o);
  cmd->add_option("--reps", o->reps, "Shuffled baselines to average")->check(CLI::PositiveNumber);
  cmd->add_option("--units", o->units, "Highlight units")->check(CLI::IsMember({"token", "character"}));
  cmd->add_option("--bins", o->bins, "Rating histogram bins")->check(CLI::PositiveNumber);
  reg.add(cmd, [&reg, cmd, o] {
    auto job = reg.job(cmd);
    const auto stories = corpus::load_stories(job->input(o->stories));
    const auto sessions = annotation::load_sessions(job->input(o->sessions));
    const auto json_path = job->output("agreement.json"), csv_path = job->output("agreement.csv"),
               hist_path = job->output("rating_histogram.csv"), svg_path = job->output("rating_histogram.svg");
    if (job->dry_run()) return int(kOk);
    const auto annotations = annotation::flatten(sessions);
    const auto report =
        stats::agreement_report(stories, annotations, reg.globals().seed, o->reps, unit_mode(o->units));

    std::vector<std::vector<std::string>> rows;
    for (const auto& [q, a] : report.questions) {
      rows.push_back({qname(q), num(a.mean_story_mse), std::to_string(a.stories_with_two_ratings),
                      num(a.shuffled_mean_mse), num(a.welch.t), num(a.welch.df), num(a.welch.p),
                      a.krippendorff_alpha ? num(*a.krippendorff_alpha) : "", num(a.chance_rate),
                      num(a.majority.actual_rate), num(a.majority.shuffled_rate), num(a.majority.welch.p)});
    }
    write_file_atomic(csv_path, write_csv({"question", "mean_story_mse", "stories", "shuffled_mean_mse", "welch_t",
                                           "welch_df", "welch_p", "krippendorff_alpha", "chance_rate",
                                           "majority_rate", "shuffled_majority_rate", "majority_welch_p"},
                                          rows));
    write_file_atomic(json_path, stats::to_json(report).dump(2) + "\n");

    std::vector<std::vector<std::string>> hist_rows;
    std::vector<std::string> labels;
    std::vector<double> counts;
    for (auto q : annotation::kGuiltQuestions) {
      const auto hist = stats::rating_histogram(stats::collect_ratings(stories, annotations, q), o->bins);
      for (std::size_t b = 0; b < hist.size(); ++b) {
        const double lo = static_cast<double>(b) / static_cast<double>(o->bins);
        const double hi = static_cast<double>(b + 1) / static_cast<double>(o->bins);
        hist_rows.push_back({qname(q), num(lo), num(hi), std::to_string(hist[b])});
        labels.push_back(qname(q) + (b % 5 == 0 ? " " + num(lo) : ""));
        counts.push_back(static_cast<double>(hist[b]));
      }
    }
    write_file_atomic(hist_path, write_csv({"question", "bin_lo", "bin_hi", "count"}, hist_rows));
    write_file_atomic(svg_path, svg_bars("Slider ratings (RP bins, then AB bins)", labels, counts));
    job->commit();
    return int(kOk);
  });
}

void add_highlights(CLI::App* parent, Registry& reg) {
  auto o = std::make_shared<Inputs>();
  auto* cmd = parent->add_subcommand("highlights", "Highlight lengths and per-story highlight rates");
  add_input_flags(cmd, *o);
  cmd->add_option("--units", o->units, "Highlight units")->check(CLI::IsMember({"token", "character"}));
  reg.add(cmd, [&reg, cmd, o] {
    auto job = reg.job(cmd);
    const auto stories = corpus::load_stories(job->input(o->stories));
    const auto sessions = annotation::load_sessions(job->input(o->sessions));
    const auto lengths_path = job->output("highlight_lengths.csv"), rates_path = job->output("highlight_rates.csv"),
               json_path = job->output("highlights.json"), svg_path = job->output("highlight_rates.svg");
    if (job->dry_run()) return int(kOk);
    const auto annotations = annotation::flatten(sessions);
    const auto mode = unit_mode(o->units);

    std::vector<std::vector<std::string>> length_rows, rate_rows;
    Json summary = Json::object();
    std::vector<stats::StoryHighlights> pooled;
    std::vector<double> rate_hist(10, 0.0);
    for (auto q : annotation::kGuiltQuestions) {
      const auto len = stats::highlight_lengths(annotations, q);
      length_rows.push_back({qname(q), std::to_string(len.count), std::to_string(len.min_chars),
                             std::to_string(len.max_chars), num(len.median_chars), num(len.share_under_200)});
      const auto highlights = stats::collect_highlights(stories, annotations, q, mode);
      for (const auto& h : highlights) {
        std::size_t marked = 0;
        for (const auto& row : h.rows) marked += static_cast<std::size_t>(std::count(row.begin(), row.end(), 1));
        const double cells = static_cast<double>(h.rows.size() * h.n_units);
        const double rate = cells > 0 ? static_cast<double>(marked) / cells : 0.0;
        rate_rows.push_back({h.story_id, qname(q), std::to_string(h.rows.size()), std::to_string(h.n_units),
                             std::to_string(marked), num(rate)});
        rate_hist[std::min<std::size_t>(9, static_cast<std::size_t>(rate * 10))] += 1;
      }
      summary[qname(q)] = {{"highlights", len.count},
                           {"median_chars", len.median_chars},
                           {"share_under_200_chars", len.share_under_200},
                           {"chance_rate", highlights.empty() ? 0.0 : stats::chance_highlight_rate(highlights)}};
      pooled.insert(pooled.end(), highlights.begin(), highlights.end());
    }
    summary["chance_rate"] = pooled.empty() ? 0.0 : stats::chance_highlight_rate(pooled);
    summary["units"] = o->units;
    write_file_atomic(lengths_path, write_csv({"question", "count", "min_chars", "max_chars", "median_chars",
                                               "share_under_200"},
                                              length_rows));
    write_file_atomic(rates_path, write_csv({"story_id", "question", "annotations", "units", "highlighted", "rate"},
                                            rate_rows));
    write_file_atomic(json_path, summary.dump(2) + "\n");
    std::vector<std::string> labels;
    for (int b = 0; b < 10; ++b) labels.push_back(num(b / 10.0));
    write_file_atomic(svg_path, svg_bars("Per-story highlight rate", labels, rate_hist));
    job->commit();
    return int(kOk);
  });
}

std::vector<std::string> word_row(const stats::WordStats& w) {
  auto get = [](const std::map<Question, std::size_t>& m, Question q) {
    auto it = m.find(q);
    return it == m.end() ? std::size_t{0} : it->second;
  };
  std::vector<std::string> row = {w.word, std::to_string(w.corpus_frequency), std::to_string(w.frequency),
                                  std::to_string(w.highlight_count), num(w.proportion)};
  for (auto q : annotation::kGuiltQuestions) {
    row.push_back(std::to_string(get(w.frequency_by_question, q)));
    row.push_back(std::to_string(get(w.highlight_by_question, q)));
    row.push_back(num(w.proportion_for(q)));
  }
  return row;
}

const std::vector<std::string> kWordHeader = {
    "word",         "corpus_frequency",   "frequency",     "highlight_count", "proportion",         "rp_frequency",
    "rp_highlights", "rp_proportion",     "ab_frequency",  "ab_highlights",   "ab_proportion"};

void add_words(CLI::App* parent, Registry& reg) {
  struct Opts : Inputs {
    std::size_t min_freq = 25;
    std::size_t top = 20;
    std::string stopwords;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = parent->add_subcommand("words", "Per-word highlight proportions");
  add_input_flags(cmd, *o);
  cmd->add_option("--min-freq", o->min_freq, "Fewest (annotation, occurrence) pairs for a word to be kept");
  cmd->add_option("--top", o->top, "Rows in the most-highlighted and question-difference tables");
  cmd->add_option("--stopwords", o->stopwords, "Stopword list, one per line (bundled list when empty)");
  reg.add(cmd, [&reg, cmd, o] {
    auto job = reg.job(cmd);
    const auto stories = corpus::load_stories(job->input(o->stories));
    const auto sessions = annotation::load_sessions(job->input(o->sessions));
    const auto stop =
        o->stopwords.empty() ? stats::default_stopwords() : stats::load_stopwords(job->input(o->stopwords));
    const auto stats_path = job->output("word_stats.csv"), top_path = job->output("top_highlighted.csv"),
               diff_path = job->output("question_differences.csv"), json_path = job->output("words.json"),
               svg_path = job->output("words.svg");
    if (job->dry_run()) return int(kOk);
    const auto annotations = annotation::flatten(sessions);
    const auto all = stats::word_stats(stories, annotations, stop);
    const auto kept = stats::filter_min_frequency(all, o->min_freq);

    std::vector<std::vector<std::string>> rows, top_rows, diff_rows;
    for (const auto& w : kept) rows.push_back(word_row(w));
    const auto top = stats::most_highlighted(kept, o->top);
    for (const auto& w : top) top_rows.push_back(word_row(w));
    for (const auto& d : stats::question_differences(kept, o->top)) {
      diff_rows.push_back({d.word, num(d.reader_perception), num(d.author_belief), num(d.difference)});
    }
    write_file_atomic(stats_path, write_csv(kWordHeader, rows));
    write_file_atomic(top_path, write_csv(kWordHeader, top_rows));
    write_file_atomic(diff_path, write_csv({"word", "rp_proportion", "ab_proportion", "difference"}, diff_rows));

    Json summary = {{"words", all.size()}, {"kept", kept.size()}, {"min_freq", o->min_freq}};
    summary["highlight_frequency_r"] = kept.size() >= 3 ? Json(stats::highlight_frequency_correlation(kept)) : Json();
    Json top_words = Json::array();
    for (const auto& w : top) top_words.push_back(w.word);
    summary["top_highlighted"] = top_words;
    write_file_atomic(json_path, summary.dump(2) + "\n");

    std::vector<double> x, y;
    std::vector<std::string> labels;
    for (const auto& w : kept) {
      x.push_back(static_cast<double>(w.frequency));
      y.push_back(static_cast<double>(std::max<std::size_t>(w.highlight_count, 1)));
      const bool in_top = std::any_of(top.begin(), top.end(), [&](const auto& t) { return t.word == w.word; });
      labels.push_back(in_top ? w.word : "");
    }
    write_file_atomic(svg_path, svg_scatter("Highlights against frequency", "frequency", "highlights", x, y, labels,
                                            /*log_axes=*/true));
    job->commit();
    return int(kOk);
  });
}

}  // namespace

std::vector<stats::WordStats> read_word_stats(const std::string& text) {
  const auto table = read_csv(text);
  std::vector<std::size_t> cols;
  for (const auto& name : kWordHeader) cols.push_back(table.column(name));
  std::vector<stats::WordStats> out;
  for (const auto& r : table.rows) {
    stats::WordStats w;
    w.word = r[cols[0]];
    w.corpus_frequency = std::stoul(r[cols[1]]);
    w.frequency = std::stoul(r[cols[2]]);
    w.highlight_count = std::stoul(r[cols[3]]);
    w.proportion = std::stod(r[cols[4]]);
    std::size_t c = 5;
    for (auto q : annotation::kGuiltQuestions) {
      w.frequency_by_question[q] = std::stoul(r[cols[c++]]);
      w.highlight_by_question[q] = std::stoul(r[cols[c++]]);
      ++c;
    }
    out.push_back(std::move(w));
  }
  return out;
}

void add_stats_commands(CLI::App& app, Registry& registry) {
  auto* stats_cmd = app.add_subcommand("stats", "Agreement and highlighting statistics");
  stats_cmd->require_subcommand(1);
  add_agreement(stats_cmd, registry);
  add_highlights(stats_cmd, registry);
  add_words(stats_cmd, registry);
}

}  // namespace guilt::cli
