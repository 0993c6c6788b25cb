#include "guilt/corpus/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <regex>
#include <set>
#include <unordered_set>

#include "guilt/common/error.hpp"
#include "guilt/common/random.hpp"

namespace guilt::corpus {
namespace {

const std::regex& phone_pattern() {
  // NANP shapes with optional country code, area code in parentheses, and
  // space/dot/dash separators; bare 7-digit local numbers need a dash or dot.
  static const std::regex pattern(
      R"((\+?1[\s.-]?)?(\(\d{3}\)[\s.-]?|\d{3}[\s.-]?)\d{3}[\s.-]?\d{4}|\d{3}[.-]\d{4})");
  return pattern;
}

bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

std::string remove_phone_numbers(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  auto begin = text.begin();
  std::cmatch match;
  std::size_t consumed = 0;
  std::size_t search_from = 0;
  while (search_from < text.size() &&
         std::regex_search(text.data() + search_from, text.data() + text.size(), match, phone_pattern())) {
    const std::size_t start = search_from + static_cast<std::size_t>(match.position(0));
    const std::size_t end = start + static_cast<std::size_t>(match.length(0));
    const bool left_ok = start == 0 || !is_digit(text[start - 1]);
    const bool right_ok = end == text.size() || !is_digit(text[end]);
    if (left_ok && right_ok) {
      out.append(begin + static_cast<std::ptrdiff_t>(consumed), begin + static_cast<std::ptrdiff_t>(start));
      consumed = end;
      search_from = end;
    } else {
      search_from = start + 1;
    }
  }
  out.append(begin + static_cast<std::ptrdiff_t>(consumed), text.end());
  return out;
}

std::string remove_ad_lines(std::string_view text, const ScrubConfig& config) {
  if (config.ad_sentinels.empty()) return std::string(text);
  std::string out;
  out.reserve(text.size());
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    const std::size_t line_end = nl == std::string_view::npos ? text.size() : nl + 1;
    const std::string_view line = text.substr(pos, line_end - pos);
    const std::string lowered = to_lower_ascii(line);
    const bool is_ad = std::any_of(config.ad_sentinels.begin(), config.ad_sentinels.end(),
                                   [&](const std::string& s) { return lowered.find(to_lower_ascii(s)) != std::string::npos; });
    if (!is_ad) out.append(line);
    pos = line_end;
  }
  return out;
}

const std::regex& incident_log_pattern() {
  static const std::regex pattern(
      R"(^\s*(\d{1,2}[:.]\d{2}\s*([ap]\.?m\.?)?|\d{1,2}/\d{1,2}(/\d{2,4})?|(jan|feb|mar|apr|may|jun|jul|aug|sep|sept|oct|nov|dec)[a-z]*\.?\s+\d{1,2})\b)",
      std::regex::icase);
  return pattern;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

}  // namespace

std::string_view to_string(RejectReason reason) {
  switch (reason) {
    case RejectReason::TooLong: return "too_long";
    case RejectReason::TooFewStems: return "too_few_stems";
    case RejectReason::DuplicateTitle: return "duplicate_title";
    case RejectReason::MultiReport: return "multi_report";
    case RejectReason::Other: return "other";
  }
  return "other";
}

std::size_t FilterReport::total_rejected() const {
  std::size_t total = 0;
  for (const auto& [reason, count] : rejected) total += count;
  return total;
}

std::string scrub_text(std::string_view body, const ScrubConfig& config) {
  std::string current(body);
  // Removing a span can only shrink the text, so this reaches a fixpoint.
  while (true) {
    std::string next = remove_phone_numbers(remove_ad_lines(current, config));
    if (next == current) return next;
    current = std::move(next);
  }
}

RawStory scrub(const RawStory& raw, const ScrubConfig& config) {
  RawStory out = raw;
  out.body = scrub_text(raw.body, config);
  return out;
}

std::size_t count_stem_hits(std::string_view body, StemCountMode mode) {
  std::size_t hits = 0;
  std::set<std::string_view> distinct;
  for (const auto& token : tokenize_words(body)) {
    const std::string lowered = to_lower_ascii(token.surface);
    for (std::string_view stem : kCrimeStems) {
      if (lowered.starts_with(stem)) {
        ++hits;
        distinct.insert(stem);
        break;
      }
    }
  }
  return mode == StemCountMode::Occurrences ? hits : distinct.size();
}

std::size_t count_incident_log_lines(std::string_view body) {
  std::size_t count = 0;
  std::size_t pos = 0;
  while (pos <= body.size()) {
    auto nl = body.find('\n', pos);
    const std::size_t end = nl == std::string_view::npos ? body.size() : nl;
    const std::string line(body.substr(pos, end - pos));
    if (std::regex_search(line, incident_log_pattern())) ++count;
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return count;
}

Story make_story(const RawStory& scrubbed, StemCountMode mode) {
  Story story;
  story.id = scrubbed.id;
  story.title = scrubbed.title;
  story.body = scrubbed.body;
  story.word_count = count_whitespace_words(scrubbed.body);
  story.stem_hits = count_stem_hits(scrubbed.body, mode);
  story.tokens = tokenize_words(scrubbed.body);
  return story;
}

FilterResult filter_archive(std::span<const RawStory> archive, const FilterConfig& config) {
  std::unordered_set<std::string> ids;
  for (const auto& raw : archive) {
    if (!ids.insert(raw.id).second) throw InvalidInput("duplicate raw story id: " + raw.id);
  }

  FilterResult result;
  result.report.input = archive.size();
  auto reject = [&](const std::string& id, RejectReason reason) {
    result.rejections[id] = reason;
    ++result.report.rejected[reason];
  };

  struct Candidate {
    const RawStory* raw;
    Story story;
  };
  std::vector<Candidate> candidates;
  for (const auto& raw : archive) {
    const RawStory clean = scrub(raw, config.scrub);
    Story story = make_story(clean, config.stem_mode);
    if (story.word_count == 0) {
      reject(raw.id, RejectReason::Other);
    } else if (story.word_count > config.max_words) {
      reject(raw.id, RejectReason::TooLong);
    } else if (story.stem_hits < config.min_stem_hits) {
      reject(raw.id, RejectReason::TooFewStems);
    } else if (count_incident_log_lines(story.body) >= config.multi_report_min_lines) {
      reject(raw.id, RejectReason::MultiReport);
    } else {
      candidates.push_back({&raw, std::move(story)});
    }
  }

  // Dedup: earliest publication date, then smallest id, wins each title.
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    const auto ta = trim(a.raw->title), tb = trim(b.raw->title);
    if (ta != tb) return ta < tb;
    if (a.raw->published != b.raw->published) return a.raw->published < b.raw->published;
    return a.raw->id < b.raw->id;
  });
  std::string previous_title;
  bool have_previous = false;
  for (auto& c : candidates) {
    const auto title = trim(c.raw->title);
    if (have_previous && title == previous_title) {
      reject(c.raw->id, RejectReason::DuplicateTitle);
      continue;
    }
    previous_title = title;
    have_previous = true;
    result.accepted.push_back(std::move(c.story));
  }
  std::sort(result.accepted.begin(), result.accepted.end(),
            [](const Story& a, const Story& b) { return a.id < b.id; });
  result.report.accepted = result.accepted.size();
  return result;
}

std::array<std::size_t, 3> split_sizes(std::size_t n, std::array<double, 3> ratios) {
  double total = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0) || !std::isfinite(r)) throw InvalidInput("split ratios must be finite and nonnegative");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw InvalidInput("split ratios must sum to 1");
  const auto nonempty = static_cast<std::size_t>(std::count_if(ratios.begin(), ratios.end(), [](double r) { return r > 0.0; }));
  if (n < nonempty) throw InvalidInput("fewer stories than partitions");

  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < 3; ++k) {
    const double exact = ratios[k] * static_cast<double>(n);
    // Snap values within rounding noise of an integer (0.1 * 10 = 0.99999...).
    const double snapped = std::abs(exact - std::round(exact)) < 1e-9 ? std::round(exact) : exact;
    sizes[k] = static_cast<std::size_t>(std::floor(snapped));
    remainder[k] = snapped - std::floor(snapped);
    assigned += sizes[k];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < n; i = (i + 1) % 3) {
    if (ratios[order[i]] > 0.0) {
      ++sizes[order[i]];
      ++assigned;
    }
  }
  // Every partition with a positive ratio gets at least one story.
  for (std::size_t k = 0; k < 3; ++k) {
    if (ratios[k] > 0.0 && sizes[k] == 0) {
      auto donor = static_cast<std::size_t>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
      --sizes[donor];
      ++sizes[k];
    }
  }
  return sizes;
}

CorpusSplit split_corpus(std::span<const Story> stories, std::array<double, 3> ratios, std::uint64_t seed) {
  const auto sizes = split_sizes(stories.size(), ratios);
  std::vector<std::size_t> order(stories.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  CorpusSplit split;
  std::size_t k = 0;
  for (std::size_t i = 0; i < sizes[0]; ++i) split.train.push_back(stories[order[k++]]);
  for (std::size_t i = 0; i < sizes[1]; ++i) split.dev.push_back(stories[order[k++]]);
  for (std::size_t i = 0; i < sizes[2]; ++i) split.test.push_back(stories[order[k++]]);
  return split;
}

Json to_json(const RawStory& story) {
  return Json{{"id", story.id},
              {"title", story.title},
              {"body", story.body},
              {"community", story.community},
              {"published", story.published}};
}

Json to_json(const Story& story) {
  Json tokens = Json::array();
  for (const auto& t : story.tokens) tokens.push_back(Json{{"text", t.surface}, {"start", t.char_start}, {"end", t.char_end}});
  return Json{{"id", story.id},         {"title", story.title},         {"body", story.body},
              {"word_count", story.word_count}, {"stem_hits", story.stem_hits}, {"tokens", std::move(tokens)}};
}

Json to_json(const FilterReport& report) {
  Json rejected = Json::object();
  for (auto reason : {RejectReason::TooLong, RejectReason::TooFewStems, RejectReason::DuplicateTitle,
                      RejectReason::MultiReport, RejectReason::Other}) {
    auto it = report.rejected.find(reason);
    rejected[std::string(to_string(reason))] = it == report.rejected.end() ? 0 : it->second;
  }
  return Json{{"input", report.input}, {"accepted", report.accepted}, {"rejected", std::move(rejected)}};
}

RawStory raw_story_from_json(const Json& j) {
  try {
    RawStory s;
    s.id = j.at("id").get<std::string>();
    s.title = j.value("title", "");
    s.body = j.at("body").get<std::string>();
    s.community = j.value("community", "");
    s.published = j.value("published", "");
    return s;
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("raw story: ") + e.what());
  }
}

Story story_from_json(const Json& j) {
  try {
    Story s;
    s.id = j.at("id").get<std::string>();
    s.title = j.value("title", "");
    s.body = j.at("body").get<std::string>();
    if (j.contains("tokens")) {
      for (const auto& t : j.at("tokens")) {
        s.tokens.push_back({t.at("text").get<std::string>(), t.at("start").get<std::size_t>(), t.at("end").get<std::size_t>()});
      }
    } else {
      s.tokens = tokenize_words(s.body);
    }
    s.word_count = j.contains("word_count") ? j.at("word_count").get<std::size_t>() : count_whitespace_words(s.body);
    s.stem_hits = j.contains("stem_hits") ? j.at("stem_hits").get<std::size_t>() : count_stem_hits(s.body);
    for (const auto& t : s.tokens) {
      if (t.char_start >= t.char_end || t.char_end > s.body.size() ||
          s.body.compare(t.char_start, t.char_end - t.char_start, t.surface) != 0) {
        throw SchemaError("story " + s.id + ": token interval does not match body");
      }
    }
    return s;
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("story: ") + e.what());
  }
}

std::vector<RawStory> load_archive(const std::filesystem::path& path) {
  std::vector<RawStory> out;
  for (const auto& row : read_jsonl(path)) out.push_back(raw_story_from_json(row));
  return out;
}

std::vector<Story> load_stories(const std::filesystem::path& path) {
  std::vector<Story> out;
  for (const auto& row : read_jsonl(path)) out.push_back(story_from_json(row));
  return out;
}

void save_stories(const std::filesystem::path& path, std::span<const Story> stories) {
  std::vector<Json> rows;
  rows.reserve(stories.size());
  for (const auto& s : stories) rows.push_back(to_json(s));
  write_jsonl_atomic(path, rows);
}

}  // namespace guilt::corpus
