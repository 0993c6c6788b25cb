#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "guilt/common/error.hpp"
#include "guilt/common/io.hpp"
#include "guilt/common/random.hpp"
#include "guilt/corpus/corpus.hpp"

using namespace guilt;
using namespace guilt::corpus;

namespace {

RawStory raw(std::string id, std::string title, std::string body, std::string published = "2019-01-01") {
  return {std::move(id), std::move(title), std::move(body), "town", std::move(published)};
}

std::string filler(std::size_t words) {
  std::string out;
  for (std::size_t i = 0; i < words; ++i) out += "word ";
  return out;
}

const std::string kStemBody = "Police arrested the suspect, who allegedly committed crimes and was accused.";

}  // namespace

TEST_CASE("scrub removes every hand-listed phone format") {
  const std::vector<std::string> formats = {
      "555-123-4567",    "(555) 123-4567",  "(555)123-4567",   "555.123.4567",  "555 123 4567",
      "5551234567",      "+1 555-123-4567", "1-555-123-4567",  "+1 (555) 123-4567", "1.555.123.4567",
      "1 555 123 4567",  "+15551234567",    "(555) 123 4567",  "(555).123.4567", "555-123 4567",
      "555 123-4567",    "123-4567",        "123.4567",        "1-800-555-0199", "(800)555-0199",
  };
  REQUIRE(formats.size() == 20);
  for (const auto& phone : formats) {
    CAPTURE(phone);
    CHECK(scrub_text("Call " + phone + " with tips.") == "Call  with tips.");
  }
}

TEST_CASE("scrub leaves non-phone numbers alone") {
  for (std::string text : {"In 2019 there were 12 arrests.", "Zip code 07030.", "Bail was $25,000.",
                           "Case 19-00123 is open.", "Route 202 near exit 14."}) {
    CHECK(scrub_text(text) == text);
  }
}

TEST_CASE("scrub is identity on clean text and removes ad lines") {
  CHECK(scrub_text(kStemBody) == kStemBody);
  const auto raw_text = read_file(std::filesystem::path(GUILT_TEST_DATA_DIR) / "scrub_sample_raw.txt");
  const auto expected = read_file(std::filesystem::path(GUILT_TEST_DATA_DIR) / "scrub_sample_expected.txt");
  CHECK(scrub_text(raw_text) == expected);
}

TEST_CASE("scrub is idempotent and never grows the body") {
  Rng rng(7);
  const std::string alphabet = "0123456789 -.()+\nabc";
  for (int trial = 0; trial < 500; ++trial) {
    std::string text;
    const auto len = rng.uniform_index(60);
    for (std::size_t i = 0; i < len; ++i) text += alphabet[rng.uniform_index(alphabet.size())];
    const auto once = scrub_text(text);
    CHECK(once.size() <= text.size());
    CHECK(scrub_text(once) == once);
  }
}

TEST_CASE("count_stem_hits counts prefix occurrences") {
  CHECK(count_stem_hits("Police arrested the suspect, who allegedly committed crimes.") == 4);
  CHECK(count_stem_hits("") == 0);
  CHECK(count_stem_hits("The criminal's accuser alleged arrests of suspects.") == 5);
  CHECK(count_stem_hits("Suspect suspect SUSPECT suspects", StemCountMode::DistinctStems) == 1);
  CHECK(count_stem_hits("Suspect suspect SUSPECT suspects") == 4);
  CHECK(count_stem_hits("unsuspecting") == 0);
}

TEST_CASE("filter_archive applies the length and stem rules") {
  std::vector<RawStory> archive = {
      raw("a", "Too long", kStemBody + " " + filler(301 - count_whitespace_words(kStemBody))),
      raw("b", "Just right", kStemBody + " " + filler(300 - count_whitespace_words(kStemBody))),
      raw("c", "Few stems", "A suspect was seen near the store."),
  };
  const auto result = filter_archive(archive);
  REQUIRE(result.accepted.size() == 1);
  CHECK(result.accepted[0].id == "b");
  CHECK(result.rejections.at("a") == RejectReason::TooLong);
  CHECK(result.rejections.at("c") == RejectReason::TooFewStems);
  CHECK(result.report.accepted + result.report.total_rejected() == result.report.input);
}

TEST_CASE("duplicate titles keep exactly one copy, earliest first") {
  std::vector<RawStory> archive = {
      raw("z", "Man Arrested", kStemBody, "2019-05-01"),
      raw("y", "Man Arrested", kStemBody, "2019-03-01"),
      raw("x", "Man Arrested", kStemBody, "2019-03-01"),
  };
  const auto result = filter_archive(archive);
  REQUIRE(result.accepted.size() == 1);
  CHECK(result.accepted[0].id == "x");
  CHECK(result.report.rejected.at(RejectReason::DuplicateTitle) == 2);
}

TEST_CASE("multi-report blotters are rejected") {
  const std::string blotter = "Police blotter: suspects arrested, alleged crimes.\n"
                              "10:15 a.m. A suspect was arrested for shoplifting.\n"
                              "1/4 A man was accused of theft.\n"
                              "Jan. 5 Police arrested a driver.\n";
  CHECK(count_incident_log_lines(blotter) == 3);
  const auto result = filter_archive(std::vector<RawStory>{raw("m", "Blotter", blotter)});
  CHECK(result.accepted.empty());
  CHECK(result.rejections.at("m") == RejectReason::MultiReport);
}

TEST_CASE("duplicate raw ids signal a malformed archive") {
  std::vector<RawStory> archive = {raw("a", "t1", kStemBody), raw("a", "t2", kStemBody)};
  CHECK_THROWS_AS(filter_archive(archive), InvalidInput);
}

TEST_CASE("filtering is order-insensitive and consistent with its predicates") {
  Rng rng(11);
  const std::vector<std::string> pieces = {"suspect", "alleged", "arrest", "criminal", "accused", "the", "police",
                                           "said", "car", "night", "555-867-5309"};
  std::vector<RawStory> archive;
  for (int i = 0; i < 80; ++i) {
    std::string body;
    const auto words = 3 + rng.uniform_index(12);
    for (std::size_t w = 0; w < words; ++w) body += pieces[rng.uniform_index(pieces.size())] + " ";
    archive.push_back(raw("id" + std::to_string(i), "title" + std::to_string(rng.uniform_index(40)), body,
                          "2019-0" + std::to_string(1 + rng.uniform_index(9)) + "-01"));
  }
  FilterConfig config;
  config.max_words = 12;
  const auto baseline = filter_archive(archive, config);
  CHECK(baseline.report.accepted + baseline.report.total_rejected() == archive.size());
  for (const auto& story : baseline.accepted) {
    CHECK(story.word_count <= config.max_words);
    CHECK(story.stem_hits >= config.min_stem_hits);
  }
  for (const auto& r : archive) {
    const auto it = baseline.rejections.find(r.id);
    if (it == baseline.rejections.end()) continue;
    const auto s = make_story(scrub(r));
    if (it->second == RejectReason::TooLong) CHECK(s.word_count > config.max_words);
    if (it->second == RejectReason::TooFewStems) CHECK(s.stem_hits < config.min_stem_hits);
  }
  for (int perm = 0; perm < 5; ++perm) {
    auto shuffled = archive;
    rng.shuffle(shuffled);
    const auto again = filter_archive(shuffled, config);
    REQUIRE(again.accepted.size() == baseline.accepted.size());
    for (std::size_t i = 0; i < again.accepted.size(); ++i) CHECK(again.accepted[i].id == baseline.accepted[i].id);
  }
}

TEST_CASE("story tokens reconstruct the body") {
  const auto story = make_story(raw("t", "t", "He said: \"It's over,\" police alleged."));
  std::size_t previous_end = 0;
  for (const auto& token : story.tokens) {
    CHECK(token.char_start >= previous_end);
    CHECK(token.char_end <= story.body.size());
    CHECK(story.body.substr(token.char_start, token.char_end - token.char_start) == token.surface);
    previous_end = token.char_end;
  }
  CHECK(story.tokens.size() == 13);
}

TEST_CASE("split_corpus sizes, determinism and degenerate ratios") {
  std::vector<Story> stories;
  for (int i = 0; i < 10; ++i) stories.push_back(make_story(raw("s" + std::to_string(i), "t", kStemBody)));
  const auto split = split_corpus(stories, {0.8, 0.1, 0.1}, 0);
  CHECK(split.train.size() == 8);
  CHECK(split.dev.size() == 1);
  CHECK(split.test.size() == 1);

  const auto again = split_corpus(stories, {0.8, 0.1, 0.1}, 0);
  for (std::size_t i = 0; i < split.train.size(); ++i) CHECK(split.train[i].id == again.train[i].id);
  CHECK(split.dev[0].id == again.dev[0].id);

  std::set<std::string> all;
  for (const auto* part : {&split.train, &split.dev, &split.test})
    for (const auto& s : *part) CHECK(all.insert(s.id).second);
  CHECK(all.size() == stories.size());

  const auto degenerate = split_corpus(stories, {1.0, 0.0, 0.0}, 3);
  CHECK(degenerate.train.size() == 10);
  CHECK(degenerate.dev.empty());
  CHECK(degenerate.test.empty());

  CHECK_THROWS_AS(split_corpus(std::span(stories).first(2), {0.8, 0.1, 0.1}, 0), InvalidInput);
  CHECK_THROWS_AS(split_corpus(stories, {0.5, 0.1, 0.1}, 0), InvalidInput);
}

TEST_CASE("story JSON round trip") {
  const auto story = make_story(raw("r", "Title", kStemBody));
  const auto back = story_from_json(Json::parse(canonical_dump(to_json(story))));
  CHECK(back.tokens == story.tokens);
  CHECK(back.word_count == story.word_count);
  CHECK(canonical_dump(to_json(back)) == canonical_dump(to_json(story)));
}
