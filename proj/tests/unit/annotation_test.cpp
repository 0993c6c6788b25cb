#include <doctest.h>

#include <algorithm>
#include <set>

#include "guilt/annotation/store.hpp"
#include "guilt/common/error.hpp"
#include "guilt/common/random.hpp"
#include "test_support.hpp"

using namespace guilt;
using namespace guilt::annotation;
using guilt::testing::good_session;
using guilt::testing::rating;

namespace {

std::set<std::size_t> covered(std::span<const Highlight> hs) {
  std::set<std::size_t> chars;
  for (const auto& h : hs)
    for (std::size_t c = h.start; c < h.end; ++c) chars.insert(c);
  return chars;
}

}  // namespace

TEST_CASE("merge_highlights joins touching and overlapping intervals") {
  CHECK(merge_highlights(std::vector<Highlight>{{0, 5}, {5, 9}}, 20) == std::vector<Highlight>{{0, 9}});
  CHECK(merge_highlights(std::vector<Highlight>{{0, 5}, {6, 9}}, 20) == std::vector<Highlight>{{0, 5}, {6, 9}});
  CHECK(merge_highlights(std::vector<Highlight>{{3, 7}, {0, 4}}, 20) == std::vector<Highlight>{{0, 7}});
  CHECK_THROWS_AS(merge_highlights(std::vector<Highlight>{{3, 21}}, 20), InvalidInput);
  CHECK_THROWS_AS(merge_highlights(std::vector<Highlight>{{4, 4}}, 20), InvalidInput);
}

TEST_CASE("merge_highlights matches an interval-union oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Highlight> raw;
    const auto n = rng.uniform_index(6);
    for (std::size_t i = 0; i < n; ++i) {
      const auto a = rng.uniform_index(30);
      raw.push_back({a, a + 1 + rng.uniform_index(6)});
    }
    const auto merged = merge_highlights(raw, 40);
    CHECK(covered(merged) == covered(raw));
    for (std::size_t i = 1; i < merged.size(); ++i) CHECK(merged[i].start > merged[i - 1].end);
  }
}

TEST_CASE("exclude_participants applies the session rules") {
  auto base = good_session("p1", "s1", {"a", "b", "c", "d", "e"});

  SUBCASE("duration just under 3.5 minutes is excluded") {
    base.duration_minutes = 3.4;
    const auto result = exclude_participants(std::vector<Session>{base});
    CHECK(result.kept.empty());
    CHECK(result.ledger.too_fast == 1);
  }
  SUBCASE("exactly 3.5 minutes is kept") {
    base.duration_minutes = 3.5;
    CHECK(exclude_participants(std::vector<Session>{base}).kept.size() == 1);
  }
  SUBCASE("three erroneous controls exclude, two keep") {
    auto three = base;
    for (int i = 0; i < 3; ++i) three.control_responses[i].slider = 1.0 - three.control_responses[i].slider;
    auto two = base;
    for (int i = 0; i < 2; ++i) two.control_responses[i].slider = 1.0 - two.control_responses[i].slider;
    two.session_id = "s2";
    two.participant_id = "p2";
    const auto result = exclude_participants(std::vector<Session>{three, two});
    REQUIRE(result.kept.size() == 1);
    CHECK(result.kept[0].session_id == "s2");
    CHECK(result.ledger.failed_controls == 1);
  }
  SUBCASE("a control exactly at the midpoint is erroneous") {
    CHECK(control_is_erroneous({ExpectedSide::AboveHalf, 0.5}));
    CHECK(control_is_erroneous({ExpectedSide::BelowHalf, 0.5}));
    CHECK_FALSE(control_is_erroneous({ExpectedSide::BelowHalf, 0.49}));
  }
  SUBCASE("self report and native language") {
    auto confused = base;
    confused.self_report = SelfReport::ConfusedOrIncorrect;
    auto french = base;
    french.session_id = "s3";
    french.native_language = "French";
    const auto result = exclude_participants(std::vector<Session>{confused, french});
    CHECK(result.kept.empty());
    CHECK(result.ledger.self_report == 1);
    CHECK(result.ledger.native_language == 1);
  }
  SUBCASE("malformed sessions are rejected with a reason") {
    base.story_ids.pop_back();
    const auto result = exclude_participants(std::vector<Session>{base});
    CHECK(result.ledger.malformed == 1);
    CHECK(result.ledger.session_reasons.at("s1").starts_with("malformed"));
  }
}

TEST_CASE("repeat stories from an earlier session are dropped as annotations") {
  auto first = good_session("p1", "s1", {"a", "b", "c", "d", "e"}, 100);
  auto second = good_session("p1", "s2", {"e", "f", "g", "h", "i"}, 200);
  // Input order is reversed; timestamps decide which session came first.
  const auto result = exclude_participants(std::vector<Session>{second, first});
  REQUIRE(result.kept.size() == 2);
  const auto& later = result.kept[1];
  CHECK(later.session_id == "s2");
  CHECK(std::none_of(later.annotations.begin(), later.annotations.end(),
                     [](const Annotation& a) { return a.story_id == "e"; }));
  CHECK(result.ledger.repeat_story_annotations == 2);
  CHECK(result.ledger.kept_annotations == 18);
}

TEST_CASE("exclude_stories uses a per-question 30% threshold") {
  const auto s1 = testing::story("s1", "A suspect was arrested.");
  const auto s2 = testing::story("s2", "A suspect was arrested.");
  const auto s3 = testing::story("s3", "Nobody annotated this.");
  std::vector<Annotation> annotations;
  for (int i = 0; i < 6; ++i) {
    annotations.push_back(i < 2 ? testing::doesnt_apply("s1", Question::AuthorBelief)
                                : rating("s1", Question::AuthorBelief, 0.5));
    annotations.push_back(rating("s1", Question::ReaderPerception, 0.5));
    annotations.push_back(rating("s2", Question::ReaderPerception, 0.5));
    annotations.push_back(rating("s2", Question::AuthorBelief, 0.5));
  }
  const auto result = exclude_stories(std::vector<corpus::Story>{s1, s2, s3}, annotations);
  REQUIRE(result.kept.size() == 1);
  CHECK(result.kept[0].id == "s2");
  CHECK(result.excluded.at("s1") == StoryExclusionReason::DoesntApplyAuthorBelief);
  CHECK(result.excluded.at("s3") == StoryExclusionReason::NoAnnotations);
}

TEST_CASE("aggregate computes mean ratings and token proportions") {
  const auto s = testing::story("s", "The suspect allegedly stole a car .");
  SUBCASE("plain mean") {
    std::vector<Annotation> a = {rating("s", Question::ReaderPerception, 0.8), rating("s", Question::ReaderPerception, 0.9),
                                 rating("s", Question::ReaderPerception, 1.0)};
    const auto agg = aggregate(s, a);
    CHECK(agg.target(Question::ReaderPerception)->mean_rating == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(agg.target(Question::AuthorBelief) == nullptr);
  }
  SUBCASE("doesn't apply is excluded") {
    std::vector<Annotation> a = {rating("s", Question::AuthorBelief, 0.5), testing::doesnt_apply("s", Question::AuthorBelief),
                                 rating("s", Question::AuthorBelief, 0.7)};
    const auto agg = aggregate(s, a);
    const auto* t = agg.target(Question::AuthorBelief);
    CHECK(t->mean_rating == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(t->n_ratings == 2);
    CHECK(t->n_doesnt_apply == 1);
  }
  SUBCASE("token overlapped by two of five highlight sets") {
    // "allegedly" spans [12, 21); one highlight covers a single character of it.
    std::vector<Annotation> a = {
        rating("s", Question::ReaderPerception, 0.5, {{12, 21}}),
        rating("s", Question::ReaderPerception, 0.5, {{20, 21}}),
        rating("s", Question::ReaderPerception, 0.5, {{0, 3}}),
        rating("s", Question::ReaderPerception, 0.5),
        rating("s", Question::ReaderPerception, 0.5),
    };
    const auto agg = aggregate(s, a);
    const auto* t = agg.target(Question::ReaderPerception);
    REQUIRE(t->token_target.size() == s.tokens.size());
    CHECK(s.tokens[2].surface == "allegedly");
    CHECK(t->token_target[2] == doctest::Approx(0.4));
    CHECK(t->token_target[0] == doctest::Approx(0.2));
    CHECK(t->token_target[1] == doctest::Approx(0.0));
  }
}

TEST_CASE("aggregate is permutation invariant and lands on the 1/n lattice") {
  const auto s = testing::story("s", "Police said the man was arrested after an alleged robbery downtown .");
  Rng rng(5);
  std::vector<Annotation> a;
  for (int i = 0; i < 7; ++i) {
    std::vector<Highlight> hs;
    const auto start = rng.uniform_index(s.body.size() - 5);
    hs.push_back({start, start + 1 + rng.uniform_index(5)});
    a.push_back(rating("s", Question::ReaderPerception, rng.uniform01(), hs));
  }
  const auto reference = canonical_dump(to_json(aggregate(s, a)));
  for (int p = 0; p < 10; ++p) {
    rng.shuffle(a);
    CHECK(canonical_dump(to_json(aggregate(s, a))) == reference);
  }
  for (double v : aggregate(s, a).target(Question::ReaderPerception)->token_target) {
    const double scaled = v * 7.0;
    CHECK(std::abs(scaled - std::round(scaled)) < 1e-12);
  }
}

TEST_CASE("session store round trip is byte stable") {
  auto s = good_session("p1", "s1", {"a", "b", "c", "d", "e"}, 42);
  s.demographics = Json{{"age", 36}, {"gender", nullptr}};
  s.annotations[0].highlights = {{1, 4}, {6, 9}};
  const auto once = canonical_dump(to_json(s));
  const auto twice = canonical_dump(to_json(session_from_json(Json::parse(once))));
  CHECK(once == twice);
}

TEST_CASE("ingest rescales UI sliders and merges highlights") {
  const auto st = testing::story("a", "The suspect allegedly stole a car.");
  std::vector<corpus::Story> stories = {st, testing::story("b", "x y"), testing::story("c", "x y"),
                                        testing::story("d", "x y"), testing::story("e", "x y")};
  std::map<std::string, const corpus::Story*> index;
  for (const auto& s : stories) index[s.id] = &s;
  auto s = good_session("p1", "s1", {"a", "b", "c", "d", "e"});
  auto j = to_json(s);
  j["annotations"][0]["slider"] = 80;
  j["annotations"][0]["highlights"] = Json::array({Json::array({4, 8}), Json::array({0, 4})});
  for (auto& c : j["control_responses"]) c["slider"] = c["slider"].get<double>() * 100.0;
  for (std::size_t i = 1; i < j["annotations"].size(); ++i) j["annotations"][i]["slider"] = 70;
  const auto ingested = ingest_ui_session(j, index);
  CHECK(*ingested.annotations[0].slider == doctest::Approx(0.8));
  CHECK(ingested.annotations[0].highlights == std::vector<Highlight>{{0, 8}});
  CHECK(ingested.control_responses[0].slider == doctest::Approx(0.9));

  j["annotations"][0]["slider"] = 101;
  CHECK_THROWS_AS(ingest_ui_session(j, index), InvalidInput);
}
