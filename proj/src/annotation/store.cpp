#include "guilt/annotation/store.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "guilt/common/error.hpp"
#include "guilt/common/text.hpp"

namespace guilt::annotation {
namespace {

std::string_view to_string(ExpectedSide side) { return side == ExpectedSide::AboveHalf ? "above_half" : "below_half"; }

ExpectedSide side_from_string(std::string_view s) {
  if (s == "above_half") return ExpectedSide::AboveHalf;
  if (s == "below_half") return ExpectedSide::BelowHalf;
  throw SchemaError("unknown expected_side: " + std::string(s));
}

std::string_view to_string(SelfReport r) { return r == SelfReport::Ok ? "ok" : "confused_or_incorrect"; }

SelfReport self_report_from_string(std::string_view s) {
  if (s == "ok") return SelfReport::Ok;
  if (s == "confused_or_incorrect") return SelfReport::ConfusedOrIncorrect;
  throw SchemaError("unknown self_report: " + std::string(s));
}

bool is_english(std::string_view language) {
  const auto lowered = to_lower_ascii(language);
  const auto first = lowered.find_first_not_of(" \t");
  return first != std::string::npos && std::string_view(lowered).substr(first).starts_with("english");
}

bool is_merged(std::span<const Highlight> highlights) {
  for (std::size_t i = 0; i < highlights.size(); ++i) {
    if (highlights[i].start >= highlights[i].end) return false;
    if (i > 0 && highlights[i].start <= highlights[i - 1].end) return false;
  }
  return true;
}

}  // namespace

std::string_view to_string(Question q) {
  switch (q) {
    case Question::ReaderPerception: return "reader_perception";
    case Question::AuthorBelief: return "author_belief";
    case Question::AttentionCheck: return "attention_check";
  }
  return "attention_check";
}

std::string_view short_name(Question q) {
  switch (q) {
    case Question::ReaderPerception: return "RP";
    case Question::AuthorBelief: return "AB";
    case Question::AttentionCheck: return "AC";
  }
  return "AC";
}

Question question_from_string(std::string_view s) {
  if (s == "reader_perception" || s == "RP") return Question::ReaderPerception;
  if (s == "author_belief" || s == "AB") return Question::AuthorBelief;
  if (s == "attention_check" || s == "AC") return Question::AttentionCheck;
  throw SchemaError("unknown question: " + std::string(s));
}

std::string_view to_string(StoryExclusionReason reason) {
  switch (reason) {
    case StoryExclusionReason::DoesntApplyReaderPerception: return "doesnt_apply_reader_perception";
    case StoryExclusionReason::DoesntApplyAuthorBelief: return "doesnt_apply_author_belief";
    case StoryExclusionReason::NoAnnotations: return "no_annotations";
  }
  return "no_annotations";
}

std::vector<Highlight> merge_highlights(std::span<const Highlight> raw, std::size_t body_length) {
  std::vector<Highlight> sorted(raw.begin(), raw.end());
  for (const auto& h : sorted) {
    if (h.start >= h.end || h.end > body_length) {
      throw InvalidInput("highlight [" + std::to_string(h.start) + "," + std::to_string(h.end) +
                         ") outside body of length " + std::to_string(body_length));
    }
  }
  std::sort(sorted.begin(), sorted.end());
  std::vector<Highlight> merged;
  for (const auto& h : sorted) {
    if (!merged.empty() && h.start <= merged.back().end) {
      merged.back().end = std::max(merged.back().end, h.end);
    } else {
      merged.push_back(h);
    }
  }
  return merged;
}

bool control_is_erroneous(const ControlResponse& control) {
  return control.expected == ExpectedSide::AboveHalf ? !(control.slider > 0.5) : !(control.slider < 0.5);
}

std::optional<std::string> validate_session(const Session& session) {
  if (session.story_ids.size() != kStoriesPerSession) return "expected 5 stories";
  std::set<std::string> ids(session.story_ids.begin(), session.story_ids.end());
  if (ids.size() != session.story_ids.size()) return "duplicate story in session";
  if (session.control_responses.size() != kStoriesPerSession) return "expected 5 control responses";
  for (const auto& c : session.control_responses) {
    if (!(c.slider >= 0.0 && c.slider <= 1.0)) return "control slider out of range";
  }
  if (!(session.duration_minutes >= 0.0) || !std::isfinite(session.duration_minutes)) return "invalid duration";
  for (const auto& a : session.annotations) {
    if (!ids.contains(a.story_id)) return "annotation for story outside session: " + a.story_id;
    if (a.slider.has_value() == a.doesnt_apply) return "slider present xor doesnt_apply violated";
    if (a.slider && !(*a.slider >= 0.0 && *a.slider <= 1.0)) return "slider out of range";
    if (a.doesnt_apply && !a.highlights.empty()) return "highlights on a doesnt_apply response";
    if (!is_merged(a.highlights)) return "highlights not merged";
  }
  return std::nullopt;
}

ParticipantExclusion exclude_participants(std::span<const Session> sessions) {
  ParticipantExclusion out;
  out.ledger.input_sessions = sessions.size();

  // Stories seen per participant count every earlier submission, kept or not.
  std::vector<std::size_t> order(sessions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sessions[a].timestamp < sessions[b].timestamp; });
  std::map<std::string, std::set<std::string>> seen;

  for (std::size_t idx : order) {
    const Session& s = sessions[idx];
    auto& seen_before = seen[s.participant_id];
    const std::set<std::string> previously_seen = seen_before;
    seen_before.insert(s.story_ids.begin(), s.story_ids.end());

    std::string reason;
    if (auto problem = validate_session(s)) {
      ++out.ledger.malformed;
      reason = "malformed: " + *problem;
    } else if (s.self_report != SelfReport::Ok) {
      ++out.ledger.self_report;
      reason = "self_report";
    } else if (!is_english(s.native_language)) {
      ++out.ledger.native_language;
      reason = "native_language";
    } else if (s.duration_minutes < kMinDurationMinutes) {
      ++out.ledger.too_fast;
      reason = "too_fast";
    } else {
      const auto errors = static_cast<std::size_t>(
          std::count_if(s.control_responses.begin(), s.control_responses.end(), control_is_erroneous));
      if (errors > kMaxControlErrors) {
        ++out.ledger.failed_controls;
        reason = "failed_controls";
      }
    }
    if (!reason.empty()) {
      out.ledger.session_reasons[s.session_id] = reason;
      continue;
    }

    Session kept = s;
    std::erase_if(kept.annotations, [&](const Annotation& a) {
      if (previously_seen.contains(a.story_id)) {
        ++out.ledger.repeat_story_annotations;
        return true;
      }
      return false;
    });
    out.ledger.kept_annotations += kept.annotations.size();
    out.kept.push_back(std::move(kept));
  }
  return out;
}

StoryExclusion exclude_stories(std::span<const corpus::Story> stories, std::span<const Annotation> annotations) {
  struct Counts {
    std::size_t total = 0;
    std::size_t doesnt_apply = 0;
  };
  std::map<std::string, std::map<Question, Counts>> counts;
  for (const auto& a : annotations) {
    if (a.question == Question::AttentionCheck) continue;
    auto& c = counts[a.story_id][a.question];
    ++c.total;
    if (a.doesnt_apply) ++c.doesnt_apply;
  }
  StoryExclusion out;
  for (const auto& story : stories) {
    auto it = counts.find(story.id);
    if (it == counts.end()) {
      out.excluded[story.id] = StoryExclusionReason::NoAnnotations;
      continue;
    }
    std::optional<StoryExclusionReason> reason;
    for (Question q : kGuiltQuestions) {
      auto qc = it->second.find(q);
      if (qc == it->second.end() || qc->second.total == 0) continue;
      const double fraction = static_cast<double>(qc->second.doesnt_apply) / static_cast<double>(qc->second.total);
      if (fraction > kMaxDoesntApplyFraction) {
        reason = q == Question::ReaderPerception ? StoryExclusionReason::DoesntApplyReaderPerception
                                                 : StoryExclusionReason::DoesntApplyAuthorBelief;
        break;
      }
    }
    if (reason) {
      out.excluded[story.id] = *reason;
    } else {
      out.kept.push_back(story);
    }
  }
  return out;
}

std::vector<std::uint8_t> token_highlight_mask(const corpus::Story& story, std::span<const Highlight> merged) {
  std::vector<std::uint8_t> mask(story.tokens.size(), 0);
  // Both sequences are sorted by start, so a single sweep suffices.
  std::size_t h = 0;
  for (std::size_t t = 0; t < story.tokens.size(); ++t) {
    const auto& token = story.tokens[t];
    while (h < merged.size() && merged[h].end <= token.char_start) ++h;
    for (std::size_t k = h; k < merged.size() && merged[k].start < token.char_end; ++k) {
      if (merged[k].end > token.char_start) {
        mask[t] = 1;
        break;
      }
    }
  }
  return mask;
}

std::vector<std::uint8_t> char_highlight_mask(std::size_t body_length, std::span<const Highlight> merged) {
  std::vector<std::uint8_t> mask(body_length, 0);
  for (const auto& h : merged) {
    for (std::size_t c = h.start; c < std::min(h.end, body_length); ++c) mask[c] = 1;
  }
  return mask;
}

AggregatedStory aggregate(const corpus::Story& story, std::span<const Annotation> annotations) {
  AggregatedStory out;
  out.story_id = story.id;
  for (Question q : kGuiltQuestions) {
    QuestionTarget target;
    target.token_target.assign(story.tokens.size(), 0.0);
    std::vector<std::size_t> highlight_counts(story.tokens.size(), 0);
    std::vector<double> sliders;
    for (const auto& a : annotations) {
      if (a.question != q || a.story_id != story.id) continue;
      if (a.doesnt_apply) {
        ++target.n_doesnt_apply;
        continue;
      }
      sliders.push_back(*a.slider);
      ++target.n_ratings;
      const auto mask = token_highlight_mask(story, a.highlights);
      for (std::size_t t = 0; t < mask.size(); ++t) highlight_counts[t] += mask[t];
    }
    if (target.n_ratings == 0) continue;
    // Sorted summation keeps the mean bit-identical under any annotation order.
    std::sort(sliders.begin(), sliders.end());
    target.mean_rating = std::accumulate(sliders.begin(), sliders.end(), 0.0) / static_cast<double>(target.n_ratings);
    for (std::size_t t = 0; t < highlight_counts.size(); ++t) {
      target.token_target[t] = static_cast<double>(highlight_counts[t]) / static_cast<double>(target.n_ratings);
    }
    out.targets.emplace(q, std::move(target));
  }
  return out;
}

std::vector<Annotation> flatten(std::span<const Session> sessions) {
  std::vector<Annotation> out;
  for (const auto& s : sessions) out.insert(out.end(), s.annotations.begin(), s.annotations.end());
  return out;
}

std::map<std::string, std::vector<Annotation>> by_story(std::span<const Annotation> annotations) {
  std::map<std::string, std::vector<Annotation>> out;
  for (const auto& a : annotations) out[a.story_id].push_back(a);
  return out;
}

Json to_json(const Annotation& a) {
  Json highlights = Json::array();
  for (const auto& h : a.highlights) highlights.push_back(Json::array({h.start, h.end}));
  return Json{{"story_id", a.story_id},
              {"question", to_string(a.question)},
              {"slider", a.slider ? Json(*a.slider) : Json(nullptr)},
              {"doesnt_apply", a.doesnt_apply},
              {"highlights", std::move(highlights)},
              {"participant_id", a.participant_id},
              {"session_id", a.session_id}};
}

Json to_json(const Session& s) {
  Json annotations = Json::array();
  for (const auto& a : s.annotations) annotations.push_back(to_json(a));
  Json controls = Json::array();
  for (const auto& c : s.control_responses) {
    controls.push_back(Json{{"expected_side", to_string(c.expected)}, {"slider", c.slider}});
  }
  return Json{{"participant_id", s.participant_id},
              {"session_id", s.session_id},
              {"story_ids", s.story_ids},
              {"annotations", std::move(annotations)},
              {"duration_minutes", s.duration_minutes},
              {"control_responses", std::move(controls)},
              {"self_report", to_string(s.self_report)},
              {"native_language", s.native_language},
              {"demographics", s.demographics},
              {"timestamp", s.timestamp}};
}

Json to_json(const AggregatedStory& a) {
  Json targets = Json::object();
  for (const auto& [q, t] : a.targets) {
    targets[std::string(to_string(q))] = Json{{"mean_rating", t.mean_rating},
                                              {"n_ratings", t.n_ratings},
                                              {"n_doesnt_apply", t.n_doesnt_apply},
                                              {"token_target", t.token_target}};
  }
  return Json{{"story_id", a.story_id}, {"targets", std::move(targets)}};
}

Json to_json(const ParticipantLedger& l) {
  return Json{{"input_sessions", l.input_sessions},
              {"malformed", l.malformed},
              {"self_report", l.self_report},
              {"native_language", l.native_language},
              {"too_fast", l.too_fast},
              {"failed_controls", l.failed_controls},
              {"repeat_story_annotations", l.repeat_story_annotations},
              {"kept_sessions", l.input_sessions - l.malformed - l.self_report - l.native_language - l.too_fast -
                                    l.failed_controls},
              {"kept_annotations", l.kept_annotations},
              {"session_reasons", l.session_reasons}};
}

Annotation annotation_from_json(const Json& j) {
  try {
    Annotation a;
    a.story_id = j.at("story_id").get<std::string>();
    a.question = question_from_string(j.at("question").get<std::string>());
    if (j.contains("slider") && !j.at("slider").is_null()) a.slider = j.at("slider").get<double>();
    a.doesnt_apply = j.value("doesnt_apply", false);
    for (const auto& h : j.value("highlights", Json::array())) {
      a.highlights.push_back({h.at(0).get<std::size_t>(), h.at(1).get<std::size_t>()});
    }
    a.participant_id = j.value("participant_id", "");
    a.session_id = j.value("session_id", "");
    return a;
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("annotation: ") + e.what());
  }
}

Session session_from_json(const Json& j) {
  try {
    Session s;
    s.participant_id = j.at("participant_id").get<std::string>();
    s.session_id = j.at("session_id").get<std::string>();
    s.story_ids = j.at("story_ids").get<std::vector<std::string>>();
    for (const auto& a : j.at("annotations")) s.annotations.push_back(annotation_from_json(a));
    s.duration_minutes = j.at("duration_minutes").get<double>();
    for (const auto& c : j.at("control_responses")) {
      s.control_responses.push_back({side_from_string(c.at("expected_side").get<std::string>()), c.at("slider").get<double>()});
    }
    s.self_report = self_report_from_string(j.at("self_report").get<std::string>());
    s.native_language = j.value("native_language", "");
    s.demographics = j.value("demographics", Json::object());
    s.timestamp = j.value("timestamp", std::int64_t{0});
    return s;
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("session: ") + e.what());
  }
}

AggregatedStory aggregated_from_json(const Json& j) {
  try {
    AggregatedStory a;
    a.story_id = j.at("story_id").get<std::string>();
    for (const auto& [key, t] : j.at("targets").items()) {
      QuestionTarget target;
      target.mean_rating = t.at("mean_rating").get<double>();
      target.n_ratings = t.at("n_ratings").get<std::size_t>();
      target.n_doesnt_apply = t.value("n_doesnt_apply", std::size_t{0});
      target.token_target = t.at("token_target").get<std::vector<double>>();
      a.targets.emplace(question_from_string(key), std::move(target));
    }
    return a;
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("aggregated story: ") + e.what());
  }
}

Session ingest_ui_session(const Json& j, const std::map<std::string, const corpus::Story*>& stories) {
  Session s = session_from_json(j);
  for (auto& a : s.annotations) {
    auto it = stories.find(a.story_id);
    if (it == stories.end()) throw InvalidInput("unknown story " + a.story_id);
    if (a.slider) {
      if (!(*a.slider >= 0.0 && *a.slider <= 100.0)) throw InvalidInput("slider outside [0,100]");
      a.slider = *a.slider / 100.0;
    }
    a.highlights = merge_highlights(a.highlights, it->second->body.size());
    if (a.participant_id.empty()) a.participant_id = s.participant_id;
    if (a.session_id.empty()) a.session_id = s.session_id;
  }
  for (auto& c : s.control_responses) {
    if (!(c.slider >= 0.0 && c.slider <= 100.0)) throw InvalidInput("control slider outside [0,100]");
    c.slider /= 100.0;
  }
  if (auto problem = validate_session(s)) throw InvalidInput("session " + s.session_id + ": " + *problem);
  return s;
}

std::vector<Session> load_sessions(const std::filesystem::path& path) {
  std::vector<Session> out;
  for (const auto& row : read_jsonl(path, /*tolerate_torn_tail=*/true)) out.push_back(session_from_json(row));
  return out;
}

void save_sessions(const std::filesystem::path& path, std::span<const Session> sessions) {
  std::vector<Json> rows;
  for (const auto& s : sessions) rows.push_back(to_json(s));
  write_jsonl_atomic(path, rows);
}

std::vector<AggregatedStory> load_aggregated(const std::filesystem::path& path) {
  std::vector<AggregatedStory> out;
  for (const auto& row : read_jsonl(path)) out.push_back(aggregated_from_json(row));
  return out;
}

void save_aggregated(const std::filesystem::path& path, std::span<const AggregatedStory> stories) {
  std::vector<Json> rows;
  for (const auto& s : stories) rows.push_back(to_json(s));
  write_jsonl_atomic(path, rows);
}

}  // namespace guilt::annotation
