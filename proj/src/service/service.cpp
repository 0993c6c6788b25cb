#include "guilt/service/service.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "guilt/common/error.hpp"
#include "guilt/common/hash.hpp"
#include "guilt/common/io.hpp"
#include "guilt/common/text.hpp"

namespace guilt::service {

namespace fs = std::filesystem;
using annotation::ExpectedSide;
using annotation::Question;

std::string_view to_string(Rejection r) {
  switch (r) {
    case Rejection::Schema: return "schema";
    case Rejection::UnknownParticipant: return "unknown_participant";
    case Rejection::UnknownSession: return "unknown_session";
    case Rejection::Duplicate: return "duplicate";
    case Rejection::NoEligibleStories: return "no_eligible_stories";
  }
  return "schema";
}

int http_status(Rejection r) {
  switch (r) {
    case Rejection::Schema: return 400;
    case Rejection::UnknownParticipant:
    case Rejection::UnknownSession: return 404;
    case Rejection::Duplicate:
    case Rejection::NoEligibleStories: return 409;
  }
  return 400;
}

namespace {

const std::vector<std::string>& decoy_words() {
  static const std::vector<std::string> words = {"giraffe", "violin", "glacier", "saxophone", "pineapple",
                                                 "telescope", "origami", "volcano", "penguin", "harpsichord"};
  return words;
}

std::vector<std::string> lowered_words(std::string_view text) {
  std::vector<std::string> out;
  for (const auto& t : tokenize_words(text)) {
    if (!is_punctuation_token(t.surface)) out.push_back(to_lower_ascii(t.surface));
  }
  return out;
}

std::string pick_decoy(const std::vector<std::string>& avoid, Rng& rng) {
  std::vector<std::string> options;
  for (const auto& w : decoy_words()) {
    if (std::find(avoid.begin(), avoid.end(), w) == avoid.end()) options.push_back(w);
  }
  return options[rng.uniform_index(options.size())];
}

std::string question_prompt(Question q) {
  switch (q) {
    case Question::ReaderPerception: return "How likely is it that the suspect is guilty?";
    case Question::AuthorBelief: return "How strongly does the author of the story believe the suspect is guilty?";
    case Question::AttentionCheck: break;
  }
  return "";
}

Json assignment_record(const Assignment& a) {
  Json stories = Json::array();
  for (std::size_t i = 0; i < a.story_ids.size(); ++i) {
    Json order = Json::array();
    for (auto q : a.question_order[i]) order.push_back(annotation::to_string(q));
    const auto& c = a.checks[i];
    stories.push_back(Json{{"story_id", a.story_ids[i]},
                           {"question_order", order},
                           {"check", {{"template", c.template_id},
                                      {"prompt", c.prompt},
                                      {"expected_side", c.expected == ExpectedSide::AboveHalf ? "above_half" : "below_half"}}}});
  }
  return Json{{"session_id", a.session_id}, {"participant_id", a.participant_id}, {"issued_at", a.issued_at},
              {"order_seed", a.order_seed}, {"stories", stories}};
}

Assignment assignment_from_record(const Json& j) {
  Assignment a;
  a.session_id = j.at("session_id").get<std::string>();
  a.participant_id = j.at("participant_id").get<std::string>();
  a.issued_at = j.at("issued_at").get<std::int64_t>();
  a.order_seed = j.at("order_seed").get<std::uint64_t>();
  for (const auto& s : j.at("stories")) {
    a.story_ids.push_back(s.at("story_id").get<std::string>());
    std::vector<Question> order;
    for (const auto& q : s.at("question_order")) order.push_back(annotation::question_from_string(q.get<std::string>()));
    a.question_order.push_back(order);
    const auto& c = s.at("check");
    a.checks.push_back({c.at("template").get<std::string>(), c.at("prompt").get<std::string>(),
                        c.at("expected_side").get<std::string>() == "above_half" ? ExpectedSide::AboveHalf
                                                                                 : ExpectedSide::BelowHalf});
  }
  return a;
}

// Drops a torn final line left by a crash so the next append starts clean.
void repair_tail(const fs::path& path) {
  if (!fs::exists(path)) return;
  const std::string text = read_file(path);
  if (text.empty() || text.back() == '\n') return;
  const auto last = text.rfind('\n');
  fs::resize_file(path, last == std::string::npos ? 0 : last + 1);
}

[[noreturn]] void schema(const std::string& message) { throw Rejected(Rejection::Schema, message); }

double slider_value(const Json& r, const std::string& where) {
  const auto it = r.find("slider");
  if (it == r.end() || !it->is_number()) schema(where + ": slider must be a number");
  const double v = it->get<double>();
  if (!(v >= 0.0 && v <= 100.0)) schema(where + ": slider outside [0, 100]");
  return v;
}

void only_fields(const Json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  for (const auto& [k, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; })) {
      schema(where + ": unexpected field " + k);
    }
  }
}

}  // namespace

AttentionCheck make_attention_check(const corpus::Story& story, Rng& rng) {
  bool truth = rng.bernoulli(0.5);
  AttentionCheck c;
  const auto title = lowered_words(story.title);
  const auto body = lowered_words(story.body);
  std::vector<std::string> title_words;
  for (const auto& w : title) {
    if (w.size() >= 3) title_words.push_back(w);
  }
  std::size_t kind = rng.uniform_index(3);
  if (kind == 1 && title_words.empty()) kind = 0;
  if (kind == 2 && body.empty()) kind = 0;

  if (kind == 0) {
    static constexpr std::size_t thresholds[] = {5, 10, 20, 50, 100, 150, 200, 250, 300, 400};
    std::vector<std::size_t> ok;
    for (auto k : thresholds) {
      if ((story.word_count > k) == truth) ok.push_back(k);
    }
    if (ok.empty()) {
      truth = !truth;
      for (auto k : thresholds) {
        if ((story.word_count > k) == truth) ok.push_back(k);
      }
    }
    const auto k = ok[rng.uniform_index(ok.size())];
    c.template_id = "word_count";
    c.prompt = "This story is more than " + std::to_string(k) + " words long.";
  } else if (kind == 1) {
    auto avoid = title;
    const std::string w = truth ? title_words[rng.uniform_index(title_words.size())] : pick_decoy(avoid, rng);
    c.template_id = "title_word";
    c.prompt = "The title of this story contains the word \"" + w + "\".";
  } else {
    const std::string w = truth ? body.front() : pick_decoy({body.front()}, rng);
    c.template_id = "first_word";
    c.prompt = "The first word of this story is \"" + w + "\".";
  }
  c.expected = truth ? ExpectedSide::AboveHalf : ExpectedSide::BelowHalf;
  return c;
}

AnnotationService::AnnotationService(std::vector<corpus::Story> stories, ServiceConfig config)
    : config_(std::move(config)), stories_(std::move(stories)) {
  if (stories_.size() < annotation::kStoriesPerSession) throw InvalidInput("service needs at least 5 stories");
  for (std::size_t i = 0; i < stories_.size(); ++i) {
    if (!story_index_.emplace(stories_[i].id, i).second) throw InvalidInput("duplicate story id " + stories_[i].id);
    story_hash_[stories_[i].id] = sha256_hex(stories_[i].body);
  }
  counts_.assign(stories_.size(), 0);
  fs::create_directories(config_.data_dir);
  replay();
}

std::int64_t AnnotationService::now() const {
  if (config_.clock) return config_.clock();
  return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count();
}

void AnnotationService::replay() {
  for (const auto& p : {participants_path(), assignments_path(), sessions_path()}) repair_tail(p);
  if (fs::exists(participants_path())) {
    for (const auto& row : read_jsonl(participants_path())) participants_.insert(row.at("participant_id").get<std::string>());
  }
  if (fs::exists(assignments_path())) {
    for (const auto& row : read_jsonl(assignments_path())) {
      auto a = assignment_from_record(row);
      for (const auto& id : a.story_ids) {
        auto it = story_index_.find(id);
        if (it == story_index_.end()) throw SchemaError("assignment refers to unknown story " + id);
        ++counts_[it->second];
        seen_[a.participant_id].insert(id);
      }
      open_by_participant_[a.participant_id] = a.session_id;
      sessions_[a.session_id] = std::move(a);
      ++issued_;
    }
  }
  if (fs::exists(sessions_path())) {
    for (const auto& row : read_jsonl(sessions_path())) {
      const auto id = row.at("session_id").get<std::string>();
      auto it = sessions_.find(id);
      if (it == sessions_.end()) throw SchemaError("session record without assignment: " + id);
      it->second.submitted = true;
      submissions_[id] = row.value("submission", "");
      auto open = open_by_participant_.find(it->second.participant_id);
      if (open != open_by_participant_.end() && open->second == id) open_by_participant_.erase(open);
    }
  }
}

std::string AnnotationService::register_participant(const Json& info) {
  if (!info.is_null() && !info.is_object()) schema("participant info must be an object");
  std::lock_guard lock(mutex_);
  std::string id;
  for (std::size_t attempt = 0;; ++attempt) {
    const std::string seed_text = std::to_string(config_.seed) + ":participant:" +
                                  std::to_string(participants_.size()) + ":" + std::to_string(attempt);
    id = "p-" + sha256_hex(seed_text).substr(0, 16);
    if (!participants_.contains(id)) break;
  }
  const Json row{{"participant_id", id}, {"registered_at", now()}, {"info", info.is_null() ? Json::object() : info}};
  append_line_durable(participants_path(), canonical_dump(row));
  participants_.insert(id);
  return id;
}

Json AnnotationService::payload(const Assignment& a) const {
  Json stories = Json::array();
  for (std::size_t i = 0; i < a.story_ids.size(); ++i) {
    const auto& story = stories_[story_index_.at(a.story_ids[i])];
    Json questions = Json::array();
    for (auto q : a.question_order[i]) {
      const std::string prompt = q == Question::AttentionCheck ? a.checks[i].prompt : question_prompt(q);
      questions.push_back(Json{{"question", annotation::to_string(q)},
                               {"prompt", prompt},
                               {"allows_doesnt_apply", q != Question::AttentionCheck},
                               {"allows_highlights", q != Question::AttentionCheck}});
    }
    stories.push_back(Json{{"story_id", story.id},
                           {"title", story.title},
                           {"body", story.body},
                           {"body_sha256", story_hash_.at(story.id)},
                           {"questions", questions}});
  }
  return Json{{"schema", kAssignmentSchema},
              {"session_id", a.session_id},
              {"participant_id", a.participant_id},
              {"issued_at", a.issued_at},
              {"order_seed", a.order_seed},
              {"status", a.submitted ? "submitted" : "open"},
              {"slider_range", {0, 100}},
              {"stories", stories}};
}

Json AnnotationService::assign_session(const std::string& participant_id) {
  std::lock_guard lock(mutex_);
  if (!participants_.contains(participant_id)) {
    throw Rejected(Rejection::UnknownParticipant, "unknown participant " + participant_id);
  }
  if (auto it = open_by_participant_.find(participant_id); it != open_by_participant_.end()) {
    return payload(sessions_.at(it->second));
  }
  const auto& seen = seen_[participant_id];
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < stories_.size(); ++i) {
    if (!seen.contains(stories_[i].id)) eligible.push_back(i);
  }
  if (eligible.size() < annotation::kStoriesPerSession) {
    throw Rejected(Rejection::NoEligibleStories, "no eligible stories left for " + participant_id);
  }
  Rng pick(derive_seed(config_.seed, 2 * issued_));
  pick.shuffle(eligible);
  std::stable_sort(eligible.begin(), eligible.end(), [&](std::size_t x, std::size_t y) { return counts_[x] < counts_[y]; });
  eligible.resize(annotation::kStoriesPerSession);

  Assignment a;
  a.session_id = "s-" + sha256_hex(std::to_string(config_.seed) + ":session:" + std::to_string(issued_)).substr(0, 16);
  a.participant_id = participant_id;
  a.issued_at = now();
  a.order_seed = derive_seed(config_.seed, 2 * issued_ + 1);
  Rng order(a.order_seed);
  for (auto i : eligible) {
    a.story_ids.push_back(stories_[i].id);
    std::vector<Question> qs = {Question::ReaderPerception, Question::AuthorBelief, Question::AttentionCheck};
    order.shuffle(qs);
    a.question_order.push_back(qs);
    a.checks.push_back(make_attention_check(stories_[i], order));
  }
  append_line_durable(assignments_path(), canonical_dump(assignment_record(a)));
  for (auto i : eligible) ++counts_[i];
  seen_[participant_id].insert(a.story_ids.begin(), a.story_ids.end());
  open_by_participant_[participant_id] = a.session_id;
  ++issued_;
  return payload(sessions_.emplace(a.session_id, std::move(a)).first->second);
}

Json AnnotationService::get_session(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw Rejected(Rejection::UnknownSession, "unknown session " + session_id);
  return payload(it->second);
}

annotation::Session AnnotationService::parse_submission(const Assignment& a, const Json& body) const {
  if (!body.is_object()) schema("submission must be a JSON object");
  only_fields(body, {"schema", "timing", "stories", "self_report", "native_language", "demographics"}, "submission");
  if (body.value("schema", "") != kSubmissionSchema) schema(std::string("schema must be ") + kSubmissionSchema);

  annotation::Session s;
  s.participant_id = a.participant_id;
  s.session_id = a.session_id;
  s.story_ids = a.story_ids;

  const auto timing = body.find("timing");
  if (timing == body.end() || !timing->is_object()) schema("timing metadata missing");
  const auto started = timing->find("started_at");
  const auto finished = timing->find("finished_at");
  if (started == timing->end() || finished == timing->end() || !started->is_number_integer() ||
      !finished->is_number_integer()) {
    schema("timing needs integer started_at and finished_at");
  }
  const auto t0 = started->get<std::int64_t>();
  const auto t1 = finished->get<std::int64_t>();
  if (t1 < t0) schema("finished_at precedes started_at");
  s.duration_minutes = static_cast<double>(t1 - t0) / 60.0;

  const auto self = body.find("self_report");
  if (self == body.end() || !self->is_string()) schema("self_report missing");
  if (*self == "ok") {
    s.self_report = annotation::SelfReport::Ok;
  } else if (*self == "confused_or_incorrect") {
    s.self_report = annotation::SelfReport::ConfusedOrIncorrect;
  } else {
    schema("self_report must be ok or confused_or_incorrect");
  }
  const auto lang = body.find("native_language");
  if (lang == body.end() || !lang->is_string()) schema("native_language missing");
  s.native_language = lang->get<std::string>();
  if (body.contains("demographics")) {
    if (!body.at("demographics").is_object()) schema("demographics must be an object");
    s.demographics = body.at("demographics");
  }

  const auto stories = body.find("stories");
  if (stories == body.end() || !stories->is_array() || stories->size() != a.story_ids.size()) {
    schema("stories must list the 5 assigned stories");
  }
  std::map<std::string, const Json*> by_id;
  for (const auto& st : *stories) {
    if (!st.is_object() || !st.contains("story_id") || !st.at("story_id").is_string()) schema("story entry needs story_id");
    only_fields(st, {"story_id", "responses"}, "story");
    if (!by_id.emplace(st.at("story_id").get<std::string>(), &st).second) schema("story listed twice");
  }
  for (std::size_t i = 0; i < a.story_ids.size(); ++i) {
    const auto& id = a.story_ids[i];
    auto it = by_id.find(id);
    if (it == by_id.end()) schema("missing responses for assigned story " + id);
    const auto& body_text = stories_[story_index_.at(id)].body;
    const auto responses = it->second->find("responses");
    if (responses == it->second->end() || !responses->is_array() || responses->size() != 3) {
      schema(id + ": expected three responses");
    }
    std::set<Question> answered;
    std::optional<double> control;
    std::vector<annotation::Annotation> story_annotations;
    for (const auto& r : *responses) {
      const std::string where = id + " response";
      if (!r.is_object() || !r.contains("question") || !r.at("question").is_string()) schema(where + ": question missing");
      only_fields(r, {"question", "slider", "doesnt_apply", "highlights"}, where);
      Question q;
      try {
        q = annotation::question_from_string(r.at("question").get<std::string>());
      } catch (const std::exception&) {
        schema(where + ": unknown question");
      }
      if (!answered.insert(q).second) schema(where + ": question answered twice");
      const bool doesnt_apply = r.contains("doesnt_apply") && r.at("doesnt_apply").is_boolean() && r.at("doesnt_apply").get<bool>();
      if (r.contains("doesnt_apply") && !r.at("doesnt_apply").is_boolean()) schema(where + ": doesnt_apply must be boolean");
      std::vector<annotation::Highlight> raw;
      if (r.contains("highlights")) {
        if (!r.at("highlights").is_array()) schema(where + ": highlights must be an array");
        for (const auto& h : r.at("highlights")) {
          if (!h.is_array() || h.size() != 2 || !h[0].is_number_unsigned() || !h[1].is_number_unsigned()) {
            schema(where + ": highlight must be [start, end]");
          }
          raw.push_back({h[0].get<std::size_t>(), h[1].get<std::size_t>()});
        }
      }
      if (q == Question::AttentionCheck) {
        if (doesnt_apply) schema(where + ": attention checks cannot be skipped");
        if (!raw.empty()) schema(where + ": attention checks take no highlights");
        control = slider_value(r, where) / 100.0;
        continue;
      }
      annotation::Annotation ann;
      ann.story_id = id;
      ann.question = q;
      ann.participant_id = a.participant_id;
      ann.session_id = a.session_id;
      ann.doesnt_apply = doesnt_apply;
      if (doesnt_apply) {
        if (r.contains("slider") && !r.at("slider").is_null()) schema(where + ": slider given with doesnt_apply");
        if (!raw.empty()) schema(where + ": highlights given with doesnt_apply");
      } else {
        ann.slider = slider_value(r, where) / 100.0;
        try {
          ann.highlights = annotation::merge_highlights(raw, body_text.size());
        } catch (const InvalidInput& e) {
          schema(where + ": " + e.what());
        }
      }
      story_annotations.push_back(std::move(ann));
    }
    std::sort(story_annotations.begin(), story_annotations.end(),
              [](const auto& x, const auto& y) { return x.question < y.question; });
    s.annotations.insert(s.annotations.end(), story_annotations.begin(), story_annotations.end());
    s.control_responses.push_back({a.checks[i].expected, *control});
  }
  if (auto problem = annotation::validate_session(s)) schema(*problem);
  return s;
}

Json AnnotationService::submit(const std::string& session_id, const std::string& body) {
  std::lock_guard lock(mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw Rejected(Rejection::UnknownSession, "unknown session " + session_id);
  Assignment& a = it->second;
  if (a.submitted) throw Rejected(Rejection::Duplicate, "session " + session_id + " was already submitted");
  Json parsed;
  try {
    parsed = Json::parse(body);
  } catch (const Json::parse_error& e) {
    schema(std::string("submission is not valid JSON: ") + e.what());
  }
  annotation::Session session = parse_submission(a, parsed);
  session.timestamp = now();
  const std::string digest = sha256_hex(body);
  Json record = annotation::to_json(session);
  record["submission_sha256"] = digest;
  record["submission"] = body;
  append_line_durable(sessions_path(), canonical_dump(record));
  a.submitted = true;
  submissions_[session_id] = body;
  open_by_participant_.erase(a.participant_id);
  return Json{{"status", "accepted"}, {"session_id", session_id}, {"submission_sha256", digest}};
}

std::string AnnotationService::submission_body(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  auto it = submissions_.find(session_id);
  if (it == submissions_.end()) throw Rejected(Rejection::UnknownSession, "no accepted submission for " + session_id);
  return it->second;
}

Json AnnotationService::health() const {
  std::lock_guard lock(mutex_);
  return Json{{"status", "ok"},
              {"stories", stories_.size()},
              {"participants", participants_.size()},
              {"sessions_issued", issued_},
              {"sessions_accepted", submissions_.size()}};
}

std::size_t AnnotationService::accepted_sessions() const {
  std::lock_guard lock(mutex_);
  return submissions_.size();
}

std::map<std::string, std::size_t> AnnotationService::assignment_counts() const {
  std::lock_guard lock(mutex_);
  std::map<std::string, std::size_t> out;
  for (std::size_t i = 0; i < stories_.size(); ++i) out[stories_[i].id] = counts_[i];
  return out;
}

}  // namespace guilt::service
