#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "guilt/common/io.hpp"
#include "guilt/corpus/corpus.hpp"

namespace guilt::annotation {

enum class Question { ReaderPerception, AuthorBelief, AttentionCheck };

inline constexpr std::array<Question, 2> kGuiltQuestions = {Question::ReaderPerception, Question::AuthorBelief};

std::string_view to_string(Question q);
Question question_from_string(std::string_view s);
/// "RP" / "AB" / "AC".
std::string_view short_name(Question q);

/// Half-open character interval into a story body.
struct Highlight {
  std::size_t start = 0;
  std::size_t end = 0;

  friend bool operator==(const Highlight&, const Highlight&) = default;
  friend auto operator<=>(const Highlight&, const Highlight&) = default;
};

struct Annotation {
  std::string story_id;
  Question question = Question::ReaderPerception;
  std::optional<double> slider;  // [0,1]; empty iff doesnt_apply
  bool doesnt_apply = false;
  std::vector<Highlight> highlights;
  std::string participant_id;
  std::string session_id;
};

enum class ExpectedSide { AboveHalf, BelowHalf };

struct ControlResponse {
  ExpectedSide expected = ExpectedSide::AboveHalf;
  double slider = 0.5;
};

enum class SelfReport { Ok, ConfusedOrIncorrect };

struct Session {
  std::string participant_id;
  std::string session_id;
  std::vector<std::string> story_ids;
  std::vector<Annotation> annotations;
  double duration_minutes = 0.0;
  std::vector<ControlResponse> control_responses;
  SelfReport self_report = SelfReport::Ok;
  std::string native_language;
  Json demographics = Json::object();  // unanswered fields stored as null
  std::int64_t timestamp = 0;          // submission time, seconds since epoch
};

inline constexpr std::size_t kStoriesPerSession = 5;
inline constexpr double kMinDurationMinutes = 3.5;
inline constexpr std::size_t kMaxControlErrors = 2;
inline constexpr double kMaxDoesntApplyFraction = 0.30;

/// Sorts and unions intervals; touching intervals merge. Throws InvalidInput
/// on empty or out-of-bounds intervals.
std::vector<Highlight> merge_highlights(std::span<const Highlight> raw, std::size_t body_length);

/// A control is erroneous unless its slider lies strictly on the expected side of 0.5.
bool control_is_erroneous(const ControlResponse& control);

/// Describes why a session is structurally invalid, or nullopt when it is well formed.
std::optional<std::string> validate_session(const Session& session);

struct ParticipantLedger {
  std::size_t input_sessions = 0;
  std::size_t malformed = 0;
  std::size_t self_report = 0;
  std::size_t native_language = 0;
  std::size_t too_fast = 0;
  std::size_t failed_controls = 0;
  std::size_t repeat_story_annotations = 0;
  std::size_t kept_annotations = 0;
  std::map<std::string, std::string> session_reasons;  // session_id -> reason
};

struct ParticipantExclusion {
  std::vector<Session> kept;
  ParticipantLedger ledger;
};

/// Rules are applied in this order and each excluded session is charged to the
/// first rule it fails: malformed, self report, native language, duration,
/// control errors. Kept sessions then lose annotations on stories the same
/// participant saw in any earlier session (ordered by timestamp, then input order).
ParticipantExclusion exclude_participants(std::span<const Session> sessions);

enum class StoryExclusionReason { DoesntApplyReaderPerception, DoesntApplyAuthorBelief, NoAnnotations };
std::string_view to_string(StoryExclusionReason reason);

struct StoryExclusion {
  std::vector<corpus::Story> kept;
  std::map<std::string, StoryExclusionReason> excluded;
};

/// Drops stories whose "doesn't apply" share exceeds 30% for either guilt question.
StoryExclusion exclude_stories(std::span<const corpus::Story> stories, std::span<const Annotation> annotations);

struct QuestionTarget {
  double mean_rating = 0.0;
  std::size_t n_ratings = 0;
  std::size_t n_doesnt_apply = 0;
  std::vector<double> token_target;  // highlighting annotators / contributing annotators
};

struct AggregatedStory {
  std::string story_id;
  std::map<Question, QuestionTarget> targets;  // guilt questions with >=1 rating

  const QuestionTarget* target(Question q) const {
    auto it = targets.find(q);
    return it == targets.end() ? nullptr : &it->second;
  }
};

/// Marks each word token that overlaps any highlighted character.
std::vector<std::uint8_t> token_highlight_mask(const corpus::Story& story, std::span<const Highlight> merged);

/// Character-level highlight mask over the body.
std::vector<std::uint8_t> char_highlight_mask(std::size_t body_length, std::span<const Highlight> merged);

AggregatedStory aggregate(const corpus::Story& story, std::span<const Annotation> annotations);

/// Flattens sessions into annotations (skipping nothing).
std::vector<Annotation> flatten(std::span<const Session> sessions);

/// Groups annotations by story id.
std::map<std::string, std::vector<Annotation>> by_story(std::span<const Annotation> annotations);

// Serialization. Sliders are stored on [0,1].
Json to_json(const Annotation& a);
Json to_json(const Session& s);
Json to_json(const AggregatedStory& a);
Json to_json(const ParticipantLedger& ledger);
Annotation annotation_from_json(const Json& j);
Session session_from_json(const Json& j);
AggregatedStory aggregated_from_json(const Json& j);

/// Ingests externally collected sessions whose sliders are on the UI's 0-100
/// scale: validates, rescales to [0,1], and merges highlights against the
/// story bodies. Throws InvalidInput on any violation.
Session ingest_ui_session(const Json& j, const std::map<std::string, const corpus::Story*>& stories);

std::vector<Session> load_sessions(const std::filesystem::path& path);
void save_sessions(const std::filesystem::path& path, std::span<const Session> sessions);
std::vector<AggregatedStory> load_aggregated(const std::filesystem::path& path);
void save_aggregated(const std::filesystem::path& path, std::span<const AggregatedStory> stories);

}  // namespace guilt::annotation
