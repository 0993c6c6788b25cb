#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "guilt/annotation/store.hpp"
#include "guilt/common/random.hpp"
#include "guilt/corpus/corpus.hpp"

namespace guilt::service {

inline constexpr const char* kAssignmentSchema = "session_assignment.v1";
inline constexpr const char* kSubmissionSchema = "submission.v1";

enum class Rejection { Schema, UnknownParticipant, UnknownSession, Duplicate, NoEligibleStories };

std::string_view to_string(Rejection r);
int http_status(Rejection r);

/// A request the service refuses; the HTTP layer maps `kind` to a status code.
class Rejected : public std::runtime_error {
 public:
  Rejected(Rejection kind, const std::string& message) : std::runtime_error(message), kind(kind) {}
  Rejection kind;
};

/// A control question whose answer follows from the story text alone.
struct AttentionCheck {
  std::string template_id;
  std::string prompt;
  annotation::ExpectedSide expected = annotation::ExpectedSide::AboveHalf;  // true statement -> slide right
};

/// Draws a template and a truth polarity at random, then instantiates the
/// statement so it is true or false for this story.
AttentionCheck make_attention_check(const corpus::Story& story, Rng& rng);

struct Assignment {
  std::string session_id;
  std::string participant_id;
  std::vector<std::string> story_ids;
  std::vector<std::vector<annotation::Question>> question_order;  // per story
  std::vector<AttentionCheck> checks;                              // per story
  std::int64_t issued_at = 0;
  std::uint64_t order_seed = 0;
  bool submitted = false;
};

struct ServiceConfig {
  std::filesystem::path data_dir;
  std::uint64_t seed = 0;
  std::function<std::int64_t()> clock;  // seconds since epoch; system clock when unset
};

/// Session assignment and submission logic behind the HTTP API. State lives
/// in append-only JSONL files under data_dir (participants, assignments and
/// the annotation-store sessions log) and is rebuilt from them on start-up.
/// All operations are serialized by one mutex.
class AnnotationService {
 public:
  AnnotationService(std::vector<corpus::Story> stories, ServiceConfig config);

  /// Returns the new participant id.
  std::string register_participant(const Json& info);

  /// Returns the participant's open assignment, or issues a new one of five
  /// stories they have never been given, least-assigned first with seeded
  /// random tie-breaks. The assignment is persisted before it is returned.
  Json assign_session(const std::string& participant_id);

  Json get_session(const std::string& session_id) const;

  /// Validates the whole submission, then appends one session record.
  Json submit(const std::string& session_id, const std::string& body);

  /// Raw submission bytes as received, for an accepted session.
  std::string submission_body(const std::string& session_id) const;

  Json health() const;

  std::size_t accepted_sessions() const;
  /// Assignments issued per story (submitted or still open).
  std::map<std::string, std::size_t> assignment_counts() const;
  const std::filesystem::path& data_dir() const { return config_.data_dir; }

  std::filesystem::path participants_path() const { return config_.data_dir / "participants.jsonl"; }
  std::filesystem::path assignments_path() const { return config_.data_dir / "assignments.jsonl"; }
  std::filesystem::path sessions_path() const { return config_.data_dir / "sessions.jsonl"; }

 private:
  Json payload(const Assignment& a) const;
  annotation::Session parse_submission(const Assignment& a, const Json& body) const;
  void replay();
  std::int64_t now() const;

  ServiceConfig config_;
  std::vector<corpus::Story> stories_;
  std::map<std::string, std::size_t> story_index_;
  std::map<std::string, std::string> story_hash_;

  mutable std::mutex mutex_;
  std::set<std::string> participants_;
  std::map<std::string, Assignment> sessions_;
  std::map<std::string, std::string> open_by_participant_;
  std::map<std::string, std::set<std::string>> seen_;  // participant -> story ids
  std::vector<std::size_t> counts_;
  std::map<std::string, std::string> submissions_;  // session -> raw body
  std::size_t issued_ = 0;
};

/// Serves the service over HTTP+JSON (POST /participants, POST /sessions,
/// GET /sessions/{id}, POST /sessions/{id}/submit, GET /health).
class HttpServer {
 public:
  explicit HttpServer(AnnotationService& service);
  ~HttpServer();

  /// Binds and returns the port (an ephemeral one when port is 0).
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void run();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace guilt::service
