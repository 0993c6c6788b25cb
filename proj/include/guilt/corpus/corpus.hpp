#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "guilt/common/io.hpp"
#include "guilt/common/text.hpp"

namespace guilt::corpus {

struct RawStory {
  std::string id;
  std::string title;
  std::string body;
  std::string community;
  std::string published;  // ISO-8601 date, compared lexicographically
};

struct Story {
  std::string id;
  std::string title;
  std::string body;  // scrubbed
  std::size_t word_count = 0;
  std::size_t stem_hits = 0;
  std::vector<WordToken> tokens;
};

enum class RejectReason { TooLong, TooFewStems, DuplicateTitle, MultiReport, Other };

std::string_view to_string(RejectReason reason);

struct FilterReport {
  std::size_t input = 0;
  std::size_t accepted = 0;
  std::map<RejectReason, std::size_t> rejected;

  std::size_t total_rejected() const;
};

enum class StemCountMode { Occurrences, DistinctStems };

struct ScrubConfig {
  // Any line containing one of these (case-insensitive) is dropped.
  std::vector<std::string> ad_sentinels = {
      "subscribe to patch",
      "sign up for patch",
      "get more local news delivered",
      "download the patch app",
      "advertisement",
  };
};

struct FilterConfig {
  std::size_t max_words = 300;
  std::size_t min_stem_hits = 4;
  StemCountMode stem_mode = StemCountMode::Occurrences;
  std::size_t multi_report_min_lines = 3;
  ScrubConfig scrub;
};

inline constexpr std::array<std::string_view, 5> kCrimeStems = {"suspect", "alleg", "arrest", "crim",
                                                                 "accus"};

/// Removes phone numbers and ad boilerplate lines. Idempotent.
std::string scrub_text(std::string_view body, const ScrubConfig& config = {});
RawStory scrub(const RawStory& raw, const ScrubConfig& config = {});

std::size_t count_stem_hits(std::string_view body, StemCountMode mode = StemCountMode::Occurrences);

/// Counts lines that open with a date or time stamp, the shape of police blotter logs.
std::size_t count_incident_log_lines(std::string_view body);

/// Builds a Story (tokens, counts) from an already scrubbed raw story.
Story make_story(const RawStory& scrubbed, StemCountMode mode = StemCountMode::Occurrences);

struct FilterResult {
  std::vector<Story> accepted;
  FilterReport report;
  std::map<std::string, RejectReason> rejections;  // by raw story id
};

/// Throws InvalidInput on duplicate raw ids.
FilterResult filter_archive(std::span<const RawStory> archive, const FilterConfig& config = {});

struct CorpusSplit {
  std::vector<Story> train;
  std::vector<Story> dev;
  std::vector<Story> test;
};

/// Largest-remainder sizing over a seeded shuffle. Throws InvalidInput when the
/// ratios are invalid or there are fewer stories than non-empty partitions.
CorpusSplit split_corpus(std::span<const Story> stories, std::array<double, 3> ratios, std::uint64_t seed);

/// Partition sizes used by split_corpus.
std::array<std::size_t, 3> split_sizes(std::size_t n, std::array<double, 3> ratios);

Json to_json(const RawStory& story);
Json to_json(const Story& story);
Json to_json(const FilterReport& report);
RawStory raw_story_from_json(const Json& j);
Story story_from_json(const Json& j);

std::vector<RawStory> load_archive(const std::filesystem::path& path);
std::vector<Story> load_stories(const std::filesystem::path& path);
void save_stories(const std::filesystem::path& path, std::span<const Story> stories);

}  // namespace guilt::corpus
