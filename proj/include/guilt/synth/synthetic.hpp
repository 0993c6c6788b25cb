#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "guilt/annotation/store.hpp"
#include "guilt/corpus/corpus.hpp"

namespace guilt::synth {

/// Generates crime-report-shaped stories whose guilt depends on planted cue
/// words, plus annotation sessions from simulated participants who rate near
/// that guilt and highlight the cues.
struct SyntheticConfig {
  std::size_t stories = 30;
  std::size_t annotators_per_story = 8;
  std::size_t max_incriminating = 3;  // cue sentences per story are drawn from 0..max
  std::size_t max_hedging = 3;
  std::size_t filler_sentences_min = 3;
  std::size_t filler_sentences_max = 8;
  double rating_noise = 0.08;
  double cue_highlight_rate = 0.75;
  double other_highlight_rate = 0.03;
  std::size_t bad_sessions = 0;  // sessions that fail an exclusion rule
  std::uint64_t seed = 0;
};

/// Settings behind the bundled fixture: incriminating cues only, five filler
/// sentences per story and four sessions that fail an exclusion rule.
SyntheticConfig fixture_config();

/// Cue words that raise and lower the planted guilt.
const std::vector<std::string>& incriminating_cues();
const std::vector<std::string>& hedging_cues();

struct SyntheticCorpus {
  std::vector<corpus::RawStory> archive;
  std::vector<annotation::Session> sessions;
  std::vector<double> true_guilt;  // aligned with archive
};

SyntheticCorpus generate(const SyntheticConfig& config);

/// Stories and aggregated targets after the full filter, participant and
/// story exclusion pipeline.
struct SyntheticDataset {
  std::vector<corpus::Story> stories;
  std::vector<annotation::AggregatedStory> aggregated;
};

SyntheticDataset prepare(const SyntheticCorpus& corpus);

/// True guilt implied by a text: 0.5 + 0.12 per incriminating cue - 0.10 per
/// hedging cue, clamped to [0.05, 0.95].
double planted_guilt(const std::string& text);

/// Unlabelled stories in the same style, for masked-LM pretraining.
std::vector<std::string> unlabeled_texts(std::size_t n, std::uint64_t seed);

}  // namespace guilt::synth
