#include "guilt/synth/synthetic.hpp"

#include <algorithm>
#include <set>

#include "guilt/common/random.hpp"
#include "guilt/common/text.hpp"

namespace guilt::synth {
namespace {

struct Cue {
  std::string word;
  std::string sentence;
};

const std::vector<Cue>& strong_sentences() {
  static const std::vector<Cue> v = {
      {"confessed", "The suspect confessed to detectives during questioning ."},
      {"caught", "Officers caught the man as he left the store ."},
      {"identified", "Two witnesses identified him at the scene ."},
      {"footage", "Security footage showed the suspect taking the items ."},
      {"fingerprints", "Investigators matched fingerprints found on the window ."},
  };
  return v;
}

const std::vector<Cue>& hedge_sentences() {
  static const std::vector<Cue> v = {
      {"allegedly", "The man allegedly took cash from the register ."},
      {"reportedly", "He reportedly fled on foot before police arrived ."},
      {"denied", "His attorney said he denied any involvement ."},
      {"innocent", "Relatives insist he is innocent and was at work ."},
      {"unclear", "It remains unclear who started the fight ."},
  };
  return v;
}

const std::vector<std::string>& filler_sentences() {
  static const std::vector<std::string> v = {
      "Police responded to a call shortly after midnight .",
      "The incident happened near the corner of Main Street and Oak Avenue .",
      "A store employee called for help .",
      "No one was seriously hurt .",
      "The department asked anyone with information to come forward .",
      "The case is being handled by the county prosecutor .",
      "Neighbors said the area is usually quiet .",
      "A court date has not yet been set .",
      "Bail was set at five thousand dollars .",
      "Officers searched the nearby park .",
      "The victim was treated at a local hospital .",
      "Detectives are still reviewing the evidence .",
      "The vehicle was towed from the lot .",
      "A spokesperson declined to comment further .",
      "The investigation is ongoing .",
  };
  return v;
}

const std::vector<std::string>& places() {
  static const std::vector<std::string> v = {"Springfield", "Riverton", "Lakeside", "Fairview", "Milford",
                                             "Oakdale",     "Hillcrest", "Brookport", "Cedar Falls", "Westbury"};
  return v;
}

const std::vector<std::string>& offences() {
  static const std::vector<std::string> v = {"Robbery", "Burglary", "Assault", "Theft", "Vandalism", "Fraud"};
  return v;
}

double clamp01(double x, double lo, double hi) { return std::min(hi, std::max(lo, x)); }

std::string build_story(Rng& rng, const SyntheticConfig& config, std::size_t strong, std::size_t hedge) {
  std::vector<std::string> sentences = {
      "A suspect was arrested on Tuesday in connection with the incident .",
      "He is accused of a crime that police described as serious .",
  };
  std::vector<std::size_t> si(strong_sentences().size()), hi(hedge_sentences().size());
  for (std::size_t i = 0; i < si.size(); ++i) si[i] = i;
  for (std::size_t i = 0; i < hi.size(); ++i) hi[i] = i;
  rng.shuffle(std::span<std::size_t>(si));
  rng.shuffle(std::span<std::size_t>(hi));
  for (std::size_t i = 0; i < strong; ++i) sentences.push_back(strong_sentences()[si[i]].sentence);
  for (std::size_t i = 0; i < hedge; ++i) sentences.push_back(hedge_sentences()[hi[i]].sentence);
  const std::size_t fillers =
      config.filler_sentences_min +
      static_cast<std::size_t>(rng.uniform_index(config.filler_sentences_max - config.filler_sentences_min + 1));
  for (std::size_t i = 0; i < fillers; ++i) {
    sentences.push_back(filler_sentences()[rng.uniform_index(filler_sentences().size())]);
  }
  rng.shuffle(std::span<std::string>(sentences));
  std::string body;
  for (const auto& s : sentences) {
    if (!body.empty()) body += ' ';
    body += s;
  }
  return body;
}

}  // namespace

const std::vector<std::string>& incriminating_cues() {
  static const std::vector<std::string> v = [] {
    std::vector<std::string> out;
    for (const auto& c : strong_sentences()) out.push_back(c.word);
    return out;
  }();
  return v;
}

const std::vector<std::string>& hedging_cues() {
  static const std::vector<std::string> v = [] {
    std::vector<std::string> out;
    for (const auto& c : hedge_sentences()) out.push_back(c.word);
    return out;
  }();
  return v;
}

SyntheticConfig fixture_config() {
  SyntheticConfig c;
  c.max_incriminating = 5;
  c.max_hedging = 0;
  c.filler_sentences_min = c.filler_sentences_max = 5;
  c.bad_sessions = 4;
  return c;
}

double planted_guilt(const std::string& text) {
  std::size_t strong = 0, hedge = 0;
  for (const auto& tok : tokenize_words(text)) {
    const std::string w = to_lower_ascii(tok.surface);
    if (std::find(incriminating_cues().begin(), incriminating_cues().end(), w) != incriminating_cues().end()) ++strong;
    if (std::find(hedging_cues().begin(), hedging_cues().end(), w) != hedging_cues().end()) ++hedge;
  }
  return clamp01(0.5 + 0.12 * static_cast<double>(strong) - 0.10 * static_cast<double>(hedge), 0.05, 0.95);
}

SyntheticCorpus generate(const SyntheticConfig& config) {
  Rng rng(derive_seed(config.seed, 0x73796e));
  SyntheticCorpus out;
  for (std::size_t i = 0; i < config.stories; ++i) {
    corpus::RawStory raw;
    char id[32];
    std::snprintf(id, sizeof id, "syn-%04zu", i);
    raw.id = id;
    const std::size_t strong = rng.uniform_index(std::min(config.max_incriminating, strong_sentences().size()) + 1);
    const std::size_t hedge = rng.uniform_index(std::min(config.max_hedging, hedge_sentences().size()) + 1);
    raw.body = build_story(rng, config, strong, hedge);
    raw.community = places()[rng.uniform_index(places().size())];
    raw.title = offences()[rng.uniform_index(offences().size())] + " arrest in " + raw.community + " (" + raw.id + ")";
    char date[16];
    std::snprintf(date, sizeof date, "2019-%02zu-%02zu", 1 + i % 12, 1 + i % 28);
    raw.published = date;
    out.true_guilt.push_back(planted_guilt(raw.body));
    out.archive.push_back(std::move(raw));
  }

  std::set<std::string> cue_set(incriminating_cues().begin(), incriminating_cues().end());
  cue_set.insert(hedging_cues().begin(), hedging_cues().end());

  // Each pass over a fresh shuffle of the stories fills sessions of five, so
  // every story is seen once per pass and no participant sees a story twice.
  const std::size_t per_session = annotation::kStoriesPerSession;
  std::vector<std::size_t> queue;
  for (std::size_t pass = 0; pass < config.annotators_per_story; ++pass) {
    std::vector<std::size_t> order(config.stories);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(std::span<std::size_t>(order));
    queue.insert(queue.end(), order.begin(), order.end());
  }
  std::int64_t clock = 1'560'000'000;
  std::size_t session_no = 0;
  for (std::size_t start = 0; start + per_session <= queue.size(); start += per_session, ++session_no) {
    annotation::Session s;
    char pid[32], sid[32];
    std::snprintf(pid, sizeof pid, "p-%04zu", session_no);
    std::snprintf(sid, sizeof sid, "s-%04zu", session_no);
    s.participant_id = pid;
    s.session_id = sid;
    s.duration_minutes = 6.0 + 6.0 * rng.uniform01();
    s.native_language = "English";
    s.timestamp = clock;
    clock += 600;
    for (std::size_t k = 0; k < per_session; ++k) {
      const bool above = rng.bernoulli(0.5);
      s.control_responses.push_back({above ? annotation::ExpectedSide::AboveHalf : annotation::ExpectedSide::BelowHalf,
                                     above ? 0.8 + 0.2 * rng.uniform01() : 0.2 * rng.uniform01()});
    }
    s.demographics = Json{{"age", nullptr}, {"gender", nullptr}};
    std::set<std::size_t> seen;
    for (std::size_t k = 0; k < per_session; ++k) {
      std::size_t story = queue[start + k];
      // Rare duplicates across a pass boundary swap with the next unseen story.
      while (seen.contains(story)) story = (story + 1) % config.stories;
      seen.insert(story);
      const auto& raw = out.archive[story];
      s.story_ids.push_back(raw.id);
      const double g = out.true_guilt[story];
      for (auto q : annotation::kGuiltQuestions) {
        annotation::Annotation a;
        a.story_id = raw.id;
        a.question = q;
        const double shift = q == annotation::Question::AuthorBelief ? -0.05 : 0.0;
        a.slider = clamp01(g + shift + config.rating_noise * rng.normal(), 0.0, 1.0);
        std::vector<annotation::Highlight> raw_spans;
        for (const auto& tok : tokenize_words(raw.body)) {
          if (is_punctuation_token(tok.surface)) continue;
          const bool cue = cue_set.contains(to_lower_ascii(tok.surface));
          if (rng.bernoulli(cue ? config.cue_highlight_rate : config.other_highlight_rate)) {
            raw_spans.push_back({tok.char_start, tok.char_end});
          }
        }
        a.highlights = annotation::merge_highlights(raw_spans, raw.body.size());
        a.participant_id = s.participant_id;
        a.session_id = s.session_id;
        s.annotations.push_back(std::move(a));
      }
    }
    out.sessions.push_back(std::move(s));
  }

  // Sessions that the participant filter must drop, one rule each in turn.
  for (std::size_t b = 0; b < config.bad_sessions && !out.sessions.empty(); ++b) {
    annotation::Session s = out.sessions[b % out.sessions.size()];
    char pid[32], sid[32];
    std::snprintf(pid, sizeof pid, "p-bad-%03zu", b);
    std::snprintf(sid, sizeof sid, "s-bad-%03zu", b);
    s.participant_id = pid;
    s.session_id = sid;
    for (auto& a : s.annotations) {
      a.participant_id = pid;
      a.session_id = sid;
      a.slider = rng.uniform01();
      a.highlights.clear();
    }
    switch (b % 4) {
      case 0: s.duration_minutes = 2.0; break;
      case 1: s.native_language = "Spanish"; break;
      case 2: s.self_report = annotation::SelfReport::ConfusedOrIncorrect; break;
      default:
        for (std::size_t k = 0; k < 3; ++k) {
          auto& c = s.control_responses[k];
          c.slider = c.expected == annotation::ExpectedSide::AboveHalf ? 0.1 : 0.9;
        }
        break;
    }
    s.timestamp = clock;
    clock += 600;
    out.sessions.push_back(std::move(s));
  }
  return out;
}

SyntheticDataset prepare(const SyntheticCorpus& corpus) {
  const auto filtered = corpus::filter_archive(corpus.archive);
  const auto participants = annotation::exclude_participants(corpus.sessions);
  const auto annotations = annotation::flatten(participants.kept);
  const auto stories = annotation::exclude_stories(filtered.accepted, annotations);
  const auto grouped = annotation::by_story(annotations);
  SyntheticDataset out;
  out.stories = stories.kept;
  for (const auto& story : out.stories) {
    auto it = grouped.find(story.id);
    if (it == grouped.end()) continue;
    out.aggregated.push_back(annotation::aggregate(story, it->second));
  }
  return out;
}

std::vector<std::string> unlabeled_texts(std::size_t n, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x756e6c));
  SyntheticConfig config;
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(build_story(rng, config, rng.uniform_index(4), rng.uniform_index(4)));
  }
  return out;
}

}  // namespace guilt::synth
