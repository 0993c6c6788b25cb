#include <cstdio>
#include <map>

#include "common.hpp"
#include "guilt/common/error.hpp"
#include "guilt/synth/synthetic.hpp"

namespace guilt::cli {
namespace {

std::map<std::string, const corpus::Story*> index_stories(const std::vector<corpus::Story>& stories) {
  std::map<std::string, const corpus::Story*> out;
  for (const auto& s : stories) out[s.id] = &s;
  return out;
}

// Sessions as the collection front end stores them: sliders on 0-100.
Json ui_session_json(const annotation::Session& s) {
  Json j = annotation::to_json(s);
  for (auto& a : j["annotations"]) {
    if (!a["slider"].is_null()) a["slider"] = a["slider"].get<double>() * 100.0;
  }
  for (auto& c : j["control_responses"]) c["slider"] = c["slider"].get<double>() * 100.0;
  return j;
}

void add_fixture(CLI::App& app, Registry& reg) {
  struct Opts {
    synth::SyntheticConfig config = synth::fixture_config();
    std::size_t fillers = config.filler_sentences_min;
    std::size_t unlabeled = 200;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("fixture", "Generate a synthetic corpus with planted guilt cues and annotations");
  cmd->add_option("--stories", o->config.stories, "Number of stories")->check(CLI::PositiveNumber);
  cmd->add_option("--annotators", o->config.annotators_per_story, "Annotators per story")->check(CLI::PositiveNumber);
  cmd->add_option("--bad-sessions", o->config.bad_sessions, "Extra sessions that fail an exclusion rule");
  cmd->add_option("--max-incriminating", o->config.max_incriminating, "Most incriminating cue sentences per story");
  cmd->add_option("--max-hedging", o->config.max_hedging, "Most hedging cue sentences per story");
  cmd->add_option("--fillers", o->fillers, "Neutral sentences per story");
  cmd->add_option("--rating-noise", o->config.rating_noise, "Standard deviation of annotator slider noise");
  cmd->add_option("--unlabeled", o->unlabeled, "Unannotated stories for pretraining");
  reg.add(cmd, [&reg, cmd, o] {
    auto job = reg.job(cmd);
    if (job->dry_run()) return int(kOk);
    auto config = o->config;
    config.seed = reg.globals().seed;
    config.filler_sentences_min = config.filler_sentences_max = o->fillers;
    const auto corpus = synth::generate(config);

    std::vector<Json> archive, sessions, truth, unlabeled;
    for (std::size_t i = 0; i < corpus.archive.size(); ++i) {
      archive.push_back(corpus::to_json(corpus.archive[i]));
      truth.push_back(Json{{"story_id", corpus.archive[i].id}, {"guilt", corpus.true_guilt[i]}});
    }
    for (const auto& s : corpus.sessions) sessions.push_back(ui_session_json(s));
    const auto texts = synth::unlabeled_texts(o->unlabeled, reg.globals().seed);
    for (std::size_t i = 0; i < texts.size(); ++i) {
      char id[32];
      std::snprintf(id, sizeof id, "unl-%04zu", i);
      unlabeled.push_back(Json{{"id", id}, {"body", texts[i]}});
    }
    write_jsonl_atomic(job->output("archive.jsonl"), archive);
    write_jsonl_atomic(job->output("ui_sessions.jsonl"), sessions);
    write_jsonl_atomic(job->output("truth.jsonl"), truth);
    write_jsonl_atomic(job->output("unlabeled.jsonl"), unlabeled);
    job->commit();
    return int(kOk);
  });
}

void add_corpus(CLI::App& app, Registry& reg) {
  auto* corpus_cmd = app.add_subcommand("corpus", "Filter and split the story archive");
  corpus_cmd->require_subcommand(1);

  struct FilterOpts {
    std::string in, out = "stories.jsonl", report = "filter_report.json", stem_mode = "occurrences";
    corpus::FilterConfig config;
  };
  auto f = std::make_shared<FilterOpts>();
  auto* filter = corpus_cmd->add_subcommand("filter", "Scrub and filter a raw archive into the story corpus");
  filter->add_option("--in", f->in, "Archive JSONL, one raw story per line")->required();
  filter->add_option("--out", f->out, "Accepted stories");
  filter->add_option("--report", f->report, "Counts of accepted and rejected stories");
  filter->add_option("--max-words", f->config.max_words, "Longest accepted story in words");
  filter->add_option("--min-stems", f->config.min_stem_hits, "Fewest crime-stem hits");
  filter->add_option("--stem-mode", f->stem_mode, "Count stem occurrences or distinct stems")
      ->check(CLI::IsMember({"occurrences", "distinct"}));
  reg.add(filter, [&reg, filter, f] {
    auto job = reg.job(filter);
    const auto archive = corpus::load_archive(job->input(f->in));
    auto config = f->config;
    config.stem_mode = f->stem_mode == "distinct" ? corpus::StemCountMode::DistinctStems
                                                  : corpus::StemCountMode::Occurrences;
    const auto out_path = job->output(f->out);
    const auto report_path = job->output(f->report);
    if (job->dry_run()) return int(kOk);
    const auto result = corpus::filter_archive(archive, config);
    corpus::save_stories(out_path, result.accepted);
    Json report = corpus::to_json(result.report);
    Json rejections = Json::object();
    for (const auto& [id, reason] : result.rejections) rejections[id] = std::string(corpus::to_string(reason));
    report["rejections"] = rejections;
    write_file_atomic(report_path, report.dump(2) + "\n");
    job->commit();
    *reg.globals().out << result.report.accepted << " of " << result.report.input << " stories accepted\n";
    return int(kOk);
  });

  struct SplitOpts {
    std::string in;
    std::vector<double> ratios = {0.8, 0.1, 0.1};
  };
  auto s = std::make_shared<SplitOpts>();
  auto* split = corpus_cmd->add_subcommand("split", "Seeded train/dev/test split of a story corpus");
  split->add_option("--in", s->in, "Story corpus JSONL")->required();
  split->add_option("--ratios", s->ratios, "Train, dev and test fractions")->delimiter(',')->expected(3);
  reg.add(split, [&reg, split, s] {
    auto job = reg.job(split);
    const auto stories = corpus::load_stories(job->input(s->in));
    const std::array<double, 3> ratios = {s->ratios[0], s->ratios[1], s->ratios[2]};
    corpus::split_sizes(stories.size(), ratios);  // rejects bad ratios before anything is written
    const auto train = job->output("train.jsonl"), dev = job->output("dev.jsonl"), test = job->output("test.jsonl");
    if (job->dry_run()) return int(kOk);
    const auto parts = corpus::split_corpus(stories, ratios, reg.globals().seed);
    corpus::save_stories(train, parts.train);
    corpus::save_stories(dev, parts.dev);
    corpus::save_stories(test, parts.test);
    job->commit();
    return int(kOk);
  });
}

void add_annotations(CLI::App& app, Registry& reg) {
  auto* ann = app.add_subcommand("annotations", "Ingest, screen and aggregate annotation sessions");
  ann->require_subcommand(1);

  struct IngestOpts {
    std::string in, stories, out = "sessions.jsonl";
  };
  auto i = std::make_shared<IngestOpts>();
  auto* ingest = ann->add_subcommand("ingest", "Validate collected sessions (sliders on 0-100) and rescale to [0,1]");
  ingest->add_option("--in", i->in, "Collected sessions JSONL")->required();
  ingest->add_option("--stories", i->stories, "Story corpus the sessions refer to")->required();
  ingest->add_option("--out", i->out, "Validated sessions");
  reg.add(ingest, [&reg, ingest, i] {
    auto job = reg.job(ingest);
    const auto rows = read_jsonl(job->input(i->in));
    const auto stories = corpus::load_stories(job->input(i->stories));
    const auto out_path = job->output(i->out);
    const auto index = index_stories(stories);
    std::vector<annotation::Session> sessions;
    for (std::size_t k = 0; k < rows.size(); ++k) {
      try {
        sessions.push_back(annotation::ingest_ui_session(rows[k], index));
      } catch (const std::exception& e) {
        throw InvalidInput("line " + std::to_string(k + 1) + ": " + e.what());
      }
    }
    if (job->dry_run()) return int(kOk);
    annotation::save_sessions(out_path, sessions);
    job->commit();
    return int(kOk);
  });

  struct ExcludeOpts {
    std::string in, stories, out = "kept_sessions.jsonl", stories_out = "kept_stories.jsonl",
                             ledger = "exclusions.json";
  };
  auto e = std::make_shared<ExcludeOpts>();
  auto* exclude = ann->add_subcommand("exclude", "Apply participant and story exclusion rules");
  exclude->add_option("--in", e->in, "Sessions JSONL")->required();
  exclude->add_option("--stories", e->stories, "Story corpus")->required();
  exclude->add_option("--out", e->out, "Kept sessions");
  exclude->add_option("--stories-out", e->stories_out, "Kept stories");
  exclude->add_option("--ledger", e->ledger, "Exclusion counts and reasons");
  reg.add(exclude, [&reg, exclude, e] {
    auto job = reg.job(exclude);
    const auto sessions = annotation::load_sessions(job->input(e->in));
    const auto stories = corpus::load_stories(job->input(e->stories));
    const auto out_path = job->output(e->out), stories_path = job->output(e->stories_out),
               ledger_path = job->output(e->ledger);
    if (job->dry_run()) return int(kOk);
    const auto participants = annotation::exclude_participants(sessions);
    const auto annotations = annotation::flatten(participants.kept);
    const auto kept_stories = annotation::exclude_stories(stories, annotations);
    Json story_reasons = Json::object();
    for (const auto& [id, reason] : kept_stories.excluded) story_reasons[id] = std::string(annotation::to_string(reason));
    const Json ledger = {{"participants", annotation::to_json(participants.ledger)},
                         {"stories", {{"input", stories.size()},
                                      {"kept", kept_stories.kept.size()},
                                      {"excluded", story_reasons}}}};
    annotation::save_sessions(out_path, participants.kept);
    corpus::save_stories(stories_path, kept_stories.kept);
    write_file_atomic(ledger_path, ledger.dump(2) + "\n");
    job->commit();
    *reg.globals().out << participants.kept.size() << " of " << sessions.size() << " sessions and "
                       << kept_stories.kept.size() << " of " << stories.size() << " stories kept\n";
    return int(kOk);
  });

  struct AggregateOpts {
    std::string sessions, stories, out = "aggregated.jsonl";
  };
  auto a = std::make_shared<AggregateOpts>();
  auto* aggregate = ann->add_subcommand("aggregate", "Per-story mean ratings and token highlight targets");
  aggregate->add_option("--sessions", a->sessions, "Kept sessions")->required();
  aggregate->add_option("--stories", a->stories, "Kept stories")->required();
  aggregate->add_option("--out", a->out, "Aggregated corpus");
  reg.add(aggregate, [&reg, aggregate, a] {
    auto job = reg.job(aggregate);
    const auto sessions = annotation::load_sessions(job->input(a->sessions));
    const auto stories = corpus::load_stories(job->input(a->stories));
    const auto out_path = job->output(a->out);
    if (job->dry_run()) return int(kOk);
    const auto annotations = annotation::flatten(sessions);
    const auto grouped = annotation::by_story(annotations);
    std::vector<annotation::AggregatedStory> out;
    for (const auto& story : stories) {
      auto it = grouped.find(story.id);
      if (it != grouped.end()) out.push_back(annotation::aggregate(story, it->second));
    }
    annotation::save_aggregated(out_path, out);
    job->commit();
    return int(kOk);
  });
}

}  // namespace

void add_data_commands(CLI::App& app, Registry& registry) {
  add_fixture(app, registry);
  add_corpus(app, registry);
  add_annotations(app, registry);
}

}  // namespace guilt::cli
