#include <pthread.h>
#include <signal.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <optional>
#include <thread>

#include "common.hpp"
#include "guilt/attribution/integrated_gradients.hpp"
#include "guilt/common/error.hpp"
#include "guilt/common/random.hpp"
#include "guilt/eval/experiment.hpp"
#include "guilt/model/checkpoint.hpp"
#include "guilt/model/mlm.hpp"
#include "guilt/model/train.hpp"
#include "guilt/service/service.hpp"

namespace guilt::cli {

namespace {

void add_pretrain(CLI::App* parent, Registry& reg) {
  struct Opts {
    std::string texts, encoder = "tiny", out = "encoder";
    std::size_t vocab_size = 2000;
    model::MlmConfig config;
  };
  auto o = std::make_shared<Opts>();
  o->config.steps = 1000;
  o->config.batch_size = 32;
  o->config.learning_rate = 1e-4;
  o->config.eval_every = 100;
  auto* cmd = parent->add_subcommand("pretrain", "Masked-language-model pretraining on unannotated stories");
  cmd->add_option("--texts", o->texts, "JSONL with a \"body\" per line")->required();
  cmd->add_option("--encoder", o->encoder, "\"tiny\" or an encoder directory to continue from");
  cmd->add_option("--vocab-size", o->vocab_size, "Vocabulary size for a tiny encoder");
  cmd->add_option("--steps", o->config.steps, "Optimizer steps")->check(CLI::PositiveNumber);
  cmd->add_option("--batch", o->config.batch_size, "Sequences per step")->check(CLI::PositiveNumber);
  cmd->add_option("--lr", o->config.learning_rate, "Peak learning rate");
  cmd->add_option("--warmup", o->config.warmup_ratio, "Warmup fraction of the steps");
  cmd->add_option("--mask-prob", o->config.mask_probability, "Share of positions selected for prediction");
  cmd->add_option("--eval-every", o->config.eval_every, "Steps between dev and test evaluations");
  cmd->add_option("--max-length", o->config.max_length, "Subwords per sequence, markers included");
  cmd->add_option("--out", o->out, "Encoder directory");
  reg.add(cmd, [&reg, cmd, o] {
    auto job = reg.job(cmd);
    const auto rows = read_jsonl(job->input(o->texts));
    if (o->encoder != "tiny") job->input(o->encoder);
    const auto out_dir = job->output(o->out);
    if (job->dry_run()) return int(kOk);
    const std::uint64_t seed = reg.globals().seed;
    std::vector<std::string> texts;
    for (const auto& r : rows) texts.push_back(r.at("body").get<std::string>());
    std::vector<std::size_t> order(texts.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(derive_seed(seed, 0x707265));
    rng.shuffle(std::span<std::size_t>(order));
    const auto sizes = corpus::split_sizes(texts.size(), {0.8, 0.1, 0.1});

    std::optional<model::MaskedLmBundle> bundle;
    if (o->encoder == "tiny") {
      std::vector<std::string> train_texts;
      for (std::size_t i = 0; i < sizes[0]; ++i) train_texts.push_back(texts[order[i]]);
      auto tok = model::WordPieceTokenizer::build(train_texts, o->vocab_size, 2);
      model::MaskedLm lm(model::EncoderConfig::tiny(tok.size()), derive_seed(seed, 0x7e4));
      bundle.emplace(model::MaskedLmBundle{std::move(lm), std::move(tok)});
    } else {
      bundle.emplace(model::load_masked_lm(o->encoder, seed));
    }
    std::vector<std::vector<int>> parts[3];
    for (std::size_t i = 0, part = 0, used = 0; i < order.size(); ++i) {
      while (part < 2 && used == sizes[part]) part++, used = 0;
      parts[part].push_back(bundle->tokenizer.encode(texts[order[i]], o->config.max_length).ids);
      ++used;
    }
    auto config = o->config;
    config.seed = seed;
    const auto result = model::mlm_pretrain(bundle->model, bundle->tokenizer, parts[0], parts[1], parts[2], config);
    Json log = {{"eval_steps", result.eval_steps}, {"dev_loss", result.dev_loss}, {"test_loss", result.test_loss}};
    model::save_encoder(bundle->model, bundle->tokenizer, out_dir,
                        Json{{"mlm", model::to_json(config)}, {"source", o->encoder}, {"log", log}});
    job->commit();
    if (!result.dev_loss.empty()) {
      *reg.globals().out << "dev loss " << result.dev_loss.front() << " -> " << result.dev_loss.back() << "\n";
    }
    return int(kOk);
  });
}

void add_train(CLI::App* parent, Registry& reg) {
  struct Opts {
    std::string stories, aggregated, question = "reader_perception", encoder = "tiny", pooling = "MEAN",
                                     token_mode = "linear", out = "model";
    std::size_t max_length = 400;
    model::TrainConfig config;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = parent->add_subcommand("train", "Fine-tune a rating model for one guilt question");
  cmd->add_option("--stories", o->stories, "Stories")->required();
  cmd->add_option("--aggregated", o->aggregated, "Aggregated ratings and token targets")->required();
  cmd->add_option("--question", o->question, "reader_perception or author_belief");
  cmd->add_option("--encoder", o->encoder, "\"tiny\" or an encoder directory");
  cmd->add_option("--pooling", o->pooling, "Rating head input")->check(CLI::IsMember({"CLS", "MEAN"}));
  cmd->add_option("--lambda", o->config.lambda, "Weight of the token loss")->check(CLI::NonNegativeNumber);
  cmd->add_flag("--token", o->config.token_supervision, "Train the token head on highlight targets");
  cmd->add_option("--token-mode", o->token_mode, "Token head loss")->check(CLI::IsMember({"linear", "logistic"}));
  cmd->add_option("--lr", o->config.learning_rate, "Peak learning rate");
  cmd->add_option("--epochs", o->config.epochs, "Passes over the training stories");
  cmd->add_option("--batch", o->config.batch_size, "Stories per step")->check(CLI::PositiveNumber);
  cmd->add_option("--warmup", o->config.warmup_ratio, "Warmup fraction of the steps");
  cmd->add_option("--max-steps", o->config.max_steps, "Stop after this many steps (0: use epochs)");
  cmd->add_option("--max-length", o->max_length, "Subwords per story, markers included");
  cmd->add_flag("--oversample-tails", o->config.oversample_tails, "Repeat stories with extreme ratings");
  cmd->add_option("--out", o->out, "Checkpoint directory");
  reg.add(cmd, [&reg, cmd, o] {
    auto job = reg.job(cmd);
    const auto stories = corpus::load_stories(job->input(o->stories));
    const auto aggregated = annotation::load_aggregated(job->input(o->aggregated));
    if (o->encoder != "tiny") job->input(o->encoder);
    auto config = o->config;
    config.question = guilt_question(o->question);
    config.pooling = model::pooling_from_string(o->pooling);
    config.token_mode = model::token_mode_from_string(o->token_mode);
    config.seed = reg.globals().seed;
    config.validate();
    const auto out_dir = job->output(o->out);
    if (job->dry_run()) return int(kOk);

    const auto bundle = eval::build_encoder(o->encoder, stories, config.seed);
    const model::ModelOptions options{config.pooling, config.token_mode, o->max_length};
    auto m = model::model_from_encoder(bundle, options, config.seed);
    const auto examples = model::make_examples(m.tokenizer(), stories, aggregated, config.question, o->max_length);
    if (examples.empty()) throw InvalidInput("no story has a target for " + o->question);
    const auto result = model::train(m, examples, config);
    const double mse = model::rating_mse(m, examples);
    model::save_checkpoint(m, out_dir,
                           Json{{"train", model::to_json(config)},
                                {"encoder", o->encoder},
                                {"max_length", o->max_length},
                                {"examples", examples.size()},
                                {"steps", result.steps},
                                {"epoch_losses", result.epoch_losses},
                                {"train_mse", mse}});
    job->commit();
    *reg.globals().out << "trained " << result.steps << " steps on " << examples.size()
                       << " stories, train MSE " << mse << "\n";
    return int(kOk);
  });
}

void add_predict(CLI::App* parent, Registry& reg) {
  struct Opts {
    std::string model, in, out = "predictions.jsonl";
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = parent->add_subcommand("predict", "Rate stories and score their words");
  cmd->add_option("--model", o->model, "Checkpoint directory")->required();
  cmd->add_option("--in", o->in, "Stories")->required();
  cmd->add_option("--out", o->out, "One prediction per story");
  reg.add(cmd, [&reg, cmd, o] {
    auto job = reg.job(cmd);
    job->input(o->model);
    const auto stories = corpus::load_stories(job->input(o->in));
    const auto out_path = job->output(o->out);
    if (job->dry_run()) return int(kOk);
    const auto m = model::load_checkpoint(o->model);
    std::vector<Json> rows;
    for (const auto& s : stories) {
      const auto p = m.predict(s.tokens);
      rows.push_back(Json{{"story_id", s.id}, {"rating", p.rating}, {"token_scores", p.token_scores}});
    }
    write_jsonl_atomic(out_path, rows);
    job->commit();
    return int(kOk);
  });
}

void add_eval(CLI::App& app, Registry& reg) {
  auto* eval_cmd = app.add_subcommand("eval", "Repeated-split evaluation with grid search");
  eval_cmd->require_subcommand(1);

  struct RunOpts {
    std::string plan, stories, aggregated;
  };
  auto r = std::make_shared<RunOpts>();
  auto* run = eval_cmd->add_subcommand(
      "run", "Run or resume an evaluation plan; results are written in place under --out-dir");
  run->add_option("--plan", r->plan, "Plan JSON")->required();
  run->add_option("--stories", r->stories, "Stories")->required();
  run->add_option("--aggregated", r->aggregated, "Aggregated ratings and token targets")->required();
  reg.add(run, [&reg, run, r] {
    auto job = reg.job(run);
    const auto plan = eval::plan_from_json(Json::parse(read_file(job->input(r->plan))));
    const auto stories = corpus::load_stories(job->input(r->stories));
    const auto aggregated = annotation::load_aggregated(job->input(r->aggregated));
    for (const std::string& dir : {plan.encoder, plan.pretrained_encoder}) {
      if (!dir.empty() && dir != "tiny") job->input(dir);
    }
    const auto out_dir = job->output_dir_in_place();
    if (job->dry_run()) return int(kOk);
    auto& err = *reg.globals().err;
    eval::run_experiment(plan, stories, aggregated, out_dir, [&err](const std::string& m) { err << m << "\n"; });
    job->commit();
    return int(kOk);
  });

  struct ReportOpts {
    std::string run_dir, out = "table.csv";
  };
  auto p = std::make_shared<ReportOpts>();
  auto* report = eval_cmd->add_subcommand("report", "Summary table, confidence intervals and pairwise tests");
  report->add_option("--run-dir", p->run_dir, "Directory written by eval run")->required();
  report->add_option("--out", p->out, "Summary table CSV");
  reg.add(report, [&reg, report, p] {
    auto job = reg.job(report);
    const auto record = eval::load_experiment(job->input(p->run_dir));
    const fs::path table = job->output(p->out);
    const fs::path rel_dir = fs::path(p->out).parent_path();
    for (const char* name : {"intervals.csv", "significance.csv", "report.json"}) {
      job->output((rel_dir / name).generic_string());
    }
    if (job->dry_run()) return int(kOk);
    const auto r = eval::make_report(record);
    eval::write_report(r, table.parent_path());
    if (table.filename() != "table.csv") fs::rename(table.parent_path() / "table.csv", table);
    job->commit();
    return int(kOk);
  });
}

void add_attrib(CLI::App& app, Registry& reg) {
  auto* attrib = app.add_subcommand("attrib", "Integrated-gradients word attributions");
  attrib->require_subcommand(1);

  struct RunOpts {
    std::string model, stories, out = "attributions.jsonl";
    std::size_t steps = 64;
  };
  auto r = std::make_shared<RunOpts>();
  auto* run = attrib->add_subcommand("run", "Attribute each story's rating to its words");
  run->add_option("--model", r->model, "Checkpoint directory")->required();
  run->add_option("--stories", r->stories, "Stories")->required();
  run->add_option("--steps", r->steps, "Integration steps")->check(CLI::PositiveNumber);
  run->add_option("--out", r->out, "One attribution per story");
  reg.add(run, [&reg, run, r] {
    auto job = reg.job(run);
    job->input(r->model);
    const auto stories = corpus::load_stories(job->input(r->stories));
    const auto out_path = job->output(r->out);
    if (job->dry_run()) return int(kOk);
    const auto m = model::load_checkpoint(r->model);
    std::vector<Json> rows;
    double worst = 0.0;
    for (const auto& s : stories) {
      const auto a = attribution::attribute_story(m, s, r->steps);
      worst = std::max(worst, a.completeness_delta);
      rows.push_back(attribution::to_json(a));
    }
    write_jsonl_atomic(out_path, rows);
    job->commit();
    *reg.globals().out << stories.size() << " stories attributed, largest completeness delta " << worst << "\n";
    return int(kOk);
  });

  struct CompareOpts {
    std::string attributions, stories, word_stats, agreement, stopwords, out = "comparison.csv";
    std::optional<double> chance_rate;
    std::size_t top = 20;
  };
  auto c = std::make_shared<CompareOpts>();
  auto* compare = attrib->add_subcommand("compare", "Compare word importance with human highlighting");
  compare->add_option("--attributions", c->attributions, "Output of attrib run")->required();
  compare->add_option("--stories", c->stories, "The attributed stories")->required();
  compare->add_option("--stats", c->word_stats, "word_stats.csv from stats words")->required();
  auto* chance = compare->add_option("--chance-rate", c->chance_rate, "Highlight rate expected by chance");
  compare->add_option("--agreement", c->agreement, "agreement.json supplying the chance rate")->excludes(chance);
  compare->add_option("--top", c->top, "Most-highlighted words to flag");
  compare->add_option("--stopwords", c->stopwords, "Stopword list (bundled list when empty)");
  compare->add_option("--out", c->out, "Per-word importance and highlight proportion");
  reg.add(compare, [&reg, compare, c] {
    auto job = reg.job(compare);
    std::vector<attribution::AttributionResult> results;
    for (const auto& row : read_jsonl(job->input(c->attributions))) {
      results.push_back(attribution::attribution_from_json(row));
    }
    const auto stories = corpus::load_stories(job->input(c->stories));
    std::vector<stats::WordStats> words;
    try {
      words = read_word_stats(read_file(job->input(c->word_stats)));
    } catch (const std::logic_error& e) {
      throw InvalidInput(c->word_stats + ": " + e.what());
    }
    double chance_rate = 0.0;
    if (c->chance_rate) {
      chance_rate = *c->chance_rate;
    } else if (!c->agreement.empty()) {
      chance_rate = Json::parse(read_file(job->input(c->agreement))).at("chance_rate").get<double>();
    } else {
      throw UsageError("one of --chance-rate or --agreement is required");
    }
    const auto stop =
        c->stopwords.empty() ? stats::default_stopwords() : stats::load_stopwords(job->input(c->stopwords));
    const auto csv_path = job->output(c->out);
    const fs::path rel_dir = fs::path(c->out).parent_path();
    const auto json_path = job->output((rel_dir / "comparison.json").generic_string());
    const auto svg_path = job->output((rel_dir / "comparison.svg").generic_string());
    if (job->dry_run()) return int(kOk);

    std::set<std::string> top;
    for (const auto& w : stats::most_highlighted(words, c->top)) top.insert(w.word);
    const auto importance = attribution::aggregate_importance(results, stories, stop, top);
    const auto summary = attribution::compare_to_highlights(importance, words, chance_rate);

    std::map<std::string, const stats::WordStats*> by_word;
    for (const auto& w : words) by_word[w.word] = &w;
    std::vector<std::vector<std::string>> rows;
    std::vector<double> x, y;
    std::vector<std::string> labels;
    for (const auto& imp : importance) {
      auto it = by_word.find(imp.word);
      if (it == by_word.end()) continue;
      const double prop = it->second->proportion;
      rows.push_back({imp.word, num(imp.mean_importance), num(std::abs(imp.mean_importance)), num(prop),
                      std::to_string(imp.frequency), prop > chance_rate ? "1" : "0", imp.top_highlighted ? "1" : "0"});
      x.push_back(prop);
      y.push_back(imp.mean_importance);
      labels.push_back(imp.top_highlighted ? imp.word : "");
    }
    write_file_atomic(csv_path, write_csv({"word", "mean_importance", "abs_importance", "highlight_proportion",
                                           "frequency", "above_chance", "top_highlighted"},
                                          rows));
    const Json j = {{"words", summary.words},         {"pearson_r", summary.pearson_r},
                    {"above_chance", summary.above_chance}, {"welch_t", summary.welch_t},
                    {"welch_p_one_sided", summary.welch_p}, {"chance_rate", summary.chance_rate}};
    write_file_atomic(json_path, j.dump(2) + "\n");
    write_file_atomic(svg_path, svg_scatter("Attribution against highlighting", "highlight proportion",
                                            "mean importance", x, y, labels, /*log_axes=*/false));
    job->commit();
    return int(kOk);
  });
}

void add_serve(CLI::App& app, Registry& reg) {
  struct Opts {
    std::string stories, data_dir = "annotation-data", host = "127.0.0.1";
    int port = 8080;
  };
  auto o = std::make_shared<Opts>();
  auto* cmd = app.add_subcommand("serve", "Run the annotation collection API until interrupted");
  cmd->add_option("--stories", o->stories, "Stories to assign")->required();
  cmd->add_option("--data-dir", o->data_dir, "Directory for the append-only session logs");
  cmd->add_option("--host", o->host, "Listen address");
  cmd->add_option("--port", o->port, "Listen port (0 picks a free one)")->check(CLI::Range(0, 65535));
  reg.add(cmd, [&reg, o] {
    if (!fs::exists(o->stories)) throw MissingInput("missing input: " + o->stories);
    auto stories = corpus::load_stories(o->stories);
    if (reg.globals().dry_run) return int(kOk);
    fs::create_directories(o->data_dir);
    service::AnnotationService svc(std::move(stories), service::ServiceConfig{o->data_dir, reg.globals().seed, {}});
    service::HttpServer server(svc);

    // Signals are taken by a waiting thread so the server can stop cleanly.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);
    const int port = server.bind(o->host, o->port);
    *reg.globals().out << "listening on " << o->host << ":" << port << std::endl;
    std::atomic<bool> signalled = false;
    std::thread waiter([&] {
      int sig = 0;
      sigwait(&signals, &sig);
      signalled = true;
      server.stop();
    });
    server.run();
    if (!signalled) pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
    return int(kOk);
  });
}

}  // namespace

void add_model_commands(CLI::App& app, Registry& registry) {
  auto* model_cmd = app.add_subcommand("model", "Pretrain, train and apply rating models");
  model_cmd->require_subcommand(1);
  add_pretrain(model_cmd, registry);
  add_train(model_cmd, registry);
  add_predict(model_cmd, registry);
  add_eval(app, registry);
  add_attrib(app, registry);
  add_serve(app, registry);
}

}  // namespace guilt::cli
